use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Symmetric eigendecomposition with eigenvalues in decreasing order.
///
/// Equal eigenvalues keep the order in which the solver returned them, so
/// the result is deterministic for a given input. Each eigenvector is signed
/// so that its largest-magnitude entry (the first, on ties) is positive.
pub(crate) fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let sym = symmetrized(m);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let lead = col.iter().fold(0.0_f64, |best, &x| if x.abs() > best.abs() { x } else { best });
        if lead < 0.0 {
            vectors.set_column(dst, &(-col));
        } else {
            vectors.set_column(dst, &col);
        }
    }
    (values, vectors)
}

pub(crate) fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Splits `R^n` into the numerical range of a PSD matrix and its orthogonal
/// complement. Returns `(range_basis, complement_basis, eigenvalues_of_range)`.
pub(crate) fn psd_range_split(
    m: &DMatrix<f64>,
    rel_tol: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let n = m.nrows();
    let (vals, vecs) = sym_eigen_desc(m);
    let top = vals.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let rank = vals.iter().filter(|&&v| v > rel_tol * top).count();
    let range = vecs.columns(0, rank).into_owned();
    let complement = vecs.columns(rank, n - rank).into_owned();
    (range, complement, vals.rows(0, rank).into_owned())
}

/// Kronecker product `a ⊗ b`.
#[allow(dead_code)]
pub(crate) fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * s));
        }
    }
    out
}

/// Ratio of extreme singular values; `inf` for an exactly singular matrix.
pub(crate) fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::INFINITY;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let hi = sv.max();
    let lo = sv.min();
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}
