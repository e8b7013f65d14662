//! Temporal B-spline bases, their Gram matrices and the thin-plate
//! roughness penalty of a tensor-product spatial basis.

use ppkrige::basis::{make_spatial_basis, make_time_basis, roughness_matrix, Rect, TimeDomain};

fn main() -> ppkrige::Result<()> {
    let day = TimeDomain::new(0.0, 24.0)?;
    let even = make_time_basis(day, 4, 5, None)?;
    println!("cubic basis on [0, 24], 5 knots: dimension {}", even.dim());
    println!("interior knots {:?}", even.interior_knots());

    // Put more knots where the commute peaks are.
    let rush = |t: f64| 1.0 + 3.0 * (-(t - 8.0).powi(2) / 2.0).exp() + 3.0 * (-(t - 17.5).powi(2) / 2.0).exp();
    let dense = make_time_basis(day, 4, 5, Some(&rush))?;
    let knots: Vec<String> = dense.interior_knots().iter().map(|k| format!("{k:.2}")).collect();
    println!("knots following commute density: [{}]", knots.join(", "));

    let g = even.gram()?;
    println!("1'G1 = {:.12} (domain length 24)", g.matrix().sum());
    let b = even.eval(9.25)?;
    println!("beta(9.25) sums to {:.15}", b.sum());

    let sb = make_spatial_basis(Rect::new(0.0, 10.0, 0.0, 6.0)?, 4, 2)?;
    let j = roughness_matrix(&sb)?.matrix;
    let (bx, by) = sb.marginals();
    let (gx, gy) = (bx.greville(), by.greville());
    let q = sb.dim();
    let plane = nalgebra::DVector::from_fn(q, |i, _| 2.0 - 0.5 * gx[i / by.dim()] + 1.5 * gy[i % by.dim()]);
    let bowl = nalgebra::DVector::from_fn(q, |i, _| gx[i / by.dim()].powi(2));
    println!("spatial basis dimension {q}");
    println!("penalty of a plane      {:.3e}", plane.dot(&(&j * &plane)));
    println!("penalty of s1^2         {:.3e}", bowl.dot(&(&j * &bowl)));
    Ok(())
}
