//! Spline estimates of the site-wise mean and second-moment functions, and
//! the kriging matrices `M` and `Sigma`, checked against exact moments.

use ppkrige::basis::make_time_basis;
use ppkrige::moments::MomentEstimates;
use ppkrige::simulate::{simulate_dataset, true_moments, Grid, LgcpParams, Model};

fn main() -> ppkrige::Result<()> {
    let params = LgcpParams::default();
    let sites = Grid::I.sites();
    let truth = true_moments(sites.coords(), [0.0, 0.0], Model::One, &params)?;
    let basis = make_time_basis(LgcpParams::domain(), 4, 5, None)?;

    for n in [50, 400] {
        let data = simulate_dataset(&sites, Model::One, &params, n, 2024 + n as u64)?;
        let est = MomentEstimates::estimate(&data.pattern, &basis)?;
        println!("n = {n}");
        for t in [0.25, 0.5, 0.75] {
            println!("  mu(t={t}, s_0): estimate {:7.2}, exact {:7.2}", est.mean_at(0, t)?, truth.mean(0, t));
        }
        let r = est.second.eval(&basis, 0, 1, 0.5, 0.5)?;
        println!("  R_01(.5,.5):   estimate {:7.1}, exact {:7.1}", r, truth.second_moment(0, 1, 0.5, 0.5));
        let rel = |a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>| (a - b).norm() / b.norm();
        println!("  relative error of M {:.3}, of Sigma {:.3}", rel(&est.m, &truth.m), rel(&est.sigma, &truth.sigma));
    }
    Ok(())
}
