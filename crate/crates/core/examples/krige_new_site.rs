//! Kriging the intensity at an unobserved site: truncated spectra of the
//! estimated `M` and `Sigma`, the constrained weights, and their true
//! prediction error next to the best achievable one.

use ppkrige::basis::{make_spatial_basis, make_time_basis, roughness_matrix};
use ppkrige::krige::{predict_intensity, solve_kriging, DEFAULT_THRESHOLD};
use ppkrige::moments::MomentEstimates;
use ppkrige::simulate::{simulate_dataset, true_moments, Grid, LgcpParams, Model};
use ppkrige::spatial::{default_xi_grid, SurfaceSmoothers};

fn main() -> ppkrige::Result<()> {
    let params = LgcpParams::default();
    let grid = Grid::I;
    let sites = grid.sites();
    let s0 = [0.0, 0.0];
    let data = simulate_dataset(&sites, Model::One, &params, 100, 5)?;
    let basis = make_time_basis(LgcpParams::domain(), 4, 5, None)?;
    let est = MomentEstimates::estimate(&data.pattern, &basis)?;
    let sb = make_spatial_basis(grid.region(), 4, 6)?;
    let fits = SurfaceSmoothers::new(&sb, sites.coords(), &roughness_matrix(&sb)?)?
        .fit(&est, &default_xi_grid(), &default_xi_grid())?;
    let (mu0, m0, sigma0, sigma00) = fits.at(&sb, &est, s0)?;

    let sol = solve_kriging(&est.sigma, &est.m, &sigma0, &m0, sigma00, DEFAULT_THRESHOLD, DEFAULT_THRESHOLD)?;
    println!("ranks kept: M {}, Sigma {}", sol.rank_m, sol.rank_sigma);
    println!("weights:");
    for (j, c) in sol.c_star.iter().enumerate() {
        println!("  site {j:2} at ({:5.2}, {:5.2}): {c:8.4}", sites.coords()[j][0], sites.coords()[j][1]);
    }
    println!("sum of weights {:.4}", sol.c_star.sum());

    let fitted = predict_intensity(&sol.c_star, &est.a)?;
    for t in [0.25, 0.5, 0.75] {
        let b = basis.eval(t)?;
        println!("t = {t}: kriged mean intensity {:.2}, smoothed surface {:.2}", b.dot(&fitted), b.dot(&mu0));
    }

    let mut truth = true_moments(sites.coords(), s0, Model::One, &params)?;
    truth.resolve(DEFAULT_THRESHOLD, DEFAULT_THRESHOLD)?;
    println!("true prediction error of these weights {:.2}", truth.prediction_error(&sol.c_star));
    println!("same truncation with exact moments     {:.2}", truth.spe0);
    Ok(())
}
