//! Smoothing site-wise estimates into mean and covariance surfaces, with
//! penalties chosen by generalized cross-validation.

use ppkrige::basis::{make_spatial_basis, make_time_basis, roughness_matrix};
use ppkrige::moments::MomentEstimates;
use ppkrige::simulate::{simulate_dataset, true_moments, Grid, LgcpParams, Model};
use ppkrige::spatial::{default_xi_grid, SurfaceSmoothers};

fn main() -> ppkrige::Result<()> {
    let params = LgcpParams::default();
    let grid = Grid::I;
    let sites = grid.sites();
    let data = simulate_dataset(&sites, Model::One, &params, 200, 77)?;
    let basis = make_time_basis(LgcpParams::domain(), 4, 5, None)?;
    let est = MomentEstimates::estimate(&data.pattern, &basis)?;

    let sb = make_spatial_basis(grid.region(), 4, 6)?;
    let j = roughness_matrix(&sb)?;
    let smoothers = SurfaceSmoothers::new(&sb, sites.coords(), &j)?;
    let xi = default_xi_grid();
    let fits = smoothers.fit(&est, &xi, &xi)?;
    println!("{} sites, spatial basis dimension {}", sites.len(), sb.dim());
    println!("mean surface:       xi = {:.3e}, df = {:.2}", fits.xi_b, fits.df_b);
    println!("covariance surface: xi = {:.3e}, df = {:.2}", fits.xi_c, fits.df_c);

    println!("\n   xi          df_C     GCV_C");
    for p in fits.gcv_c.curve.iter().step_by(25) {
        let g = p.gcv.map_or("undefined".to_string(), |g| format!("{g:.4e}"));
        println!("  {:9.2e}  {:7.2}  {g}", p.xi, p.df);
    }

    let s0 = [0.0, 0.0];
    let (_, m0, sigma0, _) = fits.at(&sb, &est, s0)?;
    let truth = true_moments(sites.coords(), s0, Model::One, &params)?;
    println!("\nat the centre: m0[0] {:.2} (exact {:.2}), sigma0[0] {:.2} (exact {:.2})",
        m0[0], truth.m0[0], sigma0[0], truth.sigma0[0]);
    Ok(())
}
