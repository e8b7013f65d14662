//! Log-Gaussian Cox process replicates on a site grid, drawn by thinning,
//! next to the exact lognormal moments.

use ppkrige::simulate::{simulate_dataset, stream_seed, true_moments, Grid, LgcpParams, Model};

fn main() -> ppkrige::Result<()> {
    let params = LgcpParams::default();
    let sites = Grid::II.sites();
    let seed = stream_seed(7, &[1, 2, 3]);
    let data = simulate_dataset(&sites, Model::Two, &params, 400, seed)?;
    let p = &data.pattern;
    println!("grid {}: {} sites, {} replicates", Grid::II.label(), p.d(), p.n());

    let truth = true_moments(sites.coords(), [0.0, 0.0], Model::Two, &params)?;
    let expected: f64 = ppkrige::quadrature::GaussLegendre::new(10)
        .composite(0.0, 1.0, 40)
        .into_iter()
        .map(|(t, w)| w * truth.mean(0, t))
        .sum();
    for j in [0, 5, 10, 15] {
        let mean = (0..p.n()).map(|i| p.events(i, j).len()).sum::<usize>() as f64 / p.n() as f64;
        println!("site {j:2}: mean count {mean:6.2}, exact {expected:6.2}");
    }

    let u: Vec<f64> = data.latent.iter().map(|row| row[0]).collect();
    let m = u.iter().sum::<f64>() / u.len() as f64;
    let v = u.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (u.len() - 1) as f64;
    println!("U at site 0: sample variance {v:.4}, model {:.4}", params.var_u(1.0));
    println!("Sigma[0,0] {:.3}, Sigma[0,1] {:.3}", truth.sigma[(0, 0)], truth.sigma[(0, 1)]);
    Ok(())
}
