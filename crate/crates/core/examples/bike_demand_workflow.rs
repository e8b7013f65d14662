//! End-to-end bike-share workflow: ingest a trip log, hold out two
//! stations, fit on the rest and krige the check-out counts at the held-out
//! stations.
//!
//! Usage: `bike_demand_workflow [trips.csv sites.csv days.txt [held_a held_b]]`.
//! Without arguments a synthetic trip log with commute peaks is generated.

use std::fmt::Write as _;
use std::path::PathBuf;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use ppkrige::basis::{make_spatial_basis, make_time_basis, roughness_matrix, Rect, TimeDomain};
use ppkrige::data::ingest_trips;
use ppkrige::krige::{count_prediction_error, predict_counts, solve_kriging, DEFAULT_THRESHOLD};
use ppkrige::moments::MomentEstimates;
use ppkrige::simulate::thin;
use ppkrige::spatial::{default_xi_grid, SurfaceSmoothers};

fn commute(t: f64) -> f64 {
    2.0 + 12.0 * (-(t - 8.0).powi(2) / 1.5).exp() + 9.0 * (-(t - 17.5).powi(2) / 2.5).exp()
}

fn synthesize(dir: &PathBuf) -> Result<[PathBuf; 3], Box<dyn std::error::Error>> {
    std::fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2016);
    let stations: Vec<[f64; 2]> = (0..30).map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..6.0)]).collect();
    let mut sites = String::from("site,x,y\n");
    for (j, s) in stations.iter().enumerate() {
        writeln!(sites, "st{j:02},{:.3},{:.3}", s[0], s[1])?;
    }
    let first = NaiveDate::from_ymd_opt(2016, 4, 4).unwrap();
    let days: Vec<NaiveDate> = (0..70).map(|k| first + Duration::days(k)).collect();
    let mut calendar = String::new();
    let mut trips = String::from("station,start_time\n");
    let (w, e) = (Normal::new(0.0, 0.3)?, Normal::new(0.0, 0.15)?);
    let dom = TimeDomain::new(0.0, 24.0)?;
    for day in &days {
        writeln!(calendar, "{day}")?;
        let wv = w.sample(&mut rng);
        for (j, s) in stations.iter().enumerate() {
            // Busier downtown, on the left of the map.
            let level = 0.6 - 0.06 * s[0] + wv * (1.0 + 0.1 * s[1]) + e.sample(&mut rng);
            let lambda = |t: f64| commute(t) * level.exp();
            for t in thin(&mut rng, dom, lambda, 23.0 * level.exp()) {
                let secs = (t * 3600.0).floor() as i64;
                let at = day.and_hms_opt(0, 0, 0).unwrap() + Duration::seconds(secs);
                writeln!(trips, "st{j:02},{}", at.format("%Y-%m-%d %H:%M:%S"))?;
            }
        }
    }
    let paths = [dir.join("trips.csv"), dir.join("sites.csv"), dir.join("days.txt")];
    std::fs::write(&paths[0], trips)?;
    std::fs::write(&paths[1], sites)?;
    std::fs::write(&paths[2], calendar)?;
    Ok(paths)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [trips, sites, days] = if args.len() >= 3 {
        [PathBuf::from(&args[0]), PathBuf::from(&args[1]), PathBuf::from(&args[2])]
    } else {
        synthesize(&std::env::temp_dir().join("ppkrige_bike_demand"))?
    };
    let pattern = ingest_trips(&trips, &sites, &days)?;
    println!("{} days, {} stations", pattern.n(), pattern.d());

    let held: Vec<usize> = match args.get(3..5) {
        Some(ids) => ids
            .iter()
            .map(|id| pattern.sites().index_of(id).ok_or(format!("unknown station {id}")))
            .collect::<Result<_, _>>()?,
        None => vec![3, 17],
    };
    let keep: Vec<usize> = (0..pattern.d()).filter(|j| !held.contains(j)).collect();
    let train = pattern.select_sites(&keep);

    let basis = make_time_basis(pattern.domain(), 4, 5, None)?;
    let est = MomentEstimates::estimate(&train, &basis)?;
    let region = Rect::bounding(pattern.sites().coords(), 0.05)?;
    let sb = make_spatial_basis(region, 4, 2)?;
    let fits = SurfaceSmoothers::new(&sb, train.sites().coords(), &roughness_matrix(&sb)?)?
        .fit(&est, &default_xi_grid(), &default_xi_grid())?;
    println!("penalties: mean {:.2e} (df {:.1}), covariance {:.2e} (df {:.1})", fits.xi_b, fits.df_b, fits.xi_c, fits.df_c);

    for &h in &held {
        let id = &pattern.sites().ids()[h];
        let s0 = pattern.sites().coords()[h];
        let (_, m0, sigma0, sigma00) = fits.at(&sb, &est, s0)?;
        let sol = solve_kriging(&est.sigma, &est.m, &sigma0, &m0, sigma00, DEFAULT_THRESHOLD, DEFAULT_THRESHOLD)?;
        let observed = (0..pattern.n()).map(|i| pattern.count_function(i, h)).collect::<Result<Vec<_>, _>>()?;
        let predicted = (0..train.n()).map(|i| predict_counts(&train, &sol.c_star, i)).collect::<Result<Vec<_>, _>>()?;
        let rase = count_prediction_error(&observed, &predicted)?;
        let mean_total = observed.iter().map(|f| f.total()).sum::<f64>() / observed.len() as f64;
        println!(
            "station {id}: ranks (M {}, Sigma {}), root average squared error {rase:.2} against {mean_total:.1} check-outs a day",
            sol.rank_m, sol.rank_sigma
        );
    }
    Ok(())
}
