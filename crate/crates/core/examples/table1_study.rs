//! Desk-scale Monte Carlo study on grid (ii), Model 2.
//!
//! Usage: `cargo run --release --example table1_study [config.txt]`
//! where the optional file holds `key = value` study settings.

use ppkrige::config::KeyValues;
use ppkrige::simulate::{format_long, format_table, run_study, Grid, Model, StudyConfig};

fn main() -> ppkrige::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => StudyConfig::from_key_values(&KeyValues::read(path)?)?,
        None => StudyConfig {
            grids: vec![Grid::II],
            models: vec![Model::Two],
            ns: vec![50, 200],
            mc_reps: 200,
            ..StudyConfig::default()
        },
    };
    let start = std::time::Instant::now();
    let results = run_study(&cfg)?;
    for r in &results {
        if let Some(msg) = &r.first_failure {
            eprintln!("grid {} model {} n {}: {} failed ({msg})", r.grid, r.model.label(), r.n, r.failures);
        }
    }
    print!("{}", format_table(&results));
    println!();
    print!("{}", format_long(&results));
    eprintln!("elapsed {:.1?}", start.elapsed());
    Ok(())
}
