//! Spatial kriging for replicated temporal point processes.
//!
//! Point patterns observed at `d` spatial sites over `n` replicates (days,
//! say) are reduced to B-spline estimates of the site-wise mean and
//! second-moment functions. Those moments are smoothed over space with
//! penalized tensor-product splines, which extends them to an unobserved
//! site `s0`, and a constrained kriging system then yields weights that
//! predict the intensity and the count functions at `s0` from the observed
//! sites.
//!
//! The modules follow the pipeline:
//!
//! - [`basis`]: temporal B-splines, tensor-product spatial splines, Gram and
//!   roughness matrices.
//! - [`data`]: sites, replicated point patterns, count functions and the CSV
//!   formats used to ingest them.
//! - [`moments`]: nonparametric estimators of the mean and second-moment
//!   functions and the kriging matrices `M` and `Sigma`.
//! - [`spatial`]: penalized surface fits for the mean and covariance with
//!   GCV penalty selection, evaluated at a new site.
//! - [`krige`]: spectral truncation, the kriging solve, intensity and count
//!   predictions.
//! - [`simulate`]: a log-Gaussian Cox process simulator with exact moment
//!   oracles and the Monte Carlo study driver.
//! - [`cli`]: the `ppkrige` command line.

pub mod basis;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod io;
pub mod krige;
pub(crate) mod linalg;
pub mod moments;
pub mod quadrature;
pub mod simulate;
pub mod spatial;

pub use error::{Error, Result};
