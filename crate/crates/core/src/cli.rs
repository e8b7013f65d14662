//! Command-line front end.
//!
//! `fit` writes a directory of labeled CSV matrices plus a `manifest.txt`
//! describing the bases; `krige` and `predict` rebuild the bases from that
//! manifest and refuse artifacts whose shapes disagree with it.
//!
//! Exit statuses: 0 on success, 1 when the numerics fail (singular systems,
//! non-convergence), 2 for usage and input errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use crate::basis::{make_spatial_basis, make_time_basis, roughness_matrix, Rect, SpatialBasis, SplineBasis, TimeDomain};
use crate::config::{parse_xi_grid, KeyValues};
use crate::data::{ingest_events, ingest_trips, CountFunction, PointPattern, SiteSet};
use crate::error::{Error, Result};
use crate::io::{LabeledMatrix, Manifest};
use crate::krige::{count_prediction_error, predict_counts, predict_intensity, solve_kriging, DEFAULT_THRESHOLD};
use crate::moments::MomentEstimates;
use crate::simulate::{format_long, format_table, run_study, StudyConfig};
use crate::spatial::{default_xi_grid, predict_cov_at, predict_mean_at, GcvChoice, SurfaceSmoothers};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NUMERICAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const FIT_FORMAT: &str = "ppkrige-fit-1";
const KRIGE_FORMAT: &str = "ppkrige-krige-1";

#[derive(Debug, Parser)]
#[command(name = "ppkrige", version, about = "Kriging of intensity and count functions of replicated point processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert trip records (or validate an event file) into an Event CSV.
    Ingest(IngestArgs),
    /// Estimate moments at the observed sites and fit the spatial surfaces.
    Fit(FitArgs),
    /// Solve for kriging weights at a new site and predict its counts.
    Krige(KrigeArgs),
    /// Apply saved kriging weights to a new events file.
    Predict(PredictArgs),
    /// Run the Monte Carlo study and write its error table.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Trip CSV with `station,start_time`.
    #[arg(long, conflicts_with = "events", requires = "calendar")]
    pub trips: Option<PathBuf>,
    /// Calendar of dates to keep, one ISO date per line.
    #[arg(long)]
    pub calendar: Option<PathBuf>,
    /// Existing Event CSV to validate and normalize.
    #[arg(long, requires = "domain")]
    pub events: Option<PathBuf>,
    /// Site CSV with `site,x,y`.
    #[arg(long)]
    pub sites: PathBuf,
    /// Time domain `a,b` for `--events`.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub sites: PathBuf,
    /// `key = value` run configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for the fit artifacts.
    #[arg(long)]
    pub out: PathBuf,
    /// Time domain `a,b`.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long)]
    pub temporal_order: Option<usize>,
    #[arg(long)]
    pub temporal_knots: Option<usize>,
    #[arg(long)]
    pub spatial_order: Option<usize>,
    #[arg(long)]
    pub spatial_knots: Option<usize>,
    /// Spatial region `x0,x1,y0,y1`; defaults to the bounding box of all sites.
    #[arg(long)]
    pub region: Option<String>,
    /// Penalty grid for the mean surface, `lo:hi:per_decade` or a list.
    #[arg(long)]
    pub xi_grid_b: Option<String>,
    #[arg(long)]
    pub xi_grid_c: Option<String>,
    /// Comma-separated site ids left out of the fit (hold-out sites).
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
}

#[derive(Debug, Args)]
pub struct KrigeArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    /// Target coordinates `x,y`.
    #[arg(long, conflicts_with = "target_site")]
    pub target: Option<String>,
    /// Target given by a site id from the fit's site file.
    #[arg(long)]
    pub target_site: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub threshold_m: Option<f64>,
    #[arg(long)]
    pub threshold_sigma: Option<f64>,
    /// Number of time points for sampled output curves.
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Clamp sampled predictions at zero.
    #[arg(long)]
    pub clamp: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Directory written by `krige`.
    #[arg(long)]
    pub krige: PathBuf,
    #[arg(long)]
    pub events: PathBuf,
    /// Site file covering the events; defaults to the weights' own sites.
    #[arg(long)]
    pub sites: Option<PathBuf>,
    /// Site whose observed counts are compared with the predictions.
    #[arg(long)]
    pub observed_site: Option<String>,
    #[arg(long)]
    pub grid_points: Option<usize>,
    #[arg(long)]
    pub clamp: bool,
    /// Output CSV of predicted counts.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Study configuration (`grid`, `model`, `n`, `mc_reps`, `seed`, ...).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mc_reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Table CSV; overrides the config's `output`. Printed when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional long-format CSV with bias, sd and rmse.
    #[arg(long)]
    pub long: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Krige(a) => cmd_krige(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    }
}

fn parse_floats(raw: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = raw
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::invalid(format!("{what}: cannot parse `{raw}`")))?;
    if v.len() != n {
        return Err(Error::invalid(format!("{what}: expected {n} numbers, found {}", v.len())));
    }
    Ok(v)
}

fn parse_domain(raw: &str) -> Result<TimeDomain> {
    let v = parse_floats(raw, 2, "domain")?;
    TimeDomain::new(v[0], v[1])
}

fn parse_rect(raw: &str) -> Result<Rect> {
    let v = parse_floats(raw, 4, "region")?;
    Rect::new(v[0], v[1], v[2], v[3])
}

fn format_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

pub fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let pattern = match (&a.trips, &a.events) {
        (Some(trips), None) => {
            let cal = a.calendar.as_ref().ok_or_else(|| Error::invalid("--trips needs --calendar"))?;
            ingest_trips(trips, &a.sites, cal)?
        }
        (None, Some(events)) => {
            let domain = parse_domain(a.domain.as_deref().unwrap_or_default())?;
            ingest_events(events, &SiteSet::read_csv(&a.sites)?, domain)?
        }
        _ => return Err(Error::invalid("give exactly one of --trips or --events")),
    };
    pattern.write_events(&a.out)?;
    eprintln!("wrote {} replicates x {} sites to {}", pattern.n(), pattern.d(), a.out.display());
    Ok(())
}

/// Resolved settings for `fit`, from the config file with flags on top.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub domain: Option<TimeDomain>,
    pub temporal_order: usize,
    pub temporal_knots: usize,
    pub knots: Option<Vec<f64>>,
    pub spatial_order: usize,
    pub spatial_knots: usize,
    pub region: Option<Rect>,
    pub xi_grid_b: Vec<f64>,
    pub xi_grid_c: Vec<f64>,
    pub threshold_m: f64,
    pub threshold_sigma: f64,
    pub grid_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            domain: None,
            temporal_order: 4,
            temporal_knots: 5,
            knots: None,
            spatial_order: 4,
            spatial_knots: 6,
            region: None,
            xi_grid_b: default_xi_grid(),
            xi_grid_c: default_xi_grid(),
            threshold_m: DEFAULT_THRESHOLD,
            threshold_sigma: DEFAULT_THRESHOLD,
            grid_points: 241,
        }
    }
}

const RUN_KEYS: &[&str] = &[
    "domain",
    "temporal_order",
    "temporal_knots",
    "knots",
    "spatial_order",
    "spatial_knots",
    "region",
    "xi_grid_b",
    "xi_grid_c",
    "threshold_m",
    "threshold_sigma",
    "grid_points",
];

impl RunConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.expect_only(RUN_KEYS)?;
        let d = Self::default();
        let c = Self {
            domain: kv.raw("domain").map(parse_domain).transpose()?,
            temporal_order: kv.get_or("temporal_order", d.temporal_order)?,
            temporal_knots: kv.get_or("temporal_knots", d.temporal_knots)?,
            knots: kv.list::<f64>("knots")?,
            spatial_order: kv.get_or("spatial_order", d.spatial_order)?,
            spatial_knots: kv.get_or("spatial_knots", d.spatial_knots)?,
            region: kv.raw("region").map(parse_rect).transpose()?,
            xi_grid_b: kv.raw("xi_grid_b").map(parse_xi_grid).transpose()?.unwrap_or(d.xi_grid_b),
            xi_grid_c: kv.raw("xi_grid_c").map(parse_xi_grid).transpose()?.unwrap_or(d.xi_grid_c),
            threshold_m: kv.get_or("threshold_m", d.threshold_m)?,
            threshold_sigma: kv.get_or("threshold_sigma", d.threshold_sigma)?,
            grid_points: kv.get_or("grid_points", d.grid_points)?,
        };
        c.validate()?;
        Ok(c)
    }

    fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_key_values(&KeyValues::read(p)?),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in [self.threshold_m, self.threshold_sigma] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::invalid(format!("threshold {t} not in (0, 1]")));
            }
        }
        if self.grid_points < 2 {
            return Err(Error::invalid("grid_points must be at least 2"));
        }
        Ok(())
    }

    pub fn time_basis(&self, domain: TimeDomain) -> Result<SplineBasis> {
        match &self.knots {
            Some(k) => SplineBasis::with_interior_knots(domain, self.temporal_order, k.clone()),
            None => make_time_basis(domain, self.temporal_order, self.temporal_knots, None),
        }
    }
}

/// Evenly spaced sampling grid over the domain, endpoints included.
pub fn time_grid(domain: TimeDomain, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| domain.start() + domain.length() * i as f64 / (points - 1) as f64)
        .collect()
}

fn gcv_table(choice: &GcvChoice) -> LabeledMatrix {
    let rows = choice.curve.len();
    let values = DMatrix::from_fn(rows, 4, |i, c| {
        let p = &choice.curve[i];
        match c {
            0 => p.xi,
            1 => p.df,
            2 => p.rss,
            _ => p.gcv.unwrap_or(f64::NAN),
        }
    });
    LabeledMatrix::new(
        (0..rows).map(|i| i.to_string()).collect(),
        ["xi", "df", "rss", "gcv"].map(String::from).to_vec(),
        values,
    )
    .expect("shape built above")
}

fn basis_labels(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(d) = &a.domain {
        cfg.domain = Some(parse_domain(d)?);
    }
    macro_rules! override_field {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    override_field!(temporal_order, temporal_knots, spatial_order, spatial_knots);
    if a.temporal_knots.is_some() {
        cfg.knots = None;
    }
    if let Some(r) = &a.region {
        cfg.region = Some(parse_rect(r)?);
    }
    if let Some(g) = &a.xi_grid_b {
        cfg.xi_grid_b = parse_xi_grid(g)?;
    }
    if let Some(g) = &a.xi_grid_c {
        cfg.xi_grid_c = parse_xi_grid(g)?;
    }
    let domain = cfg
        .domain
        .ok_or_else(|| Error::invalid("time domain not set (use --domain a,b or `domain` in the config)"))?;

    let all_sites = SiteSet::read_csv(&a.sites)?;
    let pattern = ingest_events(&a.events, &all_sites, domain)?;
    let mut keep = Vec::new();
    for (j, id) in all_sites.ids().iter().enumerate() {
        if !a.exclude.contains(id) {
            keep.push(j);
        }
    }
    for id in &a.exclude {
        if all_sites.index_of(id).is_none() {
            return Err(Error::invalid(format!("excluded site `{id}` is not in {}", a.sites.display())));
        }
    }
    if keep.len() < 2 {
        return Err(Error::invalid("fewer than two sites left to fit"));
    }
    let fit_pattern = pattern.select_sites(&keep);
    let region = match cfg.region {
        Some(r) => r,
        None => Rect::bounding(all_sites.coords(), 0.0)?,
    };
    for &s in all_sites.coords() {
        if !region.contains(s) {
            return Err(Error::OutsideRegion { x: s[0], y: s[1] });
        }
    }

    let basis = cfg.time_basis(domain)?;
    let est = MomentEstimates::estimate(&fit_pattern, &basis)?;
    let sb = make_spatial_basis(region, cfg.spatial_order, cfg.spatial_knots)?;
    let j = roughness_matrix(&sb)?;
    let smoothers = SurfaceSmoothers::new(&sb, fit_pattern.sites().coords(), &j)?;
    let fits = smoothers.fit(&est, &cfg.xi_grid_b, &cfg.xi_grid_c)?;

    let out = &a.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let ids: Vec<String> = fit_pattern.sites().ids().to_vec();
    let (p, q) = (basis.dim(), sb.dim());
    LabeledMatrix::new(basis_labels("b", p), ids.clone(), est.a.clone())?.write(out.join("A.csv"))?;
    LabeledMatrix::new(ids.clone(), ids.clone(), est.m.clone())?.write(out.join("M.csv"))?;
    LabeledMatrix::new(ids.clone(), ids.clone(), est.sigma.clone())?.write(out.join("Sigma.csv"))?;
    LabeledMatrix::new(basis_labels("b", p), basis_labels("g", q), fits.b.clone())?.write(out.join("B.csv"))?;
    LabeledMatrix::new(basis_labels("g", q), basis_labels("g", q), fits.c.clone())?.write(out.join("C.csv"))?;
    gcv_table(&fits.gcv_b).write(out.join("gcv_b.csv"))?;
    gcv_table(&fits.gcv_c).write(out.join("gcv_c.csv"))?;
    all_sites.write_csv(out.join("sites.csv"))?;
    pattern.write_events(out.join("events.csv"))?;

    let mut m = Manifest::new();
    m.set("format", FIT_FORMAT)
        .set("domain", format_list(&[domain.start(), domain.end()]))
        .set("temporal_order", basis.order())
        .set("interior_knots", format_list(basis.interior_knots()))
        .set("p", p)
        .set("spatial_order", cfg.spatial_order)
        .set("spatial_knots", cfg.spatial_knots)
        .set("region", format_list(&[region.x0, region.x1, region.y0, region.y1]))
        .set("q", q)
        .set("n", est.n)
        .set("d", ids.len())
        .set("excluded", a.exclude.join(","))
        .set("xi_b", format!("{:?}", fits.xi_b))
        .set("df_b", format!("{:?}", fits.df_b))
        .set("xi_c", format!("{:?}", fits.xi_c))
        .set("df_c", format!("{:?}", fits.df_c));
    m.write(out.join("manifest.txt"))?;
    eprintln!(
        "fit n={} d={} p={p} q={q}: xi_B={:.4e} (df {:.2}), xi_C={:.4e} (df {:.2})",
        est.n,
        ids.len(),
        fits.xi_b,
        fits.df_b,
        fits.xi_c,
        fits.df_c
    );
    Ok(())
}

/// A fit directory read back and checked against its manifest.
pub struct FitArtifacts {
    pub dir: PathBuf,
    pub manifest: Manifest,
    pub basis: SplineBasis,
    pub spatial: SpatialBasis,
    pub all_sites: SiteSet,
    pub fit_sites: SiteSet,
    pub pattern: PointPattern,
    pub a: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

fn manifest_value<'a>(m: &'a Manifest, key: &str, path: &Path) -> Result<&'a str> {
    m.get(key)
        .ok_or_else(|| Error::invalid(format!("{}: manifest lacks `{key}`", path.display())))
}

fn manifest_parse<T: std::str::FromStr>(m: &Manifest, key: &str, path: &Path) -> Result<T> {
    manifest_value(m, key, path)?
        .parse()
        .map_err(|_| Error::invalid(format!("{}: bad `{key}` in manifest", path.display())))
}

fn expect_shape(name: &str, m: &LabeledMatrix, rows: usize, cols: usize) -> Result<()> {
    if m.values.shape() != (rows, cols) {
        return Err(Error::DimensionMismatch(format!(
            "{name} is {}x{} but the manifest's bases imply {rows}x{cols}",
            m.values.nrows(),
            m.values.ncols()
        )));
    }
    Ok(())
}

impl FitArtifacts {
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.txt");
        let manifest = Manifest::read(&mpath)?;
        if manifest.get("format") != Some(FIT_FORMAT) {
            return Err(Error::invalid(format!("{} is not a fit manifest", mpath.display())));
        }
        let domain = parse_domain(manifest_value(&manifest, "domain", &mpath)?)?;
        let order: usize = manifest_parse(&manifest, "temporal_order", &mpath)?;
        let knots_raw = manifest_value(&manifest, "interior_knots", &mpath)?;
        let knots: Vec<f64> = if knots_raw.is_empty() {
            Vec::new()
        } else {
            knots_raw
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::invalid(format!("{}: bad interior_knots", mpath.display())))?
        };
        let basis = SplineBasis::with_interior_knots(domain, order, knots)?;
        let region = parse_rect(manifest_value(&manifest, "region", &mpath)?)?;
        let spatial = make_spatial_basis(
            region,
            manifest_parse(&manifest, "spatial_order", &mpath)?,
            manifest_parse(&manifest, "spatial_knots", &mpath)?,
        )?;
        let (p, q) = (basis.dim(), spatial.dim());
        if manifest_parse::<usize>(&manifest, "p", &mpath)? != p || manifest_parse::<usize>(&manifest, "q", &mpath)? != q {
            return Err(Error::DimensionMismatch(format!(
                "{}: recorded basis dimensions disagree with the basis settings",
                mpath.display()
            )));
        }
        let all_sites = SiteSet::read_csv(dir.join("sites.csv"))?;
        let pattern = ingest_events(dir.join("events.csv"), &all_sites, domain)?;
        let excluded: Vec<&str> = manifest_value(&manifest, "excluded", &mpath)?
            .split(',')
            .filter(|s| !s.is_empty())
            .collect();
        let keep: Vec<usize> = (0..all_sites.len())
            .filter(|&j| !excluded.contains(&all_sites.ids()[j].as_str()))
            .collect();
        let fit_sites = all_sites.subset(&keep);
        let d = fit_sites.len();
        let a = LabeledMatrix::read(dir.join("A.csv"))?;
        expect_shape("A.csv", &a, p, d)?;
        if a.col_labels != fit_sites.ids() {
            return Err(Error::DimensionMismatch("A.csv columns do not match the fitted sites".into()));
        }
        let m = LabeledMatrix::read(dir.join("M.csv"))?;
        expect_shape("M.csv", &m, d, d)?;
        let sigma = LabeledMatrix::read(dir.join("Sigma.csv"))?;
        expect_shape("Sigma.csv", &sigma, d, d)?;
        let b = LabeledMatrix::read(dir.join("B.csv"))?;
        expect_shape("B.csv", &b, p, q)?;
        let c = LabeledMatrix::read(dir.join("C.csv"))?;
        expect_shape("C.csv", &c, q, q)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            basis,
            spatial,
            all_sites,
            fit_sites,
            pattern,
            a: a.values,
            m: m.values,
            sigma: sigma.values,
            b: b.values,
            c: c.values,
        })
    }

    pub fn fit_pattern(&self) -> PointPattern {
        let keep: Vec<usize> = self
            .fit_sites
            .ids()
            .iter()
            .map(|id| self.all_sites.index_of(id).expect("subset of all sites"))
            .collect();
        self.pattern.select_sites(&keep)
    }
}

fn sampled_counts(
    labels: &[String],
    predicted: &[CountFunction],
    grid: &[f64],
    clamp: bool,
) -> Result<LabeledMatrix> {
    let mut values = DMatrix::zeros(predicted.len(), grid.len());
    for (i, f) in predicted.iter().enumerate() {
        for (k, v) in f.sample(grid, clamp).into_iter().enumerate() {
            values[(i, k)] = v;
        }
    }
    LabeledMatrix::new(labels.to_vec(), grid.iter().map(|t| format!("{t:?}")).collect(), values)
}

pub fn cmd_krige(a: &KrigeArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Some(t) = a.threshold_m {
        cfg.threshold_m = t;
    }
    if let Some(t) = a.threshold_sigma {
        cfg.threshold_sigma = t;
    }
    if let Some(g) = a.grid_points {
        cfg.grid_points = g;
    }
    cfg.validate()?;
    let fit = FitArtifacts::load(&a.fit)?;
    let (s0, target_id) = match (&a.target, &a.target_site) {
        (Some(t), None) => {
            let v = parse_floats(t, 2, "target")?;
            ([v[0], v[1]], None)
        }
        (None, Some(id)) => {
            let j = fit
                .all_sites
                .index_of(id)
                .ok_or_else(|| Error::invalid(format!("target site `{id}` is not in the fit's site file")))?;
            (fit.all_sites.coords()[j], Some(j))
        }
        _ => return Err(Error::invalid("give exactly one of --target or --target-site")),
    };
    if !fit.spatial.region().contains(s0) {
        return Err(Error::OutsideRegion { x: s0[0], y: s0[1] });
    }
    let gram = fit.basis.gram()?;
    let gamma = fit.spatial.design_matrix(fit.fit_sites.coords())?;
    let (mu0, m0) = predict_mean_at(&fit.b, &fit.spatial, &gram, &fit.a, s0)?;
    let (sigma0, sigma00) = predict_cov_at(&fit.c, &fit.spatial, &gamma, s0)?;
    let sol = solve_kriging(&fit.sigma, &fit.m, &sigma0, &m0, sigma00, cfg.threshold_m, cfg.threshold_sigma)?;

    let out = &a.out;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_weights(&out.join("weights.csv"), fit.fit_sites.ids(), &sol.c_star)?;
    fit.fit_sites.write_csv(out.join("sites.csv"))?;

    let grid = time_grid(fit.basis.domain(), cfg.grid_points);
    let kriged = predict_intensity(&sol.c_star, &fit.a)?;
    let curve = DMatrix::from_fn(grid.len(), 3, |i, c| match c {
        0 => grid[i],
        1 => fit.basis.eval(grid[i]).map(|b| b.dot(&kriged)).unwrap_or(f64::NAN),
        _ => fit.basis.eval(grid[i]).map(|b| b.dot(&mu0)).unwrap_or(f64::NAN),
    });
    LabeledMatrix::new(
        (0..grid.len()).map(|i| i.to_string()).collect(),
        ["time", "kriged_mean", "surface_mean"].map(String::from).to_vec(),
        curve,
    )?
    .write(out.join("intensity.csv"))?;

    let fit_pattern = fit.fit_pattern();
    let predicted: Vec<CountFunction> = (0..fit_pattern.n())
        .map(|i| predict_counts(&fit_pattern, &sol.c_star, i))
        .collect::<Result<_>>()?;
    sampled_counts(fit_pattern.replicate_labels(), &predicted, &grid, a.clamp)?.write(out.join("counts.csv"))?;

    let mut m = Manifest::new();
    m.set("format", KRIGE_FORMAT)
        .set("fit", fit.dir.display())
        .set("domain", manifest_value(&fit.manifest, "domain", &fit.dir)?)
        .set("target", format_list(&s0))
        .set("rank_m", sol.rank_m)
        .set("rank_sigma", sol.rank_sigma)
        .set("threshold_m", format!("{:?}", sol.threshold_m))
        .set("threshold_sigma", format!("{:?}", sol.threshold_sigma))
        .set("spe_estimate", format!("{:?}", sol.spe_estimate));
    if let Some(j) = target_id {
        let id = &fit.all_sites.ids()[j];
        m.set("target_site", id);
        let observed: Vec<CountFunction> = (0..fit.pattern.n())
            .map(|i| fit.pattern.count_function(i, j))
            .collect::<Result<_>>()?;
        let rase = count_prediction_error(&observed, &predicted)?;
        m.set("count_rase", format!("{rase:?}"));
        println!("root average squared error at {id}: {rase:.4}");
    }
    m.write(out.join("manifest.txt"))?;
    eprintln!(
        "kriged at ({}, {}): rank M {} rank Sigma {} spe_estimate {:.6e}",
        s0[0], s0[1], sol.rank_m, sol.rank_sigma, sol.spe_estimate
    );
    Ok(())
}

fn write_weights(path: &Path, ids: &[String], c: &DVector<f64>) -> Result<()> {
    let mut s = String::from("site,weight\n");
    for (id, w) in ids.iter().zip(c.iter()) {
        s.push_str(&format!("{id},{w:?}\n"));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a `site,weight` file.
pub fn read_weights(path: &Path) -> Result<(Vec<String>, DVector<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "site,weight" => {}
        _ => {
            return Err(Error::Parse {
                path: name,
                line: 1,
                msg: "expected header `site,weight`".into(),
            })
        }
    }
    let mut ids = Vec::new();
    let mut w = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (id, v) = line.rsplit_once(',').ok_or_else(|| Error::Parse {
            path: name.clone(),
            line: i + 1,
            msg: "expected `site,weight`".into(),
        })?;
        ids.push(id.to_string());
        w.push(v.trim().parse::<f64>().map_err(|_| Error::Parse {
            path: name.clone(),
            line: i + 1,
            msg: format!("bad weight `{v}`"),
        })?);
    }
    Ok((ids, DVector::from_vec(w)))
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let mpath = a.krige.join("manifest.txt");
    let manifest = Manifest::read(&mpath)?;
    if manifest.get("format") != Some(KRIGE_FORMAT) {
        return Err(Error::invalid(format!("{} is not a kriging manifest", mpath.display())));
    }
    let domain = parse_domain(manifest_value(&manifest, "domain", &mpath)?)?;
    let (ids, c) = read_weights(&a.krige.join("weights.csv"))?;
    let sites = SiteSet::read_csv(a.sites.clone().unwrap_or_else(|| a.krige.join("sites.csv")))?;
    let pattern = ingest_events(&a.events, &sites, domain)?;
    let keep: Vec<usize> = ids
        .iter()
        .map(|id| {
            sites
                .index_of(id)
                .ok_or_else(|| Error::invalid(format!("weighted site `{id}` is missing from the site file")))
        })
        .collect::<Result<_>>()?;
    let used = pattern.select_sites(&keep);
    let predicted: Vec<CountFunction> = (0..used.n())
        .map(|i| predict_counts(&used, &c, i))
        .collect::<Result<_>>()?;
    let grid = time_grid(domain, a.grid_points.unwrap_or(241).max(2));
    sampled_counts(used.replicate_labels(), &predicted, &grid, a.clamp)?.write(&a.out)?;
    if let Some(id) = &a.observed_site {
        let j = sites
            .index_of(id)
            .ok_or_else(|| Error::invalid(format!("observed site `{id}` is not in the site file")))?;
        let observed: Vec<CountFunction> = (0..pattern.n())
            .map(|i| pattern.count_function(i, j))
            .collect::<Result<_>>()?;
        let rase = count_prediction_error(&observed, &predicted)?;
        println!("root average squared error at {id}: {rase:.4}");
    }
    Ok(())
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => StudyConfig::from_key_values(&KeyValues::read(p)?)?,
        None => StudyConfig::default(),
    };
    if let Some(r) = a.mc_reps {
        cfg.mc_reps = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.output = Some(o.clone());
    }
    let results = run_study(&cfg)?;
    for r in &results {
        if let Some(msg) = &r.first_failure {
            eprintln!(
                "grid {} model {} n {}: {} of {} replicates failed: {msg}",
                r.grid,
                r.model.label(),
                r.n,
                r.failures,
                r.failures + r.reps
            );
        }
    }
    let table = format_table(&results);
    match &cfg.output {
        Some(p) => std::fs::write(p, &table).map_err(|e| Error::io(p, e))?,
        None => print!("{table}"),
    }
    if let Some(p) = &a.long {
        std::fs::write(p, format_long(&results)).map_err(|e| Error::io(p, e))?;
    }
    if results.iter().all(|r| r.metrics.is_none()) {
        return Err(Error::Numerical("every study cell failed".into()));
    }
    Ok(())
}
