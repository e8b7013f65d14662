//! Sites, replicated point patterns, count functions, and the CSV formats
//! they are read from.
//!
//! - Event CSV: header `replicate,site,time`. A row with an empty `time`
//!   declares a replicate without adding an event, so days with no events
//!   survive a write/read round trip.
//! - Site CSV: header `site,x,y`.
//! - Trip CSV: header `station,start_time` with ISO-8601 timestamps, plus a
//!   calendar file listing one ISO date per line.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, Timelike};

use crate::basis::TimeDomain;
use crate::error::{Error, Result};

/// Observation sites with identifiers and planar coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteSet {
    ids: Vec<String>,
    coords: Vec<[f64; 2]>,
}

impl SiteSet {
    pub fn new(ids: Vec<String>, coords: Vec<[f64; 2]>) -> Result<Self> {
        if ids.len() != coords.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} site ids but {} coordinates",
                ids.len(),
                coords.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::invalid(format!("duplicate site id {id:?}")));
            }
        }
        for (j, c) in coords.iter().enumerate() {
            if !(c[0].is_finite() && c[1].is_finite()) {
                return Err(Error::invalid(format!("site {:?} has non-finite coordinates", ids[j])));
            }
            for k in 0..j {
                if coords[k] == *c {
                    return Err(Error::invalid(format!(
                        "sites {:?} and {:?} share coordinates",
                        ids[k], ids[j]
                    )));
                }
            }
        }
        Ok(Self { ids, coords })
    }

    /// Sites labelled `0, 1, ...` in the given order.
    pub fn from_coords(coords: Vec<[f64; 2]>) -> Result<Self> {
        let ids = (0..coords.len()).map(|j| j.to_string()).collect();
        Self::new(ids, coords)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Grid spacing `min_{j≠k} ‖s_j − s_k‖`; infinite for fewer than two sites.
    pub fn min_spacing(&self) -> f64 {
        let mut best = f64::INFINITY;
        for j in 0..self.coords.len() {
            for k in (j + 1)..self.coords.len() {
                let dx = self.coords[j][0] - self.coords[k][0];
                let dy = self.coords[j][1] - self.coords[k][1];
                best = best.min(dx.hypot(dy));
            }
        }
        best
    }

    pub fn subset(&self, keep: &[usize]) -> Self {
        Self {
            ids: keep.iter().map(|&j| self.ids[j].clone()).collect(),
            coords: keep.iter().map(|&j| self.coords[j]).collect(),
        }
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, &path.display().to_string())
    }

    pub fn from_reader(reader: impl Read, name: &str) -> Result<Self> {
        let mut rdr = csv_reader(reader);
        expect_header(&mut rdr, name, &["site", "x", "y"])?;
        let mut ids = Vec::new();
        let mut coords = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(name, e))?;
            let line = record_line(&rec);
            let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
            let id = field(0);
            if id.is_empty() {
                return Err(parse_err(name, line, "empty site id"));
            }
            let coord = |i: usize, axis: &str| -> Result<f64> {
                let raw = field(i);
                if raw.is_empty() {
                    return Err(parse_err(name, line, format!("station {id:?} is missing its {axis} coordinate")));
                }
                raw.parse::<f64>()
                    .map_err(|_| parse_err(name, line, format!("bad {axis} coordinate {raw:?}")))
            };
            let x = coord(1, "x")?;
            let y = coord(2, "y")?;
            ids.push(id.to_string());
            coords.push([x, y]);
        }
        Self::new(ids, coords)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("site,x,y\n");
        for (id, c) in self.ids.iter().zip(&self.coords) {
            out.push_str(&format!("{id},{},{}\n", c[0], c[1]));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// `n` replicates of a `d`-variate temporal point pattern on `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPattern {
    domain: TimeDomain,
    sites: SiteSet,
    replicates: Vec<String>,
    // events[i][j]: sorted event times of replicate i at site j.
    events: Vec<Vec<Vec<f64>>>,
}

impl PointPattern {
    /// Validates and sorts the event lists. Requires at least one replicate.
    pub fn new(
        domain: TimeDomain,
        sites: SiteSet,
        replicates: Vec<String>,
        mut events: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::invalid("a point pattern needs at least one replicate"));
        }
        if replicates.len() != events.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} replicate labels for {} replicates",
                replicates.len(),
                events.len()
            )));
        }
        for rep in events.iter_mut() {
            if rep.len() != sites.len() {
                return Err(Error::DimensionMismatch(format!(
                    "replicate has {} sites, expected {}",
                    rep.len(),
                    sites.len()
                )));
            }
            for times in rep.iter_mut() {
                for &t in times.iter() {
                    domain.check(t)?;
                }
                times.sort_by(f64::total_cmp);
            }
        }
        Ok(Self {
            domain,
            sites,
            replicates,
            events,
        })
    }

    /// Replicates labelled `0, 1, ...`.
    pub fn unlabelled(domain: TimeDomain, sites: SiteSet, events: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let labels = (0..events.len()).map(|i| i.to_string()).collect();
        Self::new(domain, sites, labels, events)
    }

    pub fn domain(&self) -> TimeDomain {
        self.domain
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    pub fn n(&self) -> usize {
        self.events.len()
    }

    pub fn d(&self) -> usize {
        self.sites.len()
    }

    pub fn replicate_labels(&self) -> &[String] {
        &self.replicates
    }

    /// Sorted event times of replicate `i` at site `j`.
    pub fn events(&self, i: usize, j: usize) -> &[f64] {
        &self.events[i][j]
    }

    pub fn count_function(&self, i: usize, j: usize) -> Result<CountFunction> {
        if i >= self.n() || j >= self.d() {
            return Err(Error::invalid(format!(
                "index (replicate {i}, site {j}) out of range for n={}, d={}",
                self.n(),
                self.d()
            )));
        }
        Ok(CountFunction::from_events(self.domain, &self.events[i][j]))
    }

    /// Pattern restricted to the listed sites, in the given order.
    pub fn select_sites(&self, keep: &[usize]) -> Self {
        Self {
            domain: self.domain,
            sites: self.sites.subset(keep),
            replicates: self.replicates.clone(),
            events: self
                .events
                .iter()
                .map(|rep| keep.iter().map(|&j| rep[j].clone()).collect())
                .collect(),
        }
    }

    /// Pattern restricted to the listed replicates.
    pub fn select_replicates(&self, keep: &[usize]) -> Result<Self> {
        Self::new(
            self.domain,
            self.sites.clone(),
            keep.iter().map(|&i| self.replicates[i].clone()).collect(),
            keep.iter().map(|&i| self.events[i].clone()).collect(),
        )
    }

    pub fn write_events(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_events_to(&mut f).map_err(|e| Error::io(path, e))
    }

    pub fn write_events_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut buf = String::from("replicate,site,time\n");
        for (i, rep) in self.events.iter().enumerate() {
            let label = &self.replicates[i];
            if rep.iter().all(Vec::is_empty) {
                buf.push_str(&format!("{label},{},\n", self.sites.ids()[0]));
                continue;
            }
            for (j, times) in rep.iter().enumerate() {
                for t in times {
                    buf.push_str(&format!("{label},{},{t}\n", self.sites.ids()[j]));
                }
            }
        }
        w.write_all(buf.as_bytes())
    }
}

/// Right-continuous step function `N(t) = Σ_{u ≤ t} size(u)`.
///
/// Observed counts have unit jumps; kriged predictions carry real weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CountFunction {
    domain: TimeDomain,
    jumps: Vec<(f64, f64)>,
}

impl CountFunction {
    pub fn zero(domain: TimeDomain) -> Self {
        Self {
            domain,
            jumps: Vec::new(),
        }
    }

    /// Unit jumps at sorted event times; ties add up.
    pub fn from_events(domain: TimeDomain, times: &[f64]) -> Self {
        let mut jumps: Vec<(f64, f64)> = Vec::new();
        for &t in times {
            match jumps.last_mut() {
                Some(last) if last.0 == t => last.1 += 1.0,
                _ => jumps.push((t, 1.0)),
            }
        }
        Self { domain, jumps }
    }

    /// `Σ_k w_k N_k`. All inputs must share one domain.
    pub fn weighted_sum(domain: TimeDomain, terms: &[(f64, &CountFunction)]) -> Result<Self> {
        let mut all: Vec<(f64, f64)> = Vec::new();
        for (w, f) in terms {
            if f.domain != domain {
                return Err(Error::invalid("count functions live on different domains"));
            }
            all.extend(f.jumps.iter().map(|&(t, s)| (t, w * s)));
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut jumps: Vec<(f64, f64)> = Vec::with_capacity(all.len());
        for (t, s) in all {
            match jumps.last_mut() {
                Some(last) if last.0 == t => last.1 += s,
                _ => jumps.push((t, s)),
            }
        }
        jumps.retain(|&(_, s)| s != 0.0);
        Ok(Self { domain, jumps })
    }

    pub fn domain(&self) -> TimeDomain {
        self.domain
    }

    /// Jump times and sizes, sorted by time.
    pub fn jumps(&self) -> &[(f64, f64)] {
        &self.jumps
    }

    pub fn value(&self, t: f64) -> f64 {
        self.jumps
            .iter()
            .take_while(|&&(u, _)| u <= t)
            .map(|&(_, s)| s)
            .sum()
    }

    /// `N(b)`.
    pub fn total(&self) -> f64 {
        self.jumps.iter().map(|&(_, s)| s).sum()
    }

    /// Values at sorted grid points, optionally clamped at zero.
    pub fn sample(&self, grid: &[f64], clamp_nonnegative: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        let mut k = 0;
        for &t in grid {
            while k < self.jumps.len() && self.jumps[k].0 <= t {
                acc += self.jumps[k].1;
                k += 1;
            }
            out.push(if clamp_nonnegative { acc.max(0.0) } else { acc });
        }
        out
    }

    /// Exact `L2[a, b]` distance between two step functions.
    pub fn l2_distance(&self, other: &CountFunction) -> Result<f64> {
        if self.domain != other.domain {
            return Err(Error::invalid("count functions live on different domains"));
        }
        let diff = CountFunction::weighted_sum(self.domain, &[(1.0, self), (-1.0, other)])?;
        let b = self.domain.end();
        let mut level = 0.0;
        let mut prev = self.domain.start();
        let mut acc = 0.0;
        for &(t, s) in &diff.jumps {
            acc += level * level * (t - prev);
            level += s;
            prev = t;
        }
        acc += level * level * (b - prev);
        Ok(acc.sqrt())
    }
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

fn expect_header<R: Read>(rdr: &mut csv::Reader<R>, name: &str, want: &[&str]) -> Result<()> {
    let headers = rdr.headers().map_err(|e| csv_error(name, e))?.clone();
    let got: Vec<&str> = headers.iter().collect();
    if got.len() < want.len() || got[..want.len()] != *want {
        return Err(parse_err(
            name,
            1,
            format!("expected header {:?}, found {:?}", want.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn parse_err(name: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: name.to_string(),
        line,
        msg: msg.into(),
    }
}

fn csv_error(name: &str, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    parse_err(name, line, e.to_string())
}

/// Reads an Event CSV against a known site set and time domain.
pub fn ingest_events(path: impl AsRef<Path>, sites: &SiteSet, domain: TimeDomain) -> Result<PointPattern> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_events(file, &path.display().to_string(), sites, domain)
}

pub fn parse_events(reader: impl Read, name: &str, sites: &SiteSet, domain: TimeDomain) -> Result<PointPattern> {
    let mut rdr = csv_reader(reader);
    expect_header(&mut rdr, name, &["replicate", "site", "time"])?;
    let mut labels: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut events: Vec<Vec<Vec<f64>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(name, e))?;
        let line = record_line(&rec);
        if rec.len() < 3 {
            return Err(parse_err(name, line, "expected 3 fields: replicate,site,time"));
        }
        let (rep, site, time) = (&rec[0], &rec[1], &rec[2]);
        if rep.is_empty() {
            return Err(parse_err(name, line, "empty replicate label"));
        }
        let j = sites
            .index_of(site)
            .ok_or_else(|| parse_err(name, line, format!("unknown site id {site:?}")))?;
        let i = *index.entry(rep.to_string()).or_insert_with(|| {
            labels.push(rep.to_string());
            events.push(vec![Vec::new(); sites.len()]);
            labels.len() - 1
        });
        if time.is_empty() {
            continue;
        }
        let t: f64 = time
            .parse()
            .map_err(|_| parse_err(name, line, format!("malformed time {time:?}")))?;
        if !domain.contains(t) {
            return Err(parse_err(
                name,
                line,
                format!("time {t} outside [{}, {}]", domain.start(), domain.end()),
            ));
        }
        events[i][j].push(t);
    }
    if events.is_empty() {
        return Err(Error::invalid(format!("{name}: no replicates (n >= 1 required)")));
    }
    PointPattern::new(domain, sites.clone(), labels, events)
}

/// Parses the timestamp formats found in trip exports and returns the local
/// wall-clock reading. Offsets are ignored rather than converted.
pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    const FORMATS: &[&str] = &[
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
        "%m/%d/%Y %H:%M:%S",
        "%m/%d/%Y %H:%M",
    ];
    let raw = raw.trim();
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_local());
    }
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
}

fn clock_hours(ts: &NaiveDateTime) -> f64 {
    let t = ts.time();
    t.hour() as f64 + t.minute() as f64 / 60.0 + (t.second() as f64 + t.nanosecond() as f64 * 1e-9) / 3600.0
}

/// Reads a calendar file: one ISO date per line, blank lines and `#`
/// comments ignored. Returns the dates sorted and deduplicated.
pub fn read_calendar(path: impl AsRef<Path>) -> Result<Vec<NaiveDate>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut dates = BTreeSet::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let s = line.split('#').next().unwrap_or("").trim();
        if s.is_empty() {
            continue;
        }
        let d = NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map_err(|_| parse_err(&name, k + 1, format!("bad date {s:?}")))?;
        dates.insert(d);
    }
    Ok(dates.into_iter().collect())
}

/// Builds a pattern from trip records: one replicate per calendar date,
/// check-out clock times in hours on `[0, 24]`, and only stations listed in
/// the site file. Trips on other dates or at unlisted stations are skipped.
pub fn ingest_trips(
    trip_file: impl AsRef<Path>,
    site_file: impl AsRef<Path>,
    calendar_file: impl AsRef<Path>,
) -> Result<PointPattern> {
    let sites = SiteSet::read_csv(site_file)?;
    let calendar = read_calendar(calendar_file)?;
    let path = trip_file.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    trips_to_pattern(file, &path.display().to_string(), sites, &calendar)
}

pub fn trips_to_pattern(
    reader: impl Read,
    name: &str,
    sites: SiteSet,
    calendar: &[NaiveDate],
) -> Result<PointPattern> {
    if calendar.is_empty() {
        return Err(Error::invalid("calendar lists no dates"));
    }
    let day_index: HashMap<NaiveDate, usize> =
        calendar.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let mut events = vec![vec![Vec::new(); sites.len()]; calendar.len()];
    let mut rdr = csv_reader(reader);
    expect_header(&mut rdr, name, &["station", "start_time"])?;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(name, e))?;
        let line = record_line(&rec);
        let station = rec.get(0).unwrap_or("");
        let stamp = rec.get(1).unwrap_or("");
        let ts = parse_timestamp(stamp)
            .ok_or_else(|| parse_err(name, line, format!("cannot parse timestamp {stamp:?}")))?;
        let Some(&i) = day_index.get(&ts.date()) else {
            continue;
        };
        let Some(j) = sites.index_of(station) else {
            continue;
        };
        events[i][j].push(clock_hours(&ts));
    }
    let labels = calendar.iter().map(|d| d.to_string()).collect();
    PointPattern::new(TimeDomain::new(0.0, 24.0)?, sites, labels, events)
}
