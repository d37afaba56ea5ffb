//! Grid sweeps over squeezing and displacement for a set of scenarios
//! (transmission, detector), with persistence and reductions.
//!
//! Output is a CSV with the fixed column order
//!
//! ```text
//! gamma,xi,eta,detector,probability,M,mu_opt,fidelity@<theta>...,unnormalizable,cutoff_bias
//! ```
//!
//! plus a JSON sidecar (`<out>.json`) holding the configuration and crate
//! version. Empty cells mean "not available" (unnormalizable state). Records
//! are sorted by `(gamma, xi, eta, detector string)`, so the file does not
//! depend on the worker count.
//!
//! While running, finished grid columns are appended to `<out>.partial`; an
//! interrupted sweep rerun with the same configuration skips every record
//! already present there or in `<out>`.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{find_d0, make_povm, ConditionalKernel, Detector};
use crate::error::{Error, Result};
use crate::fock::C64;
use crate::metrics::{cutoff_bias, fidelity_qubit, nonlinear_variance};
use crate::tame::{find_dimension, tame_build, D1Cache, TameConfig};

/// Equidistant grid `lo, ..., hi` with `count` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRange {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl GridRange {
    pub fn new(lo: f64, hi: f64, count: usize) -> Self {
        Self { lo, hi, count }
    }

    pub fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let n = (self.count - 1) as f64;
        (0..self.count)
            .map(|i| if i + 1 == self.count { self.hi } else { self.lo + (self.hi - self.lo) * i as f64 / n })
            .collect()
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.count < 2 {
            return Err(Error::Config(format!("{name}: need at least 2 grid points, got {}", self.count)));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo >= 0.0 && self.hi >= self.lo) {
            return Err(Error::Config(format!("{name}: invalid range [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }
}

pub const ETA_PRESET: [f64; 4] = [0.80, 0.90, 0.99, 1.00];
pub const DEFAULT_BINS: usize = 200;

/// Fidelity thresholds `0.80, 0.81, ..., 0.99, 0.999`.
pub fn default_taus() -> Vec<f64> {
    let mut t: Vec<f64> = (80..=99).map(|k| k as f64 / 100.0).collect();
    t.push(0.999);
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub gamma_range: GridRange,
    pub xi_range: GridRange,
    pub etas: Vec<f64>,
    pub detectors: Vec<Detector>,
    /// Fixed `d0`; otherwise the least dimension for the largest squeezing
    /// and displacement of the grid.
    pub d0: Option<usize>,
    pub epsilon0: f64,
    pub epsilon1: f64,
    /// Upper bound for the `d0` search.
    pub max_d0: usize,
    /// Fidelity targets `theta`.
    pub targets: Vec<f64>,
    pub bins: usize,
    pub taus: Vec<f64>,
    pub output_path: Option<PathBuf>,
    /// Persisted `d1` table.
    pub d1_cache: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    pub parallelism: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            gamma_range: GridRange::new(0.0, 1.0, 1001),
            xi_range: GridRange::new(0.0, 1.0, 1001),
            etas: ETA_PRESET.to_vec(),
            detectors: crate::circuit::standard_detectors(),
            d0: None,
            epsilon0: 1e-13,
            epsilon1: 1e-13,
            max_d0: 200,
            targets: vec![std::f64::consts::FRAC_PI_3, std::f64::consts::FRAC_PI_6],
            bins: DEFAULT_BINS,
            taus: default_taus(),
            output_path: None,
            d1_cache: None,
            parallelism: 0,
        }
    }
}

impl SweepConfig {
    /// 101 x 101 grid for desk-scale runs.
    pub fn desk() -> Self {
        Self {
            gamma_range: GridRange::new(0.0, 1.0, 101),
            xi_range: GridRange::new(0.0, 1.0, 101),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gamma_range.validate("gamma_range")?;
        self.xi_range.validate("xi_range")?;
        if self.etas.is_empty() || self.etas.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(Error::Config(format!("etas must be a non-empty list in [0, 1], got {:?}", self.etas)));
        }
        if self.detectors.is_empty() {
            return Err(Error::Config("no detectors configured".into()));
        }
        if !(self.epsilon0 > 0.0 && self.epsilon0 < 1.0) {
            return Err(Error::Config(format!("epsilon0 must lie in (0, 1), got {}", self.epsilon0)));
        }
        if self.bins == 0 {
            return Err(Error::Config("bins must be positive".into()));
        }
        TameConfig { d0: self.d0.unwrap_or(1), epsilon1: self.epsilon1, ..TameConfig::new(1) }.validate()?;
        Ok(())
    }

    /// The parts of the configuration that determine record content.
    fn fingerprint(&self) -> Self {
        Self { output_path: None, d1_cache: None, parallelism: 0, ..self.clone() }
    }
}

/// One evaluated grid point of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub gamma: f64,
    pub xi: f64,
    pub eta: f64,
    pub detector: Detector,
    pub probability: f64,
    pub m: Option<f64>,
    pub mu_opt: Option<f64>,
    /// One entry per configured target, in order.
    pub fidelities: Vec<Option<f64>>,
    pub unnormalizable: bool,
    pub cutoff_bias: bool,
}

type RecordKey = (u64, u64, u64, String);

impl SweepRecord {
    fn key(&self) -> RecordKey {
        (self.gamma.to_bits(), self.xi.to_bits(), self.eta.to_bits(), self.detector.to_string())
    }

    fn sort_key(&self) -> (f64, f64, f64, String) {
        (self.gamma, self.xi, self.eta, self.detector.to_string())
    }
}

fn sort_records(records: &mut [SweepRecord]) {
    records.sort_by(|a, b| {
        let (ka, kb) = (a.sort_key(), b.sort_key());
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.total_cmp(&kb.2)).then(ka.3.cmp(&kb.3))
    });
}

/// Records and bookkeeping of one sweep.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    pub d0: usize,
    /// `d1` per grid displacement.
    pub d1: Vec<(f64, usize)>,
    /// Displacement matrices built in this run.
    pub builds: usize,
    /// Records evaluated in this run (the rest were loaded from disk).
    pub computed: usize,
}

pub fn resolve_d0(config: &SweepConfig) -> Result<usize> {
    match config.d0 {
        Some(d0) => Ok(d0),
        None => find_d0(
            config.gamma_range.hi,
            C64::new(config.xi_range.hi, 0.0),
            config.epsilon0,
            config.max_d0,
            config.max_d0 + config.max_d0 / 2,
        ),
    }
}

/// Evaluates every `(gamma, xi, eta, detector)` combination of the grid.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_sweep_inner(config))
}

fn run_sweep_inner(config: &SweepConfig) -> Result<SweepOutcome> {
    let d0 = resolve_d0(config)?;
    let tame = TameConfig { d0, epsilon1: config.epsilon1, ..TameConfig::new(d0) };
    let gammas = config.gamma_range.points();
    let xis = config.xi_range.points();
    let povms = config
        .detectors
        .iter()
        .map(|&d| make_povm(d, d0))
        .collect::<Result<Vec<_>>>()?;

    let mut existing = Vec::new();
    if let Some(out) = &config.output_path {
        check_sidecar(out, config)?;
        existing = load_existing(out, config)?;
        write_sidecar(out, config, d0)?;
    }
    let done: HashSet<RecordKey> = existing.iter().map(SweepRecord::key).collect();
    let column_done = |xi: f64| {
        gammas.iter().all(|&g| {
            config.etas.iter().all(|&e| {
                config
                    .detectors
                    .iter()
                    .all(|d| done.contains(&(g.to_bits(), xi.to_bits(), e.to_bits(), d.to_string())))
            })
        })
    };
    let pending: Vec<f64> = xis.iter().copied().filter(|&xi| !column_done(xi)).collect();

    // d1 for every pending column: parallel search, single writer into the table.
    let mut cache = match &config.d1_cache {
        Some(p) => D1Cache::open(p)?,
        None => D1Cache::in_memory(),
    };
    let misses: Vec<f64> = pending.iter().copied().filter(|&xi| cache.get(xi, d0, config.epsilon1).is_none()).collect();
    let found = misses
        .par_iter()
        .map(|&xi| find_dimension(C64::new(xi, 0.0), &tame).map(|d1| (xi, d1)))
        .collect::<Result<Vec<_>>>()?;
    for (xi, d1) in found {
        cache.insert(xi, d0, config.epsilon1, d1);
    }
    cache.save()?;
    let d1: Vec<(f64, usize)> = pending.iter().map(|&xi| (xi, cache.get(xi, d0, config.epsilon1).unwrap())).collect();

    let builds = AtomicUsize::new(0);
    let journal = match &config.output_path {
        Some(out) => Some(Mutex::new(BufWriter::new(
            OpenOptions::new().create(true).append(true).open(partial_path(out))?,
        ))),
        None => None,
    };
    let columns = d1
        .par_iter()
        .map(|&(xi, d1)| {
            let d = tame_build(C64::new(xi, 0.0), d1, d0)?;
            builds.fetch_add(1, Ordering::Relaxed);
            let mut out = Vec::new();
            for &eta in &config.etas {
                for povm in &povms {
                    let kernel = ConditionalKernel::new(&d, eta, povm)?;
                    for &gamma in &gammas {
                        let key = (gamma.to_bits(), xi.to_bits(), eta.to_bits(), povm.descriptor.to_string());
                        if done.contains(&key) {
                            continue;
                        }
                        out.push(evaluate(&kernel, gamma, xi, eta, povm.descriptor, &config.targets)?);
                    }
                }
            }
            if let Some(j) = &journal {
                let mut w = j.lock().unwrap();
                write_rows(&mut *w, &out, false)?;
                w.flush()?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let computed: usize = columns.iter().map(Vec::len).sum();
    let mut records = existing;
    records.extend(columns.into_iter().flatten());
    sort_records(&mut records);
    if let Some(out) = &config.output_path {
        drop(journal);
        write_csv(out, &records, &config.targets)?;
        let _ = fs::remove_file(partial_path(out));
    }
    Ok(SweepOutcome { records, d0, d1, builds: builds.into_inner(), computed })
}

fn evaluate(
    kernel: &ConditionalKernel,
    gamma: f64,
    xi: f64,
    eta: f64,
    detector: Detector,
    targets: &[f64],
) -> Result<SweepRecord> {
    let prep = kernel.prepare(gamma)?;
    let mut rec = SweepRecord {
        gamma,
        xi,
        eta,
        detector,
        probability: prep.probability,
        m: None,
        mu_opt: None,
        fidelities: vec![None; targets.len()],
        unnormalizable: prep.rho.is_none(),
        cutoff_bias: false,
    };
    if let Some(rho) = &prep.rho {
        let (m, mu) = nonlinear_variance(rho)?;
        rec.m = Some(m);
        rec.mu_opt = Some(mu);
        for (f, &theta) in rec.fidelities.iter_mut().zip(targets) {
            *f = Some(fidelity_qubit(rho, theta)?);
        }
        rec.cutoff_bias = cutoff_bias(rho);
    }
    Ok(rec)
}

fn partial_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    version: String,
    d0: usize,
    columns: Vec<String>,
    config: SweepConfig,
}

fn check_sidecar(out: &Path, config: &SweepConfig) -> Result<()> {
    let path = sidecar_path(out);
    if !path.exists() {
        return Ok(());
    }
    let prior: Sidecar = serde_json::from_str(&fs::read_to_string(&path)?)?;
    if prior.config.fingerprint() != config.fingerprint() {
        return Err(Error::Config(format!(
            "{} was produced by a different configuration; choose another output path",
            out.display()
        )));
    }
    Ok(())
}

fn write_sidecar(out: &Path, config: &SweepConfig, d0: usize) -> Result<()> {
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let sidecar = Sidecar {
        version: env!("CARGO_PKG_VERSION").to_string(),
        d0,
        columns: header(&config.targets),
        config: config.fingerprint(),
    };
    fs::write(sidecar_path(out), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

fn header(targets: &[f64]) -> Vec<String> {
    let mut h: Vec<String> = ["gamma", "xi", "eta", "detector", "probability", "M", "mu_opt"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(targets.iter().map(|t| format!("fidelity@{t}")));
    h.push("unnormalizable".into());
    h.push("cutoff_bias".into());
    h
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_rows(w: &mut impl Write, records: &[SweepRecord], with_header: bool) -> Result<()> {
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    if with_header {
        if let Some(r) = records.first() {
            csv.write_record(header(&vec![0.0; r.fidelities.len()]))?;
        }
    }
    for r in records {
        let mut row = vec![
            r.gamma.to_string(),
            r.xi.to_string(),
            r.eta.to_string(),
            r.detector.to_string(),
            r.probability.to_string(),
            opt(r.m),
            opt(r.mu_opt),
        ];
        row.extend(r.fidelities.iter().map(|&f| opt(f)));
        row.push(r.unnormalizable.to_string());
        row.push(r.cutoff_bias.to_string());
        csv.write_record(row)?;
    }
    csv.flush()?;
    Ok(())
}

/// Writes records with a header naming the fidelity targets.
pub fn write_csv(path: &Path, records: &[SweepRecord], targets: &[f64]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(&mut w);
        csv.write_record(header(targets))?;
        csv.flush()?;
        drop(csv);
        write_rows(&mut w, records, false)?;
        w.flush()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| Error::Config(format!("bad number {s:?} in record file")))
    }
}

fn parse_rows(path: &Path, targets: usize, has_header: bool) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(has_header).flexible(false).from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != 9 + targets {
            return Err(Error::Config(format!("{}: expected {} columns, got {}", path.display(), 9 + targets, row.len())));
        }
        let num = |i: usize| parse_opt(&row[i])?.ok_or_else(|| Error::Config(format!("missing value in column {i}")));
        let flag = |i: usize| {
            row[i].parse::<bool>().map_err(|_| Error::Config(format!("bad flag {:?} in column {i}", &row[i])))
        };
        out.push(SweepRecord {
            gamma: num(0)?,
            xi: num(1)?,
            eta: num(2)?,
            detector: row[3].parse()?,
            probability: num(4)?,
            m: parse_opt(&row[5])?,
            mu_opt: parse_opt(&row[6])?,
            fidelities: (0..targets).map(|k| parse_opt(&row[7 + k])).collect::<Result<_>>()?,
            unnormalizable: flag(7 + targets)?,
            cutoff_bias: flag(8 + targets)?,
        });
    }
    Ok(out)
}

/// Reads a record file written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<(Vec<f64>, Vec<SweepRecord>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let targets = rdr
        .headers()?
        .iter()
        .filter_map(|h| h.strip_prefix("fidelity@"))
        .map(|t| t.parse::<f64>().map_err(|_| Error::Config(format!("bad fidelity column {t:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let records = parse_rows(path, targets.len(), true)?;
    Ok((targets, records))
}

/// Records from a finished file and an interrupted run's journal, deduplicated.
fn load_existing(out: &Path, config: &SweepConfig) -> Result<Vec<SweepRecord>> {
    let mut by_key = BTreeMap::new();
    if out.exists() {
        for r in read_csv(out)?.1 {
            by_key.insert(r.key(), r);
        }
    }
    let partial = partial_path(out);
    if partial.exists() {
        for r in parse_rows(&partial, config.targets.len(), false)? {
            by_key.insert(r.key(), r);
        }
    }
    Ok(by_key.into_values().collect())
}

/// Records of one `(eta, detector)` scenario.
pub fn scenario(records: &[SweepRecord], eta: f64, detector: Detector) -> Vec<SweepRecord> {
    records.iter().filter(|r| r.eta == eta && r.detector == detector).cloned().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Reduction {
    /// Equal-width bins over the observed range of `M`.
    NonlinearM { bins: usize },
    /// Cumulative thresholds `F >= tau` on the fidelity with target index `target`.
    Fidelity { target: usize, taus: Vec<f64> },
}

/// Maximal success probability inside one bin; `None` when the bin is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub lower: f64,
    pub upper: f64,
    pub max_probability: Option<f64>,
}

pub fn bin_reduce(records: &[SweepRecord], reduction: &Reduction) -> Result<Vec<BinRow>> {
    if records.is_empty() {
        return Err(Error::Config("no records to reduce".into()));
    }
    match reduction {
        Reduction::NonlinearM { bins } => {
            if *bins == 0 {
                return Err(Error::Config("bins must be positive".into()));
            }
            let ms: Vec<(f64, f64)> = records.iter().filter_map(|r| r.m.map(|m| (m, r.probability))).collect();
            let lo = ms.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
            let hi = ms.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
            if ms.is_empty() {
                return Ok(vec![BinRow { lower: f64::NAN, upper: f64::NAN, max_probability: None }]);
            }
            let width = (hi - lo) / *bins as f64;
            let mut rows: Vec<BinRow> = (0..*bins)
                .map(|b| BinRow {
                    lower: lo + width * b as f64,
                    upper: if b + 1 == *bins { hi } else { lo + width * (b + 1) as f64 },
                    max_probability: None,
                })
                .collect();
            for (m, p) in ms {
                let b = if width > 0.0 { (((m - lo) / width) as usize).min(bins - 1) } else { 0 };
                let slot = &mut rows[b].max_probability;
                *slot = Some(slot.map_or(p, |q: f64| q.max(p)));
            }
            Ok(rows)
        }
        Reduction::Fidelity { target, taus } => Ok(taus
            .iter()
            .map(|&tau| BinRow {
                lower: tau,
                upper: 1.0,
                max_probability: records
                    .iter()
                    .filter(|r| r.fidelities.get(*target).copied().flatten().is_some_and(|f| f >= tau))
                    .map(|r| r.probability)
                    .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |q| q.max(p)))),
            })
            .collect()),
    }
}

/// Lowest `M` among records with success probability at least `p_min`.
pub fn attainable_m(records: &[SweepRecord], p_min: f64) -> Option<f64> {
    records.iter().filter(|r| r.probability >= p_min).filter_map(|r| r.m).reduce(f64::min)
}

/// `L = log10 P_det - log10 P_baseline` per fidelity threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub tau: f64,
    pub values: Vec<(Detector, Option<f64>)>,
}

/// Relative improvement over `baseline` at one transmission `eta` for the
/// fidelity target with index `target`.
pub fn relative_improvement(
    records: &[SweepRecord],
    eta: f64,
    baseline: Detector,
    target: usize,
    taus: &[f64],
) -> Result<Vec<ImprovementRow>> {
    let base = scenario(records, eta, baseline);
    if base.is_empty() {
        return Err(Error::Config(format!("baseline {baseline} has no records at eta = {eta}")));
    }
    let reduction = Reduction::Fidelity { target, taus: taus.to_vec() };
    let base_rows = bin_reduce(&base, &reduction)?;
    let mut detectors: Vec<Detector> = records
        .iter()
        .filter(|r| r.eta == eta && r.detector != baseline)
        .map(|r| r.detector)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    detectors.sort_by_key(|d| d.to_string());
    let per_det = detectors
        .iter()
        .map(|&d| bin_reduce(&scenario(records, eta, d), &reduction).map(|rows| (d, rows)))
        .collect::<Result<Vec<_>>>()?;
    Ok(taus
        .iter()
        .enumerate()
        .map(|(i, &tau)| ImprovementRow {
            tau,
            values: per_det
                .iter()
                .map(|(d, rows)| {
                    let l = match (rows[i].max_probability, base_rows[i].max_probability) {
                        (Some(p), Some(q)) if p > 0.0 && q > 0.0 => Some(p.log10() - q.log10()),
                        _ => None,
                    };
                    (*d, l)
                })
                .collect(),
        })
        .collect())
}
