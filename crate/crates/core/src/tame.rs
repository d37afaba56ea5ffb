//! Truncated approximate matrix exponential (TAME).
//!
//! The truncated displacement `trunc_d0{D(xi)}` is approximated by the
//! top-left `d0 x d0` block of `expm(trunc_d1{xi a^dag - conj(xi) a})` for a
//! working dimension `d1 > d0`. Truncation damage concentrates near the
//! bottom-right edge of the exponential, so a large enough margin leaves the
//! kept block accurate. [`find_dimension`] searches for the least such `d1`,
//! and [`error_matrix`] checks a candidate against the element recurrence of
//! the displacement operator without recursing.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::expm_matrix;
use crate::fock::{check_dim, max_abs_diff, CMatrix, Provenance, TruncatedOperator, C64};

/// Recorded in place of `log10 0` for exactly vanishing residuals.
pub const LOG10_ZERO_SENTINEL: f64 = -400.0;

/// Parameters of the working-dimension search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TameConfig {
    /// Target dimension of the kept block.
    pub d0: usize,
    /// Match tolerance `epsilon1 = 10^-(k+1)`: two entries are identical when
    /// they agree to the `k`-th decimal place (see [`TameConfig::match_tolerance`]).
    pub epsilon1: f64,
    /// The search stops before `q` reaches `h * d0`.
    pub h: f64,
}

impl TameConfig {
    pub fn new(d0: usize) -> Self {
        Self { d0, epsilon1: 1e-13, h: 10.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d0 == 0 {
            return Err(Error::InvalidDimension("d0 must be at least 1".into()));
        }
        if !(self.epsilon1 > 0.0 && self.epsilon1.is_finite()) {
            return Err(Error::InvalidParameter(format!("epsilon1 must be positive, got {}", self.epsilon1)));
        }
        if !(self.h > 1.0) {
            return Err(Error::InvalidParameter(format!("h must exceed 1, got {}", self.h)));
        }
        Ok(())
    }

    /// Max-norm bound used by the match test.
    ///
    /// `epsilon1 = 1e-13` declares two numbers identical when they match up
    /// to their twelfth decimal place, i.e. when they differ by less than
    /// `1e-12 = 10 * epsilon1`.
    pub fn match_tolerance(&self) -> f64 {
        10.0 * self.epsilon1
    }

    fn limit(&self) -> f64 {
        self.h * self.d0 as f64
    }
}

/// Anti-Hermitian generator `xi a^dag - conj(xi) a` on `dim` levels.
pub fn displacement_generator(xi: C64, dim: usize) -> Result<TruncatedOperator> {
    TruncatedOperator::new(generator_matrix(xi, dim)?, Provenance::Algebraic)
}

fn generator_matrix(xi: C64, dim: usize) -> Result<CMatrix> {
    check_dim(dim)?;
    let mut q = CMatrix::zeros((dim, dim));
    for i in 0..dim - 1 {
        let s = ((i + 1) as f64).sqrt();
        q[[i + 1, i]] = xi * s;
        q[[i, i + 1]] = -xi.conj() * s;
    }
    Ok(q)
}

/// `trunc_d0{ expm(trunc_d1{Q}) }` for the displacement generator.
pub fn tame_build(xi: C64, d1: usize, d0: usize) -> Result<TruncatedOperator> {
    check_dim(d0)?;
    if d1 < d0 {
        return Err(Error::InvalidDimension(format!("working dimension {d1} below target {d0}")));
    }
    let full = expm_matrix(&generator_matrix(xi, d1)?)?;
    let block = full.slice(ndarray::s![..d0, ..d0]).to_owned();
    TruncatedOperator::new(block, Provenance::Tame)
}

/// Result of [`find_dimension_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionSearch {
    pub d1: usize,
    /// `(q, ||M_q - M_{q+1}||_max)` for every comparison made.
    pub differences: Vec<(usize, f64)>,
    /// The TAME matrix built on `d1`.
    pub matrix: TruncatedOperator,
}

/// Least working dimension `q` for which TAME on `q` and `q + 1` agree on the
/// `d0 x d0` block.
pub fn find_dimension(xi: C64, config: &TameConfig) -> Result<usize> {
    find_dimension_traced(xi, config).map(|s| s.d1)
}

pub fn find_dimension_traced(xi: C64, config: &TameConfig) -> Result<DimensionSearch> {
    config.validate()?;
    let d0 = config.d0;
    let tol = config.match_tolerance();
    let mut differences = Vec::new();
    let mut q = d0 + 1;
    let mut m_q = tame_build(xi, q, d0)?;
    while (q as f64) < config.limit() {
        let p = q + 1;
        let m_p = tame_build(xi, p, d0)?;
        let diff = max_abs_diff(m_q.entries(), m_p.entries());
        differences.push((q, diff));
        if diff < tol {
            return Ok(DimensionSearch { d1: q, differences, matrix: m_q });
        }
        q = p;
        m_q = m_p;
    }
    Err(Error::NoSolution { d0, limit: config.limit().ceil() as usize, epsilon1: config.epsilon1 })
}

/// Column statistics of `log10 |E_ij|` over the rows `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMatrixStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub max: Vec<f64>,
}

impl ErrorMatrixStats {
    pub fn global_max(&self) -> f64 {
        self.max.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn log10_or_sentinel(z: C64) -> f64 {
    let a = z.norm();
    if a == 0.0 {
        LOG10_ZERO_SENTINEL
    } else {
        a.log10()
    }
}

/// Residuals of a candidate displacement matrix against the recurrence
///
/// ```text
/// E[0][0] = G[0][0] - exp(-|xi|^2 / 2)
/// E[i][0] = G[i][0] - xi / sqrt(i) * G[i-1][0]
/// E[i][j] = G[i][j] - (sqrt(i/j) G[i-1][j-1] - conj(xi) / sqrt(j) G[i][j-1])
/// ```
///
/// Each residual only involves neighbouring entries, so rounding errors are
/// not amplified.
pub fn error_matrix(g: &TruncatedOperator, xi: C64) -> Result<(CMatrix, ErrorMatrixStats)> {
    let dim = g.dim();
    if dim < 2 {
        return Err(Error::InvalidDimension("error matrix needs dimension >= 2".into()));
    }
    let m = g.entries();
    let xi_bar = xi.conj();
    let mut e = CMatrix::zeros((dim, dim));
    e[[0, 0]] = m[[0, 0]] - (-0.5 * xi.norm_sqr()).exp();
    for i in 1..dim {
        e[[i, 0]] = m[[i, 0]] - xi / (i as f64).sqrt() * m[[i - 1, 0]];
    }
    for j in 1..dim {
        let sj = (j as f64).sqrt();
        e[[0, j]] = m[[0, j]] + xi_bar / sj * m[[0, j - 1]];
        for i in 1..dim {
            let predicted = (i as f64).sqrt() / sj * m[[i - 1, j - 1]] - xi_bar / sj * m[[i, j - 1]];
            e[[i, j]] = m[[i, j]] - predicted;
        }
    }
    let stats = column_log_stats(&e);
    Ok((e, stats))
}

fn column_log_stats(e: &CMatrix) -> ErrorMatrixStats {
    let mut mean = Vec::with_capacity(e.ncols());
    let mut std = Vec::with_capacity(e.ncols());
    let mut max = Vec::with_capacity(e.ncols());
    for col in e.columns() {
        let logs: Vec<f64> = col.iter().map(|&z| log10_or_sentinel(z)).collect();
        let n = logs.len() as f64;
        let mu = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / n;
        mean.push(mu);
        std.push(var.sqrt());
        max.push(logs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    }
    ErrorMatrixStats { mean, std, max }
}

/// Key of the persisted `d1` lookup table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct D1Key {
    /// `|xi|` in units of `1e-6`.
    pub abs_xi_micro: i64,
    pub d0: usize,
    /// Bit pattern of `epsilon1`.
    epsilon1_bits: u64,
}

impl D1Key {
    pub fn new(abs_xi: f64, d0: usize, epsilon1: f64) -> Self {
        Self { abs_xi_micro: (abs_xi * 1e6).round() as i64, d0, epsilon1_bits: epsilon1.to_bits() }
    }

    pub fn abs_xi(&self) -> f64 {
        self.abs_xi_micro as f64 * 1e-6
    }

    pub fn epsilon1(&self) -> f64 {
        f64::from_bits(self.epsilon1_bits)
    }
}

/// Persisted `(|xi|, d0, epsilon1) -> d1` table.
///
/// File format: UTF-8 text, one record per line, `#` starts a comment line.
/// Each record is four whitespace-separated fields
///
/// ```text
/// abs_xi d0 epsilon1 d1
/// 1.000000 70 1e-13 90
/// ```
///
/// `abs_xi` is printed with six decimals (the key resolution), `epsilon1` in
/// Rust's shortest round-trip exponent form. Records are written sorted by key.
#[derive(Debug, Clone, Default)]
pub struct D1Cache {
    entries: BTreeMap<D1Key, usize>,
    path: Option<PathBuf>,
}

const CACHE_HEADER: &str = "# abs_xi d0 epsilon1 d1";

impl D1Cache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads the table at `path`; a missing file gives an empty table bound to
    /// that path.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let entries = match fs::read_to_string(&path) {
            Ok(text) => Self::parse(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e.into()),
        };
        Ok(Self { entries, path: Some(path) })
    }

    fn parse(text: &str) -> Result<BTreeMap<D1Key, usize>> {
        let mut out = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Config(format!("d1 cache line {}: malformed record {line:?}", lineno + 1));
            if fields.len() != 4 {
                return Err(bad());
            }
            let abs_xi: f64 = fields[0].parse().map_err(|_| bad())?;
            let d0: usize = fields[1].parse().map_err(|_| bad())?;
            let eps: f64 = fields[2].parse().map_err(|_| bad())?;
            let d1: usize = fields[3].parse().map_err(|_| bad())?;
            out.insert(D1Key::new(abs_xi, d0, eps), d1);
        }
        Ok(out)
    }

    pub fn render(&self) -> String {
        let mut s = String::from(CACHE_HEADER);
        s.push('\n');
        for (k, d1) in &self.entries {
            s.push_str(&format!("{:.6} {} {:e} {}\n", k.abs_xi(), k.d0, k.epsilon1(), d1));
        }
        s
    }

    pub fn get(&self, abs_xi: f64, d0: usize, epsilon1: f64) -> Option<usize> {
        self.entries.get(&D1Key::new(abs_xi, d0, epsilon1)).copied()
    }

    pub fn insert(&mut self, abs_xi: f64, d0: usize, epsilon1: f64, d1: usize) {
        self.entries.insert(D1Key::new(abs_xi, d0, epsilon1), d1);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Cached `d1`, running the search on a miss.
    pub fn resolve(&mut self, xi: C64, config: &TameConfig) -> Result<usize> {
        if let Some(d1) = self.get(xi.norm(), config.d0, config.epsilon1) {
            return Ok(d1);
        }
        let d1 = find_dimension(xi, config)?;
        self.insert(xi.norm(), config.d0, config.epsilon1, d1);
        Ok(d1)
    }

    /// Writes the table back to the file it was opened from (no-op in memory).
    pub fn save(&self) -> Result<()> {
        if let Some(path) = &self.path {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            let tmp = path.with_extension("tmp");
            let mut f = fs::File::create(&tmp)?;
            f.write_all(self.render().as_bytes())?;
            f.sync_all()?;
            fs::rename(tmp, path)?;
        }
        Ok(())
    }
}
