//! Conditional state preparation: a two-mode squeezed vacuum whose second
//! mode is attenuated, displaced and measured with a Fock-diagonal detector.
//!
//! The two-mode density operator is never formed. With TMSV amplitudes
//! `mu_i`, loss Kraus operators `M(k)|i> = c_{k,i} |i-k>` and POVM weights
//! `w_m`, the unnormalized conditional state is
//!
//! ```text
//! rho_ij = sum_k sum_m w_m v_i^(k,m) conj(v_j^(k,m)),
//! v_i^(k,m) = mu_i <m| D(xi) M(k) |i> = mu_i c_{k,i} D[m][i-k].
//! ```
//!
//! Summing over `m` first gives the Hermitian `G = D^T W conj(D)`, then
//! `S_ij = sum_k c_{k,i} c_{k,j} G[i-k][j-k]` depends on `(xi, eta, povm)` but
//! not on the squeezing, and `rho_ij = mu_i mu_j S_ij`. A [`ConditionalKernel`]
//! holds `S` so that a sweep over squeezing costs `O(d0^2)` per point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{check_dim, CMatrix, DensityOperator, Provenance, TruncatedOperator, C64, ZERO};
use crate::tame::tame_build;

/// Success probabilities below this are reported as unnormalizable.
pub const MIN_PROBABILITY: f64 = 1e-300;

/// Two-mode squeezed vacuum with squeezing `gamma >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TmsvSource {
    gamma: f64,
}

impl TmsvSource {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("squeezing must be >= 0, got {gamma}")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn coeffs(&self, dim: usize) -> Vec<f64> {
        tmsv_coeffs(self.gamma, dim)
    }
}

/// Schmidt coefficients `mu_i = sech(gamma) tanh(gamma)^i` for `i < dim`.
pub fn tmsv_coeffs(gamma: f64, dim: usize) -> Vec<f64> {
    let sech = 1.0 / gamma.cosh();
    let t = gamma.tanh();
    let mut out = Vec::with_capacity(dim);
    let mut acc = sech;
    for _ in 0..dim {
        out.push(acc);
        acc *= t;
    }
    out
}

/// Pure-loss channel with transmission `eta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossChannel {
    eta: f64,
}

impl LossChannel {
    pub fn new(eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!("transmission must lie in [0, 1], got {eta}")));
        }
        Ok(Self { eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `c_{k,i} = sqrt(C(i, k)) (1-eta)^(k/2) eta^((i-k)/2)`, the only nonzero
    /// amplitude of `M(k)|i>` (landing on `|i-k>`). Zero for `k > i`.
    pub fn amplitude(&self, k: usize, i: usize) -> f64 {
        if k > i {
            return 0.0;
        }
        let ln_binom = crate::dispmat::ln_binomial(i, k);
        (0.5 * ln_binom).exp() * (1.0 - self.eta).sqrt().powi(k as i32) * self.eta.sqrt().powi((i - k) as i32)
    }

    fn amplitude_table(&self, dim: usize) -> Vec<Vec<f64>> {
        (0..dim).map(|k| (0..dim).map(|i| self.amplitude(k, i)).collect()).collect()
    }
}

/// Kraus operator for losing exactly `k` photons, on `dim` levels.
pub fn loss_kraus(eta: f64, k: usize, dim: usize) -> Result<TruncatedOperator> {
    check_dim(dim)?;
    let ch = LossChannel::new(eta)?;
    let mut m = CMatrix::zeros((dim, dim));
    for i in k..dim {
        m[[i - k, i]] = C64::new(ch.amplitude(k, i), 0.0);
    }
    TruncatedOperator::new(m, Provenance::Algebraic)
}

/// Fock-diagonal detection outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Detector {
    /// Ideal photon-number-resolving detector registering `n` photons.
    FockProjector(usize),
    /// Click of an ideal avalanche photodiode, `I - |0><0|`.
    ApdClick,
    /// Exactly `clicks` of `detectors` APDs fire in a balanced cascade.
    Cascade { detectors: u32, clicks: u32 },
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Detector::FockProjector(n) => write!(f, "fock:{n}"),
            Detector::ApdClick => write!(f, "apd"),
            Detector::Cascade { detectors, clicks } => write!(f, "cascade:{detectors}:{clicks}"),
        }
    }
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognized detector {s:?} (expected fock:N, apd or cascade:M:N)"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        match parts.as_slice() {
            ["apd"] => Ok(Detector::ApdClick),
            ["fock", n] => Ok(Detector::FockProjector(n.parse().map_err(|_| bad())?)),
            ["cascade", m, n] => {
                let detectors: u32 = m.parse().map_err(|_| bad())?;
                let clicks: u32 = n.parse().map_err(|_| bad())?;
                if detectors == 0 || clicks > detectors {
                    return Err(bad());
                }
                Ok(Detector::Cascade { detectors, clicks })
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for Detector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Detector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The 13 outcomes studied: APD click, PNRD |1>..|6>, and the cascades
/// `(10,1), (5,1), (2,1), (10,3), (5,3), (4,3)`.
pub fn standard_detectors() -> Vec<Detector> {
    let mut v = vec![Detector::ApdClick];
    v.extend((1..=6).map(Detector::FockProjector));
    for (detectors, clicks) in [(10, 1), (5, 1), (2, 1), (10, 3), (5, 3), (4, 3)] {
        v.push(Detector::Cascade { detectors, clicks });
    }
    v
}

/// Probability that exactly `n` of `m` cascade detectors click when `k`
/// photons are spread uniformly over them:
/// `C(m, n) m^-k sum_l C(n, l) (-1)^l (n - l)^k`.
///
/// The `C(m, n)` multiplicity counts which subset of detectors fires; without
/// it the outcomes would not sum to one.
pub fn cascade_click_probability(m: u32, n: u32, k: usize) -> Result<f64> {
    if n > m {
        return Err(Error::InvalidParameter(format!("{n} clicks exceed {m} detectors")));
    }
    if m == 0 {
        return Ok(if k == 0 { 1.0 } else { 0.0 });
    }
    if (k as u64) < n as u64 {
        return Ok(0.0);
    }
    let mf = m as f64;
    let mut sum = 0.0;
    let mut binom_nl = 1.0;
    for l in 0..=n {
        if l > 0 {
            binom_nl *= (n - l + 1) as f64 / l as f64;
        }
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        // ((n - l) / m)^k keeps every term bounded by C(n, l)
        sum += sign * binom_nl * ((n - l) as f64 / mf).powi(k as i32);
    }
    let p = (crate::dispmat::ln_binomial(m as usize, n as usize)).exp() * sum;
    Ok(p.clamp(0.0, 1.0))
}

/// Fock-diagonal POVM element.
#[derive(Debug, Clone, PartialEq)]
pub struct PovmElement {
    pub weights: Vec<f64>,
    pub descriptor: Detector,
}

pub fn make_povm(descriptor: Detector, dim: usize) -> Result<PovmElement> {
    check_dim(dim)?;
    let weights = match descriptor {
        Detector::FockProjector(f) => {
            if f >= dim {
                return Err(Error::InvalidDimension(format!("Fock projector |{f}> outside dimension {dim}")));
            }
            let mut w = vec![0.0; dim];
            w[f] = 1.0;
            w
        }
        Detector::ApdClick => (0..dim).map(|k| if k == 0 { 0.0 } else { 1.0 }).collect(),
        Detector::Cascade { detectors, clicks } => (0..dim)
            .map(|k| cascade_click_probability(detectors, clicks, k))
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(PovmElement { weights, descriptor })
}

/// Normalized conditional state and success probability.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparationResult {
    /// `None` when the outcome has (numerically) zero probability.
    pub rho: Option<DensityOperator>,
    pub probability: f64,
}

impl PreparationResult {
    pub fn is_unnormalizable(&self) -> bool {
        self.rho.is_none()
    }
}

/// Squeezing-independent part of the conditional state for one
/// `(D(xi), eta, povm)` combination.
#[derive(Debug, Clone)]
pub struct ConditionalKernel {
    s: CMatrix,
}

impl ConditionalKernel {
    pub fn new(displacement: &TruncatedOperator, eta: f64, povm: &PovmElement) -> Result<Self> {
        let dim = displacement.dim();
        if povm.weights.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "POVM on {} levels, displacement on {dim}",
                povm.weights.len()
            )));
        }
        let channel = LossChannel::new(eta)?;
        let d = displacement.entries();
        // G = D^T W conj(D)
        let mut wd = d.mapv(|z| z.conj());
        for (m, mut row) in wd.rows_mut().into_iter().enumerate() {
            let w = povm.weights[m];
            row.mapv_inplace(|z| z * w);
        }
        let g = d.t().dot(&wd);
        let c = channel.amplitude_table(dim);
        let mut s = CMatrix::zeros((dim, dim));
        for i in 0..dim {
            for j in i..dim {
                let mut acc = ZERO;
                for k in 0..=i {
                    let f = c[k][i] * c[k][j];
                    if f != 0.0 {
                        acc += g[[i - k, j - k]] * f;
                    }
                }
                s[[i, j]] = acc;
            }
        }
        for i in 0..dim {
            s[[i, i]] = C64::new(s[[i, i]].re, 0.0);
            for j in i + 1..dim {
                s[[j, i]] = s[[i, j]].conj();
            }
        }
        Ok(Self { s })
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    /// Success probability for squeezing `gamma`.
    pub fn probability(&self, gamma: f64) -> f64 {
        let mu = tmsv_coeffs(gamma, self.dim());
        mu.iter().enumerate().map(|(i, m)| m * m * self.s[[i, i]].re).sum::<f64>().max(0.0)
    }

    pub fn prepare(&self, gamma: f64) -> Result<PreparationResult> {
        TmsvSource::new(gamma)?;
        let dim = self.dim();
        let mu = tmsv_coeffs(gamma, dim);
        let p = self.probability(gamma);
        if !(p >= MIN_PROBABILITY) {
            return Ok(PreparationResult { rho: None, probability: 0.0 });
        }
        let mut rho = CMatrix::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                rho[[i, j]] = self.s[[i, j]] * (mu[i] * mu[j] / p);
            }
        }
        let rho = DensityOperator::new_hermitian(rho)?;
        Ok(PreparationResult { rho: Some(rho), probability: p.min(1.0) })
    }
}

/// Conditional state of the full circuit; the displacement is built by TAME
/// on the working dimension `d1`.
pub fn prepare_conditional(
    gamma: f64,
    xi: C64,
    eta: f64,
    povm: &PovmElement,
    d0: usize,
    d1: usize,
) -> Result<PreparationResult> {
    let d = tame_build(xi, d1, d0)?;
    ConditionalKernel::new(&d, eta, povm)?.prepare(gamma)
}

/// Mean photon number of the measured mode after the loss channel, before
/// displacement: `eta sinh^2(gamma)` up to truncation.
pub fn lossy_marginal_mean_photons(gamma: f64, eta: f64, dim: usize) -> Result<f64> {
    let ch = LossChannel::new(eta)?;
    let mu = tmsv_coeffs(gamma, dim);
    let mut mean = 0.0;
    for i in 0..dim {
        for k in 0..=i {
            let a = ch.amplitude(k, i);
            mean += mu[i] * mu[i] * a * a * (i - k) as f64;
        }
    }
    Ok(mean)
}

/// Least `d0` whose truncation keeps all but `epsilon0` of the displaced
/// TMSV with the largest squeezing and displacement considered:
/// `1 - sum_{i,j<d0} |mu_j(gamma*) D_ij(xi*)|^2 <= epsilon0`.
///
/// `D` is the TAME matrix on `max_d0` levels with working dimension
/// `d1_probe`.
pub fn find_d0(gamma_star: f64, xi_star: C64, epsilon0: f64, max_d0: usize, d1_probe: usize) -> Result<usize> {
    if !(epsilon0 > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon0 must be positive, got {epsilon0}")));
    }
    TmsvSource::new(gamma_star)?;
    let d = tame_build(xi_star, d1_probe.max(max_d0), max_d0)?;
    let mu = tmsv_coeffs(gamma_star, max_d0);
    let w = |i: usize, j: usize| mu[j] * mu[j] * d.get(i, j).norm_sqr();
    let mut kept = 0.0;
    for n in 0..max_d0 {
        // grow the kept square by row n and column n
        for j in 0..n {
            kept += w(n, j);
        }
        for i in 0..n {
            kept += w(i, n);
        }
        kept += w(n, n);
        if 1.0 - kept <= epsilon0 {
            return Ok(n + 1);
        }
    }
    Err(Error::Config(format!(
        "no d0 <= {max_d0} reaches cutoff error {epsilon0:e} (gamma* = {gamma_star}, |xi*| = {})",
        xi_star.norm()
    )))
}
