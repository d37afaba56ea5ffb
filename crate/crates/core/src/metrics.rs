//! Figures of merit for prepared states: the cubic nonlinear-squeezing
//! variance and the fidelity with qubit-like superpositions of `|0>` and `|1>`.
//!
//! Quadratures satisfy `[X, P] = i` with
//!
//! ```text
//! X = (a - a^dag) / (i sqrt 2),   P = -(a + a^dag) / sqrt 2,
//! ```
//!
//! i.e. the textbook pair rotated by a quarter turn in phase space. Moments
//! are expectations of normal-ordered ladder monomials read directly from the
//! density matrix, so they are exact for the stored (zero-padded) state.

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{DensityOperator, PureState, C64, ZERO};

/// Minimum of the unnormalized variance over Gaussian states.
pub const LAMBDA_G: f64 = 0.75;
/// Population in the top [`CUTOFF_BIAS_LEVELS`] levels above which moments
/// are flagged as biased by the truncation.
pub const CUTOFF_BIAS_THRESHOLD: f64 = 1e-8;
pub const CUTOFF_BIAS_LEVELS: usize = 4;

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Linear form `alpha a + beta a^dag`.
#[derive(Debug, Clone, Copy)]
struct Linear {
    alpha: C64,
    beta: C64,
}

const X_FORM: Linear = Linear { alpha: C64::new(0.0, -SQRT_HALF), beta: C64::new(0.0, SQRT_HALF) };
const P_FORM: Linear = Linear { alpha: C64::new(-SQRT_HALF, 0.0), beta: C64::new(-SQRT_HALF, 0.0) };

/// `<a^dag^p a^q>` for a state stored on `dim` levels.
pub fn ladder_moment(rho: &DensityOperator, p: usize, q: usize) -> C64 {
    let dim = rho.dim();
    let mut acc = ZERO;
    for n in q..dim {
        let m = n - q + p;
        if m >= dim {
            break;
        }
        // a^dag^p a^q |n> = sqrt(n!/(n-q)!) sqrt(m!/(n-q)!) |m>
        let mut c = 1.0;
        for j in n - q + 1..=n {
            c *= j as f64;
        }
        for j in n - q + 1..=m {
            c *= j as f64;
        }
        acc += rho.get(n, m) * c.sqrt();
    }
    acc
}

/// Normal-ordered expansion of a word in `a` (false) and `a^dag` (true),
/// accumulated into `out[p][q]`.
fn normal_order(word: &mut Vec<bool>, coeff: C64, out: &mut [[C64; 5]; 5]) {
    if let Some(i) = word.windows(2).position(|w| !w[0] && w[1]) {
        // a a^dag = a^dag a + 1
        let mut swapped = word.clone();
        swapped.swap(i, i + 1);
        normal_order(&mut swapped, coeff, out);
        word.drain(i..i + 2);
        normal_order(word, coeff, out);
    } else {
        let p = word.iter().filter(|&&b| b).count();
        out[p][word.len() - p] += coeff;
    }
}

/// Expectation of a product of linear forms.
fn product_moment(rho: &DensityOperator, factors: &[Linear]) -> f64 {
    let mut table = [[ZERO; 5]; 5];
    for mask in 0..1usize << factors.len() {
        let mut word = Vec::with_capacity(factors.len());
        let mut coeff = C64::new(1.0, 0.0);
        for (k, f) in factors.iter().enumerate() {
            let dag = mask >> k & 1 == 1;
            coeff *= if dag { f.beta } else { f.alpha };
            word.push(dag);
        }
        if coeff != ZERO {
            normal_order(&mut word, coeff, &mut table);
        }
    }
    let mut acc = ZERO;
    for (p, row) in table.iter().enumerate() {
        for (q, &c) in row.iter().enumerate() {
            if c != ZERO {
                acc += c * ladder_moment(rho, p, q);
            }
        }
    }
    acc.re
}

/// Quadrature moments entering the nonlinear variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct QuadratureMoments {
    pub mean_P: f64,
    pub mean_X2: f64,
    pub mean_P2: f64,
    pub mean_X4: f64,
    /// `<P X^2 + X^2 P>`.
    pub mean_sym_PX2: f64,
}

pub fn quadrature_moments(rho: &DensityOperator) -> QuadratureMoments {
    let (x, p) = (X_FORM, P_FORM);
    QuadratureMoments {
        mean_P: product_moment(rho, &[p]),
        mean_X2: product_moment(rho, &[x, x]),
        mean_P2: product_moment(rho, &[p, p]),
        mean_X4: product_moment(rho, &[x, x, x, x]),
        mean_sym_PX2: product_moment(rho, &[p, x, x]) + product_moment(rho, &[x, x, p]),
    }
}

/// Coefficients of `V(mu) = A mu^2 + B mu^-4 + C mu^-1`, the variance of
/// `Y = mu P - mu^-2 X^2 / sqrt 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl VarianceCoefficients {
    pub fn from_moments(m: &QuadratureMoments) -> Self {
        Self {
            a: m.mean_P2 - m.mean_P * m.mean_P,
            b: 0.5 * (m.mean_X4 - m.mean_X2 * m.mean_X2),
            c: -SQRT_HALF * (m.mean_sym_PX2 - 2.0 * m.mean_P * m.mean_X2),
        }
    }

    pub fn eval(&self, mu: f64) -> f64 {
        self.a * mu * mu + self.b / mu.powi(4) + self.c / mu
    }

    /// Global minimizer over real `mu != 0` and the minimum.
    pub fn minimize(&self) -> Result<(f64, f64)> {
        if !(self.a > 0.0) {
            return Err(Error::Degenerate(format!("quadrature P has variance {}", self.a)));
        }
        // stationary points: 2A t^2 - C t - 4B = 0 with t = mu^3
        let disc = (self.c * self.c + 32.0 * self.a * self.b).max(0.0).sqrt();
        [(self.c + disc) / (4.0 * self.a), (self.c - disc) / (4.0 * self.a)]
            .into_iter()
            .filter(|t| *t != 0.0 && t.is_finite())
            .map(|t| {
                let mu = t.cbrt();
                (self.eval(mu), mu)
            })
            .min_by(|x, y| x.0.total_cmp(&y.0))
            .ok_or_else(|| Error::Degenerate("no finite stationary point of the variance".into()))
    }
}

/// `M(rho) = min_mu V(mu) / LAMBDA_G` and the minimizing `mu`.
pub fn nonlinear_variance(rho: &DensityOperator) -> Result<(f64, f64)> {
    let coeffs = VarianceCoefficients::from_moments(&quadrature_moments(rho));
    let (v, mu) = coeffs.minimize()?;
    Ok((v / LAMBDA_G, mu))
}

/// Whether the population near the truncation edge makes moments unreliable.
pub fn cutoff_bias(rho: &DensityOperator) -> bool {
    rho.tail_population(rho.dim().saturating_sub(CUTOFF_BIAS_LEVELS)) > CUTOFF_BIAS_THRESHOLD
}

/// `<theta|rho|theta>` for `|theta> = cos(theta)|0> + sin(theta)|1>`.
pub fn fidelity_qubit(rho: &DensityOperator, theta: f64) -> Result<f64> {
    if rho.dim() < 2 {
        return Err(Error::InvalidDimension(format!("qubit fidelity needs dim >= 2, got {}", rho.dim())));
    }
    let (s, c) = theta.sin_cos();
    Ok(c * c * rho.get(0, 0).re + s * s * rho.get(1, 1).re + 2.0 * c * s * rho.get(0, 1).re)
}

/// Search settings for [`optimal_cubic_state`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicSearch {
    pub starts: usize,
    pub seed: u64,
    /// Optimize complex amplitudes instead of real ones.
    pub complex: bool,
    pub max_iters: u64,
}

impl Default for CubicSearch {
    fn default() -> Self {
        Self { starts: 32, seed: 0x5eed, complex: false, max_iters: 20_000 }
    }
}

struct CubicCost {
    v: usize,
    complex: bool,
}

impl CubicCost {
    fn state(&self, x: &[f64]) -> Option<PureState> {
        let coeffs: Vec<C64> = if self.complex {
            (0..self.v).map(|i| C64::new(x[i], x[self.v + i])).collect()
        } else {
            x.iter().map(|&r| C64::new(r, 0.0)).collect()
        };
        let norm = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 1e-150 && norm.is_finite()) {
            return None;
        }
        PureState::new(coeffs.into_iter().map(|c| c / norm).collect()).ok()
    }

    fn m(&self, x: &[f64]) -> f64 {
        self.state(x)
            .and_then(|s| s.to_density().ok())
            .and_then(|rho| nonlinear_variance(&rho).ok())
            .map_or(f64::INFINITY, |(m, _)| m)
    }
}

impl CostFunction for CubicCost {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.m(x))
    }
}

fn local_search(cost: &CubicCost, start: Vec<f64>, max_iters: u64) -> Option<(Vec<f64>, f64)> {
    let mut best = start;
    let mut best_m = cost.m(&best);
    // restarting Nelder-Mead from the incumbent until it stops improving
    for _ in 0..8 {
        let n = best.len();
        let mut simplex = vec![best.clone()];
        for i in 0..n {
            let mut p = best.clone();
            p[i] += 0.1;
            simplex.push(p);
        }
        let solver = NelderMead::new(simplex).with_sd_tolerance(1e-14).ok()?;
        let cost_fn = CubicCost { v: cost.v, complex: cost.complex };
        let res = Executor::new(cost_fn, solver).configure(|s| s.max_iters(max_iters)).run().ok()?;
        let state = res.state();
        let (Some(x), m) = (state.best_param.clone(), state.best_cost) else { return None };
        let improved = best_m - m > 1e-13;
        if m < best_m {
            best = x;
            best_m = m;
        }
        if !improved {
            break;
        }
    }
    Some((best, best_m))
}

/// Best-found pure state on the first `v` Fock levels minimizing the
/// nonlinear variance, by multi-start local search.
pub fn optimal_cubic_state(v: usize, search: &CubicSearch) -> Result<(PureState, f64)> {
    if v == 0 {
        return Err(Error::InvalidDimension("cubic state needs v >= 1".into()));
    }
    if search.starts == 0 {
        return Err(Error::Config("cubic search needs at least one start".into()));
    }
    if v == 1 {
        let s = PureState::fock(0, 1)?;
        let (m, _) = nonlinear_variance(&s.to_density()?)?;
        return Ok((s, m));
    }
    let cost = CubicCost { v, complex: search.complex };
    let n = if search.complex { 2 * v } else { v };
    let best = (0..search.starts)
        .into_par_iter()
        .filter_map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(search.seed.wrapping_add(k as u64));
            let start: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            local_search(&cost, start, search.max_iters).map(|(x, m)| (k, x, m))
        })
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))
        .ok_or_else(|| Error::Degenerate("cubic search found no finite state".into()))?;
    let state = cost.state(&best.1).ok_or_else(|| Error::Degenerate("cubic optimum collapsed".into()))?;
    Ok((state, best.2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{make_annihilation, CMatrix};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    fn fock_rho(n: usize, dim: usize) -> DensityOperator {
        PureState::fock(n, dim).unwrap().to_density().unwrap()
    }

    fn random_rho(dim: usize, rank: usize, seed: u64) -> DensityOperator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = CMatrix::zeros((dim, dim));
        for _ in 0..rank {
            let v: Vec<C64> = (0..dim).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            for i in 0..dim {
                for j in 0..dim {
                    m[[i, j]] += v[i] * v[j].conj();
                }
            }
        }
        let tr: f64 = m.diag().iter().map(|z| z.re).sum();
        DensityOperator::new(m.mapv(|z| z / tr)).unwrap()
    }

    /// Moments from dense quadrature matrices on a larger space.
    fn dense_moments(rho: &DensityOperator) -> QuadratureMoments {
        let big = rho.dim() + 6;
        let r = rho.embed(big).unwrap();
        let a = make_annihilation(big).unwrap().into_entries();
        let ad = a.t().mapv(|z| z.conj());
        let x = (&a - &ad).mapv(|z| z / C64::new(0.0, 2f64.sqrt()));
        let p = (&a + &ad).mapv(|z| -z / 2f64.sqrt());
        let ev = |o: &CMatrix| r.entries().dot(o).diag().iter().sum::<C64>().re;
        let x2 = x.dot(&x);
        QuadratureMoments {
            mean_P: ev(&p),
            mean_X2: ev(&x2),
            mean_P2: ev(&p.dot(&p)),
            mean_X4: ev(&x2.dot(&x2)),
            mean_sym_PX2: ev(&(p.dot(&x2) + x2.dot(&p))),
        }
    }

    #[test]
    fn normal_ordering_of_small_words() {
        let mut t = [[ZERO; 5]; 5];
        // a a^dag a^dag = a^dag^2 a + 2 a^dag
        normal_order(&mut vec![false, true, true], C64::new(1.0, 0.0), &mut t);
        assert_eq!(t[2][1], C64::new(1.0, 0.0));
        assert_eq!(t[1][0], C64::new(2.0, 0.0));
    }

    #[test]
    fn vacuum_moments() {
        let m = quadrature_moments(&fock_rho(0, 5));
        assert_close(m.mean_P, 0.0, 1e-15);
        assert_close(m.mean_X2, 0.5, 1e-15);
        assert_close(m.mean_P2, 0.5, 1e-15);
        assert_close(m.mean_X4, 0.75, 1e-15);
        assert_close(m.mean_sym_PX2, 0.0, 1e-15);
    }

    #[test]
    fn single_photon_moments() {
        let m = quadrature_moments(&fock_rho(1, 3));
        assert_close(m.mean_P, 0.0, 1e-15);
        assert_close(m.mean_X2, 1.5, 1e-14);
        assert_close(m.mean_P2, 1.5, 1e-14);
    }

    #[test]
    fn moments_match_dense_operators() {
        for (k, &dim) in [2usize, 5, 17, 40].iter().enumerate() {
            let rho = random_rho(dim, 3, 11 + k as u64);
            let got = quadrature_moments(&rho);
            let want = dense_moments(&rho);
            assert_close(got.mean_P, want.mean_P, 1e-10);
            assert_close(got.mean_X2, want.mean_X2, 1e-10);
            assert_close(got.mean_P2, want.mean_P2, 1e-10);
            assert_close(got.mean_X4, want.mean_X4, 1e-10);
            assert_close(got.mean_sym_PX2, want.mean_sym_PX2, 1e-10);
        }
    }

    #[test]
    fn vacuum_variance_is_gaussian_bound() {
        let (m, mu) = nonlinear_variance(&fock_rho(0, 4)).unwrap();
        assert_close(m, 1.0, 1e-12);
        assert_close(mu.abs(), 1.0, 1e-12);
    }

    #[test]
    fn degenerate_p_variance_is_rejected() {
        let c = VarianceCoefficients { a: 0.0, b: 1.0, c: 0.0 };
        assert!(c.minimize().is_err());
    }

    #[test]
    fn negative_mu_branch_is_used() {
        let c = VarianceCoefficients { a: 1.0, b: 0.1, c: 3.0 };
        let (v, mu) = c.minimize().unwrap();
        assert!(mu < 0.0);
        assert!(v < c.eval(mu.abs()));
    }

    #[test]
    fn reflection_leaves_variance_unchanged() {
        for seed in 0..10 {
            let rho = random_rho(12, 2, 100 + seed);
            let (m, _) = nonlinear_variance(&rho).unwrap();
            let conj = DensityOperator::new(rho.entries().mapv(|z| z.conj())).unwrap();
            let parity = DensityOperator::new(CMatrix::from_shape_fn((12, 12), |(i, j)| {
                if (i + j) % 2 == 0 { rho.get(i, j) } else { -rho.get(i, j) }
            }))
            .unwrap();
            assert_close(nonlinear_variance(&conj).unwrap().0, m, 1e-10);
            assert_close(nonlinear_variance(&parity).unwrap().0, m, 1e-10);
        }
    }

    #[test]
    fn fidelity_examples() {
        let t = 0.4f64;
        let s = PureState::new(vec![C64::new(t.cos(), 0.0), C64::new(t.sin(), 0.0)]).unwrap();
        assert_close(fidelity_qubit(&s.to_density().unwrap(), t).unwrap(), 1.0, 1e-15);
        assert_close(fidelity_qubit(&fock_rho(0, 2), std::f64::consts::FRAC_PI_2).unwrap(), 0.0, 1e-15);
        let mut m = CMatrix::zeros((70, 70));
        m[[0, 0]] = C64::new(0.5, 0.0);
        m[[1, 1]] = C64::new(0.5, 0.0);
        let mixed = DensityOperator::new(m).unwrap();
        for th in [0.0, 0.3, 1.0, 2.5] {
            assert_close(fidelity_qubit(&mixed, th).unwrap(), 0.5, 1e-15);
        }
        assert!(fidelity_qubit(&fock_rho(0, 1), 0.0).is_err());
    }

    #[test]
    fn fidelity_is_linear() {
        let r1 = random_rho(6, 2, 1);
        let r2 = random_rho(6, 3, 2);
        let alpha = 0.3;
        let mix = DensityOperator::new(r1.entries() * C64::new(alpha, 0.0) + r2.entries() * C64::new(1.0 - alpha, 0.0)).unwrap();
        let th = 1.1;
        let lhs = fidelity_qubit(&mix, th).unwrap();
        let rhs = alpha * fidelity_qubit(&r1, th).unwrap() + (1.0 - alpha) * fidelity_qubit(&r2, th).unwrap();
        assert_close(lhs, rhs, 1e-12);
    }

    #[test]
    fn cutoff_bias_flags_edge_population() {
        assert!(!cutoff_bias(&fock_rho(0, 10)));
        assert!(cutoff_bias(&fock_rho(8, 10)));
    }

    #[test]
    fn cubic_state_on_one_level_is_vacuum() {
        let (s, m) = optimal_cubic_state(1, &CubicSearch::default()).unwrap();
        assert_eq!(s.dim(), 1);
        assert_close(m, 1.0, 1e-12);
    }

    #[test]
    fn cubic_states_beat_gaussian_bound() {
        let search = CubicSearch { starts: 8, ..CubicSearch::default() };
        let (_, m2) = optimal_cubic_state(2, &search).unwrap();
        let (s3, m3) = optimal_cubic_state(3, &search).unwrap();
        assert!(m2 <= 1.0 + 1e-9);
        assert!(m3 <= m2 + 1e-9);
        assert_close(s3.norm(), 1.0, 1e-12);
        let (m_check, _) = nonlinear_variance(&s3.to_density().unwrap()).unwrap();
        assert_close(m_check, m3, 1e-12);
    }
}
