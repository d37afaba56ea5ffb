//! Direct constructions of the truncated displacement matrix `<m|D(xi)|n>`.
//!
//! * [`displacement_closed_form`]: the Laguerre closed form, assembled in
//!   log-magnitude space with guards against under- and overflow.
//! * [`displacement_recurrent`]: the neighbour recurrence between matrix
//!   elements. It amplifies rounding errors for large `|xi|` and high Fock
//!   indices and is kept only as a comparison subject; the circuit never uses
//!   it.
//!
//! The guard policy is conservative: the exact set of parameter combinations
//! for which the closed form stays representable is not derived here, cells
//! whose magnitude leaves the normal double range are zeroed and reported.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{check_dim, CMatrix, Provenance, TruncatedOperator, C64, ZERO};

/// Displacement amplitude `xi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Displacement(C64);

impl Displacement {
    pub fn new(xi: C64) -> Result<Self> {
        if !(xi.re.is_finite() && xi.im.is_finite()) {
            return Err(Error::InvalidParameter(format!("displacement {xi} is not finite")));
        }
        Ok(Self(xi))
    }

    pub fn amplitude(&self) -> C64 {
        self.0
    }
}

/// Cells zeroed by the closed-form guards.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuardReport {
    pub underflow_cells: Vec<(usize, usize)>,
    pub overflow_cells: Vec<(usize, usize)>,
    /// Sites where an overflowing polynomial meets an underflowing prefactor.
    /// Always also listed in both other vectors.
    pub invalid_cells: Vec<(usize, usize)>,
}

impl GuardReport {
    pub fn is_empty(&self) -> bool {
        self.underflow_cells.is_empty() && self.overflow_cells.is_empty()
    }

    /// `true` at every cell that some guard zeroed.
    pub fn mask(&self, dim: usize) -> ndarray::Array2<bool> {
        let mut m = ndarray::Array2::from_elem((dim, dim), false);
        for &(i, j) in self.underflow_cells.iter().chain(&self.overflow_cells) {
            if i < dim && j < dim {
                m[[i, j]] = true;
            }
        }
        m
    }
}

/// Associated Laguerre polynomial `L_n^(alpha)(x)` by the ascending
/// three-term recurrence in `n`.
pub fn laguerre_assoc(n: usize, alpha: i64, x: f64) -> f64 {
    let a = alpha as f64;
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + a - x;
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 + a - x) * cur - (kf + a) * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// `ln(k!)` for `k = 0..=n`.
pub(crate) fn ln_factorials(n: usize) -> Vec<f64> {
    (0..=n).map(|k| libm::lgamma(k as f64 + 1.0)).collect()
}

/// `ln C(n, k)` for `k <= n`.
pub(crate) fn ln_binomial(n: usize, k: usize) -> f64 {
    let lf = |x: usize| libm::lgamma(x as f64 + 1.0);
    lf(n) - lf(k) - lf(n - k)
}

enum Cell {
    Value(C64),
    Underflow,
    Overflow,
    Invalid,
}

fn lower_cell(m: usize, n: usize, xi: C64, ln_fact: &[f64]) -> Cell {
    let r = xi.norm();
    let x = r * r;
    let k = m - n;
    if r == 0.0 {
        return Cell::Value(if k == 0 { C64::new(1.0, 0.0) } else { ZERO });
    }
    let ln_min = f64::MIN_POSITIVE.ln();
    let ln_max = f64::MAX.ln();
    let ln_prefactor = 0.5 * (ln_fact[n] - ln_fact[m]) + k as f64 * r.ln() - 0.5 * x;
    let lag = laguerre_assoc(n, k as i64, x);
    if !lag.is_finite() {
        return if ln_prefactor < ln_min { Cell::Invalid } else { Cell::Overflow };
    }
    if lag == 0.0 {
        return Cell::Value(ZERO);
    }
    let ln_mag = ln_prefactor + lag.abs().ln();
    if ln_mag < ln_min {
        return Cell::Underflow;
    }
    if ln_mag > ln_max {
        return Cell::Overflow;
    }
    let phase = Complex64::from_polar(1.0, k as f64 * xi.arg());
    Cell::Value(phase * (lag.signum() * ln_mag.exp()))
}

/// Closed-form truncated displacement matrix with its guard report.
///
/// Lower triangle from the Laguerre formula, upper triangle from
/// `<n|D|m> = (-1)^(m-n) conj(<m|D|n>)`.
pub fn displacement_closed_form(xi: C64, dim: usize) -> Result<(TruncatedOperator, GuardReport)> {
    check_dim(dim)?;
    let xi = Displacement::new(xi)?.amplitude();
    let ln_fact = ln_factorials(dim);
    let mut g = CMatrix::zeros((dim, dim));
    let mut report = GuardReport::default();
    for n in 0..dim {
        for m in n..dim {
            let cells = if m == n { vec![(m, n)] } else { vec![(m, n), (n, m)] };
            match lower_cell(m, n, xi, &ln_fact) {
                Cell::Value(v) => {
                    g[[m, n]] = v;
                    if m != n {
                        let sign = if (m - n) % 2 == 0 { 1.0 } else { -1.0 };
                        g[[n, m]] = v.conj() * sign;
                    }
                }
                Cell::Underflow => report.underflow_cells.extend(&cells),
                Cell::Overflow => report.overflow_cells.extend(&cells),
                Cell::Invalid => {
                    report.underflow_cells.extend(&cells);
                    report.overflow_cells.extend(&cells);
                    report.invalid_cells.extend(&cells);
                }
            }
        }
    }
    Ok((TruncatedOperator::new(g, Provenance::ClosedForm)?, report))
}

/// Displacement matrix from the element recurrence, filled column by column.
///
/// Rounding errors grow exponentially with the column index for large
/// `|xi|`; this builder exists to demonstrate that failure.
pub fn displacement_recurrent(xi: C64, dim: usize) -> Result<TruncatedOperator> {
    check_dim(dim)?;
    let xi = Displacement::new(xi)?.amplitude();
    let xi_bar = xi.conj();
    let mut g = CMatrix::zeros((dim, dim));
    g[[0, 0]] = C64::new((-0.5 * xi.norm_sqr()).exp(), 0.0);
    for i in 1..dim {
        g[[i, 0]] = xi / (i as f64).sqrt() * g[[i - 1, 0]];
    }
    for j in 1..dim {
        let sj = (j as f64).sqrt();
        g[[0, j]] = -(xi_bar / sj) * g[[0, j - 1]];
        for i in 1..dim {
            g[[i, j]] = (i as f64).sqrt() / sj * g[[i - 1, j - 1]] - (xi_bar / sj) * g[[i, j - 1]];
        }
    }
    TruncatedOperator::new(g, Provenance::Recurrent)
}
