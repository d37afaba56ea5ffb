//! Truncated Fock-space linear algebra.
//!
//! Operators on the `F`-dimensional truncated space are dense complex `F x F`
//! matrices indexed by photon number. Two-mode operators use the Kronecker
//! ordering with mode 1 as the slow index: basis element `|i>|j>` sits at
//! `i * d2 + j`.

use ndarray::{s, Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = Array2<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Maximum element-wise deviation from Hermiticity accepted for a density operator.
pub const HERMITIAN_TOL: f64 = 1e-12;
/// Eigenvalues down to `-PSD_TOL` are accepted as rounding noise.
pub const PSD_TOL: f64 = 1e-10;
/// Slack on the unit bound for traces and state norms.
pub const NORM_TOL: f64 = 1e-12;

/// How a truncated operator was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    ClosedForm,
    Recurrent,
    Tame,
    PlainExpm,
    Algebraic,
}

/// Dense square matrix on a truncated Fock space.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedOperator {
    entries: CMatrix,
    provenance: Provenance,
}

impl TruncatedOperator {
    pub fn new(entries: CMatrix, provenance: Provenance) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c {
            return Err(Error::DimensionMismatch(format!("operator must be square, got {r}x{c}")));
        }
        if r == 0 {
            return Err(Error::InvalidDimension("operator dimension must be at least 1".into()));
        }
        Ok(Self { entries, provenance })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { entries: CMatrix::eye(dim), provenance: Provenance::Algebraic })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Self { entries: CMatrix::zeros((dim, dim)), provenance: Provenance::Algebraic })
    }

    pub fn from_diag(diag: &[C64]) -> Result<Self> {
        check_dim(diag.len())?;
        Ok(Self {
            entries: CMatrix::from_diag(&Array1::from(diag.to_vec())),
            provenance: Provenance::Algebraic,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries[[row, col]]
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn adjoint(&self) -> Self {
        Self {
            entries: self.entries.t().mapv(|z| z.conj()),
            provenance: self.provenance,
        }
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.dim() != rhs.dim() {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {0}x{0} by {1}x{1}",
                self.dim(),
                rhs.dim()
            )));
        }
        Ok(Self { entries: self.entries.dot(&rhs.entries), provenance: Provenance::Algebraic })
    }

    /// Top-left `dim x dim` block: truncation to a smaller Fock space.
    pub fn truncate(&self, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        if dim > self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "cannot truncate a {0}x{0} operator to {dim}",
                self.dim()
            )));
        }
        Ok(Self {
            entries: self.entries.slice(s![..dim, ..dim]).to_owned(),
            provenance: self.provenance,
        })
    }

    pub fn trace(&self) -> C64 {
        self.entries.diag().sum()
    }

    /// `max_ij |G_ij|`.
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.entries)
    }

    /// `max_ij |G_ij - H_ij|`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "cannot compare {} with {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(max_abs_diff(&self.entries, &other.entries))
    }
}

pub(crate) fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 {
        Err(Error::InvalidDimension("dimension must be at least 1".into()))
    } else {
        Ok(())
    }
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

pub(crate) fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).fold(0.0_f64, |acc, (x, y)| acc.max((x - y).norm()))
}

/// Truncated annihilation operator: `a[i][i+1] = sqrt(i+1)`.
pub fn make_annihilation(dim: usize) -> Result<TruncatedOperator> {
    check_dim(dim)?;
    let mut m = CMatrix::zeros((dim, dim));
    for i in 0..dim - 1 {
        m[[i, i + 1]] = C64::new(((i + 1) as f64).sqrt(), 0.0);
    }
    TruncatedOperator::new(m, Provenance::Algebraic)
}

/// Truncated creation operator, the adjoint of [`make_annihilation`].
pub fn make_creation(dim: usize) -> Result<TruncatedOperator> {
    check_dim(dim)?;
    let mut m = CMatrix::zeros((dim, dim));
    for i in 0..dim - 1 {
        m[[i + 1, i]] = C64::new(((i + 1) as f64).sqrt(), 0.0);
    }
    TruncatedOperator::new(m, Provenance::Algebraic)
}

/// Kronecker product with the first factor as the slow index.
pub fn kron(a: &TruncatedOperator, b: &TruncatedOperator) -> TruncatedOperator {
    TruncatedOperator {
        entries: kron_matrix(a.entries(), b.entries()),
        provenance: Provenance::Algebraic,
    }
}

pub(crate) fn kron_matrix(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = CMatrix::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            if aij == ZERO {
                continue;
            }
            let mut block = out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
            block.zip_mut_with(b, |o, &bv| *o = aij * bv);
        }
    }
    out
}

/// 2-norm of every column.
pub fn column_norms(g: &TruncatedOperator) -> Vec<f64> {
    g.entries()
        .columns()
        .into_iter()
        .map(|col| col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .collect()
}

/// Matrix 1-norm: maximum absolute column sum.
pub fn one_norm(g: &TruncatedOperator) -> f64 {
    matrix_one_norm(g.entries())
}

pub(crate) fn matrix_one_norm(m: &CMatrix) -> f64 {
    m.columns()
        .into_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Cutoff error of a truncation to `f` levels: `1 - sum_{i<f} |c_i|^2`.
///
/// The coefficients are the leading Fock amplitudes of a normalized state;
/// rounding below zero is clamped.
pub fn cutoff_error(coeffs: &[C64], f: usize) -> f64 {
    let kept: f64 = coeffs.iter().take(f).map(|c| c.norm_sqr()).sum();
    (1.0 - kept).max(0.0)
}

/// Which mode of a two-mode operator to keep in [`partial_trace`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    First,
    Second,
}

/// Complex coefficient vector on a truncated Fock basis. Sub-normalized
/// vectors are allowed since truncation drops weight.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    coeffs: Array1<C64>,
}

impl PureState {
    pub fn new(coeffs: Vec<C64>) -> Result<Self> {
        check_dim(coeffs.len())?;
        let norm: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || norm > 1.0 + NORM_TOL {
            return Err(Error::InvalidParameter(format!("state norm {norm} exceeds 1")));
        }
        Ok(Self { coeffs: Array1::from(coeffs) })
    }

    /// Fock state `|n>` on a `dim`-level space.
    pub fn fock(n: usize, dim: usize) -> Result<Self> {
        if n >= dim {
            return Err(Error::InvalidDimension(format!("Fock level {n} outside dimension {dim}")));
        }
        let mut c = vec![ZERO; dim];
        c[n] = ONE;
        Self::new(c)
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &Array1<C64> {
        &self.coeffs
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `|psi><psi|`.
    pub fn to_density(&self) -> Result<DensityOperator> {
        let n = self.dim();
        let mut m = CMatrix::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                m[[i, j]] = self.coeffs[i] * self.coeffs[j].conj();
            }
        }
        DensityOperator::new(m)
    }
}

/// Hermitian positive-semidefinite matrix with `0 < trace <= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    entries: CMatrix,
}

impl DensityOperator {
    /// Validates Hermiticity, trace and positivity (within [`HERMITIAN_TOL`],
    /// [`NORM_TOL`] and [`PSD_TOL`]).
    pub fn new(entries: CMatrix) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c {
            return Err(Error::DimensionMismatch(format!("density must be square, got {r}x{c}")));
        }
        check_dim(r)?;
        if let Some((row, col)) = first_non_finite(&entries) {
            return Err(Error::NonFinite { row, col });
        }
        let herm = hermitian_deviation(&entries);
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidParameter(format!("density not Hermitian (deviation {herm:e})")));
        }
        let tr = entries.diag().iter().map(|z| z.re).sum::<f64>();
        if !(tr > 0.0 && tr <= 1.0 + NORM_TOL) {
            return Err(Error::InvalidParameter(format!("density trace {tr} outside (0, 1]")));
        }
        if !is_psd(&entries, PSD_TOL) {
            return Err(Error::InvalidParameter("density has eigenvalue below -1e-10".into()));
        }
        Ok(Self { entries })
    }

    /// Skips the positivity check; used where positivity holds by construction
    /// (sums of outer products).
    pub(crate) fn new_hermitian(entries: CMatrix) -> Result<Self> {
        let herm = hermitian_deviation(&entries);
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidParameter(format!("density not Hermitian (deviation {herm:e})")));
        }
        Ok(Self { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries[[row, col]]
    }

    pub fn trace(&self) -> f64 {
        self.entries.diag().iter().map(|z| z.re).sum()
    }

    pub fn purity(&self) -> f64 {
        // tr(rho^2) = sum |rho_ij|^2 for Hermitian rho
        self.entries.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Result<Self> {
        let tr = self.trace();
        Self::new(self.entries.mapv(|z| z / tr))
    }

    /// Population in Fock levels `>= from`.
    pub fn tail_population(&self, from: usize) -> f64 {
        (from..self.dim()).map(|i| self.entries[[i, i]].re).sum()
    }

    /// Zero-padded copy on a larger space.
    pub fn embed(&self, dim: usize) -> Result<Self> {
        if dim < self.dim() {
            return Err(Error::DimensionMismatch(format!("cannot embed {} into {dim}", self.dim())));
        }
        let mut m = CMatrix::zeros((dim, dim));
        let d = self.dim();
        m.slice_mut(s![..d, ..d]).assign(&self.entries);
        Ok(Self { entries: m })
    }
}

fn first_non_finite(m: &CMatrix) -> Option<(usize, usize)> {
    m.indexed_iter()
        .find(|(_, z)| !(z.re.is_finite() && z.im.is_finite()))
        .map(|(idx, _)| idx)
}

pub(crate) fn hermitian_deviation(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut dev = 0.0_f64;
    for i in 0..n {
        for j in i..n {
            dev = dev.max((m[[i, j]] - m[[j, i]].conj()).norm());
        }
    }
    dev
}

/// `m + tol * I` admits a Cholesky factorization iff every eigenvalue of the
/// Hermitian `m` exceeds `-tol`.
fn is_psd(m: &CMatrix, tol: f64) -> bool {
    let n = m.nrows();
    let mut l = CMatrix::zeros((n, n));
    for j in 0..n {
        let mut diag = m[[j, j]].re + tol;
        for k in 0..j {
            diag -= l[[j, k]].norm_sqr();
        }
        if diag <= 0.0 || !diag.is_finite() {
            return false;
        }
        let ljj = diag.sqrt();
        l[[j, j]] = C64::new(ljj, 0.0);
        for i in j + 1..n {
            let mut acc = m[[i, j]];
            for k in 0..j {
                acc -= l[[i, k]] * l[[j, k]].conj();
            }
            l[[i, j]] = acc / ljj;
        }
    }
    true
}

/// Partial trace of a two-mode density operator with mode dimensions `dims`.
pub fn partial_trace(rho: &DensityOperator, keep: Mode, dims: (usize, usize)) -> Result<DensityOperator> {
    let (d1, d2) = dims;
    if d1 == 0 || d2 == 0 || rho.dim() != d1 * d2 {
        return Err(Error::DimensionMismatch(format!(
            "two-mode density of dimension {} does not factor as {d1} x {d2}",
            rho.dim()
        )));
    }
    let m = rho.entries();
    let out = match keep {
        Mode::First => {
            let mut r = CMatrix::zeros((d1, d1));
            for i in 0..d1 {
                for j in 0..d1 {
                    r[[i, j]] = (0..d2).map(|k| m[[i * d2 + k, j * d2 + k]]).sum();
                }
            }
            r
        }
        Mode::Second => {
            let mut r = CMatrix::zeros((d2, d2));
            for i in 0..d2 {
                for j in 0..d2 {
                    r[[i, j]] = (0..d1).map(|k| m[[k * d2 + i, k * d2 + j]]).sum();
                }
            }
            r
        }
    };
    DensityOperator::new(out)
}
