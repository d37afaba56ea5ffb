//! Dense complex matrix exponential by scaling and squaring with diagonal
//! Padé approximants (fixed orders 3, 5, 7, 9 and 13 with the classical
//! backward-error thresholds on the 1-norm).
//!
//! No balancing is applied. Products go through `ndarray`'s `dot`, which is
//! single-threaded and bit-reproducible for a given build.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::fock::{matrix_one_norm, CMatrix, Provenance, TruncatedOperator, C64, ONE, ZERO};

/// Largest 1-norm for which the order-`m` Padé approximant is accurate to
/// unit round-off, for `m = 3, 5, 7, 9, 13`.
pub const THETA_3: f64 = 1.495_585_217_958_292e-2;
pub const THETA_5: f64 = 2.539_398_330_063_230e-1;
pub const THETA_7: f64 = 9.504_178_996_162_932e-1;
pub const THETA_9: f64 = 2.097_847_961_257_068e0;
pub const THETA_13: f64 = 5.371_920_351_148_152e0;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Padé order and number of squarings selected for a given 1-norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExpmPlan {
    pub pade_order: u32,
    pub squarings: u32,
}

pub fn plan(one_norm: f64) -> ExpmPlan {
    for (order, theta) in [(3, THETA_3), (5, THETA_5), (7, THETA_7), (9, THETA_9)] {
        if one_norm <= theta {
            return ExpmPlan { pade_order: order, squarings: 0 };
        }
    }
    ExpmPlan { pade_order: 13, squarings: squarings_for(one_norm) }
}

fn squarings_for(one_norm: f64) -> u32 {
    if one_norm <= THETA_13 {
        0
    } else {
        (one_norm / THETA_13).log2().ceil().max(0.0) as u32
    }
}

/// Number of squarings the exponential performs for a matrix of the given
/// 1-norm; the product count grows with its binary logarithm.
pub fn expm_cost_estimate(one_norm: f64) -> u32 {
    plan(one_norm).squarings
}

/// `exp(A)` for a finite square matrix. The result is tagged `PlainExpm`.
pub fn expm(a: &TruncatedOperator) -> Result<TruncatedOperator> {
    let out = expm_matrix(a.entries())?;
    TruncatedOperator::new(out, Provenance::PlainExpm)
}

pub(crate) fn expm_matrix(a: &CMatrix) -> Result<CMatrix> {
    if let Some(((row, col), _)) = a.indexed_iter().find(|(_, z)| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::NonFinite { row, col });
    }
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!("expm needs a square matrix, got {:?}", a.dim())));
    }
    let p = plan(matrix_one_norm(a));
    let x = match p.pade_order {
        3 => pade_low(a, &B3)?,
        5 => pade_low(a, &B5)?,
        7 => pade_low(a, &B7)?,
        9 => pade_low(a, &B9)?,
        _ => {
            let scale = 0.5_f64.powi(p.squarings as i32);
            let scaled = a.mapv(|z| z * scale);
            let mut x = pade13(&scaled)?;
            for _ in 0..p.squarings {
                x = x.dot(&x);
            }
            x
        }
    };
    Ok(x)
}

fn scaled_sum(terms: &[(&CMatrix, f64)], n: usize) -> CMatrix {
    let mut out = CMatrix::zeros((n, n));
    for (m, c) in terms {
        out.zip_mut_with(m, |o, &v| *o += v * *c);
    }
    out
}

fn identity_scaled(n: usize, c: f64) -> CMatrix {
    let mut m = CMatrix::zeros((n, n));
    for i in 0..n {
        m[[i, i]] = C64::new(c, 0.0);
    }
    m
}

/// Orders 3 to 9: even powers accumulated directly.
fn pade_low(a: &CMatrix, b: &[f64]) -> Result<CMatrix> {
    let n = a.nrows();
    let m = b.len() - 1;
    let a2 = a.dot(a);
    let mut powers = vec![a2];
    while 2 * (powers.len() + 1) <= m {
        let next = powers.last().unwrap().dot(&powers[0]);
        powers.push(next);
    }
    // U = A * (b_1 I + b_3 A^2 + ...), V = b_0 I + b_2 A^2 + ...
    let mut u_inner = identity_scaled(n, b[1]);
    let mut v = identity_scaled(n, b[0]);
    for (k, pw) in powers.iter().enumerate() {
        let even = 2 * (k + 1);
        v.zip_mut_with(pw, |o, &x| *o += x * b[even]);
        if even + 1 <= m {
            u_inner.zip_mut_with(pw, |o, &x| *o += x * b[even + 1]);
        }
    }
    let u = a.dot(&u_inner);
    finish_pade(&u, &v)
}

fn pade13(a: &CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    let b = &B13;
    let a2 = a.dot(a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let u_hi = scaled_sum(&[(&a6, b[13]), (&a4, b[11]), (&a2, b[9])], n);
    let mut u_inner = a6.dot(&u_hi);
    u_inner.zip_mut_with(&scaled_sum(&[(&a6, b[7]), (&a4, b[5]), (&a2, b[3])], n), |o, &x| *o += x);
    for i in 0..n {
        u_inner[[i, i]] += b[1];
    }
    let u = a.dot(&u_inner);
    let v_hi = scaled_sum(&[(&a6, b[12]), (&a4, b[10]), (&a2, b[8])], n);
    let mut v = a6.dot(&v_hi);
    v.zip_mut_with(&scaled_sum(&[(&a6, b[6]), (&a4, b[4]), (&a2, b[2])], n), |o, &x| *o += x);
    for i in 0..n {
        v[[i, i]] += b[0];
    }
    finish_pade(&u, &v)
}

/// Solves `(V - U) X = V + U`.
fn finish_pade(u: &CMatrix, v: &CMatrix) -> Result<CMatrix> {
    let p = v + u;
    let q = v - u;
    solve(q, p)
}

/// Gaussian elimination with partial pivoting, row-major scratch buffers.
pub(crate) fn solve(a: CMatrix, b: CMatrix) -> Result<CMatrix> {
    let n = a.nrows();
    let m = b.ncols();
    let mut lu: Vec<C64> = a.iter().copied().collect();
    let mut rhs: Vec<C64> = b.iter().copied().collect();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| lu[i * n + col].norm().total_cmp(&lu[j * n + col].norm()))
            .unwrap();
        let pivot = lu[pivot_row * n + col];
        if pivot == ZERO || !pivot.norm().is_finite() {
            return Err(Error::Degenerate("singular Padé denominator".into()));
        }
        if pivot_row != col {
            for k in 0..n {
                lu.swap(col * n + k, pivot_row * n + k);
            }
            for k in 0..m {
                rhs.swap(col * m + k, pivot_row * m + k);
            }
        }
        let inv = ONE / pivot;
        for row in col + 1..n {
            let factor = lu[row * n + col] * inv;
            if factor == ZERO {
                continue;
            }
            lu[row * n + col] = ZERO;
            let (top, bottom) = lu.split_at_mut(row * n);
            let src = &top[col * n + col + 1..col * n + n];
            let dst = &mut bottom[col + 1..n];
            for (d, s) in dst.iter_mut().zip(src) {
                *d -= factor * s;
            }
            let (rtop, rbottom) = rhs.split_at_mut(row * m);
            let src = &rtop[col * m..col * m + m];
            for (d, s) in rbottom[..m].iter_mut().zip(src) {
                *d -= factor * s;
            }
        }
    }
    for col in (0..n).rev() {
        let inv = ONE / lu[col * n + col];
        for k in 0..m {
            rhs[col * m + k] *= inv;
        }
        for row in 0..col {
            let factor = lu[row * n + col];
            if factor == ZERO {
                continue;
            }
            let (top, bottom) = rhs.split_at_mut(col * m);
            let src = &bottom[..m];
            for (d, s) in top[row * m..row * m + m].iter_mut().zip(src) {
                *d -= factor * s;
            }
        }
    }
    Ok(Array2::from_shape_vec((n, m), rhs).expect("shape preserved"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::max_abs_diff;

    /// Taylor series summed until the terms stop changing the result.
    fn taylor_oracle(a: &CMatrix) -> CMatrix {
        let n = a.nrows();
        let mut sum = CMatrix::eye(n);
        let mut term = CMatrix::eye(n);
        for k in 1..200 {
            term = term.dot(a).mapv(|z| z / k as f64);
            sum = sum + &term;
            if term.iter().all(|z| z.norm() == 0.0 || z.norm() < 1e-300) {
                break;
            }
        }
        sum
    }

    #[test]
    fn zero_matrix_gives_identity() {
        for dim in [1, 4, 9] {
            let z = TruncatedOperator::zeros(dim).unwrap();
            let e = expm(&z).unwrap();
            assert_eq!(e.entries(), &CMatrix::eye(dim));
            assert_eq!(e.provenance(), Provenance::PlainExpm);
        }
    }

    #[test]
    fn diagonal_matrix() {
        let lam = [ZERO, ONE, C64::new(-2.0, 3.0)];
        let e = expm(&TruncatedOperator::from_diag(&lam).unwrap()).unwrap();
        for (i, l) in lam.iter().enumerate() {
            assert!((e.get(i, i) - l.exp()).norm() < 1e-14 * l.exp().norm().max(1.0));
        }
        assert!(e.get(0, 1).norm() < 1e-15);
    }

    #[test]
    fn rotation_generator_matches_taylor() {
        let theta = 0.7;
        let mut a = CMatrix::zeros((2, 2));
        a[[0, 1]] = C64::new(-theta, 0.0);
        a[[1, 0]] = C64::new(theta, 0.0);
        let oracle = taylor_oracle(&a);
        let e = expm_matrix(&a).unwrap();
        assert!(max_abs_diff(&e, &oracle) < 1e-15);
        assert!((e[[0, 0]].re - theta.cos()).abs() < 1e-15);
        assert!((e[[1, 0]].re - theta.sin()).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = CMatrix::zeros((2, 2));
        a[[1, 1]] = C64::new(f64::NAN, 0.0);
        let op = TruncatedOperator::new(a, Provenance::Algebraic).unwrap();
        assert!(matches!(expm(&op), Err(Error::NonFinite { row: 1, col: 1 })));
    }

    #[test]
    fn cost_estimate_examples() {
        assert_eq!(expm_cost_estimate(0.0), 0);
        assert_eq!(expm_cost_estimate(THETA_3 * 0.5), 0);
        assert_eq!(expm_cost_estimate(THETA_13), 0);
        assert_eq!(expm_cost_estimate(2.0 * THETA_13), 1);
        // one-norm of the displacement generator for |xi| = 1 on 90 levels
        let norm = 89f64.sqrt() + 88f64.sqrt();
        assert!((norm - 18.815).abs() < 1e-3);
        assert_eq!(expm_cost_estimate(norm), 2);
    }

    #[test]
    fn cost_estimate_is_monotone() {
        let mut last = 0;
        for k in 0..2000 {
            let s = expm_cost_estimate(k as f64 * 0.37);
            assert!(s >= last);
            last = s;
        }
    }

    #[test]
    fn pade_orders_agree_with_taylor_for_small_norms() {
        // one matrix per Padé order branch
        for scale in [0.01, 0.2, 0.9, 2.0, 4.0] {
            let mut a = CMatrix::zeros((3, 3));
            a[[0, 1]] = C64::new(0.3, 0.1);
            a[[1, 2]] = C64::new(-0.2, 0.4);
            a[[2, 0]] = C64::new(0.1, -0.3);
            a[[1, 1]] = C64::new(0.0, 0.2);
            let norm = matrix_one_norm(&a);
            let a = a.mapv(|z| z * (scale / norm));
            let e = expm_matrix(&a).unwrap();
            let t = taylor_oracle(&a);
            assert!(max_abs_diff(&e, &t) < 1e-13, "scale {scale}");
        }
    }
}
