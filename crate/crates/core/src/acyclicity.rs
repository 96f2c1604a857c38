// SPDX-License-Identifier: Apache-2.0
//! Smooth acyclicity characterizations `h(B)` and an exact combinatorial DAG test.
//!
//! Both `h` functions depend on `B` only through `W = B o B` and vanish exactly
//! on matrices whose support is acyclic.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AcyclicitySpec {
    /// `tr(exp(B o B)) - p`
    TraceExpm,
    /// `-log det(sI - B o B) + p log s`, defined while `sI - B o B` is an M-matrix.
    LogDet {
        #[serde(default = "default_s")]
        s: f64,
    },
}

fn default_s() -> f64 {
    1.0
}

impl Default for AcyclicitySpec {
    fn default() -> Self {
        AcyclicitySpec::TraceExpm
    }
}

impl AcyclicitySpec {
    pub fn validate(&self) -> Result<()> {
        if let AcyclicitySpec::LogDet { s } = self {
            if !(*s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "log-det s must be > 0, got {s}"
                )));
            }
        }
        Ok(())
    }

    pub fn value(&self, b: &DMatrix<f64>) -> Result<f64> {
        self.value_grad(b).map(|(v, _)| v)
    }

    pub fn grad(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.value_grad(b).map(|(_, g)| g)
    }

    pub fn value_grad(&self, b: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let p = b.nrows();
        let w = b.component_mul(b);
        match *self {
            AcyclicitySpec::TraceExpm => {
                let e = expm(&w);
                let h = e.trace() - p as f64;
                let g = e.transpose().component_mul(b) * 2.0;
                // exp of a nonnegative matrix has trace >= p; clamp rounding noise
                Ok((h.max(0.0), g))
            }
            AcyclicitySpec::LogDet { s } => {
                let m = DMatrix::identity(p, p) * s - &w;
                let log_det = m_matrix_log_det(&m).ok_or_else(|| {
                    Error::OutOfDomain(format!("sI - B o B is not an M-matrix for s = {s}"))
                })?;
                let inv = m
                    .try_inverse()
                    .ok_or_else(|| Error::OutOfDomain("sI - B o B is singular".into()))?;
                let h = -log_det + p as f64 * s.ln();
                let g = inv.transpose().component_mul(b) * 2.0;
                Ok((h.max(0.0), g))
            }
        }
    }
}

/// Log-determinant of a Z-matrix that is a nonsingular M-matrix, via elimination
/// without pivoting; `None` when some leading principal minor is not positive.
fn m_matrix_log_det(m: &DMatrix<f64>) -> Option<f64> {
    let p = m.nrows();
    let mut a = m.clone();
    let mut log_det = 0.0;
    for k in 0..p {
        let pivot = a[(k, k)];
        if !(pivot > 0.0) || !pivot.is_finite() {
            return None;
        }
        log_det += pivot.ln();
        for i in (k + 1)..p {
            let f = a[(i, k)] / pivot;
            if f != 0.0 {
                for j in (k + 1)..p {
                    a[(i, j)] -= f * a[(k, j)];
                }
            }
        }
    }
    Some(log_det)
}

const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371_920_351_148_152;

/// Matrix exponential by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let p = a.nrows();
    let norm = one_norm(a);
    if norm == 0.0 {
        return DMatrix::identity(p, p);
    }
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = a * 2f64.powi(-squarings);
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(p, p);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let mut r = (&v - &u)
        .lu()
        .solve(&(&v + &u))
        .expect("Padé denominator is nonsingular for scaled input");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Kahn elimination on the support `{(i, j) : |B_ij| > eps, i != j}`.
pub fn is_dag(b: &DMatrix<f64>, eps: f64) -> bool {
    topological_order(b, eps).is_some()
}

/// Topological order of the thresholded support, smallest index first among ties.
/// Self-loops count as cycles.
pub(crate) fn topological_order(b: &DMatrix<f64>, eps: f64) -> Option<Vec<usize>> {
    let p = b.nrows();
    if (0..p).any(|i| b[(i, i)].abs() > eps) {
        return None;
    }
    let mut indeg = vec![0usize; p];
    for j in 0..p {
        for i in 0..p {
            if i != j && b[(i, j)].abs() > eps {
                indeg[j] += 1;
            }
        }
    }
    let mut ready: std::collections::BTreeSet<usize> = (0..p).filter(|&j| indeg[j] == 0).collect();
    let mut order = Vec::with_capacity(p);
    while let Some(&i) = ready.iter().next() {
        ready.remove(&i);
        order.push(i);
        for j in 0..p {
            if j != i && b[(i, j)].abs() > eps {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.insert(j);
                }
            }
        }
    }
    (order.len() == p).then_some(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_matrix() {
        let z = DMatrix::zeros(4, 4);
        for spec in [AcyclicitySpec::TraceExpm, AcyclicitySpec::LogDet { s: 1.0 }] {
            let (h, g) = spec.value_grad(&z).unwrap();
            assert_eq!(h, 0.0);
            assert_eq!(g, DMatrix::zeros(4, 4));
        }
    }

    #[test]
    fn two_cycle_trace_expm() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let h = AcyclicitySpec::TraceExpm.value(&b).unwrap();
        assert_abs_diff_eq!(h, 2.0 * 1f64.cosh() - 2.0, epsilon = 1e-13);
        assert!(!is_dag(&b, 0.0));
    }

    #[test]
    fn permuted_triangular_is_zero() {
        let b = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.3, 0.0, -0.7, 0.4, 0.0, 0.0]);
        assert!(is_dag(&b, 0.0));
        assert!(AcyclicitySpec::TraceExpm.value(&b).unwrap() < 1e-12);
        assert!(AcyclicitySpec::LogDet { s: 1.0 }.value(&b).unwrap() < 1e-12);
    }

    #[test]
    fn log_det_domain() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.5, 1.5, 0.0]);
        assert!(matches!(
            AcyclicitySpec::LogDet { s: 1.0 }.value(&b),
            Err(Error::OutOfDomain(_))
        ));
        assert!(AcyclicitySpec::LogDet { s: 3.0 }.value(&b).is_ok());
    }

    #[test]
    fn fork_is_dag() {
        let mut b = DMatrix::zeros(3, 3);
        b[(0, 1)] = 1.0;
        b[(0, 2)] = 1.0;
        assert!(is_dag(&b, 0.0));
        assert_eq!(topological_order(&b, 0.0).unwrap()[0], 0);
    }

    #[test]
    fn expm_matches_series() {
        let a = DMatrix::from_row_slice(3, 3, &[0.1, 2.0, 0.0, 0.3, 0.2, 1.5, 4.0, 0.0, 0.5]);
        // truncated Taylor series after scaling by 2^-6
        let scaled = &a / 64.0;
        let mut term = DMatrix::identity(3, 3);
        let mut sum = term.clone();
        for k in 1..30 {
            term = &term * &scaled / k as f64;
            sum += &term;
        }
        for _ in 0..6 {
            sum = &sum * &sum;
        }
        let e = expm(&a);
        for (x, y) in e.iter().zip(sum.iter()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{x} vs {y}");
        }
    }
}
