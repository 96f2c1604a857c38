// SPDX-License-Identifier: Apache-2.0
//! Sparsity penalties on edge weights.
//!
//! At the kinks (`t = 0` for the L1 family, branch boundaries elsewhere) the
//! derivative is reported as the one-sided value of the flatter branch, and as
//! `0` at `t = 0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyFamily {
    QuasiMcp,
    Mcp,
    Scad,
    L1,
    L0,
}

impl PenaltyFamily {
    pub fn is_differentiable(self) -> bool {
        !matches!(self, PenaltyFamily::L0)
    }
}

/// A penalty family with its hyperparameters: `lambda`, and `shape`
/// (`delta` for quasi-MCP, `a` for MCP / SCAD, unused otherwise).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    pub lambda: f64,
    #[serde(default)]
    pub shape: f64,
}

impl PenaltySpec {
    pub fn new(family: PenaltyFamily, lambda: f64, shape: f64) -> Result<Self> {
        let spec = Self {
            family,
            lambda,
            shape,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn quasi_mcp(lambda: f64, delta: f64) -> Result<Self> {
        Self::new(PenaltyFamily::QuasiMcp, lambda, delta)
    }

    pub fn mcp(lambda: f64, a: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Mcp, lambda, a)
    }

    pub fn scad(lambda: f64, a: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Scad, lambda, a)
    }

    pub fn l1(lambda: f64) -> Result<Self> {
        Self::new(PenaltyFamily::L1, lambda, 0.0)
    }

    pub fn l0(lambda: f64) -> Result<Self> {
        Self::new(PenaltyFamily::L0, lambda, 0.0)
    }

    pub fn none() -> Self {
        Self {
            family: PenaltyFamily::L1,
            lambda: 0.0,
            shape: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParams(format!(
                "penalty lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        match self.family {
            PenaltyFamily::QuasiMcp | PenaltyFamily::Mcp => {
                if !(self.shape > 0.0) || !self.shape.is_finite() {
                    return Err(Error::InvalidParams(format!(
                        "penalty shape must be > 0, got {}",
                        self.shape
                    )));
                }
            }
            PenaltyFamily::Scad => {
                if !(self.shape > 1.0) || !self.shape.is_finite() {
                    return Err(Error::InvalidParams(format!(
                        "SCAD requires a > 1, got {}",
                        self.shape
                    )));
                }
            }
            PenaltyFamily::L1 | PenaltyFamily::L0 => {}
        }
        Ok(())
    }

    /// Same family and shape with lambda and shape multiplied by `factor`
    /// (shape only for quasi-MCP, the family whose width is a free scale).
    pub fn decayed(&self, factor: f64) -> Self {
        let shape = match self.family {
            PenaltyFamily::QuasiMcp => self.shape * factor,
            _ => self.shape,
        };
        Self {
            family: self.family,
            lambda: self.lambda * factor,
            shape,
        }
    }

    /// Magnitude above which the penalty is constant, if it has a plateau.
    pub fn plateau_threshold(&self) -> Option<f64> {
        match self.family {
            PenaltyFamily::QuasiMcp => Some(self.shape),
            PenaltyFamily::Mcp | PenaltyFamily::Scad => Some(self.shape * self.lambda),
            PenaltyFamily::L1 | PenaltyFamily::L0 => None,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        let lam = self.lambda;
        let a = t.abs();
        match self.family {
            PenaltyFamily::QuasiMcp => {
                let delta = self.shape;
                if a <= delta {
                    lam * (a - t * t / (2.0 * delta))
                } else {
                    lam * delta / 2.0
                }
            }
            PenaltyFamily::Mcp => {
                let k = self.shape;
                if a < k * lam {
                    lam * a - t * t / (2.0 * k)
                } else {
                    lam * lam * k / 2.0
                }
            }
            PenaltyFamily::Scad => {
                let k = self.shape;
                if a <= lam {
                    lam * a
                } else if a < k * lam {
                    (2.0 * k * lam * a - t * t - lam * lam) / (2.0 * (k - 1.0))
                } else {
                    lam * lam * (k + 1.0) / 2.0
                }
            }
            PenaltyFamily::L1 => lam * a,
            PenaltyFamily::L0 => {
                if t != 0.0 {
                    lam
                } else {
                    0.0
                }
            }
        }
    }

    pub fn grad(&self, t: f64) -> f64 {
        if t == 0.0 {
            return 0.0;
        }
        let lam = self.lambda;
        let a = t.abs();
        let s = t.signum();
        match self.family {
            PenaltyFamily::QuasiMcp => {
                let delta = self.shape;
                if a < delta {
                    lam * s * (1.0 - a / delta)
                } else {
                    0.0
                }
            }
            PenaltyFamily::Mcp => {
                let k = self.shape;
                if a < k * lam {
                    s * (lam - a / k)
                } else {
                    0.0
                }
            }
            PenaltyFamily::Scad => {
                let k = self.shape;
                if a <= lam {
                    lam * s
                } else if a < k * lam {
                    s * (k * lam - a) / (k - 1.0)
                } else {
                    0.0
                }
            }
            PenaltyFamily::L1 => lam * s,
            PenaltyFamily::L0 => 0.0,
        }
    }

    /// Right derivative in the magnitude `u >= 0`, so `lambda` at the origin for
    /// the families with a kink there.
    pub fn magnitude_grad(&self, u: f64) -> f64 {
        if u > 0.0 {
            self.grad(u)
        } else if self.family == PenaltyFamily::L0 {
            0.0
        } else {
            self.lambda
        }
    }

    /// Sum of the penalty over off-diagonal entries.
    pub fn matrix_value(&self, b: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for j in 0..b.ncols() {
            for i in 0..b.nrows() {
                if i != j {
                    total += self.value(b[(i, j)]);
                }
            }
        }
        total
    }

    /// Off-diagonal penalty sum and its elementwise gradient (zero diagonal).
    pub fn matrix_value_grad(&self, b: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let mut g = DMatrix::zeros(b.nrows(), b.ncols());
        let mut total = 0.0;
        for j in 0..b.ncols() {
            for i in 0..b.nrows() {
                if i != j {
                    let t = b[(i, j)];
                    total += self.value(t);
                    g[(i, j)] = self.grad(t);
                }
            }
        }
        (total, g)
    }
}

/// Checks on a grid that quasi-MCP with `delta = a * lambda` coincides with MCP(`lambda`, `a`).
pub fn mcp_reparam_check(lambda: f64, a: f64, grid: &[f64]) -> bool {
    let (Ok(q), Ok(m)) = (
        PenaltySpec::quasi_mcp(lambda, a * lambda),
        PenaltySpec::mcp(lambda, a),
    ) else {
        return false;
    };
    grid.iter()
        .all(|&t| (q.value(t) - m.value(t)).abs() <= 1e-14)
}

/// Same comparison for an arbitrary quasi-MCP width.
pub fn quasi_mcp_matches_mcp(lambda: f64, delta: f64, a: f64, grid: &[f64]) -> bool {
    let (Ok(q), Ok(m)) = (
        PenaltySpec::quasi_mcp(lambda, delta),
        PenaltySpec::mcp(lambda, a),
    ) else {
        return false;
    };
    grid.iter()
        .all(|&t| (q.value(t) - m.value(t)).abs() <= 1e-14)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quasi_mcp_values() {
        let q = PenaltySpec::quasi_mcp(2.0, 1.0).unwrap();
        assert_eq!(q.value(0.0), 0.0);
        assert_abs_diff_eq!(q.value(3.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.value(0.5), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(q.value(1.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.grad(0.5), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q.grad(-0.5), -1.0, epsilon = 1e-15);
        assert_eq!(q.grad(0.0), 0.0);
        assert_eq!(q.magnitude_grad(0.0), 2.0);
        assert_eq!(q.magnitude_grad(0.5), q.grad(0.5));
    }

    #[test]
    fn flat_beyond_plateau() {
        for spec in [
            PenaltySpec::quasi_mcp(0.7, 0.4).unwrap(),
            PenaltySpec::mcp(0.7, 2.0).unwrap(),
            PenaltySpec::scad(0.7, 3.7).unwrap(),
        ] {
            let t = 5.0 * spec.shape.max(spec.shape * spec.lambda);
            assert_eq!(spec.grad(t), 0.0);
            let th = spec.plateau_threshold().unwrap();
            assert_abs_diff_eq!(spec.value(th * 1.01), spec.value(th * 3.0), epsilon = 1e-15);
        }
    }

    #[test]
    fn scad_continuous_at_branches() {
        let s = PenaltySpec::scad(0.5, 3.0).unwrap();
        for knot in [0.5, 1.5] {
            assert_abs_diff_eq!(
                s.value(knot - 1e-12),
                s.value(knot + 1e-12),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn matrix_plateau_count() {
        let q = PenaltySpec::quasi_mcp(1.0, 0.1).unwrap();
        let mut b = DMatrix::zeros(2, 2);
        b[(0, 1)] = -0.5;
        assert_abs_diff_eq!(q.matrix_value(&b), 0.05, epsilon = 1e-15);
        assert_eq!(q.matrix_value(&DMatrix::zeros(3, 3)), 0.0);
        let (_, g) = q.matrix_value_grad(&DMatrix::from_element(3, 3, 0.05));
        for i in 0..3 {
            assert_eq!(g[(i, i)], 0.0);
        }
    }

    #[test]
    fn validation() {
        assert!(PenaltySpec::quasi_mcp(-1.0, 1.0).is_err());
        assert!(PenaltySpec::quasi_mcp(1.0, 0.0).is_err());
        assert!(PenaltySpec::scad(1.0, 1.0).is_err());
        assert!(PenaltySpec::l1(0.0).is_ok());
    }

    #[test]
    fn reparam_check() {
        let grid = [0.0, 0.3, -0.3, 1.0, -1.0, 5.0, -5.0];
        assert!(mcp_reparam_check(2.0, 0.5, &grid));
        let dense: Vec<f64> = (0..=4000).map(|k| -2.0 + k as f64 * 1e-3).collect();
        assert!(mcp_reparam_check(0.1, 3.0, &dense));
        assert!(!quasi_mcp_matches_mcp(2.0, 0.5, 0.5, &grid));
    }

    #[test]
    fn json_round_trip() {
        let s = PenaltySpec::quasi_mcp(0.4, 0.2).unwrap();
        let txt = serde_json::to_string(&s).unwrap();
        assert!(txt.contains("\"quasi_mcp\""));
        let back: PenaltySpec = serde_json::from_str(&txt).unwrap();
        assert_eq!(back, s);
    }
}
