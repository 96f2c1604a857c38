// SPDX-License-Identifier: Apache-2.0
//! Continuous-optimization structure learning: an unconstrained inner solver,
//! the augmented-Lagrangian outer loop and the warm-start decay path.

mod augmented;
mod inner;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::acyclicity::AcyclicitySpec;
use crate::error::{Error, Result};
use crate::graph::{threshold_support, Thresholded};
use crate::penalty::PenaltySpec;
use crate::sem::{CovarianceMatrix, Dataset, WeightMatrix};
use crate::simulate::sample_covariance_matrix;

pub use augmented::{
    augmented_lagrangian_solve, decay_path_from, warm_start_path, warm_start_path_from,
};
pub use inner::{inner_minimize, split_minimize, InnerOutcome, InnerStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    GaussianProfileNll,
    GaussianLs,
    LogisticNll,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    /// L-BFGS with backtracking line search; inside the augmented Lagrangian it
    /// runs on the positive / negative parts of `B` under nonnegativity bounds.
    QuasiNewton,
    /// Adam.
    AdaptiveFirstOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerConfig {
    pub method: InnerMethod,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Stop once an accepted step lowers the objective by less than `ftol * max(|f|, 1)`.
    pub ftol: f64,
    /// L-BFGS history length.
    pub memory: usize,
    /// Adam step size.
    pub learning_rate: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            method: InnerMethod::QuasiNewton,
            max_iter: 1000,
            grad_tol: 1e-6,
            ftol: 1e-12,
            memory: 10,
            learning_rate: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterMethod {
    AugmentedLagrangian,
    /// Minimizes `mu * (score + penalty) + h` for a shrinking `mu`, each stage
    /// started from the last, then finishes with augmented-Lagrangian rounds if
    /// `h` is still above tolerance. Meant for the log-det acyclicity.
    CentralPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OuterConfig {
    pub method: OuterMethod,
    pub mu0: f64,
    pub mu_factor: f64,
    pub central_steps: usize,
    pub alpha0: f64,
    pub rho0: f64,
    pub growth: f64,
    /// `rho` grows while a round fails to shrink `h` below `shrink * h_previous`.
    pub shrink: f64,
    pub h_tol: f64,
    pub max_rounds: usize,
    pub rho_max: f64,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            method: OuterMethod::AugmentedLagrangian,
            mu0: 1.0,
            mu_factor: 0.1,
            central_steps: 4,
            alpha0: 0.0,
            rho0: 1.0,
            growth: 10.0,
            shrink: 0.25,
            h_tol: 1e-8,
            max_rounds: 100,
            rho_max: 1e16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub score: ScoreKind,
    pub penalty: PenaltySpec,
    pub acyclicity: AcyclicitySpec,
    pub inner: InnerConfig,
    pub outer: OuterConfig,
    /// Decay factor applied to `lambda` and `delta` along the warm-start path.
    pub gamma: f64,
    pub threshold: f64,
    /// L1 weight of the least-squares initializer.
    pub init_lambda: f64,
    pub max_path_rounds: usize,
    /// Centre the data before forming the sample covariance.
    pub centered: bool,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            score: ScoreKind::GaussianProfileNll,
            penalty: PenaltySpec::quasi_mcp(0.4, 0.2).expect("valid default"),
            acyclicity: AcyclicitySpec::TraceExpm,
            inner: InnerConfig::default(),
            outer: OuterConfig::default(),
            gamma: 0.8,
            threshold: 0.3,
            init_lambda: 0.1,
            max_path_rounds: 10,
            centered: true,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        self.penalty.validate()?;
        self.acyclicity.validate()?;
        if !self.penalty.family.is_differentiable() {
            return bad(
                "the L0 penalty is not differentiable and cannot be optimized by gradient methods",
            );
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.threshold >= 0.0) {
            return bad("threshold must be >= 0");
        }
        if !(self.init_lambda >= 0.0) {
            return bad("init_lambda must be >= 0");
        }
        let i = &self.inner;
        if i.max_iter == 0 || i.memory == 0 {
            return bad("inner max_iter and memory must be >= 1");
        }
        if !(i.grad_tol > 0.0 && i.ftol >= 0.0 && i.learning_rate > 0.0) {
            return bad("inner tolerances and learning rate must be > 0");
        }
        let o = &self.outer;
        if !(o.h_tol > 0.0 && o.rho0 > 0.0 && o.growth > 1.0 && o.rho_max >= o.rho0) {
            return bad("outer schedule needs h_tol > 0, rho0 > 0, growth > 1, rho_max >= rho0");
        }
        if !(o.shrink > 0.0 && o.shrink < 1.0) {
            return bad("outer shrink must lie in (0, 1)");
        }
        if !(o.mu0 > 0.0 && o.mu_factor > 0.0 && o.mu_factor < 1.0) {
            return bad("central path needs mu0 > 0 and mu_factor in (0, 1)");
        }
        if o.max_rounds == 0 {
            return bad("outer max_rounds must be >= 1");
        }
        Ok(())
    }
}

/// Data a score is evaluated on: a second-moment matrix and, for the logistic
/// score, the binary samples themselves.
#[derive(Debug, Clone)]
pub struct ScoreData {
    moment: DMatrix<f64>,
    covariance: Option<CovarianceMatrix>,
    data: Option<Dataset>,
}

impl ScoreData {
    pub fn from_covariance(sigma: CovarianceMatrix) -> Self {
        Self {
            moment: sigma.matrix().clone(),
            covariance: Some(sigma),
            data: None,
        }
    }

    /// Keeps the samples and their sample covariance; the covariance is
    /// retained only when positive definite.
    pub fn from_dataset(data: &Dataset, centered: bool) -> Self {
        let moment = sample_covariance_matrix(data, centered);
        let covariance = CovarianceMatrix::new(moment.clone()).ok();
        Self {
            moment,
            covariance,
            data: Some(data.clone()),
        }
    }

    pub fn p(&self) -> usize {
        self.moment.nrows()
    }

    pub fn moment(&self) -> &DMatrix<f64> {
        &self.moment
    }

    pub fn covariance(&self) -> Option<&CovarianceMatrix> {
        self.covariance.as_ref()
    }

    pub fn dataset(&self) -> Option<&Dataset> {
        self.data.as_ref()
    }
}

/// One augmented-Lagrangian round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 0 for the least-squares initializer, then one per warm-start step.
    pub stage: usize,
    pub round: usize,
    pub lambda: f64,
    pub shape: f64,
    pub score: f64,
    pub penalty: f64,
    pub h: f64,
    pub rho: f64,
    pub alpha: f64,
    pub inner_iterations: usize,
}

/// One step of the warm-start path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub stage: usize,
    pub lambda: f64,
    pub shape: f64,
    pub score: f64,
    pub h: f64,
    pub converged: bool,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Weighted adjacency before thresholding.
    pub b_est: WeightMatrix,
    /// Residual variances of `b_est` (Gaussian scores only).
    pub omega_est: Option<DVector<f64>>,
    pub thresholded: Thresholded,
    pub trace: Vec<RoundRecord>,
    pub path: Vec<PathStep>,
    pub score: f64,
    pub penalty: f64,
    pub h: f64,
    /// `h <= h_tol` was reached within the round cap.
    pub converged: bool,
}

/// Support of `b_est` at `cutoff`, or the cyclic edge set when it is not a DAG.
pub fn threshold_result(b_est: &WeightMatrix, cutoff: f64) -> Thresholded {
    threshold_support(b_est, cutoff)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_examples() {
        let mut b = DMatrix::zeros(2, 2);
        b[(0, 1)] = 0.9;
        b[(1, 0)] = -0.05;
        assert_eq!(
            threshold_result(&b, 0.3).dag().unwrap().edges(),
            vec![(0, 1)]
        );
        b[(1, 0)] = 0.2;
        assert!(threshold_result(&b, 0.3).is_valid());
        let cyc = DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 0.5 });
        assert!(!threshold_result(&cyc, 0.3).is_valid());
    }

    #[test]
    fn config_validation_and_json() {
        let cfg = SolverConfig::default();
        cfg.validate().unwrap();
        let txt = serde_json::to_string(&cfg).unwrap();
        let back: SolverConfig = serde_json::from_str(&txt).unwrap();
        assert_eq!(back, cfg);
        let partial: SolverConfig = serde_json::from_str(r#"{"gamma": 0.5}"#).unwrap();
        assert_eq!(partial.gamma, 0.5);
        assert_eq!(partial.threshold, 0.3);
        for bad in [
            SolverConfig {
                gamma: 1.0,
                ..cfg.clone()
            },
            SolverConfig {
                threshold: -1.0,
                ..cfg.clone()
            },
            SolverConfig {
                penalty: PenaltySpec::l0(0.1).unwrap(),
                ..cfg.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
