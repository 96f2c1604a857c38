// SPDX-License-Identifier: Apache-2.0
//! Augmented-Lagrangian outer loop and the warm-start lambda / delta decay path.

use nalgebra::DMatrix;

use super::inner::{add_scaled, inner_minimize, split_minimize};
use super::{
    InnerMethod, OuterMethod, PathStep, RoundRecord, ScoreData, ScoreKind, SolveResult,
    SolverConfig,
};
use crate::acyclicity::AcyclicitySpec;
use crate::error::{Error, Result};
use crate::graph::threshold_support;
use crate::penalty::PenaltySpec;
use crate::sem::{
    nll_profile_with_grad, profile_noise, CovarianceMatrix, LogisticScore, WeightMatrix,
};

enum Evaluator<'a> {
    Profile(&'a CovarianceMatrix),
    Ls(&'a DMatrix<f64>),
    Logistic(LogisticScore<'a>),
}

impl<'a> Evaluator<'a> {
    fn new(data: &'a ScoreData, kind: ScoreKind) -> Result<Self> {
        match kind {
            ScoreKind::GaussianProfileNll => data
                .covariance()
                .map(Evaluator::Profile)
                .ok_or(Error::NotPositiveDefinite),
            ScoreKind::GaussianLs => Ok(Evaluator::Ls(data.moment())),
            ScoreKind::LogisticNll => {
                let ds = data.dataset().ok_or_else(|| {
                    Error::InvalidData("the logistic score needs samples, not a covariance".into())
                })?;
                Ok(Evaluator::Logistic(LogisticScore::new(ds)?))
            }
        }
    }

    fn value_grad(&self, b: &WeightMatrix) -> Option<(f64, DMatrix<f64>)> {
        match self {
            Evaluator::Profile(sigma) => nll_profile_with_grad(b, sigma).ok(),
            Evaluator::Ls(s) => {
                let m = DMatrix::identity(b.nrows(), b.ncols()) - b;
                let sm = *s * &m;
                let v = 0.5 * m.iter().zip(sm.iter()).map(|(x, y)| x * y).sum::<f64>();
                Some((v, -sm))
            }
            Evaluator::Logistic(score) => score.value_grad(b).ok(),
        }
    }

    fn value(&self, b: &WeightMatrix) -> Option<f64> {
        self.value_grad(b).map(|(v, _)| v)
    }
}

fn objective(
    eval: &Evaluator<'_>,
    pen: &PenaltySpec,
    acyc: &AcyclicitySpec,
    alpha: f64,
    rho: f64,
    b: &WeightMatrix,
) -> Option<(f64, DMatrix<f64>)> {
    let (s, mut g) = eval.value_grad(b)?;
    let (pv, pg) = pen.matrix_value_grad(b);
    let (hv, hg) = acyc.value_grad(b).ok()?;
    g += pg;
    add_scaled(&mut g, alpha + rho * hv, &hg);
    Some((s + pv + alpha * hv + 0.5 * rho * hv * hv, g))
}

fn smooth_part(
    eval: &Evaluator<'_>,
    acyc: &AcyclicitySpec,
    alpha: f64,
    rho: f64,
    b: &WeightMatrix,
) -> Option<(f64, DMatrix<f64>)> {
    let (s, mut g) = eval.value_grad(b)?;
    let (hv, hg) = acyc.value_grad(b).ok()?;
    add_scaled(&mut g, alpha + rho * hv, &hg);
    Some((s + alpha * hv + 0.5 * rho * hv * hv, g))
}

/// Halves `b` until the score and `h` are both defined.
fn pull_into_domain(
    eval: &Evaluator<'_>,
    acyc: &AcyclicitySpec,
    b: &WeightMatrix,
) -> Result<WeightMatrix> {
    let mut b = b.clone();
    for i in 0..b.nrows() {
        b[(i, i)] = 0.0;
    }
    for _ in 0..60 {
        if eval.value(&b).is_some_and(f64::is_finite) && acyc.value(&b).is_ok() {
            return Ok(b);
        }
        b *= 0.5;
    }
    Err(Error::NonFiniteStart)
}

fn solve_stage(
    data: &ScoreData,
    cfg: &SolverConfig,
    start: &WeightMatrix,
    stage: usize,
) -> Result<SolveResult> {
    cfg.validate()?;
    let p = data.p();
    if start.nrows() != p || start.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: start.nrows(),
        });
    }
    let eval = Evaluator::new(data, cfg.score)?;
    let pen = cfg.penalty;
    let acyc = cfg.acyclicity;
    let outer = &cfg.outer;
    let mut b = pull_into_domain(&eval, &acyc, start)?;
    let mut alpha = outer.alpha0;
    let mut rho = outer.rho0;
    let mut h = f64::INFINITY;
    let mut converged = false;
    let mut trace = Vec::new();
    if outer.method == OuterMethod::CentralPath {
        let mut mu = outer.mu0;
        for round in 0..outer.central_steps {
            let scaled = PenaltySpec {
                lambda: pen.lambda * mu,
                ..pen
            };
            let smooth = |x: &WeightMatrix| {
                let (s, g) = eval.value_grad(x)?;
                let (hv, hg) = acyc.value_grad(x).ok()?;
                Some((mu * s + hv, g * mu + hg))
            };
            let out = match cfg.inner.method {
                InnerMethod::QuasiNewton => split_minimize(smooth, &scaled, &b, &cfg.inner)?,
                InnerMethod::AdaptiveFirstOrder => inner_minimize(
                    |x| {
                        let (v, mut g) = smooth(x)?;
                        let (pv, pg) = scaled.matrix_value_grad(x);
                        g += pg;
                        Some((v + pv, g))
                    },
                    &b,
                    &cfg.inner,
                )?,
            };
            b = out.b;
            h = acyc.value(&b)?;
            trace.push(RoundRecord {
                stage,
                round,
                lambda: pen.lambda,
                shape: pen.shape,
                score: eval.value(&b).unwrap_or(f64::NAN),
                penalty: pen.matrix_value(&b),
                h,
                rho: 1.0 / mu,
                alpha: 0.0,
                inner_iterations: out.iterations,
            });
            mu *= outer.mu_factor;
        }
        converged = h <= outer.h_tol;
    }
    let first = trace.len();
    for round in first..first + outer.max_rounds {
        if converged {
            break;
        }
        let mut iterations = 0;
        let (nb, nh) = loop {
            let out = match cfg.inner.method {
                InnerMethod::QuasiNewton => split_minimize(
                    |x| smooth_part(&eval, &acyc, alpha, rho, x),
                    &pen,
                    &b,
                    &cfg.inner,
                )?,
                InnerMethod::AdaptiveFirstOrder => inner_minimize(
                    |x| objective(&eval, &pen, &acyc, alpha, rho, x),
                    &b,
                    &cfg.inner,
                )?,
            };
            iterations += out.iterations;
            let nh = acyc.value(&out.b)?;
            if nh > outer.shrink * h && rho < outer.rho_max {
                rho = (rho * outer.growth).min(outer.rho_max);
            } else {
                break (out.b, nh);
            }
        };
        b = nb;
        h = nh;
        alpha += rho * h;
        trace.push(RoundRecord {
            stage,
            round,
            lambda: pen.lambda,
            shape: pen.shape,
            score: eval.value(&b).unwrap_or(f64::NAN),
            penalty: pen.matrix_value(&b),
            h,
            rho,
            alpha,
            inner_iterations: iterations,
        });
        if h <= outer.h_tol {
            converged = true;
            break;
        }
        if rho >= outer.rho_max {
            break;
        }
    }
    if !converged {
        log::debug!(
            "augmented Lagrangian stopped with h = {h:e} > {:e}",
            outer.h_tol
        );
    }
    let score = eval
        .value(&b)
        .ok_or_else(|| Error::InvalidParams("score undefined at the final iterate".into()))?;
    let omega_est = match cfg.score {
        ScoreKind::GaussianProfileNll | ScoreKind::GaussianLs => {
            data.covariance().map(|s| profile_noise(&b, s))
        }
        ScoreKind::LogisticNll => None,
    };
    Ok(SolveResult {
        thresholded: threshold_support(&b, cfg.threshold),
        penalty: pen.matrix_value(&b),
        omega_est,
        trace,
        path: Vec::new(),
        score,
        h,
        converged,
        b_est: b,
    })
}

/// Minimizes `score + penalty` subject to `h(B) = 0` from `start`.
pub fn augmented_lagrangian_solve(
    data: &ScoreData,
    cfg: &SolverConfig,
    start: &WeightMatrix,
) -> Result<SolveResult> {
    solve_stage(data, cfg, start, 0)
}

/// Least-squares + L1 initializer from `B = 0` followed by the decay path from its output.
pub fn warm_start_path(data: &ScoreData, cfg: &SolverConfig) -> Result<SolveResult> {
    let p = data.p();
    warm_start_path_from(data, cfg, &DMatrix::zeros(p, p))
}

/// [`warm_start_path`] with the least-squares initializer started at `start`.
pub fn warm_start_path_from(
    data: &ScoreData,
    cfg: &SolverConfig,
    start: &WeightMatrix,
) -> Result<SolveResult> {
    cfg.validate()?;
    let init_cfg = SolverConfig {
        score: ScoreKind::GaussianLs,
        penalty: PenaltySpec::l1(cfg.init_lambda)?,
        ..cfg.clone()
    };
    let init = solve_stage(data, &init_cfg, start, 0)?;
    let mut out = decay_path(data, cfg, &init.b_est)?;
    let mut trace = init.trace;
    trace.append(&mut out.trace);
    out.trace = trace;
    Ok(out)
}

/// The decay path started directly from `start`, without the initializer.
pub fn decay_path_from(
    data: &ScoreData,
    cfg: &SolverConfig,
    start: &WeightMatrix,
) -> Result<SolveResult> {
    cfg.validate()?;
    decay_path(data, cfg, start)
}

/// Solve, shrink `lambda` and `delta` by `gamma`, re-solve from the previous
/// output, and keep going while the score strictly decreases.
fn decay_path(data: &ScoreData, cfg: &SolverConfig, start: &WeightMatrix) -> Result<SolveResult> {
    let mut stage_cfg = cfg.clone();
    let mut best = solve_stage(data, &stage_cfg, start, 1)?;
    let mut path = vec![step(&best, &stage_cfg.penalty, 1, true)];
    let mut trace = std::mem::take(&mut best.trace);
    for stage in 2..(cfg.max_path_rounds + 2) {
        stage_cfg.penalty = stage_cfg.penalty.decayed(cfg.gamma);
        let mut cur = solve_stage(data, &stage_cfg, &best.b_est, stage)?;
        let accepted = cur.score < best.score && (cur.converged || !best.converged);
        path.push(step(&cur, &stage_cfg.penalty, stage, accepted));
        trace.append(&mut cur.trace);
        if !accepted {
            break;
        }
        best = cur;
    }
    best.trace = trace;
    best.path = path;
    Ok(best)
}

fn step(r: &SolveResult, pen: &PenaltySpec, stage: usize, accepted: bool) -> PathStep {
    PathStep {
        stage,
        lambda: pen.lambda,
        shape: pen.shape,
        score: r.score,
        h: r.h,
        converged: r.converged,
        accepted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{cpdag_of, shd_cpdag, DagStructure};
    use crate::sem::nll_profile;
    use nalgebra::DVector;

    fn fix2() -> ScoreData {
        ScoreData::from_covariance(
            CovarianceMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 0.5])).unwrap(),
        )
    }

    #[test]
    fn fix2_single_edge() {
        let cfg = SolverConfig {
            penalty: PenaltySpec::quasi_mcp(0.01, 0.1).unwrap(),
            ..SolverConfig::default()
        };
        let r = augmented_lagrangian_solve(&fix2(), &cfg, &DMatrix::zeros(2, 2)).unwrap();
        assert!(r.converged);
        let g = r.thresholded.dag().unwrap();
        assert_eq!(g.edge_count(), 1);
        assert!(r.h <= 1e-8);
    }

    #[test]
    fn zero_penalty_reaches_class_nll() {
        let data = fix2();
        let cfg = SolverConfig {
            penalty: PenaltySpec::quasi_mcp(0.0, 0.1).unwrap(),
            ..SolverConfig::default()
        };
        let r = augmented_lagrangian_solve(&data, &cfg, &DMatrix::zeros(2, 2)).unwrap();
        let mut b = DMatrix::zeros(2, 2);
        b[(0, 1)] = -0.5;
        let class_nll = nll_profile(&b, data.covariance().unwrap()).unwrap();
        assert!(
            (r.score - class_nll).abs() < 1e-6,
            "{} vs {}",
            r.score,
            class_nll
        );
    }

    #[test]
    fn path_scores_strictly_decrease() {
        let mut b = DMatrix::zeros(3, 3);
        b[(0, 1)] = 1.0;
        b[(1, 2)] = -0.8;
        let params = crate::sem::SemParams::new(b, DVector::from_vec(vec![1.0, 0.5, 0.3])).unwrap();
        let sigma = crate::sem::covariance_of(&params).unwrap();
        let r =
            warm_start_path(&ScoreData::from_covariance(sigma), &SolverConfig::default()).unwrap();
        let accepted: Vec<f64> = r
            .path
            .iter()
            .filter(|s| s.accepted)
            .map(|s| s.score)
            .collect();
        assert!(accepted.windows(2).all(|w| w[1] < w[0]));
        let truth = DagStructure::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        let est = r.thresholded.dag().unwrap();
        assert_eq!(shd_cpdag(&cpdag_of(est), &cpdag_of(&truth)).unwrap(), 0);
    }

    #[test]
    fn deterministic_trace() {
        let cfg = SolverConfig::default();
        let a = warm_start_path(&fix2(), &cfg).unwrap();
        let b = warm_start_path(&fix2(), &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.b_est, b.b_est);
    }

    #[test]
    fn log_det_start_pulled_into_domain() {
        let cfg = SolverConfig {
            acyclicity: AcyclicitySpec::LogDet { s: 1.0 },
            penalty: PenaltySpec::quasi_mcp(0.01, 0.1).unwrap(),
            ..SolverConfig::default()
        };
        let start = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 3.0, 0.0]);
        let r = augmented_lagrangian_solve(&fix2(), &cfg, &start).unwrap();
        assert!(r.converged);
        assert_eq!(r.thresholded.dag().unwrap().edge_count(), 1);
    }

    #[test]
    fn central_path_reaches_tolerance() {
        let mut b = DMatrix::zeros(3, 3);
        b[(0, 1)] = 1.0;
        b[(1, 2)] = -0.8;
        let params = crate::sem::SemParams::new(b, DVector::from_vec(vec![1.0, 0.5, 0.3])).unwrap();
        let data = ScoreData::from_covariance(crate::sem::covariance_of(&params).unwrap());
        let mut cfg = SolverConfig {
            acyclicity: AcyclicitySpec::LogDet { s: 1.0 },
            ..SolverConfig::default()
        };
        cfg.outer.method = OuterMethod::CentralPath;
        let r = warm_start_path(&data, &cfg).unwrap();
        assert!(r.converged && r.h <= cfg.outer.h_tol);
        let truth = DagStructure::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
        assert_eq!(
            shd_cpdag(&cpdag_of(r.thresholded.dag().unwrap()), &cpdag_of(&truth)).unwrap(),
            0
        );
        assert!(r.trace.iter().any(|t| t.alpha == 0.0 && t.rho == 1.0));

        let r = augmented_lagrangian_solve(
            &fix2(),
            &SolverConfig {
                penalty: PenaltySpec::quasi_mcp(0.01, 0.1).unwrap(),
                ..cfg
            },
            &DMatrix::zeros(2, 2),
        )
        .unwrap();
        assert_eq!(r.thresholded.dag().unwrap().edge_count(), 1);
    }

    #[test]
    fn logistic_requires_samples() {
        let cfg = SolverConfig {
            score: ScoreKind::LogisticNll,
            ..SolverConfig::default()
        };
        assert!(augmented_lagrangian_solve(&fix2(), &cfg, &DMatrix::zeros(2, 2)).is_err());
    }
}
