// SPDX-License-Identifier: Apache-2.0
//! Unconstrained minimization of a smooth function of `B` with the diagonal held at zero.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use super::{InnerConfig, InnerMethod};
use crate::error::{Error, Result};
use crate::penalty::PenaltySpec;
use crate::sem::WeightMatrix;

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerStatus {
    /// Gradient infinity-norm at or below tolerance.
    Converged,
    /// Relative decrease below `ftol`, or no descent step could be found.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub b: WeightMatrix,
    pub value: f64,
    pub iterations: usize,
    pub status: InnerStatus,
    /// Objective value after each accepted step, starting with the start value.
    pub trace: Vec<f64>,
}

fn mask_diagonal(g: &mut DMatrix<f64>) {
    for i in 0..g.nrows().min(g.ncols()) {
        g[(i, i)] = 0.0;
    }
}

fn eval<F>(f: &F, b: &WeightMatrix) -> Option<(f64, DMatrix<f64>)>
where
    F: Fn(&WeightMatrix) -> Option<(f64, DMatrix<f64>)>,
{
    let (v, mut g) = f(b)?;
    if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
        return None;
    }
    mask_diagonal(&mut g);
    Some((v, g))
}

fn inf_norm(g: &DMatrix<f64>) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f` from `start`. `f` returns `None` wherever it is undefined; such
/// trial points are rejected and the step is halved.
pub fn inner_minimize<F>(f: F, start: &WeightMatrix, cfg: &InnerConfig) -> Result<InnerOutcome>
where
    F: Fn(&WeightMatrix) -> Option<(f64, DMatrix<f64>)>,
{
    let mut b0 = start.clone();
    mask_diagonal(&mut b0);
    let (v0, g0) = eval(&f, &b0).ok_or(Error::NonFiniteStart)?;
    match cfg.method {
        InnerMethod::QuasiNewton => Ok(lbfgs(&f, b0, v0, g0, cfg)),
        InnerMethod::AdaptiveFirstOrder => Ok(adam(&f, b0, v0, g0, cfg)),
    }
}

fn dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub(super) fn add_scaled(dst: &mut DMatrix<f64>, a: f64, src: &DMatrix<f64>) {
    dst.iter_mut()
        .zip(src.iter())
        .for_each(|(d, s)| *d += a * s);
}

fn two_loop(g: &DMatrix<f64>, hist: &VecDeque<(DMatrix<f64>, DMatrix<f64>, f64)>) -> DMatrix<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        add_scaled(&mut q, -a, y);
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        q *= dot(s, y) / dot(y, y);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * dot(y, &q);
        add_scaled(&mut q, a - beta, s);
    }
    -q
}

fn lbfgs<F>(
    f: &F,
    mut b: WeightMatrix,
    mut v: f64,
    mut g: DMatrix<f64>,
    cfg: &InnerConfig,
) -> InnerOutcome
where
    F: Fn(&WeightMatrix) -> Option<(f64, DMatrix<f64>)>,
{
    let mut hist: VecDeque<(DMatrix<f64>, DMatrix<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut trace = vec![v];
    let mut status = InnerStatus::MaxIterations;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        if inf_norm(&g) <= cfg.grad_tol {
            status = InnerStatus::Converged;
            break;
        }
        let mut d = if hist.is_empty() {
            -&g
        } else {
            two_loop(&g, &hist)
        };
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = -&g;
            slope = dot(&g, &d);
        }
        let mut step = if hist.is_empty() {
            (1.0 / inf_norm(&g)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = &b + &d * step;
            if let Some((tv, tg)) = eval(f, &trial) {
                if tv <= v + ARMIJO_C1 * step * slope {
                    accepted = Some((trial, tv, tg));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((nb, nv, ng)) = accepted else {
            if hist.is_empty() {
                status = InnerStatus::Stalled;
                break;
            }
            hist.clear();
            continue;
        };
        iterations += 1;
        let s = &nb - &b;
        let y = &ng - &g;
        let sy = dot(&s, &y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let decrease = v - nv;
        b = nb;
        v = nv;
        g = ng;
        trace.push(v);
        if decrease <= cfg.ftol * v.abs().max(1.0) {
            status = InnerStatus::Stalled;
            break;
        }
    }
    InnerOutcome {
        b,
        value: v,
        iterations,
        status,
        trace,
    }
}

/// Adam with monotone acceptance: a step that raises the objective (or leaves
/// its domain) is rejected and the learning rate halved.
fn adam<F>(
    f: &F,
    mut b: WeightMatrix,
    mut v: f64,
    mut g: DMatrix<f64>,
    cfg: &InnerConfig,
) -> InnerOutcome
where
    F: Fn(&WeightMatrix) -> Option<(f64, DMatrix<f64>)>,
{
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;
    let (r, c) = b.shape();
    let mut m = DMatrix::zeros(r, c);
    let mut s = DMatrix::zeros(r, c);
    let mut lr = cfg.learning_rate;
    let mut trace = vec![v];
    let mut status = InnerStatus::MaxIterations;
    let mut t = 0i32;
    let mut rejections = 0;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        if inf_norm(&g) <= cfg.grad_tol {
            status = InnerStatus::Converged;
            break;
        }
        t += 1;
        let nm = &m * BETA1 + &g * (1.0 - BETA1);
        let ns = &s * BETA2 + g.component_mul(&g) * (1.0 - BETA2);
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let stepm = nm.zip_map(&ns, |mi, si| (mi / c1) / ((si / c2).sqrt() + EPS));
        let trial = &b - stepm * lr;
        match eval(f, &trial) {
            Some((tv, tg)) if tv <= v => {
                m = nm;
                s = ns;
                b = trial;
                v = tv;
                g = tg;
                iterations += 1;
                rejections = 0;
                trace.push(v);
            }
            _ => {
                t -= 1;
                lr *= 0.5;
                rejections += 1;
                if rejections >= MAX_HALVINGS {
                    status = InnerStatus::Stalled;
                    break;
                }
            }
        }
    }
    InnerOutcome {
        b,
        value: v,
        iterations,
        status,
        trace,
    }
}

/// Minimizes `smooth(B) + sum_ij pen(|B_ij|)` with `B = W+ - W-`, `W± >= 0`, by
/// projected L-BFGS on the pair; the penalty acts on `W+ + W-`, where it is
/// differentiable from the right at zero.
pub fn split_minimize<F>(
    smooth: F,
    pen: &PenaltySpec,
    start: &WeightMatrix,
    cfg: &InnerConfig,
) -> Result<InnerOutcome>
where
    F: Fn(&WeightMatrix) -> Option<(f64, DMatrix<f64>)>,
{
    let p = start.nrows();
    let pp = p * p;
    let eval = |x: &[f64]| -> Option<(f64, Vec<f64>)> {
        let b = DMatrix::from_fn(p, p, |i, j| x[i + j * p] - x[pp + i + j * p]);
        let (v, gb) = smooth(&b)?;
        let mut total = v;
        let mut g = vec![0.0; 2 * pp];
        for j in 0..p {
            for i in 0..p {
                if i == j {
                    continue;
                }
                let k = i + j * p;
                let u = x[k] + x[pp + k];
                total += pen.value(u);
                let dp = pen.magnitude_grad(u);
                g[k] = gb[(i, j)] + dp;
                g[pp + k] = -gb[(i, j)] + dp;
            }
        }
        (total.is_finite() && g.iter().all(|v| v.is_finite())).then_some((total, g))
    };
    let mut x = vec![0.0; 2 * pp];
    let mut free = vec![true; 2 * pp];
    for j in 0..p {
        for i in 0..p {
            let k = i + j * p;
            if i == j {
                free[k] = false;
                free[pp + k] = false;
            } else {
                x[k] = start[(i, j)].max(0.0);
                x[pp + k] = (-start[(i, j)]).max(0.0);
            }
        }
    }
    let (v, g) = eval(&x).ok_or(Error::NonFiniteStart)?;
    let (x, value, iterations, status, trace) = projected_lbfgs(&eval, x, v, g, &free, cfg);
    let b = DMatrix::from_fn(p, p, |i, j| x[i + j * p] - x[pp + i + j * p]);
    Ok(InnerOutcome {
        b,
        value,
        iterations,
        status,
        trace,
    })
}

fn vdot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

type History = VecDeque<(Vec<f64>, Vec<f64>, f64)>;

fn two_loop_flat(g: &[f64], hist: &History) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * vdot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = vdot(s, y) / vdot(y, y);
        q.iter_mut().for_each(|qi| *qi *= gamma);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let beta = rho * vdot(y, &q);
        q.iter_mut()
            .zip(s)
            .for_each(|(qi, si)| *qi += (a - beta) * si);
    }
    q.iter_mut().for_each(|qi| *qi = -*qi);
    q
}

fn projected_lbfgs<F>(
    f: &F,
    mut x: Vec<f64>,
    mut v: f64,
    mut g: Vec<f64>,
    free: &[bool],
    cfg: &InnerConfig,
) -> (Vec<f64>, f64, usize, InnerStatus, Vec<f64>)
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x.len();
    let mut hist: History = VecDeque::with_capacity(cfg.memory);
    let mut trace = vec![v];
    let mut status = InnerStatus::MaxIterations;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        // variables held at the bound by an outward-pointing gradient
        let moving: Vec<bool> = (0..n)
            .map(|i| free[i] && !(x[i] <= 0.0 && g[i] > 0.0))
            .collect();
        let pg = (0..n)
            .filter(|&i| moving[i])
            .fold(0.0f64, |m, i| m.max(g[i].abs()));
        if pg <= cfg.grad_tol {
            status = InnerStatus::Converged;
            break;
        }
        let gm: Vec<f64> = (0..n).map(|i| if moving[i] { g[i] } else { 0.0 }).collect();
        let steepest = |gm: &[f64]| -> Vec<f64> { gm.iter().map(|v| -v).collect() };
        let mut d = if hist.is_empty() {
            steepest(&gm)
        } else {
            let mut d = two_loop_flat(&gm, &hist);
            for i in 0..n {
                if !moving[i] {
                    d[i] = 0.0;
                }
            }
            d
        };
        if !(vdot(&gm, &d) < 0.0) {
            hist.clear();
            d = steepest(&gm);
        }
        let mut step = if hist.is_empty() {
            (1.0 / d.iter().fold(0.0f64, |m, v| m.max(v.abs()))).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = (0..n)
                .map(|i| {
                    if moving[i] {
                        (x[i] + step * d[i]).max(0.0)
                    } else {
                        x[i]
                    }
                })
                .collect();
            let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
            if decrease < 0.0 {
                if let Some((tv, tg)) = f(&trial) {
                    if tv <= v + ARMIJO_C1 * decrease {
                        accepted = Some((trial, tv, tg));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some((nx, nv, mut ng)) = accepted else {
            if hist.is_empty() {
                status = InnerStatus::Stalled;
                break;
            }
            hist.clear();
            continue;
        };
        for i in 0..n {
            if !free[i] {
                ng[i] = 0.0;
            }
        }
        iterations += 1;
        let s: Vec<f64> = nx.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ng.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = vdot(&s, &y);
        if sy > 1e-12 * vdot(&s, &s).sqrt() * vdot(&y, &y).sqrt() && sy > 0.0 {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        let drop = v - nv;
        x = nx;
        v = nv;
        g = ng;
        trace.push(v);
        if drop <= cfg.ftol * v.abs().max(1.0) {
            status = InnerStatus::Stalled;
            break;
        }
    }
    (x, v, iterations, status, trace)
}
