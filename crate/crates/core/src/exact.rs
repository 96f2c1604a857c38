// SPDX-License-Identifier: Apache-2.0
//! Brute-force oracle over variable orderings.
//!
//! An ordering lists variables from first (a source) to last; variable
//! `order[k]` is regressed on `order[..k]`. The set of these factorizations over
//! all orderings is the full equivalence class of a precision matrix.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{support_of, DagStructure};
use crate::penalty::PenaltySpec;
use crate::sem::{count_edges, nll_full, CovarianceMatrix, PrecisionMatrix, SemParams};

/// Default enumeration cap (9! = 362880 factorizations).
pub const DEFAULT_CAP: usize = 9;
/// Default zero tolerance for population matrices.
pub const POPULATION_EPS: f64 = 1e-8;
/// Absolute tolerance under which two regularized scores count as tied.
pub const TIE_TOL: f64 = 1e-10;

const CHUNK: usize = 4096;

/// One distinct member of an equivalence class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassMember {
    pub params: SemParams,
    /// Orderings producing this member, in lexicographic order.
    pub orderings: Vec<Vec<usize>>,
    pub edge_count: usize,
    pub nll: f64,
}

impl ClassMember {
    pub fn support(&self, eps: f64) -> DagStructure {
        support_of(self.params.b(), eps).expect("ordered factorization is acyclic")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceClass {
    pub p: usize,
    pub eps: f64,
    pub members: Vec<ClassMember>,
}

impl EquivalenceClass {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn supports(&self) -> std::collections::BTreeSet<DagStructure> {
        self.members.iter().map(|m| m.support(self.eps)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimalClass {
    pub members: Vec<ClassMember>,
    pub min_edges: usize,
    /// Smallest nonzero coefficient magnitude over the whole class; `inf` if every member is empty.
    pub tau: f64,
    pub delta_margin: f64,
    /// `tau / (1 + delta_margin)`.
    pub delta0: f64,
}

impl MinimalClass {
    pub fn supports(&self, eps: f64) -> std::collections::BTreeSet<DagStructure> {
        self.members.iter().map(|m| m.support(eps)).collect()
    }
}

fn check_order(p: usize, order: &[usize]) -> Result<()> {
    let mut seen = vec![false; p];
    if order.len() != p {
        return Err(Error::InvalidParams(format!(
            "ordering has length {}, expected {p}",
            order.len()
        )));
    }
    for &v in order {
        if v >= p || seen[v] {
            return Err(Error::InvalidParams(format!(
                "{order:?} is not a permutation"
            )));
        }
        seen[v] = true;
    }
    Ok(())
}

/// Ordered regressions through a Cholesky factor of the permuted covariance.
/// Writes `B` (row-major, `p*p`) and the residual variances; false if not PD.
fn ordered_regression(
    sigma: &[f64],
    p: usize,
    order: &[usize],
    chol: &mut [f64],
    b: &mut [f64],
    omega: &mut [f64],
) -> bool {
    for r in 0..p {
        for c in 0..=r {
            let mut sum = sigma[order[r] * p + order[c]];
            for k in 0..c {
                sum -= chol[r * p + k] * chol[c * p + k];
            }
            if r == c {
                if !(sum > 0.0) {
                    return false;
                }
                chol[r * p + r] = sum.sqrt();
            } else {
                chol[r * p + c] = sum / chol[c * p + c];
            }
        }
    }
    b.iter_mut().for_each(|v| *v = 0.0);
    let mut beta = vec![0.0; p];
    for a in 0..p {
        let d = chol[a * p + a];
        omega[order[a]] = d * d;
        for c in (0..a).rev() {
            let mut s = chol[a * p + c];
            for k in (c + 1)..a {
                s -= chol[k * p + c] * beta[k];
            }
            beta[c] = s / chol[c * p + c];
        }
        for c in 0..a {
            b[order[c] * p + order[a]] = beta[c];
        }
    }
    true
}

fn to_params(p: usize, b: &[f64], omega: &[f64]) -> Result<SemParams> {
    SemParams::new(
        DMatrix::from_row_slice(p, p, b),
        DVector::from_column_slice(omega),
    )
}

/// The unique factorization of `theta` compatible with `order`.
pub fn pair_for_permutation(theta: &PrecisionMatrix, order: &[usize]) -> Result<SemParams> {
    let p = theta.p();
    check_order(p, order)?;
    let sigma = theta.inverse();
    let flat: Vec<f64> = sigma.matrix().transpose().as_slice().to_vec();
    let mut chol = vec![0.0; p * p];
    let mut b = vec![0.0; p * p];
    let mut omega = vec![0.0; p];
    if !ordered_regression(&flat, p, order, &mut chol, &mut b, &mut omega) {
        return Err(Error::NotPositiveDefinite);
    }
    to_params(p, &b, &omega)
}

/// Same factorization computed from an `LDL^T` decomposition of `theta` permuted by the reversed ordering.
pub fn pair_for_permutation_cholesky(
    theta: &PrecisionMatrix,
    order: &[usize],
) -> Result<SemParams> {
    let p = theta.p();
    check_order(p, order)?;
    let rev: Vec<usize> = order.iter().rev().copied().collect();
    let t = DMatrix::from_fn(p, p, |a, c| theta.matrix()[(rev[a], rev[c])]);
    let l = t.cholesky().ok_or(Error::NotPositiveDefinite)?.unpack();
    let mut b = DMatrix::zeros(p, p);
    let mut omega = DVector::zeros(p);
    for a in 0..p {
        let d = l[(a, a)];
        omega[rev[a]] = 1.0 / (d * d);
        for c in 0..a {
            b[(rev[a], rev[c])] = -l[(a, c)] / l[(c, c)];
        }
    }
    SemParams::new(b, omega)
}

fn factorial(p: usize) -> usize {
    (1..=p).product()
}

/// The `k`-th permutation of `0..p` in lexicographic order.
fn nth_permutation(p: usize, mut k: usize, out: &mut Vec<usize>) {
    let mut pool: Vec<usize> = (0..p).collect();
    out.clear();
    for i in (0..p).rev() {
        let f = factorial(i);
        let idx = k / f;
        k %= f;
        out.push(pool.remove(idx));
    }
}

fn same_within(a: &[f64], b: &[f64], eps: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= eps)
}

fn support_key(b: &[f64], eps: f64) -> Vec<u64> {
    let mut key = vec![0u64; b.len().div_ceil(64)];
    for (idx, v) in b.iter().enumerate() {
        if v.abs() > eps {
            key[idx / 64] |= 1 << (idx % 64);
        }
    }
    key
}

struct Factorization {
    rank: usize,
    b: Vec<f64>,
    omega: Vec<f64>,
}

/// Streams every ordered factorization of `sigma` in lexicographic order, in parallel chunks.
fn for_each_factorization(
    sigma: &CovarianceMatrix,
    mut sink: impl FnMut(Factorization) -> Result<()>,
) -> Result<()> {
    let p = sigma.p();
    let flat: Vec<f64> = sigma.matrix().transpose().as_slice().to_vec();
    let total = factorial(p);
    let mut start = 0;
    while start < total {
        let end = (start + CHUNK).min(total);
        let batch: Vec<Option<Factorization>> = (start..end)
            .into_par_iter()
            .map_init(
                || (Vec::with_capacity(p), vec![0.0; p * p]),
                |(order, chol), rank| {
                    nth_permutation(p, rank, order);
                    let mut b = vec![0.0; p * p];
                    let mut omega = vec![0.0; p];
                    ordered_regression(&flat, p, order, chol, &mut b, &mut omega)
                        .then_some(Factorization { rank, b, omega })
                },
            )
            .collect();
        for f in batch {
            sink(f.ok_or(Error::NotPositiveDefinite)?)?;
        }
        start = end;
    }
    Ok(())
}

/// All distinct factorizations of `theta`, using the default enumeration cap.
pub fn enumerate_class(theta: &PrecisionMatrix, eps: f64) -> Result<EquivalenceClass> {
    enumerate_class_with_cap(theta, eps, DEFAULT_CAP)
}

pub fn enumerate_class_with_cap(
    theta: &PrecisionMatrix,
    eps: f64,
    cap: usize,
) -> Result<EquivalenceClass> {
    let p = theta.p();
    if p > cap {
        return Err(Error::CapacityExceeded { p, cap });
    }
    if !(eps >= 0.0) {
        return Err(Error::InvalidParams("eps must be >= 0".into()));
    }
    let sigma = theta.inverse();
    struct Draft {
        b: Vec<f64>,
        omega: Vec<f64>,
        ranks: Vec<usize>,
    }
    let mut order_of_first: Vec<(Vec<u64>, usize)> = Vec::new();
    let mut groups: HashMap<Vec<u64>, Vec<Draft>> = HashMap::new();
    for_each_factorization(&sigma, |f| {
        let key = support_key(&f.b, eps);
        let group = groups.entry(key.clone()).or_default();
        match group
            .iter_mut()
            .find(|d| same_within(&d.b, &f.b, eps) && same_within(&d.omega, &f.omega, eps))
        {
            Some(d) => d.ranks.push(f.rank),
            None => {
                order_of_first.push((key, group.len()));
                group.push(Draft {
                    b: f.b,
                    omega: f.omega,
                    ranks: vec![f.rank],
                });
            }
        }
        Ok(())
    })?;

    let mut members = Vec::with_capacity(order_of_first.len());
    for (key, idx) in order_of_first {
        let d = &groups[&key][idx];
        let params = to_params(p, &d.b, &d.omega)?;
        let orderings = d
            .ranks
            .iter()
            .map(|&r| {
                let mut o = Vec::with_capacity(p);
                nth_permutation(p, r, &mut o);
                o
            })
            .collect();
        let nll = nll_full(&params, &sigma)?;
        members.push(ClassMember {
            edge_count: count_edges(params.b(), eps),
            params,
            orderings,
            nll,
        });
    }
    Ok(EquivalenceClass { p, eps, members })
}

/// Members attaining the minimum edge count, with `tau` and `delta0 = tau / (1 + delta_margin)`.
pub fn minimal_class(ec: &EquivalenceClass, delta_margin: f64) -> Result<MinimalClass> {
    if ec.is_empty() {
        return Err(Error::InvalidParams("equivalence class is empty".into()));
    }
    if !(delta_margin > 0.0) {
        return Err(Error::InvalidParams("delta margin must be > 0".into()));
    }
    let min_edges = ec.members.iter().map(|m| m.edge_count).min().unwrap_or(0);
    let tau = ec
        .members
        .iter()
        .flat_map(|m| m.params.b().iter().copied())
        .map(f64::abs)
        .filter(|v| *v > ec.eps)
        .fold(f64::INFINITY, f64::min);
    Ok(MinimalClass {
        members: ec
            .members
            .iter()
            .filter(|m| m.edge_count == min_edges)
            .cloned()
            .collect(),
        min_edges,
        tau,
        delta_margin,
        delta0: tau / (1.0 + delta_margin),
    })
}

/// Candidate configurations considered by [`exact_regularized_optimum`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Candidates {
    /// Only the full factorization of each ordering.
    Orderings,
    /// Every ordering together with every subset of the admissible parents of each node,
    /// coefficients refit by least squares on the chosen parents.
    #[default]
    ParentSets,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExactOptions {
    pub eps: f64,
    pub cap: usize,
    pub candidates: Candidates,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            eps: POPULATION_EPS,
            cap: DEFAULT_CAP,
            candidates: Candidates::ParentSets,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimumMember {
    pub params: SemParams,
    pub edge_count: usize,
    pub nll: f64,
    pub penalty: f64,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExactOptimum {
    pub score: f64,
    pub members: Vec<OptimumMember>,
}

impl ExactOptimum {
    pub fn supports(&self, eps: f64) -> std::collections::BTreeSet<DagStructure> {
        self.members
            .iter()
            .map(|m| support_of(m.params.b(), eps).expect("exact optimum is acyclic"))
            .collect()
    }
}

fn column_penalty(spec: &PenaltySpec, b: &[f64], p: usize, j: usize) -> f64 {
    (0..p)
        .filter(|&i| i != j)
        .map(|i| spec.value(b[i * p + j]))
        .sum()
}

/// Global minimizers of `nll_full + penalty` over the configured candidate set.
pub fn exact_regularized_optimum(
    sigma_hat: &CovarianceMatrix,
    spec: &PenaltySpec,
    opts: &ExactOptions,
) -> Result<ExactOptimum> {
    spec.validate()?;
    let p = sigma_hat.p();
    if p > opts.cap {
        return Err(Error::CapacityExceeded { p, cap: opts.cap });
    }
    let drafts = match opts.candidates {
        Candidates::Orderings => orderings_optimum(sigma_hat, spec, opts.eps)?,
        Candidates::ParentSets => parent_set_optimum(sigma_hat, spec, opts.eps)?,
    };
    let mut members = Vec::with_capacity(drafts.len());
    for (b, omega) in drafts {
        let params = to_params(p, &b, &omega)?;
        let nll = nll_full(&params, sigma_hat)?;
        let penalty = spec.matrix_value(params.b());
        members.push(OptimumMember {
            edge_count: count_edges(params.b(), opts.eps),
            score: nll + penalty,
            params,
            nll,
            penalty,
        });
    }
    let best = members
        .iter()
        .map(|m| m.score)
        .fold(f64::INFINITY, f64::min);
    members.retain(|m| m.score <= best + TIE_TOL);
    Ok(ExactOptimum {
        score: best,
        members,
    })
}

type Draft = (Vec<f64>, Vec<f64>);

fn push_distinct(out: &mut Vec<Draft>, b: Vec<f64>, omega: Vec<f64>, eps: f64) {
    if !out
        .iter()
        .any(|(ob, oo)| same_within(ob, &b, eps) && same_within(oo, &omega, eps))
    {
        out.push((b, omega));
    }
}

fn orderings_optimum(sigma: &CovarianceMatrix, spec: &PenaltySpec, eps: f64) -> Result<Vec<Draft>> {
    let p = sigma.p();
    let mut best = f64::INFINITY;
    let mut out: Vec<(f64, Vec<f64>, Vec<f64>)> = Vec::new();
    for_each_factorization(sigma, |f| {
        let score: f64 = (0..p)
            .map(|j| 0.5 * f.omega[j].ln() + column_penalty(spec, &f.b, p, j))
            .sum();
        if score < best - TIE_TOL {
            best = score;
            out.retain(|(s, _, _)| *s <= best + TIE_TOL);
        }
        if score <= best + TIE_TOL {
            out.push((score, f.b, f.omega));
        }
        Ok(())
    })?;
    let mut drafts = Vec::new();
    for (s, b, o) in out {
        if s <= best + TIE_TOL {
            push_distinct(&mut drafts, b, o, eps);
        }
    }
    Ok(drafts)
}

/// Least-squares fit of node `j` on `parents`: coefficient column and residual variance.
fn local_fit(
    sigma: &DMatrix<f64>,
    j: usize,
    parents: &[usize],
) -> Option<(Vec<(usize, f64)>, f64)> {
    if parents.is_empty() {
        return Some((Vec::new(), sigma[(j, j)]));
    }
    let k = parents.len();
    let s_pp = DMatrix::from_fn(k, k, |a, c| sigma[(parents[a], parents[c])]);
    let s_pj = DVector::from_fn(k, |a, _| sigma[(parents[a], j)]);
    let chol = s_pp.cholesky()?;
    let beta = chol.solve(&s_pj);
    let resid = sigma[(j, j)] - s_pj.dot(&beta);
    if !(resid > 0.0) {
        return None;
    }
    Some((
        parents.iter().copied().zip(beta.iter().copied()).collect(),
        resid,
    ))
}

fn bits(mask: usize, p: usize) -> Vec<usize> {
    (0..p).filter(|k| mask & (1 << k) != 0).collect()
}

struct LocalChoice {
    score: f64,
    coefs: Vec<(usize, f64)>,
    resid: f64,
}

/// Exact dynamic program over orderings and parent subsets, with tie enumeration.
fn parent_set_optimum(
    sigma: &CovarianceMatrix,
    spec: &PenaltySpec,
    eps: f64,
) -> Result<Vec<Draft>> {
    let p = sigma.p();
    let full = (1usize << p) - 1;
    let s = sigma.matrix();

    // local[j][S] for S not containing j
    let mut local: Vec<Vec<Option<LocalChoice>>> = Vec::with_capacity(p);
    for j in 0..p {
        let row: Vec<Option<LocalChoice>> = (0..=full)
            .into_par_iter()
            .map(|mask| {
                if mask & (1 << j) != 0 {
                    return None;
                }
                let parents = bits(mask, p);
                let (coefs, resid) = local_fit(s, j, &parents)?;
                let pen: f64 = coefs.iter().map(|(_, c)| spec.value(*c)).sum();
                Some(LocalChoice {
                    score: 0.5 * resid.ln() + pen,
                    coefs,
                    resid,
                })
            })
            .collect();
        if row[0].is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        local.push(row);
    }

    // best[j][C] = min over S subset of C of local[j][S]
    let mut best = vec![vec![f64::INFINITY; full + 1]; p];
    for j in 0..p {
        for c in 0..=full {
            if c & (1 << j) != 0 {
                continue;
            }
            let mut v = local[j][c].as_ref().map_or(f64::INFINITY, |l| l.score);
            for k in 0..p {
                if c & (1 << k) != 0 {
                    v = v.min(best[j][c & !(1 << k)]);
                }
            }
            best[j][c] = v;
        }
    }

    // f[U] = best score of a DAG on U whose parents stay within U
    let mut f = vec![f64::INFINITY; full + 1];
    f[0] = 0.0;
    for u in 1..=full {
        let mut v = f64::INFINITY;
        for j in 0..p {
            if u & (1 << j) != 0 {
                let rest = u & !(1 << j);
                v = v.min(f[rest] + best[j][rest]);
            }
        }
        f[u] = v;
    }

    // distinct optimal columns for node j with admissible parents C
    let optimal_columns = |j: usize, c: usize| -> Vec<(Vec<(usize, f64)>, f64)> {
        let target = best[j][c];
        let mut cols: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        let mut sub = c;
        loop {
            if let Some(l) = &local[j][sub] {
                if l.score <= target + TIE_TOL {
                    let dense = dense_column(&l.coefs, p);
                    if !cols.iter().any(|(cc, r)| {
                        same_within(&dense_column(cc, p), &dense, eps) && (r - l.resid).abs() <= eps
                    }) {
                        cols.push((l.coefs.clone(), l.resid));
                    }
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & c;
        }
        cols
    };

    // memoized partial solutions: (B restricted to U's columns, omega on U)
    let mut memo: HashMap<usize, Vec<Draft>> = HashMap::new();
    memo.insert(0, vec![(vec![0.0; p * p], vec![0.0; p])]);
    let mut by_size: Vec<usize> = (1..=full).collect();
    by_size.sort_by_key(|u| (u.count_ones(), *u));
    let mut needed = vec![false; full + 1];
    needed[full] = true;
    // mark the states reachable backwards from the full set along optimal moves
    for u in (1..=full).rev() {
        if !needed[u] {
            continue;
        }
        for j in 0..p {
            if u & (1 << j) != 0 {
                let rest = u & !(1 << j);
                if f[rest] + best[j][rest] <= f[u] + TIE_TOL {
                    needed[rest] = true;
                }
            }
        }
    }
    for u in by_size {
        if !needed[u] {
            continue;
        }
        let mut sols: Vec<Draft> = Vec::new();
        for j in 0..p {
            if u & (1 << j) == 0 {
                continue;
            }
            let rest = u & !(1 << j);
            if f[rest] + best[j][rest] > f[u] + TIE_TOL {
                continue;
            }
            let cols = optimal_columns(j, rest);
            let Some(prev) = memo.get(&rest) else {
                continue;
            };
            for (pb, po) in prev {
                for (coefs, resid) in &cols {
                    let mut b = pb.clone();
                    let mut o = po.clone();
                    for &(i, v) in coefs {
                        b[i * p + j] = v;
                    }
                    o[j] = *resid;
                    push_distinct(&mut sols, b, o, eps);
                }
            }
        }
        memo.insert(u, sols);
    }
    Ok(memo.remove(&full).unwrap_or_default())
}

fn dense_column(coefs: &[(usize, f64)], p: usize) -> Vec<f64> {
    let mut v = vec![0.0; p];
    for &(i, c) in coefs {
        v[i] = c;
    }
    v
}

/// Result of the empirical lambda crossover search.
#[derive(Debug, Clone)]
pub struct Crossover {
    /// Largest probed lambda whose optimum support set equals the one at `lo`.
    pub lambda_below: f64,
    /// Smallest probed lambda whose optimum differs.
    pub lambda_above: f64,
    pub reference: ExactOptimum,
}

/// Bisects lambda (in log scale) between `lo` and `hi` for the point where the
/// exact optimum's support set stops matching the one at `lo`.
pub fn lambda_crossover(
    sigma_hat: &CovarianceMatrix,
    base: &PenaltySpec,
    lo: f64,
    hi: f64,
    iterations: usize,
    opts: &ExactOptions,
) -> Result<Crossover> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidParams("need 0 < lo < hi".into()));
    }
    let at = |lam: f64| -> Result<ExactOptimum> {
        let spec = PenaltySpec {
            lambda: lam,
            ..*base
        };
        exact_regularized_optimum(sigma_hat, &spec, opts)
    };
    let reference = at(lo)?;
    let ref_supports = reference.supports(opts.eps);
    if at(hi)?.supports(opts.eps) == ref_supports {
        return Ok(Crossover {
            lambda_below: hi,
            lambda_above: f64::INFINITY,
            reference,
        });
    }
    let (mut a, mut b) = (lo.ln(), hi.ln());
    for _ in 0..iterations {
        let mid = 0.5 * (a + b);
        if at(mid.exp())?.supports(opts.eps) == ref_supports {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(Crossover {
        lambda_below: a.exp(),
        lambda_above: b.exp(),
        reference,
    })
}
