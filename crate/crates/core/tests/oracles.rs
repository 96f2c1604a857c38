// SPDX-License-Identifier: Apache-2.0
//! Cross-checks against brute-force reference computations.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsedag::exact::{exact_regularized_optimum, ExactOptions};
use sparsedag::sem::{self, CovarianceMatrix, SemParams};
use sparsedag::{cpdag_of, enumerate_class, mec_equal, DagStructure, PenaltySpec};

fn all_dags(p: usize) -> Vec<DagStructure> {
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|i| ((i + 1)..p).map(move |j| (i, j)))
        .collect();
    let mut out = Vec::new();
    for code in 0..3usize.pow(pairs.len() as u32) {
        let mut c = code;
        let mut edges = Vec::new();
        for &(i, j) in &pairs {
            match c % 3 {
                1 => edges.push((i, j)),
                2 => edges.push((j, i)),
                _ => {}
            }
            c /= 3;
        }
        if let Ok(g) = DagStructure::from_edges(p, &edges) {
            out.push(g);
        }
    }
    out
}

fn ancestors(g: &DagStructure, seed: &BTreeSet<usize>) -> BTreeSet<usize> {
    let mut set = seed.clone();
    let mut stack: Vec<usize> = seed.iter().copied().collect();
    while let Some(v) = stack.pop() {
        for u in g.parents(v) {
            if set.insert(u) {
                stack.push(u);
            }
        }
    }
    set
}

/// Moralized ancestral graph test.
fn d_separated(g: &DagStructure, x: usize, y: usize, cond: &BTreeSet<usize>) -> bool {
    let mut seed = cond.clone();
    seed.insert(x);
    seed.insert(y);
    let keep = ancestors(g, &seed);
    let p = g.p();
    let mut adj = vec![BTreeSet::new(); p];
    for &v in &keep {
        let pa: Vec<usize> = g.parents(v).collect();
        for &u in &pa {
            adj[u].insert(v);
            adj[v].insert(u);
        }
        for a in 0..pa.len() {
            for b in (a + 1)..pa.len() {
                adj[pa[a]].insert(pa[b]);
                adj[pa[b]].insert(pa[a]);
            }
        }
    }
    let mut seen = BTreeSet::from([x]);
    let mut stack = vec![x];
    while let Some(v) = stack.pop() {
        if v == y {
            return false;
        }
        for &w in &adj[v] {
            if keep.contains(&w) && !cond.contains(&w) && seen.insert(w) {
                stack.push(w);
            }
        }
    }
    true
}

fn independence_signature(g: &DagStructure) -> Vec<bool> {
    let p = g.p();
    let mut sig = Vec::new();
    for x in 0..p {
        for y in (x + 1)..p {
            let rest: Vec<usize> = (0..p).filter(|&v| v != x && v != y).collect();
            for mask in 0..(1usize << rest.len()) {
                let cond = rest
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mask >> k & 1 == 1)
                    .map(|(_, &v)| v)
                    .collect();
                sig.push(d_separated(g, x, y, &cond));
            }
        }
    }
    sig
}

#[test]
fn mec_matches_d_separation_on_four_nodes() {
    let dags = all_dags(4);
    assert_eq!(dags.len(), 543);
    let mut by_sig: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for (k, g) in dags.iter().enumerate() {
        by_sig.entry(independence_signature(g)).or_default().push(k);
    }
    assert_eq!(by_sig.len(), 185);
    let cpdags: BTreeSet<_> = dags.iter().map(|g| format!("{:?}", cpdag_of(g))).collect();
    assert_eq!(cpdags.len(), 185);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let groups: Vec<&Vec<usize>> = by_sig.values().collect();
    for grp in &groups {
        for w in grp.windows(2) {
            assert!(mec_equal(&dags[w[0]], &dags[w[1]]));
            assert_eq!(cpdag_of(&dags[w[0]]), cpdag_of(&dags[w[1]]));
        }
    }
    for _ in 0..2000 {
        let (a, b) = (
            rng.random_range(0..groups.len()),
            rng.random_range(0..groups.len()),
        );
        if a != b {
            assert!(!mec_equal(&dags[groups[a][0]], &dags[groups[b][0]]));
        }
    }
}

fn regression_member(sigma: &DMatrix<f64>, order: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let p = sigma.nrows();
    let mut b = DMatrix::zeros(p, p);
    let mut omega = DVector::zeros(p);
    for (k, &j) in order.iter().enumerate() {
        let pre = &order[..k];
        if pre.is_empty() {
            omega[j] = sigma[(j, j)];
            continue;
        }
        let spp = DMatrix::from_fn(k, k, |a, c| sigma[(pre[a], pre[c])]);
        let spj = DVector::from_fn(k, |a, _| sigma[(pre[a], j)]);
        let beta = spp.lu().solve(&spj).unwrap();
        for (a, &i) in pre.iter().enumerate() {
            b[(i, j)] = beta[a];
        }
        omega[j] = sigma[(j, j)] - spj.dot(&beta);
    }
    (b, omega)
}

fn permutations(p: usize) -> Vec<Vec<usize>> {
    if p == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in permutations(p - 1) {
        for pos in 0..=rest.len() {
            let mut v = rest.clone();
            v.insert(pos, p - 1);
            out.push(v);
        }
    }
    out
}

fn random_sparse_params(p: usize, rng: &mut ChaCha8Rng) -> SemParams {
    let b = DMatrix::from_fn(p, p, |i, j| {
        if i < j && rng.random_bool(0.5) {
            rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 }
        } else {
            0.0
        }
    });
    SemParams::new(b, DVector::from_fn(p, |_, _| rng.random_range(0.3..1.5))).unwrap()
}

#[test]
fn class_equals_ordered_regressions() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..10 {
        let p = rng.random_range(2..5);
        let truth = random_sparse_params(p, &mut rng);
        let sigma = sem::covariance_of(&truth).unwrap();
        let theta = sem::precision_of(&truth).unwrap();
        let ec = enumerate_class(&theta, 1e-8).unwrap();
        let mut oracle: Vec<(DMatrix<f64>, DVector<f64>)> = Vec::new();
        for order in permutations(p) {
            let (b, w) = regression_member(sigma.matrix(), &order);
            let b = b.map(|v| if v.abs() <= 1e-8 { 0.0 } else { v });
            if !oracle.iter().any(|(ob, _)| (ob - &b).amax() < 1e-8) {
                oracle.push((b, w));
            }
        }
        assert_eq!(ec.len(), oracle.len());
        for m in &ec.members {
            let hit = oracle
                .iter()
                .find(|(ob, _)| (ob - m.params.b()).amax() < 1e-8)
                .expect("member in oracle");
            assert!((&hit.1 - m.params.omega()).amax() < 1e-8);
            let back = sem::covariance_of(&m.params).unwrap();
            assert!((back.matrix() - sigma.matrix()).amax() < 1e-9);
        }
    }
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-12 * hi.max(1.0) {
        let a = hi - r * (hi - lo);
        let b = lo + r * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn profile_noise_minimizes_full_nll() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let p = rng.random_range(2..6);
        let a = DMatrix::from_fn(p, p + 2, |_, _| rng.random_range(-1.0..1.0));
        let s = CovarianceMatrix::new(&a * a.transpose() + DMatrix::identity(p, p) * 0.1).unwrap();
        let b = DMatrix::from_fn(p, p, |i, j| {
            if i == j {
                0.0
            } else {
                rng.random_range(-0.3..0.3)
            }
        });
        let profiled = sem::profile_noise(&b, &s);
        let mut omega = DVector::from_element(p, 1.0);
        for j in 0..p {
            let f = |w: f64| {
                let mut o = omega.clone();
                o[j] = w;
                sem::nll_full(&SemParams::new(b.clone(), o).unwrap(), &s).unwrap()
            };
            omega[j] = golden_min(f, 1e-4, 100.0);
        }
        for j in 0..p {
            assert!(
                (omega[j] - profiled[j]).abs() < 1e-6 * profiled[j].max(1.0),
                "{omega} vs {profiled}"
            );
        }
        let full = sem::nll_full(&SemParams::new(b.clone(), profiled).unwrap(), &s).unwrap();
        assert!((full - sem::nll_profile(&b, &s).unwrap()).abs() < 1e-10);
    }
}

/// Regularized score of every DAG at its least-squares fit.
fn brute_force_optimum(s: &CovarianceMatrix, spec: &PenaltySpec) -> f64 {
    let p = s.p();
    let mut best = f64::INFINITY;
    for g in all_dags(p) {
        let mut b = DMatrix::zeros(p, p);
        for j in 0..p {
            let pa: Vec<usize> = g.parents(j).collect();
            if pa.is_empty() {
                continue;
            }
            let m = s.matrix();
            let spp = DMatrix::from_fn(pa.len(), pa.len(), |a, c| m[(pa[a], pa[c])]);
            let spj = DVector::from_fn(pa.len(), |a, _| m[(pa[a], j)]);
            let beta = spp.lu().solve(&spj).unwrap();
            for (a, &i) in pa.iter().enumerate() {
                b[(i, j)] = beta[a];
            }
        }
        let omega = sem::profile_noise(&b, s);
        let params = SemParams::new(b, omega).unwrap();
        let score = sem::nll_full(&params, s).unwrap() + spec.matrix_value(params.b());
        best = best.min(score);
    }
    best
}

#[test]
fn exact_optimum_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..8 {
        let p = rng.random_range(2..5);
        let a = DMatrix::from_fn(p, 2 * p, |_, _| rng.random_range(-1.0..1.0));
        let s = CovarianceMatrix::new(
            &a * a.transpose() / (2 * p) as f64 + DMatrix::identity(p, p) * 0.3,
        )
        .unwrap();
        for spec in [
            PenaltySpec::quasi_mcp(0.05, 0.2).unwrap(),
            PenaltySpec::quasi_mcp(0.3, 0.5).unwrap(),
            PenaltySpec::l1(0.1).unwrap(),
        ] {
            let opt = exact_regularized_optimum(&s, &spec, &ExactOptions::default()).unwrap();
            let want = brute_force_optimum(&s, &spec);
            assert!((opt.score - want).abs() < 1e-9, "{} vs {want}", opt.score);
        }
    }
}
