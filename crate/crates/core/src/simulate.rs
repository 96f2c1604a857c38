// SPDX-License-Identifier: Apache-2.0
//! Random DAGs, SEM weights and samples, standardization and sample covariance.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{topological_sort, DagStructure};
use crate::sem::{CovarianceMatrix, Dataset, SemParams, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphKind {
    #[serde(rename = "ER")]
    Er,
    #[serde(rename = "SF")]
    Sf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearGaussian,
    Logistic,
}

fn default_weight_range() -> (f64, f64) {
    (0.5, 1.5)
}

fn default_noise_range() -> (f64, f64) {
    (0.1, 0.7)
}

fn default_model() -> ModelKind {
    ModelKind::LinearGaussian
}

/// Simulation settings. `k` sets the expected number of edges to `k * p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub p: usize,
    pub k: usize,
    pub graph_kind: GraphKind,
    #[serde(default = "default_weight_range")]
    pub weight_range: (f64, f64),
    /// Range of noise standard deviations.
    #[serde(default = "default_noise_range")]
    pub noise_std_range: (f64, f64),
    pub n: usize,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.p < 2 {
            return fail(format!("p must be >= 2, got {}", self.p));
        }
        if self.k < 1 {
            return fail(format!("k must be >= 1, got {}", self.k));
        }
        if self.k * self.p > self.p * (self.p - 1) / 2 {
            return fail(format!(
                "k * p = {} exceeds the {} possible edges for p = {}",
                self.k * self.p,
                self.p * (self.p - 1) / 2,
                self.p
            ));
        }
        if self.n < 1 {
            return fail("n must be >= 1".into());
        }
        for (name, (lo, hi)) in [
            ("weight_range", self.weight_range),
            ("noise_std_range", self.noise_std_range),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return fail(format!(
                    "{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})"
                ));
            }
        }
        Ok(())
    }
}

/// Deterministic generator for replicate `stream` of a run seeded with `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gen_graph(cfg: &SimConfig, rng: &mut impl Rng) -> Result<DagStructure> {
    cfg.validate()?;
    match cfg.graph_kind {
        GraphKind::Er => Ok(erdos_renyi(cfg.p, cfg.k, rng)),
        GraphKind::Sf => Ok(scale_free(cfg.p, cfg.k, rng)),
    }
}

fn erdos_renyi(p: usize, k: usize, rng: &mut impl Rng) -> DagStructure {
    let prob = (k * p) as f64 / (p * (p - 1) / 2) as f64;
    let mut perm: Vec<usize> = (0..p).collect();
    perm.shuffle(rng);
    let mut edges = Vec::new();
    for a in 0..p {
        for c in (a + 1)..p {
            if rng.random::<f64>() < prob {
                edges.push((perm[a], perm[c]));
            }
        }
    }
    DagStructure::from_edges(p, &edges).expect("edges follow a permutation order")
}

/// Preferential attachment: `k` seed nodes, then each new node links to `k`
/// distinct existing nodes chosen proportionally to degree, oriented new -> old.
fn scale_free(p: usize, k: usize, rng: &mut impl Rng) -> DagStructure {
    let mut edges = Vec::new();
    let mut repeated: Vec<usize> = Vec::new();
    for t in k..p {
        let targets: Vec<usize> = if t == k {
            (0..k).collect()
        } else {
            let mut chosen = Vec::with_capacity(k);
            while chosen.len() < k {
                let cand = repeated[rng.random_range(0..repeated.len())];
                if !chosen.contains(&cand) {
                    chosen.push(cand);
                }
            }
            chosen
        };
        for &s in &targets {
            edges.push((t, s));
            repeated.push(s);
            repeated.push(t);
        }
    }
    let mut label: Vec<usize> = (0..p).collect();
    label.shuffle(rng);
    let relabeled: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (label[a], label[b])).collect();
    DagStructure::from_edges(p, &relabeled).expect("attachment edges point to older nodes")
}

/// Weights with magnitude uniform on `weight_range` and a random sign; noise
/// variances are squared draws from `noise_std_range` (all ones for the logistic model).
pub fn assign_weights(g: &DagStructure, cfg: &SimConfig, rng: &mut impl Rng) -> Result<SemParams> {
    let p = g.p();
    let (lo, hi) = cfg.weight_range;
    let mut b = DMatrix::zeros(p, p);
    for (i, j) in g.edges() {
        let mag = lo + (hi - lo) * rng.random::<f64>();
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        b[(i, j)] = sign * mag;
    }
    let omega = match cfg.model {
        ModelKind::LinearGaussian => {
            let (nlo, nhi) = cfg.noise_std_range;
            DVector::from_fn(p, |_, _| {
                let sd = nlo + (nhi - nlo) * rng.random::<f64>();
                sd * sd
            })
        }
        ModelKind::Logistic => DVector::from_element(p, 1.0),
    };
    SemParams::new(b, omega)
}

fn ancestral_order(b: &WeightMatrix) -> Result<Vec<usize>> {
    let g = crate::graph::support_of(b, 0.0)?;
    topological_sort(&g)
}

pub fn sample_gaussian(params: &SemParams, n: usize, rng: &mut impl Rng) -> Result<Dataset> {
    let b = params.b();
    let order = ancestral_order(b)?;
    let p = params.p();
    let sd: Vec<f64> = params.omega().iter().map(|w| w.sqrt()).collect();
    let mut x = DMatrix::zeros(n, p);
    for r in 0..n {
        for &j in &order {
            let mut v = sd[j] * rng.sample::<f64, _>(StandardNormal);
            for i in 0..p {
                let w = b[(i, j)];
                if w != 0.0 {
                    v += w * x[(r, i)];
                }
            }
            x[(r, j)] = v;
        }
    }
    Dataset::new(x, None)
}

pub fn sample_logistic(b: &WeightMatrix, n: usize, rng: &mut impl Rng) -> Result<Dataset> {
    let order = ancestral_order(b)?;
    let p = b.nrows();
    let mut x = DMatrix::zeros(n, p);
    for r in 0..n {
        for &j in &order {
            let mut logit = 0.0f64;
            for i in 0..p {
                let w = b[(i, j)];
                if w != 0.0 {
                    logit += w * x[(r, i)];
                }
            }
            let prob = 1.0 / (1.0 + (-logit).exp());
            x[(r, j)] = if rng.random::<f64>() < prob { 1.0 } else { 0.0 };
        }
    }
    Dataset::new(x, None)
}

/// Output of [`simulate`].
#[derive(Debug, Clone)]
pub struct Simulation {
    pub graph: DagStructure,
    pub params: SemParams,
    pub data: Dataset,
}

/// Graph, weights and data from one seed.
pub fn simulate(cfg: &SimConfig) -> Result<Simulation> {
    simulate_replicate(cfg, 0)
}

/// Replicate `index` of `cfg`, drawn from its own stream of `cfg.seed`.
pub fn simulate_replicate(cfg: &SimConfig, index: u64) -> Result<Simulation> {
    let mut rng = rng_for(cfg.seed, index);
    let graph = gen_graph(cfg, &mut rng)?;
    let params = assign_weights(&graph, cfg, &mut rng)?;
    let data = match cfg.model {
        ModelKind::LinearGaussian => sample_gaussian(&params, cfg.n, &mut rng)?,
        ModelKind::Logistic => sample_logistic(params.b(), cfg.n, &mut rng)?,
    };
    Ok(Simulation {
        graph,
        params,
        data,
    })
}

fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows() as f64;
    DVector::from_fn(x.ncols(), |j, _| x.column(j).sum() / n)
}

/// Centers columns and scales them to unit sample variance (divisor `n - 1`).
pub fn standardize(data: &Dataset) -> Result<Dataset> {
    let x = data.x();
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidData("standardization needs n >= 2".into()));
    }
    let mu = column_means(x);
    let mut z = x.clone();
    for j in 0..x.ncols() {
        let mut ss = 0.0;
        for r in 0..n {
            let d = x[(r, j)] - mu[j];
            z[(r, j)] = d;
            ss += d * d;
        }
        let sd = (ss / (n - 1) as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::ZeroVariance(data.column_name(j)));
        }
        z.column_mut(j).iter_mut().for_each(|v| *v /= sd);
    }
    Dataset::new(z, data.names().map(|s| s.to_vec()))
}

/// `(1/n) X^T X`, optionally after centering each column.
pub fn sample_covariance_matrix(data: &Dataset, centered: bool) -> DMatrix<f64> {
    let x = data.x();
    let n = x.nrows() as f64;
    let xc = if centered {
        let mu = column_means(x);
        let mut xc = x.clone();
        for j in 0..x.ncols() {
            xc.column_mut(j).iter_mut().for_each(|v| *v -= mu[j]);
        }
        xc
    } else {
        x.clone()
    };
    let mut s = xc.transpose() * &xc / n;
    let p = s.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (s[(i, j)] + s[(j, i)]);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// Sample covariance validated as positive definite.
pub fn sample_covariance(data: &Dataset, centered: bool) -> Result<CovarianceMatrix> {
    if data.n() < data.p() + 1 {
        log::warn!(
            "n = {} < p + 1 = {}; the sample covariance may be singular",
            data.n(),
            data.p() + 1
        );
    }
    CovarianceMatrix::new(sample_covariance_matrix(data, centered))
}
