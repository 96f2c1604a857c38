// SPDX-License-Identifier: Apache-2.0
//! Benchmark sweeps: a grid over simulated models and methods, and the
//! quasi-MCP width sweep on a fixed population model.
//!
//! Replicate rows carry wall-clock seconds; summaries are computed from the
//! rows' outcomes only, so they are reproducible byte for byte.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sparsedag::exact::{minimal_class, MinimalClass, POPULATION_EPS};
use sparsedag::io;
use sparsedag::sem::{self, CovarianceMatrix, SemParams};
use sparsedag::simulate::{self, rng_for, GraphKind, ModelKind, SimConfig};
use sparsedag::solver::warm_start_path_from;
use sparsedag::{
    cpdag_of, enumerate_class, shd_cpdag, DagStructure, Error, PenaltySpec, Result, ScoreData,
    SolverConfig,
};

use crate::{evaluate, fit_dataset, FitMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    #[serde(default)]
    pub mode: FitMode,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_p() -> Vec<usize> {
    vec![10]
}
fn default_k() -> Vec<usize> {
    vec![2]
}
fn default_graphs() -> Vec<GraphKind> {
    vec![GraphKind::Er]
}
fn default_models() -> Vec<ModelKind> {
    vec![ModelKind::LinearGaussian]
}
fn default_standardize() -> Vec<bool> {
    vec![false]
}
fn default_n() -> usize {
    1000
}
fn default_weights() -> (f64, f64) {
    (0.5, 1.5)
}
fn default_noise() -> (f64, f64) {
    (0.1, 0.7)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default = "default_p")]
    pub p: Vec<usize>,
    #[serde(default = "default_k")]
    pub k: Vec<usize>,
    #[serde(default = "default_graphs")]
    pub graph_kind: Vec<GraphKind>,
    #[serde(default = "default_models")]
    pub model: Vec<ModelKind>,
    /// Listing both `false` and `true` fits every replicate raw and standardized.
    #[serde(default = "default_standardize")]
    pub standardize: Vec<bool>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_weights")]
    pub weight_range: (f64, f64),
    #[serde(default = "default_noise")]
    pub noise_std_range: (f64, f64),
    pub methods: Vec<MethodSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fixture {
    /// `0 -> 1`, `0 -> 2` with unit weights and unit noise.
    Fork,
    Custom {
        b: Vec<Vec<f64>>,
        omega: Vec<f64>,
    },
}

impl Fixture {
    pub fn params(&self) -> Result<SemParams> {
        match self {
            Fixture::Fork => {
                let mut b = DMatrix::zeros(3, 3);
                b[(0, 1)] = 1.0;
                b[(0, 2)] = 1.0;
                SemParams::new(b, DVector::from_element(3, 1.0))
            }
            Fixture::Custom { b, omega } => {
                let p = omega.len();
                if b.len() != p || b.iter().any(|r| r.len() != p) {
                    return Err(Error::Config(format!("fixture B must be {p}x{p}")));
                }
                SemParams::new(
                    DMatrix::from_fn(p, p, |i, j| b[i][j]),
                    DVector::from_vec(omega.clone()),
                )
            }
        }
    }
}

fn default_fractions() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}
fn default_init_range() -> f64 {
    5.0
}
fn default_margin() -> f64 {
    1.0
}
fn default_fixture() -> Fixture {
    Fixture::Fork
}

/// Width sweep: `delta = fraction * delta0` on the fixture's population
/// covariance, one solver run per random initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaSweepSpec {
    #[serde(default = "default_fixture")]
    pub fixture: Fixture,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    /// Initial entries are uniform on `[-init_range, init_range]`.
    #[serde(default = "default_init_range")]
    pub init_range: f64,
    #[serde(default = "default_margin")]
    pub delta_margin: f64,
    /// Lambda and threshold come from here; the width is overridden.
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Design {
    Grid(GridSpec),
    DeltaSweep(DeltaSweepSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: String,
    /// Datasets per grid cell, or initializations per width in a sweep.
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<std::path::PathBuf>,
    #[serde(flatten)]
    pub design: Design,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        match &self.design {
            Design::Grid(g) => {
                let mut names = BTreeSet::new();
                if g.methods.is_empty() {
                    return Err(Error::Config("grid needs at least one method".into()));
                }
                for m in &g.methods {
                    if !names.insert(m.name.as_str()) {
                        return Err(Error::Config(format!("duplicate method name `{}`", m.name)));
                    }
                    m.solver.validate()?;
                }
                if g.p.is_empty()
                    || g.k.is_empty()
                    || g.graph_kind.is_empty()
                    || g.model.is_empty()
                    || g.standardize.is_empty()
                {
                    return Err(Error::Config(
                        "every grid axis needs at least one value".into(),
                    ));
                }
                for cell in g.cells(self.seed) {
                    cell.sim.validate()?;
                }
            }
            Design::DeltaSweep(d) => {
                if d.fractions.is_empty() || d.fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
                    return Err(Error::Config("fractions must lie in (0, 1)".into()));
                }
                if !(d.init_range > 0.0) {
                    return Err(Error::Config("init_range must be > 0".into()));
                }
                d.solver.validate()?;
                d.fixture.params()?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Cell {
    index: usize,
    sim: SimConfig,
    standardize: bool,
}

impl GridSpec {
    fn cells(&self, seed: u64) -> Vec<Cell> {
        let mut out = Vec::new();
        for &p in &self.p {
            for &k in &self.k {
                for &graph_kind in &self.graph_kind {
                    for &model in &self.model {
                        for &standardize in &self.standardize {
                            out.push(Cell {
                                index: out.len(),
                                sim: SimConfig {
                                    p,
                                    k,
                                    graph_kind,
                                    weight_range: self.weight_range,
                                    noise_std_range: self.noise_std_range,
                                    n: self.n,
                                    model,
                                    seed,
                                },
                                standardize,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Invalid,
    Error,
}

impl Status {
    fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Invalid => "invalid",
            Status::Error => "error",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridRow {
    pub cell: usize,
    pub p: usize,
    pub k: usize,
    pub graph_kind: GraphKind,
    pub model: ModelKind,
    pub standardize: bool,
    pub method: String,
    pub replicate: usize,
    pub status: Status,
    /// `-1` for invalid, `None` on error.
    pub shd: Option<i64>,
    pub edges: Option<usize>,
    pub seconds: f64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub fraction: f64,
    pub delta: f64,
    pub init: usize,
    pub status: Status,
    pub shd: Option<i64>,
    pub distance: Option<f64>,
    pub seconds: f64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub enum BenchRows {
    Grid(Vec<GridRow>),
    DeltaSweep {
        mc: MinimalClass,
        rows: Vec<SweepRow>,
    },
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub rows: BenchRows,
    pub summary_csv: String,
    pub paired_csv: Option<String>,
}

/// Mean and standard error (`NaN` when undefined).
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / m;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

fn num(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

fn opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map(T::to_string).unwrap_or_default()
}

fn graph_name(g: GraphKind) -> &'static str {
    match g {
        GraphKind::Er => "ER",
        GraphKind::Sf => "SF",
    }
}

fn model_name(m: ModelKind) -> &'static str {
    match m {
        ModelKind::LinearGaussian => "linear_gaussian",
        ModelKind::Logistic => "logistic",
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn run_grid_task(cell: &Cell, method: &MethodSpec, rep: usize) -> GridRow {
    let t0 = Instant::now();
    let outcome = (|| -> Result<(i64, usize)> {
        let sim = simulate::simulate_replicate(&cell.sim, rep as u64)?;
        let data = if cell.standardize {
            simulate::standardize(&sim.data)?
        } else {
            sim.data
        };
        let r = fit_dataset(&data, method.mode, &method.solver)?;
        let m = evaluate(&r.b_est, &sim.graph, method.solver.threshold)?;
        Ok((m.shd, m.est_edges))
    })();
    let (status, shd, edges, message) = match outcome {
        Ok((shd, e)) => (
            if shd < 0 { Status::Invalid } else { Status::Ok },
            Some(shd),
            Some(e),
            String::new(),
        ),
        Err(e) => (Status::Error, None, None, e.to_string()),
    };
    GridRow {
        cell: cell.index,
        p: cell.sim.p,
        k: cell.sim.k,
        graph_kind: cell.sim.graph_kind,
        model: cell.sim.model,
        standardize: cell.standardize,
        method: method.name.clone(),
        replicate: rep,
        status,
        shd,
        edges,
        seconds: t0.elapsed().as_secs_f64(),
        message,
    }
}

fn grid_rows_csv(rows: &[GridRow]) -> String {
    let mut s = String::from(
        "cell,p,k,graph,model,standardize,method,replicate,status,shd,edges,seconds,message\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.cell,
            r.p,
            r.k,
            graph_name(r.graph_kind),
            model_name(r.model),
            r.standardize,
            csv_field(&r.method),
            r.replicate,
            r.status.as_str(),
            opt(&r.shd),
            opt(&r.edges),
            r.seconds,
            csv_field(&r.message)
        );
    }
    s
}

/// SHD statistics are over valid runs; invalid and failed runs are counted separately.
fn grid_summary_csv(rows: &[GridRow]) -> String {
    let mut s = String::from(
        "cell,p,k,graph,model,standardize,method,runs,ok,invalid,errors,mean_shd,se_shd,mean_edges\n",
    );
    let mut keys: Vec<(usize, &str)> = rows.iter().map(|r| (r.cell, r.method.as_str())).collect();
    keys.dedup();
    for (cell, method) in keys {
        let group: Vec<&GridRow> = rows
            .iter()
            .filter(|r| r.cell == cell && r.method == method)
            .collect();
        let ok: Vec<&GridRow> = group
            .iter()
            .copied()
            .filter(|r| r.status == Status::Ok)
            .collect();
        let count = |st: Status| group.iter().filter(|r| r.status == st).count();
        let (mean, se) = mean_se(&ok.iter().map(|r| r.shd.unwrap() as f64).collect::<Vec<_>>());
        let (edges, _) = mean_se(
            &ok.iter()
                .map(|r| r.edges.unwrap() as f64)
                .collect::<Vec<_>>(),
        );
        let r = group[0];
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            cell,
            r.p,
            r.k,
            graph_name(r.graph_kind),
            model_name(r.model),
            r.standardize,
            csv_field(method),
            group.len(),
            ok.len(),
            count(Status::Invalid),
            count(Status::Error),
            num(mean),
            num(se),
            num(edges)
        );
    }
    s
}

/// Raw against standardized SHD on the same replicate datasets.
fn paired_csv(rows: &[GridRow]) -> Option<String> {
    let raw: Vec<&GridRow> = rows.iter().filter(|r| !r.standardize).collect();
    if raw.is_empty() || raw.len() == rows.len() {
        return None;
    }
    let mut s = String::from(
        "p,k,graph,model,method,pairs,mean_raw,se_raw,mean_std,se_std,mean_diff,se_diff\n",
    );
    let mut keys: Vec<(usize, usize, GraphKind, ModelKind, &str)> = Vec::new();
    for r in &raw {
        let key = (r.p, r.k, r.graph_kind, r.model, r.method.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    for (p, k, g, m, method) in keys {
        let mut a = Vec::new();
        let mut b = Vec::new();
        for r in raw.iter().filter(|r| {
            (r.p, r.k, r.graph_kind, r.model, r.method.as_str()) == (p, k, g, m, method)
        }) {
            let twin = rows.iter().find(|t| {
                t.standardize
                    && (
                        t.p,
                        t.k,
                        t.graph_kind,
                        t.model,
                        t.method.as_str(),
                        t.replicate,
                    ) == (p, k, g, m, method, r.replicate)
            });
            if let Some(t) = twin {
                if r.status == Status::Ok && t.status == Status::Ok {
                    a.push(r.shd.unwrap() as f64);
                    b.push(t.shd.unwrap() as f64);
                }
            }
        }
        let diff: Vec<f64> = b.iter().zip(&a).map(|(y, x)| y - x).collect();
        let ((ma, sa), (mb, sb), (md, sd)) = (mean_se(&a), mean_se(&b), mean_se(&diff));
        let _ = writeln!(
            s,
            "{p},{k},{},{},{},{},{},{},{},{},{},{}",
            graph_name(g),
            model_name(m),
            csv_field(method),
            a.len(),
            num(ma),
            num(sa),
            num(mb),
            num(sb),
            num(md),
            num(sd)
        );
    }
    Some(s)
}

/// Smallest Frobenius distance from `b` to a minimal class member.
pub fn class_distance(b: &DMatrix<f64>, mc: &MinimalClass) -> f64 {
    mc.members
        .iter()
        .map(|m| (b - m.params.b()).norm())
        .fold(f64::INFINITY, f64::min)
}

fn random_start(p: usize, range: f64, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            0.0
        } else {
            rng.random_range(-range..range)
        }
    })
}

fn run_sweep(spec: &ExperimentSpec, d: &DeltaSweepSpec) -> Result<(MinimalClass, Vec<SweepRow>)> {
    let truth = d.fixture.params()?;
    let sigma: CovarianceMatrix = sem::covariance_of(&truth)?;
    let ec = enumerate_class(&sem::precision_of(&truth)?, POPULATION_EPS)?;
    let mc = minimal_class(&ec, d.delta_margin)?;
    if !mc.delta0.is_finite() {
        return Err(Error::Config(
            "fixture has no edges, so delta0 is undefined".into(),
        ));
    }
    let true_cpdag = cpdag_of(&DagStructure::from_matrix(truth.b())?);
    let data = ScoreData::from_covariance(sigma);
    let p = truth.p();
    let tasks: Vec<(usize, usize)> = (0..d.fractions.len())
        .flat_map(|f| (0..spec.replicates).map(move |i| (f, i)))
        .collect();
    let rows = tasks
        .par_iter()
        .map(|&(f, init)| {
            let t0 = Instant::now();
            let fraction = d.fractions[f];
            let delta = fraction * mc.delta0;
            let outcome = (|| -> Result<(i64, f64)> {
                let mut rng = rng_for(spec.seed, (f * spec.replicates + init) as u64);
                let start = random_start(p, d.init_range, &mut rng);
                let cfg = SolverConfig {
                    penalty: PenaltySpec::quasi_mcp(d.solver.penalty.lambda, delta)?,
                    ..d.solver.clone()
                };
                let r = warm_start_path_from(&data, &cfg, &start)?;
                let shd = match r.thresholded.dag() {
                    Some(g) => shd_cpdag(&cpdag_of(g), &true_cpdag)? as i64,
                    None => -1,
                };
                Ok((shd, class_distance(&r.b_est, &mc)))
            })();
            let (status, shd, distance, message) = match outcome {
                Ok((s, dist)) => (
                    if s < 0 { Status::Invalid } else { Status::Ok },
                    Some(s),
                    Some(dist),
                    String::new(),
                ),
                Err(e) => (Status::Error, None, None, e.to_string()),
            };
            SweepRow {
                fraction,
                delta,
                init,
                status,
                shd,
                distance,
                seconds: t0.elapsed().as_secs_f64(),
                message,
            }
        })
        .collect();
    Ok((mc, rows))
}

fn sweep_rows_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("fraction,delta,init,status,shd,distance,seconds,message\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.fraction,
            r.delta,
            r.init,
            r.status.as_str(),
            opt(&r.shd),
            r.distance.map(num).unwrap_or_default(),
            r.seconds,
            csv_field(&r.message)
        );
    }
    s
}

fn sweep_summary_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(
        "fraction,delta,runs,ok,invalid,errors,mean_shd,se_shd,shd_zero_rate,mean_distance,se_distance\n",
    );
    let mut fractions: Vec<f64> = Vec::new();
    for r in rows {
        if !fractions.contains(&r.fraction) {
            fractions.push(r.fraction);
        }
    }
    for f in fractions {
        let group: Vec<&SweepRow> = rows.iter().filter(|r| r.fraction == f).collect();
        let ok: Vec<&SweepRow> = group
            .iter()
            .copied()
            .filter(|r| r.status == Status::Ok)
            .collect();
        let count = |st: Status| group.iter().filter(|r| r.status == st).count();
        let shds: Vec<f64> = ok.iter().map(|r| r.shd.unwrap() as f64).collect();
        let (mean, se) = mean_se(&shds);
        let zero = group.iter().filter(|r| r.shd == Some(0)).count() as f64 / group.len() as f64;
        let dists: Vec<f64> = group.iter().filter_map(|r| r.distance).collect();
        let (md, sd) = mean_se(&dists);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            f,
            group[0].delta,
            group.len(),
            ok.len(),
            count(Status::Invalid),
            count(Status::Error),
            num(mean),
            num(se),
            zero,
            num(md),
            num(sd)
        );
    }
    s
}

/// Runs the sweep and writes `replicates.csv`, `summary.csv` and, for paired
/// grids, `paired.csv` into `out`.
pub fn cmd_bench(spec: &ExperimentSpec, out: &Path, threads: Option<usize>) -> Result<BenchOutput> {
    spec.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let (rows, rows_csv) = pool.install(|| -> Result<(BenchRows, String)> {
        match &spec.design {
            Design::Grid(g) => {
                let cells = g.cells(spec.seed);
                let tasks: Vec<(&Cell, &MethodSpec, usize)> = cells
                    .iter()
                    .flat_map(|c| {
                        g.methods
                            .iter()
                            .flat_map(move |m| (0..spec.replicates).map(move |r| (c, m, r)))
                    })
                    .collect();
                let rows: Vec<GridRow> = tasks
                    .par_iter()
                    .map(|&(c, m, r)| run_grid_task(c, m, r))
                    .collect();
                let csv = grid_rows_csv(&rows);
                Ok((BenchRows::Grid(rows), csv))
            }
            Design::DeltaSweep(d) => {
                let (mc, rows) = run_sweep(spec, d)?;
                let csv = sweep_rows_csv(&rows);
                Ok((BenchRows::DeltaSweep { mc, rows }, csv))
            }
        }
    })?;
    let (summary_csv, paired) = match &rows {
        BenchRows::Grid(r) => (grid_summary_csv(r), paired_csv(r)),
        BenchRows::DeltaSweep { rows, .. } => (sweep_summary_csv(rows), None),
    };
    std::fs::create_dir_all(out)?;
    io::write_atomic(&out.join("replicates.csv"), rows_csv.as_bytes())?;
    io::write_atomic(&out.join("summary.csv"), summary_csv.as_bytes())?;
    if let Some(p) = &paired {
        io::write_atomic(&out.join("paired.csv"), p.as_bytes())?;
    }
    Ok(BenchOutput {
        rows,
        summary_csv,
        paired_csv: paired,
    })
}
