// SPDX-License-Identifier: Apache-2.0
//! Command implementations behind the `sparsedag` binary.

pub mod experiment;

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sparsedag::exact::{enumerate_class_with_cap, DEFAULT_CAP, POPULATION_EPS};
use sparsedag::io::{self, ClassDump};
use sparsedag::sem::{CovarianceMatrix, Dataset};
use sparsedag::simulate::{self, SimConfig};
use sparsedag::solver::{PathStep, RoundRecord};
use sparsedag::{
    augmented_lagrangian_solve, cpdag_of, exact_regularized_optimum, minimal_class, shd_cpdag,
    threshold_result, threshold_support, warm_start_path, DagStructure, Error, ExactOptions,
    PenaltySpec, Result, ScoreData, SolveResult, SolverConfig, Thresholded,
};

pub use experiment::{cmd_bench, BenchOutput, ExperimentSpec};

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::CapacityExceeded { .. } => 4,
        Error::NotPositiveDefinite
        | Error::NearSingular(_)
        | Error::OutOfDomain(_)
        | Error::Cyclic
        | Error::NonFiniteStart => 3,
        _ => 2,
    }
}

/// Reads a JSON config, or the type's default when no path is given.
pub fn load_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => io::read_json(p),
        None => Ok(T::default()),
    }
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SimulateMeta<'a> {
    seed: u64,
    config: &'a SimConfig,
    edges: Vec<(usize, usize)>,
}

/// Writes `data.csv`, `b_true.csv`, `omega_true.csv` and `meta.json`.
pub fn cmd_simulate(cfg: &SimConfig, out: &Path) -> Result<simulate::Simulation> {
    let sim = simulate::simulate(cfg)?;
    ensure_dir(out)?;
    io::write_dataset_csv(&out.join("data.csv"), &sim.data)?;
    io::write_params_csv(
        &out.join("b_true.csv"),
        &out.join("omega_true.csv"),
        &sim.params,
    )?;
    let meta = SimulateMeta {
        seed: cfg.seed,
        config: cfg,
        edges: sim.graph.edges(),
    };
    io::write_json(&out.join("meta.json"), &meta)?;
    Ok(sim)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// Least-squares initializer followed by the decaying penalty path.
    #[default]
    WarmStart,
    /// One augmented-Lagrangian solve from zero at the configured penalty.
    Single,
    /// The empty graph, as a baseline.
    Empty,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub mode: FitMode,
    /// Standardize the columns before fitting.
    pub standardize: bool,
    pub solver: SolverConfig,
}

/// Fits a dataset with one method; `Empty` never touches the solver.
pub fn fit_dataset(data: &Dataset, mode: FitMode, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    let p = data.p();
    if mode == FitMode::Empty {
        let b = DMatrix::zeros(p, p);
        return Ok(SolveResult {
            thresholded: threshold_result(&b, cfg.threshold),
            b_est: b,
            omega_est: None,
            trace: Vec::new(),
            path: Vec::new(),
            score: f64::NAN,
            penalty: 0.0,
            h: 0.0,
            converged: true,
        });
    }
    let score_data = ScoreData::from_dataset(data, cfg.centered);
    match mode {
        FitMode::WarmStart => warm_start_path(&score_data, cfg),
        _ => augmented_lagrangian_solve(&score_data, cfg, &DMatrix::zeros(p, p)),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub mode: FitMode,
    pub n: usize,
    pub p: usize,
    pub score: f64,
    pub penalty: f64,
    pub h: f64,
    pub converged: bool,
    pub valid: bool,
    pub edges: Vec<(usize, usize)>,
    pub omega_est: Option<Vec<f64>>,
    pub seconds: f64,
    pub path: Vec<PathStep>,
    pub trace: Vec<RoundRecord>,
}

/// Writes `b_est.csv` and `result.json`.
pub fn cmd_fit(data_path: &Path, cfg: &FitConfig, out: &Path) -> Result<FitReport> {
    let raw = io::read_dataset_csv(data_path)?;
    let data = if cfg.standardize {
        simulate::standardize(&raw)?
    } else {
        raw
    };
    let t0 = Instant::now();
    let r = fit_dataset(&data, cfg.mode, &cfg.solver)?;
    let seconds = t0.elapsed().as_secs_f64();
    ensure_dir(out)?;
    io::write_matrix_csv(&out.join("b_est.csv"), &r.b_est)?;
    let edges = match &r.thresholded {
        Thresholded::Dag(g) => g.edges(),
        Thresholded::Cyclic(e) => e.clone(),
    };
    let report = FitReport {
        mode: cfg.mode,
        n: data.n(),
        p: data.p(),
        score: r.score,
        penalty: r.penalty,
        h: r.h,
        converged: r.converged,
        valid: r.thresholded.is_valid(),
        edges,
        omega_est: r.omega_est.map(|w| w.iter().copied().collect()),
        seconds,
        path: r.path,
        trace: r.trace,
    };
    io::write_json(&out.join("result.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExactArgs {
    /// Input is a covariance matrix rather than samples.
    pub covariance: bool,
    /// Zero tolerance; required for sample input.
    pub eps: Option<f64>,
    pub lambda: f64,
    /// Quasi-MCP width; `delta0 / 2` when absent.
    pub delta: Option<f64>,
    pub delta_margin: f64,
    pub cap: usize,
}

impl Default for ExactArgs {
    fn default() -> Self {
        Self {
            covariance: false,
            eps: None,
            lambda: 0.01,
            delta: None,
            delta_margin: 1.0,
            cap: DEFAULT_CAP,
        }
    }
}

/// Writes `class.json`.
pub fn cmd_exact(input: &Path, args: &ExactArgs, out: &Path) -> Result<ClassDump> {
    let (sigma, eps) = if args.covariance {
        let m = io::read_square_csv(input)?;
        (
            CovarianceMatrix::new(m)?,
            args.eps.unwrap_or(POPULATION_EPS),
        )
    } else {
        let eps = args
            .eps
            .ok_or_else(|| Error::Config("sample input needs an explicit eps".into()))?;
        (
            simulate::sample_covariance(&io::read_dataset_csv(input)?, true)?,
            eps,
        )
    };
    if sigma.p() > args.cap {
        return Err(Error::CapacityExceeded {
            p: sigma.p(),
            cap: args.cap,
        });
    }
    let ec = enumerate_class_with_cap(&sigma.inverse(), eps, args.cap)?;
    let mc = minimal_class(&ec, args.delta_margin)?;
    let delta = match args.delta {
        Some(d) => d,
        None if mc.delta0.is_finite() => mc.delta0 / 2.0,
        None => {
            return Err(Error::Config(
                "every member is empty; pass an explicit delta".into(),
            ))
        }
    };
    let spec = PenaltySpec::quasi_mcp(args.lambda, delta)?;
    let opts = ExactOptions {
        eps,
        cap: args.cap,
        ..ExactOptions::default()
    };
    let opt = exact_regularized_optimum(&sigma, &spec, &opts)?;
    let dump = ClassDump::new(&ec, &mc, Some(&opt));
    ensure_dir(out)?;
    io::write_json(&out.join("class.json"), &dump)?;
    Ok(dump)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `-1` when the thresholded estimate is cyclic.
    pub shd: i64,
    pub valid: bool,
    pub est_edges: usize,
    pub true_edges: usize,
    pub skeleton_precision: f64,
    pub skeleton_recall: f64,
}

/// Compares a weighted estimate against the true DAG after thresholding.
pub fn evaluate(b_est: &DMatrix<f64>, truth: &DagStructure, threshold: f64) -> Result<Metrics> {
    let p = truth.p();
    if b_est.nrows() != p || b_est.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: b_est.nrows(),
        });
    }
    let th = threshold_support(b_est, threshold);
    let est_edges: Vec<(usize, usize)> = match &th {
        Thresholded::Dag(g) => g.edges(),
        Thresholded::Cyclic(e) => e.clone(),
    };
    let skeleton = |edges: &[(usize, usize)]| -> std::collections::BTreeSet<(usize, usize)> {
        edges.iter().map(|&(i, j)| (i.min(j), i.max(j))).collect()
    };
    let (se, st) = (skeleton(&est_edges), skeleton(&truth.edges()));
    let common = se.intersection(&st).count() as f64;
    let ratio = |den: usize| if den == 0 { 1.0 } else { common / den as f64 };
    let shd = match th.dag() {
        Some(g) => shd_cpdag(&cpdag_of(g), &cpdag_of(truth))? as i64,
        None => -1,
    };
    Ok(Metrics {
        shd,
        valid: th.is_valid(),
        est_edges: est_edges.len(),
        true_edges: truth.edge_count(),
        skeleton_precision: ratio(se.len()),
        skeleton_recall: ratio(st.len()),
    })
}

/// Writes `metrics.json` when `out` is given.
pub fn cmd_eval(
    b_est: &Path,
    b_true: &Path,
    threshold: f64,
    out: Option<&Path>,
) -> Result<Metrics> {
    let est = io::read_square_csv(b_est)?;
    let truth = DagStructure::from_matrix(&io::read_square_csv(b_true)?)?;
    let m = evaluate(&est, &truth, threshold)?;
    if let Some(dir) = out {
        ensure_dir(dir)?;
        io::write_json(&dir.join("metrics.json"), &m)?;
    }
    Ok(m)
}
