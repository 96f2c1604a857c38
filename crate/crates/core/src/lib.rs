// SPDX-License-Identifier: Apache-2.0
//! Sparse DAG learning for linear structural equation models: likelihood and
//! least-squares scores, nonconvex sparsity penalties, smooth acyclicity
//! constraints, exact equivalence-class search and a gradient-based solver.

pub mod acyclicity;
pub mod error;
pub mod exact;
pub mod graph;
pub mod io;
pub mod penalty;
pub mod sem;
pub mod simulate;
pub mod solver;

pub use acyclicity::{expm, is_dag, AcyclicitySpec};
pub use error::{Error, Result};
pub use exact::{
    enumerate_class, exact_regularized_optimum, minimal_class, EquivalenceClass, ExactOptimum,
    ExactOptions, MinimalClass,
};
pub use graph::{
    cpdag_of, mec_equal, shd_cpdag, support_of, threshold_support, Cpdag, DagStructure, Thresholded,
};
pub use penalty::{PenaltyFamily, PenaltySpec};
pub use sem::{CovarianceMatrix, Dataset, PrecisionMatrix, SemParams, WeightMatrix};
pub use simulate::{GraphKind, ModelKind, SimConfig};
pub use solver::{
    augmented_lagrangian_solve, threshold_result, warm_start_path, ScoreData, ScoreKind,
    SolveResult, SolverConfig,
};
