//! Iterative proportional scaling for hierarchical log-linear models, fitted
//! either one generator at a time or through decomposable submodels.
//!
//! * [`tables`]: dense contingency tables, marginals and KL divergence;
//! * [`models`]: generating classes, perfect sequences and spanning families;
//! * [`ips`]: full-table engines;
//! * [`local`]: step-size diagnostics near the MLE;
//! * [`cycle`]: the junction-tree engine for cycle models;
//! * [`experiment`]: paired benchmark runs on random cycle tables;
//! * [`io`]: JSON and CSV formats.

pub mod cycle;
pub mod error;
pub mod experiment;
pub mod io;
pub mod ips;
pub mod local;
pub mod models;
pub mod tables;

pub use cycle::{fit_cycle_table, fit_cycle_tree, triangulate_cycle, CycleFitReport, CycleSpec, EdgeMarginals};
pub use error::{Error, Result};
pub use ips::{
    fit_conventional, fit_submodel_ips, AlphaPolicy, Criterion, FitConfig, FitReport, StepUnit, TraceRow,
};
pub use models::{
    find_perfect_sequence, greedy_spanning, is_decomposable, max_entropy_extension, validate_spanning, GeneratingClass,
    PerfectSequence, SpanningFamily, Submodel,
};
pub use tables::{kl_divergence, DenseTable, Divergence, Projection, Schema, VarSet, Variable};
