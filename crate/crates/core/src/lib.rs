//! Reaction-diffusion systems on overlapping habitats: geometry, models,
//! an IMEX finite-volume solver, mass and energy diagnostics, a structure
//! checker for the hypotheses on f, and the config/CLI front end.

// `!(x > 0.0)` is used on purpose so that NaN is rejected with the bad case.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checker;
pub mod cli;
pub mod config;
pub mod energy;
pub mod geometry;
pub mod model;
pub mod output;
pub mod solver;

pub use checker::{certify, CheckerConfig, StructureReport};
pub use config::{parse_config, ConfigDocument};
pub use geometry::{Domain, DomainSet, MeshedDomain};
pub use model::{builtin, BuiltinParams, ModelSpec};
pub use solver::{run, run_with, SolverConfig, State, Trajectory};
