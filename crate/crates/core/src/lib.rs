//! Day-ahead pricing and dispatch of an integrated heat and power system.
//!
//! An energy operator sets hourly electricity and heat prices and dispatches thermal
//! units, CHP units, storage and uncertain renewables. Users answer the prices by
//! shifting part of their electric load and curtailing heat within comfort limits. The
//! operator-user game is turned into a single mixed-integer program through the users'
//! optimality conditions and solved with a pluggable backend.
//!
//! The probability and physics layers are generic over [`scalar::Scalar`]; the aliases
//! below fix them to `f64` or `f32`. The optimization layers work in `f64`.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod game;
pub mod ir;
pub mod kkt;
pub mod lp_format;
pub mod pipeline;
pub mod renewables;
pub mod scalar;
pub mod scenario;
pub mod sequences;
pub mod solve;
pub mod thermal;

pub use error::{Error, Result};
pub use game::{EquilibriumSolution, Mode, ModelSpec, ValidationReport};
pub use pipeline::{ReportBundle, RunManifest};
pub use scenario::{PreparedScenario, ScenarioConfig};
pub use solve::{HighsBackend, LpFileBackend, SolveOptions, SolverBackend};

pub type ProbSequence64 = sequences::ProbSequence<f64>;
pub type ProbSequence32 = sequences::ProbSequence<f32>;
pub type ReserveRows64 = sequences::ReserveRequirementRows<f64>;
pub type BetaPvModel64 = renewables::BetaPvModel<f64>;
pub type BetaPvModel32 = renewables::BetaPvModel<f32>;
pub type WeibullWtModel64 = renewables::WeibullWtModel<f64>;
pub type WeibullWtModel32 = renewables::WeibullWtModel<f32>;
pub type PipelineSpec64 = thermal::PipelineSpec<f64>;
pub type PipelineSpec32 = thermal::PipelineSpec<f32>;
pub type BuildingSpec64 = thermal::BuildingSpec<f64>;
pub type PmvSpec64 = thermal::PmvSpec<f64>;
