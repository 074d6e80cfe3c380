//! Joint-sparse recovery of time-varying signals from multiple measurement
//! vectors by approximate message passing (AMP-MMV), with EM learning of the
//! model parameters, a support-aware Kalman smoother and an exhaustive
//! Bayesian oracle for small problems.

pub mod amp;
pub mod em;
pub mod engine;
pub mod error;
pub mod exact;
pub mod field;
pub mod io;
pub mod kalman;
pub mod metrics;
pub mod model;
pub mod operator;
pub mod selftest;
pub mod sks;
pub mod sweep;
pub mod verify;

pub use amp::{run_amp, AmpConfig, AmpState, LocalPrior};
pub use em::{em_step, initial_params, EmState, MaskSchedule, UpdateMask};
pub use engine::{
    solve, DiagnosticRecord, Diagnostics, GaussianMsg, MessageState, PosteriorSummary, Schedule,
    SolveOutput, SolverConfig,
};
pub use error::{Error, Result};
pub use exact::{enumerate_mmse, EnumResult, DEFAULT_ENUM_CAP};
pub use field::{FieldKind, Scalar};
pub use metrics::{estimate_support, nser, tnmse, to_db, Metrics, SupportRule};
pub use model::{
    generate_instance, GenConfig, GroundTruth, Instance, MatrixKind, MmvProblem, ModelParams,
};
pub use operator::{DenseOperator, FnOperator, LinearOperator, SharedOperator};
pub use sks::{sks_smooth, SksInput, SksOutput};
pub use sweep::{run_sweep, Algorithm, SweepResults, SweepSpec, SweptParameter};

pub use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64;
