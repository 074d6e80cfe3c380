//! Message passing across frames: activity and amplitude messages between
//! the per-frame AMP solvers, in serial or parallel schedules.

mod messages;
mod phases;
mod solve;
mod state;

pub use messages::{
    field_omega, mixture_eps_weight, omega, omega_weight, taylor_approx, GaussianMsg, TaylorMsg,
};
pub use phases::{
    across_backward, across_forward, activity_message, collapse_out_message, combine_activity,
    into_phase, lag_one_moment, out_phase, posterior_support, propagate_backward,
    propagate_forward, summarize, theta_marginal, PosteriorSummary, ACTIVITY_FLOOR,
};
pub use solve::{
    single_frame_amp, solve, DiagnosticRecord, Diagnostics, Schedule, SolveOutput, SolverConfig,
};
pub use state::{FrameGrid, MessageState};
