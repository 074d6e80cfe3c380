use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::Write;

use super::phases::{
    across_backward, across_forward, into_phase, out_phase, summarize, PosteriorSummary,
};
use super::state::MessageState;
use crate::amp::{run_amp_with, AmpConfig, AmpScratch, AmpState, LocalPrior};
use crate::em::{em_step, EmState};
use crate::error::{Error, Result};
use crate::field::Scalar;
use crate::model::{MmvProblem, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Frame-by-frame forward sweep, then backward sweep.
    #[default]
    Serial,
    /// All frames at once, then full forward and backward across sweeps.
    Parallel,
}

impl Schedule {
    pub fn other(self) -> Self {
        match self {
            Schedule::Serial => Schedule::Parallel,
            Schedule::Parallel => Schedule::Serial,
        }
    }
}

impl std::fmt::Display for Schedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Schedule::Serial => "serial",
            Schedule::Parallel => "parallel",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub schedule: Schedule,
    /// Budget of smoothing passes.
    pub max_passes: usize,
    /// AMP iterations per frame visit.
    pub inner_iters: usize,
    pub epsilon: f64,
    /// Escalate when the residual exceeds this multiple of `T M sigma_e^2`.
    pub residual_switch_threshold: f64,
    pub max_escalations: usize,
    pub em_enabled: bool,
    /// Seed for randomized helpers (operator norm probes).
    pub seed: u64,
    /// Warm-start each frame's AMP from its previous pass.
    pub warm_start: bool,
    /// AMP damping weight; 1 disables damping.
    pub damping: f64,
    /// Damping cap applied to escalated attempts; 1 leaves them undamped.
    pub escalation_damping: f64,
    /// Relative tolerance of AMP's early exit.
    pub amp_tol: f64,
    /// Relative tolerance on the change of `x_mean` between passes.
    pub pass_tol: f64,
    /// Forces the activity priors to a known support (testing aid).
    pub clamp_support: Option<Vec<bool>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::Serial,
            max_passes: 20,
            inner_iters: 25,
            epsilon: 1e-7,
            residual_switch_threshold: 10.0,
            max_escalations: 3,
            em_enabled: false,
            seed: 0,
            warm_start: true,
            damping: 1.0,
            escalation_damping: 0.8,
            amp_tol: 1e-8,
            pass_tol: 1e-8,
            clamp_support: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-3) {
            return Err(Error::Parameter(format!(
                "epsilon = {} outside (0, 1e-3]",
                self.epsilon
            )));
        }
        if self.max_passes == 0 {
            return Err(Error::Parameter("max_passes must be at least 1".into()));
        }
        if self.inner_iters == 0 {
            return Err(Error::Parameter("inner_iters must be at least 1".into()));
        }
        for (name, d) in [("damping", self.damping), ("escalation_damping", self.escalation_damping)] {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Parameter(format!("{name} = {d} outside (0, 1]")));
            }
        }
        if !(self.residual_switch_threshold > 0.0) {
            return Err(Error::Parameter(
                "residual_switch_threshold must be positive".into(),
            ));
        }
        Ok(())
    }

    fn amp_config(&self) -> AmpConfig {
        AmpConfig {
            max_iters: self.inner_iters,
            tol: self.amp_tol,
            damping: self.damping,
        }
    }

    /// AMP settings of escalation `attempt` (0 is the initial run).
    fn amp_config_at(&self, attempt: usize) -> AmpConfig {
        let mut c = self.amp_config();
        if attempt > 0 {
            c.damping = c.damping.min(self.escalation_damping);
        }
        c
    }
}

/// One entry of the diagnostics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "")]
pub enum DiagnosticRecord<T: Scalar> {
    Pass {
        attempt: usize,
        schedule: Schedule,
        pass: usize,
        residual: f64,
        /// Squared change of `x_mean` from the previous pass; absent on the first.
        change: Option<f64>,
        amp_iters: usize,
    },
    Em {
        attempt: usize,
        pass: usize,
        params: ModelParams<T>,
    },
    Attempt {
        attempt: usize,
        schedule: Schedule,
        max_passes: usize,
        passes: usize,
        residual: f64,
        threshold: f64,
        converged: bool,
    },
    Escalation {
        attempt: usize,
        schedule: Schedule,
        max_passes: usize,
        damping: f64,
    },
    AttemptFailed {
        attempt: usize,
        error: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Diagnostics<T: Scalar> {
    pub records: Vec<DiagnosticRecord<T>>,
}

impl<T: Scalar> Diagnostics<T> {
    pub fn push(&mut self, r: DiagnosticRecord<T>) {
        self.records.push(r);
    }

    pub fn write_json_lines<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_json_lines(&self) -> String {
        let mut buf = Vec::new();
        self.write_json_lines(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    /// Residual energy after each pass of every attempt.
    pub fn pass_residuals(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| match r {
                DiagnosticRecord::Pass { residual, .. } => Some(*residual),
                _ => None,
            })
            .collect()
    }

    pub fn escalations(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r, DiagnosticRecord::Escalation { .. }))
            .count()
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput<T: Scalar> {
    pub posterior: PosteriorSummary<T>,
    pub diagnostics: Diagnostics<T>,
    /// Final hyperparameters (the inputs unless EM ran).
    pub params: ModelParams<T>,
    pub state: MessageState<T>,
    pub schedule: Schedule,
    pub passes: usize,
    pub residual: f64,
    pub converged: bool,
}

struct Attempt<T: Scalar> {
    state: MessageState<T>,
    params: ModelParams<T>,
    passes: usize,
    residual: f64,
    converged: bool,
}

/// Runs AMP-MMV on `problem`, escalating the schedule when the residual stays
/// far above the noise floor.
pub fn solve<T: Scalar>(
    problem: &MmvProblem<T>,
    params: &ModelParams<T>,
    cfg: &SolverConfig,
) -> Result<SolveOutput<T>> {
    cfg.validate()?;
    params.validate(Some(problem.n()))?;
    if params.alpha <= 0.0 {
        return Err(Error::DegenerateProcess);
    }
    if let Some(c) = &cfg.clamp_support {
        if c.len() != problem.n() {
            return Err(Error::Dimension(format!(
                "clamped support has length {}, expected {}",
                c.len(),
                problem.n()
            )));
        }
    }
    let (_, m, frames) = problem.dims();
    let mut diag = Diagnostics::default();

    let mut schedule = cfg.schedule;
    let mut budget = cfg.max_passes;
    let mut best = run_attempt(problem, params, cfg, schedule, budget, 0, &mut diag)?;
    let mut best_schedule = schedule;
    let threshold_of = |p: &ModelParams<T>| cfg.residual_switch_threshold * (frames * m) as f64 * p.sigma_e2;
    let mut threshold = threshold_of(&best.params);
    diag.push(attempt_record(0, schedule, budget, &best, threshold));

    let mut attempt = 0;
    while best.residual > threshold && attempt < cfg.max_escalations {
        attempt += 1;
        schedule = schedule.other();
        budget *= 2;
        diag.push(DiagnosticRecord::Escalation {
            attempt,
            schedule,
            max_passes: budget,
            damping: cfg.amp_config_at(attempt).damping,
        });
        match run_attempt(problem, params, cfg, schedule, budget, attempt, &mut diag) {
            Ok(a) => {
                let thr = threshold_of(&a.params);
                diag.push(attempt_record(attempt, schedule, budget, &a, thr));
                if a.residual < best.residual {
                    best = a;
                    best_schedule = schedule;
                    threshold = thr;
                }
            }
            Err(e) => diag.push(DiagnosticRecord::AttemptFailed {
                attempt,
                error: e.to_string(),
            }),
        }
    }

    let posterior = summarize(&best.state, &best.params);
    Ok(SolveOutput {
        posterior,
        diagnostics: diag,
        params: best.params,
        state: best.state,
        schedule: best_schedule,
        passes: best.passes,
        residual: best.residual,
        converged: best.converged,
    })
}

fn attempt_record<T: Scalar>(
    attempt: usize,
    schedule: Schedule,
    max_passes: usize,
    a: &Attempt<T>,
    threshold: f64,
) -> DiagnosticRecord<T> {
    DiagnosticRecord::Attempt {
        attempt,
        schedule,
        max_passes,
        passes: a.passes,
        residual: a.residual,
        threshold,
        converged: a.converged,
    }
}

struct FrameRunner<'a, T: Scalar> {
    problem: &'a MmvProblem<T>,
    cfg: &'a SolverConfig,
    amp_cfg: AmpConfig,
    scratch: AmpScratch<T>,
    pass: usize,
    amp_iters: usize,
}

impl<T: Scalar> FrameRunner<'_, T> {
    fn clamp(&self, priors: &mut [LocalPrior<T>], state: &mut MessageState<T>, t: usize) {
        if let Some(s) = &self.cfg.clamp_support {
            for (i, p) in priors.iter_mut().enumerate() {
                p.pi = if s[i] { 1.0 } else { 0.0 };
                state.pi_bwd.set(i, t, p.pi);
            }
        }
    }

    /// (into), (within) and (out) phases on frame `t`.
    fn visit(&mut self, state: &mut MessageState<T>, params: &ModelParams<T>, t: usize) -> Result<()> {
        let mut priors = into_phase(state, params, t);
        self.clamp(&mut priors, state, t);
        let init = if self.cfg.warm_start { state.amp[t].take() } else { None };
        let amp = run_amp_with(
            self.problem.observation(t),
            self.problem.operator(t),
            &priors,
            params.sigma_e2,
            &self.amp_cfg,
            init,
            &mut self.scratch,
        )
        .map_err(|e| match e {
            Error::AmpDiverged { iteration } => Error::EngineDiverged {
                frame: t,
                pass: self.pass,
                iteration,
            },
            other => other,
        })?;
        self.amp_iters += amp.iter;
        let (pi, theta) = out_phase(&amp, &priors, self.cfg.epsilon);
        state.pi_fwd.column_mut(t).copy_from_slice(&pi);
        state.theta_out.column_mut(t).copy_from_slice(&theta);
        state.amp[t] = Some(amp);
        Ok(())
    }
}

fn x_mean_of<T: Scalar>(state: &MessageState<T>) -> DMatrix<T> {
    let mut x = DMatrix::<T>::zeros(state.n(), state.frames());
    for (t, a) in state.amp.iter().enumerate() {
        if let Some(a) = a {
            x.set_column(t, &a.mu);
        }
    }
    x
}

fn run_attempt<T: Scalar>(
    problem: &MmvProblem<T>,
    params0: &ModelParams<T>,
    cfg: &SolverConfig,
    schedule: Schedule,
    max_passes: usize,
    attempt: usize,
    diag: &mut Diagnostics<T>,
) -> Result<Attempt<T>> {
    let (n, m, frames) = problem.dims();
    let mut params = params0.clone();
    let mut state = MessageState::new(n, frames, &params);
    let mut em = cfg.em_enabled.then(|| EmState::new(params.clone()));
    let mut runner = FrameRunner {
        problem,
        cfg,
        amp_cfg: cfg.amp_config_at(attempt),
        scratch: AmpScratch::new(m, n),
        pass: 0,
        amp_iters: 0,
    };
    let mut prev_x: Option<DMatrix<T>> = None;
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut passes = 0;

    for pass in 0..max_passes {
        runner.pass = pass;
        runner.amp_iters = 0;
        state.set_prior_boundary(&params);
        match schedule {
            Schedule::Parallel => {
                for t in 0..frames {
                    runner.visit(&mut state, &params, t)?;
                }
                for t in 0..frames.saturating_sub(1) {
                    across_forward(&mut state, &params, t);
                }
                for t in (1..frames).rev() {
                    across_backward(&mut state, &params, t);
                }
            }
            Schedule::Serial => {
                for t in 0..frames {
                    runner.visit(&mut state, &params, t)?;
                    if t + 1 < frames {
                        across_forward(&mut state, &params, t);
                    }
                }
                for t in (1..frames).rev() {
                    across_backward(&mut state, &params, t);
                    if t >= 2 {
                        runner.visit(&mut state, &params, t - 1)?;
                    }
                }
            }
        }
        passes = pass + 1;

        let x = x_mean_of(&state);
        residual = problem.residual_energy(&x);
        let change: Option<f64> = prev_x
            .as_ref()
            .map(|p| (&x - p).iter().map(|v| v.abs2()).sum());
        let energy: f64 = x.iter().map(|v| v.abs2()).sum();
        diag.push(DiagnosticRecord::Pass {
            attempt,
            schedule,
            pass,
            residual,
            change,
            amp_iters: runner.amp_iters,
        });

        if let Some(em) = em.as_mut() {
            let post = summarize(&state, &params);
            em_step(problem, &post, em)?;
            params = em.params.clone();
            diag.push(DiagnosticRecord::Em {
                attempt,
                pass,
                params: params.clone(),
            });
        }

        // a single frame exchanges no messages: another pass only resumes an
        // AMP run that used up its iteration budget
        if frames == 1 && em.is_none() {
            let budget_spent = state.amp[0].as_ref().is_some_and(|a| a.iter >= runner.amp_cfg.max_iters);
            if !budget_spent || !cfg.warm_start {
                converged = !budget_spent;
                break;
            }
        }
        if change.is_some_and(|c| c <= cfg.pass_tol * energy) {
            converged = true;
            break;
        }
        prev_x = Some(x);
    }

    Ok(Attempt {
        state,
        params,
        passes,
        residual,
        converged,
    })
}

/// Runs one frame's AMP from the prior-only local priors; used as the
/// single-frame reference.
pub fn single_frame_amp<T: Scalar>(
    problem: &MmvProblem<T>,
    params: &ModelParams<T>,
    t: usize,
    cfg: &AmpConfig,
) -> Result<AmpState<T>> {
    let priors: Vec<_> = (0..problem.n())
        .map(|i| LocalPrior::new(params.lambda_at(i), params.zeta, params.sigma2()))
        .collect();
    crate::amp::run_amp(
        problem.observation(t),
        problem.operator(t),
        &priors,
        params.sigma_e2,
        cfg,
        None,
    )
}
