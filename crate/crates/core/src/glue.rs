//! Local runs up to the stopping time `τ_κ`, restart with fresh noise and a
//! raised threshold, and concatenation into one run on `[0, T]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearized::{coupled_partial, Stepper, SystemState, Trajectory};
use crate::noise::{derive_path_id, NoiseConfig, NoisePath};

/// How the threshold grows after a stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Escalation {
    #[default]
    Increment,
    Double,
}

impl Escalation {
    pub fn next(self, kappa: f64) -> f64 {
        match self {
            Escalation::Increment => kappa + 1.0,
            Escalation::Double => 2.0 * kappa,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Segment {
    pub start_step: usize,
    pub start: f64,
    pub end: f64,
    pub kappa: f64,
    pub trajectory: Trajectory,
    pub terminal: SystemState,
    pub path_id: u64,
    /// `h ≥ κ` was reached at `end`.
    pub stopped: bool,
    /// Numerical failure that ended the segment early.
    pub failure: Option<String>,
}

impl Segment {
    pub fn steps(&self) -> usize {
        self.trajectory.steps()
    }
}

/// Coupled run from `state0` until `h ≥ κ` or `steps` steps, whichever
/// comes first. Blow-ups end the segment and are recorded in `failure`.
pub fn run_local(
    state0: &SystemState,
    kappa: f64,
    stepper: &Stepper,
    noise: &NoisePath,
    start_step: usize,
    steps: usize,
) -> Result<Segment> {
    let (trajectory, failure) = coupled_partial(stepper, state0, noise, kappa, true, steps)?;
    let dt = stepper.params().dt;
    let start = start_step as f64 * dt;
    let hit = trajectory.sup_u.last().is_some_and(|&h| h >= kappa);
    Ok(Segment {
        start_step,
        start,
        end: start + trajectory.steps() as f64 * dt,
        kappa,
        terminal: trajectory.last().clone(),
        trajectory,
        path_id: noise.path_id,
        stopped: hit && failure.is_none(),
        failure: failure.map(|e| e.to_string()),
    })
}

#[derive(Debug, Clone)]
pub struct GlobalRun {
    pub segments: Vec<Segment>,
    pub escalations: usize,
    /// The run reached `T`.
    pub complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlueOptions {
    pub total_steps: usize,
    pub escalation: Escalation,
    pub max_segments: usize,
}

/// Glue local runs into one run over `total_steps`. Segment `s` uses
/// `steppers[min(s, len - 1)]` and the noise path
/// `derive_path_id(base_path, s)`.
pub fn escalate_and_glue(
    state0: &SystemState,
    kappa0: f64,
    steppers: &[Stepper],
    noise: &NoiseConfig,
    base_path: u64,
    options: &GlueOptions,
) -> Result<GlobalRun> {
    if !(kappa0 > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa0 must be positive, got {kappa0}")));
    }
    let first = steppers
        .first()
        .ok_or_else(|| Error::InvalidArgument("no stepper given".into()))?;
    let dt = first.params().dt;
    if steppers.iter().any(|s| s.params().dt != dt) {
        return Err(Error::InvalidArgument("all segments must share one dt".into()));
    }
    let mut segments: Vec<Segment> = Vec::new();
    let mut state = state0.clone();
    let mut kappa = kappa0;
    let mut done = 0;
    let mut complete = options.total_steps == 0;
    for s in 0..options.max_segments {
        if complete {
            break;
        }
        let stepper = &steppers[s.min(steppers.len() - 1)];
        let remaining = options.total_steps - done;
        let w = NoisePath::sample(noise, remaining, dt, derive_path_id(base_path, s as u64))?;
        let seg = run_local(&state, kappa, stepper, &w, done, remaining)?;
        done += seg.steps();
        state = seg.terminal.clone();
        let failed = seg.failure.is_some();
        let stopped = seg.stopped;
        segments.push(seg);
        complete = done == options.total_steps && !failed;
        if failed {
            break;
        }
        if stopped {
            kappa = options.escalation.next(kappa);
        }
    }
    if !complete {
        log::warn!("glued run ended at step {done} of {}", options.total_steps);
    }
    Ok(GlobalRun { escalations: segments.len().saturating_sub(1), segments, complete })
}

impl GlobalRun {
    /// States on the full time grid, each boundary state taken once.
    pub fn glued_states(&self) -> Vec<&SystemState> {
        let mut out: Vec<&SystemState> = Vec::new();
        for (i, seg) in self.segments.iter().enumerate() {
            let skip = usize::from(i > 0);
            out.extend(seg.trajectory.states.iter().skip(skip));
        }
        out
    }

    /// Largest coefficient jump between a segment's terminal state and the
    /// next segment's initial state.
    pub fn max_boundary_jump(&self) -> f64 {
        self.segments
            .windows(2)
            .map(|w| w[0].terminal.max_abs_diff(&w[1].trajectory.states[0]))
            .fold(0.0, f64::max)
    }

    /// Every cut-off value used before a stop equals 1.
    pub fn cutoff_inactive(&self) -> bool {
        self.segments.iter().all(|s| s.trajectory.theta_cut.iter().all(|&t| t == 1.0))
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            complete: self.complete,
            escalations: self.escalations,
            segments: self
                .segments
                .iter()
                .map(|s| SegmentSummary {
                    start: s.start,
                    end: s.end,
                    kappa: s.kappa,
                    stopped: s.stopped,
                    path_id: s.path_id,
                    failure: s.failure.clone(),
                    terminal: TerminalMonitors::of(&s.terminal),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TerminalMonitors {
    pub u_l2: f64,
    pub c_l2: f64,
    pub n_hm1: f64,
    pub mass_n: f64,
}

impl TerminalMonitors {
    pub fn of(s: &SystemState) -> Self {
        Self {
            u_l2: s.u.l2_norm(),
            c_l2: s.c.l2_norm(),
            n_hm1: s.n.sobolev_norm(-1.0),
            mass_n: s.n.integral(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentSummary {
    pub start: f64,
    pub end: f64,
    pub kappa: f64,
    pub stopped: bool,
    pub path_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub terminal: TerminalMonitors,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub complete: bool,
    pub escalations: usize,
    pub segments: Vec<SegmentSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceedanceRow {
    pub kappa: f64,
    /// Fraction of paths with `τ_κ ≤ T`.
    pub probability: f64,
    /// `√(p (1 - p) / N)`.
    pub std_error: f64,
    pub hits: usize,
    /// Paths that failed numerically; counted as hits.
    pub blow_ups: usize,
}

/// `P(τ_κ ≤ T)` per threshold over paths `0..n_paths`, the same paths for
/// every threshold.
pub fn exceedance_prob(
    stepper: &Stepper,
    init: &SystemState,
    noise: &NoiseConfig,
    kappas: &[f64],
    n_paths: usize,
) -> Result<Vec<ExceedanceRow>> {
    if n_paths < 16 {
        return Err(Error::InvalidArgument(format!("need at least 16 paths, got {n_paths}")));
    }
    let p = stepper.params();
    let mut rows = Vec::with_capacity(kappas.len());
    for &kappa in kappas {
        let outcomes: Vec<Result<(bool, bool)>> = (0..n_paths as u64)
            .into_par_iter()
            .map(|path| {
                let w = NoisePath::sample(noise, p.steps, p.dt, path)?;
                let seg = run_local(init, kappa, stepper, &w, 0, p.steps)?;
                Ok((seg.stopped || seg.failure.is_some(), seg.failure.is_some()))
            })
            .collect();
        let mut hits = 0;
        let mut blow_ups = 0;
        for o in outcomes {
            let (hit, failed) = o?;
            hits += usize::from(hit);
            blow_ups += usize::from(failed);
        }
        let prob = hits as f64 / n_paths as f64;
        rows.push(ExceedanceRow {
            kappa,
            probability: prob,
            std_error: (prob * (1.0 - prob) / n_paths as f64).sqrt(),
            hits,
            blow_ups,
        });
    }
    Ok(rows)
}

/// No increase between consecutive thresholds beyond two combined
/// standard errors, and the last estimate at most the first.
pub fn exceedance_nonincreasing(rows: &[ExceedanceRow]) -> bool {
    let steps_ok = rows.windows(2).all(|w| {
        let se = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        w[1].probability <= w[0].probability + 2.0 * se
    });
    let ends_ok = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => b.probability <= a.probability,
        _ => true,
    };
    steps_ok && ends_ok
}
