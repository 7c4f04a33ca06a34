//! Locomotion tasks wired up as optimizer evaluators.
//!
//! Every evaluator returns objectives in the minimization convention and
//! stores the raw trial outcome (`dx`, `dy`, `dpsi`, `drift`, `energy`) as
//! record metadata.

use std::f64::consts::PI;

use crate::bayesopt::{Evaluation, SearchSpace};
use crate::cpg::{gait_from_schedule, ControlParams, GaitSpec, N_LEGS};
use crate::sim::{speed_objective, target_objective, Context, Simulator, TrialResult};

/// Trial length for the curve and primitive tasks (s).
pub const CURVE_DURATION: f64 = 5.0;
/// Radius of the curve-task training targets (mm).
pub const CURVE_RADIUS: f64 = 6.0;
/// Upper bound of each target coordinate (mm): 6 mm per second of trial.
pub const CURVE_CONTEXT_MAX: f64 = 6.0 * CURVE_DURATION;
pub const INCLINE_CONTEXT_MAX: f64 = 20.0;

pub fn control_space() -> SearchSpace {
    let bounds: Vec<(f64, f64)> = ControlParams::LOWER.into_iter().zip(ControlParams::UPPER).collect();
    SearchSpace::from_bounds(&ControlParams::NAMES, &bounds).expect("static bounds")
}

/// (ω, vh_phase_diff, amp) with both sides sharing the amplitude.
pub fn symmetric_space() -> SearchSpace {
    let b = control_space().bounds();
    SearchSpace::from_bounds(&["omega", "vh_phase_diff", "amp"], &[b[0], b[1], b[2]]).expect("static bounds")
}

/// (ω, vh_phase_diff, step start of each leg as a cycle fraction).
pub fn schedule_space() -> SearchSpace {
    let b = control_space().bounds();
    let mut names = vec!["omega".to_string(), "vh_phase_diff".to_string()];
    let mut bounds = vec![b[0], b[1]];
    for leg in 0..N_LEGS {
        names.push(format!("start{leg}"));
        bounds.push((0.0, 1.0));
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    SearchSpace::from_bounds(&refs, &bounds).expect("static bounds")
}

pub fn incline_context_space() -> SearchSpace {
    SearchSpace::from_bounds(&["incline_deg"], &[(0.0, INCLINE_CONTEXT_MAX)]).expect("static bounds")
}

pub fn curve_context_space() -> SearchSpace {
    SearchSpace::from_bounds(
        &["target_x", "target_y"],
        &[(0.0, CURVE_CONTEXT_MAX), (0.0, CURVE_CONTEXT_MAX)],
    )
    .expect("static bounds")
}

/// Five targets evenly spread over the front-left quadrant.
pub fn curve_targets() -> Vec<Vec<f64>> {
    (0..5)
        .map(|k| {
            let a = k as f64 * PI / 8.0;
            vec![(CURVE_RADIUS * a.cos()).max(0.0), (CURVE_RADIUS * a.sin()).max(0.0)]
        })
        .collect()
}

/// 7×7 grid of targets at 1..=7 mm per axis.
pub fn target_grid() -> Vec<[f64; 2]> {
    let mut g = Vec::with_capacity(49);
    for i in 1..=7 {
        for j in 1..=7 {
            g.push([i as f64, j as f64]);
        }
    }
    g
}

fn symmetric_params(theta: &[f64]) -> ControlParams {
    ControlParams::new(theta[0], theta[1], theta[2], theta[2])
}

pub fn schedule_gait(theta: &[f64]) -> Result<(GaitSpec, ControlParams), String> {
    let mut starts = [0.0; N_LEGS];
    for (s, v) in starts.iter_mut().zip(&theta[2..]) {
        *s = v.rem_euclid(1.0);
    }
    gait_from_schedule(starts, theta[0], theta[1]).map_err(|e| e.to_string())
}

/// A simulator plus the trial settings shared by every evaluation of a task.
#[derive(Debug, Clone)]
pub struct Task {
    pub sim: Simulator,
    pub gait: GaitSpec,
    pub duration: f64,
}

impl Task {
    pub fn new(sim: Simulator, gait: GaitSpec, duration: f64) -> Task {
        Task { sim, gait, duration }
    }

    fn trial(
        &self,
        gait: &GaitSpec,
        params: &ControlParams,
        context: Context,
        seed: u64,
    ) -> Result<TrialResult, String> {
        self.sim
            .run_trial(gait, params, context, self.duration, seed)
            .map_err(|e| e.to_string())
    }

    /// Negated drift-penalized speed over `ControlParams`.
    pub fn walk(&self, theta: &[f64], seed: u64) -> Result<Evaluation, String> {
        let r = self.trial(&self.gait, &ControlParams::from_slice(theta), Context::flat(), seed)?;
        Ok(with_meta(Evaluation::scalar(-self.speed(&r)), &r))
    }

    /// (−speed, energy).
    pub fn speed_energy(&self, theta: &[f64], seed: u64) -> Result<Evaluation, String> {
        let r = self.trial(&self.gait, &ControlParams::from_slice(theta), Context::flat(), seed)?;
        Ok(with_meta(Evaluation::vector(vec![-self.speed(&r), r.energy]), &r))
    }

    /// (−speed, energy) over the step-schedule parametrization; the task
    /// gait is ignored.
    pub fn discover(&self, theta: &[f64], seed: u64) -> Result<Evaluation, String> {
        let (gait, params) = schedule_gait(theta)?;
        let r = self.trial(&gait, &params, Context::flat(), seed)?;
        Ok(with_meta(Evaluation::vector(vec![-self.speed(&r), r.energy]), &r))
    }

    /// Negated speed with symmetric amplitudes on an incline (context in degrees).
    pub fn incline(&self, theta: &[f64], context: &[f64], seed: u64) -> Result<Evaluation, String> {
        let r = self.trial(&self.gait, &symmetric_params(theta), Context::incline(context[0]), seed)?;
        Ok(with_meta(Evaluation::scalar(-self.speed(&r)), &r))
    }

    /// Distance to the target displacement given as context.
    pub fn curve(&self, theta: &[f64], context: &[f64], seed: u64) -> Result<Evaluation, String> {
        let r = self.trial(&self.gait, &ControlParams::from_slice(theta), Context::flat(), seed)?;
        Ok(with_meta(
            Evaluation::scalar(target_objective(&r, [context[0], context[1]])),
            &r,
        ))
    }

    fn speed(&self, r: &TrialResult) -> f64 {
        speed_objective(r, self.sim.config.drift_penalty)
    }
}

fn with_meta(ev: Evaluation, r: &TrialResult) -> Evaluation {
    ev.with_meta("dx", r.dx)
        .with_meta("dy", r.dy)
        .with_meta("dpsi", r.dpsi)
        .with_meta("drift", r.drift)
        .with_meta("energy", r.energy)
}
