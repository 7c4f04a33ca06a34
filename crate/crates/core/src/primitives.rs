//! Motor primitives: a learned map from CPG parameters to the body-frame
//! displacement of one trial, its inversion, and greedy shooting through a
//! maze.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesopt::{derive_seed, maximize_unit, AcqOptions, History, SearchSpace};
use crate::cpg::{ControlParams, GaitSpec};
use crate::gp::{Dataset, GpError, GpModel};
use crate::sim::{segment_collides, Context, Maze, Pose, SimError, Simulator};

pub const MIN_RECORDS: usize = 20;
/// Quantile of the observed displacement magnitudes taken as the model's
/// reach; the largest few trials are usually initial-design outliers.
pub const REACH_QUANTILE: f64 = 0.9;
pub const META_KEYS: [&str; 3] = ["dx", "dy", "dpsi"];

#[derive(Debug, Error)]
pub enum PrimitiveError {
    #[error("need at least {MIN_RECORDS} records, got {0}")]
    TooFewRecords(usize),
    #[error("record {iter} has no `{key}` observation")]
    MissingMeta { iter: usize, key: &'static str },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error("parameters {0:?} are not valid control parameters")]
    BadTheta(Vec<f64>),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Three independent GPs on the same inputs: θ ↦ (Δx, Δy, Δψ).
#[derive(Debug, Clone)]
pub struct PrimitiveModel {
    gx: GpModel,
    gy: GpModel,
    gpsi: GpModel,
    space: SearchSpace,
    max_displacement: f64,
    pub gait: GaitSpec,
    pub trial_duration: f64,
    pub provenance: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub dx: f64,
    pub dy: f64,
    pub dpsi: f64,
    pub var_dx: f64,
    pub var_dy: f64,
    pub var_dpsi: f64,
    /// The query lies outside the training bounds.
    pub extrapolated: bool,
}

/// Fits g on the observed displacements stored in `history` metadata.
/// Contexts are ignored: the model depends on θ only.
pub fn build_primitive_model(
    history: &History,
    space: &SearchSpace,
    gait: GaitSpec,
    trial_duration: f64,
    restarts: usize,
    seed: u64,
) -> Result<PrimitiveModel, PrimitiveError> {
    let recs = history.records();
    if recs.len() < MIN_RECORDS {
        return Err(PrimitiveError::TooFewRecords(recs.len()));
    }
    let mut outputs = [Vec::new(), Vec::new(), Vec::new()];
    let mut xs = Vec::with_capacity(recs.len());
    for r in recs {
        if r.theta.len() != space.dim() {
            return Err(PrimitiveError::DimensionMismatch {
                expected: space.dim(),
                got: r.theta.len(),
            });
        }
        for (k, key) in META_KEYS.iter().enumerate() {
            let v = r
                .meta
                .get(*key)
                .ok_or(PrimitiveError::MissingMeta { iter: r.iter, key })?;
            outputs[k].push(*v);
        }
        xs.push(r.theta.clone());
    }
    let bounds = space.bounds();
    let fit = |k: usize| -> Result<GpModel, PrimitiveError> {
        let ds = Dataset::new(&xs, &outputs[k], &bounds)?;
        Ok(GpModel::fit(ds, restarts, derive_seed(seed, 10 + k as u64, 0))?)
    };
    let mut norms: Vec<f64> = outputs[0].iter().zip(&outputs[1]).map(|(x, y)| x.hypot(*y)).collect();
    norms.sort_by(f64::total_cmp);
    let max_displacement = norms[((norms.len() - 1) as f64 * REACH_QUANTILE).round() as usize];
    Ok(PrimitiveModel {
        gx: fit(0)?,
        gy: fit(1)?,
        gpsi: fit(2)?,
        space: space.clone(),
        max_displacement,
        gait,
        trial_duration,
        provenance: format!("{} records, seed {seed}", recs.len()),
    })
}

impl PrimitiveModel {
    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    /// Robust maximum ([`REACH_QUANTILE`]) of the observed planar
    /// displacements (mm).
    pub fn max_displacement(&self) -> f64 {
        self.max_displacement
    }

    pub fn components(&self) -> [&GpModel; 3] {
        [&self.gx, &self.gy, &self.gpsi]
    }

    pub fn predict(&self, theta: &[f64]) -> Result<Prediction, PrimitiveError> {
        if theta.len() != self.space.dim() {
            return Err(PrimitiveError::DimensionMismatch {
                expected: self.space.dim(),
                got: theta.len(),
            });
        }
        Ok(self.predict_unit(&self.space.to_unit(theta), !self.space.contains(theta)))
    }

    fn predict_unit(&self, u: &[f64], extrapolated: bool) -> Prediction {
        let (dx, var_dx) = self.gx.predict_unit(u);
        let (dy, var_dy) = self.gy.predict_unit(u);
        let (dpsi, var_dpsi) = self.gpsi.predict_unit(u);
        Prediction {
            dx,
            dy,
            dpsi,
            var_dx,
            var_dy,
            var_dpsi,
            extrapolated,
        }
    }

    pub fn control_params(&self, theta: &[f64]) -> Result<ControlParams, PrimitiveError> {
        if theta.len() != ControlParams::DIM {
            return Err(PrimitiveError::BadTheta(theta.to_vec()));
        }
        let p = ControlParams::from_slice(theta);
        p.validate().map_err(|_| PrimitiveError::BadTheta(theta.to_vec()))?;
        Ok(p)
    }
}

pub fn predict_displacement(model: &PrimitiveModel, theta: &[f64]) -> Result<Prediction, PrimitiveError> {
    model.predict(theta)
}

impl Prediction {
    /// Root expected squared distance between the displacement and `target`
    /// under the posterior: `sqrt(‖μ − t‖² + σ²_x + σ²_y)`.
    pub fn expected_miss(&self, target: [f64; 2]) -> f64 {
        ((self.dx - target[0]).powi(2) + (self.dy - target[1]).powi(2) + self.var_dx + self.var_dy).sqrt()
    }
}

/// θ whose displacement is expected to land closest to `target`, found on the
/// model alone: `n_samples` uniform draws, then coordinate refinement of the
/// best 10. The predictive variance is part of the expected miss, which keeps
/// the solution on primitives the data actually covers.
pub fn solve_primitive(model: &PrimitiveModel, target: [f64; 2], n_samples: usize, seed: u64) -> Vec<f64> {
    let opts = AcqOptions {
        n_candidates: n_samples.max(1),
        n_starts: 10,
        ..AcqOptions::default()
    };
    let score = |u: &[f64]| -model.predict_unit(u, false).expected_miss(target);
    let (u, _) = maximize_unit(score, model.space.dim(), &opts, seed);
    model.space.from_unit(&u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanOptions {
    pub n_samples: usize,
    pub step_budget: usize,
    /// Waypoints farther than this multiple of the largest training
    /// displacement are approached through an intermediate point.
    pub reach_factor: f64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            n_samples: 10_000,
            step_budget: 25,
            reach_factor: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub theta: Vec<f64>,
    pub predicted: Prediction,
    /// World pose after the step.
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub start: Pose,
    pub goal: [f64; 2],
    pub steps: Vec<PlanStep>,
    /// Distance from the predicted final pose to the goal (mm).
    pub expected_error: f64,
}

impl Path {
    pub fn empty(start: Pose, goal: [f64; 2]) -> Path {
        Path {
            start,
            goal,
            steps: Vec::new(),
            expected_error: start.distance_to(goal),
        }
    }

    pub fn final_pose(&self) -> Pose {
        self.steps.last().map_or(self.start, |s| s.pose)
    }

    /// World-frame segments, one per step.
    pub fn segments(&self) -> Vec<([f64; 2], [f64; 2])> {
        let mut prev = self.start;
        self.steps
            .iter()
            .map(|s| {
                let seg = ([prev.x, prev.y], [s.pose.x, s.pose.y]);
                prev = s.pose;
                seg
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W, theta_names: &[String]) -> io::Result<()> {
        writeln!(
            w,
            "step,{},pred_dx,pred_dy,pred_dpsi,world_x,world_y,world_psi",
            theta_names.join(",")
        )?;
        for (i, s) in self.steps.iter().enumerate() {
            let theta: Vec<String> = s.theta.iter().map(|v| v.to_string()).collect();
            writeln!(
                w,
                "{i},{},{},{},{},{},{},{}",
                theta.join(","),
                s.predicted.dx,
                s.predicted.dy,
                s.predicted.dpsi,
                s.pose.x,
                s.pose.y,
                s.pose.psi
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("step {step}: every candidate collides or makes no progress towards {target:?}")]
    Blocked {
        step: usize,
        target: [f64; 2],
        partial: Box<Path>,
    },
    #[error("step budget exhausted {remaining:.2} mm from the goal")]
    Incomplete { remaining: f64, partial: Box<Path> },
}

impl PlanError {
    pub fn partial(&self) -> &Path {
        match self {
            PlanError::Blocked { partial, .. } | PlanError::Incomplete { partial, .. } => partial,
        }
    }
}

struct Candidate {
    u: Vec<f64>,
    pose: Pose,
    score: f64,
}

/// Greedy per-segment shooting. At each step `n_samples` random θ are mapped
/// through the model into world-frame end poses; candidates whose segment
/// hits a wall or that do not get closer to the current waypoint are
/// discarded, and the one with the smallest expected error is taken: squared
/// mean miss, plus the positional predictive variance, plus the heading
/// variance times the squared route length still to walk.
pub fn plan_path(model: &PrimitiveModel, maze: &Maze, opts: &PlanOptions, seed: u64) -> Result<Path, PlanError> {
    let route = maze.route();
    let reach = opts.reach_factor * model.max_displacement;
    let tol = maze.goal_tolerance;
    let mut path = Path::empty(maze.start, maze.goal);
    let mut wi = 0;
    for step in 0..=opts.step_budget {
        let pose = path.final_pose();
        while wi + 1 < route.len() && pose.distance_to(route[wi]) <= tol {
            wi += 1;
        }
        if wi + 1 == route.len() && pose.distance_to(maze.goal) <= tol {
            return Ok(path);
        }
        if step == opts.step_budget {
            break;
        }
        let waypoint = route[wi];
        let dist = pose.distance_to(waypoint);
        let target = if dist > reach && reach > 0.0 {
            let f = reach / dist;
            [pose.x + f * (waypoint[0] - pose.x), pose.y + f * (waypoint[1] - pose.y)]
        } else {
            waypoint
        };
        let before = pose.distance_to(target);
        let onward: f64 = route[wi..]
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum();

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 20, step as u64));
        let d = model.space.dim();
        let units: Vec<Vec<f64>> = (0..opts.n_samples)
            .map(|_| (0..d).map(|_| rng.gen()).collect())
            .collect();
        let scored: Vec<Option<Candidate>> = units
            .into_par_iter()
            .map(|u| {
                let p = model.predict_unit(&u, false);
                let end = pose.compose(p.dx, p.dy, p.dpsi);
                let miss = end.distance_to(target);
                if miss >= before || segment_collides([pose.x, pose.y], [end.x, end.y], maze) {
                    return None;
                }
                let lever = end.distance_to(waypoint) + onward;
                let score = (miss * miss + p.var_dx + p.var_dy + lever * lever * p.var_dpsi).sqrt();
                Some(Candidate { u, pose: end, score })
            })
            .collect();
        let mut best: Option<&Candidate> = None;
        for c in scored.iter().flatten() {
            if best.is_none_or(|b| c.score < b.score) {
                best = Some(c);
            }
        }
        let Some(best) = best else {
            return Err(PlanError::Blocked {
                step,
                target,
                partial: Box::new(path),
            });
        };
        let theta = model.space.from_unit(&best.u);
        let predicted = model.predict_unit(&best.u, false);
        path.steps.push(PlanStep {
            theta,
            predicted,
            pose: best.pose,
        });
        path.expected_error = best.pose.distance_to(maze.goal);
    }
    Err(PlanError::Incomplete {
        remaining: path.final_pose().distance_to(maze.goal),
        partial: Box::new(path),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub realized: [f64; 3],
    pub predicted: [f64; 3],
    /// Planar distance between realized and predicted body-frame displacement.
    pub error: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub start: Pose,
    pub steps: Vec<StepOutcome>,
    pub terminal_error: f64,
}

impl Execution {
    pub fn final_pose(&self) -> Pose {
        self.steps.last().map_or(self.start, |s| s.pose)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "step,dx,dy,dpsi,pred_dx,pred_dy,pred_dpsi,step_error,world_x,world_y,world_psi"
        )?;
        for (i, s) in self.steps.iter().enumerate() {
            writeln!(
                w,
                "{i},{},{},{},{},{},{},{},{},{},{}",
                s.realized[0],
                s.realized[1],
                s.realized[2],
                s.predicted[0],
                s.predicted[1],
                s.predicted[2],
                s.error,
                s.pose.x,
                s.pose.y,
                s.pose.psi
            )?;
        }
        Ok(())
    }
}

/// Runs each planned θ through the simulator, open loop, chaining the
/// realized poses.
pub fn execute_plan(
    path: &Path,
    model: &PrimitiveModel,
    sim: &Simulator,
    context: Context,
    seed: u64,
) -> Result<Execution, PrimitiveError> {
    let mut pose = path.start;
    let mut steps = Vec::with_capacity(path.steps.len());
    for (i, s) in path.steps.iter().enumerate() {
        let params = model.control_params(&s.theta)?;
        let r = sim.run_trial(
            &model.gait,
            &params,
            context,
            model.trial_duration,
            derive_seed(seed, 21, i as u64),
        )?;
        pose = pose.compose(r.dx, r.dy, r.dpsi);
        steps.push(StepOutcome {
            realized: [r.dx, r.dy, r.dpsi],
            predicted: [s.predicted.dx, s.predicted.dy, s.predicted.dpsi],
            error: (r.dx - s.predicted.dx).hypot(r.dy - s.predicted.dy),
            pose,
        });
    }
    Ok(Execution {
        start: path.start,
        terminal_error: pose.distance_to(path.goal),
        steps,
    })
}
