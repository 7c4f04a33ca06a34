//! File-driven experiment runner: configuration, validation, dispatch and
//! artifact output for the whole curriculum.
//!
//! A run writes `manifest.json` (the resolved configuration, the seeds and
//! every tunable constant) and a set of CSV files into the output directory.
//! The resolved configuration stored in the manifest can be fed back as a
//! config file, which reproduces the CSVs byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path as FsPath, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::bayesopt::{
    bo_run, cbo_policy, cbo_run, cycle_schedule, derive_seed, parego_run, AcqOptions, BoConfig, BoError, ContextualBo,
    Evaluation, History, ParegoConfig, SearchSpace,
};
use crate::cpg::{self, gait_from_name, GaitSpec};
use crate::gp::{self, FitOptions};
use crate::primitives::{
    build_primitive_model, execute_plan, plan_path, solve_primitive, PlanError, PlanOptions, PrimitiveModel,
    MIN_RECORDS,
};
use crate::sim::{Context, Maze, SimConfig, Simulator};
use crate::tasks::{self, Task};

/// Open-loop execution counts as reaching the goal within this multiple of
/// the maze tolerance.
pub const GOAL_MARGIN: f64 = 1.5;

const POLICY_EVAL_STREAM: u64 = 30;
const POLICY_STREAM: u64 = 31;
const MODEL_STREAM: u64 = 32;
const SOLVE_STREAM: u64 = 33;
const PLAN_STREAM: u64 = 34;
const EXECUTE_STREAM: u64 = 35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Walk,
    Moo,
    Discover,
    Incline,
    Curve,
    Primitives,
    Plan,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Walk,
        ExperimentKind::Moo,
        ExperimentKind::Discover,
        ExperimentKind::Incline,
        ExperimentKind::Curve,
        ExperimentKind::Primitives,
        ExperimentKind::Plan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Walk => "walk",
            ExperimentKind::Moo => "moo",
            ExperimentKind::Discover => "discover",
            ExperimentKind::Incline => "incline",
            ExperimentKind::Curve => "curve",
            ExperimentKind::Primitives => "primitives",
            ExperimentKind::Plan => "plan",
        }
    }

    fn default_budget(self) -> usize {
        match self {
            ExperimentKind::Walk | ExperimentKind::Moo => 50,
            ExperimentKind::Discover | ExperimentKind::Curve | ExperimentKind::Primitives | ExperimentKind::Plan => 250,
            ExperimentKind::Incline => 60,
        }
    }

    fn default_duration(self) -> f64 {
        match self {
            ExperimentKind::Curve | ExperimentKind::Primitives | ExperimentKind::Plan => tasks::CURVE_DURATION,
            _ => 1.0,
        }
    }

    /// Contextual experiments run on a single gait.
    fn single_gait(self) -> bool {
        matches!(
            self,
            ExperimentKind::Incline | ExperimentKind::Curve | ExperimentKind::Primitives | ExperimentKind::Plan
        )
    }

    fn uses_curve_history(self) -> bool {
        matches!(self, ExperimentKind::Primitives | ExperimentKind::Plan)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

/// Surrogate refit schedule and restarts shared by every GP in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpSettings {
    pub restarts: usize,
    pub refit_until: usize,
    pub refit_every: usize,
}

impl Default for GpSettings {
    fn default() -> Self {
        let bo = BoConfig::default();
        GpSettings {
            restarts: bo.gp_restarts,
            refit_until: bo.refit_until,
            refit_every: bo.refit_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimitiveSettings {
    /// Uniform draws per `solve_primitive` call.
    pub n_samples: usize,
    /// Comparison targets; empty means the default 7×7 grid.
    pub targets: Vec<[f64; 2]>,
}

impl Default for PrimitiveSettings {
    fn default() -> Self {
        PrimitiveSettings {
            n_samples: 10_000,
            targets: Vec::new(),
        }
    }
}

/// Configuration file contents. Unset optional fields take the defaults of
/// the experiment; [`ExperimentConfig::resolve`] fills them in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub gaits: Vec<String>,
    pub repetitions: usize,
    pub seed_base: u64,
    /// Explicit seeds; replaces `seed_base`/`repetitions` when nonempty.
    pub seeds: Vec<u64>,
    pub budget: Option<usize>,
    pub n_init: usize,
    pub noise: bool,
    pub output_dir: Option<PathBuf>,
    pub trial_duration: Option<f64>,
    /// Training contexts for `incline` (degrees) and `curve` (target mm).
    pub contexts: Vec<Vec<f64>>,
    /// Contexts at which the learned incline policy is evaluated.
    pub policy_contexts: Vec<Vec<f64>>,
    pub maze: Option<PathBuf>,
    /// Curve-task history to build primitives from; rerun when absent.
    pub history: Option<PathBuf>,
    pub sim: SimConfig,
    pub gp: GpSettings,
    pub acquisition: AcqOptions,
    pub parego: ParegoConfig,
    pub primitives: PrimitiveSettings,
    pub plan: PlanOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            gaits: vec!["tripod".into()],
            repetitions: 20,
            seed_base: 0,
            seeds: Vec::new(),
            budget: None,
            n_init: 5,
            noise: true,
            output_dir: None,
            trial_duration: None,
            contexts: Vec::new(),
            policy_contexts: Vec::new(),
            maze: None,
            history: None,
            sim: SimConfig::default(),
            gp: GpSettings::default(),
            acquisition: AcqOptions::default(),
            parego: ParegoConfig::default(),
            primitives: PrimitiveSettings::default(),
            plan: PlanOptions::default(),
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed_base: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub noise: Option<bool>,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("evaluator fault in {run}: {message}")]
    Fault { run: String, message: String },
    #[error("{run}: {message}")]
    Model { run: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Fault { .. } => 3,
            ExperimentError::Model { .. } | ExperimentError::Io(_) => 1,
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML config file, or the `config` entry of a JSON manifest.
    pub fn load(path: &FsPath) -> Result<ExperimentConfig, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(vec![format!("cannot read {}: {e}", path.display())]))?;
        let mut cfg: ExperimentConfig = if path.extension().is_some_and(|e| e == "json") {
            let mut value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| ExperimentError::Config(vec![format!("{}: {e}", path.display())]))?;
            let inner = value.get_mut("config").map(serde_json::Value::take).unwrap_or(value);
            serde_json::from_value(inner)
                .map_err(|e| ExperimentError::Config(vec![format!("{}: {e}", path.display())]))?
        } else {
            toml::from_str(&text).map_err(|e| ExperimentError::Config(vec![format!("{}: {e}", path.display())]))?
        };
        let base = path.parent().unwrap_or(FsPath::new(""));
        for p in [&mut cfg.maze, &mut cfg.history].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            if let Ok(abs) = fs::canonicalize(&*p) {
                *p = abs;
            }
        }
        Ok(cfg)
    }

    /// Applies overrides, fills experiment defaults and validates
    /// everything, reporting every problem at once.
    pub fn resolve(mut self, kind: ExperimentKind, ov: &Overrides) -> Result<Resolved, ExperimentError> {
        let mut errs = Vec::new();
        match self.experiment {
            Some(k) if k != kind => errs.push(format!("config is for `{k}` but `{kind}` was requested")),
            _ => self.experiment = Some(kind),
        }
        if let Some(base) = ov.seed_base {
            if self.seeds.is_empty() {
                self.seed_base = base;
            } else {
                errs.push("--seed-base cannot be combined with an explicit `seeds` list".into());
            }
        }
        if let Some(n) = ov.noise {
            self.noise = n;
        }
        if let Some(out) = &ov.output_dir {
            self.output_dir = Some(out.clone());
        }
        let output_dir = self
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
        self.output_dir = Some(output_dir.clone());
        let budget = *self.budget.get_or_insert(kind.default_budget());
        let duration = *self.trial_duration.get_or_insert(kind.default_duration());
        if self.contexts.is_empty() {
            self.contexts = match kind {
                ExperimentKind::Incline => vec![vec![5.0], vec![10.0], vec![15.0]],
                ExperimentKind::Curve | ExperimentKind::Primitives | ExperimentKind::Plan => tasks::curve_targets(),
                _ => Vec::new(),
            };
        }
        if self.policy_contexts.is_empty() && kind == ExperimentKind::Incline {
            self.policy_contexts = (0..=8).map(|i| vec![2.5 * i as f64]).collect();
        }
        if self.primitives.targets.is_empty() && kind == ExperimentKind::Primitives {
            self.primitives.targets = tasks::target_grid();
        }
        if self.seeds.is_empty() {
            if self.repetitions == 0 {
                errs.push("repetitions must be at least 1 (or give `seeds`)".into());
            }
            self.seeds = (0..self.repetitions as u64).map(|i| self.seed_base + i).collect();
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            errs.push(format!("seed {dup} is listed twice"));
        }

        let mut gaits = Vec::new();
        if self.gaits.is_empty() && kind != ExperimentKind::Discover {
            errs.push("gaits must name at least one gait".into());
        }
        if kind.single_gait() && self.gaits.len() > 1 {
            errs.push(format!("`{kind}` runs on a single gait, got {}", self.gaits.len()));
        }
        for g in &self.gaits {
            match gait_from_name(g) {
                Ok(spec) => gaits.push((g.clone(), spec)),
                Err(e) => errs.push(format!("gait `{g}`: {e}")),
            }
        }
        if self.n_init < 2 {
            errs.push(format!("n_init must be at least 2, got {}", self.n_init));
        }
        if budget < self.n_init {
            errs.push(format!("budget {budget} is below n_init {}", self.n_init));
        }
        if kind.uses_curve_history() && self.history.is_none() && budget < MIN_RECORDS {
            errs.push(format!(
                "primitive models need a curve budget of at least {MIN_RECORDS}, got {budget}"
            ));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            errs.push(format!("trial_duration must be positive, got {duration}"));
        }

        let ctx_space = match kind {
            ExperimentKind::Incline => Some(tasks::incline_context_space()),
            ExperimentKind::Curve | ExperimentKind::Primitives | ExperimentKind::Plan => {
                Some(tasks::curve_context_space())
            }
            _ => None,
        };
        if let Some(space) = &ctx_space {
            if self.contexts.is_empty() {
                errs.push("contexts must not be empty".into());
            }
            for (name, list) in [("contexts", &self.contexts), ("policy_contexts", &self.policy_contexts)] {
                for c in list {
                    if c.len() != space.dim() || !space.contains(c) {
                        errs.push(format!(
                            "{name}: {c:?} is outside {:?} ({} values)",
                            space.bounds(),
                            space.dim()
                        ));
                    }
                }
            }
        } else if !self.contexts.is_empty() || !self.policy_contexts.is_empty() {
            errs.push(format!("`{kind}` takes no contexts"));
        }
        for t in &self.primitives.targets {
            if !t.iter().all(|v| v.is_finite()) {
                errs.push(format!("primitives.targets: {t:?} is not finite"));
            }
        }

        let mut maze = None;
        if kind == ExperimentKind::Plan {
            match &self.maze {
                None => errs.push("`plan` needs a maze file".into()),
                Some(p) => match fs::read_to_string(p) {
                    Err(e) => errs.push(format!("maze {}: {e}", p.display())),
                    Ok(text) => match Maze::parse(&text) {
                        Ok(m) => maze = Some(m),
                        Err(e) => errs.push(format!("maze {}: {e}", p.display())),
                    },
                },
            }
        }
        let mut history = None;
        if let Some(p) = &self.history {
            if !kind.uses_curve_history() {
                errs.push(format!("`{kind}` does not read a history file"));
            }
            match fs::read_to_string(p) {
                Err(e) => errs.push(format!("history {}: {e}", p.display())),
                Ok(text) => match serde_json::from_str::<History>(&text) {
                    Ok(h) if h.len() < MIN_RECORDS => errs.push(format!(
                        "history {} has {} records, need {MIN_RECORDS}",
                        p.display(),
                        h.len()
                    )),
                    Ok(h) => history = Some(h),
                    Err(e) => errs.push(format!("history {}: {e}", p.display())),
                },
            }
        }

        errs.extend(validate_sim(&self.sim));
        if self.gp.restarts == 0 {
            errs.push("gp.restarts must be at least 1".into());
        }
        if self.gp.refit_every == 0 {
            errs.push("gp.refit_every must be at least 1".into());
        }
        let acq = &self.acquisition;
        if acq.n_candidates == 0 || acq.n_starts == 0 || acq.n_starts > acq.n_candidates {
            errs.push(format!(
                "acquisition needs 1 <= n_starts <= n_candidates, got {} and {}",
                acq.n_starts, acq.n_candidates
            ));
        }
        if !(acq.initial_step > 0.0 && acq.initial_step <= 1.0) {
            errs.push(format!(
                "acquisition.initial_step must be in (0, 1], got {}",
                acq.initial_step
            ));
        }
        if !(self.parego.rho >= 0.0 && self.parego.rho.is_finite()) {
            errs.push(format!("parego.rho must be nonnegative, got {}", self.parego.rho));
        }
        if self.parego.divisions == 0 {
            errs.push("parego.divisions must be at least 1".into());
        }
        if let Some(r) = self.parego.reference {
            if !r.iter().all(|v| v.is_finite()) {
                errs.push(format!("parego.reference {r:?} is not finite"));
            }
        }
        if self.primitives.n_samples == 0 {
            errs.push("primitives.n_samples must be at least 1".into());
        }
        if self.plan.n_samples == 0 || self.plan.step_budget == 0 {
            errs.push("plan.n_samples and plan.step_budget must be at least 1".into());
        }
        if !(self.plan.reach_factor > 0.0 && self.plan.reach_factor.is_finite()) {
            errs.push(format!(
                "plan.reach_factor must be positive, got {}",
                self.plan.reach_factor
            ));
        }
        if let Some(out) = &self.output_dir {
            if out.exists() && !out.is_dir() {
                errs.push(format!("output_dir {} is not a directory", out.display()));
            }
        }

        if !errs.is_empty() {
            return Err(ExperimentError::Config(errs));
        }
        Ok(Resolved {
            kind,
            gaits,
            output_dir,
            maze,
            history,
            config: self,
        })
    }
}

fn validate_sim(s: &SimConfig) -> Vec<String> {
    let mut errs = Vec::new();
    let positive = [
        ("sim.dt", s.dt),
        ("sim.a_r", s.a_r),
        ("sim.a_x", s.a_x),
        ("sim.traction", s.traction),
        ("sim.motor_force", s.motor_force),
        ("sim.geometry.body_length", s.geometry.body_length),
        ("sim.geometry.body_width", s.geometry.body_width),
        ("sim.geometry.mass", s.geometry.mass),
        ("sim.geometry.vertical_stroke", s.geometry.vertical_stroke),
        ("sim.geometry.horizontal_stroke", s.geometry.horizontal_stroke),
    ];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            errs.push(format!("{name} must be positive, got {v}"));
        }
    }
    if s.dt > cpg::MAX_DT {
        errs.push(format!("sim.dt {} exceeds the integrator limit {}", s.dt, cpg::MAX_DT));
    }
    let nonnegative = [
        ("sim.yaw_gain", s.yaw_gain),
        ("sim.slip_gain", s.slip_gain),
        ("sim.drift_penalty", s.drift_penalty),
        ("sim.obs_noise", s.obs_noise),
    ];
    for (name, v) in nonnegative {
        if !(v >= 0.0 && v.is_finite()) {
            errs.push(format!("{name} must be nonnegative, got {v}"));
        }
    }
    if !(s.contact_threshold > 0.0 && s.contact_threshold < 1.0) {
        errs.push(format!(
            "sim.contact_threshold must be in (0, 1), got {}",
            s.contact_threshold
        ));
    }
    errs
}

/// A validated configuration with its referenced files loaded.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub kind: ExperimentKind,
    pub config: ExperimentConfig,
    pub gaits: Vec<(String, GaitSpec)>,
    pub output_dir: PathBuf,
    pub maze: Option<Maze>,
    pub history: Option<History>,
}

/// What a finished run produced, for the CLI summary.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

impl Resolved {
    fn budget(&self) -> usize {
        self.config.budget.expect("resolved")
    }

    fn duration(&self) -> f64 {
        self.config.trial_duration.expect("resolved")
    }

    fn bo_config(&self, seed: u64) -> BoConfig {
        BoConfig {
            budget: self.budget(),
            n_init: self.config.n_init,
            seed,
            gp_restarts: self.config.gp.restarts,
            refit_until: self.config.gp.refit_until,
            refit_every: self.config.gp.refit_every,
            acquisition: self.config.acquisition.clone(),
        }
    }

    fn simulator(&self) -> Simulator {
        Simulator::new(self.config.sim.clone().with_noise(self.config.noise))
    }

    fn task(&self, gait: &GaitSpec) -> Task {
        Task::new(self.simulator(), gait.clone(), self.duration())
    }

    fn single_gait(&self) -> &GaitSpec {
        &self.gaits[0].1
    }

    /// Every tunable constant plus the resolved configuration.
    pub fn manifest(&self) -> serde_json::Value {
        let fit = FitOptions::default();
        json!({
            "experiment": self.kind.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "seeds": self.config.seeds,
            "config": self.config,
            "constants": {
                "cpg": {
                    "coupling_weight": cpg::COUPLING_WEIGHT,
                    "default_gain": cpg::DEFAULT_GAIN,
                    "default_dt": cpg::DEFAULT_DT,
                    "max_dt": cpg::MAX_DT,
                    "omega_bounds": [cpg::OMEGA_MIN, cpg::OMEGA_MAX],
                    "vh_phase_bounds": [cpg::VH_PHASE_MIN, cpg::VH_PHASE_MAX],
                },
                "sim": self.config.sim,
                "gp": {
                    "kernel": "ard_squared_exponential",
                    "lengthscale_bounds": gp::LENGTHSCALE_BOUNDS,
                    "signal_variance_bounds": gp::SIGNAL_VARIANCE_BOUNDS,
                    "noise_variance_bounds": gp::NOISE_VARIANCE_BOUNDS,
                    "max_jitter": gp::MAX_JITTER,
                    "fit": fit,
                    "restarts": self.config.gp.restarts,
                },
                "bayesopt": self.bo_config(0),
                "parego": self.config.parego,
                "primitives": {
                    "min_records": MIN_RECORDS,
                    "solve_samples": self.config.primitives.n_samples,
                    "plan": self.config.plan,
                },
                "tasks": {
                    "curve_duration": tasks::CURVE_DURATION,
                    "curve_radius": tasks::CURVE_RADIUS,
                    "curve_context_max": tasks::CURVE_CONTEXT_MAX,
                    "incline_context_max": tasks::INCLINE_CONTEXT_MAX,
                },
            },
        })
    }

    /// Runs the experiment and writes every artifact.
    pub fn run(&self) -> Result<Report, ExperimentError> {
        fs::create_dir_all(&self.output_dir)?;
        let manifest = serde_json::to_string_pretty(&self.manifest()).expect("manifest serializes");
        let mut report = Report::default();
        report
            .files
            .push(self.write_file("manifest.json", |w| writeln!(w, "{manifest}"))?);
        match self.kind {
            ExperimentKind::Walk => self.run_walk(&mut report)?,
            ExperimentKind::Moo => self.run_moo(&mut report)?,
            ExperimentKind::Discover => self.run_discover(&mut report)?,
            ExperimentKind::Incline => self.run_incline(&mut report)?,
            ExperimentKind::Curve => self.run_curve(&mut report)?,
            ExperimentKind::Primitives => self.run_primitives(&mut report)?,
            ExperimentKind::Plan => self.run_plan(&mut report)?,
        }
        Ok(report)
    }

    fn write_file<F>(&self, name: &str, body: F) -> Result<PathBuf, ExperimentError>
    where
        F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    {
        let path = self.output_dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        body(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    /// Converts an optimizer error, flushing whatever history it carries.
    fn bo_failure(&self, run: &str, objectives: &[&str], err: BoError) -> ExperimentError {
        if let Some(h) = err.partial_history() {
            let h = named(h.clone(), objectives);
            if let Err(e) = self.write_file(&format!("{run}.csv"), |w| h.write_csv(w)) {
                return e;
            }
        }
        match err {
            BoError::Fault { message, .. } => ExperimentError::Fault {
                run: run.to_string(),
                message,
            },
            other => ExperimentError::Model {
                run: run.to_string(),
                message: other.to_string(),
            },
        }
    }

    /// Runs `job` for every seed in parallel; the first failure in seed
    /// order wins.
    fn per_seed<T, F>(&self, job: F) -> Result<Vec<(u64, T)>, ExperimentError>
    where
        T: Send,
        F: Fn(u64) -> Result<T, ExperimentError> + Sync,
    {
        let out: Vec<Result<(u64, T), ExperimentError>> =
            self.config.seeds.par_iter().map(|&s| job(s).map(|t| (s, t))).collect();
        out.into_iter().collect()
    }

    fn run_walk(&self, report: &mut Report) -> Result<(), ExperimentError> {
        let space = tasks::control_space();
        let jobs: Vec<(&String, &GaitSpec, u64)> = self
            .gaits
            .iter()
            .flat_map(|(name, g)| self.config.seeds.iter().map(move |&s| (name, g, s)))
            .collect();
        let results: Vec<Result<(String, f64), ExperimentError>> = jobs
            .par_iter()
            .map(|&(name, gait, seed)| {
                let run = format!("walk_{name}_seed{seed}");
                let task = self.task(gait);
                let h = bo_run(|t, s| task.walk(t, s), &space, &self.bo_config(seed))
                    .map_err(|e| self.bo_failure(&run, &SPEED, e))?;
                let h = named(h, &SPEED);
                self.write_file(&format!("{run}.csv"), |w| h.write_csv(w))?;
                let best = -h.best_so_far().last().copied().unwrap_or(f64::NAN);
                Ok((run, best))
            })
            .collect();
        let mut rows = Vec::new();
        for (r, (name, _, seed)) in results.into_iter().zip(&jobs) {
            let (run, best) = r?;
            report.files.push(self.output_dir.join(format!("{run}.csv")));
            rows.push(format!("{name},{seed},{best}"));
        }
        report.files.push(self.write_file("summary.csv", |w| {
            writeln!(w, "gait,seed,best_speed")?;
            rows.iter().try_for_each(|r| writeln!(w, "{r}"))
        })?);
        report.lines.push(format!("{} walk runs", rows.len()));
        Ok(())
    }

    fn run_moo(&self, report: &mut Report) -> Result<(), ExperimentError> {
        let space = tasks::control_space();
        let jobs: Vec<(&String, &GaitSpec, u64)> = self
            .gaits
            .iter()
            .flat_map(|(name, g)| self.config.seeds.iter().map(move |&s| (name, g, s)))
            .collect();
        let results: Vec<Result<Vec<PathBuf>, ExperimentError>> = jobs
            .par_iter()
            .map(|&(name, gait, seed)| {
                let task = self.task(gait);
                self.parego_job(&format!("moo_{name}_seed{seed}"), &space, seed, |t, s| {
                    task.speed_energy(t, s)
                })
            })
            .collect();
        for r in results {
            report.files.extend(r?);
        }
        report.lines.push(format!("{} moo runs", jobs.len()));
        Ok(())
    }

    fn run_discover(&self, report: &mut Report) -> Result<(), ExperimentError> {
        let space = tasks::schedule_space();
        let gait = self
            .gaits
            .first()
            .map(|g| g.1.clone())
            .unwrap_or(cpg::gait_from_name("tripod").expect("catalog"));
        let task = self.task(&gait);
        let files = self.per_seed(|seed| {
            self.parego_job(&format!("discover_seed{seed}"), &space, seed, |t, s| {
                task.discover(t, s)
            })
        })?;
        report.lines.push(format!("{} discovery runs", files.len()));
        report.files.extend(files.into_iter().flat_map(|(_, f)| f));
        Ok(())
    }

    fn parego_job<F>(&self, run: &str, space: &SearchSpace, seed: u64, eval: F) -> Result<Vec<PathBuf>, ExperimentError>
    where
        F: FnMut(&[f64], u64) -> Result<Evaluation, String>,
    {
        let mut res = parego_run(eval, space, 2, &self.bo_config(seed), &self.config.parego)
            .map_err(|e| self.bo_failure(run, &SPEED_ENERGY, e))?;
        res.history = named(res.history, &SPEED_ENERGY);
        let mut files = vec![self.write_file(&format!("{run}.csv"), |w| res.history.write_pareto_csv(w, &res.front))?];
        if !res.hypervolume.is_empty() {
            files.push(self.write_file(&format!("{run}_hypervolume.csv"), |w| {
                writeln!(w, "iter,hypervolume")?;
                res.hypervolume
                    .iter()
                    .enumerate()
                    .try_for_each(|(i, v)| writeln!(w, "{i},{v}"))
            })?);
        }
        Ok(files)
    }

    fn run_incline(&self, report: &mut Report) -> Result<(), ExperimentError> {
        let theta_space = tasks::symmetric_space();
        let ctx_space = tasks::incline_context_space();
        let task = self.task(self.single_gait());
        let schedule = cycle_schedule(&self.config.contexts, self.budget() - self.config.n_init);
        let results = self.per_seed(|seed| {
            let run = format!("incline_seed{seed}");
            let cfg = self.bo_config(seed);
            let h = cbo_run(
                |t, c, s| task.incline(t, c, s),
                &theta_space,
                &ctx_space,
                &schedule,
                &cfg,
            )
            .map_err(|e| self.bo_failure(&run, &SPEED, e))?;
            let h = named(h, &SPEED);
            let mut files = vec![self.write_file(&format!("{run}.csv"), |w| h.write_csv(w))?];
            let mut bo = ContextualBo::with_history(theta_space.clone(), ctx_space.clone(), cfg, h);
            let mut rows = Vec::new();
            for (i, ctx) in self.config.policy_contexts.iter().enumerate() {
                let model = bo.model(ctx).map_err(|e| self.bo_failure(&run, &SPEED, e))?;
                let theta = cbo_policy(
                    &model,
                    ctx,
                    &self.config.acquisition,
                    derive_seed(seed, POLICY_STREAM, i as u64),
                );
                let ev = task
                    .incline(&theta, ctx, derive_seed(seed, POLICY_EVAL_STREAM, i as u64))
                    .map_err(|message| ExperimentError::Fault {
                        run: run.clone(),
                        message,
                    })?;
                rows.push((ctx[0], theta, -ev.objectives[0]));
            }
            files.push(self.write_file(&format!("{run}_policy.csv"), |w| {
                writeln!(w, "incline_deg,{},speed", theta_space.names().join(","))?;
                rows.iter().try_for_each(|(c, t, v)| writeln!(w, "{c},{},{v}", join(t)))
            })?);
            Ok(files)
        })?;
        report.lines.push(format!("{} incline runs", results.len()));
        report.files.extend(results.into_iter().flat_map(|(_, f)| f));
        Ok(())
    }

    /// Runs the curve-task cBO for one seed and writes its history.
    fn curve_history(&self, seed: u64, run: &str, files: &mut Vec<PathBuf>) -> Result<History, ExperimentError> {
        let task = self.task(self.single_gait());
        let schedule = cycle_schedule(&self.config.contexts, self.budget() - self.config.n_init);
        let h = cbo_run(
            |t, c, s| task.curve(t, c, s),
            &tasks::control_space(),
            &tasks::curve_context_space(),
            &schedule,
            &self.bo_config(seed),
        )
        .map_err(|e| self.bo_failure(run, &TARGET, e))?;
        let h = named(h, &TARGET);
        files.push(self.write_file(&format!("{run}.csv"), |w| h.write_csv(w))?);
        let json = serde_json::to_string(&h).expect("history serializes");
        files.push(self.write_file(&format!("{run}_history.json"), |w| writeln!(w, "{json}"))?);
        Ok(h)
    }

    fn run_curve(&self, report: &mut Report) -> Result<(), ExperimentError> {
        let results = self.per_seed(|seed| {
            let mut files = Vec::new();
            self.curve_history(seed, &format!("curve_seed{seed}"), &mut files)?;
            Ok(files)
        })?;
        report.lines.push(format!("{} curve runs", results.len()));
        report.files.extend(results.into_iter().flat_map(|(_, f)| f));
        Ok(())
    }

    /// The configured history, or a fresh curve run for this seed.
    fn source_history(&self, seed: u64, files: &mut Vec<PathBuf>) -> Result<History, ExperimentError> {
        match &self.history {
            Some(h) => Ok(h.clone()),
            None => self.curve_history(seed, &format!("{}_seed{seed}_curve", self.kind), files),
        }
    }

    fn primitive_model(&self, history: &History, seed: u64, run: &str) -> Result<PrimitiveModel, ExperimentError> {
        let mut model = build_primitive_model(
            history,
            &tasks::control_space(),
            self.single_gait().clone(),
            self.duration(),
            self.config.gp.restarts,
            derive_seed(seed, MODEL_STREAM, 0),
        )
        .map_err(|e| ExperimentError::Model {
            run: run.to_string(),
            message: e.to_string(),
        })?;
        model.provenance = match &self.config.history {
            Some(p) => p.display().to_string(),
            None => format!("curve seed {seed}"),
        };
        Ok(model)
    }

    fn run_primitives(&self, report: &mut Report) -> Result<(), ExperimentError> {
        let space = tasks::control_space();
        let ctx_space = tasks::curve_context_space();
        let task = self.task(self.single_gait());
        let targets = &self.config.primitives.targets;
        let results = self.per_seed(|seed| {
            let run = format!("primitives_seed{seed}");
            let mut files = Vec::new();
            let history = self.source_history(seed, &mut files)?;
            let model = self.primitive_model(&history, seed, &run)?;
            let mut bo = ContextualBo::with_history(space.clone(), ctx_space.clone(), self.bo_config(seed), history);
            let joint = bo.model(&[0.0, 0.0]).map_err(|e| self.bo_failure(&run, &TARGET, e))?;
            let fault = |message| ExperimentError::Fault {
                run: run.clone(),
                message,
            };
            let mut rows = Vec::with_capacity(targets.len());
            for (i, t) in targets.iter().enumerate() {
                let i = i as u64;
                let tp = solve_primitive(
                    &model,
                    *t,
                    self.config.primitives.n_samples,
                    derive_seed(seed, SOLVE_STREAM, i),
                );
                let ep = task
                    .curve(&tp, t, derive_seed(seed, POLICY_EVAL_STREAM, i))
                    .map_err(fault)?;
                let tc = cbo_policy(&joint, t, &self.config.acquisition, derive_seed(seed, POLICY_STREAM, i));
                let ec = task
                    .curve(&tc, t, derive_seed(seed, POLICY_EVAL_STREAM, i))
                    .map_err(fault)?;
                rows.push((*t, tp, ep.objectives[0], tc, ec.objectives[0]));
            }
            let names = space.names();
            files.push(self.write_file(&format!("{run}.csv"), |w| {
                let prim: Vec<String> = names.iter().map(|n| format!("primitive_{n}")).collect();
                let pol: Vec<String> = names.iter().map(|n| format!("policy_{n}")).collect();
                writeln!(
                    w,
                    "target_x,target_y,{},primitive_error,{},policy_error",
                    prim.join(","),
                    pol.join(",")
                )?;
                rows.iter().try_for_each(|(t, tp, ep, tc, ec)| {
                    writeln!(w, "{},{},{},{ep},{},{ec}", t[0], t[1], join(tp), join(tc))
                })
            })?);
            let n = rows.len() as f64;
            let mean_p = rows.iter().map(|r| r.2).sum::<f64>() / n;
            let mean_c = rows.iter().map(|r| r.4).sum::<f64>() / n;
            Ok((files, mean_p, mean_c))
        })?;
        let mut summary = Vec::new();
        for (seed, (files, p, c)) in results {
            report.files.extend(files);
            report.lines.push(format!(
                "seed {seed}: primitive error {p:.3} mm, policy error {c:.3} mm"
            ));
            summary.push(format!("{seed},{p},{c}"));
        }
        report.files.push(self.write_file("summary.csv", |w| {
            writeln!(w, "seed,mean_primitive_error,mean_policy_error")?;
            summary.iter().try_for_each(|r| writeln!(w, "{r}"))
        })?);
        Ok(())
    }

    fn run_plan(&self, report: &mut Report) -> Result<(), ExperimentError> {
        let maze = self.maze.as_ref().expect("validated");
        let sim = self.simulator();
        let results = self.per_seed(|seed| {
            let run = format!("plan_seed{seed}");
            let mut files = Vec::new();
            let history = self.source_history(seed, &mut files)?;
            let model = self.primitive_model(&history, seed, &run)?;
            let names = model.space().names();
            let (path, status) = match plan_path(&model, maze, &self.config.plan, derive_seed(seed, PLAN_STREAM, 0)) {
                Ok(p) => (p, "planned".to_string()),
                Err(e) => {
                    let status = match &e {
                        PlanError::Blocked { step, .. } => format!("blocked at step {step}"),
                        PlanError::Incomplete { .. } => "step budget exhausted".to_string(),
                    };
                    (e.partial().clone(), status)
                }
            };
            files.push(self.write_file(&format!("{run}_path.csv"), |w| path.write_csv(w, &names))?);
            let exec = execute_plan(
                &path,
                &model,
                &sim,
                Context::flat(),
                derive_seed(seed, EXECUTE_STREAM, 0),
            )
            .map_err(|e| ExperimentError::Fault {
                run: run.clone(),
                message: e.to_string(),
            })?;
            files.push(self.write_file(&format!("{run}_execution.csv"), |w| exec.write_csv(w))?);
            let reached = exec.terminal_error <= GOAL_MARGIN * maze.goal_tolerance;
            Ok((
                files,
                status,
                path.steps.len(),
                path.expected_error,
                exec.terminal_error,
                reached,
            ))
        })?;
        let mut summary = Vec::new();
        for (seed, (files, status, steps, expected, terminal, reached)) in results {
            report.files.extend(files);
            report.lines.push(format!(
                "seed {seed}: {status}, {steps} steps, terminal error {terminal:.3} mm, reached {reached}"
            ));
            summary.push(format!("{seed},{status},{steps},{expected},{terminal},{reached}"));
        }
        report.files.push(self.write_file("summary.csv", |w| {
            writeln!(w, "seed,status,steps,expected_error,terminal_error,goal_reached")?;
            summary.iter().try_for_each(|r| writeln!(w, "{r}"))
        })?);
        Ok(())
    }
}

const SPEED: [&str; 1] = ["neg_speed"];
const SPEED_ENERGY: [&str; 2] = ["neg_speed", "energy"];
const TARGET: [&str; 1] = ["target_error"];

fn named(mut h: History, objectives: &[&str]) -> History {
    h.objective_names = objectives.iter().map(|s| s.to_string()).collect();
    h
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

/// Loads, resolves and runs in one call.
pub fn run_experiment(
    kind: ExperimentKind,
    config_path: &FsPath,
    overrides: &Overrides,
) -> Result<(Resolved, Report), ExperimentError> {
    let resolved = ExperimentConfig::load(config_path)?.resolve(kind, overrides)?;
    let report = resolved.run()?;
    Ok((resolved, report))
}

/// Compact per-file digest used to compare runs.
pub fn read_outputs(dir: &FsPath) -> io::Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().expect("file").to_string_lossy().into_owned();
            out.insert(name, fs::read(&path)?);
        }
    }
    Ok(out)
}
