//! Bayesian optimization over box-bounded parameter spaces.
//!
//! Everything here minimizes; maximization tasks negate at the evaluator.
//! Runs are sequential, but acquisition scoring fans out over rayon and the
//! argmax is taken after a full scan with earliest-index tie-breaking, so
//! results do not depend on thread scheduling.

mod contextual;
mod pareto;

pub use contextual::{cbo_policy, cbo_run, cycle_schedule, ContextualBo, JointModel};
pub use pareto::{
    dominates, hypervolume_2d, parego_run, pareto_front, simplex_grid, tchebycheff_scalarize, ParegoConfig, ParegoRun,
    ParetoSet, ScalarizationWeights,
};

use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::gp::{Dataset, GpError, GpModel, KernelHyperparams};

#[derive(Debug, Error)]
pub enum BoError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("context {0:?} outside the declared context bounds")]
    ContextOutOfBounds(Vec<f64>),
    #[error("{0}")]
    Pareto(String),
    #[error("evaluator fault at iteration {iter}: {message}")]
    Fault {
        iter: usize,
        message: String,
        history: Box<History>,
    },
    #[error("surrogate model failed at iteration {iter}: {source}")]
    Model {
        iter: usize,
        source: GpError,
        history: Box<History>,
    },
}

impl BoError {
    /// Records evaluated before the run aborted, if any.
    pub fn partial_history(&self) -> Option<&History> {
        match self {
            BoError::Fault { history, .. } | BoError::Model { history, .. } => Some(history),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<SearchSpace, BoError> {
        if dims.is_empty() {
            return Err(BoError::InvalidSpace("no dimensions".into()));
        }
        for d in &dims {
            if !(d.lower < d.upper) || !d.lower.is_finite() || !d.upper.is_finite() {
                return Err(BoError::InvalidSpace(format!(
                    "{}: lower {} must be below upper {}",
                    d.name, d.lower, d.upper
                )));
            }
        }
        Ok(SearchSpace { dims })
    }

    pub fn from_bounds(names: &[&str], bounds: &[(f64, f64)]) -> Result<SearchSpace, BoError> {
        if names.len() != bounds.len() {
            return Err(BoError::InvalidSpace("names and bounds differ in length".into()));
        }
        SearchSpace::new(
            names
                .iter()
                .zip(bounds)
                .map(|(n, &(lower, upper))| Dimension {
                    name: n.to_string(),
                    lower,
                    upper,
                })
                .collect(),
        )
    }

    /// `[lo, hi]^d` with names `x0, x1, ...`.
    pub fn unit_box(d: usize, lo: f64, hi: f64) -> Result<SearchSpace, BoError> {
        let names: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        SearchSpace::from_bounds(&refs, &vec![(lo, hi); d])
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn names(&self) -> Vec<String> {
        self.dims.iter().map(|d| d.name.clone()).collect()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.dims.iter().map(|d| (d.lower, d.upper)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.dims).all(|(v, d)| *v >= d.lower && *v <= d.upper)
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.dims)
            .map(|(v, d)| (d.lower + v * (d.upper - d.lower)).clamp(d.lower, d.upper))
            .collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.dims)
            .map(|(v, d)| (v - d.lower) / (d.upper - d.lower))
            .collect()
    }

    pub fn sample_uniform(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.dims.iter().map(|d| rng.gen_range(d.lower..=d.upper)).collect()
    }
}

/// One evaluated point. `meta` carries trial observations that are not
/// objectives (for locomotion: `dx`, `dy`, `dpsi`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub iter: usize,
    pub seed: u64,
    pub context: Vec<f64>,
    pub theta: Vec<f64>,
    pub objectives: Vec<f64>,
    #[serde(default)]
    pub meta: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub theta_names: Vec<String>,
    pub context_names: Vec<String>,
    pub objective_names: Vec<String>,
    records: Vec<Record>,
}

impl History {
    pub fn new(theta_names: Vec<String>, context_names: Vec<String>, objective_names: Vec<String>) -> History {
        History {
            theta_names,
            context_names,
            objective_names,
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a record; its `iter` is overwritten to keep indices contiguous.
    pub fn push(&mut self, mut record: Record) {
        record.iter = self.records.len();
        self.records.push(record);
    }

    /// Running minimum of the first objective.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.records
            .iter()
            .map(|r| {
                best = best.min(r.objectives[0]);
                best
            })
            .collect()
    }

    /// Index of the lowest first objective (earliest on ties).
    pub fn best_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.records.iter().enumerate() {
            if best.is_none_or(|b| r.objectives[0] < self.records[b].objectives[0]) {
                best = Some(i);
            }
        }
        best
    }

    pub fn objective_column(&self, k: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.objectives[k]).collect()
    }

    fn header(&self) -> String {
        let mut cols = vec!["iter".to_string(), "seed".to_string()];
        cols.extend(self.context_names.iter().cloned());
        cols.extend(self.theta_names.iter().cloned());
        cols.extend(self.objective_names.iter().cloned());
        cols.push("best_so_far".into());
        cols.join(",")
    }

    fn row(&self, r: &Record, best: f64) -> String {
        let mut cols = vec![r.iter.to_string(), r.seed.to_string()];
        cols.extend(r.context.iter().map(|v| v.to_string()));
        cols.extend(r.theta.iter().map(|v| v.to_string()));
        cols.extend(r.objectives.iter().map(|v| v.to_string()));
        cols.push(best.to_string());
        cols.join(",")
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.header())?;
        for (r, b) in self.records.iter().zip(self.best_so_far()) {
            writeln!(w, "{}", self.row(r, b))?;
        }
        Ok(())
    }

    /// Same columns as [`History::write_csv`] plus an `on_front` flag.
    pub fn write_pareto_csv<W: Write>(&self, mut w: W, front: &ParetoSet) -> io::Result<()> {
        writeln!(w, "{},on_front", self.header())?;
        for (i, (r, b)) in self.records.iter().zip(self.best_so_far()).enumerate() {
            let on = front.indices.contains(&i);
            writeln!(w, "{},{}", self.row(r, b), on as u8)?;
        }
        Ok(())
    }
}

/// What an evaluator returns for one parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Evaluation {
    pub objectives: Vec<f64>,
    pub meta: BTreeMap<String, f64>,
}

impl Evaluation {
    pub fn scalar(v: f64) -> Evaluation {
        Evaluation {
            objectives: vec![v],
            meta: BTreeMap::new(),
        }
    }

    pub fn vector(v: Vec<f64>) -> Evaluation {
        Evaluation {
            objectives: v,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, v: f64) -> Evaluation {
        self.meta.insert(key.to_string(), v);
        self
    }
}

impl From<f64> for Evaluation {
    fn from(v: f64) -> Self {
        Evaluation::scalar(v)
    }
}

/// Acquisition maximizer settings: random candidates, then coordinate
/// refinement from the best few.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcqOptions {
    pub n_candidates: usize,
    pub n_starts: usize,
    pub passes: usize,
    pub initial_step: f64,
}

impl Default for AcqOptions {
    fn default() -> Self {
        AcqOptions {
            n_candidates: 2000,
            n_starts: 5,
            passes: 20,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    pub budget: usize,
    pub n_init: usize,
    pub seed: u64,
    pub gp_restarts: usize,
    /// Hyperparameters are refit every iteration while the dataset has at
    /// most this many points...
    pub refit_until: usize,
    /// ...and every `refit_every` iterations afterwards.
    pub refit_every: usize,
    pub acquisition: AcqOptions,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            budget: 50,
            n_init: 5,
            seed: 0,
            gp_restarts: 5,
            refit_until: 50,
            refit_every: 5,
            acquisition: AcqOptions::default(),
        }
    }
}

impl BoConfig {
    pub fn with_budget(budget: usize, n_init: usize, seed: u64) -> BoConfig {
        BoConfig {
            budget,
            n_init,
            seed,
            ..BoConfig::default()
        }
    }

    fn validate(&self) -> Result<(), BoError> {
        if self.n_init < 2 || self.budget < self.n_init {
            return Err(BoError::InvalidBudget(format!(
                "need budget >= n_init >= 2, got budget {} and n_init {}",
                self.budget, self.n_init
            )));
        }
        if self.acquisition.n_candidates == 0 || self.refit_every == 0 {
            return Err(BoError::InvalidBudget(
                "acquisition candidates and refit_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

// Independent random streams derived from one run seed.
pub(crate) const STREAM_DESIGN: u64 = 1;
pub(crate) const STREAM_EVAL: u64 = 2;
pub(crate) const STREAM_FIT: u64 = 3;
pub(crate) const STREAM_PROPOSE: u64 = 4;
pub(crate) const STREAM_WEIGHTS: u64 = 5;

/// Deterministic per-purpose, per-index seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(2 * index as u128);
    rng.next_u64()
}

/// Latin-hypercube sample of `n` points.
pub fn initial_design(space: &SearchSpace, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = space.dim();
    let mut unit = vec![vec![0.0; d]; n];
    for j in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            strata.swap(i, rng.gen_range(0..=i));
        }
        for (i, s) in strata.into_iter().enumerate() {
            unit[i][j] = (s as f64 + rng.gen::<f64>()) / n as f64;
        }
    }
    unit.iter().map(|u| space.from_unit(u)).collect()
}

/// Closed-form EI for a Gaussian prediction, minimization convention.
pub fn ei_from_moments(mean: f64, sd: f64, best: f64) -> f64 {
    if sd < 1e-12 {
        return 0.0;
    }
    let z = (best - mean) / sd;
    let cdf = 0.5 * erfc(-z / std::f64::consts::SQRT_2);
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    ((best - mean) * cdf + sd * pdf).max(0.0)
}

pub fn expected_improvement(model: &GpModel, x: &[f64], incumbent_best: f64) -> Result<f64, GpError> {
    let (m, v) = model.predict(x)?;
    Ok(ei_from_moments(m, v.sqrt(), incumbent_best))
}

/// Maximizes `score` over `[0, 1]^d`. Returns the point and its score.
pub fn maximize_unit<F>(score: F, d: usize, opts: &AcqOptions, seed: u64) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<Vec<f64>> = (0..opts.n_candidates.max(1))
        .map(|_| (0..d).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let scores: Vec<f64> = candidates.par_iter().map(|c| nan_to_neg_inf(score(c))).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let starts: Vec<usize> = order.into_iter().take(opts.n_starts.max(1)).collect();

    let refined: Vec<(Vec<f64>, f64)> = starts
        .par_iter()
        .map(|&i| refine(&score, candidates[i].clone(), scores[i], opts))
        .collect();
    let mut best = 0;
    for (k, r) in refined.iter().enumerate() {
        if r.1 > refined[best].1 {
            best = k;
        }
    }
    refined.into_iter().nth(best).expect("at least one start")
}

fn nan_to_neg_inf(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

fn refine<F: Fn(&[f64]) -> f64>(score: &F, mut x: Vec<f64>, mut fx: f64, opts: &AcqOptions) -> (Vec<f64>, f64) {
    let mut step = opts.initial_step;
    for _ in 0..opts.passes {
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let c = (x[i] + dir * step).clamp(0.0, 1.0);
                if c == x[i] {
                    continue;
                }
                let old = x[i];
                x[i] = c;
                let fc = nan_to_neg_inf(score(&x));
                if fc > fx {
                    fx = fc;
                    improved = true;
                    break;
                }
                x[i] = old;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}

/// Maximizes EI of `model` over `space`. The model's input bounds must be
/// the space's bounds.
pub fn propose(model: &GpModel, space: &SearchSpace, incumbent: f64, opts: &AcqOptions, seed: u64) -> Vec<f64> {
    let score = |u: &[f64]| {
        let (m, v) = model.predict_unit(u);
        ei_from_moments(m, v.sqrt(), incumbent)
    };
    let (u, _) = maximize_unit(score, space.dim(), opts, seed);
    space.from_unit(&u)
}

/// Caches hyperparameters between refits.
pub(crate) struct Surrogate {
    restarts: usize,
    refit_until: usize,
    refit_every: usize,
    seed: u64,
    hyper: Option<KernelHyperparams>,
}

impl Surrogate {
    pub(crate) fn new(cfg: &BoConfig) -> Surrogate {
        Surrogate {
            restarts: cfg.gp_restarts,
            refit_until: cfg.refit_until,
            refit_every: cfg.refit_every,
            seed: cfg.seed,
            hyper: None,
        }
    }

    pub(crate) fn model(
        &mut self,
        xs: &[Vec<f64>],
        ys: &[f64],
        bounds: &[(f64, f64)],
        iter: usize,
    ) -> Result<GpModel, GpError> {
        let ds = Dataset::new(xs, ys, bounds)?;
        let due = xs.len() <= self.refit_until || iter % self.refit_every == 0;
        let cached = self
            .hyper
            .as_ref()
            .filter(|h| !due && h.lengthscales.len() == bounds.len())
            .cloned();
        let model = match cached {
            Some(h) => match GpModel::new(ds.clone(), h) {
                Ok(m) => m,
                Err(_) => GpModel::fit(ds, self.restarts, derive_seed(self.seed, STREAM_FIT, iter as u64))?,
            },
            None => GpModel::fit(ds, self.restarts, derive_seed(self.seed, STREAM_FIT, iter as u64))?,
        };
        self.hyper = Some(model.hyperparams().clone());
        Ok(model)
    }
}

pub(crate) fn evaluate_into<F>(
    history: &mut History,
    evaluator: &mut F,
    theta: Vec<f64>,
    context: Vec<f64>,
    seed: u64,
    n_objectives: Option<usize>,
) -> Result<(), BoError>
where
    F: FnMut(&[f64], &[f64], u64) -> Result<Evaluation, String>,
{
    let iter = history.len();
    let fault = |history: &History, message: String| BoError::Fault {
        iter,
        message,
        history: Box::new(history.clone()),
    };
    let ev = evaluator(&theta, &context, seed).map_err(|m| fault(history, m))?;
    if ev.objectives.is_empty() || ev.objectives.iter().any(|v| !v.is_finite()) {
        return Err(fault(
            history,
            format!("non-finite or empty objectives {:?}", ev.objectives),
        ));
    }
    if let Some(k) = n_objectives {
        if ev.objectives.len() != k {
            return Err(fault(
                history,
                format!("expected {k} objectives, got {}", ev.objectives.len()),
            ));
        }
    }
    history.push(Record {
        iter,
        seed,
        context,
        theta,
        objectives: ev.objectives,
        meta: ev.meta,
    });
    Ok(())
}

fn default_objective_names(k: usize) -> Vec<String> {
    if k == 1 {
        vec!["objective".into()]
    } else {
        (0..k).map(|i| format!("objective{i}")).collect()
    }
}

/// Single-objective BO: Latin-hypercube start, then fit / propose / evaluate.
/// The evaluator receives the parameters and a per-evaluation seed.
pub fn bo_run<F>(mut evaluator: F, space: &SearchSpace, cfg: &BoConfig) -> Result<History, BoError>
where
    F: FnMut(&[f64], u64) -> Result<Evaluation, String>,
{
    cfg.validate()?;
    let mut history = History::new(space.names(), vec![], default_objective_names(1));
    let mut eval = |t: &[f64], _: &[f64], s: u64| evaluator(t, s);
    for theta in initial_design(space, cfg.n_init, derive_seed(cfg.seed, STREAM_DESIGN, 0)) {
        let seed = derive_seed(cfg.seed, STREAM_EVAL, history.len() as u64);
        evaluate_into(&mut history, &mut eval, theta, vec![], seed, Some(1))?;
    }
    let mut surrogate = Surrogate::new(cfg);
    let bounds = space.bounds();
    while history.len() < cfg.budget {
        let iter = history.len();
        let xs: Vec<Vec<f64>> = history.records().iter().map(|r| r.theta.clone()).collect();
        let ys = history.objective_column(0);
        let model = surrogate
            .model(&xs, &ys, &bounds, iter)
            .map_err(|source| BoError::Model {
                iter,
                source,
                history: Box::new(history.clone()),
            })?;
        let incumbent = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let theta = propose(
            &model,
            space,
            incumbent,
            &cfg.acquisition,
            derive_seed(cfg.seed, STREAM_PROPOSE, iter as u64),
        );
        let seed = derive_seed(cfg.seed, STREAM_EVAL, iter as u64);
        evaluate_into(&mut history, &mut eval, theta, vec![], seed, Some(1))?;
    }
    Ok(history)
}
