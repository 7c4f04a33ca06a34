//! Contextual BO: one GP over joint (θ, s) inputs, with EI maximized over θ
//! while the environment fixes s.

use super::{
    default_objective_names, derive_seed, evaluate_into, initial_design, maximize_unit, AcqOptions, BoConfig, BoError,
    Evaluation, History, Record, SearchSpace, Surrogate, STREAM_DESIGN, STREAM_EVAL, STREAM_PROPOSE,
};
use crate::bayesopt::ei_from_moments;
use crate::gp::GpModel;

const STREAM_INCUMBENT: u64 = 6;
const SPREAD_TOL: f64 = 1e-12;

/// A GP over θ plus the context dimensions that actually vary in the data.
/// Context dimensions with no spread carry no information and are dropped,
/// which makes a constant context reduce exactly to plain BO.
#[derive(Debug, Clone)]
pub struct JointModel {
    gp: GpModel,
    theta_space: SearchSpace,
    context_space: SearchSpace,
    kept: Vec<usize>,
}

impl JointModel {
    pub fn gp(&self) -> &GpModel {
        &self.gp
    }

    pub fn kept_context_dims(&self) -> &[usize] {
        &self.kept
    }

    pub fn theta_space(&self) -> &SearchSpace {
        &self.theta_space
    }

    fn joint_unit(&self, theta_unit: &[f64], context: &[f64]) -> Vec<f64> {
        let cu = self.context_space.to_unit(context);
        let mut u = theta_unit.to_vec();
        u.extend(self.kept.iter().map(|&k| cu[k]));
        u
    }

    /// Posterior mean and variance at (θ, s), raw units.
    pub fn predict(&self, theta: &[f64], context: &[f64]) -> (f64, f64) {
        self.gp
            .predict_unit(&self.joint_unit(&self.theta_space.to_unit(theta), context))
    }

    /// Unit-space lengthscales of the retained context dimensions.
    pub fn context_lengthscales(&self) -> &[f64] {
        &self.gp.hyperparams().lengthscales[self.theta_space.dim()..]
    }

    /// Whether `other` lies within one lengthscale of `context`.
    fn near(&self, context: &[f64], other: &[f64]) -> bool {
        let a = self.context_space.to_unit(context);
        let b = self.context_space.to_unit(other);
        let r2: f64 = self
            .kept
            .iter()
            .zip(self.context_lengthscales())
            .map(|(&k, l)| ((a[k] - b[k]) / l).powi(2))
            .sum();
        r2 <= 1.0
    }
}

/// Greedy policy: θ minimizing the posterior mean at context `s`.
pub fn cbo_policy(model: &JointModel, context: &[f64], opts: &AcqOptions, seed: u64) -> Vec<f64> {
    let score = |u: &[f64]| -model.gp.predict_unit(&model.joint_unit(u, context)).0;
    let (u, _) = maximize_unit(score, model.theta_space.dim(), opts, seed);
    model.theta_space.from_unit(&u)
}

/// Incremental contextual optimizer. The environment supplies contexts;
/// the caller evaluates proposals and reports them back with `observe`.
pub struct ContextualBo {
    theta_space: SearchSpace,
    context_space: SearchSpace,
    cfg: BoConfig,
    history: History,
    surrogate: Surrogate,
}

impl ContextualBo {
    pub fn new(theta_space: SearchSpace, context_space: SearchSpace, cfg: BoConfig) -> ContextualBo {
        let history = History::new(theta_space.names(), context_space.names(), default_objective_names(1));
        let surrogate = Surrogate::new(&cfg);
        ContextualBo {
            theta_space,
            context_space,
            cfg,
            history,
            surrogate,
        }
    }

    /// Resumes from existing records (for example a saved history).
    pub fn with_history(
        theta_space: SearchSpace,
        context_space: SearchSpace,
        cfg: BoConfig,
        history: History,
    ) -> ContextualBo {
        let mut bo = ContextualBo::new(theta_space, context_space, cfg);
        for r in history.records() {
            bo.history.push(r.clone());
        }
        bo
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn into_history(self) -> History {
        self.history
    }

    pub fn config(&self) -> &BoConfig {
        &self.cfg
    }

    pub fn observe(&mut self, theta: Vec<f64>, context: Vec<f64>, ev: Evaluation, seed: u64) {
        self.history.push(Record {
            iter: 0,
            seed,
            context,
            theta,
            objectives: ev.objectives,
            meta: ev.meta,
        });
    }

    fn check_context(&self, context: &[f64]) -> Result<(), BoError> {
        if !self.context_space.contains(context) {
            return Err(BoError::ContextOutOfBounds(context.to_vec()));
        }
        Ok(())
    }

    /// Fits the joint model on all observations, keeping the context
    /// dimensions that vary across the data and the query.
    pub fn model(&mut self, query: &[f64]) -> Result<JointModel, BoError> {
        self.check_context(query)?;
        let iter = self.history.len();
        let recs = self.history.records();
        let kept: Vec<usize> = (0..self.context_space.dim())
            .filter(|&k| {
                let vals = recs.iter().map(|r| r.context[k]).chain(std::iter::once(query[k]));
                let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                hi - lo > SPREAD_TOL
            })
            .collect();
        let mut bounds = self.theta_space.bounds();
        let cb = self.context_space.bounds();
        bounds.extend(kept.iter().map(|&k| cb[k]));
        let xs: Vec<Vec<f64>> = recs
            .iter()
            .map(|r| {
                let mut x = r.theta.clone();
                x.extend(kept.iter().map(|&k| r.context[k]));
                x
            })
            .collect();
        let ys = self.history.objective_column(0);
        let gp = self
            .surrogate
            .model(&xs, &ys, &bounds, iter)
            .map_err(|source| BoError::Model {
                iter,
                source,
                history: Box::new(self.history.clone()),
            })?;
        Ok(JointModel {
            gp,
            theta_space: self.theta_space.clone(),
            context_space: self.context_space.clone(),
            kept,
        })
    }

    /// EI incumbent at `context`: best observation within one context
    /// lengthscale, else the lowest posterior mean at `context`.
    fn incumbent(&self, model: &JointModel, context: &[f64]) -> f64 {
        let near = self
            .history
            .records()
            .iter()
            .filter(|r| model.near(context, &r.context))
            .map(|r| r.objectives[0])
            .fold(f64::INFINITY, f64::min);
        if near.is_finite() {
            return near;
        }
        let seed = derive_seed(self.cfg.seed, STREAM_INCUMBENT, self.history.len() as u64);
        let theta = cbo_policy(model, context, &self.cfg.acquisition, seed);
        model.predict(&theta, context).0
    }

    /// Next θ to evaluate under `context`.
    pub fn propose(&mut self, context: &[f64]) -> Result<Vec<f64>, BoError> {
        let model = self.model(context)?;
        let incumbent = self.incumbent(&model, context);
        let score = |u: &[f64]| {
            let (m, v) = model.gp.predict_unit(&model.joint_unit(u, context));
            ei_from_moments(m, v.sqrt(), incumbent)
        };
        let seed = derive_seed(self.cfg.seed, STREAM_PROPOSE, self.history.len() as u64);
        let (u, _) = maximize_unit(score, self.theta_space.dim(), &self.cfg.acquisition, seed);
        Ok(self.theta_space.from_unit(&u))
    }

    /// Greedy policy at `context` from the current data.
    pub fn policy(&mut self, context: &[f64], seed: u64) -> Result<Vec<f64>, BoError> {
        let model = self.model(context)?;
        Ok(cbo_policy(&model, context, &self.cfg.acquisition, seed))
    }
}

/// Runs `n_init` Latin-hypercube evaluations (contexts cycling through the
/// schedule) followed by one BO iteration per schedule entry.
pub fn cbo_run<F>(
    mut evaluator: F,
    theta_space: &SearchSpace,
    context_space: &SearchSpace,
    schedule: &[Vec<f64>],
    cfg: &BoConfig,
) -> Result<History, BoError>
where
    F: FnMut(&[f64], &[f64], u64) -> Result<Evaluation, String>,
{
    if schedule.is_empty() {
        return Err(BoError::InvalidBudget("empty context schedule".into()));
    }
    let cfg = BoConfig {
        budget: cfg.n_init + schedule.len(),
        ..cfg.clone()
    };
    cfg.validate()?;
    for s in schedule {
        if s.len() != context_space.dim() {
            return Err(BoError::DimensionMismatch {
                expected: context_space.dim(),
                got: s.len(),
            });
        }
        if !context_space.contains(s) {
            return Err(BoError::ContextOutOfBounds(s.clone()));
        }
    }
    let mut bo = ContextualBo::new(theta_space.clone(), context_space.clone(), cfg.clone());
    let design = initial_design(theta_space, cfg.n_init, derive_seed(cfg.seed, STREAM_DESIGN, 0));
    for (i, theta) in design.into_iter().enumerate() {
        let seed = derive_seed(cfg.seed, STREAM_EVAL, i as u64);
        let ctx = schedule[i % schedule.len()].clone();
        evaluate_into(&mut bo.history, &mut evaluator, theta, ctx, seed, Some(1))?;
    }
    for s in schedule {
        let iter = bo.history.len();
        let theta = bo.propose(s)?;
        let seed = derive_seed(cfg.seed, STREAM_EVAL, iter as u64);
        evaluate_into(&mut bo.history, &mut evaluator, theta, s.clone(), seed, Some(1))?;
    }
    Ok(bo.into_history())
}

/// Repeats `contexts` round-robin to fill `len` slots.
pub fn cycle_schedule(contexts: &[Vec<f64>], len: usize) -> Vec<Vec<f64>> {
    (0..len).map(|i| contexts[i % contexts.len()].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayesopt::bo_run;

    #[test]
    fn constant_context_reduces_to_bo() {
        let space = SearchSpace::unit_box(2, -1.0, 1.0).unwrap();
        let ctx = SearchSpace::unit_box(1, 0.0, 1.0).unwrap();
        let f = |x: &[f64]| (x[0] - 0.3).powi(2) + (x[1] + 0.2).powi(2);
        let cfg = BoConfig::with_budget(12, 4, 21);
        let plain = bo_run(|x, _| Ok(f(x).into()), &space, &cfg).unwrap();
        let schedule = vec![vec![0.4]; 8];
        let joint = cbo_run(|x, _, _| Ok(f(x).into()), &space, &ctx, &schedule, &cfg).unwrap();
        let a: Vec<_> = plain.records().iter().map(|r| r.theta.clone()).collect();
        let b: Vec<_> = joint.records().iter().map(|r| r.theta.clone()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn proposals_respect_bounds() {
        let space = SearchSpace::unit_box(1, 2.0, 3.0).unwrap();
        let ctx = SearchSpace::unit_box(1, 0.0, 1.0).unwrap();
        let schedule = cycle_schedule(&[vec![0.0], vec![1.0]], 6);
        let h = cbo_run(
            |x, s, _| Ok((x[0] - 2.0 - s[0]).powi(2).into()),
            &space,
            &ctx,
            &schedule,
            &BoConfig::with_budget(0, 3, 2),
        )
        .unwrap();
        assert_eq!(h.len(), 9);
        assert!(h.records().iter().all(|r| space.contains(&r.theta)));
    }

    #[test]
    fn rejects_out_of_bounds_context() {
        let space = SearchSpace::unit_box(1, 0.0, 1.0).unwrap();
        let ctx = SearchSpace::unit_box(1, 0.0, 1.0).unwrap();
        let err = cbo_run(
            |_, _, _| Ok(0.0.into()),
            &space,
            &ctx,
            &[vec![2.0]],
            &BoConfig::with_budget(0, 2, 0),
        );
        assert!(matches!(err, Err(BoError::ContextOutOfBounds(_))));
    }
}
