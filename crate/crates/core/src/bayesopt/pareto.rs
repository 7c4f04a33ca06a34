//! Pareto bookkeeping and ParEGO.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    default_objective_names, derive_seed, evaluate_into, initial_design, propose, BoConfig, BoError, Evaluation,
    History, SearchSpace, Surrogate, STREAM_DESIGN, STREAM_EVAL, STREAM_PROPOSE, STREAM_WEIGHTS,
};

/// `y1` dominates `y2` under minimization: no worse anywhere, better somewhere.
pub fn dominates(y1: &[f64], y2: &[f64]) -> Result<bool, BoError> {
    if y1.len() != y2.len() {
        return Err(BoError::DimensionMismatch {
            expected: y1.len(),
            got: y2.len(),
        });
    }
    let mut strictly = false;
    for (a, b) in y1.iter().zip(y2) {
        if a > b {
            return Ok(false);
        }
        strictly |= a < b;
    }
    Ok(strictly)
}

/// Nondominated subset, in insertion order. Of several identical points only
/// the earliest is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoSet {
    pub indices: Vec<usize>,
    pub points: Vec<Vec<f64>>,
}

pub fn pareto_front(points: &[Vec<f64>]) -> Result<ParetoSet, BoError> {
    let mut indices = Vec::new();
    'outer: for (i, p) in points.iter().enumerate() {
        for (j, q) in points.iter().enumerate() {
            if dominates(q, p)? || (j < i && q == p) {
                continue 'outer;
            }
        }
        indices.push(i);
    }
    let points = indices.iter().map(|&i| points[i].clone()).collect();
    Ok(ParetoSet { indices, points })
}

/// Exact dominated area of a 2-D front relative to `reference`.
pub fn hypervolume_2d(front: &[Vec<f64>], reference: [f64; 2]) -> Result<f64, BoError> {
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(front.len());
    for p in front {
        if p.len() != 2 {
            return Err(BoError::DimensionMismatch {
                expected: 2,
                got: p.len(),
            });
        }
        if p[0] > reference[0] || p[1] > reference[1] {
            return Err(BoError::Pareto(format!(
                "point {p:?} lies beyond reference {reference:?}"
            )));
        }
        pts.push([p[0], p[1]]);
    }
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut area = 0.0;
    let mut ceiling = reference[1];
    for p in pts {
        if p[1] < ceiling {
            area += (reference[0] - p[0]) * (ceiling - p[1]);
            ceiling = p[1];
        }
    }
    Ok(area)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarizationWeights {
    pub lambda: Vec<f64>,
    pub rho: f64,
}

/// Augmented Tchebycheff: `max_i λ_i y_i + ρ Σ λ_i y_i`.
pub fn tchebycheff_scalarize(y_norm: &[f64], w: &ScalarizationWeights) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for (l, y) in w.lambda.iter().zip(y_norm) {
        max = max.max(l * y);
        sum += l * y;
    }
    max + w.rho * sum
}

/// All weight vectors with components in `{0, 1/s, ..., 1}` summing to 1.
pub fn simplex_grid(k: usize, s: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, s: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if k == 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / s as f64).collect());
            cur.pop();
            return;
        }
        for c in 0..=left {
            cur.push(c);
            rec(k - 1, left - c, s, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        rec(k, s, s, &mut Vec::new(), &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParegoConfig {
    pub rho: f64,
    pub divisions: usize,
    /// Reference point for the hypervolume trace (two objectives only).
    /// Points that do not dominate it are left out of the trace.
    pub reference: Option<[f64; 2]>,
}

impl Default for ParegoConfig {
    fn default() -> Self {
        ParegoConfig {
            rho: 0.05,
            divisions: 10,
            reference: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParegoRun {
    pub history: History,
    pub front: ParetoSet,
    /// Hypervolume after each evaluation; empty without a reference point.
    pub hypervolume: Vec<f64>,
}

/// Per-objective running min/max normalization into `[0, 1]`.
pub(crate) fn normalize_objectives(ys: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = ys[0].len();
    let lo: Vec<f64> = (0..k)
        .map(|j| ys.iter().map(|y| y[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..k)
        .map(|j| ys.iter().map(|y| y[j]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    ys.iter()
        .map(|y| {
            (0..k)
                .map(|j| {
                    let range = hi[j] - lo[j];
                    if range > 0.0 {
                        ((y[j] - lo[j]) / range).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

fn hypervolume_of(ys: &[Vec<f64>], reference: [f64; 2]) -> f64 {
    let inside: Vec<Vec<f64>> = ys
        .iter()
        .filter(|y| y[0] <= reference[0] && y[1] <= reference[1])
        .cloned()
        .collect();
    hypervolume_2d(&inside, reference).expect("filtered to the reference box")
}

/// ParEGO: each iteration scalarizes the normalized objectives with a random
/// simplex-grid weight and runs one EI step on the scalarized values.
pub fn parego_run<F>(
    mut evaluator: F,
    space: &SearchSpace,
    n_objectives: usize,
    cfg: &BoConfig,
    pcfg: &ParegoConfig,
) -> Result<ParegoRun, BoError>
where
    F: FnMut(&[f64], u64) -> Result<Evaluation, String>,
{
    cfg.validate()?;
    if n_objectives < 2 || pcfg.divisions == 0 || pcfg.rho < 0.0 {
        return Err(BoError::InvalidBudget(
            "ParEGO needs at least two objectives, positive divisions and rho >= 0".into(),
        ));
    }
    if pcfg.reference.is_some() && n_objectives != 2 {
        return Err(BoError::InvalidBudget(
            "hypervolume trace is only defined for two objectives".into(),
        ));
    }
    let grid = simplex_grid(n_objectives, pcfg.divisions);
    let mut history = History::new(space.names(), vec![], default_objective_names(n_objectives));
    let mut eval = |t: &[f64], _: &[f64], s: u64| evaluator(t, s);
    let mut hv = Vec::new();
    let record_hv = |h: &History, hv: &mut Vec<f64>| {
        if let Some(r) = pcfg.reference {
            let ys: Vec<Vec<f64>> = h.records().iter().map(|r| r.objectives.clone()).collect();
            hv.push(hypervolume_of(&ys, r));
        }
    };

    for theta in initial_design(space, cfg.n_init, derive_seed(cfg.seed, STREAM_DESIGN, 0)) {
        let seed = derive_seed(cfg.seed, STREAM_EVAL, history.len() as u64);
        evaluate_into(&mut history, &mut eval, theta, vec![], seed, Some(n_objectives))?;
        record_hv(&history, &mut hv);
    }
    let mut surrogate = Surrogate::new(cfg);
    let bounds = space.bounds();
    while history.len() < cfg.budget {
        let iter = history.len();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_WEIGHTS, iter as u64));
        let w = ScalarizationWeights {
            lambda: grid[rng.gen_range(0..grid.len())].clone(),
            rho: pcfg.rho,
        };
        let ys: Vec<Vec<f64>> = history.records().iter().map(|r| r.objectives.clone()).collect();
        let scal: Vec<f64> = normalize_objectives(&ys)
            .iter()
            .map(|y| tchebycheff_scalarize(y, &w))
            .collect();
        let xs: Vec<Vec<f64>> = history.records().iter().map(|r| r.theta.clone()).collect();
        let model = surrogate
            .model(&xs, &scal, &bounds, iter)
            .map_err(|source| BoError::Model {
                iter,
                source,
                history: Box::new(history.clone()),
            })?;
        let incumbent = scal.iter().cloned().fold(f64::INFINITY, f64::min);
        let theta = propose(
            &model,
            space,
            incumbent,
            &cfg.acquisition,
            derive_seed(cfg.seed, STREAM_PROPOSE, iter as u64),
        );
        let seed = derive_seed(cfg.seed, STREAM_EVAL, iter as u64);
        evaluate_into(&mut history, &mut eval, theta, vec![], seed, Some(n_objectives))?;
        record_hv(&history, &mut hv);
    }
    let ys: Vec<Vec<f64>> = history.records().iter().map(|r| r.objectives.clone()).collect();
    let front = pareto_front(&ys)?;
    Ok(ParegoRun {
        history,
        front,
        hypervolume: hv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[1.0, 1.0], &[2.0, 2.0]).unwrap());
        assert!(!dominates(&[1.0, 2.0], &[2.0, 1.0]).unwrap());
        assert!(!dominates(&[1.0, 2.0], &[1.0, 2.0]).unwrap());
        assert!(dominates(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn front_examples() {
        let pts = vec![vec![1.0, 2.0], vec![2.0, 1.0], vec![3.0, 3.0]];
        assert_eq!(pareto_front(&pts).unwrap().indices, vec![0, 1]);
        assert_eq!(pareto_front(&pts[..1]).unwrap().indices, vec![0]);
        let dup = vec![vec![1.0, 1.0], vec![0.5, 3.0], vec![1.0, 1.0]];
        assert_eq!(pareto_front(&dup).unwrap().indices, vec![0, 1]);
    }

    #[test]
    fn hypervolume_examples() {
        assert_eq!(hypervolume_2d(&[vec![0.0, 0.0]], [1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(
            hypervolume_2d(&[vec![0.0, 0.5], vec![0.5, 0.0]], [1.0, 1.0]).unwrap(),
            0.75
        );
        assert_eq!(hypervolume_2d(&[], [1.0, 1.0]).unwrap(), 0.0);
        assert!(hypervolume_2d(&[vec![2.0, 0.0]], [1.0, 1.0]).is_err());
    }

    #[test]
    fn tchebycheff_examples() {
        let w = |l: Vec<f64>, rho| ScalarizationWeights { lambda: l, rho };
        assert_eq!(tchebycheff_scalarize(&[0.3, 0.9], &w(vec![1.0, 0.0], 0.0)), 0.3);
        assert!((tchebycheff_scalarize(&[0.2, 0.4], &w(vec![0.5, 0.5], 0.05)) - 0.215).abs() < 1e-15);
        assert_eq!(tchebycheff_scalarize(&[0.0, 0.0], &w(vec![0.5, 0.5], 0.05)), 0.0);
    }

    #[test]
    fn simplex_grid_counts() {
        let g = simplex_grid(2, 10);
        assert_eq!(g.len(), 11);
        assert!(g.iter().all(|l| (l.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert_eq!(simplex_grid(3, 4).len(), 15);
    }

    #[test]
    fn normalization_stays_in_unit_box() {
        let ys = vec![vec![3.0, -1.0], vec![5.0, -1.0], vec![4.0, 2.0]];
        let n = normalize_objectives(&ys);
        assert_eq!(n[0], vec![0.0, 0.0]);
        assert_eq!(n[1], vec![1.0, 0.0]);
        assert_eq!(n[2], vec![0.5, 1.0]);
    }
}
