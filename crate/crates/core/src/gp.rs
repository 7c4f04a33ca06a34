//! Gaussian-process regression with an ARD squared-exponential kernel.
//!
//! Inputs are mapped to the unit cube through fixed bounds and outputs are
//! standardized; hyperparameters live in that normalized space. Fitting
//! maximizes the exact log marginal likelihood by multistart coordinate
//! ascent in log space.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-2, 10.0);
pub const SIGNAL_VARIANCE_BOUNDS: (f64, f64) = (1e-3, 10.0);
pub const NOISE_VARIANCE_BOUNDS: (f64, f64) = (1e-8, 1.0);
pub const MAX_JITTER: f64 = 1e-4;
const DUPLICATE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("need at least 2 distinct points, got {0}")]
    TooFewPoints(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{inputs} inputs but {outputs} outputs")]
    LengthMismatch { inputs: usize, outputs: usize },
    #[error("invalid bounds for dimension {0}")]
    InvalidBounds(usize),
    #[error("non-finite value in dataset")]
    NonFinite,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("Gram matrix not positive definite even with jitter {MAX_JITTER}")]
    NotPositiveDefinite,
    #[error("model file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, GpError>;

/// Training data in normalized coordinates, with the transforms retained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub bounds: Vec<(f64, f64)>,
    /// Unit-cube inputs.
    pub inputs: Vec<Vec<f64>>,
    /// Standardized outputs.
    pub outputs: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl Dataset {
    /// Normalizes raw data. Inputs closer than 1e-12 (after normalization)
    /// are merged and their outputs averaged.
    pub fn new(raw_inputs: &[Vec<f64>], raw_outputs: &[f64], bounds: &[(f64, f64)]) -> Result<Dataset> {
        if raw_inputs.len() != raw_outputs.len() {
            return Err(GpError::LengthMismatch {
                inputs: raw_inputs.len(),
                outputs: raw_outputs.len(),
            });
        }
        let d = bounds.len();
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(GpError::InvalidBounds(i));
            }
        }
        let mut merged: Vec<(Vec<f64>, f64, usize)> = Vec::new();
        for (x, &y) in raw_inputs.iter().zip(raw_outputs) {
            if x.len() != d {
                return Err(GpError::DimensionMismatch {
                    expected: d,
                    got: x.len(),
                });
            }
            if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err(GpError::NonFinite);
            }
            let u = normalize(x, bounds);
            match merged
                .iter_mut()
                .find(|(m, _, _)| m.iter().zip(&u).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL))
            {
                Some(entry) => {
                    entry.1 += y;
                    entry.2 += 1;
                }
                None => merged.push((u, y, 1)),
            }
        }
        let inputs: Vec<Vec<f64>> = merged.iter().map(|m| m.0.clone()).collect();
        let ys: Vec<f64> = merged.iter().map(|m| m.1 / m.2 as f64).collect();
        let n = ys.len() as f64;
        let y_mean = if ys.is_empty() { 0.0 } else { ys.iter().sum::<f64>() / n };
        let var = if ys.is_empty() {
            0.0
        } else {
            ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n
        };
        let y_std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Ok(Dataset {
            bounds: bounds.to_vec(),
            inputs,
            outputs: ys.iter().map(|y| (y - y_mean) / y_std).collect(),
            y_mean,
            y_std,
        })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn standardize(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn destandardize(&self, z: f64) -> f64 {
        z * self.y_std + self.y_mean
    }

    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        normalize(x, &self.bounds)
    }

    pub fn raw_inputs(&self) -> Vec<Vec<f64>> {
        self.inputs
            .iter()
            .map(|u| {
                u.iter()
                    .zip(&self.bounds)
                    .map(|(v, (lo, hi))| lo + v * (hi - lo))
                    .collect()
            })
            .collect()
    }

    pub fn raw_outputs(&self) -> Vec<f64> {
        self.outputs.iter().map(|&z| self.destandardize(z)).collect()
    }
}

fn normalize(x: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    x.iter().zip(bounds).map(|(v, (lo, hi))| (v - lo) / (hi - lo)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelHyperparams {
    pub fn isotropic(d: usize, lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Self {
        KernelHyperparams {
            lengthscales: vec![lengthscale; d],
            signal_variance,
            noise_variance,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.lengthscales.len() != d {
            return Err(GpError::DimensionMismatch {
                expected: d,
                got: self.lengthscales.len(),
            });
        }
        let ok = self.lengthscales.iter().all(|&l| l > 0.0 && l.is_finite())
            && self.signal_variance > 0.0
            && self.signal_variance.is_finite()
            && self.noise_variance >= NOISE_VARIANCE_BOUNDS.0
            && self.noise_variance.is_finite();
        if ok {
            Ok(())
        } else {
            Err(GpError::InvalidHyperparams(format!("{self:?}")))
        }
    }

    fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_variance.ln());
        v.push(self.noise_variance.ln());
        v
    }

    fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 2;
        KernelHyperparams {
            lengthscales: v[..d].iter().map(|x| x.exp()).collect(),
            signal_variance: v[d].exp(),
            noise_variance: v[d + 1].exp(),
        }
    }
}

fn log_bounds(d: usize) -> Vec<(f64, f64)> {
    let ln = |(a, b): (f64, f64)| (a.ln(), b.ln());
    let mut b = vec![ln(LENGTHSCALE_BOUNDS); d];
    b.push(ln(SIGNAL_VARIANCE_BOUNDS));
    b.push(ln(NOISE_VARIANCE_BOUNDS));
    b
}

#[inline]
fn kernel(a: &[f64], b: &[f64], inv_ls: &[f64], sf2: f64) -> f64 {
    let mut r2 = 0.0;
    for ((x, y), il) in a.iter().zip(b).zip(inv_ls) {
        let t = (x - y) * il;
        r2 += t * t;
    }
    sf2 * (-0.5 * r2).exp()
}

fn gram(ds: &Dataset, hyp: &KernelHyperparams, diag: f64) -> DMatrix<f64> {
    let n = ds.len();
    let inv_ls: Vec<f64> = hyp.lengthscales.iter().map(|l| 1.0 / l).collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = hyp.signal_variance + diag;
        for j in 0..i {
            let v = kernel(&ds.inputs[i], &ds.inputs[j], &inv_ls, hyp.signal_variance);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Factorizes the Gram matrix, escalating diagonal jitter up to `MAX_JITTER`.
fn factorize(ds: &Dataset, hyp: &KernelHyperparams) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut jitter = 0.0;
    loop {
        if let Some(ch) = gram(ds, hyp, hyp.noise_variance + jitter).cholesky() {
            return Ok((ch, jitter));
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
        if jitter > MAX_JITTER * 1.0001 {
            return Err(GpError::NotPositiveDefinite);
        }
    }
}

fn lml_from_factor(ds: &Dataset, ch: &Cholesky<f64, Dyn>) -> f64 {
    let y = DVector::from_column_slice(&ds.outputs);
    let alpha = ch.solve(&y);
    let n = ds.len() as f64;
    let log_det_half: f64 = ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    -0.5 * y.dot(&alpha) - log_det_half - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// Exact log marginal likelihood of the standardized outputs.
pub fn log_marginal_likelihood(ds: &Dataset, hyp: &KernelHyperparams) -> Result<f64> {
    hyp.validate(ds.dim())?;
    if ds.is_empty() {
        return Err(GpError::TooFewPoints(0));
    }
    let (ch, _) = factorize(ds, hyp)?;
    Ok(lml_from_factor(ds, &ch))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub restarts: usize,
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evals: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 5,
            initial_step: 1.0,
            min_step: 1e-3,
            max_evals: 600,
        }
    }
}

/// A fitted GP: immutable once built, safe to share across threads.
#[derive(Debug, Clone)]
pub struct GpModel {
    dataset: Dataset,
    hyper: KernelHyperparams,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    inv_ls: Vec<f64>,
    jitter: f64,
    lml: f64,
}

impl GpModel {
    /// Builds a model with fixed hyperparameters.
    pub fn new(dataset: Dataset, hyper: KernelHyperparams) -> Result<GpModel> {
        if dataset.len() < 2 {
            return Err(GpError::TooFewPoints(dataset.len()));
        }
        hyper.validate(dataset.dim())?;
        let (chol, jitter) = factorize(&dataset, &hyper)?;
        let lml = lml_from_factor(&dataset, &chol);
        let alpha = chol.solve(&DVector::from_column_slice(&dataset.outputs));
        let inv_ls = hyper.lengthscales.iter().map(|l| 1.0 / l).collect();
        Ok(GpModel {
            dataset,
            hyper,
            chol,
            alpha,
            inv_ls,
            jitter,
            lml,
        })
    }

    /// Fits hyperparameters by maximizing the log marginal likelihood.
    pub fn fit(dataset: Dataset, restarts: usize, seed: u64) -> Result<GpModel> {
        let opts = FitOptions {
            restarts,
            ..FitOptions::default()
        };
        GpModel::fit_with(dataset, &opts, seed)
    }

    pub fn fit_with(dataset: Dataset, opts: &FitOptions, seed: u64) -> Result<GpModel> {
        if dataset.len() < 2 {
            return Err(GpError::TooFewPoints(dataset.len()));
        }
        let d = dataset.dim();
        let bounds = log_bounds(d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut starts = vec![KernelHyperparams::isotropic(d, 0.5, 1.0, 1e-2).to_log()];
        for _ in 1..opts.restarts.max(1) {
            starts.push(bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect());
        }
        let results: Vec<Option<(Vec<f64>, f64)>> = starts
            .into_par_iter()
            .map(|x0| coordinate_ascent(&dataset, x0, &bounds, opts))
            .collect();
        let mut best: Option<(Vec<f64>, f64)> = None;
        for (x, f) in results.into_iter().flatten() {
            if best.as_ref().is_none_or(|(_, bf)| f > *bf) {
                best = Some((x, f));
            }
        }
        let (x, _) = best.ok_or(GpError::NotPositiveDefinite)?;
        GpModel::new(dataset, KernelHyperparams::from_log(&x))
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn hyperparams(&self) -> &KernelHyperparams {
        &self.hyper
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(GpError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn cross_kernel(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.dataset.len(),
            self.dataset
                .inputs
                .iter()
                .map(|xi| kernel(u, xi, &self.inv_ls, self.hyper.signal_variance)),
        )
    }

    /// Posterior mean and latent variance in original output units.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_dim(x)?;
        Ok(self.predict_unit(&self.dataset.normalize_input(x)))
    }

    /// Posterior mean only (cheaper: no triangular solve).
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let u = self.dataset.normalize_input(x);
        Ok(self.dataset.destandardize(self.cross_kernel(&u).dot(&self.alpha)))
    }

    pub fn predict_mean_unit(&self, u: &[f64]) -> f64 {
        self.dataset.destandardize(self.cross_kernel(u).dot(&self.alpha))
    }

    /// Closed-form leave-one-out residuals `y_i − μ_{−i}(x_i)` in original
    /// units, with the hyperparameters held fixed.
    pub fn loo_residuals(&self) -> Vec<f64> {
        let inv = self.chol.inverse();
        (0..self.dataset.len())
            .map(|i| self.alpha[i] / inv[(i, i)] * self.dataset.y_std)
            .collect()
    }

    /// Prediction for an input already in unit-cube coordinates.
    pub fn predict_unit(&self, u: &[f64]) -> (f64, f64) {
        let k = self.cross_kernel(u);
        let mean = k.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .expect("cholesky factor has a nonzero diagonal");
        let var = (self.hyper.signal_variance - v.norm_squared()).max(0.0);
        (self.dataset.destandardize(mean), var * self.dataset.y_std.powi(2))
    }

    /// Self-describing JSON dump: hyperparameters, normalization and data.
    pub fn to_json(&self) -> String {
        let dump = ModelDump {
            kernel: "ard_squared_exponential".into(),
            hyperparams: self.hyper.clone(),
            input_bounds: self.dataset.bounds.clone(),
            y_mean: self.dataset.y_mean,
            y_std: self.dataset.y_std,
            inputs: self.dataset.raw_inputs(),
            outputs: self.dataset.raw_outputs(),
            log_marginal_likelihood: self.lml,
        };
        serde_json::to_string_pretty(&dump).expect("model dump serializes")
    }

    pub fn from_json(text: &str) -> Result<GpModel> {
        let dump: ModelDump = serde_json::from_str(text).map_err(|e| GpError::Format(e.to_string()))?;
        let ds = Dataset::new(&dump.inputs, &dump.outputs, &dump.input_bounds)?;
        GpModel::new(ds, dump.hyperparams)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDump {
    kernel: String,
    hyperparams: KernelHyperparams,
    input_bounds: Vec<(f64, f64)>,
    y_mean: f64,
    y_std: f64,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<f64>,
    log_marginal_likelihood: f64,
}

fn coordinate_ascent(ds: &Dataset, x0: Vec<f64>, bounds: &[(f64, f64)], opts: &FitOptions) -> Option<(Vec<f64>, f64)> {
    let eval = |x: &[f64]| log_marginal_likelihood(ds, &KernelHyperparams::from_log(x)).ok();
    let mut x = x0;
    let mut f = eval(&x).unwrap_or(f64::NEG_INFINITY);
    let mut evals = 1;
    let mut step = opts.initial_step;
    while step >= opts.min_step && evals < opts.max_evals {
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let c = (x[i] + dir * step).clamp(bounds[i].0, bounds[i].1);
                if c == x[i] {
                    continue;
                }
                let mut cand = x.clone();
                cand[i] = c;
                evals += 1;
                if let Some(fc) = eval(&cand) {
                    if fc > f {
                        x = cand;
                        f = fc;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    f.is_finite().then_some((x, f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_two_points_at_low_noise() {
        let ds = Dataset::new(&[vec![0.2], vec![0.8]], &[1.0, -2.0], &[(0.0, 1.0)]).unwrap();
        let m = GpModel::new(ds, KernelHyperparams::isotropic(1, 0.3, 1.0, 1e-8)).unwrap();
        assert!((m.predict(&[0.2]).unwrap().0 - 1.0).abs() < 1e-3);
        assert!((m.predict(&[0.8]).unwrap().0 + 2.0).abs() < 1e-3);
        let fitted = GpModel::fit(m.dataset().clone(), 3, 1).unwrap();
        assert!((fitted.predict(&[0.2]).unwrap().0 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn one_point_is_rejected() {
        let ds = Dataset::new(&[vec![0.5]], &[1.0], &[(0.0, 1.0)]).unwrap();
        assert_eq!(GpModel::fit(ds, 2, 0).unwrap_err(), GpError::TooFewPoints(1));
    }

    #[test]
    fn duplicates_are_merged() {
        let ds = Dataset::new(&[vec![0.5], vec![0.5], vec![0.1]], &[1.0, 3.0, 0.0], &[(0.0, 1.0)]).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.raw_outputs()[0], 2.0);
        let single = Dataset::new(&[vec![0.5], vec![0.5]], &[1.0, 1.0], &[(0.0, 1.0)]).unwrap();
        assert_eq!(GpModel::fit(single, 2, 0).unwrap_err(), GpError::TooFewPoints(1));
    }

    #[test]
    fn reverts_to_prior_far_from_data() {
        let ds = Dataset::new(&[vec![0.0], vec![0.1], vec![0.2]], &[1.0, 2.0, 0.5], &[(0.0, 1.0)]).unwrap();
        let hyp = KernelHyperparams::isotropic(1, 0.05, 1.3, 1e-4);
        let m = GpModel::new(ds.clone(), hyp).unwrap();
        let (mean, var) = m.predict(&[0.8]).unwrap();
        assert!((mean - ds.y_mean).abs() < 1e-6);
        let prior = 1.3 * ds.y_std.powi(2);
        assert!((var - prior).abs() < 0.01 * prior);
    }

    #[test]
    fn symmetric_data_gives_zero_mean_at_center() {
        let ds = Dataset::new(&[vec![-1.0], vec![1.0]], &[-1.0, 1.0], &[(-2.0, 2.0)]).unwrap();
        let m = GpModel::new(ds, KernelHyperparams::isotropic(1, 0.4, 1.0, 1e-3)).unwrap();
        assert!(m.predict(&[0.0]).unwrap().0.abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch() {
        let ds = Dataset::new(&[vec![0.0, 0.0], vec![1.0, 1.0]], &[0.0, 1.0], &[(0.0, 1.0); 2]).unwrap();
        let m = GpModel::new(ds, KernelHyperparams::isotropic(2, 0.5, 1.0, 1e-3)).unwrap();
        assert_eq!(
            m.predict(&[0.5]).unwrap_err(),
            GpError::DimensionMismatch { expected: 2, got: 1 }
        );
        assert!(Dataset::new(&[vec![0.0]], &[0.0, 1.0], &[(0.0, 1.0)]).is_err());
        assert_eq!(
            Dataset::new(&[vec![0.0]], &[0.0], &[(1.0, 1.0)]).unwrap_err(),
            GpError::InvalidBounds(0)
        );
    }

    #[test]
    fn single_point_standard_normal_lml() {
        let ds = Dataset {
            bounds: vec![(0.0, 1.0)],
            inputs: vec![vec![0.3]],
            outputs: vec![0.0],
            y_mean: 0.0,
            y_std: 1.0,
        };
        let hyp = KernelHyperparams::isotropic(1, 0.5, 0.75, 0.25);
        let lml = log_marginal_likelihood(&ds, &hyp).unwrap();
        assert!((lml + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn invalid_hyperparams_rejected() {
        let ds = Dataset::new(&[vec![0.0], vec![1.0]], &[0.0, 1.0], &[(0.0, 1.0)]).unwrap();
        assert!(matches!(
            log_marginal_likelihood(&ds, &KernelHyperparams::isotropic(1, -1.0, 1.0, 1e-3)),
            Err(GpError::InvalidHyperparams(_))
        ));
        assert!(matches!(
            log_marginal_likelihood(&ds, &KernelHyperparams::isotropic(1, 1.0, 1.0, 0.0)),
            Err(GpError::InvalidHyperparams(_))
        ));
    }

    #[test]
    fn json_dump_roundtrip() {
        let ds = Dataset::new(
            &[vec![1.0, 2.0], vec![3.0, 1.0], vec![2.0, 2.5]],
            &[0.3, 1.2, -0.4],
            &[(0.0, 4.0), (0.0, 3.0)],
        )
        .unwrap();
        let m = GpModel::fit(ds, 2, 3).unwrap();
        let back = GpModel::from_json(&m.to_json()).unwrap();
        let (a, va) = m.predict(&[1.5, 1.5]).unwrap();
        let (b, vb) = back.predict(&[1.5, 1.5]).unwrap();
        assert!((a - b).abs() < 1e-9 && (va - vb).abs() < 1e-9);
        assert!(m.to_json().contains("ard_squared_exponential"));
    }
}
