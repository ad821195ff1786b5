//! L1-regularized binary logistic regression fitted by proximal gradient
//! descent (ISTA) with backtracking line search.
//!
//! Minimizes `(1/n) Σ log(1 + exp(-ỹ_i (w·x_i + b))) + λ‖w‖₁` with
//! `ỹ ∈ {-1, +1}` and an unpenalized intercept. The soft-threshold step
//! produces exact zeros, so [`LogRegModel::nonzero_support`] is a true support.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("{0} rows and {1} labels")]
    LabelCount(usize, usize),
    #[error("need at least 2 rows and 1 feature, got {0}x{1}")]
    TooSmall(usize, usize),
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid fit config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub lambda: f64,
    pub max_iter: usize,
    /// Stop once the largest parameter change per unit step falls below this.
    pub tol: f64,
    pub standardize: bool,
    pub rng_seed: u64,
    /// Half-width of the uniform initialization jitter on the weights; 0 keeps
    /// the zero initialization.
    pub init_jitter: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            max_iter: 2000,
            tol: 1e-7,
            standardize: true,
            rng_seed: 0,
            init_jitter: 0.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(FitError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.max_iter < 1 {
            return Err(FitError::Config("max_iter must be >= 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(FitError::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if !(self.init_jitter >= 0.0) {
            return Err(FitError::Config("init_jitter must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub converged: bool,
    pub n_iter_run: usize,
}

/// `log(1 + e^u)` without overflow.
fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// Logistic function, exact 0/1 at saturation instead of overflow.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Soft-thresholding, the proximal operator of `threshold·|·|`.
pub fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

/// Mean logistic loss (the smooth part of the objective) and its gradient
/// with respect to `(w, b)`.
pub fn smooth_loss_and_grad(
    x: ArrayView2<f64>,
    y: &[bool],
    w: ArrayView1<f64>,
    b: f64,
) -> (f64, Array1<f64>, f64) {
    let margins = x.dot(&w) + b;
    let (loss, resid) = loss_and_residual(&margins, y);
    let n = y.len() as f64;
    (loss, x.t().dot(&resid) / n, resid.sum() / n)
}

fn loss_and_residual(margins: &Array1<f64>, y: &[bool]) -> (f64, Array1<f64>) {
    let n = y.len() as f64;
    let mut loss = 0.0;
    let resid = Array1::from_iter(margins.iter().zip(y).map(|(&m, &yi)| {
        loss += if yi { softplus(-m) } else { softplus(m) };
        sigmoid(m) - if yi { 1.0 } else { 0.0 }
    }));
    (loss / n, resid)
}

fn mean_loss(margins: &Array1<f64>, y: &[bool]) -> f64 {
    margins
        .iter()
        .zip(y)
        .map(|(&m, &yi)| if yi { softplus(-m) } else { softplus(m) })
        .sum::<f64>()
        / y.len() as f64
}

/// Full penalized objective in the space of `x` as given.
pub fn objective(x: ArrayView2<f64>, y: &[bool], w: ArrayView1<f64>, b: f64, lambda: f64) -> f64 {
    let margins = x.dot(&w) + b;
    mean_loss(&margins, y) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

fn check_inputs(x: ArrayView2<f64>, y: &[bool]) -> Result<(), FitError> {
    let (n, d) = x.dim();
    if n != y.len() {
        return Err(FitError::LabelCount(n, y.len()));
    }
    if n < 2 || d < 1 {
        return Err(FitError::TooSmall(n, d));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == n {
        return Err(FitError::SingleClass);
    }
    Ok(())
}

/// Column means and population standard deviations; constant columns get scale 1.
fn column_scaling(x: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mean = x.sum_axis(Axis(0)) / n;
    let mut scale = Array1::zeros(x.ncols());
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        scale[j] = if sd > 1e-12 * (1.0 + mean[j].abs()) { sd } else { 1.0 };
    }
    (mean, scale)
}

pub fn fit(x: ArrayView2<f64>, y: &[bool], cfg: &FitConfig) -> Result<LogRegModel, FitError> {
    fit_inner(x, y, cfg, None)
}

/// Like [`fit`], also returning the penalized objective (in the solver's
/// working space) after initialization and after every iteration.
pub fn fit_with_history(
    x: ArrayView2<f64>,
    y: &[bool],
    cfg: &FitConfig,
) -> Result<(LogRegModel, Vec<f64>), FitError> {
    let mut history = Vec::new();
    let model = fit_inner(x, y, cfg, Some(&mut history))?;
    Ok((model, history))
}

/// `b + Z w` over the non-zero weights only; `z` is row-major `n × d`.
fn margins_into(z: &[f64], d: usize, w: &[f64], b: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|m| *m = b);
    for (j, &wj) in w.iter().enumerate() {
        if wj != 0.0 {
            for (m, row) in out.iter_mut().zip(z.chunks_exact(d)) {
                *m += row[j] * wj;
            }
        }
    }
}

fn mean_loss_slice(margins: &[f64], y: &[bool]) -> f64 {
    margins
        .iter()
        .zip(y)
        .map(|(&m, &yi)| if yi { softplus(-m) } else { softplus(m) })
        .sum::<f64>()
        / y.len() as f64
}

fn fit_inner(
    x: ArrayView2<f64>,
    y: &[bool],
    cfg: &FitConfig,
    mut history: Option<&mut Vec<f64>>,
) -> Result<LogRegModel, FitError> {
    cfg.validate()?;
    check_inputs(x, y)?;
    let (n, d) = x.dim();
    let nf = n as f64;

    let (mean, scale) = if cfg.standardize {
        column_scaling(x)
    } else {
        (Array1::zeros(d), Array1::ones(d))
    };
    let mut z = Vec::with_capacity(n * d);
    for row in x.rows() {
        z.extend(row.iter().zip(mean.iter().zip(scale.iter())).map(|(v, (m, s))| (v - m) / s));
    }
    let lambda = cfg.lambda;
    let penalty = |w: &[f64]| lambda * w.iter().map(|v| v.abs()).sum::<f64>();

    let mut w = vec![0.0; d];
    let p = y.iter().filter(|&&v| v).count() as f64 / nf;
    let mut b = (p / (1.0 - p)).ln();
    if cfg.init_jitter > 0.0 {
        let mut r = rng::rng_from(cfg.rng_seed, &[0x6a17]);
        w.iter_mut().for_each(|v| *v = r.gen_range(-cfg.init_jitter..=cfg.init_jitter));
    }

    // Lipschitz bound of the smooth part: (‖Z‖²_F / n + 1) / 4
    let lip = (z.iter().map(|v| v * v).sum::<f64>() / nf + 1.0) / 4.0;
    let mut step = 1.0 / lip.max(1e-12);

    let mut margins = vec![0.0; n];
    margins_into(&z, d, &w, b, &mut margins);
    let mut loss = mean_loss_slice(&margins, y);
    if let Some(h) = history.as_deref_mut() {
        h.push(loss + penalty(&w));
    }

    let mut resid = vec![0.0; n];
    let mut grad_w = vec![0.0; d];
    let mut w_try = vec![0.0; d];
    let mut m_try = vec![0.0; n];
    let mut converged = false;
    let mut iters = 0;
    while iters < cfg.max_iter {
        iters += 1;
        for ((r, &m), &yi) in resid.iter_mut().zip(&margins).zip(y) {
            *r = sigmoid(m) - if yi { 1.0 } else { 0.0 };
        }
        grad_w.iter_mut().for_each(|g| *g = 0.0);
        for (row, &r) in z.chunks_exact(d).zip(&resid) {
            for (g, &v) in grad_w.iter_mut().zip(row) {
                *g += v * r;
            }
        }
        grad_w.iter_mut().for_each(|g| *g /= nf);
        let grad_b = resid.iter().sum::<f64>() / nf;

        let (b_new, loss_new) = loop {
            for ((wt, &wi), &gi) in w_try.iter_mut().zip(&w).zip(&grad_w) {
                *wt = soft_threshold(wi - step * gi, step * lambda);
            }
            let b_try = b - step * grad_b;
            margins_into(&z, d, &w_try, b_try, &mut m_try);
            let l_try = mean_loss_slice(&m_try, y);
            let db = b_try - b;
            let (mut lin, mut sq) = (grad_b * db, db * db);
            for ((&wt, &wi), &gi) in w_try.iter().zip(&w).zip(&grad_w) {
                lin += gi * (wt - wi);
                sq += (wt - wi) * (wt - wi);
            }
            if l_try <= loss + lin + sq / (2.0 * step) + 1e-15 * loss.abs() || step < 1e-20 {
                break (b_try, l_try);
            }
            step *= 0.5;
        };

        let change = w_try
            .iter()
            .zip(&w)
            .map(|(a, c)| (a - c).abs())
            .fold((b_new - b).abs(), f64::max)
            / step;

        std::mem::swap(&mut w, &mut w_try);
        std::mem::swap(&mut margins, &mut m_try);
        b = b_new;
        loss = loss_new;
        if let Some(h) = history.as_deref_mut() {
            h.push(loss + penalty(&w));
        }
        if change < cfg.tol {
            converged = true;
            break;
        }
        step *= 1.5;
    }

    let weights: Vec<f64> = w.iter().zip(scale.iter()).map(|(a, s)| a / s).collect();
    let shift: f64 = weights.iter().zip(mean.iter()).map(|(a, m)| a * m).sum();
    Ok(LogRegModel {
        weights,
        intercept: b - shift,
        lambda,
        converged,
        n_iter_run: iters,
    })
}

impl LogRegModel {
    pub fn zeros(d: usize) -> Self {
        Self {
            weights: vec![0.0; d],
            intercept: 0.0,
            lambda: 0.0,
            converged: true,
            n_iter_run: 0,
        }
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn decision_function(&self, x: ArrayView2<f64>) -> Result<Array1<f64>, FitError> {
        if x.ncols() != self.weights.len() {
            return Err(FitError::DimensionMismatch {
                expected: self.weights.len(),
                found: x.ncols(),
            });
        }
        let w = ArrayView1::from(&self.weights[..]);
        Ok(x.dot(&w) + self.intercept)
    }

    /// `σ(Xw + b)` row by row.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Vec<f64>, FitError> {
        Ok(self.decision_function(x)?.iter().map(|&z| sigmoid(z)).collect())
    }

    pub fn nonzero_support(&self) -> Vec<bool> {
        self.weights.iter().map(|w| *w != 0.0).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}

/// Row indices that balance the classes by duplicating randomly drawn
/// minority rows; the original rows come first, in order.
pub fn oversample_indices(y: &[bool], rng: &mut rng::Rng) -> Vec<usize> {
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    let mut idx: Vec<usize> = (0..y.len()).collect();
    let (minority, deficit) = if pos.len() < neg.len() {
        (&pos, neg.len() - pos.len())
    } else {
        (&neg, pos.len() - neg.len())
    };
    if minority.is_empty() {
        return idx;
    }
    for _ in 0..deficit {
        idx.push(*minority.choose(rng).expect("non-empty minority"));
    }
    idx
}
