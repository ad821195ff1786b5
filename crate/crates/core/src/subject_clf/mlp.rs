//! Single-hidden-layer perceptron: tanh hidden units, logistic output,
//! full-batch gradient descent with a fixed step on the mean cross-entropy.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// L2 penalty on both weight matrices (not the biases).
    pub weight_decay: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            learning_rate: 0.1,
            epochs: 300,
            weight_decay: 1e-4,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden == 0 {
            return Err("mlp.hidden must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(format!("mlp.learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.epochs == 0 {
            return Err("mlp.epochs must be at least 1".into());
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(format!("mlp.weight_decay must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    mean: Array1<f64>,
    scale: Array1<f64>,
    /// `hidden × d`
    w1: Array2<f64>,
    b1: Array1<f64>,
    w2: Array1<f64>,
    b2: f64,
}

fn standardize(x: ArrayView2<f64>, mean: &Array1<f64>, scale: &Array1<f64>) -> Array2<f64> {
    let mut z = x.to_owned();
    for mut row in z.rows_mut() {
        row -= mean;
        row /= scale;
    }
    z
}

impl Mlp {
    /// Trains on rows of `x`; the initialization is drawn from `seed` only.
    pub fn train(x: ArrayView2<f64>, y: &[bool], cfg: &MlpConfig, seed: u64) -> Mlp {
        let (n, d) = x.dim();
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(d));
        let scale = x
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let z = standardize(x, &mean, &scale);

        let mut r = rng::rng_from(seed, &[0x31f]);
        // Glorot-style scale keeps tanh out of saturation at the start
        let s1 = Normal::new(0.0, (1.0 / d.max(1) as f64).sqrt()).expect("finite sd");
        let s2 = Normal::new(0.0, (1.0 / cfg.hidden as f64).sqrt()).expect("finite sd");
        let mut w1 = Array2::from_shape_fn((cfg.hidden, d), |_| s1.sample(&mut r));
        let mut b1 = Array1::zeros(cfg.hidden);
        let mut w2 = Array1::from_shape_fn(cfg.hidden, |_| s2.sample(&mut r));
        let pos = y.iter().filter(|&&v| v).count() as f64;
        let mut b2 = if pos > 0.0 && pos < n as f64 {
            (pos / (n as f64 - pos)).ln()
        } else {
            0.0
        };

        let target = Array1::from_iter(y.iter().map(|&v| if v { 1.0 } else { 0.0 }));
        let nf = n as f64;
        let lr = cfg.learning_rate;
        for _ in 0..cfg.epochs {
            let h = (z.dot(&w1.t()) + &b1).mapv(f64::tanh); // n × hidden
            let out = h.dot(&w2) + b2;
            let delta = out.mapv(crate::logreg::sigmoid) - &target; // dL/dlogit, n
            let g_w2 = h.t().dot(&delta) / nf + &w2 * cfg.weight_decay;
            let g_b2 = delta.sum() / nf;
            // back through tanh: (1 − h²) ⊙ δ w2ᵀ
            let mut dh = Array2::zeros(h.raw_dim());
            for ((mut row, hrow), &dl) in dh.rows_mut().into_iter().zip(h.rows()).zip(delta.iter()) {
                for ((g, &hv), &w) in row.iter_mut().zip(hrow.iter()).zip(w2.iter()) {
                    *g = dl * w * (1.0 - hv * hv);
                }
            }
            let g_w1 = dh.t().dot(&z) / nf + &w1 * cfg.weight_decay;
            let g_b1 = dh.sum_axis(Axis(0)) / nf;
            w1.scaled_add(-lr, &g_w1);
            b1.scaled_add(-lr, &g_b1);
            w2.scaled_add(-lr, &g_w2);
            b2 -= lr * g_b2;
        }
        Mlp { mean, scale, w1, b1, w2, b2 }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Output logits; positive means the positive class is predicted.
    pub fn decision_function(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let z = standardize(x, &self.mean, &self.scale);
        (z.dot(&self.w1.t()) + &self.b1).mapv(f64::tanh).dot(&self.w2) + self.b2
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Vec<f64> {
        self.decision_function(x).iter().map(|&v| crate::logreg::sigmoid(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::auc;

    #[test]
    fn learns_xor() {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut r = rng::rng_from(1, &[]);
        let noise = Normal::new(0.0, 0.1).unwrap();
        for i in 0..200 {
            let (a, b) = ((i % 2) as f64, ((i / 2) % 2) as f64);
            rows.push(a * 2.0 - 1.0 + noise.sample(&mut r));
            rows.push(b * 2.0 - 1.0 + noise.sample(&mut r));
            y.push((a != b) as u8 == 1);
        }
        let x = Array2::from_shape_vec((200, 2), rows).unwrap();
        let cfg = MlpConfig {
            hidden: 8,
            learning_rate: 0.5,
            epochs: 2000,
            weight_decay: 0.0,
        };
        let m = Mlp::train(x.view(), &y, &cfg, 3);
        let p = m.predict_proba(x.view());
        assert!(auc(&p, &y).unwrap() > 0.99);
        let acc = p.iter().zip(&y).filter(|(p, &y)| (**p > 0.5) == y).count();
        assert!(acc >= 195, "accuracy {acc}/200");
    }

    #[test]
    fn seeded_and_scale_free() {
        let x = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let y: Vec<bool> = (0..30).map(|i| (i * 7) % 11 > 5).collect();
        let cfg = MlpConfig { epochs: 50, ..Default::default() };
        let a = Mlp::train(x.view(), &y, &cfg, 9);
        assert_eq!(a, Mlp::train(x.view(), &y, &cfg, 9));
        assert_ne!(a, Mlp::train(x.view(), &y, &cfg, 10));
        // inputs are standardized internally, so a power-of-two rescale is invisible
        let b = Mlp::train((&x * 4.0).view(), &y, &cfg, 9);
        assert_eq!(a.decision_function(x.view()), b.decision_function((&x * 4.0).view()));
    }

    #[test]
    fn config_validation() {
        assert!(MlpConfig::default().validate().is_ok());
        assert!(MlpConfig { hidden: 0, ..Default::default() }.validate().is_err());
        assert!(MlpConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
    }
}
