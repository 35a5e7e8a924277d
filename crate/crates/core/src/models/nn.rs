//! One-hidden-layer ReLU network with a two-way softmax, trained with Adam
//! on mean cross-entropy.
//!
//! Parameters live in one flat vector laid out as `W1 (h×d, row-major)`,
//! `b1 (h)`, `W2 (2×h, row-major)`, `b2 (2)`.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{rng_for, Dataset, NnConfig};
use crate::error::{Error, Result};

const INIT_STREAM: u64 = 20;
const SHUFFLE_STREAM: u64 = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnParams {
    pub d: usize,
    pub hidden: usize,
    pub theta: Vec<f64>,
}

impl NnParams {
    pub fn n_params(d: usize, hidden: usize) -> usize {
        hidden * d + hidden + 2 * hidden + 2
    }

    pub fn zeros(d: usize, hidden: usize) -> Self {
        NnParams {
            d,
            hidden,
            theta: vec![0.0; Self::n_params(d, hidden)],
        }
    }

    /// He-normal weights, zero biases.
    pub fn he_init(d: usize, hidden: usize, seed: u64) -> Self {
        let mut p = Self::zeros(d, hidden);
        let mut rng = rng_for(seed, INIT_STREAM);
        let n1 = Normal::new(0.0, (2.0 / d.max(1) as f64).sqrt()).expect("finite std");
        let n2 = Normal::new(0.0, (2.0 / hidden as f64).sqrt()).expect("finite std");
        let (w1, w2) = (p.w1_range(), p.w2_range());
        for v in &mut p.theta[w1] {
            *v = n1.sample(&mut rng);
        }
        for v in &mut p.theta[w2] {
            *v = n2.sample(&mut rng);
        }
        p
    }

    fn w1_range(&self) -> std::ops::Range<usize> {
        0..self.hidden * self.d
    }
    fn b1_range(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.d;
        s..s + self.hidden
    }
    fn w2_range(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.d + self.hidden;
        s..s + 2 * self.hidden
    }
    fn b2_range(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.d + 3 * self.hidden;
        s..s + 2
    }

    fn hidden_activations(&self, x: &[f64]) -> Vec<f64> {
        let w1 = &self.theta[self.w1_range()];
        let b1 = &self.theta[self.b1_range()];
        (0..self.hidden)
            .map(|j| {
                let z = w1[j * self.d..(j + 1) * self.d]
                    .iter()
                    .zip(x)
                    .fold(b1[j], |acc, (w, xi)| acc + w * xi);
                z.max(0.0)
            })
            .collect()
    }

    fn logits(&self, h: &[f64]) -> [f64; 2] {
        let w2 = &self.theta[self.w2_range()];
        let b2 = &self.theta[self.b2_range()];
        let mut out = [0.0; 2];
        for (k, o) in out.iter_mut().enumerate() {
            *o = w2[k * self.hidden..(k + 1) * self.hidden]
                .iter()
                .zip(h)
                .fold(b2[k], |acc, (w, hj)| acc + w * hj);
        }
        out
    }

    fn forward_one(&self, x: &[f64]) -> [f64; 2] {
        softmax(self.logits(&self.hidden_activations(x)))
    }

    fn check_width(&self, batch: &[Vec<f64>]) -> Result<()> {
        match batch.iter().find(|x| x.len() != self.d) {
            Some(x) => Err(Error::Dimension {
                expected: self.d,
                got: x.len(),
            }),
            None => Ok(()),
        }
    }
}

/// Max-subtracted softmax.
pub fn softmax(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e = [(z[0] - m).exp(), (z[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

pub fn nn_forward(params: &NnParams, batch: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    params.check_width(batch)?;
    Ok(batch.iter().map(|x| params.forward_one(x)).collect())
}

/// Mean cross-entropy of the batch.
pub fn nn_loss(params: &NnParams, batch: &[Vec<f64>], labels: &[u8]) -> Result<f64> {
    let probs = nn_forward(params, batch)?;
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p[usize::from(y)].max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / batch.len() as f64)
}

/// Gradient of the mean cross-entropy with respect to `theta`.
pub fn nn_gradient(params: &NnParams, batch: &[Vec<f64>], labels: &[u8]) -> Result<Vec<f64>> {
    params.check_width(batch)?;
    if batch.is_empty() {
        return Err(Error::Validation("gradient of an empty batch".into()));
    }
    if batch.len() != labels.len() {
        return Err(Error::Validation(format!("{} rows but {} labels", batch.len(), labels.len())));
    }
    let (d, h) = (params.d, params.hidden);
    let mut grad = vec![0.0; params.theta.len()];
    let w2 = &params.theta[params.w2_range()];
    let (w1r, b1r, w2r, b2r) = (params.w1_range(), params.b1_range(), params.w2_range(), params.b2_range());
    let scale = 1.0 / batch.len() as f64;
    let mut delta_h = vec![0.0; h];
    for (x, &y) in batch.iter().zip(labels) {
        let act = params.hidden_activations(x);
        let p = softmax(params.logits(&act));
        let delta_out = [p[0] - f64::from(y == 0), p[1] - f64::from(y == 1)];
        for k in 0..2 {
            grad[b2r.start + k] += scale * delta_out[k];
            for j in 0..h {
                grad[w2r.start + k * h + j] += scale * delta_out[k] * act[j];
            }
        }
        for j in 0..h {
            delta_h[j] = if act[j] > 0.0 {
                delta_out[0] * w2[j] + delta_out[1] * w2[h + j]
            } else {
                0.0
            };
        }
        for j in 0..h {
            if delta_h[j] == 0.0 {
                continue;
            }
            grad[b1r.start + j] += scale * delta_h[j];
            let row = &mut grad[w1r.start + j * d..w1r.start + (j + 1) * d];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += scale * delta_h[j] * xi;
            }
        }
    }
    Ok(grad)
}

/// Adam state with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            theta[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnModel {
    pub params: NnParams,
}

impl NnModel {
    pub fn predict_proba(&self, row: &[f64]) -> [f64; 2] {
        self.params.forward_one(row)
    }
}

pub fn train_nn(config: &NnConfig, seed: u64, data: &Dataset) -> NnModel {
    let mut params = NnParams::he_init(data.n_features(), config.hidden, seed);
    let mut adam = Adam::new(
        params.theta.len(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
    );
    let mut rng = rng_for(seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| data.rows[i].clone()).collect();
            let labels: Vec<u8> = chunk.iter().map(|&i| data.labels[i]).collect();
            let grad = nn_gradient(&params, &batch, &labels).expect("batch built from a validated dataset");
            adam.step(&mut params.theta, &grad);
        }
    }
    NnModel { params }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::decide;
    use crate::models::testdata::separable;
    use rand::Rng;

    fn random_params(d: usize, h: usize, seed: u64) -> NnParams {
        let mut rng = rng_for(seed, 1);
        let mut p = NnParams::zeros(d, h);
        for v in &mut p.theta {
            *v = rng.random_range(-1.0..1.0);
        }
        p
    }

    #[test]
    fn zero_params_give_even_odds() {
        let p = NnParams::zeros(3, 4);
        assert_eq!(nn_forward(&p, &[vec![1.0, -2.0, 3.0]]).unwrap(), vec![[0.5, 0.5]]);
    }

    #[test]
    fn softmax_shift_invariant() {
        for t in [-1000.0, 0.0, 3.5, 1e6] {
            assert_eq!(softmax([t, t]), [0.5, 0.5]);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let p = random_params(5, 7, 3);
        let mut rng = rng_for(4, 1);
        let batch: Vec<Vec<f64>> = (0..20).map(|_| (0..5).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        for pr in nn_forward(&p, &batch).unwrap() {
            assert!((pr[0] + pr[1] - 1.0).abs() <= 1e-9);
        }
        assert!(nn_forward(&p, &[vec![1.0]]).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng_for(10, 1);
        for draw in 0..5 {
            let mut p = random_params(3, 4, draw);
            let batch: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let labels: Vec<u8> = (0..6).map(|i| (i % 2) as u8).collect();
            let g = nn_gradient(&p, &batch, &labels).unwrap();
            for i in 0..p.theta.len() {
                let orig = p.theta[i];
                p.theta[i] = orig + 1e-5;
                let up = nn_loss(&p, &batch, &labels).unwrap();
                p.theta[i] = orig - 1e-5;
                let down = nn_loss(&p, &batch, &labels).unwrap();
                p.theta[i] = orig;
                let numeric = (up - down) / 2e-5;
                let rel = (g[i] - numeric).abs() / g[i].abs().max(numeric.abs()).max(1e-8);
                assert!(rel < 1e-4 || (g[i] - numeric).abs() < 1e-9, "param {i}: {} vs {numeric}", g[i]);
            }
        }
    }

    #[test]
    fn confident_correct_prediction_has_zero_output_error() {
        // Large output bias saturates class 1; zero W2 keeps hidden units out.
        let mut p = NnParams::zeros(2, 3);
        let b2 = p.b2_range();
        p.theta[b2.start] = -400.0;
        p.theta[b2.start + 1] = 400.0;
        let g = nn_gradient(&p, &[vec![0.3, 0.1]], &[1]).unwrap();
        assert_eq!(g[b2.start], 0.0);
        assert_eq!(g[b2.start + 1], 0.0);
    }

    #[test]
    fn duplicated_batch_has_same_mean_gradient() {
        let p = random_params(3, 4, 2);
        let batch = vec![vec![0.5, -1.0, 2.0], vec![1.5, 0.0, -0.3]];
        let labels = vec![0, 1];
        let g1 = nn_gradient(&p, &batch, &labels).unwrap();
        let doubled: Vec<Vec<f64>> = batch.iter().chain(&batch).cloned().collect();
        let g2 = nn_gradient(&p, &doubled, &[0, 1, 0, 1]).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn adam_without_momentum_is_normalized_descent() {
        let g = vec![0.5, -2.0, 0.0, 1e-3];
        let mut theta = vec![1.0; 4];
        let mut adam = Adam::new(4, 0.1, 0.0, 0.0, 1e-8);
        adam.step(&mut theta, &g);
        for (t, gi) in theta.iter().zip(&g) {
            let expected = 1.0 - 0.1 * gi / (gi.abs() + 1e-8);
            assert!((t - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_training() {
        let data = separable(100, 3);
        let a = train_nn(&NnConfig::default(), 5, &data);
        let b = train_nn(&NnConfig::default(), 5, &data);
        assert_eq!(a.params.theta, b.params.theta);
        let c = train_nn(&NnConfig::default(), 6, &data);
        assert_ne!(a.params.theta, c.params.theta);
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let data = separable(40, 3);
        let cfg = NnConfig {
            learning_rate: 0.0,
            ..NnConfig::default()
        };
        let m = train_nn(&cfg, 2, &data);
        assert_eq!(m.params, NnParams::he_init(2, 128, 2));
    }

    #[test]
    fn learns_separable_data() {
        let data = separable(500, 12);
        let m = train_nn(&NnConfig::default(), 0, &data);
        let correct = data.rows.iter().zip(&data.labels).filter(|(r, y)| decide(m.predict_proba(r)) == **y).count();
        assert!(correct as f64 / 500.0 >= 0.95, "{correct}");
    }
}
