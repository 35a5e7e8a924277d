//! Gradient boosting with binomial deviance and Newton leaf values.

use serde::{Deserialize, Serialize};

use super::tree::{presort, RegTree};
use super::{Dataset, GbConfig};

/// Bound on the initial log-odds.
pub const MAX_INITIAL_LOG_ODDS: f64 = 10.0;
const NEWTON_DENOMINATOR_FLOOR: f64 = 1e-150;

pub fn sigmoid(f: f64) -> f64 {
    if f >= 0.0 {
        1.0 / (1.0 + (-f).exp())
    } else {
        let e = f.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^f)` without overflow.
fn softplus(f: f64) -> f64 {
    if f > 0.0 {
        f + (-f).exp().ln_1p()
    } else {
        f.exp().ln_1p()
    }
}

/// Mean binomial deviance `ln(1 + e^F) − yF`.
pub fn deviance(scores: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&f, &y)| softplus(f) - f64::from(y) * f)
        .sum();
    total / scores.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbModel {
    pub n_features: usize,
    pub initial_log_odds: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegTree>,
    /// Training deviance before the first round and after each round.
    pub deviance_trace: Vec<f64>,
}

pub fn train_gradient_boosting(config: &GbConfig, data: &Dataset) -> GbModel {
    let n = data.len();
    let positives = data.labels.iter().filter(|&&y| y == 1).count();
    let p = positives as f64 / n as f64;
    let f0 = (p / (1.0 - p)).ln().clamp(-MAX_INITIAL_LOG_ODDS, MAX_INITIAL_LOG_ODDS);
    let mut scores = vec![f0; n];
    let mut model = GbModel {
        n_features: data.n_features(),
        initial_log_odds: f0,
        learning_rate: config.learning_rate,
        trees: Vec::new(),
        deviance_trace: vec![deviance(&scores, &data.labels)],
    };
    if positives == 0 || positives == n {
        return model;
    }

    let sorted = presort(&data.rows);
    for _ in 0..config.n_estimators {
        let probs: Vec<f64> = scores.iter().map(|&f| sigmoid(f)).collect();
        let residuals: Vec<f64> = probs.iter().zip(&data.labels).map(|(p, &y)| f64::from(y) - p).collect();
        let newton = |members: &[usize]| {
            let num: f64 = members.iter().map(|&i| residuals[i]).sum();
            let den: f64 = members.iter().map(|&i| probs[i] * (1.0 - probs[i])).sum();
            if den.abs() < NEWTON_DENOMINATOR_FLOOR {
                0.0
            } else {
                num / den
            }
        };
        let tree = RegTree::fit(&data.rows, &residuals, &sorted, config.tree_depth, newton);
        for (s, r) in scores.iter_mut().zip(&data.rows) {
            *s += config.learning_rate * tree.predict(r);
        }
        model.trees.push(tree);
        model.deviance_trace.push(deviance(&scores, &data.labels));
    }
    model
}

impl GbModel {
    pub fn decision_function(&self, row: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.initial_log_odds, |f, t| f + self.learning_rate * t.predict(row))
    }

    /// `[1 − σ(F), σ(F)]`.
    pub fn predict_proba(&self, row: &[f64]) -> [f64; 2] {
        let p1 = sigmoid(self.decision_function(row));
        [1.0 - p1, p1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::decide;
    use crate::models::testdata::separable;

    #[test]
    fn balanced_labels_start_at_zero() {
        let data = separable(40, 1);
        let m = train_gradient_boosting(&GbConfig::default(), &data);
        assert_eq!(m.initial_log_odds, 0.0);
        assert_eq!(m.trees.len(), 100);
    }

    #[test]
    fn single_point_positive() {
        let data = Dataset::unnamed(vec![vec![1.0, 2.0]], vec![1]).unwrap();
        let m = train_gradient_boosting(&GbConfig::default(), &data);
        assert_eq!(m.initial_log_odds, MAX_INITIAL_LOG_ODDS);
        let p = m.predict_proba(&[1.0, 2.0]);
        assert!(p[1] > 0.9);
        assert_eq!(decide(p), 1);
    }

    #[test]
    fn single_class_negative_is_constant() {
        let data = Dataset::unnamed(vec![vec![0.0], vec![1.0]], vec![0, 0]).unwrap();
        let m = train_gradient_boosting(&GbConfig::default(), &data);
        assert!(m.trees.is_empty());
        assert_eq!(m.initial_log_odds, -MAX_INITIAL_LOG_ODDS);
        assert_eq!(decide(m.predict_proba(&[7.0])), 0);
    }

    #[test]
    fn deviance_is_non_increasing() {
        for seed in 0..5 {
            let mut data = separable(120, seed);
            // Flip a few labels so the fit never becomes perfect.
            for i in (0..120).step_by(13) {
                data.labels[i] ^= 1;
            }
            let m = train_gradient_boosting(&GbConfig::default(), &data);
            for w in m.deviance_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn fits_separable_data() {
        let data = separable(100, 6);
        let m = train_gradient_boosting(&GbConfig::default(), &data);
        let correct = data.rows.iter().zip(&data.labels).filter(|(r, y)| decide(m.predict_proba(r)) == **y).count();
        assert!(correct >= 99);
    }

    #[test]
    fn stable_sigmoid_and_softplus() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }
}
