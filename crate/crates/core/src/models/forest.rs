//! Random forest of Gini trees on bootstrap samples.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{presort, ClassTree, ClassTreeParams};
use super::{rng_for, Dataset, RfConfig};

/// Tree `t` draws from stream `TREE_STREAM_BASE + t`.
const TREE_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_features: usize,
    pub trees: Vec<ClassTree>,
}

pub fn train_random_forest(config: &RfConfig, seed: u64, data: &Dataset) -> Forest {
    let n = data.len();
    let d = data.n_features();
    let sorted = presort(&data.rows);
    let params = ClassTreeParams {
        max_features: config.max_features.resolve(d),
        max_depth: config.max_depth,
    };
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, TREE_STREAM_BASE + t as u64);
            let mut weights = vec![0u32; n];
            for _ in 0..n {
                weights[rng.random_range(0..n)] += 1;
            }
            ClassTree::fit(&data.rows, &data.labels, &weights, &sorted, params, &mut rng)
        })
        .collect();
    Forest { n_features: d, trees }
}

impl Forest {
    /// Vote fractions `[p0, p1]`.
    pub fn predict_proba(&self, row: &[f64]) -> [f64; 2] {
        let ones = self.trees.iter().filter(|t| t.predict(row) == 1).count();
        let p1 = ones as f64 / self.trees.len() as f64;
        [1.0 - p1, p1]
    }

    /// Mean Gini decrease per feature, weighted by node sample share and
    /// normalised to sum to 1 (all zeros if no tree split).
    pub fn feature_importances(&self) -> Vec<f64> {
        use super::tree::ClassNode;
        let mut imp = vec![0.0; self.n_features];
        for tree in &self.trees {
            let total = |i: usize| -> f64 {
                fn count(nodes: &[ClassNode], i: usize) -> u32 {
                    match &nodes[i] {
                        ClassNode::Leaf { counts } => counts[0] + counts[1],
                        ClassNode::Split { left, right, .. } => count(nodes, *left) + count(nodes, *right),
                    }
                }
                f64::from(count(&tree.nodes, i))
            };
            let root = total(0);
            for (i, node) in tree.nodes.iter().enumerate() {
                if let ClassNode::Split {
                    feature,
                    impurity_decrease,
                    ..
                } = node
                {
                    imp[*feature] += impurity_decrease * total(i) / root;
                }
            }
        }
        let sum: f64 = imp.iter().sum();
        if sum > 0.0 {
            imp.iter_mut().for_each(|v| *v /= sum);
        }
        imp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testdata::separable;
    use crate::models::tree::ClassNode;
    use crate::models::{decide, MaxFeatures};

    #[test]
    fn single_class_predicts_that_class() {
        let data = Dataset::unnamed(vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 1.0]], vec![1, 1, 1]).unwrap();
        let f = train_random_forest(&RfConfig::default(), 0, &data);
        assert_eq!(f.trees.len(), 100);
        for q in [[0.0, 0.0], [-10.0, 99.0]] {
            assert_eq!(decide(f.predict_proba(&q)), 1);
        }
    }

    #[test]
    fn one_tree_one_point() {
        let data = Dataset::unnamed(vec![vec![0.3, 0.7]], vec![1]).unwrap();
        let cfg = RfConfig {
            n_trees: 1,
            ..RfConfig::default()
        };
        let f = train_random_forest(&cfg, 5, &data);
        for q in [[0.0, 0.0], [100.0, -3.0]] {
            assert_eq!(f.predict_proba(&q), [0.0, 1.0]);
        }
    }

    #[test]
    fn separable_training_accuracy() {
        let data = separable(200, 11);
        let f = train_random_forest(&RfConfig::default(), 1, &data);
        let correct = data
            .rows
            .iter()
            .zip(&data.labels)
            .filter(|(r, y)| decide(f.predict_proba(r)) == **y)
            .count();
        assert!(correct as f64 / 200.0 >= 0.99, "{correct}");
    }

    #[test]
    fn splits_never_increase_impurity() {
        let data = separable(80, 2);
        let f = train_random_forest(&RfConfig::default(), 3, &data);
        for t in &f.trees {
            for n in &t.nodes {
                if let ClassNode::Split { impurity_decrease, .. } = n {
                    assert!(*impurity_decrease >= 0.0);
                }
            }
        }
        let imp = f.feature_importances();
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schedule_independent() {
        let data = separable(50, 4);
        let cfg = RfConfig {
            n_trees: 20,
            max_depth: None,
            max_features: MaxFeatures::Sqrt,
        };
        let a = train_random_forest(&cfg, 8, &data);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| train_random_forest(&cfg, 8, &data));
        assert_eq!(a, b);
    }
}
