//! Uniform-weight k-nearest neighbours under Euclidean distance.

use serde::{Deserialize, Serialize};

use super::{decide, Dataset, KnnConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices of the `k` nearest rows; equal distances keep the lower index.
pub fn nearest(rows: &[Vec<f64>], query: &[f64], k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (squared_distance(r, query), i))
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k, by_distance);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_distance);
    scored.into_iter().map(|(_, i)| i).collect()
}

impl KnnModel {
    pub fn fit(config: &KnnConfig, data: &Dataset) -> Result<Self> {
        if config.k > data.len() {
            return Err(Error::Validation(format!(
                "k = {} exceeds the {} training rows",
                config.k,
                data.len()
            )));
        }
        Ok(KnnModel {
            k: config.k,
            rows: data.rows.clone(),
            labels: data.labels.clone(),
        })
    }

    pub fn n_features(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Neighbour label fractions.
    pub fn predict_proba(&self, query: &[f64]) -> [f64; 2] {
        let idx = nearest(&self.rows, query, self.k);
        let ones = idx.iter().filter(|&&i| self.labels[i] == 1).count();
        let p1 = ones as f64 / self.k as f64;
        [1.0 - p1, p1]
    }
}

/// Majority label among the `k` nearest training rows (vote ties give 0).
pub fn predict_knn(train: &Dataset, query: &[f64], k: usize) -> Result<u8> {
    if k == 0 {
        return Err(Error::Validation("k must be positive".into()));
    }
    if query.len() != train.n_features() {
        return Err(Error::Dimension {
            expected: train.n_features(),
            got: query.len(),
        });
    }
    let model = KnnModel::fit(
        &KnnConfig {
            k,
            ..KnnConfig::default()
        },
        train,
    )?;
    Ok(decide(model.predict_proba(query)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = rng_for(seed, 3);
        let rows = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        Dataset::unnamed(rows, labels).unwrap()
    }

    #[test]
    fn k1_identity() {
        let data = random_data(20, 3, 1);
        for (r, y) in data.rows.iter().zip(&data.labels) {
            assert_eq!(predict_knn(&data, r, 1).unwrap(), *y);
        }
    }

    #[test]
    fn majority_of_equidistant() {
        let rows = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0], vec![0.6, 0.8], vec![5.0, 5.0]];
        let data = Dataset::unnamed(rows, vec![1, 1, 1, 0, 0, 0]).unwrap();
        assert_eq!(predict_knn(&data, &[0.0, 0.0], 5).unwrap(), 1);
    }

    #[test]
    fn vote_tie_goes_to_zero() {
        let data = Dataset::unnamed(vec![vec![0.0], vec![1.0]], vec![1, 0]).unwrap();
        // Equidistant neighbours, one per class.
        assert_eq!(predict_knn(&data, &[0.5], 2).unwrap(), 0);
    }

    #[test]
    fn distance_ties_prefer_lower_index() {
        let data = Dataset::unnamed(vec![vec![1.0], vec![-1.0], vec![-1.0]], vec![0, 1, 1]).unwrap();
        assert_eq!(nearest(&data.rows, &[0.0], 1), vec![0]);
        assert_eq!(predict_knn(&data, &[0.0], 1).unwrap(), 0);
    }

    #[test]
    fn k_larger_than_n_is_an_error() {
        let data = random_data(3, 2, 0);
        assert!(predict_knn(&data, &[0.0, 0.0], 4).is_err());
    }

    #[test]
    fn matches_exhaustive_scan() {
        let data = random_data(200, 10, 7);
        let mut rng = rng_for(8, 3);
        for _ in 0..50 {
            let q: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut all: Vec<(f64, usize)> = data
                .rows
                .iter()
                .enumerate()
                .map(|(i, r)| (r.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), i))
                .collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let ones = all[..5].iter().filter(|(_, i)| data.labels[*i] == 1).count();
            assert_eq!(predict_knn(&data, &q, 5).unwrap(), u8::from(ones >= 3));
        }
    }

    proptest! {
        #[test]
        fn feature_permutation_invariant(seed in 0u64..500, rot in 0usize..4) {
            let data = random_data(30, 4, seed);
            let perm = |r: &Vec<f64>| -> Vec<f64> { (0..4).map(|j| r[(j + rot) % 4]).collect() };
            let permuted = Dataset::unnamed(data.rows.iter().map(perm).collect(), data.labels.clone()).unwrap();
            let q = vec![0.1, -0.2, 0.3, 0.05];
            prop_assert_eq!(predict_knn(&data, &q, 5).unwrap(), predict_knn(&permuted, &perm(&q), 5).unwrap());
        }
    }
}
