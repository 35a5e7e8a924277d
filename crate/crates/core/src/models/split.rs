//! Stratified train/test splitting and stratified k-fold partitioning.

use rand::seq::SliceRandom;

use super::rng_for;
use crate::error::{Error, Result};

const SPLIT_STREAM: u64 = 1;
const KFOLD_STREAM: u64 = 2;

fn class_members(labels: &[u8]) -> [Vec<usize>; 2] {
    let mut members = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        members[usize::from(y != 0)].push(i);
    }
    members
}

/// Per-class test count: `count × fraction`, rounded half up.
pub fn stratum_test_count(count: usize, test_fraction: f64) -> usize {
    (count as f64 * test_fraction + 0.5).floor() as usize
}

/// Row indices `(train, test)`, each ascending.
pub fn stratified_split(labels: &[u8], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Validation(format!("test fraction {test_fraction} outside [0, 1)")));
    }
    let mut rng = rng_for(seed, SPLIT_STREAM);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, mut members) in class_members(labels).into_iter().enumerate() {
        if members.len() < 2 {
            return Err(Error::Validation(format!(
                "class {class} has {} member(s); stratified split needs at least 2",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n_test = stratum_test_count(members.len(), test_fraction);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified k-fold: `(train, validation)` index pairs, each ascending.
///
/// Classes are shuffled independently, concatenated, and dealt round-robin
/// into folds, so fold sizes differ by at most one and each class is spread
/// as evenly as possible.
pub fn kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::Validation(format!("k-fold needs k >= 2, got {k}")));
    }
    if n < k {
        return Err(Error::Validation(format!("{n} rows cannot fill {k} folds")));
    }
    let mut rng = rng_for(seed, KFOLD_STREAM);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut position = 0;
    for mut members in class_members(labels) {
        members.shuffle(&mut rng);
        for i in members {
            folds[position % k].push(i);
            position += 1;
        }
    }
    Ok(folds
        .iter()
        .enumerate()
        .map(|(f, val)| {
            let mut val = val.clone();
            val.sort_unstable();
            let mut train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            train.sort_unstable();
            (train, val)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize, pos: usize) -> Vec<u8> {
        (0..n).map(|i| u8::from(i < pos)).collect()
    }

    #[test]
    fn paper_sized_split() {
        let y = labels(272, 97);
        let (train, test) = stratified_split(&y, 0.2, 7).unwrap();
        assert_eq!(test.len(), 54);
        assert_eq!(test.iter().filter(|&&i| y[i] == 1).count(), 19);
        assert_eq!(test.iter().filter(|&&i| y[i] == 0).count(), 35);
        assert_eq!(train.len() + test.len(), 272);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..272).collect::<Vec<_>>());
    }

    #[test]
    fn small_symmetric_split() {
        let y = labels(10, 5);
        let (_, test) = stratified_split(&y, 0.2, 1).unwrap();
        assert_eq!(test.len(), 2);
        assert_eq!(test.iter().filter(|&&i| y[i] == 1).count(), 1);
    }

    #[test]
    fn split_is_seed_deterministic() {
        let y = labels(50, 20);
        assert_eq!(stratified_split(&y, 0.2, 3).unwrap(), stratified_split(&y, 0.2, 3).unwrap());
        assert_ne!(stratified_split(&y, 0.2, 3).unwrap(), stratified_split(&y, 0.2, 4).unwrap());
    }

    #[test]
    fn tiny_class_rejected() {
        assert!(stratified_split(&labels(10, 1), 0.2, 0).is_err());
    }

    #[test]
    fn fold_sizes() {
        let sizes = |n: usize| -> Vec<usize> {
            let mut s: Vec<usize> = kfold(&labels(n, n / 2), 5, 0).unwrap().iter().map(|f| f.1.len()).collect();
            s.sort_unstable_by(|a, b| b.cmp(a));
            s
        };
        assert_eq!(sizes(10), vec![2; 5]);
        assert_eq!(sizes(11), vec![3, 2, 2, 2, 2]);
        assert!(kfold(&labels(4, 2), 5, 0).is_err());
    }

    #[test]
    fn folds_partition_and_stratify() {
        let y = labels(47, 19);
        let folds = kfold(&y, 5, 11).unwrap();
        let mut seen: Vec<usize> = folds.iter().flat_map(|f| f.1.iter().copied()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..47).collect::<Vec<_>>());
        let pos: Vec<usize> = folds.iter().map(|f| f.1.iter().filter(|&&i| y[i] == 1).count()).collect();
        assert!(pos.iter().max().unwrap() - pos.iter().min().unwrap() <= 1);
        for (train, val) in &folds {
            assert_eq!(train.len() + val.len(), 47);
            assert!(val.iter().all(|i| !train.contains(i)));
        }
    }
}
