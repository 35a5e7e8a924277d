//! From-scratch binary classifiers: random forest, k-nearest neighbours,
//! gradient boosting and a one-hidden-layer neural network.
//!
//! Class 1 is "treated". Every tie resolves to class 0.

pub mod boosting;
pub mod forest;
pub mod knn;
pub mod nn;
pub mod split;
pub mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use boosting::GbModel;
pub use forest::Forest;
pub use knn::{predict_knn, KnnModel};
pub use nn::{nn_forward, nn_gradient, NnModel, NnParams};
pub use split::{kfold, stratified_split};

/// Version of the serialized model document.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Independent deterministic RNG stream for `(seed, stream)`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Class decision from `[p0, p1]`; equal probabilities give class 0.
pub fn decide(proba: [f64; 2]) -> u8 {
    u8::from(proba[1] > proba[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub ids: Vec<String>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<u8>, ids: Vec<String>) -> Result<Self> {
        if rows.len() != labels.len() || rows.len() != ids.len() {
            return Err(Error::Validation(format!(
                "dataset has {} rows, {} labels and {} ids",
                rows.len(),
                labels.len(),
                ids.len()
            )));
        }
        let d = rows.first().map_or(0, Vec::len);
        for (r, id) in rows.iter().zip(&ids) {
            if r.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: r.len(),
                });
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("row {id} has non-finite value in column {j}")));
            }
        }
        if let Some(y) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Validation(format!("label {y} is not 0 or 1")));
        }
        Ok(Dataset { rows, labels, ids })
    }

    /// Dataset with ids `"0"`, `"1"`, …
    pub fn unnamed(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(rows, labels, ids)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i].clone()).collect(),
        }
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::Validation("training set is empty".into()))
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rf,
    Knn,
    Gb,
    Nn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Rf, ModelKind::Knn, ModelKind::Gb, ModelKind::Nn];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rf => "rf",
            ModelKind::Knn => "knn",
            ModelKind::Gb => "gb",
            ModelKind::Nn => "nn",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            ModelKind::Rf => "Random Forest",
            ModelKind::Knn => "k-NN",
            ModelKind::Gb => "Gradient Boosting",
            ModelKind::Nn => "Neural Network",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Validation(format!("unknown model `{s}` (expected rf, knn, gb or nn)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    /// `⌈√d⌉`
    Sqrt,
    All,
}

impl MaxFeatures {
    pub fn resolve(self, d: usize) -> usize {
        match self {
            MaxFeatures::Sqrt => ((d as f64).sqrt().ceil() as usize).max(1),
            MaxFeatures::All => d.max(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub n_trees: usize,
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            n_trees: 100,
            max_depth: None,
            max_features: MaxFeatures::Sqrt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnWeights {
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    pub weights: KnnWeights,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 5,
            weights: KnnWeights::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub tree_depth: usize,
}

impl Default for GbConfig {
    fn default() -> Self {
        GbConfig {
            n_estimators: 100,
            learning_rate: 0.1,
            tree_depth: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NnConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for NnConfig {
    fn default() -> Self {
        NnConfig {
            hidden: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 10,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub rf: RfConfig,
    pub knn: KnnConfig,
    pub gb: GbConfig,
    pub nn: NnConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_seed(0)
    }
}

impl ModelConfig {
    pub fn with_seed(seed: u64) -> Self {
        ModelConfig {
            rf: RfConfig::default(),
            knn: KnnConfig::default(),
            gb: GbConfig::default(),
            nn: NnConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("rf.n_trees", self.rf.n_trees),
            ("knn.k", self.knn.k),
            ("gb.n_estimators", self.gb.n_estimators),
            ("gb.tree_depth", self.gb.tree_depth),
            ("nn.hidden", self.nn.hidden),
            ("nn.epochs", self.nn.epochs),
            ("nn.batch_size", self.nn.batch_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("{name} must be positive")));
        }
        if self.rf.max_depth == Some(0) {
            return Err(Error::Validation("rf.max_depth must be positive".into()));
        }
        for (name, v) in [
            ("gb.learning_rate", self.gb.learning_rate),
            ("nn.learning_rate", self.nn.learning_rate),
            ("nn.epsilon", self.nn.epsilon),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("nn.beta1", self.nn.beta1), ("nn.beta2", self.nn.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Validation(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum TrainedModel {
    Rf(Forest),
    Knn(KnnModel),
    Gb(GbModel),
    Nn(NnModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Rf(_) => ModelKind::Rf,
            TrainedModel::Knn(_) => ModelKind::Knn,
            TrainedModel::Gb(_) => ModelKind::Gb,
            TrainedModel::Nn(_) => ModelKind::Nn,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            TrainedModel::Rf(m) => m.n_features,
            TrainedModel::Knn(m) => m.n_features(),
            TrainedModel::Gb(m) => m.n_features,
            TrainedModel::Nn(m) => m.params.d,
        }
    }

    /// `[p(class 0), p(class 1)]`.
    pub fn predict_proba(&self, row: &[f64]) -> Result<[f64; 2]> {
        if row.len() != self.n_features() {
            return Err(Error::Dimension {
                expected: self.n_features(),
                got: row.len(),
            });
        }
        Ok(match self {
            TrainedModel::Rf(m) => m.predict_proba(row),
            TrainedModel::Knn(m) => m.predict_proba(row),
            TrainedModel::Gb(m) => m.predict_proba(row),
            TrainedModel::Nn(m) => m.predict_proba(row),
        })
    }

    pub fn predict(&self, row: &[f64]) -> Result<u8> {
        self.predict_proba(row).map(decide)
    }

    pub fn predict_all(&self, rows: &[Vec<f64>]) -> Result<Vec<u8>> {
        rows.iter().map(|r| self.predict(r)).collect()
    }
}

/// Train one model kind with its section of `config`.
pub fn train(kind: ModelKind, config: &ModelConfig, data: &Dataset) -> Result<TrainedModel> {
    config.validate()?;
    data.require_nonempty()?;
    Ok(match kind {
        ModelKind::Rf => TrainedModel::Rf(forest::train_random_forest(&config.rf, config.seed, data)),
        ModelKind::Knn => TrainedModel::Knn(KnnModel::fit(&config.knn, data)?),
        ModelKind::Gb => TrainedModel::Gb(boosting::train_gradient_boosting(&config.gb, data)),
        ModelKind::Nn => TrainedModel::Nn(nn::train_nn(&config.nn, config.seed, data)),
    })
}

/// Self-describing serialized model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub seed: u64,
    pub config: ModelConfig,
    /// Path of the fitted feature transform, relative to the document.
    pub feature_transform: Option<String>,
    pub feature_names: Vec<String>,
    pub model: TrainedModel,
}

impl ModelDocument {
    pub fn new(
        config: ModelConfig,
        model: TrainedModel,
        feature_names: Vec<String>,
        feature_transform: Option<String>,
    ) -> Self {
        ModelDocument {
            version: MODEL_FORMAT_VERSION,
            seed: config.seed,
            config,
            feature_transform,
            feature_names,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::parse(path.display().to_string(), e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: ModelDocument = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "{}: model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                path.display(),
                doc.version
            )));
        }
        Ok(doc)
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_rejects_bad_input() {
        assert!(Dataset::unnamed(vec![vec![1.0]], vec![0, 1]).is_err());
        assert!(Dataset::unnamed(vec![vec![f64::NAN]], vec![0]).is_err());
        assert!(Dataset::unnamed(vec![vec![1.0], vec![1.0, 2.0]], vec![0, 1]).is_err());
        assert!(Dataset::unnamed(vec![vec![1.0]], vec![2]).is_err());
    }

    #[test]
    fn max_features_sqrt() {
        assert_eq!(MaxFeatures::Sqrt.resolve(72), 9);
        assert_eq!(MaxFeatures::Sqrt.resolve(10), 4);
        assert_eq!(MaxFeatures::Sqrt.resolve(1), 1);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let mut c = ModelConfig::default();
        c.knn.k = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::default();
        c.nn.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("GB".parse::<ModelKind>().unwrap(), ModelKind::Gb);
        assert!("svm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn all_models_are_deterministic_and_normalized() {
        let data = testdata::separable(60, 3);
        let mut cfg = ModelConfig::with_seed(9);
        cfg.rf.n_trees = 15;
        cfg.gb.n_estimators = 20;
        cfg.nn.hidden = 16;
        for kind in ModelKind::ALL {
            let a = train(kind, &cfg, &data).unwrap();
            let b = train(kind, &cfg, &data).unwrap();
            assert_eq!(a, b, "{kind}");
            for r in &data.rows {
                let p = a.predict_proba(r).unwrap();
                assert!((p[0] + p[1] - 1.0).abs() <= 1e-9);
                assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            }
            assert!(a.predict_proba(&[0.0]).is_err());
        }
    }

    #[test]
    fn document_roundtrip() {
        let data = testdata::separable(30, 1);
        let mut cfg = ModelConfig::with_seed(4);
        cfg.rf.n_trees = 3;
        cfg.nn.hidden = 4;
        for kind in ModelKind::ALL {
            let model = train(kind, &cfg, &data).unwrap();
            let doc = ModelDocument::new(cfg, model, vec!["a".into(), "b".into()], Some("transform.json".into()));
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.json");
            doc.save(&path).unwrap();
            let back = ModelDocument::load(&path).unwrap();
            assert_eq!(back, doc);
            let text = std::fs::read_to_string(&path).unwrap();
            assert!(text.contains(&format!("\"kind\":\"{kind}\"")));
            assert!(text.contains("\"version\":1"));
        }
    }

    #[test]
    fn rng_streams_differ() {
        use rand::RngCore;
        assert_ne!(rng_for(1, 0).next_u64(), rng_for(1, 1).next_u64());
        assert_eq!(rng_for(1, 5).next_u64(), rng_for(1, 5).next_u64());
    }
}
