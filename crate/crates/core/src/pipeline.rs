//! On-disk stage orchestration: synth → extract → features → train → eval →
//! report. Each stage reads its predecessor's artifacts from the output
//! directory and writes its own next to a `meta.json` carrying the config
//! hash and seed.
//!
//! The config hash covers stage parameters, the upstream hash and (for
//! extraction) the bytes of every input file. Output paths are not hashed,
//! so identical runs into different directories agree byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{
    cross_validate, distribution_svg, distribution_tables, photo_interp_recall, read_annotation_log, EvalReport,
    ModelMetrics, ModelReport,
};
use crate::features::{
    build_series, extract_features, observe, read_features_csv, read_series_csv, write_features_csv,
    write_series_csv, FeatureTransform, FeatureVector, IndexSeries,
};
use crate::geodata::{
    assign_window, load_events, load_parcels, rasterize_parcel, CategoryMedians, CropCategory, EventSet,
    ObservationWindow, ParcelSet, PixelMask, WINDOW_DAYS,
};
use crate::grid::GridSpec;
use crate::models::{self, stratified_split, ModelConfig, ModelDocument, ModelKind};
use crate::raster::{filter_scenes, harmonize, load_scene, Scene, SceneManifest, CLOUD_MAX_PERCENT, VALID_FRACTION_MIN};
use crate::synth::{generate_corpus, SynthConfig};

/// Version stamped into stage metadata.
pub const ARTIFACT_VERSION: u32 = 1;
pub const TEST_FRACTION: f64 = 0.2;
pub const CV_FOLDS: usize = 5;
pub const ANNOTATION_LOG: &str = "annotations.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvMode {
    /// Cross-validate inside the training split; hold-out metrics on the test split.
    Train,
    /// Cross-validate over every usable parcel.
    Full,
}

impl CvMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CvMode::Train => "train",
            CvMode::Full => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Inputs; `None` falls back to the synthetic corpus under `out/corpus`.
    pub parcels: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub scenes: Option<PathBuf>,
    pub out: PathBuf,
    pub cloud_max: f64,
    pub valid_fraction_min: f64,
    pub window_days: i64,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    pub cv: CvMode,
    /// Used by the synth stage only.
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunConfig {
            parcels: None,
            events: None,
            scenes: None,
            out: out.into(),
            cloud_max: CLOUD_MAX_PERCENT,
            valid_fraction_min: VALID_FRACTION_MIN,
            window_days: WINDOW_DAYS,
            models: ModelKind::ALL.to_vec(),
            seed: 42,
            cv: CvMode::Train,
            synth: SynthConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.cloud_max) {
            return Err(Error::Validation(format!("cloud_max {} outside [0, 100]", self.cloud_max)));
        }
        if !(0.0..=1.0).contains(&self.valid_fraction_min) {
            return Err(Error::Validation(format!(
                "valid_fraction_min {} outside [0, 1]",
                self.valid_fraction_min
            )));
        }
        if self.window_days < 1 {
            return Err(Error::Validation("window_days must be at least 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Validation("no models selected".into()));
        }
        Ok(())
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.out.join("corpus")
    }
    pub fn parcels_path(&self) -> PathBuf {
        self.parcels.clone().unwrap_or_else(|| self.corpus_dir().join("parcels.geojson"))
    }
    pub fn events_path(&self) -> PathBuf {
        self.events.clone().unwrap_or_else(|| self.corpus_dir().join("events.csv"))
    }
    pub fn scenes_path(&self) -> PathBuf {
        self.scenes.clone().unwrap_or_else(|| self.corpus_dir().join("scenes"))
    }
    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.out.join(stage.as_str())
    }
    pub fn annotation_log(&self) -> PathBuf {
        self.out.join(ANNOTATION_LOG)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Extract,
    Features,
    Train,
    Eval,
    Report,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "corpus",
            Stage::Extract => "extract",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Report => "report",
        }
    }

    fn command(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            other => other.as_str(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMeta {
    pub version: u32,
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counts: BTreeMap<String, usize>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_params(stage: Stage, upstream: Option<&str>, params: serde_json::Value) -> String {
    let doc = json!({ "stage": stage.as_str(), "upstream": upstream, "params": params });
    sha256_hex(doc.to_string().as_bytes())
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path.display().to_string(), e))?;
    text.push('\n');
    write_file(path, text)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

fn stage_dir(cfg: &RunConfig, stage: Stage) -> Result<PathBuf> {
    let dir = cfg.stage_dir(stage);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

/// Error naming the stage that produces a missing artifact.
fn require(path: PathBuf, producer: Stage) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingStage {
            stage: producer.command(),
            artifact: path,
        })
    }
}

fn upstream_meta(cfg: &RunConfig, stage: Stage) -> Result<StageMeta> {
    read_json(&require(cfg.stage_dir(stage).join("meta.json"), stage)?)
}

fn finish(dir: &Path, stage: Stage, hash: String, seed: u64, artifacts: &[&str], counts: BTreeMap<String, usize>) -> Result<StageMeta> {
    let meta = StageMeta {
        version: ARTIFACT_VERSION,
        stage: stage.as_str().into(),
        config_hash: hash,
        seed,
        artifacts: artifacts.iter().map(|s| s.to_string()).collect(),
        counts,
    };
    write_json(&dir.join("meta.json"), &meta)?;
    Ok(meta)
}

/// Generate the synthetic corpus into `out/corpus`.
pub fn run_synth(cfg: &RunConfig) -> Result<StageMeta> {
    let synth = SynthConfig {
        seed: cfg.seed,
        ..cfg.synth.clone()
    };
    let dir = stage_dir(cfg, Stage::Synth)?;
    let (corpus, _) = generate_corpus(&synth, &dir)?;
    write_json(&dir.join("synth_config.json"), &synth)?;
    let hash = hash_params(Stage::Synth, None, serde_json::to_value(&synth).expect("serializable"));
    let counts = BTreeMap::from([
        ("parcels".to_string(), corpus.parcels.len()),
        ("treated".to_string(), corpus.parcels.treated_count()),
        ("scenes".to_string(), corpus.scenes.len()),
    ]);
    finish(
        &dir,
        Stage::Synth,
        hash,
        cfg.seed,
        &["parcels.geojson", "events.csv", "scenes/", "synth_config.json"],
        counts,
    )
}

/// Every `manifest.json` below `dir`, sorted by path.
pub fn find_manifests(dir: &Path) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.file_name().is_some_and(|n| n == "manifest.json") {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, &mut out)?;
    out.sort();
    Ok(out)
}

/// Digest of the input files. Scene files are keyed by their path relative
/// to the scene directory.
fn input_digest(parcels: &Path, events: &Path, scenes_dir: &Path, manifests: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    let mut feed = |label: &str, path: &Path| -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        h.update(label.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
        Ok(())
    };
    feed("parcels", parcels)?;
    feed("events", events)?;
    for m in manifests {
        let base = m.parent().unwrap_or(Path::new(""));
        let rel = m.strip_prefix(scenes_dir).unwrap_or(m).display().to_string();
        feed(&rel, m)?;
        let manifest = SceneManifest::load(m)?;
        for (band, file) in &manifest.bands {
            feed(&format!("{rel}:{band}"), &base.join(file))?;
        }
        feed(&format!("{rel}:SCL"), &base.join(&manifest.scl))?;
    }
    Ok(hex::encode(h.finalize()))
}

/// Inputs shared by extraction and the review service.
#[derive(Debug)]
pub struct Inputs {
    pub parcels: ParcelSet,
    pub events: EventSet,
    pub windows: BTreeMap<String, ObservationWindow>,
    pub manifests: Vec<PathBuf>,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let parcels = load_parcels(cfg.parcels_path())?;
    let events = load_events(cfg.events_path())?;
    events.validate_against(&parcels)?;
    let medians = CategoryMedians::compute(&parcels, &events);
    let windows = parcels
        .iter()
        .map(|p| Ok((p.parcel_id.clone(), assign_window(p, &events, &medians, cfg.window_days)?)))
        .collect::<Result<_>>()?;
    let scenes_dir = cfg.scenes_path();
    let manifests = find_manifests(&scenes_dir)?;
    if manifests.is_empty() {
        return Err(Error::Validation(format!(
            "no scene manifests under {}",
            scenes_dir.display()
        )));
    }
    Ok(Inputs {
        parcels,
        events,
        windows,
        manifests,
    })
}

/// Load and harmonise every scene at or below the cloud threshold.
pub fn load_clear_scenes(manifests: &[PathBuf], cloud_max: f64) -> Result<Vec<Scene>> {
    manifests
        .par_iter()
        .map(|m| {
            let manifest = SceneManifest::load(m)?;
            if manifest.cloud_percent > cloud_max {
                return Ok(None);
            }
            load_scene(m).and_then(|s| harmonize(&s)).map(Some)
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().flatten().collect())
}

#[derive(Serialize, Deserialize)]
struct WindowRow {
    parcel_id: String,
    crop_category: String,
    treated: u8,
    anchor_date: NaiveDate,
    start: NaiveDate,
    end: NaiveDate,
}

#[derive(Serialize, Deserialize)]
struct SkipRow {
    parcel_id: String,
    reason: String,
}

fn csv_error(path: &Path, e: impl ToString) -> Error {
    Error::parse(path.display().to_string(), e)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(!rows.is_empty())
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    if rows.is_empty() {
        w.write_record(header).map_err(|e| csv_error(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

/// Parcel windows as written by the extract stage.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRecord {
    pub window: ObservationWindow,
    pub crop_category: CropCategory,
    pub treated: bool,
}

pub fn read_windows(path: &Path) -> Result<Vec<WindowRecord>> {
    read_rows::<WindowRow>(path)?
        .into_iter()
        .map(|r| {
            Ok(WindowRecord {
                crop_category: r.crop_category.parse()?,
                treated: r.treated == 1,
                window: ObservationWindow {
                    parcel_id: r.parcel_id,
                    anchor_date: r.anchor_date,
                    start: r.start,
                    end: r.end,
                },
            })
        })
        .collect()
}

/// Per-parcel index series within each observation window.
pub fn run_extract(cfg: &RunConfig) -> Result<StageMeta> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let scenes = load_clear_scenes(&inputs.manifests, cfg.cloud_max)?;
    let digest = input_digest(&cfg.parcels_path(), &cfg.events_path(), &cfg.scenes_path(), &inputs.manifests)?;

    let mut grids: Vec<GridSpec> = Vec::new();
    for s in &scenes {
        if !grids.contains(&s.grid()) {
            grids.push(s.grid());
        }
    }
    let parcels: Vec<_> = inputs.parcels.sorted().collect();
    let results: Vec<(IndexSeries, Option<String>)> = parcels
        .par_iter()
        .map(|p| {
            let window = &inputs.windows[&p.parcel_id];
            let masks: Vec<Option<PixelMask>> = grids.iter().map(|g| rasterize_parcel(p, g).ok()).collect();
            let mut observations = Vec::new();
            for scene in filter_scenes(&scenes, window, cfg.cloud_max) {
                let g = grids.iter().position(|g| *g == scene.grid()).expect("grid registered");
                if let Some(mask) = &masks[g] {
                    observations.push(observe(scene, mask)?);
                }
            }
            let skip = masks
                .iter()
                .all(Option::is_none)
                .then(|| "parcel covers no pixel centre of any scene".to_string());
            Ok((build_series(window, observations, cfg.valid_fraction_min), skip))
        })
        .collect::<Result<_>>()?;

    let dir = stage_dir(cfg, Stage::Extract)?;
    let series: Vec<IndexSeries> = results.iter().map(|(s, _)| s.clone()).collect();
    write_series_csv(dir.join("series.csv"), &series)?;
    let windows: Vec<WindowRow> = parcels
        .iter()
        .map(|p| {
            let w = &inputs.windows[&p.parcel_id];
            WindowRow {
                parcel_id: p.parcel_id.clone(),
                crop_category: p.crop_category.as_str().into(),
                treated: p.label(),
                anchor_date: w.anchor_date,
                start: w.start,
                end: w.end,
            }
        })
        .collect();
    write_rows(&dir.join("windows.csv"), &windows, &["parcel_id", "crop_category", "treated", "anchor_date", "start", "end"])?;
    let skips: Vec<SkipRow> = results
        .iter()
        .filter_map(|(s, skip)| {
            skip.as_ref().map(|r| SkipRow {
                parcel_id: s.parcel_id.clone(),
                reason: r.clone(),
            })
        })
        .collect();
    write_rows(&dir.join("skipped.csv"), &skips, &["parcel_id", "reason"])?;

    let hash = hash_params(
        Stage::Extract,
        None,
        json!({
            "cloud_max": cfg.cloud_max,
            "valid_fraction_min": cfg.valid_fraction_min,
            "window_days": cfg.window_days,
            "inputs": digest,
        }),
    );
    let counts = BTreeMap::from([
        ("parcels".to_string(), parcels.len()),
        ("scenes_loaded".to_string(), scenes.len()),
        ("scenes_total".to_string(), inputs.manifests.len()),
        ("observations".to_string(), series.iter().map(|s| s.observations.len()).sum()),
        ("skipped".to_string(), skips.len()),
    ]);
    finish(&dir, Stage::Extract, hash, cfg.seed, &["series.csv", "windows.csv", "skipped.csv"], counts)
}

/// Series and windows from the extract stage, keyed by parcel id.
pub fn load_extracted(cfg: &RunConfig) -> Result<(Vec<WindowRecord>, BTreeMap<String, IndexSeries>)> {
    let dir = cfg.stage_dir(Stage::Extract);
    let windows = read_windows(&require(dir.join("windows.csv"), Stage::Extract)?)?;
    let mut obs = read_series_csv(require(dir.join("series.csv"), Stage::Extract)?)?;
    let series = windows
        .iter()
        .map(|w| {
            let id = w.window.parcel_id.clone();
            let observations = obs.remove(&id).unwrap_or_default();
            (
                id.clone(),
                IndexSeries {
                    parcel_id: id,
                    window: w.window.clone(),
                    observations,
                },
            )
        })
        .collect();
    Ok((windows, series))
}

/// Raw feature vectors plus skip records for unusable parcels.
pub fn run_features(cfg: &RunConfig) -> Result<StageMeta> {
    let upstream = upstream_meta(cfg, Stage::Extract)?;
    let (windows, series) = load_extracted(cfg)?;
    let mut rows: Vec<FeatureVector> = Vec::new();
    let mut skips = Vec::new();
    for w in &windows {
        match extract_features(&series[&w.window.parcel_id], w.crop_category, u8::from(w.treated)) {
            Ok(f) => rows.push(f),
            Err(s) => skips.push(SkipRow {
                parcel_id: s.parcel_id,
                reason: s.reason,
            }),
        }
    }
    let dir = stage_dir(cfg, Stage::Features)?;
    write_features_csv(dir.join("features.csv"), &rows)?;
    write_rows(&dir.join("skipped.csv"), &skips, &["parcel_id", "reason"])?;
    let hash = hash_params(Stage::Features, Some(&upstream.config_hash), json!({}));
    let counts = BTreeMap::from([
        ("usable".to_string(), rows.len()),
        ("positive".to_string(), rows.iter().filter(|r| r.label == 1).count()),
        ("skipped".to_string(), skips.len()),
    ]);
    finish(&dir, Stage::Features, hash, cfg.seed, &["features.csv", "skipped.csv"], counts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub config_hash: String,
    pub seed: u64,
    pub test_fraction: f64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub config_hash: String,
    pub seed: u64,
    pub transform: FeatureTransform,
}

fn model_file(kind: ModelKind) -> String {
    format!("model_{kind}.json")
}

fn load_features(cfg: &RunConfig) -> Result<Vec<FeatureVector>> {
    read_features_csv(require(cfg.stage_dir(Stage::Features).join("features.csv"), Stage::Features)?)
}

fn partition(rows: &[FeatureVector], ids: &[String]) -> Vec<FeatureVector> {
    let by_id: BTreeMap<&str, &FeatureVector> = rows.iter().map(|r| (r.parcel_id.as_str(), r)).collect();
    ids.iter().filter_map(|id| by_id.get(id.as_str()).map(|r| (*r).clone())).collect()
}

/// Stratified 80/20 split, train-only feature transform, one model per kind.
pub fn run_train(cfg: &RunConfig) -> Result<StageMeta> {
    cfg.validate()?;
    let upstream = upstream_meta(cfg, Stage::Features)?;
    let rows = load_features(cfg)?;
    let model_config = ModelConfig::with_seed(cfg.seed);
    let mut kinds = cfg.models.clone();
    kinds.sort();
    kinds.dedup();
    let hash = hash_params(
        Stage::Train,
        Some(&upstream.config_hash),
        json!({ "models": kinds, "config": model_config, "test_fraction": TEST_FRACTION }),
    );

    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let (train_idx, test_idx) = stratified_split(&labels, TEST_FRACTION, cfg.seed)?;
    let train: Vec<FeatureVector> = train_idx.iter().map(|&i| rows[i].clone()).collect();
    let transform = FeatureTransform::fit(&train)?;
    let dataset = crate::evaluation::to_dataset(&transform, &train)?;

    let dir = stage_dir(cfg, Stage::Train)?;
    let split = SplitRecord {
        config_hash: hash.clone(),
        seed: cfg.seed,
        test_fraction: TEST_FRACTION,
        train: train_idx.iter().map(|&i| rows[i].parcel_id.clone()).collect(),
        test: test_idx.iter().map(|&i| rows[i].parcel_id.clone()).collect(),
    };
    write_json(&dir.join("split.json"), &split)?;
    write_json(
        &dir.join("transform.json"),
        &TransformRecord {
            config_hash: hash.clone(),
            seed: cfg.seed,
            transform: transform.clone(),
        },
    )?;
    let mut artifacts = vec!["split.json".to_string(), "transform.json".to_string()];
    for &kind in &kinds {
        let model = models::train(kind, &model_config, &dataset)?;
        let doc = ModelDocument::new(
            model_config,
            model,
            transform.feature_names.iter().cloned().chain(one_hot_names()).collect(),
            Some("transform.json".into()),
        );
        let mut value = serde_json::to_value(&doc).expect("serializable");
        value["config_hash"] = json!(hash);
        write_json(&dir.join(model_file(kind)), &value)?;
        artifacts.push(model_file(kind));
    }
    let names: Vec<&str> = artifacts.iter().map(String::as_str).collect();
    let counts = BTreeMap::from([("train".to_string(), train.len()), ("test".to_string(), test_idx.len())]);
    finish(&dir, Stage::Train, hash, cfg.seed, &names, counts)
}

fn one_hot_names() -> impl Iterator<Item = String> {
    crate::features::feature_names().into_iter().skip(crate::features::N_NUMERIC)
}

fn load_model(path: &Path) -> Result<ModelDocument> {
    let mut value: serde_json::Value = read_json(path)?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("config_hash");
    }
    let doc: ModelDocument = serde_json::from_value(value).map_err(|e| Error::parse(path.display().to_string(), e))?;
    if doc.version != models::MODEL_FORMAT_VERSION {
        return Err(Error::Validation(format!(
            "{}: unsupported model format version {}",
            path.display(),
            doc.version
        )));
    }
    Ok(doc)
}

/// Hold-out and cross-validated metrics, plus photo-interpretation
/// statistics when an annotation log exists.
pub fn run_eval(cfg: &RunConfig) -> Result<StageMeta> {
    cfg.validate()?;
    let upstream = upstream_meta(cfg, Stage::Train)?;
    let train_dir = cfg.stage_dir(Stage::Train);
    let rows = load_features(cfg)?;
    let split: SplitRecord = read_json(&require(train_dir.join("split.json"), Stage::Train)?)?;
    let transform: TransformRecord = read_json(&require(train_dir.join("transform.json"), Stage::Train)?)?;
    let train = partition(&rows, &split.train);
    let test = partition(&rows, &split.test);
    let test_x = transform.transform.apply_all(&test);
    let test_y: Vec<u8> = test.iter().map(|r| r.label).collect();

    let annotations = read_annotation_log(&cfg.annotation_log())?;
    let annotation_digest = sha256_hex(&serde_json::to_vec(&annotations).expect("serializable"));
    let mut kinds = cfg.models.clone();
    kinds.sort();
    kinds.dedup();
    let hash = hash_params(
        Stage::Eval,
        Some(&upstream.config_hash),
        json!({ "models": kinds, "cv": cfg.cv.as_str(), "folds": CV_FOLDS, "annotations": annotation_digest }),
    );

    let cv_rows = match cfg.cv {
        CvMode::Train => &train,
        CvMode::Full => &rows,
    };
    let mut reports = Vec::new();
    for &kind in &kinds {
        let doc = load_model(&require(train_dir.join(model_file(kind)), Stage::Train)?)?;
        let preds = doc.model.predict_all(&test_x)?;
        let holdout = ModelMetrics::from_predictions(&preds, &test_y)?;
        let cv = cross_validate(kind, &doc.config, cv_rows, CV_FOLDS, cfg.seed)?;
        reports.push(ModelReport {
            kind,
            holdout: Some(holdout),
            cv: Some(cv),
        });
    }

    let (photo, distribution) = if annotations.is_empty() {
        (None, None)
    } else {
        let parcels = load_parcels(cfg.parcels_path())?;
        let events = load_events(cfg.events_path())?;
        (
            Some(photo_interp_recall(&annotations, &parcels)?),
            Some(distribution_tables(&annotations, &parcels, &events)?),
        )
    };

    let report = EvalReport {
        version: ARTIFACT_VERSION,
        config_hash: hash.clone(),
        seed: cfg.seed,
        cv_mode: cfg.cv.as_str().into(),
        n_train: train.len(),
        n_test: test.len(),
        models: reports,
        photo_interpretation: photo,
        distribution,
    };
    let dir = stage_dir(cfg, Stage::Eval)?;
    write_file(&dir.join("report.json"), report.to_json() + "\n")?;
    finish(&dir, Stage::Eval, hash, cfg.seed, &["report.json"], BTreeMap::new())
}

/// Markdown table and SVG charts from the evaluation report.
pub fn run_report(cfg: &RunConfig) -> Result<StageMeta> {
    let upstream = upstream_meta(cfg, Stage::Eval)?;
    let report: EvalReport = read_json(&require(cfg.stage_dir(Stage::Eval).join("report.json"), Stage::Eval)?)?;
    let dir = stage_dir(cfg, Stage::Report)?;
    let hash = hash_params(Stage::Report, Some(&upstream.config_hash), json!({}));
    let mut md = report.to_markdown();
    md.push_str(&format!("\n<!-- config_hash: {hash} seed: {} -->\n", cfg.seed));
    write_file(&dir.join("report.md"), md)?;
    write_file(&dir.join("report.json"), report.to_json() + "\n")?;
    let mut artifacts = vec!["report.md", "report.json"];
    if let Some(d) = &report.distribution {
        write_file(&dir.join("by_category.svg"), distribution_svg("Change visibility by crop category", &d.by_category))?;
        write_file(&dir.join("by_season.svg"), distribution_svg("Change visibility by season", &d.by_season))?;
        artifacts.extend(["by_category.svg", "by_season.svg"]);
    }
    finish(&dir, Stage::Report, hash, cfg.seed, &artifacts, BTreeMap::new())
}

/// Extract through report in order.
pub fn run_all(cfg: &RunConfig) -> Result<Vec<StageMeta>> {
    Ok(vec![
        run_extract(cfg)?,
        run_features(cfg)?,
        run_train(cfg)?,
        run_eval(cfg)?,
        run_report(cfg)?,
    ])
}
