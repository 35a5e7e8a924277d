//! Classification metrics, cross-validation, photo-interpretation recall
//! and the visible/not-visible distribution tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureTransform, FeatureVector};
use crate::geodata::{CropCategory, EventSet, ParcelSet};
use crate::models::{self, kfold, Dataset, ModelConfig, ModelKind, TrainedModel};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Same predictions scored with class 0 as the positive class.
    pub fn swapped(&self) -> Self {
        ConfusionMatrix {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Validation(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in preds.iter().zip(labels) {
        match (p != 0, y != 0) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any ratio was 0/0 and defaulted to 0.
    pub degenerate: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn precision_recall_f1(cm: &ConfusionMatrix, positive_class: u8) -> ClassMetrics {
    let cm = if positive_class == 0 { cm.swapped() } else { *cm };
    let (precision, d1) = ratio(cm.tp, cm.tp + cm.fp);
    let (recall, d2) = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = f1_score(precision, recall);
    ClassMetrics {
        precision,
        recall,
        f1,
        degenerate: d1 || d2 || precision + recall == 0.0,
    }
}

/// Per-class metrics for one set of predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub confusion: ConfusionMatrix,
    /// Indexed by class.
    pub classes: [ClassMetrics; 2],
}

impl ModelMetrics {
    pub fn from_predictions(preds: &[u8], labels: &[u8]) -> Result<Self> {
        let cm = confusion(preds, labels)?;
        Ok(ModelMetrics {
            confusion: cm,
            classes: [precision_recall_f1(&cm, 0), precision_recall_f1(&cm, 1)],
        })
    }
}

/// Fit the feature transform on `train`, train `kind`, score on `test`.
pub fn fit_and_score(
    kind: ModelKind,
    config: &ModelConfig,
    train: &[FeatureVector],
    test: &[FeatureVector],
) -> Result<(TrainedModel, FeatureTransform, ModelMetrics)> {
    let transform = FeatureTransform::fit(train)?;
    let train_set = to_dataset(&transform, train)?;
    let model = models::train(kind, config, &train_set)?;
    let preds = model.predict_all(&transform.apply_all(test))?;
    let labels: Vec<u8> = test.iter().map(|r| r.label).collect();
    let metrics = ModelMetrics::from_predictions(&preds, &labels)?;
    Ok((model, transform, metrics))
}

pub fn to_dataset(transform: &FeatureTransform, rows: &[FeatureVector]) -> Result<Dataset> {
    Dataset::new(
        transform.apply_all(rows),
        rows.iter().map(|r| r.label).collect(),
        rows.iter().map(|r| r.parcel_id.clone()).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSummary {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub metrics: ModelMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub kind: ModelKind,
    pub k: usize,
    pub folds: Vec<FoldResult>,
    /// Per-class fold means, indexed by class.
    pub mean: [MetricSummary; 2],
    /// Per-class population standard deviations across folds.
    pub std: [MetricSummary; 2],
}

/// Stratified k-fold cross-validation. The feature transform is refit on
/// each fold's training portion.
pub fn cross_validate(
    kind: ModelKind,
    config: &ModelConfig,
    data: &[FeatureVector],
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    let labels: Vec<u8> = data.iter().map(|r| r.label).collect();
    let folds = kfold(&labels, k, seed)?;
    let results: Vec<FoldResult> = folds
        .par_iter()
        .enumerate()
        .map(|(fold, (train_idx, val_idx))| {
            let train: Vec<FeatureVector> = train_idx.iter().map(|&i| data[i].clone()).collect();
            let val: Vec<FeatureVector> = val_idx.iter().map(|&i| data[i].clone()).collect();
            let (_, _, metrics) = fit_and_score(kind, config, &train, &val)?;
            Ok(FoldResult {
                fold,
                n_train: train.len(),
                n_validation: val.len(),
                metrics,
            })
        })
        .collect::<Result<_>>()?;

    let summarize = |class: usize, f: fn(&[f64]) -> f64| {
        let pick = |g: fn(&ClassMetrics) -> f64| -> f64 {
            let v: Vec<f64> = results.iter().map(|r| g(&r.metrics.classes[class])).collect();
            f(&v)
        };
        MetricSummary {
            precision: pick(|m| m.precision),
            recall: pick(|m| m.recall),
            f1: pick(|m| m.f1),
        }
    };
    let mean_of = |v: &[f64]| stats::mean(v.iter().copied()).unwrap_or(0.0);
    let std_of = |v: &[f64]| stats::population_std(v).unwrap_or(0.0);
    Ok(CvResult {
        kind,
        k,
        mean: [summarize(0, mean_of), summarize(1, mean_of)],
        std: [summarize(0, std_of), summarize(1, std_of)],
        folds: results,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub parcel_id: String,
    pub change_visible: bool,
    pub annotator: String,
    pub timestamp: DateTime<Utc>,
}

/// Latest annotation per parcel. Equal timestamps fall back to a fixed
/// ordering on the remaining fields so the result never depends on input
/// order.
pub fn resolve_annotations(annotations: &[Annotation]) -> BTreeMap<&str, &Annotation> {
    let mut latest: BTreeMap<&str, &Annotation> = BTreeMap::new();
    for a in annotations {
        let key = |x: &Annotation| (x.timestamp, x.annotator.clone(), x.change_visible);
        match latest.get(a.parcel_id.as_str()) {
            Some(prev) if key(prev) >= key(a) => {}
            _ => {
                latest.insert(&a.parcel_id, a);
            }
        }
    }
    latest
}

fn check_annotation_targets(annotations: &[Annotation], parcels: &ParcelSet) -> Result<()> {
    for a in annotations {
        match parcels.get(&a.parcel_id) {
            None => return Err(Error::Validation(format!("annotation for unknown parcel {}", a.parcel_id))),
            Some(p) if !p.treated => {
                return Err(Error::Validation(format!(
                    "parcel {} is a control; only treated parcels are annotated",
                    a.parcel_id
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotoInterpretation {
    pub treated: usize,
    pub annotated: usize,
    pub visible: usize,
    /// `visible / annotated`.
    pub recall: f64,
    /// `annotated / treated`.
    pub coverage: f64,
    /// True when some treated parcels lack an annotation.
    pub partial: bool,
}

pub fn photo_interp_recall(annotations: &[Annotation], parcels: &ParcelSet) -> Result<PhotoInterpretation> {
    check_annotation_targets(annotations, parcels)?;
    let latest = resolve_annotations(annotations);
    let treated = parcels.treated_count();
    let annotated = latest.len();
    let visible = latest.values().filter(|a| a.change_visible).count();
    Ok(PhotoInterpretation {
        treated,
        annotated,
        visible,
        recall: ratio(visible, annotated).0,
        coverage: ratio(annotated, treated).0,
        partial: annotated < treated,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Season {
    Winter,
    Spring,
    Summer,
    Autumn,
}

impl Season {
    pub const ALL: [Season; 4] = [Season::Winter, Season::Spring, Season::Summer, Season::Autumn];

    /// Meteorological seasons: DJF, MAM, JJA, SON.
    pub fn from_date(date: NaiveDate) -> Self {
        match date.month() {
            12 | 1 | 2 => Season::Winter,
            3..=5 => Season::Spring,
            6..=8 => Season::Summer,
            _ => Season::Autumn,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Season::Winter => "Winter",
            Season::Spring => "Spring",
            Season::Summer => "Summer",
            Season::Autumn => "Autumn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub group: String,
    pub visible: usize,
    pub not_visible: usize,
    pub pct_visible: f64,
    pub pct_not_visible: f64,
}

impl DistributionRow {
    fn new(group: &str, visible: usize, not_visible: usize) -> Self {
        let total = (visible + not_visible) as f64;
        DistributionRow {
            group: group.to_string(),
            visible,
            not_visible,
            pct_visible: 100.0 * visible as f64 / total,
            pct_not_visible: 100.0 * not_visible as f64 / total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistributionTables {
    pub by_category: Vec<DistributionRow>,
    pub by_season: Vec<DistributionRow>,
    /// Groups left out because no annotated parcel fell into them.
    pub notes: Vec<String>,
}

/// Visible/not-visible shares per crop category and per season of the
/// parcel's latest application.
pub fn distribution_tables(
    annotations: &[Annotation],
    parcels: &ParcelSet,
    events: &EventSet,
) -> Result<DistributionTables> {
    check_annotation_targets(annotations, parcels)?;
    let mut by_cat: BTreeMap<CropCategory, [usize; 2]> = BTreeMap::new();
    let mut by_season: BTreeMap<Season, [usize; 2]> = BTreeMap::new();
    for (id, a) in resolve_annotations(annotations) {
        let parcel = parcels.get(id).expect("checked above");
        let anchor = events
            .latest(id)
            .ok_or_else(|| Error::Consistency(format!("treated parcel {id} has no application event")))?;
        let slot = usize::from(!a.change_visible);
        by_cat.entry(parcel.crop_category).or_default()[slot] += 1;
        by_season.entry(Season::from_date(anchor)).or_default()[slot] += 1;
    }
    let mut tables = DistributionTables::default();
    for c in CropCategory::ALL {
        match by_cat.get(&c) {
            Some(&[v, n]) => tables.by_category.push(DistributionRow::new(c.label(), v, n)),
            None => tables.notes.push(format!("no annotated parcels in category {}", c.label())),
        }
    }
    for s in Season::ALL {
        match by_season.get(&s) {
            Some(&[v, n]) => tables.by_season.push(DistributionRow::new(s.label(), v, n)),
            None => tables.notes.push(format!("no annotated parcels in {}", s.label().to_lowercase())),
        }
    }
    Ok(tables)
}

/// Annotation log: one JSON object per line, append-only. A missing file
/// is an empty log.
pub fn read_annotation_log(path: &Path) -> Result<Vec<Annotation>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::parse(format!("{} line {}", path.display(), i + 1), e))
        })
        .collect()
}

pub fn append_annotation_log(path: &Path, annotation: &Annotation) -> Result<()> {
    use std::io::Write;
    let mut line = serde_json::to_string(annotation).map_err(|e| Error::parse("annotation", e))?;
    line.push('\n');
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

/// Two-decimal display of a metric, rounded.
pub fn format_metric(v: f64) -> String {
    format!("{v:.2}")
}

/// Percentage of a rate with two decimals, truncated rather than rounded
/// (49/97 displays as 50.51%).
pub fn format_percent(rate: f64) -> String {
    let hundredths = (rate * 10_000.0 + 1e-7).floor();
    format!("{:.2}%", hundredths / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub kind: ModelKind,
    pub holdout: Option<ModelMetrics>,
    pub cv: Option<CvResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    /// `train` (CV on the training split) or `full` (CV on every row).
    pub cv_mode: String,
    pub n_train: usize,
    pub n_test: usize,
    pub models: Vec<ModelReport>,
    pub photo_interpretation: Option<PhotoInterpretation>,
    pub distribution: Option<DistributionTables>,
}

fn metrics_table(out: &mut String, rows: &[(ModelKind, [(f64, f64, f64); 2])]) {
    out.push_str("| Model | Class | Precision | Recall | F1 Score |\n");
    out.push_str("|---|---|---|---|---|\n");
    for (kind, classes) in rows {
        for (c, (p, r, f)) in classes.iter().enumerate() {
            let name = if c == 0 { kind.display_name() } else { "" };
            let _ = writeln!(
                out,
                "| {name} | {c} | {} | {} | {} |",
                format_metric(*p),
                format_metric(*r),
                format_metric(*f)
            );
        }
    }
}

fn distribution_md(out: &mut String, title: &str, rows: &[DistributionRow]) {
    let _ = writeln!(out, "\n### {title}\n");
    out.push_str("| Group | Visible | Not visible | n |\n|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            r.group,
            format_percent(r.pct_visible / 100.0),
            format_percent(r.pct_not_visible / 100.0),
            r.visible + r.not_visible
        );
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from("# Evaluation report\n");
        let holdout: Vec<_> = self
            .models
            .iter()
            .filter_map(|m| {
                m.holdout
                    .map(|h| (m.kind, h.classes.map(|c| (c.precision, c.recall, c.f1))))
            })
            .collect();
        if !holdout.is_empty() {
            let _ = writeln!(
                out,
                "\n## Held-out test split ({} train / {} test)\n",
                self.n_train, self.n_test
            );
            metrics_table(&mut out, &holdout);
        }
        let cv: Vec<_> = self
            .models
            .iter()
            .filter_map(|m| {
                m.cv.as_ref()
                    .map(|cv| (m.kind, cv.mean.map(|c| (c.precision, c.recall, c.f1))))
            })
            .collect();
        if !cv.is_empty() {
            let k = self.models.iter().find_map(|m| m.cv.as_ref().map(|c| c.k)).unwrap_or(0);
            let _ = writeln!(out, "\n## {k}-fold cross-validation mean (mode: {})\n", self.cv_mode);
            metrics_table(&mut out, &cv);
            let _ = writeln!(out, "\nFold standard deviation of F1:\n");
            out.push_str("| Model | Class 0 | Class 1 |\n|---|---|---|\n");
            for m in &self.models {
                if let Some(c) = &m.cv {
                    let _ = writeln!(
                        out,
                        "| {} | {} | {} |",
                        m.kind.display_name(),
                        format_metric(c.std[0].f1),
                        format_metric(c.std[1].f1)
                    );
                }
            }
        }
        if let Some(pi) = &self.photo_interpretation {
            let _ = writeln!(
                out,
                "\n## Photo-interpretation\n\nChange visible in {} of {} annotated treated parcels: recall {}.",
                pi.visible,
                pi.annotated,
                format_percent(pi.recall)
            );
            if pi.partial {
                let _ = writeln!(
                    out,
                    "\nPartial coverage: {} of {} treated parcels annotated ({}).",
                    pi.annotated,
                    pi.treated,
                    format_percent(pi.coverage)
                );
            }
        }
        if let Some(d) = &self.distribution {
            distribution_md(&mut out, "Change visibility by crop category", &d.by_category);
            distribution_md(&mut out, "Change visibility by season", &d.by_season);
            for note in &d.notes {
                let _ = writeln!(out, "\nNote: {note}.");
            }
        }
        out
    }
}

/// Horizontal 100%-stacked bars, visible share first.
pub fn distribution_svg(title: &str, rows: &[DistributionRow]) -> String {
    const LABEL_W: f64 = 150.0;
    const BAR_W: f64 = 400.0;
    const ROW_H: f64 = 28.0;
    const TOP: f64 = 40.0;
    let width = LABEL_W + BAR_W + 20.0;
    let height = TOP + ROW_H * rows.len() as f64 + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="10" y="20" font-size="14" font-weight="bold">{}</text>"#, xml_escape(title));
    for (i, r) in rows.iter().enumerate() {
        let y = TOP + ROW_H * i as f64;
        let wv = BAR_W * r.pct_visible / 100.0;
        let _ = writeln!(s, r#"<text x="10" y="{}">{}</text>"#, y + 16.0, xml_escape(&r.group));
        let _ = writeln!(
            s,
            r##"<rect x="{LABEL_W}" y="{y}" width="{wv:.2}" height="20" fill="#2b8a3e"/>"##
        );
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{y}" width="{:.2}" height="20" fill="#c92a2a"/>"##,
            LABEL_W + wv,
            BAR_W - wv
        );
        let _ = writeln!(
            s,
            r##"<text x="{}" y="{}" fill="#fff">{}</text>"##,
            LABEL_W + 4.0,
            y + 14.0,
            format_percent(r.pct_visible / 100.0)
        );
    }
    let ly = TOP + ROW_H * rows.len() as f64 + 15.0;
    let _ = writeln!(s, r##"<rect x="{LABEL_W}" y="{}" width="12" height="12" fill="#2b8a3e"/>"##, ly - 10.0);
    let _ = writeln!(s, r#"<text x="{}" y="{ly}">change visible</text>"#, LABEL_W + 16.0);
    let _ = writeln!(s, r##"<rect x="{}" y="{}" width="12" height="12" fill="#c92a2a"/>"##, LABEL_W + 130.0, ly - 10.0);
    let _ = writeln!(s, r#"<text x="{}" y="{ly}">not visible</text>"#, LABEL_W + 146.0);
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
