//! Per-parcel index time series and their reduction to fixed-length
//! feature vectors.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{one_hot_crop, CropCategory, ObservationWindow, PixelMask};
use crate::indices::{parcel_index_vector, series_names, IndexVector, N_SERIES};
use crate::raster::{filter_scenes, parcel_band_values, scl_valid_mask, Scene};
use crate::stats;

/// Statistics computed per series, in feature order.
pub const STATS: [&str; 4] = ["mean_pre", "mean_post", "delta", "std_post"];
pub const N_NUMERIC: usize = N_SERIES * STATS.len();
pub const N_FEATURES: usize = N_NUMERIC + 4;
/// Standard deviations below this pass the feature through unscaled.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub date: NaiveDate,
    pub values: IndexVector,
    pub valid_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexSeries {
    pub parcel_id: String,
    pub window: ObservationWindow,
    /// Strictly increasing dates, all inside the window.
    pub observations: Vec<Observation>,
}

/// Assemble a series from candidate observations: drops dates outside the
/// window and observations below `valid_fraction_min`, sorts by date and
/// keeps the best-covered observation when a date repeats.
pub fn build_series(
    window: &ObservationWindow,
    candidates: impl IntoIterator<Item = Observation>,
    valid_fraction_min: f64,
) -> IndexSeries {
    let mut by_date: BTreeMap<NaiveDate, Observation> = BTreeMap::new();
    for obs in candidates {
        if !window.contains(obs.date) || obs.valid_fraction < valid_fraction_min || obs.valid_fraction == 0.0 {
            continue;
        }
        match by_date.get(&obs.date) {
            Some(prev) if prev.valid_fraction >= obs.valid_fraction => {}
            _ => {
                by_date.insert(obs.date, obs);
            }
        }
    }
    IndexSeries {
        parcel_id: window.parcel_id.clone(),
        window: window.clone(),
        observations: by_date.into_values().collect(),
    }
}

/// Observation of one parcel on one harmonised scene.
pub fn observe(scene: &Scene, mask: &PixelMask) -> Result<Observation> {
    let valid = scl_valid_mask(scene);
    let samples = parcel_band_values(scene, mask, &valid)?;
    Ok(Observation {
        date: scene.acquisition_date,
        values: parcel_index_vector(&samples.samples),
        valid_fraction: samples.valid_fraction,
    })
}

/// Full per-parcel path over in-memory harmonised scenes.
pub fn build_series_from_scenes(
    mask: &PixelMask,
    window: &ObservationWindow,
    scenes: &[Scene],
    cloud_max: f64,
    valid_fraction_min: f64,
) -> Result<IndexSeries> {
    let observations = filter_scenes(scenes, window, cloud_max)
        .into_iter()
        .map(|s| observe(s, mask))
        .collect::<Result<Vec<_>>>()?;
    Ok(build_series(window, observations, valid_fraction_min))
}

/// Raw (pre-imputation) features of one parcel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub parcel_id: String,
    /// `N_SERIES × 4` statistics, series-major.
    pub values: Vec<Option<f64>>,
    pub one_hot: [f64; 4],
    pub label: u8,
}

/// A parcel whose series cannot produce before/after statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub parcel_id: String,
    pub reason: String,
}

pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(N_FEATURES);
    for s in series_names() {
        for stat in STATS {
            names.push(format!("{s}_{stat}"));
        }
    }
    for cat in CropCategory::ALL {
        names.push(format!("crop_{}", cat.as_str().to_lowercase()));
    }
    names
}

/// Before/after statistics per series, split at the anchor date (the anchor
/// itself counts as "post").
pub fn extract_features(
    series: &IndexSeries,
    category: CropCategory,
    label: u8,
) -> std::result::Result<FeatureVector, SkipRecord> {
    let anchor = series.window.anchor_date;
    let mut values = Vec::with_capacity(N_NUMERIC);
    let mut usable = false;
    for k in 0..N_SERIES {
        let mut pre = Vec::new();
        let mut post = Vec::new();
        for obs in &series.observations {
            if let Some(v) = obs.values.series()[k] {
                if obs.date < anchor {
                    pre.push(v);
                } else {
                    post.push(v);
                }
            }
        }
        usable |= !pre.is_empty() && !post.is_empty();
        let mean_pre = stats::mean(pre.iter().copied());
        let mean_post = stats::mean(post.iter().copied());
        let delta = match (mean_pre, mean_post) {
            (Some(a), Some(b)) => Some(b - a),
            _ => None,
        };
        values.extend([mean_pre, mean_post, delta, stats::population_std(&post)]);
    }
    if !usable {
        return Err(SkipRecord {
            parcel_id: series.parcel_id.clone(),
            reason: format!(
                "no index observed on both sides of the anchor {anchor} ({} observations)",
                series.observations.len()
            ),
        });
    }
    Ok(FeatureVector {
        parcel_id: series.parcel_id.clone(),
        values,
        one_hot: one_hot_crop(category),
        label,
    })
}

/// Train-only median imputation followed by z-scoring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub feature_names: Vec<String>,
    pub medians: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl FeatureTransform {
    /// Fit on the training rows only. A feature missing in every training
    /// row is imputed with 0.
    pub fn fit(train: &[FeatureVector]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Validation("cannot fit a feature transform on an empty training set".into()));
        }
        let mut medians = Vec::with_capacity(N_NUMERIC);
        let mut means = Vec::with_capacity(N_NUMERIC);
        let mut stds = Vec::with_capacity(N_NUMERIC);
        for j in 0..N_NUMERIC {
            let present: Vec<f64> = train.iter().filter_map(|r| r.values[j]).collect();
            let median = stats::median(&present).unwrap_or(0.0);
            let imputed: Vec<f64> = train.iter().map(|r| r.values[j].unwrap_or(median)).collect();
            medians.push(median);
            means.push(stats::mean(imputed.iter().copied()).unwrap_or(0.0));
            stds.push(stats::population_std(&imputed).unwrap_or(0.0));
        }
        Ok(Self {
            feature_names: feature_names(),
            medians,
            means,
            stds,
        })
    }

    /// Imputed, standardised row of length [`N_FEATURES`]; one-hot columns
    /// are copied unchanged.
    pub fn apply(&self, row: &FeatureVector) -> Vec<f64> {
        let mut out = Vec::with_capacity(N_FEATURES);
        for j in 0..N_NUMERIC {
            let v = row.values[j].unwrap_or(self.medians[j]);
            out.push(if self.stds[j] < STD_FLOOR {
                v
            } else {
                (v - self.means[j]) / self.stds[j]
            });
        }
        out.extend_from_slice(&row.one_hot);
        out
    }

    pub fn apply_all(&self, rows: &[FeatureVector]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}

/// Fit on `train`, then transform both batches.
pub fn impute_and_standardize(
    train: &[FeatureVector],
    apply_to: &[FeatureVector],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, FeatureTransform)> {
    let t = FeatureTransform::fit(train)?;
    Ok((t.apply_all(train), t.apply_all(apply_to), t))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(cell: &str, context: &str) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|e| Error::parse(context, format!("bad number {cell:?}: {e}")))
}

fn csv_err(path: &Path, e: impl ToString) -> Error {
    Error::parse(path.display().to_string(), e)
}

/// `parcel_id,date,<17 series>,valid_fraction`, empty cells for missing.
pub fn write_series_csv(path: impl AsRef<Path>, series: &[IndexSeries]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["parcel_id".to_string(), "date".to_string()];
    header.extend(series_names());
    header.push("valid_fraction".into());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for s in series {
        for obs in &s.observations {
            let mut rec = vec![s.parcel_id.clone(), obs.date.to_string()];
            rec.extend(obs.values.series().iter().map(|v| fmt_opt(*v)));
            rec.push(obs.valid_fraction.to_string());
            w.write_record(&rec).map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows of the series CSV grouped by parcel id.
pub fn read_series_csv(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<Observation>>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut out: BTreeMap<String, Vec<Observation>> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let context = format!("{} row {}", path.display(), i + 2);
        if rec.len() != N_SERIES + 3 {
            return Err(Error::parse(&context, format!("expected {} columns", N_SERIES + 3)));
        }
        let date = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d").map_err(|e| Error::parse(&context, e))?;
        let mut values = [None; N_SERIES];
        for (k, slot) in values.iter_mut().enumerate() {
            *slot = parse_opt(&rec[2 + k], &context)?;
        }
        let valid_fraction = parse_opt(&rec[N_SERIES + 2], &context)?.unwrap_or(0.0);
        out.entry(rec[0].to_string()).or_default().push(Observation {
            date,
            values: IndexVector::from_series(&values),
            valid_fraction,
        });
    }
    Ok(out)
}

/// `parcel_id,label,<68 statistics>,<4 one-hot>`, empty cells for missing.
pub fn write_features_csv(path: impl AsRef<Path>, rows: &[FeatureVector]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header = vec!["parcel_id".to_string(), "label".to_string()];
    header.extend(feature_names());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let mut rec = vec![r.parcel_id.clone(), r.label.to_string()];
        rec.extend(r.values.iter().map(|v| fmt_opt(*v)));
        rec.extend(r.one_hot.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features_csv(path: impl AsRef<Path>) -> Result<Vec<FeatureVector>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let context = format!("{} row {}", path.display(), i + 2);
        if rec.len() != N_FEATURES + 2 {
            return Err(Error::parse(&context, format!("expected {} columns", N_FEATURES + 2)));
        }
        let label: u8 = rec[1].parse().map_err(|e| Error::parse(&context, e))?;
        if label > 1 {
            return Err(Error::Validation(format!("{context}: label must be 0 or 1")));
        }
        let values = (0..N_NUMERIC)
            .map(|j| parse_opt(&rec[2 + j], &context))
            .collect::<Result<Vec<_>>>()?;
        let mut one_hot = [0.0; 4];
        for (k, slot) in one_hot.iter_mut().enumerate() {
            *slot = parse_opt(&rec[2 + N_NUMERIC + k], &context)?.unwrap_or(0.0);
        }
        rows.push(FeatureVector {
            parcel_id: rec[0].to_string(),
            values,
            one_hot,
            label,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indices::{Index, N_INDICES};
    use chrono::Duration;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn obs(day: i64, eomi2: Option<f64>, vf: f64) -> Observation {
        let mut idx = [None; N_INDICES];
        idx[Index::Eomi2 as usize] = eomi2;
        Observation {
            date: date("2023-08-28") + Duration::days(day),
            values: IndexVector::from_indices(idx),
            valid_fraction: vf,
        }
    }

    fn window() -> ObservationWindow {
        ObservationWindow::around("P1", date("2023-08-28"), 30)
    }

    fn stat(fv: &FeatureVector, series: usize, stat: usize) -> Option<f64> {
        fv.values[series * 4 + stat]
    }

    #[test]
    fn series_sorted_and_guarded() {
        let s = build_series(
            &window(),
            vec![obs(10, Some(0.1), 1.0), obs(-20, Some(0.1), 0.9), obs(5, Some(0.1), 0.3), obs(0, Some(0.2), 0.5), obs(-3, None, 1.0), obs(40, Some(0.1), 1.0)],
            0.5,
        );
        let days: Vec<i64> = s.observations.iter().map(|o| (o.date - date("2023-08-28")).num_days()).collect();
        assert_eq!(days, vec![-20, -3, 0, 10]);
        assert!(build_series(&window(), Vec::new(), 0.5).observations.is_empty());
    }

    #[test]
    fn duplicate_dates_keep_best_coverage() {
        let s = build_series(&window(), vec![obs(1, Some(0.1), 0.6), obs(1, Some(0.2), 0.9)], 0.5);
        assert_eq!(s.observations.len(), 1);
        assert_eq!(s.observations[0].valid_fraction, 0.9);
    }

    #[test]
    fn before_after_statistics() {
        let s = build_series(
            &window(),
            vec![obs(-10, Some(0.10), 1.0), obs(-5, Some(0.12), 1.0), obs(0, Some(0.30), 1.0), obs(5, Some(0.28), 1.0)],
            0.5,
        );
        let fv = extract_features(&s, CropCategory::Cotton, 1).unwrap();
        let k = Index::Eomi2 as usize;
        assert!((stat(&fv, k, 0).unwrap() - 0.11).abs() < 1e-12);
        assert!((stat(&fv, k, 1).unwrap() - 0.29).abs() < 1e-12);
        assert!((stat(&fv, k, 2).unwrap() - 0.18).abs() < 1e-12);
        assert!((stat(&fv, k, 3).unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(stat(&fv, k, 2).unwrap(), stat(&fv, k, 1).unwrap() - stat(&fv, k, 0).unwrap());
        // eomi1 never observed
        for st in 0..4 {
            assert_eq!(stat(&fv, Index::Eomi1 as usize, st), None);
        }
        assert_eq!(fv.values.len(), N_NUMERIC);
        assert_eq!(fv.one_hot, [0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn single_post_point_has_zero_std() {
        let s = build_series(&window(), vec![obs(-1, Some(0.1), 1.0), obs(3, Some(0.3), 1.0)], 0.5);
        let fv = extract_features(&s, CropCategory::Cereals, 0).unwrap();
        assert_eq!(stat(&fv, Index::Eomi2 as usize, 3), Some(0.0));
    }

    #[test]
    fn one_sided_series_is_skipped() {
        let s = build_series(&window(), vec![obs(1, Some(0.1), 1.0), obs(3, Some(0.3), 1.0)], 0.5);
        let skip = extract_features(&s, CropCategory::Cereals, 0).unwrap_err();
        assert_eq!(skip.parcel_id, "P1");
    }

    #[test]
    fn permuting_candidates_does_not_change_features() {
        let mut c = vec![obs(-10, Some(0.10), 1.0), obs(-5, Some(0.12), 0.8), obs(0, Some(0.30), 1.0), obs(5, Some(0.28), 0.7)];
        let a = extract_features(&build_series(&window(), c.clone(), 0.5), CropCategory::Cotton, 1).unwrap();
        c.reverse();
        let b = extract_features(&build_series(&window(), c, 0.5), CropCategory::Cotton, 1).unwrap();
        assert_eq!(a, b);
    }

    fn row(id: &str, v: Option<f64>, w: f64) -> FeatureVector {
        let mut values = vec![Some(w); N_NUMERIC];
        values[0] = v;
        values[1] = Some(5.0);
        FeatureVector {
            parcel_id: id.into(),
            values,
            one_hot: [0.0, 0.0, 1.0, 0.0],
            label: 1,
        }
    }

    #[test]
    fn median_imputation_and_zscores() {
        let train = vec![row("a", Some(1.0), 1.0), row("b", Some(2.0), 2.0), row("c", Some(3.0), 6.0)];
        let test = vec![row("t", None, 3.0)];
        let (tr, te, t) = impute_and_standardize(&train, &test).unwrap();
        assert_eq!(t.medians[0], 2.0);
        // imputed 2 = train mean, so z = 0
        assert_eq!(te[0][0], 0.0);
        for j in [0usize, 2] {
            let col: Vec<f64> = tr.iter().map(|r| r[j]).collect();
            assert!(stats::mean(col.iter().copied()).unwrap().abs() < 1e-9);
            assert!((stats::population_std(&col).unwrap() - 1.0).abs() < 1e-9);
        }
        // constant column 1 passes through
        assert!(tr.iter().all(|r| r[1] == 5.0));
        assert_eq!(te[0][1], 5.0);
        // one-hot untouched
        assert_eq!(&te[0][N_NUMERIC..], &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(te[0].len(), N_FEATURES);
    }

    #[test]
    fn transform_depends_only_on_train() {
        let train = vec![row("a", Some(1.0), 1.0), row("b", None, 2.0), row("c", Some(3.0), 6.0)];
        let (_, _, t1) = impute_and_standardize(&train, &[row("x", Some(100.0), 1e6)]).unwrap();
        let (_, _, t2) = impute_and_standardize(&train, &[]).unwrap();
        assert_eq!(t1, t2);
        assert!(FeatureTransform::fit(&[]).is_err());
    }

    #[test]
    fn features_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let rows = vec![row("a", None, 0.1 + 0.2), row("b", Some(-1.5e-7), 2.0)];
        write_features_csv(&path, &rows).unwrap();
        assert_eq!(read_features_csv(&path).unwrap(), rows);
    }

    #[test]
    fn series_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = build_series(&window(), vec![obs(-1, Some(0.1), 1.0), obs(3, None, 0.75)], 0.5);
        write_series_csv(&path, std::slice::from_ref(&s)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("parcel_id,date,eomi1,eomi2,"));
        assert!(text.lines().next().unwrap().ends_with("r_nbr2_evi,valid_fraction"));
        let back = read_series_csv(&path).unwrap();
        assert_eq!(back["P1"], s.observations);
    }

    #[test]
    fn feature_name_layout() {
        let names = feature_names();
        assert_eq!(names.len(), N_FEATURES);
        assert_eq!(names[0], "eomi1_mean_pre");
        assert_eq!(names[7], "eomi2_std_post");
        assert_eq!(names[N_FEATURES - 1], "crop_leguminouscrops");
    }
}
