//! Scene ingestion, resolution harmonisation, SCL masking and per-parcel
//! reflectance access.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{ObservationWindow, PixelMask};
use crate::geotiff;
use crate::grid::{GridSpec, Raster};
use crate::indices::BandSample;

/// Default scene-level cloud threshold, percent (inclusive).
pub const CLOUD_MAX_PERCENT: f64 = 20.0;
/// Default minimum share of a parcel's pixels that must be valid.
pub const VALID_FRACTION_MIN: f64 = 0.5;
/// Harmonised pixel size in metres.
pub const TARGET_PIXEL_SIZE: f64 = 10.0;
/// Integer reflectance is stored as DN = reflectance × 10000.
pub const DN_SCALE: f64 = 10_000.0;

/// SCL classes kept as valid: vegetation, not vegetated, water.
pub const VALID_SCL: [u8; 3] = [4, 5, 6];
pub const SCL_MAX: u8 = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Band {
    B02,
    B04,
    B08,
    B8A,
    B11,
    B12,
}

impl Band {
    pub const ALL: [Band; 6] = [Band::B02, Band::B04, Band::B08, Band::B8A, Band::B11, Band::B12];

    pub fn as_str(self) -> &'static str {
        match self {
            Band::B02 => "B02",
            Band::B04 => "B04",
            Band::B08 => "B08",
            Band::B8A => "B8A",
            Band::B11 => "B11",
            Band::B12 => "B12",
        }
    }

    /// Native Sentinel-2 resolution in metres.
    pub fn native_pixel_size(self) -> f64 {
        match self {
            Band::B02 | Band::B04 | Band::B08 => 10.0,
            Band::B8A | Band::B11 | Band::B12 => 20.0,
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Band::ALL
            .into_iter()
            .find(|b| b.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown band {s:?}")))
    }
}

/// Anything with an acquisition date and a scene cloud percentage.
pub trait Acquisition {
    fn acquisition_date(&self) -> NaiveDate;
    fn cloud_percent(&self) -> f64;
}

/// On-disk scene description. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub acquisition_date: NaiveDate,
    pub cloud_percent: f64,
    pub bands: BTreeMap<String, String>,
    pub scl: String,
}

impl SceneManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: SceneManifest =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.cloud_percent) {
            return Err(Error::Validation(format!(
                "cloud_percent {} outside [0, 100]",
                self.cloud_percent
            )));
        }
        for band in Band::ALL {
            if !self.bands.contains_key(band.as_str()) {
                return Err(Error::MissingBand(band.as_str().into()));
            }
        }
        Ok(())
    }
}

impl Acquisition for SceneManifest {
    fn acquisition_date(&self) -> NaiveDate {
        self.acquisition_date
    }
    fn cloud_percent(&self) -> f64 {
        self.cloud_percent
    }
}

/// One acquisition: six reflectance bands and the scene classification layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub acquisition_date: NaiveDate,
    pub cloud_percent: f64,
    pub bands: BTreeMap<Band, Raster<f64>>,
    pub scl: Raster<u8>,
    pub epsg: Option<u16>,
}

impl Acquisition for Scene {
    fn acquisition_date(&self) -> NaiveDate {
        self.acquisition_date
    }
    fn cloud_percent(&self) -> f64 {
        self.cloud_percent
    }
}

impl Acquisition for &Scene {
    fn acquisition_date(&self) -> NaiveDate {
        self.acquisition_date
    }
    fn cloud_percent(&self) -> f64 {
        self.cloud_percent
    }
}

impl Scene {
    pub fn band(&self, band: Band) -> &Raster<f64> {
        &self.bands[&band]
    }

    /// Grid shared by every layer; meaningful after [`harmonize`].
    pub fn grid(&self) -> GridSpec {
        self.scl.spec
    }

    pub fn sample_at(&self, index: usize) -> BandSample {
        BandSample {
            b02: self.bands[&Band::B02].data[index],
            b04: self.bands[&Band::B04].data[index],
            b08: self.bands[&Band::B08].data[index],
            b8a: self.bands[&Band::B8A].data[index],
            b11: self.bands[&Band::B11].data[index],
            b12: self.bands[&Band::B12].data[index],
        }
    }

    fn check(&self) -> Result<()> {
        for (band, r) in &self.bands {
            if r.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("band {band} has non-finite reflectance")));
            }
        }
        if let Some(code) = self.scl.data.iter().find(|c| **c > SCL_MAX) {
            return Err(Error::Validation(format!("SCL code {code} outside [0, {SCL_MAX}]")));
        }
        Ok(())
    }
}

fn merge_epsg(current: &mut Option<u16>, next: Option<u16>, what: &str) -> Result<()> {
    match (*current, next) {
        (Some(a), Some(b)) if a != b => Err(Error::GridMismatch(format!(
            "{what} is in EPSG:{b}, expected EPSG:{a}"
        ))),
        (None, Some(b)) => {
            *current = Some(b);
            Ok(())
        }
        _ => Ok(()),
    }
}

/// Load a scene from its JSON manifest. Integer samples are treated as DN
/// and divided by [`DN_SCALE`].
pub fn load_scene(manifest_path: impl AsRef<Path>) -> Result<Scene> {
    let manifest_path = manifest_path.as_ref();
    let manifest = SceneManifest::load(manifest_path)?;
    let base = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolve = |rel: &str| -> PathBuf { base.join(rel) };

    let mut epsg = None;
    let mut bands = BTreeMap::new();
    for band in Band::ALL {
        let raw = geotiff::read(resolve(&manifest.bands[band.as_str()]))?;
        merge_epsg(&mut epsg, raw.epsg, band.as_str())?;
        let data = if raw.integer_samples {
            raw.data.into_iter().map(|v| v / DN_SCALE).collect()
        } else {
            raw.data
        };
        bands.insert(band, Raster::from_vec(raw.spec, data));
    }
    let raw = geotiff::read(resolve(&manifest.scl))?;
    merge_epsg(&mut epsg, raw.epsg, "SCL")?;
    if let Some(v) = raw.data.iter().find(|v| v.fract() != 0.0 || **v < 0.0 || **v > SCL_MAX as f64) {
        return Err(Error::Validation(format!("SCL value {v} is not a class code")));
    }
    let scl = Raster::from_vec(raw.spec, raw.data.iter().map(|v| *v as u8).collect());

    let scene = Scene {
        acquisition_date: manifest.acquisition_date,
        cloud_percent: manifest.cloud_percent,
        bands,
        scl,
        epsg,
    };
    scene.check()?;
    Ok(scene)
}

fn upsample_factor(spec: &GridSpec) -> Result<usize> {
    const SUPPORTED: [f64; 2] = [10.0, 20.0];
    SUPPORTED
        .iter()
        .find(|s| (spec.pixel_size - **s).abs() < 1e-9)
        .map(|s| (s / TARGET_PIXEL_SIZE).round() as usize)
        .ok_or(Error::UnsupportedPixelSize(spec.pixel_size))
}

/// Bring every band and the SCL onto the 10 m grid by nearest-neighbour
/// replication. Idempotent.
pub fn harmonize(scene: &Scene) -> Result<Scene> {
    let mut target: Option<GridSpec> = None;
    let mut check = |spec: GridSpec, what: &str| -> Result<()> {
        match target {
            None => {
                target = Some(spec);
                Ok(())
            }
            Some(t) if t.aligned_with(&spec) => Ok(()),
            Some(t) => Err(Error::GridMismatch(format!(
                "{what} covers {:?} at 10 m, expected {:?}",
                spec, t
            ))),
        }
    };

    let mut bands = BTreeMap::new();
    for (band, r) in &scene.bands {
        let up = r.replicate(upsample_factor(&r.spec)?);
        check(up.spec, band.as_str())?;
        bands.insert(*band, up);
    }
    let scl = scene.scl.replicate(upsample_factor(&scene.scl.spec)?);
    check(scl.spec, "SCL")?;

    Ok(Scene {
        acquisition_date: scene.acquisition_date,
        cloud_percent: scene.cloud_percent,
        bands,
        scl,
        epsg: scene.epsg,
    })
}

/// Pixels whose SCL class is one of [`VALID_SCL`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidMask {
    pub spec: GridSpec,
    pub bits: Vec<bool>,
    pub kept_classes: [u8; 3],
}

impl ValidMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

pub fn scl_valid_mask(scene: &Scene) -> ValidMask {
    ValidMask {
        spec: scene.scl.spec,
        bits: scene.scl.data.iter().map(|c| VALID_SCL.contains(c)).collect(),
        kept_classes: VALID_SCL,
    }
}

/// Scenes inside the window whose cloud percentage is at most `cloud_max`,
/// sorted by date.
pub fn filter_scenes<'a, T: Acquisition>(
    scenes: &'a [T],
    window: &ObservationWindow,
    cloud_max: f64,
) -> Vec<&'a T> {
    let mut kept: Vec<&T> = scenes
        .iter()
        .filter(|s| window.contains(s.acquisition_date()) && s.cloud_percent() <= cloud_max)
        .collect();
    kept.sort_by_key(|s| s.acquisition_date());
    kept
}

/// Reflectance samples of a parcel at its valid pixels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParcelSamples {
    /// One entry per pixel in `parcel ∧ valid`, row-major order.
    pub samples: Vec<BandSample>,
    pub parcel_pixels: usize,
    pub valid_fraction: f64,
}

impl ParcelSamples {
    pub fn band(&self, band: Band) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| match band {
                Band::B02 => s.b02,
                Band::B04 => s.b04,
                Band::B08 => s.b08,
                Band::B8A => s.b8a,
                Band::B11 => s.b11,
                Band::B12 => s.b12,
            })
            .collect()
    }
}

pub fn parcel_band_values(scene: &Scene, parcel: &PixelMask, valid: &ValidMask) -> Result<ParcelSamples> {
    let grid = scene.grid();
    if !grid.aligned_with(&parcel.spec) || !grid.aligned_with(&valid.spec) {
        return Err(Error::GridMismatch("parcel or valid mask does not match the scene grid".into()));
    }
    if let Some((band, _)) = scene.bands.iter().find(|(_, r)| !r.spec.aligned_with(&grid)) {
        return Err(Error::GridMismatch(format!("band {band} is not harmonised")));
    }
    let samples: Vec<BandSample> = parcel
        .pixels()
        .iter()
        .filter(|&&i| valid.bits[i])
        .map(|&i| scene.sample_at(i))
        .collect();
    let valid_fraction = if parcel.pixel_count == 0 {
        0.0
    } else {
        samples.len() as f64 / parcel.pixel_count as f64
    };
    Ok(ParcelSamples {
        samples,
        parcel_pixels: parcel.pixel_count,
        valid_fraction,
    })
}

/// Write a scene as one GeoTIFF per band plus SCL and its manifest.
/// Reflectance is stored as Float32.
pub fn write_scene(dir: impl AsRef<Path>, scene: &Scene) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bands = BTreeMap::new();
    for (band, r) in &scene.bands {
        let name = format!("{band}.tif");
        let data: Vec<f32> = r.data.iter().map(|v| *v as f32).collect();
        geotiff::write_f32(dir.join(&name), &r.spec, &data, scene.epsg)?;
        bands.insert(band.as_str().to_string(), name);
    }
    geotiff::write_u8(dir.join("SCL.tif"), &scene.scl.spec, &scene.scl.data, scene.epsg)?;
    let manifest = SceneManifest {
        acquisition_date: scene.acquisition_date,
        cloud_percent: scene.cloud_percent,
        bands,
        scl: "SCL.tif".into(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::parse("manifest", e))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::{rasterize_parcel, CropCategory, Parcel, Polygon};

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn grid10(w: usize, h: usize) -> GridSpec {
        GridSpec::new(0.0, h as f64 * 10.0, 10.0, w, h)
    }

    fn uniform_scene(w: usize, h: usize, scl: Vec<u8>) -> Scene {
        let spec = grid10(w, h);
        let bands = Band::ALL
            .into_iter()
            .enumerate()
            .map(|(i, b)| (b, Raster::filled(spec, 0.05 * (i + 1) as f64)))
            .collect();
        Scene {
            acquisition_date: date("2023-08-28"),
            cloud_percent: 12.0,
            bands,
            scl: Raster::from_vec(spec, scl),
            epsg: None,
        }
    }

    #[test]
    fn nearest_neighbour_upsampling() {
        let mut s = uniform_scene(4, 4, vec![4; 16]);
        let coarse = GridSpec::new(0.0, 40.0, 20.0, 2, 2);
        s.bands.insert(Band::B11, Raster::from_vec(coarse, vec![0.1, 0.2, 0.3, 0.4]));
        let h = harmonize(&s).unwrap();
        let b11 = h.band(Band::B11);
        assert_eq!(b11.spec, grid10(4, 4));
        assert_eq!(
            b11.data,
            vec![0.1, 0.1, 0.2, 0.2, 0.1, 0.1, 0.2, 0.2, 0.3, 0.3, 0.4, 0.4, 0.3, 0.3, 0.4, 0.4]
        );
        let mean_up: f64 = b11.data.iter().sum::<f64>() / 16.0;
        assert!((mean_up - 0.25).abs() < 1e-15);
    }

    #[test]
    fn harmonize_identity_and_idempotence() {
        let s = uniform_scene(4, 4, vec![4; 16]);
        let h = harmonize(&s).unwrap();
        assert_eq!(h, s);
        assert_eq!(harmonize(&h).unwrap(), h);
    }

    #[test]
    fn unsupported_pixel_size() {
        let mut s = uniform_scene(4, 4, vec![4; 16]);
        s.bands.insert(Band::B12, Raster::filled(GridSpec::new(0.0, 40.0, 60.0, 1, 1), 0.1));
        assert!(matches!(harmonize(&s), Err(Error::UnsupportedPixelSize(_))));
    }

    #[test]
    fn misaligned_band_is_grid_mismatch() {
        let mut s = uniform_scene(4, 4, vec![4; 16]);
        s.bands.insert(Band::B12, Raster::filled(GridSpec::new(20.0, 40.0, 20.0, 2, 2), 0.1));
        assert!(matches!(harmonize(&s), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn scl_mask_classes() {
        let s = uniform_scene(4, 1, vec![4, 5, 6, 8]);
        assert_eq!(scl_valid_mask(&s).bits, vec![true, true, true, false]);
        let cloudy = uniform_scene(2, 1, vec![8, 9]);
        assert_eq!(scl_valid_mask(&cloudy).count(), 0);
        let veg = uniform_scene(2, 2, vec![4; 4]);
        assert_eq!(scl_valid_mask(&veg).count(), 4);
    }

    #[test]
    fn scl_mask_ignores_reflectance() {
        let a = uniform_scene(4, 1, vec![4, 9, 6, 3]);
        let mut b = a.clone();
        for r in b.bands.values_mut() {
            r.data.iter_mut().for_each(|v| *v *= 3.0);
        }
        assert_eq!(scl_valid_mask(&a), scl_valid_mask(&b));
    }

    struct Acq(NaiveDate, f64);
    impl Acquisition for Acq {
        fn acquisition_date(&self) -> NaiveDate {
            self.0
        }
        fn cloud_percent(&self) -> f64 {
            self.1
        }
    }

    #[test]
    fn filter_window_and_cloud() {
        let anchor = date("2023-08-28");
        let w = ObservationWindow::around("p", anchor, 30);
        let scenes = vec![
            Acq(anchor + chrono::Duration::days(31), 0.0),
            Acq(anchor + chrono::Duration::days(30), 20.0),
            Acq(anchor - chrono::Duration::days(30), 35.0),
            Acq(anchor - chrono::Duration::days(5), 1.0),
        ];
        let kept = filter_scenes(&scenes, &w, CLOUD_MAX_PERCENT);
        let dates: Vec<NaiveDate> = kept.iter().map(|s| s.0).collect();
        assert_eq!(dates, vec![anchor - chrono::Duration::days(5), anchor + chrono::Duration::days(30)]);
    }

    fn parcel_on(grid: &GridSpec, poly: Polygon) -> PixelMask {
        let p = Parcel {
            parcel_id: "p".into(),
            geometry: poly.into(),
            crop_code: "1".into(),
            crop_category: CropCategory::Cotton,
            treated: false,
        };
        rasterize_parcel(&p, grid).unwrap()
    }

    #[test]
    fn valid_fraction_counts() {
        // 2x2 parcel in the top-left corner; two of its pixels cloudy.
        let mut scl = vec![4u8; 16];
        scl[0] = 8;
        scl[1] = 9;
        let s = uniform_scene(4, 4, scl);
        let mask = parcel_on(&s.grid(), Polygon::rect(0.0, 20.0, 20.0, 40.0));
        let v = parcel_band_values(&s, &mask, &scl_valid_mask(&s)).unwrap();
        assert_eq!(mask.pixel_count, 4);
        assert_eq!(v.valid_fraction, 0.5);
        assert_eq!(v.samples.len(), 2);
        assert_eq!(v.band(Band::B04).len(), 2);

        let clear = uniform_scene(4, 4, vec![5; 16]);
        let v = parcel_band_values(&clear, &mask, &scl_valid_mask(&clear)).unwrap();
        assert_eq!(v.valid_fraction, 1.0);
    }

    #[test]
    fn disjoint_masks_yield_nothing() {
        let mut scl = vec![4u8; 16];
        scl[..8].iter_mut().for_each(|c| *c = 8);
        let s = uniform_scene(4, 4, scl);
        let mask = parcel_on(&s.grid(), Polygon::rect(0.0, 20.0, 40.0, 40.0));
        let v = parcel_band_values(&s, &mask, &scl_valid_mask(&s)).unwrap();
        assert_eq!(v.valid_fraction, 0.0);
        assert!(v.samples.is_empty());
    }

    #[test]
    fn scene_roundtrip_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let s = uniform_scene(4, 4, vec![4, 5, 6, 8, 9, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4, 10]);
        let manifest = write_scene(dir.path().join("s"), &s).unwrap();
        let back = load_scene(&manifest).unwrap();
        assert_eq!(back.cloud_percent, 12.0);
        assert_eq!(back.scl, s.scl);
        for b in Band::ALL {
            let orig = s.band(b);
            let read = back.band(b);
            assert_eq!(read.spec, orig.spec);
            for (x, y) in read.data.iter().zip(&orig.data) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }

    #[test]
    fn missing_band_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let s = uniform_scene(2, 2, vec![4; 4]);
        let path = write_scene(dir.path(), &s).unwrap();
        let mut m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        m["bands"].as_object_mut().unwrap().remove("B8A");
        std::fs::write(&path, m.to_string()).unwrap();
        let err = load_scene(&path).unwrap_err();
        assert_eq!(err.to_string(), "missing band B8A");
    }

    #[test]
    fn cloud_percent_range_checked() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = uniform_scene(2, 2, vec![4; 4]);
        s.cloud_percent = 105.0;
        let path = write_scene(dir.path(), &s).unwrap();
        assert!(matches!(load_scene(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn dn_inputs_are_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let s = uniform_scene(2, 2, vec![4; 4]);
        let path = write_scene(dir.path(), &s).unwrap();
        geotiff::write_u16(dir.path().join("B04.tif"), &s.grid(), &[1000, 2000, 3000, 4000], None).unwrap();
        let back = load_scene(&path).unwrap();
        assert_eq!(back.band(Band::B04).data, vec![0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn crs_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = uniform_scene(2, 2, vec![4; 4]);
        s.epsg = Some(32634);
        let path = write_scene(dir.path(), &s).unwrap();
        geotiff::write_f32(dir.path().join("B11.tif"), &s.grid(), &[0.1; 4], Some(32635)).unwrap();
        assert!(matches!(load_scene(&path), Err(Error::GridMismatch(_))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn filtering_is_subset_sorted_idempotent(
                offsets in proptest::collection::vec((-60i64..60, 0.0f64..100.0), 0..30),
            ) {
                let anchor = date("2023-06-01");
                let w = ObservationWindow::around("p", anchor, 30);
                let scenes: Vec<Acq> = offsets.iter().map(|(d, c)| Acq(anchor + chrono::Duration::days(*d), *c)).collect();
                let once = filter_scenes(&scenes, &w, CLOUD_MAX_PERCENT);
                prop_assert!(once.windows(2).all(|p| p[0].0 <= p[1].0));
                prop_assert!(once.iter().all(|s| w.contains(s.0) && s.1 <= CLOUD_MAX_PERCENT));
                let owned: Vec<Acq> = once.iter().map(|s| Acq(s.0, s.1)).collect();
                let twice = filter_scenes(&owned, &w, CLOUD_MAX_PERCENT);
                prop_assert_eq!(
                    once.iter().map(|s| (s.0, s.1)).collect::<Vec<_>>(),
                    twice.iter().map(|s| (s.0, s.1)).collect::<Vec<_>>()
                );
            }

            #[test]
            fn invalid_pixels_only_change_valid_fraction(
                cloudy in proptest::collection::vec(any::<bool>(), 16),
                extra in 0usize..16,
            ) {
                let scl: Vec<u8> = cloudy.iter().map(|c| if *c { 8 } else { 4 }).collect();
                let s = uniform_scene(4, 4, scl.clone());
                let mask = parcel_on(&s.grid(), Polygon::rect(0.0, 0.0, 40.0, 40.0));
                let before = parcel_band_values(&s, &mask, &scl_valid_mask(&s)).unwrap();
                let mut scl2 = scl;
                scl2[extra] = 8;
                let s2 = uniform_scene(4, 4, scl2);
                let after = parcel_band_values(&s2, &mask, &scl_valid_mask(&s2)).unwrap();
                let expected: Vec<BandSample> = mask
                    .pixels()
                    .iter()
                    .filter(|&&i| i != extra && !cloudy[i])
                    .map(|&i| s.sample_at(i))
                    .collect();
                prop_assert_eq!(&after.samples, &expected);
                prop_assert!(after.valid_fraction <= before.valid_fraction);
            }
        }
    }
}
