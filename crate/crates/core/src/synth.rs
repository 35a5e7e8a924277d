//! Deterministic synthetic corpus: rectangular parcels on a flat landscape,
//! application events, and a time series of six-band scenes in which
//! treated parcels darken after application and recover linearly.
//!
//! 10 m bands are generated on the target grid; B8A, B11, B12 and the SCL
//! at their native 20 m. Parcels are aligned to the 20 m grid.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{
    parcels_to_geojson, write_events, ApplicationEvent, CropCategory, EventSet, Geometry, Parcel, ParcelSet,
    Polygon, WINDOW_DAYS,
};
use crate::grid::{GridSpec, Raster};
use crate::models::rng_for;
use crate::raster::{write_scene, Band, Scene, TARGET_PIXEL_SIZE};

pub const SYNTH_EPSG: u16 = 32631;
const ORIGIN: (f64, f64) = (500_000.0, 4_600_000.0);

const SCL_VEGETATION: u8 = 4;
const SCL_BARE_SOIL: u8 = 5;
const SCL_CLOUD_MEDIUM: u8 = 8;
const SCL_CLOUD_HIGH: u8 = 9;

const PARCEL_STREAM: u64 = 100;
const EVENT_STREAM: u64 = 101;
const SCENE_STREAM: u64 = 102;

/// Per-category base reflectance in band order B02, B04, B08, B8A, B11, B12.
const CATEGORY_BASE: [[f64; 6]; 4] = [
    [0.050, 0.060, 0.280, 0.300, 0.240, 0.150],
    [0.045, 0.050, 0.320, 0.340, 0.220, 0.130],
    [0.055, 0.070, 0.250, 0.270, 0.260, 0.170],
    [0.050, 0.055, 0.300, 0.320, 0.230, 0.140],
];
const BACKGROUND: [f64; 6] = [0.080, 0.100, 0.180, 0.200, 0.280, 0.220];

/// Post-application darkening. Multipliers apply at day 0 and relax
/// linearly to 1 at `recovery_days`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseModel {
    /// Multiplier on B02 and B04.
    pub visible_dip: f64,
    /// Multiplier on B11 and B12.
    pub swir_dip: f64,
    pub recovery_days: u32,
}

impl Default for ResponseModel {
    fn default() -> Self {
        ResponseModel {
            visible_dip: 0.7,
            swir_dip: 0.9,
            recovery_days: 20,
        }
    }
}

impl ResponseModel {
    pub fn null() -> Self {
        ResponseModel {
            visible_dip: 1.0,
            swir_dip: 1.0,
            ..Self::default()
        }
    }

    /// `(visible, swir)` multipliers `days` after application, or `None`
    /// outside `0..=recovery_days`.
    pub fn multipliers(&self, days: i64) -> Option<(f64, f64)> {
        if days < 0 || days > i64::from(self.recovery_days) {
            return None;
        }
        let t = if self.recovery_days == 0 {
            1.0
        } else {
            days as f64 / f64::from(self.recovery_days)
        };
        let lerp = |a: f64| a + (1.0 - a) * t;
        Some((lerp(self.visible_dip), lerp(self.swir_dip)))
    }
}

/// Gaussian noise standard deviation per band, in reflectance units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseStd {
    pub b02: f64,
    pub b04: f64,
    pub b08: f64,
    pub b8a: f64,
    pub b11: f64,
    pub b12: f64,
}

impl NoiseStd {
    pub fn uniform(std: f64) -> Self {
        NoiseStd {
            b02: std,
            b04: std,
            b08: std,
            b8a: std,
            b11: std,
            b12: std,
        }
    }

    fn as_array(&self) -> [f64; 6] {
        [self.b02, self.b04, self.b08, self.b8a, self.b11, self.b12]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_parcels: usize,
    pub treated_fraction: f64,
    /// Parcel side in 10 m pixels (even).
    pub parcel_pixels: usize,
    /// Spacing between parcels in 10 m pixels (even).
    pub gap_pixels: usize,
    pub cadence_days: u32,
    pub start_date: NaiveDate,
    pub end_date: NaiveDate,
    pub response: ResponseModel,
    pub noise: NoiseStd,
    /// Every n-th scene is overcast (0 disables).
    pub overcast_every: usize,
    /// Share of scattered cloudy pixels in the other scenes.
    pub cloud_pixel_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_parcels: 40,
            treated_fraction: 0.5,
            parcel_pixels: 6,
            gap_pixels: 2,
            cadence_days: 5,
            start_date: NaiveDate::from_ymd_opt(2023, 3, 1).expect("valid date"),
            end_date: NaiveDate::from_ymd_opt(2023, 11, 30).expect("valid date"),
            response: ResponseModel::default(),
            noise: NoiseStd::uniform(0.01),
            overcast_every: 7,
            cloud_pixel_fraction: 0.02,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n_parcels == 0 {
            return bad("n_parcels must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.treated_fraction) {
            return bad(format!("treated_fraction {} outside [0, 1]", self.treated_fraction));
        }
        if self.parcel_pixels < 2 || !self.parcel_pixels.is_multiple_of(2) || !self.gap_pixels.is_multiple_of(2) {
            return bad("parcel and gap sizes must be even (parcel at least 2 pixels)".into());
        }
        if self.cadence_days == 0 {
            return bad("cadence must be at least one day".into());
        }
        if self.end_date <= self.start_date {
            return bad("end_date must follow start_date".into());
        }
        for (name, m) in [("visible_dip", self.response.visible_dip), ("swir_dip", self.response.swir_dip)] {
            if !(m > 0.0 && m <= 1.0) {
                return bad(format!("{name} {m} outside (0, 1]"));
            }
        }
        if self.noise.as_array().iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("noise standard deviations must be finite and non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.cloud_pixel_fraction) {
            return bad(format!("cloud_pixel_fraction {} outside [0, 1]", self.cloud_pixel_fraction));
        }
        if self.n_treated() > 0 && self.event_dates().is_empty() {
            return bad(format!(
                "date range leaves no scene at least {WINDOW_DAYS} days from both ends for events"
            ));
        }
        Ok(())
    }

    pub fn n_treated(&self) -> usize {
        (self.n_parcels as f64 * self.treated_fraction).round() as usize
    }

    pub fn scene_dates(&self) -> Vec<NaiveDate> {
        let mut out = Vec::new();
        let mut d = self.start_date;
        while d <= self.end_date {
            out.push(d);
            d += Duration::days(i64::from(self.cadence_days));
        }
        out
    }

    /// Scene dates eligible as application dates: full windows fit in range.
    fn event_dates(&self) -> Vec<NaiveDate> {
        let lo = self.start_date + Duration::days(WINDOW_DAYS);
        let hi = self.end_date - Duration::days(WINDOW_DAYS);
        self.scene_dates().into_iter().filter(|d| *d >= lo && *d <= hi).collect()
    }

    fn columns(&self) -> usize {
        (self.n_parcels as f64).sqrt().ceil() as usize
    }

    /// The 10 m target grid.
    pub fn grid(&self) -> GridSpec {
        let cell = self.parcel_pixels + self.gap_pixels;
        let cols = self.columns();
        let rows = self.n_parcels.div_ceil(cols);
        GridSpec::new(
            ORIGIN.0,
            ORIGIN.1,
            TARGET_PIXEL_SIZE,
            cols * cell + self.gap_pixels,
            rows * cell + self.gap_pixels,
        )
    }

    fn parcel_rect(&self, i: usize) -> Polygon {
        let cell = self.parcel_pixels + self.gap_pixels;
        let (r, c) = (i / self.columns(), i % self.columns());
        let ps = TARGET_PIXEL_SIZE;
        let x0 = ORIGIN.0 + ((self.gap_pixels + c * cell) as f64) * ps;
        let y1 = ORIGIN.1 - ((self.gap_pixels + r * cell) as f64) * ps;
        let side = self.parcel_pixels as f64 * ps;
        Polygon::rect(x0, y1 - side, x0 + side, y1)
    }
}

/// In-memory corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: SynthConfig,
    pub parcels: ParcelSet,
    pub events: EventSet,
    /// Noise-free parcel reflectance, band order B02, B04, B08, B8A, B11, B12.
    pub base_reflectance: BTreeMap<String, [f64; 6]>,
    pub scenes: Vec<Scene>,
}

/// Where [`write_corpus`] put things.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPaths {
    pub parcels: PathBuf,
    pub events: PathBuf,
    pub scenes: PathBuf,
    pub manifests: Vec<PathBuf>,
}

/// Parcel owning each pixel centre of `grid`.
fn owners(parcels: &[Parcel], grid: &GridSpec) -> Vec<Option<usize>> {
    let mut out = vec![None; grid.len()];
    for (k, p) in parcels.iter().enumerate() {
        let (x0, y0, x1, y1) = p.geometry.bbox();
        for row in 0..grid.height {
            for col in 0..grid.width {
                let (x, y) = grid.pixel_center(row, col);
                if x > x0 && x < x1 && y > y0 && y < y1 && p.geometry.contains(x, y) {
                    out[grid.index(row, col)] = Some(k);
                }
            }
        }
    }
    out
}

pub fn generate(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let n_treated = config.n_treated();

    let mut rng = rng_for(config.seed, PARCEL_STREAM);
    let mut parcels = Vec::with_capacity(config.n_parcels);
    let mut base = BTreeMap::new();
    let mut bases = Vec::with_capacity(config.n_parcels);
    for i in 0..config.n_parcels {
        let category = CropCategory::ALL[i % 4];
        let id = format!("P{i:04}");
        let b: [f64; 6] = std::array::from_fn(|j| CATEGORY_BASE[category.index()][j] * rng.random_range(0.9..1.1));
        base.insert(id.clone(), b);
        bases.push(b);
        parcels.push(Parcel {
            parcel_id: id,
            geometry: Geometry::from(config.parcel_rect(i)),
            crop_code: format!("C{:02}", category.index() + 1),
            crop_category: category,
            treated: i < n_treated,
        });
    }

    let mut rng = rng_for(config.seed, EVENT_STREAM);
    let candidates = config.event_dates();
    let mut events = Vec::with_capacity(n_treated);
    let mut event_of: Vec<Option<NaiveDate>> = vec![None; config.n_parcels];
    for (i, slot) in event_of.iter_mut().enumerate().take(n_treated) {
        let date = candidates[rng.random_range(0..candidates.len())];
        *slot = Some(date);
        events.push(ApplicationEvent {
            parcel_id: parcels[i].parcel_id.clone(),
            application_date: date,
            quantity: (rng.random_range(20.0..60.0f64) * 10.0).round() / 10.0,
        });
    }

    let grid10 = config.grid();
    let grid20 = GridSpec::new(grid10.origin_x, grid10.origin_y, 20.0, grid10.width / 2, grid10.height / 2);
    let own10 = owners(&parcels, &grid10);
    let own20 = owners(&parcels, &grid20);

    let mut rng = rng_for(config.seed, SCENE_STREAM);
    let noise = config.noise.as_array();
    let mut scenes = Vec::new();
    for (s, date) in config.scene_dates().into_iter().enumerate() {
        let multipliers: Vec<(f64, f64)> = event_of
            .iter()
            .map(|e| {
                e.and_then(|d| config.response.multipliers((date - d).num_days()))
                    .unwrap_or((1.0, 1.0))
            })
            .collect();
        let mut bands = BTreeMap::new();
        for (j, band) in Band::ALL.into_iter().enumerate() {
            let (grid, own) = if band.native_pixel_size() == 10.0 {
                (grid10, &own10)
            } else {
                (grid20, &own20)
            };
            let factor = |k: usize| match j {
                0 | 1 => multipliers[k].0,
                4 | 5 => multipliers[k].1,
                _ => 1.0,
            };
            let dist = Normal::new(0.0, noise[j]).expect("validated std");
            let data = own
                .iter()
                .map(|o| {
                    let clean = match o {
                        Some(k) => bases[*k][j] * factor(*k),
                        None => BACKGROUND[j],
                    };
                    let v = if noise[j] > 0.0 { clean + dist.sample(&mut rng) } else { clean };
                    v.max(0.0)
                })
                .collect();
            bands.insert(band, Raster::from_vec(grid, data));
        }
        let (scl, cloud_percent) = cloud_layer(config, s, &grid20, &own20, &mut rng);
        scenes.push(Scene {
            acquisition_date: date,
            cloud_percent,
            bands,
            scl,
            epsg: Some(SYNTH_EPSG),
        });
    }

    Ok(Corpus {
        config: config.clone(),
        parcels: ParcelSet::new(parcels)?,
        events: EventSet::new(events)?,
        base_reflectance: base,
        scenes,
    })
}

/// SCL at 20 m plus the matching scene cloud percentage.
fn cloud_layer(
    config: &SynthConfig,
    scene_index: usize,
    grid: &GridSpec,
    owners: &[Option<usize>],
    rng: &mut ChaCha8Rng,
) -> (Raster<u8>, f64) {
    let overcast = config.overcast_every > 0 && scene_index % config.overcast_every == config.overcast_every - 1;
    let cloud_rows = (grid.height as f64 * 0.6).ceil() as usize;
    let mut data = Vec::with_capacity(grid.len());
    let mut cloudy = 0usize;
    for row in 0..grid.height {
        for col in 0..grid.width {
            let land = if owners[grid.index(row, col)].is_some() {
                SCL_VEGETATION
            } else {
                SCL_BARE_SOIL
            };
            let code = if overcast && row < cloud_rows {
                SCL_CLOUD_HIGH
            } else if config.cloud_pixel_fraction > 0.0 && rng.random_bool(config.cloud_pixel_fraction) {
                SCL_CLOUD_MEDIUM
            } else {
                land
            };
            cloudy += usize::from(code != land);
            data.push(code);
        }
    }
    let percent = (1000.0 * cloudy as f64 / grid.len() as f64).round() / 10.0;
    (Raster::from_vec(*grid, data), percent)
}

/// Ground-truth labels by parcel id.
pub fn oracle_labels(corpus: &Corpus) -> BTreeMap<String, u8> {
    corpus
        .parcels
        .iter()
        .map(|p| (p.parcel_id.clone(), p.label()))
        .collect()
}

/// EOMI2 of a pixel with base `b04`, `b12` under the given multipliers.
pub fn eomi2_closed_form(b04: f64, b12: f64, visible: f64, swir: f64) -> f64 {
    let (r, s) = (b04 * visible, b12 * swir);
    (s - r) / (s + r)
}

/// Write `parcels.geojson`, `events.csv` and `scenes/<date>/` under `dir`.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<CorpusPaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let parcels = dir.join("parcels.geojson");
    let json = serde_json::to_string_pretty(&parcels_to_geojson(corpus.parcels.as_slice()))
        .map_err(|e| Error::parse("parcels", e))?;
    std::fs::write(&parcels, json).map_err(|e| Error::io(&parcels, e))?;
    let events = dir.join("events.csv");
    write_events(&events, &corpus.events)?;
    let scenes = dir.join("scenes");
    let manifests = corpus
        .scenes
        .iter()
        .map(|s| write_scene(scenes.join(s.acquisition_date.format("%Y-%m-%d").to_string()), s))
        .collect::<Result<Vec<_>>>()?;
    Ok(CorpusPaths {
        parcels,
        events,
        scenes,
        manifests,
    })
}

/// Generate and write in one step.
pub fn generate_corpus(config: &SynthConfig, dir: impl AsRef<Path>) -> Result<(Corpus, CorpusPaths)> {
    let corpus = generate(config)?;
    let paths = write_corpus(&corpus, dir)?;
    Ok((corpus, paths))
}
