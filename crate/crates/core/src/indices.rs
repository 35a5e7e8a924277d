//! Spectral indices and EOM/vegetation ratios.
//!
//! Every index is computed per pixel; parcel values are the mean of the
//! per-pixel values where defined. Ratios are formed from the aggregated
//! parcel indices. A missing value is `None`, never a silent zero.

use serde::{Deserialize, Serialize};

use crate::stats;

/// EVI denominators smaller than this in magnitude yield a missing value.
pub const EVI_DENOMINATOR_GUARD: f64 = 1e-6;
/// Ratio denominators smaller than this in magnitude yield a missing value.
pub const RATIO_DENOMINATOR_GUARD: f64 = 1e-3;

/// Surface reflectance of the six bands at one pixel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BandSample {
    pub b02: f64,
    pub b04: f64,
    pub b08: f64,
    pub b8a: f64,
    pub b11: f64,
    pub b12: f64,
}

impl BandSample {
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            b02: self.b02 * c,
            b04: self.b04 * c,
            b08: self.b08 * c,
            b8a: self.b8a * c,
            b11: self.b11 * c,
            b12: self.b12 * c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Index {
    Eomi1,
    Eomi2,
    Eomi3,
    Eomi4,
    Nbr2,
    Ndvi,
    Evi,
}

impl Index {
    pub const ALL: [Index; 7] = [
        Index::Eomi1,
        Index::Eomi2,
        Index::Eomi3,
        Index::Eomi4,
        Index::Nbr2,
        Index::Ndvi,
        Index::Evi,
    ];
    /// Numerators of the ratio set.
    pub const EOM: [Index; 5] = [Index::Eomi1, Index::Eomi2, Index::Eomi3, Index::Eomi4, Index::Nbr2];
    /// Denominators of the ratio set.
    pub const VEGETATION: [Index; 2] = [Index::Ndvi, Index::Evi];

    pub fn name(self) -> &'static str {
        match self {
            Index::Eomi1 => "eomi1",
            Index::Eomi2 => "eomi2",
            Index::Eomi3 => "eomi3",
            Index::Eomi4 => "eomi4",
            Index::Nbr2 => "nbr2",
            Index::Ndvi => "ndvi",
            Index::Evi => "evi",
        }
    }

    pub fn compute(self, s: &BandSample) -> Option<f64> {
        match self {
            Index::Eomi1 => eomi1(s),
            Index::Eomi2 => eomi2(s),
            Index::Eomi3 => eomi3(s),
            Index::Eomi4 => eomi4(s),
            Index::Nbr2 => nbr2(s),
            Index::Ndvi => ndvi(s),
            Index::Evi => evi(s),
        }
    }
}

pub const N_INDICES: usize = 7;
pub const N_RATIOS: usize = 10;
/// Indices followed by ratios.
pub const N_SERIES: usize = N_INDICES + N_RATIOS;

/// Names of the 17 series in storage order: the seven indices, then
/// `r_<eom>_<veg>` for each EOM index and each vegetation index.
pub fn series_names() -> Vec<String> {
    let mut names: Vec<String> = Index::ALL.iter().map(|i| i.name().to_string()).collect();
    for e in Index::EOM {
        for v in Index::VEGETATION {
            names.push(format!("r_{}_{}", e.name(), v.name()));
        }
    }
    names
}

fn normalized_difference(a: f64, b: f64) -> Option<f64> {
    let den = a + b;
    if den == 0.0 || !den.is_finite() {
        return None;
    }
    Some((a - b) / den)
}

/// (B11 − B8A) / (B11 + B8A)
pub fn eomi1(s: &BandSample) -> Option<f64> {
    normalized_difference(s.b11, s.b8a)
}

/// (B12 − B04) / (B12 + B04)
pub fn eomi2(s: &BandSample) -> Option<f64> {
    normalized_difference(s.b12, s.b04)
}

/// ((B11 − B8A) + (B12 − B04)) / ((B11 + B8A) + (B12 + B04))
pub fn eomi3(s: &BandSample) -> Option<f64> {
    let num = (s.b11 - s.b8a) + (s.b12 - s.b04);
    let den = (s.b11 + s.b8a) + (s.b12 + s.b04);
    if den == 0.0 || !den.is_finite() {
        return None;
    }
    Some(num / den)
}

/// (B11 − B04) / (B11 + B04)
pub fn eomi4(s: &BandSample) -> Option<f64> {
    normalized_difference(s.b11, s.b04)
}

/// (B11 − B12) / (B11 + B12)
pub fn nbr2(s: &BandSample) -> Option<f64> {
    normalized_difference(s.b11, s.b12)
}

/// (B08 − B04) / (B08 + B04)
pub fn ndvi(s: &BandSample) -> Option<f64> {
    normalized_difference(s.b08, s.b04)
}

/// 2.5 · (B08 − B04) / (B08 + 6·B04 − 7.5·B02 + 1)
pub fn evi(s: &BandSample) -> Option<f64> {
    let den = s.b08 + 6.0 * s.b04 - 7.5 * s.b02 + 1.0;
    if !(den.abs() >= EVI_DENOMINATOR_GUARD) {
        return None;
    }
    Some(2.5 * (s.b08 - s.b04) / den)
}

/// The seven indices plus the ten EOM/vegetation ratios.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IndexVector {
    pub indices: [Option<f64>; N_INDICES],
    pub ratios: [Option<f64>; N_RATIOS],
}

impl IndexVector {
    pub fn missing() -> Self {
        Self::default()
    }

    /// Indices of a single pixel, with ratios derived from them.
    pub fn from_sample(s: &BandSample) -> Self {
        let mut indices = [None; N_INDICES];
        for (slot, idx) in indices.iter_mut().zip(Index::ALL) {
            *slot = idx.compute(s);
        }
        Self::from_indices(indices)
    }

    pub fn from_indices(indices: [Option<f64>; N_INDICES]) -> Self {
        let mut v = Self {
            indices,
            ratios: [None; N_RATIOS],
        };
        v.ratios = eom_veg_ratios(&v);
        v
    }

    pub fn get(&self, idx: Index) -> Option<f64> {
        self.indices[idx as usize]
    }

    pub fn ratio(&self, eom: Index, veg: Index) -> Option<f64> {
        let e = Index::EOM.iter().position(|i| *i == eom)?;
        let v = Index::VEGETATION.iter().position(|i| *i == veg)?;
        self.ratios[e * Index::VEGETATION.len() + v]
    }

    /// All 17 series in storage order.
    pub fn series(&self) -> [Option<f64>; N_SERIES] {
        let mut out = [None; N_SERIES];
        out[..N_INDICES].copy_from_slice(&self.indices);
        out[N_INDICES..].copy_from_slice(&self.ratios);
        out
    }

    pub fn from_series(series: &[Option<f64>; N_SERIES]) -> Self {
        let mut v = Self::default();
        v.indices.copy_from_slice(&series[..N_INDICES]);
        v.ratios.copy_from_slice(&series[N_INDICES..]);
        v
    }
}

/// Each EOM index divided by each vegetation index. Missing when either side
/// is missing or the denominator is below [`RATIO_DENOMINATOR_GUARD`].
pub fn eom_veg_ratios(v: &IndexVector) -> [Option<f64>; N_RATIOS] {
    let mut out = [None; N_RATIOS];
    let mut k = 0;
    for e in Index::EOM {
        for g in Index::VEGETATION {
            out[k] = match (v.get(e), v.get(g)) {
                (Some(num), Some(den)) if den.abs() >= RATIO_DENOMINATOR_GUARD => Some(num / den),
                _ => None,
            };
            k += 1;
        }
    }
    out
}

/// Per-pixel indices averaged over the parcel's valid pixels.
pub fn parcel_index_vector(samples: &[BandSample]) -> IndexVector {
    if samples.is_empty() {
        return IndexVector::missing();
    }
    let mut indices = [None; N_INDICES];
    for (slot, idx) in indices.iter_mut().zip(Index::ALL) {
        *slot = stats::mean(samples.iter().filter_map(|s| idx.compute(s)));
    }
    IndexVector::from_indices(indices)
}
