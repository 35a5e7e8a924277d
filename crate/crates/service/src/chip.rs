//! PNG chips of one parcel on one scene.
//!
//! The chip covers the parcel bounding box padded by 20% of its width and
//! height on every side, clipped to the scene grid. Pixels failing the SCL
//! check, or whose index is undefined, are fully transparent.

use std::str::FromStr;

use eomwatch_core::geodata::Parcel;
use eomwatch_core::indices::{self, BandSample};
use eomwatch_core::raster::{scl_valid_mask, Scene};
use serde::Serialize;

pub const BBOX_PADDING: f64 = 0.2;
/// Percentile clipped at each end of the RGB stretch.
pub const STRETCH_PERCENT: f64 = 2.0;
pub const INDEX_RANGE: (f64, f64) = (-1.0, 1.0);

/// Blue, white, red anchors at -1, 0 and +1.
const DIVERGING: [[f64; 3]; 3] = [[33.0, 102.0, 172.0], [247.0, 247.0, 247.0], [178.0, 24.0, 43.0]];
pub const DIVERGING_NAME: &str = "blue-white-red";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    Rgb,
    Ndvi,
    Eomi2,
}

impl Layer {
    pub fn as_str(self) -> &'static str {
        match self {
            Layer::Rgb => "rgb",
            Layer::Ndvi => "ndvi",
            Layer::Eomi2 => "eomi2",
        }
    }
}

impl FromStr for Layer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rgb" => Ok(Layer::Rgb),
            "ndvi" => Ok(Layer::Ndvi),
            "eomi2" => Ok(Layer::Eomi2),
            other => Err(format!("unknown layer {other:?}; expected rgb, ndvi or eomi2")),
        }
    }
}

/// Rendering metadata returned alongside the image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChipMeta {
    pub layer: Layer,
    /// Value range mapped onto the colour scale. For RGB this is the
    /// per-channel stretch `[lo, hi]` in reflectance, R, G, B order.
    pub value_range: Vec<(f64, f64)>,
    pub colormap: &'static str,
    /// Pixel window `(row0, col0, rows, cols)` on the scene grid.
    pub window: (usize, usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct Chip {
    pub width: usize,
    pub height: usize,
    /// Row-major RGBA8.
    pub rgba: Vec<u8>,
    pub meta: ChipMeta,
}

impl Chip {
    pub fn pixel(&self, row: usize, col: usize) -> [u8; 4] {
        let i = 4 * (row * self.width + col);
        [self.rgba[i], self.rgba[i + 1], self.rgba[i + 2], self.rgba[i + 3]]
    }

    pub fn to_png(&self) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().expect("in-memory PNG header");
            w.write_image_data(&self.rgba).expect("in-memory PNG body");
        }
        out
    }
}

/// Pixel window covering the padded parcel bbox, or `None` when it misses
/// the grid entirely.
pub fn chip_window(scene: &Scene, parcel: &Parcel) -> Option<(usize, usize, usize, usize)> {
    let grid = scene.grid();
    let (x0, y0, x1, y1) = parcel.geometry.bbox();
    let (px, py) = ((x1 - x0) * BBOX_PADDING, (y1 - y0) * BBOX_PADDING);
    let (x0, y0, x1, y1) = (x0 - px, y0 - py, x1 + px, y1 + py);
    let s = grid.pixel_size;
    // Pixel (r, c) spans x in [ox + c s, ox + (c+1) s] and y downward from oy.
    let col0 = ((x0 - grid.origin_x) / s).floor().max(0.0);
    let col1 = ((x1 - grid.origin_x) / s).ceil().min(grid.width as f64);
    let row0 = ((grid.origin_y - y1) / s).floor().max(0.0);
    let row1 = ((grid.origin_y - y0) / s).ceil().min(grid.height as f64);
    if col1 <= col0 || row1 <= row0 {
        return None;
    }
    Some((row0 as usize, col0 as usize, (row1 - row0) as usize, (col1 - col0) as usize))
}

/// Render a chip from a harmonised scene.
pub fn render_chip(scene: &Scene, parcel: &Parcel, layer: Layer) -> Option<Chip> {
    let (row0, col0, rows, cols) = chip_window(scene, parcel)?;
    let grid = scene.grid();
    let valid = scl_valid_mask(scene);
    let samples: Vec<Option<BandSample>> = (row0..row0 + rows)
        .flat_map(|r| (col0..col0 + cols).map(move |c| grid.index(r, c)))
        .map(|i| valid.bits[i].then(|| scene.sample_at(i)))
        .collect();

    let mut rgba = vec![0u8; 4 * rows * cols];
    let meta_range;
    let colormap;
    match layer {
        Layer::Rgb => {
            let channel = |s: &BandSample, k: usize| match k {
                0 => s.b04,
                1 => 0.5 * (s.b02 + s.b04),
                _ => s.b02,
            };
            let ranges: Vec<(f64, f64)> = (0..3)
                .map(|k| {
                    let vals: Vec<f64> = samples.iter().flatten().map(|s| channel(s, k)).collect();
                    stretch_range(vals)
                })
                .collect();
            for (i, s) in samples.iter().enumerate() {
                if let Some(s) = s {
                    for (k, &(lo, hi)) in ranges.iter().enumerate() {
                        rgba[4 * i + k] = stretch(channel(s, k), lo, hi);
                    }
                    rgba[4 * i + 3] = 255;
                }
            }
            meta_range = ranges;
            colormap = "approximate true color (R=B04, G=(B02+B04)/2, B=B02)";
        }
        Layer::Ndvi | Layer::Eomi2 => {
            let f = if layer == Layer::Ndvi { indices::ndvi } else { indices::eomi2 };
            for (i, s) in samples.iter().enumerate() {
                if let Some(v) = s.as_ref().and_then(f) {
                    rgba[4 * i..4 * i + 3].copy_from_slice(&diverging(v));
                    rgba[4 * i + 3] = 255;
                }
            }
            meta_range = vec![INDEX_RANGE];
            colormap = DIVERGING_NAME;
        }
    }
    Some(Chip {
        width: cols,
        height: rows,
        rgba,
        meta: ChipMeta {
            layer,
            value_range: meta_range,
            colormap,
            window: (row0, col0, rows, cols),
        },
    })
}

/// Nearest-rank percentiles at `STRETCH_PERCENT` and `100 - STRETCH_PERCENT`.
fn stretch_range(mut vals: Vec<f64>) -> (f64, f64) {
    if vals.is_empty() {
        return (0.0, 0.0);
    }
    vals.sort_by(f64::total_cmp);
    let at = |p: f64| vals[((p / 100.0) * (vals.len() - 1) as f64).round() as usize];
    (at(STRETCH_PERCENT), at(100.0 - STRETCH_PERCENT))
}

fn stretch(v: f64, lo: f64, hi: f64) -> u8 {
    if hi <= lo {
        return 128;
    }
    (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Colour for an index value on the fixed [-1, 1] scale.
pub fn diverging(v: f64) -> [u8; 3] {
    let t = v.clamp(INDEX_RANGE.0, INDEX_RANGE.1);
    let (a, b, w) = if t < 0.0 { (DIVERGING[1], DIVERGING[0], -t) } else { (DIVERGING[1], DIVERGING[2], t) };
    std::array::from_fn(|k| (a[k] + (b[k] - a[k]) * w).round() as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_maps_to_the_midpoint_colour() {
        assert_eq!(diverging(0.0), [247, 247, 247]);
        assert_eq!(diverging(-1.0), [33, 102, 172]);
        assert_eq!(diverging(1.0), [178, 24, 43]);
        assert_eq!(diverging(5.0), diverging(1.0));
    }

    #[test]
    fn constant_channel_stretches_to_mid_grey() {
        let (lo, hi) = stretch_range(vec![0.1; 10]);
        assert_eq!(stretch(0.1, lo, hi), 128);
    }

    #[test]
    fn stretch_clips_outliers() {
        let mut v: Vec<f64> = (0..100).map(f64::from).collect();
        v[99] = 1e6;
        let (lo, hi) = stretch_range(v);
        assert_eq!((lo, hi), (2.0, 97.0));
        assert_eq!(stretch(1e6, lo, hi), 255);
    }

    #[test]
    fn layer_parsing() {
        assert_eq!("eomi2".parse::<Layer>(), Ok(Layer::Eomi2));
        assert!("xyz".parse::<Layer>().is_err());
    }
}
