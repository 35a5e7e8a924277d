//! Single-band GeoTIFF I/O on top of [`tiff`].
//!
//! Only axis-aligned, north-up georeferencing is supported: either a
//! `ModelPixelScale` + `ModelTiepoint` pair or a diagonal
//! `ModelTransformation`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult, Limits};
use tiff::encoder::{colortype, TiffEncoder};
use tiff::tags::Tag;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

const MODEL_PIXEL_SCALE: u16 = 33550;
const MODEL_TIEPOINT: u16 = 33922;
const MODEL_TRANSFORMATION: u16 = 34264;
const GEO_KEY_DIRECTORY: u16 = 34735;

const GT_MODEL_TYPE: u16 = 1024;
const GT_RASTER_TYPE: u16 = 1025;
const PROJECTED_CS_TYPE: u16 = 3072;

/// Decoded single-band raster with its georeferencing.
#[derive(Debug, Clone)]
pub struct GeoRaster {
    pub spec: GridSpec,
    pub data: Vec<f64>,
    /// True when the file stores integer samples.
    pub integer_samples: bool,
    /// EPSG code from `ProjectedCSTypeGeoKey`, when present.
    pub epsg: Option<u16>,
}

fn tiff_err(path: &Path, e: impl ToString) -> Error {
    Error::Tiff {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn widen<T: Copy + Into<f64>>(v: Vec<T>) -> Vec<f64> {
    v.into_iter().map(Into::into).collect()
}

pub fn read(path: impl AsRef<Path>) -> Result<GeoRaster> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file))
        .map_err(|e| tiff_err(path, e))?
        .with_limits(Limits::unlimited());
    let (width, height) = dec.dimensions().map_err(|e| tiff_err(path, e))?;

    let (origin_x, origin_y, pixel_size) = georeference(&mut dec).map_err(|m| tiff_err(path, m))?;
    let epsg = dec
        .find_tag(Tag::Unknown(GEO_KEY_DIRECTORY))
        .map_err(|e| tiff_err(path, e))?
        .map(|v| v.into_u16_vec())
        .transpose()
        .map_err(|e| tiff_err(path, e))?
        .and_then(|keys| geo_key(&keys, PROJECTED_CS_TYPE));

    let image = dec.read_image().map_err(|e| tiff_err(path, e))?;
    let (data, integer_samples) = match image {
        DecodingResult::U8(v) => (widen(v), true),
        DecodingResult::U16(v) => (widen(v), true),
        DecodingResult::U32(v) => (widen(v), true),
        DecodingResult::U64(v) => (v.into_iter().map(|x| x as f64).collect(), true),
        DecodingResult::I8(v) => (widen(v), true),
        DecodingResult::I16(v) => (widen(v), true),
        DecodingResult::I32(v) => (widen(v), true),
        DecodingResult::I64(v) => (v.into_iter().map(|x| x as f64).collect(), true),
        DecodingResult::F16(v) => (v.into_iter().map(f64::from).collect(), false),
        DecodingResult::F32(v) => (widen(v), false),
        DecodingResult::F64(v) => (v, false),
    };
    let spec = GridSpec::new(origin_x, origin_y, pixel_size, width as usize, height as usize);
    if data.len() != spec.len() {
        return Err(tiff_err(path, "only single-band rasters are supported"));
    }
    Ok(GeoRaster {
        spec,
        data,
        integer_samples,
        epsg,
    })
}

fn geo_key(dir: &[u16], key: u16) -> Option<u16> {
    // Header is 4 shorts, then (key, location, count, value) entries.
    dir.get(4..)?
        .chunks_exact(4)
        .find(|e| e[0] == key && e[1] == 0)
        .map(|e| e[3])
}

fn georeference<R: std::io::Read + std::io::Seek>(
    dec: &mut Decoder<R>,
) -> std::result::Result<(f64, f64, f64), String> {
    let f64s = |dec: &mut Decoder<R>, tag: u16| -> std::result::Result<Option<Vec<f64>>, String> {
        dec.find_tag(Tag::Unknown(tag))
            .map_err(|e| e.to_string())?
            .map(|v| v.into_f64_vec().map_err(|e| e.to_string()))
            .transpose()
    };

    let (sx, sy, ox, oy) = if let Some(t) = f64s(dec, MODEL_TRANSFORMATION)? {
        if t.len() != 16 {
            return Err("ModelTransformation must have 16 values".into());
        }
        if t[1] != 0.0 || t[4] != 0.0 {
            return Err("rotated rasters are not supported".into());
        }
        (t[0], -t[5], t[3], t[7])
    } else {
        let scale = f64s(dec, MODEL_PIXEL_SCALE)?.ok_or("missing ModelPixelScale")?;
        let tie = f64s(dec, MODEL_TIEPOINT)?.ok_or("missing ModelTiepoint")?;
        if scale.len() < 2 || tie.len() < 6 {
            return Err("malformed georeferencing tags".into());
        }
        let (sx, sy) = (scale[0], scale[1]);
        (sx, sy, tie[3] - tie[0] * sx, tie[4] + tie[1] * sy)
    };
    if !(sx > 0.0 && sy > 0.0) {
        return Err("only north-up rasters are supported".into());
    }
    if (sx - sy).abs() > 1e-9 * sx {
        return Err(format!("non-square pixels {sx} x {sy}"));
    }
    Ok((ox, oy, sx))
}

fn geo_keys(epsg: Option<u16>) -> Vec<u16> {
    let mut keys = vec![GT_MODEL_TYPE, 0, 1, 1, GT_RASTER_TYPE, 0, 1, 1];
    if let Some(code) = epsg {
        keys.extend([PROJECTED_CS_TYPE, 0, 1, code]);
    }
    let n = (keys.len() / 4) as u16;
    let mut dir = vec![1, 1, 0, n];
    dir.extend(keys);
    dir
}

macro_rules! writer {
    ($name:ident, $color:ty, $inner:ty) => {
        pub fn $name(path: impl AsRef<Path>, spec: &GridSpec, data: &[$inner], epsg: Option<u16>) -> Result<()> {
            let path = path.as_ref();
            if data.len() != spec.len() {
                return Err(Error::Dimension {
                    expected: spec.len(),
                    got: data.len(),
                });
            }
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut enc = TiffEncoder::new(BufWriter::new(file)).map_err(|e| tiff_err(path, e))?;
            let mut image = enc
                .new_image::<$color>(spec.width as u32, spec.height as u32)
                .map_err(|e| tiff_err(path, e))?;
            let dir = image.encoder();
            let scale = [spec.pixel_size, spec.pixel_size, 0.0];
            let tie = [0.0, 0.0, 0.0, spec.origin_x, spec.origin_y, 0.0];
            dir.write_tag(Tag::Unknown(MODEL_PIXEL_SCALE), &scale[..])
                .map_err(|e| tiff_err(path, e))?;
            dir.write_tag(Tag::Unknown(MODEL_TIEPOINT), &tie[..])
                .map_err(|e| tiff_err(path, e))?;
            dir.write_tag(Tag::Unknown(GEO_KEY_DIRECTORY), &geo_keys(epsg)[..])
                .map_err(|e| tiff_err(path, e))?;
            image.write_data(data).map_err(|e| tiff_err(path, e))?;
            Ok(())
        }
    };
}

writer!(write_f32, colortype::Gray32Float, f32);
writer!(write_u16, colortype::Gray16, u16);
writer!(write_u8, colortype::Gray8, u8);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_roundtrip_keeps_georeferencing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.tif");
        let spec = GridSpec::new(500000.0, 4400000.0, 20.0, 3, 2);
        let data = [0.1f32, 0.2, 0.3, 0.4, 0.5, 0.6];
        write_f32(&path, &spec, &data, Some(32634)).unwrap();
        let r = read(&path).unwrap();
        assert_eq!(r.spec, spec);
        assert!(!r.integer_samples);
        assert_eq!(r.epsg, Some(32634));
        assert_eq!(r.data, data.iter().map(|v| *v as f64).collect::<Vec<_>>());
    }

    #[test]
    fn integer_samples_are_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scl.tif");
        let spec = GridSpec::new(0.0, 20.0, 10.0, 2, 2);
        write_u8(&path, &spec, &[4, 5, 6, 8], None).unwrap();
        let r = read(&path).unwrap();
        assert!(r.integer_samples);
        assert_eq!(r.epsg, None);
        assert_eq!(r.data, vec![4.0, 5.0, 6.0, 8.0]);
    }

    #[test]
    fn writing_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(0.0, 20.0, 10.0, 2, 2);
        let a = dir.path().join("a.tif");
        let b = dir.path().join("b.tif");
        write_u16(&a, &spec, &[1, 2, 3, 4], Some(2100)).unwrap();
        write_u16(&b, &spec, &[1, 2, 3, 4], Some(2100)).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn wrong_length_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::new(0.0, 20.0, 10.0, 2, 2);
        let r = write_u8(dir.path().join("x.tif"), &spec, &[1, 2, 3], None);
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }
}
