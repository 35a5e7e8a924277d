//! North-up, axis-aligned pixel grids shared by masks and rasters.
//!
//! `origin_x`/`origin_y` locate the upper-left corner of pixel (0, 0) in the
//! projected CRS. Rows grow southward, columns grow eastward.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
    pub width: usize,
    pub height: usize,
}

impl GridSpec {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size: f64, width: usize, height: usize) -> Self {
        Self {
            origin_x,
            origin_y,
            pixel_size,
            width,
            height,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    /// Map coordinates of the centre of pixel `(row, col)`.
    #[inline]
    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// `(min_x, min_y, max_x, max_y)` of the grid footprint.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_y - self.height as f64 * self.pixel_size,
            self.origin_x + self.width as f64 * self.pixel_size,
            self.origin_y,
        )
    }

    /// Same footprint resampled to a finer pixel size by an integer factor.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            origin_x: self.origin_x,
            origin_y: self.origin_y,
            pixel_size: self.pixel_size / factor as f64,
            width: self.width * factor,
            height: self.height * factor,
        }
    }

    /// Same CRS footprint and resolution, compared with a tolerance on the
    /// floating-point fields.
    pub fn aligned_with(&self, other: &GridSpec) -> bool {
        const TOL: f64 = 1e-6;
        self.width == other.width
            && self.height == other.height
            && (self.origin_x - other.origin_x).abs() < TOL
            && (self.origin_y - other.origin_y).abs() < TOL
            && (self.pixel_size - other.pixel_size).abs() < TOL
    }
}

/// A single-band raster on a [`GridSpec`], stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub spec: GridSpec,
    pub data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn filled(spec: GridSpec, value: T) -> Self {
        Self {
            spec,
            data: vec![value; spec.len()],
        }
    }

    pub fn from_vec(spec: GridSpec, data: Vec<T>) -> Self {
        assert_eq!(spec.len(), data.len(), "raster data does not match grid");
        Self { spec, data }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[self.spec.index(row, col)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        let i = self.spec.index(row, col);
        self.data[i] = value;
    }

    /// Nearest-neighbour upsampling: each source pixel becomes a
    /// `factor × factor` block.
    pub fn replicate(&self, factor: usize) -> Self {
        if factor == 1 {
            return self.clone();
        }
        let spec = self.spec.refined(factor);
        let mut data = Vec::with_capacity(spec.len());
        for row in 0..spec.height {
            let src_row = row / factor;
            for col in 0..spec.width {
                data.push(self.get(src_row, col / factor));
            }
        }
        Self { spec, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_centers_are_north_up() {
        let g = GridSpec::new(100.0, 200.0, 10.0, 3, 2);
        assert_eq!(g.pixel_center(0, 0), (105.0, 195.0));
        assert_eq!(g.pixel_center(1, 2), (125.0, 185.0));
        assert_eq!(g.bounds(), (100.0, 180.0, 130.0, 200.0));
    }

    #[test]
    fn replicate_blocks() {
        let r = Raster::from_vec(GridSpec::new(0.0, 40.0, 20.0, 2, 2), vec![1, 2, 3, 4]);
        let up = r.replicate(2);
        assert_eq!(up.spec.pixel_size, 10.0);
        assert_eq!(
            up.data,
            vec![1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]
        );
    }
}
