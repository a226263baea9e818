//! Row-major scalar grids and the pixel-center coordinate convention.
//!
//! Pixel `(i, j)` (column, row) has its center at normalized coordinates
//! `u = (2i + 1) / W - 1`, `v = (2j + 1) / H - 1`, so the image spans
//! `[-1, 1]²` with `v` pointing down.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Grid {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
        }
    }

    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        Ok(Self { width, height, values })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for j in 0..height {
            for i in 0..width {
                values.push(f(i, j));
            }
        }
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.width + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[j * self.width + i] = v;
    }

    pub fn same_shape(&self, other: &Grid) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                want_w: self.width,
                want_h: self.height,
                found_w: other.width,
                found_h: other.height,
            });
        }
        Ok(())
    }

    /// Index of the largest value (first one on ties) as `(i, j)`.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (k, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = k;
            }
        }
        (best % self.width, best / self.width)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn pixel_center(&self, i: usize, j: usize) -> [f64; 2] {
        pixel_center(i, j, self.width, self.height)
    }
}

#[inline]
pub fn pixel_center(i: usize, j: usize, width: usize, height: usize) -> [f64; 2] {
    [
        (2 * i + 1) as f64 / width as f64 - 1.0,
        (2 * j + 1) as f64 / height as f64 - 1.0,
    ]
}

/// Pixel containing the normalized point `p`, clamped to the grid.
pub fn pixel_of(p: [f64; 2], width: usize, height: usize) -> (usize, usize) {
    let to_index = |c: f64, n: usize| -> usize {
        let k = ((c + 1.0) * 0.5 * n as f64).floor();
        k.clamp(0.0, (n - 1) as f64) as usize
    };
    (to_index(p[0], width), to_index(p[1], height))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_grid_has_center_pixel_at_origin() {
        assert_eq!(pixel_center(32, 32, 65, 65), [0.0, 0.0]);
    }

    #[test]
    fn pixel_of_inverts_pixel_center() {
        for (i, j) in [(0, 0), (5, 17), (31, 31)] {
            let p = pixel_center(i, j, 32, 32);
            assert_eq!(pixel_of(p, 32, 32), (i, j));
        }
    }

    #[test]
    fn from_values_rejects_wrong_length() {
        assert!(Grid::from_values(3, 3, vec![0.0; 8]).is_err());
    }
}
