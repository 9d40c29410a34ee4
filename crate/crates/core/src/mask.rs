//! Binary 2D masks shared by bed removal, projected lung masks and
//! activation-map refinement.

use crate::error::{Error, Result};

/// A row-major {0,1} image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask2 {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

/// Per-slice subject mask produced by bed removal.
pub type SliceMask = Mask2;

impl Mask2 {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionMismatch(format!("mask dims must be positive, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if pixels.iter().any(|&p| p > 1) {
            return Err(Error::InvalidParameter("mask pixels must be 0 or 1".into()));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(u8::from(f(x, y)));
            }
        }
        Self { width, height, pixels }
    }

    pub(crate) fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.pixels.iter().filter(|&&p| p == 1).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0)
    }

    /// Nearest-neighbour resize; output pixel centers map back onto the
    /// input grid, so binarity is preserved.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DimensionMismatch("target mask dims must be positive".into()));
        }
        let map = |o: usize, n_out: usize, n_in: usize| {
            (((o as f64 + 0.5) * n_in as f64 / n_out as f64).floor() as usize).min(n_in - 1)
        };
        let xs: Vec<usize> = (0..width).map(|x| map(x, width, self.width)).collect();
        Ok(Self::from_fn(width, height, |x, y| {
            self.get(xs[x], map(y, height, self.height)) == 1
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_shape_and_values() {
        assert!(Mask2::new(2, 2, vec![0, 1, 1]).is_err());
        assert!(Mask2::new(2, 1, vec![0, 2]).is_err());
        assert!(Mask2::new(0, 1, vec![]).is_err());
        assert_eq!(Mask2::new(2, 1, vec![0, 1]).unwrap().count_ones(), 1);
    }

    #[test]
    fn nearest_resize_of_identity_size() {
        let m = Mask2::from_fn(5, 3, |x, y| (x + y) % 2 == 0);
        assert_eq!(m.resize_nearest(5, 3).unwrap(), m);
    }
}
