//! Floating-point raster containers.
//!
//! [`RgbmImage`] stores interleaved `(r, g, b, m)` samples in row-major
//! order. `m` is a coverage mask: binary for library patches, fractional for
//! soft layers and composites. [`Plane`] is the single-channel counterpart used
//! for occupancy masks and mask adjoints.

use crate::error::{Error, Result};

pub const CHANNELS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct RgbmImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbmImage {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![0.0; width * height * CHANNELS],
        }
    }

    pub fn filled(width: usize, height: usize, px: [f64; 4]) -> Self {
        let mut img = Self::new(width, height);
        for chunk in img.data.chunks_exact_mut(CHANNELS) {
            chunk.copy_from_slice(&px);
        }
        img
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image", "zero-size image"));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::Shape(format!(
                "{}x{} image needs {} samples, got {}",
                width,
                height,
                width * height * CHANNELS,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 4] {
        let i = (y * self.width + x) * CHANNELS;
        [
            self.data[i],
            self.data[i + 1],
            self.data[i + 2],
            self.data[i + 3],
        ]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, px: [f64; 4]) {
        let i = (y * self.width + x) * CHANNELS;
        self.data[i..i + CHANNELS].copy_from_slice(&px);
    }

    /// Pixels as `[r, g, b, m]` slices in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(CHANNELS)
    }

    pub fn mask_plane(&self) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.pixels().map(|p| p[3]).collect(),
        }
    }

    pub fn mean_rgb(&self) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for p in self.pixels() {
            for c in 0..3 {
                acc[c] += p[c];
            }
        }
        let n = self.pixel_count() as f64;
        acc.map(|v| v / n)
    }

    pub fn same_dims(&self, other: &RgbmImage) -> bool {
        self.dims() == other.dims()
    }

    /// Copy with every mask sample set to one, as for a flat input image.
    pub fn with_full_mask(mut self) -> Self {
        for p in self.data.chunks_exact_mut(CHANNELS) {
            p[3] = 1.0;
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Single-channel raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Self {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} plane needs {} samples, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}
