//! The patch library: element types, background, and patch sampling.
//!
//! Patch pixel `(u, v)` of a `w x h` patch sits at local coordinate
//! `((u - (w-1)/2) r_x, (v - (h-1)/2) r_y)`, so the local origin is the patch
//! center and `(r_x, r_y)` is the canvas distance between patch samples.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::RgbmImage;
use crate::io;

#[derive(Clone, Debug, PartialEq)]
pub enum Background {
    /// Constant color; the soft compositor optimizes it as `b`.
    Color([f64; 3]),
    /// Fixed background image, tiled over the canvas.
    Image(RgbmImage),
}

impl Background {
    /// Background RGB at canvas pixel `(x, y)`, or `color` for constant backgrounds.
    #[inline]
    pub fn rgb_at(&self, x: usize, y: usize, color: [f64; 3]) -> [f64; 3] {
        match self {
            Background::Color(_) => color,
            Background::Image(img) => {
                let p = img.get(x % img.width(), y % img.height());
                [p[0], p[1], p[2]]
            }
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self, Background::Image(_))
    }
}

/// Value and local-coordinate derivatives of an interpolated patch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sample {
    pub value: [f64; 4],
    /// `d_local[0]` is d/dx, `d_local[1]` is d/dy, per channel.
    pub d_local: [[f64; 4]; 2],
}

#[derive(Clone, Debug)]
pub struct PatchLibrary {
    patches: Vec<RgbmImage>,
    background: Background,
    spacing: (f64, f64),
    extents: Vec<f64>,
    mask_counts: Vec<usize>,
}

impl PatchLibrary {
    pub fn new(patches: Vec<RgbmImage>, background: Background, spacing: (f64, f64)) -> Result<Self> {
        if patches.is_empty() {
            return Err(Error::EmptyLibrary);
        }
        if !(spacing.0 > 0.0 && spacing.1 > 0.0 && spacing.0.is_finite() && spacing.1.is_finite()) {
            return Err(Error::invalid(
                "sample spacing",
                format!("({}, {}) must be positive", spacing.0, spacing.1),
            ));
        }
        for (j, p) in patches.iter().enumerate() {
            if p.pixels().any(|px| px[3] != 0.0 && px[3] != 1.0) {
                return Err(Error::invalid(
                    "patch",
                    format!("patch {} has a non-binary mask", j + 1),
                ));
            }
        }
        let extents = patches.iter().map(|p| mask_extent(p, spacing)).collect();
        let mask_counts = patches
            .iter()
            .map(|p| p.pixels().filter(|px| px[3] > 0.0).count())
            .collect();
        Ok(Self {
            patches,
            background,
            spacing,
            extents,
            mask_counts,
        })
    }

    /// Number of element types `m`.
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn patch(&self, j: usize) -> &RgbmImage {
        &self.patches[j]
    }

    pub fn patches(&self) -> &[RgbmImage] {
        &self.patches
    }

    pub fn background(&self) -> &Background {
        &self.background
    }

    pub fn spacing(&self) -> (f64, f64) {
        self.spacing
    }

    /// Bilinear kernel radius used for the pyramid: `max(r_x, r_y)`.
    pub fn kernel_radius(&self) -> f64 {
        self.spacing.0.max(self.spacing.1)
    }

    /// `l(M)`: larger side of the mask bounding box, in canvas pixels.
    pub fn mask_extent(&self, j: usize) -> f64 {
        self.extents[j]
    }

    pub fn mask_pixel_count(&self, j: usize) -> usize {
        self.mask_counts[j]
    }

    /// Largest patch footprint in canvas pixels (width, height).
    pub fn max_patch_size(&self) -> (f64, f64) {
        let mut w: f64 = 0.0;
        let mut h: f64 = 0.0;
        for p in &self.patches {
            w = w.max(p.width() as f64 * self.spacing.0);
            h = h.max(p.height() as f64 * self.spacing.1);
        }
        (w, h)
    }

    /// Half extents, over all types, of the region where the interpolated
    /// patch or its derivative can be non-zero.
    pub fn support_half_extent(&self) -> [f64; 2] {
        let mut ext = [0.0f64; 2];
        for p in &self.patches {
            ext[0] = ext[0].max((p.width() as f64 + 1.0) * 0.5 * self.spacing.0);
            ext[1] = ext[1].max((p.height() as f64 + 1.0) * 0.5 * self.spacing.1);
        }
        ext
    }

    /// Interpolated sample of patch `j` with its spatial derivative.
    #[inline]
    pub fn sample(&self, j: usize, local: [f64; 2]) -> Sample {
        sample_patch_with_grad(&self.patches[j], self.spacing, local)
    }

    /// Nearest-pixel sample of patch `j`; `None` outside the patch or where
    /// the mask is empty.
    #[inline]
    pub fn sample_nearest(&self, j: usize, local: [f64; 2]) -> Option<[f64; 4]> {
        let p = &self.patches[j];
        let (s, t) = patch_coords(p, self.spacing, local);
        let u = (s + 0.5).floor();
        let v = (t + 0.5).floor();
        if u < 0.0 || v < 0.0 || u >= p.width() as f64 || v >= p.height() as f64 {
            return None;
        }
        let px = p.get(u as usize, v as usize);
        if px[3] >= 0.5 {
            Some(px)
        } else {
            None
        }
    }
}

/// Continuous patch-index coordinates of a local position.
#[inline]
pub fn patch_coords(patch: &RgbmImage, spacing: (f64, f64), local: [f64; 2]) -> (f64, f64) {
    (
        local[0] / spacing.0 + (patch.width() as f64 - 1.0) * 0.5,
        local[1] / spacing.1 + (patch.height() as f64 - 1.0) * 0.5,
    )
}

/// `sum_k H_k kappa(local - x_k)` with the bilinear tent kernel of radius
/// `spacing`. Zero outside the kernel support of every patch pixel.
pub fn sample_patch(patch: &RgbmImage, spacing: (f64, f64), local: [f64; 2]) -> [f64; 4] {
    sample_patch_with_grad(patch, spacing, local).value
}

pub fn sample_patch_with_grad(patch: &RgbmImage, spacing: (f64, f64), local: [f64; 2]) -> Sample {
    let (s, t) = patch_coords(patch, spacing, local);
    let w = patch.width() as isize;
    let h = patch.height() as isize;
    if !(s > -1.0 && t > -1.0 && s < w as f64 && t < h as f64) {
        return Sample::default();
    }
    let s0 = s.floor();
    let t0 = t.floor();
    let fs = s - s0;
    let ft = t - t0;
    let i0 = s0 as isize;
    let j0 = t0 as isize;
    let fetch = |i: isize, j: isize| -> [f64; 4] {
        if i >= 0 && j >= 0 && i < w && j < h {
            patch.get(i as usize, j as usize)
        } else {
            [0.0; 4]
        }
    };
    let p00 = fetch(i0, j0);
    let p10 = fetch(i0 + 1, j0);
    let p01 = fetch(i0, j0 + 1);
    let p11 = fetch(i0 + 1, j0 + 1);
    let mut out = Sample::default();
    let (inv_rx, inv_ry) = (1.0 / spacing.0, 1.0 / spacing.1);
    for c in 0..4 {
        let top = p00[c] + fs * (p10[c] - p00[c]);
        let bottom = p01[c] + fs * (p11[c] - p01[c]);
        out.value[c] = top + ft * (bottom - top);
        let ds = (1.0 - ft) * (p10[c] - p00[c]) + ft * (p11[c] - p01[c]);
        out.d_local[0][c] = ds * inv_rx;
        out.d_local[1][c] = (bottom - top) * inv_ry;
    }
    out
}

fn mask_extent(patch: &RgbmImage, spacing: (f64, f64)) -> f64 {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    let mut any = false;
    for y in 0..patch.height() {
        for x in 0..patch.width() {
            if patch.get(x, y)[3] > 0.0 {
                any = true;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if !any {
        return 0.0;
    }
    let wx = (x1 - x0 + 1) as f64 * spacing.0;
    let wy = (y1 - y0 + 1) as f64 * spacing.1;
    wx.max(wy)
}

/// Where the background comes from when loading a library.
#[derive(Clone, Debug, PartialEq)]
pub enum BackgroundSpec<'a> {
    Color([f64; 3]),
    File(&'a Path),
}

/// Load patches in file order; type `j` is the `j`-th file. Alpha is
/// binarized at 0.5 to form the coverage mask.
pub fn load_patch_library<P: AsRef<Path>>(
    patch_files: &[P],
    background: BackgroundSpec<'_>,
    spacing: (f64, f64),
) -> Result<PatchLibrary> {
    if patch_files.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    let patches = patch_files
        .iter()
        .map(|p| io::load_patch_png(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let background = match background {
        BackgroundSpec::Color(c) => Background::Color(c),
        BackgroundSpec::File(path) => Background::Image(io::load_image_png(path)?),
    };
    PatchLibrary::new(patches, background, spacing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> RgbmImage {
        let mut img = RgbmImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, [x as f64, y as f64, (x * y) as f64, 1.0]);
            }
        }
        img
    }

    /// Direct evaluation of the kernel sum over every patch pixel.
    fn kernel_sum(patch: &RgbmImage, r: (f64, f64), local: [f64; 2]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for v in 0..patch.height() {
            for u in 0..patch.width() {
                let xk = (u as f64 - (patch.width() as f64 - 1.0) / 2.0) * r.0;
                let yk = (v as f64 - (patch.height() as f64 - 1.0) / 2.0) * r.1;
                let k = (r.0 - (local[0] - xk).abs()).max(0.0)
                    * (r.1 - (local[1] - yk).abs()).max(0.0)
                    / (r.0 * r.1);
                let px = patch.get(u, v);
                for c in 0..4 {
                    out[c] += px[c] * k;
                }
            }
        }
        out
    }

    #[test]
    fn sample_at_pixel_center_returns_pixel() {
        let p = ramp(4, 4);
        // pixel (2, 1) sits at local (0.5, -0.5)
        assert_eq!(sample_patch(&p, (1.0, 1.0), [0.5, -0.5]), p.get(2, 1));
    }

    #[test]
    fn sample_midpoint_averages_neighbours() {
        let p = ramp(4, 4);
        let v = sample_patch(&p, (1.0, 1.0), [0.0, -0.5]);
        let a = p.get(1, 1);
        let b = p.get(2, 1);
        for c in 0..4 {
            assert!((v[c] - 0.5 * (a[c] + b[c])).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_far_outside_is_zero() {
        let p = ramp(4, 4);
        assert_eq!(sample_patch(&p, (1.0, 1.0), [-10.0, 0.0]), [0.0; 4]);
    }

    #[test]
    fn bilinear_matches_kernel_sum() {
        let p = ramp(5, 3);
        let mut s = crate::rng::Stream::from_seed(11);
        for &r in &[(1.0, 1.0), (2.0, 0.5), (0.75, 1.5)] {
            for _ in 0..200 {
                let local = [s.range(-5.0, 5.0), s.range(-4.0, 4.0)];
                let a = sample_patch(&p, r, local);
                let b = kernel_sum(&p, r, local);
                for c in 0..4 {
                    assert!((a[c] - b[c]).abs() < 1e-9, "{a:?} vs {b:?} at {local:?}");
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_inside_full_mask() {
        let p = RgbmImage::filled(6, 6, [0.3, 0.6, 0.9, 1.0]);
        let mut s = crate::rng::Stream::from_seed(5);
        for _ in 0..100 {
            let local = [s.range(-2.4, 2.4), s.range(-2.4, 2.4)];
            let v = sample_patch(&p, (1.0, 1.0), local);
            assert!((v[3] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn spatial_gradient_matches_differences() {
        let p = ramp(5, 5);
        let mut s = crate::rng::Stream::from_seed(9);
        for _ in 0..100 {
            let local = [s.range(-2.0, 2.0), s.range(-2.0, 2.0)];
            let g = sample_patch_with_grad(&p, (1.0, 1.0), local);
            let h = 1e-6;
            for axis in 0..2 {
                let mut lp = local;
                let mut lm = local;
                lp[axis] += h;
                lm[axis] -= h;
                let (a, b) = (sample_patch(&p, (1.0, 1.0), lp), sample_patch(&p, (1.0, 1.0), lm));
                for c in 0..4 {
                    let fd = (a[c] - b[c]) / (2.0 * h);
                    assert!((fd - g.d_local[axis][c]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn nearest_sample_respects_mask() {
        let mut p = RgbmImage::filled(3, 3, [1.0, 1.0, 1.0, 1.0]);
        p.set(0, 0, [0.0, 0.0, 0.0, 0.0]);
        let lib = PatchLibrary::new(vec![p], Background::Color([0.0; 3]), (1.0, 1.0)).unwrap();
        assert!(lib.sample_nearest(0, [-1.0, -1.0]).is_none());
        assert_eq!(lib.sample_nearest(0, [0.2, -0.3]), Some([1.0; 4]));
        assert!(lib.sample_nearest(0, [1.6, 0.0]).is_none());
    }

    #[test]
    fn mask_extent_uses_bounding_box() {
        let mut p = RgbmImage::new(16, 16);
        for y in 2..10 {
            for x in 4..8 {
                p.set(x, y, [1.0, 0.0, 0.0, 1.0]);
            }
        }
        let lib = PatchLibrary::new(vec![p], Background::Color([0.0; 3]), (1.0, 1.0)).unwrap();
        assert_eq!(lib.mask_extent(0), 8.0);
        assert_eq!(lib.mask_pixel_count(0), 32);
    }

    #[test]
    fn rejects_bad_spacing_and_empty() {
        assert!(matches!(
            PatchLibrary::new(vec![], Background::Color([0.0; 3]), (1.0, 1.0)),
            Err(Error::EmptyLibrary)
        ));
        let p = RgbmImage::filled(2, 2, [0.0, 0.0, 0.0, 1.0]);
        assert!(PatchLibrary::new(vec![p], Background::Color([0.0; 3]), (0.0, 1.0)).is_err());
    }
}
