//! Multi-resolution pyramid: separable Gaussian blur then 2x decimation.
//!
//! Level `k + 1` is level `k` blurred with `sigma_k = r 2^(k-1)` (in level-`k`
//! pixels, `k` one-based) and then decimated by keeping even rows and
//! columns. Kernels are truncated at `3 sigma` and renormalized; borders use
//! reflect padding. The adjoint functions are exact transposes, including
//! the folding of reflected taps at the borders.

use crate::error::{Error, Result};
use crate::image::RgbmImage;

pub const DEFAULT_LEVELS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Pyramid {
    pub levels: Vec<RgbmImage>,
}

impl Pyramid {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level(&self, k: usize) -> &RgbmImage {
        &self.levels[k]
    }

    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.levels.iter().map(|l| l.dims()).collect()
    }
}

/// Standard deviation applied to zero-based level `k` before decimation.
pub fn level_sigma(radius: f64, k: usize) -> f64 {
    radius * (1u64 << k) as f64
}

/// Sampled Gaussian truncated at `3 sigma`, normalized to sum to one.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    assert!(sigma > 0.0);
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Mirror index about the edge samples (no edge duplication).
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Blur one axis; `transpose` applies the adjoint.
fn blur_axis(src: &RgbmImage, kernel: &[f64], horizontal: bool, transpose: bool) -> RgbmImage {
    let (w, h) = src.dims();
    let radius = (kernel.len() / 2) as isize;
    let mut out = RgbmImage::new(w, h);
    let sd = src.data();
    let od = out.data_mut();
    let (n, lines) = if horizontal { (w, h) } else { (h, w) };
    let index = |line: usize, pos: usize| -> usize {
        if horizontal {
            (line * w + pos) * 4
        } else {
            (pos * w + line) * 4
        }
    };
    for line in 0..lines {
        for pos in 0..n {
            let o = index(line, pos);
            for (t, &kw) in kernel.iter().enumerate() {
                let q = reflect(pos as isize + t as isize - radius, n);
                let s = index(line, q);
                if transpose {
                    for c in 0..4 {
                        od[s + c] += kw * sd[o + c];
                    }
                } else {
                    for c in 0..4 {
                        od[o + c] += kw * sd[s + c];
                    }
                }
            }
        }
    }
    out
}

pub fn blur(img: &RgbmImage, sigma: f64) -> RgbmImage {
    let k = gaussian_kernel(sigma);
    let tmp = blur_axis(img, &k, true, false);
    blur_axis(&tmp, &k, false, false)
}

pub fn blur_adjoint(adj: &RgbmImage, sigma: f64) -> RgbmImage {
    let k = gaussian_kernel(sigma);
    let tmp = blur_axis(adj, &k, false, true);
    blur_axis(&tmp, &k, true, true)
}

/// Keep even rows and columns: `ceil(w/2) x ceil(h/2)`.
pub fn decimate(img: &RgbmImage) -> RgbmImage {
    let (w, h) = img.dims();
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut out = RgbmImage::new(nw, nh);
    for y in 0..nh {
        for x in 0..nw {
            out.set(x, y, img.get(2 * x, 2 * y));
        }
    }
    out
}

/// Zero-stuffing back onto a `dims`-sized grid.
pub fn decimate_adjoint(adj: &RgbmImage, dims: (usize, usize)) -> RgbmImage {
    let mut out = RgbmImage::new(dims.0, dims.1);
    for y in 0..adj.height() {
        for x in 0..adj.width() {
            out.set(2 * x, 2 * y, adj.get(x, y));
        }
    }
    out
}

pub fn build_pyramid(image: &RgbmImage, levels: usize, radius: f64) -> Result<Pyramid> {
    if levels == 0 {
        return Err(Error::invalid("pyramid", "at least one level is required"));
    }
    let mut out = Vec::with_capacity(levels);
    out.push(image.clone());
    for k in 1..levels {
        let prev = &out[k - 1];
        if prev.width() == 1 && prev.height() == 1 {
            return Err(Error::invalid(
                "pyramid",
                format!("level {} would be smaller than 1x1", k + 1),
            ));
        }
        let next = decimate(&blur(prev, level_sigma(radius, k - 1)));
        out.push(next);
    }
    Ok(Pyramid { levels: out })
}

/// Pull per-level adjoints back to the full-resolution image. Levels are
/// summed with the weights already folded into `adjoints`.
pub fn pyramid_adjoint(adjoints: &[RgbmImage], dims: &[(usize, usize)], radius: f64) -> Result<RgbmImage> {
    if adjoints.len() != dims.len() || adjoints.is_empty() {
        return Err(Error::Shape(format!(
            "{} level adjoints for a {}-level pyramid",
            adjoints.len(),
            dims.len()
        )));
    }
    for (k, (a, d)) in adjoints.iter().zip(dims).enumerate() {
        if a.dims() != *d {
            return Err(Error::Shape(format!(
                "level {} adjoint is {}x{}, pyramid level is {}x{}",
                k + 1,
                a.width(),
                a.height(),
                d.0,
                d.1
            )));
        }
    }
    let mut acc = adjoints[adjoints.len() - 1].clone();
    for k in (0..adjoints.len() - 1).rev() {
        let up = blur_adjoint(&decimate_adjoint(&acc, dims[k]), level_sigma(radius, k));
        let mut cur = adjoints[k].clone();
        for (a, b) in cur.data_mut().iter_mut().zip(up.data()) {
            *a += b;
        }
        acc = cur;
    }
    Ok(acc)
}
