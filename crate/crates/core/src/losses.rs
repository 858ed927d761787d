//! Image-space objectives and their adjoints.
//!
//! * `L_d`: mean squared RGB distance, per pyramid level.
//! * `L_s`: weighted squared Frobenius distance between Gram matrices of
//!   extractor features, each Gram divided by its own `n_l m_l` so images of
//!   different sizes compare.
//! * `L_o`: mean hinge `max(0, sum_k M_k - 1)` over element masks.
//! * `L_m`: occupancy-masked distance used by the grid-search baseline.

use crate::compositor::Layer;
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, FeatureMap};
use crate::grad::Adjoint;
use crate::image::{Plane, RgbmImage};
use crate::pyramid::Pyramid;

pub const DEFAULT_STYLE_WEIGHT: f64 = 0.2;
/// Minimum fraction of an element's mask that must overlap the unexplained
/// image region for a match to count.
pub const MIN_OVERLAP_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub adjoint: Adjoint,
}

/// Mean squared RGB distance between two equally sized images.
pub fn mean_l2(a: &RgbmImage, b: &RgbmImage) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let sum: f64 = a
        .pixels()
        .zip(b.pixels())
        .map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / a.pixel_count() as f64)
}

/// `L_d` with equal level weights.
pub fn l2_loss(target: &Pyramid, composite: &Pyramid) -> Result<LossValue> {
    l2_loss_weighted(target, composite, &vec![1.0; composite.len()])
}

pub fn l2_loss_weighted(target: &Pyramid, composite: &Pyramid, weights: &[f64]) -> Result<LossValue> {
    if target.len() != composite.len() || weights.len() != composite.len() {
        return Err(Error::Shape(format!(
            "target has {} levels, composite {}, weights {}",
            target.len(),
            composite.len(),
            weights.len()
        )));
    }
    let mut value = 0.0;
    let mut levels = Vec::with_capacity(composite.len());
    for ((a, i), &w) in target.levels.iter().zip(&composite.levels).zip(weights) {
        let d = mean_l2(a, i)?;
        value += w * d;
        let scale = 2.0 * w / i.pixel_count() as f64;
        let mut adj = RgbmImage::new(i.width(), i.height());
        for ((g, p), q) in adj.data_mut().chunks_exact_mut(4).zip(i.pixels()).zip(a.pixels()) {
            for c in 0..3 {
                g[c] = scale * (p[c] - q[c]);
            }
        }
        levels.push(adj);
    }
    Ok(LossValue {
        value,
        adjoint: Adjoint {
            levels,
            mask_sum: None,
        },
    })
}

/// `F F^T` of the channels x positions matrix, row-major `n x n`.
pub fn gram_matrix(f: &FeatureMap) -> Vec<f64> {
    let n = f.channels;
    let mut g = vec![0.0; n * n];
    for a in 0..n {
        let fa = f.channel(a);
        for b in a..n {
            let v: f64 = fa.iter().zip(f.channel(b)).map(|(x, y)| x * y).sum();
            g[a * n + b] = v;
            g[b * n + a] = v;
        }
    }
    g
}

fn normalized_gram(f: &FeatureMap) -> Vec<f64> {
    let s = 1.0 / (f.channels * f.positions()) as f64;
    gram_matrix(f).into_iter().map(|v| v * s).collect()
}

/// Normalized Gram matrices of an exemplar, computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleTarget {
    pub grams: Vec<Vec<f64>>,
}

impl StyleTarget {
    pub fn new(extractor: &FeatureExtractor, exemplar: &RgbmImage) -> Result<Self> {
        let feats = extractor.extract(exemplar)?;
        Ok(Self {
            grams: feats.iter().map(normalized_gram).collect(),
        })
    }
}

/// `L_s` on the full-resolution composite (pyramid level 1).
pub fn style_loss(
    target: &StyleTarget,
    composite: &Pyramid,
    extractor: &FeatureExtractor,
    weights: &[f64],
) -> Result<LossValue> {
    if weights.len() != extractor.tap_count() || target.grams.len() != extractor.tap_count() {
        return Err(Error::Shape(format!(
            "{} style weights and {} target levels for {} extractor taps",
            weights.len(),
            target.grams.len(),
            extractor.tap_count()
        )));
    }
    let (feats, tape) = extractor.extract_with_tape(composite.level(0))?;
    let mut value = 0.0;
    let mut tap_adj = Vec::with_capacity(feats.len());
    for ((f, ga), &w) in feats.iter().zip(&target.grams).zip(weights) {
        let n = f.channels;
        let gi = normalized_gram(f);
        let d: Vec<f64> = gi.iter().zip(ga).map(|(x, y)| x - y).collect();
        value += w * d.iter().map(|v| v * v).sum::<f64>();
        // dL/dF = 4 w D F / (n m)
        let s = 4.0 * w / (n * f.positions()) as f64;
        let mut adj = FeatureMap::zeros(n, f.width, f.height);
        let m = f.positions();
        for a in 0..n {
            let dst = &mut adj.data[a * m..(a + 1) * m];
            for b in 0..n {
                let coef = s * d[a * n + b];
                if coef == 0.0 {
                    continue;
                }
                for (x, y) in dst.iter_mut().zip(f.channel(b)) {
                    *x += coef * y;
                }
            }
        }
        tap_adj.push(adj);
    }
    let img_adj = extractor.backward(&tape, &tap_adj)?;
    let mut adjoint = Adjoint::zeros(&composite.dims());
    adjoint.levels[0] = img_adj;
    Ok(LossValue { value, adjoint })
}

/// Per-pixel sum of element masks (background excluded).
pub fn sum_masks(masks: &[Plane]) -> Result<Plane> {
    let first = masks.first().ok_or_else(|| Error::Shape("no masks".into()))?;
    let mut out = Plane::new(first.width(), first.height());
    for m in masks {
        if m.dims() != out.dims() {
            return Err(Error::Shape("mask sizes differ".into()));
        }
        for (a, b) in out.data_mut().iter_mut().zip(m.data()) {
            *a += b;
        }
    }
    Ok(out)
}

/// `L_o` given `sum_k M_k`; the adjoint is attached to the mask sum.
pub fn overlap_loss(mask_sum: &Plane, pyramid_dims: &[(usize, usize)]) -> LossValue {
    let n = mask_sum.data().len() as f64;
    let mut adj = Plane::new(mask_sum.width(), mask_sum.height());
    let mut value = 0.0;
    for (g, &s) in adj.data_mut().iter_mut().zip(mask_sum.data()) {
        if s > 1.0 {
            value += s - 1.0;
            *g = 1.0 / n;
        }
    }
    let mut adjoint = Adjoint::zeros(pyramid_dims);
    adjoint.mask_sum = Some(adj);
    LossValue {
        value: value / n,
        adjoint,
    }
}

/// `L_m`: distance over the overlap of the image occupancy (mask channel of
/// `image`) and the candidate's mask. Returns `+inf` when the overlap is
/// below [`MIN_OVERLAP_FRACTION`] of `element_mask_pixels`.
pub fn masked_match_distance(image: &RgbmImage, candidate: &Layer, element_mask_pixels: usize) -> f64 {
    let mut overlap = 0.0;
    let mut sum = 0.0;
    for (x, y, px) in candidate.iter() {
        if x >= image.width() || y >= image.height() {
            continue;
        }
        let a = image.get(x, y);
        let wgt = a[3] * px[3];
        if wgt > 0.0 {
            overlap += wgt;
            sum += wgt * (0..3).map(|c| (px[c] - a[c]).powi(2)).sum::<f64>();
        }
    }
    if overlap <= 0.0 || overlap < MIN_OVERLAP_FRACTION * element_mask_pixels as f64 {
        return f64::INFINITY;
    }
    sum / overlap
}
