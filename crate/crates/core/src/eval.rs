//! Comparison of recovered scenes against ground truth.

use std::f64::consts::TAU;

use serde::Serialize;

use crate::compositor::{composite_hard, composite_hard_with_owner, transform_element_hard};
use crate::element::{leaky_hard_sigmoid, DiscreteElement, DiscreteScene};
use crate::error::Result;
use crate::image::{Plane, RgbmImage};
use crate::library::PatchLibrary;
use crate::losses::mean_l2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    pub center: f64,
    /// Radians; `None` skips the orientation check.
    pub orientation: Option<f64>,
    pub l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub expected: usize,
    pub recovered: usize,
    /// Ground-truth elements paired with a distinct recovered element within
    /// the center tolerance.
    pub matched: usize,
    pub type_errors: usize,
    pub orientation_errors: usize,
    /// Orientation errors where the ground-truth element renders identically
    /// at the recovered angle, so the image cannot tell the two apart.
    pub indistinguishable_orientations: usize,
    pub max_center_error: f64,
    pub max_orientation_error: f64,
    pub overlapping_pairs: usize,
    pub depth_order_errors: usize,
    pub l2: f64,
    pub pass: bool,
}

/// Absolute angle difference folded into `[0, pi]`.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

/// Pairs `(i, j)` of scene elements whose hard masks share a pixel.
pub fn overlapping_pairs(scene: &DiscreteScene, library: &PatchLibrary) -> Vec<(usize, usize)> {
    let (w, h) = scene.canvas;
    let masks: Vec<Vec<bool>> = scene
        .elements
        .iter()
        .map(|e| {
            let mut m = vec![false; w * h];
            for (x, y, px) in transform_element_hard(e, library, scene.canvas).iter() {
                if px[3] > 0.0 {
                    m[y * w + x] = true;
                }
            }
            m
        })
        .collect();
    let mut out = Vec::new();
    for i in 0..masks.len() {
        for j in i + 1..masks.len() {
            if masks[i].iter().zip(&masks[j]).any(|(a, b)| *a && *b) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Greedy closest-first one-to-one matching of centers within `max_dist`.
pub fn match_centers(truth: &DiscreteScene, found: &DiscreteScene, max_dist: f64) -> Vec<Option<usize>> {
    let mut pairs = Vec::new();
    for (i, a) in truth.elements.iter().enumerate() {
        for (j, b) in found.elements.iter().enumerate() {
            let d = ((a.center[0] - b.center[0]).powi(2) + (a.center[1] - b.center[1]).powi(2)).sqrt();
            if d <= max_dist {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut truth_match = vec![None; truth.elements.len()];
    let mut used = vec![false; found.elements.len()];
    for (_, i, j) in pairs {
        if truth_match[i].is_none() && !used[j] {
            truth_match[i] = Some(j);
            used[j] = true;
        }
    }
    truth_match
}

pub fn evaluate_recovery(
    truth: &DiscreteScene,
    target: &RgbmImage,
    found: &DiscreteScene,
    library: &PatchLibrary,
    tol: &Tolerances,
) -> Result<RecoveryReport> {
    let matching = match_centers(truth, found, tol.center);
    let mut report = RecoveryReport {
        expected: truth.elements.len(),
        recovered: found.elements.len(),
        matched: matching.iter().flatten().count(),
        type_errors: 0,
        orientation_errors: 0,
        indistinguishable_orientations: 0,
        max_center_error: 0.0,
        max_orientation_error: 0.0,
        overlapping_pairs: 0,
        depth_order_errors: 0,
        l2: 0.0,
        pass: false,
    };
    for (i, m) in matching.iter().enumerate() {
        let Some(j) = *m else { continue };
        let (a, b) = (&truth.elements[i], &found.elements[j]);
        let d = ((a.center[0] - b.center[0]).powi(2) + (a.center[1] - b.center[1]).powi(2)).sqrt();
        report.max_center_error = report.max_center_error.max(d);
        if a.type_index != b.type_index {
            report.type_errors += 1;
        }
        let da = angle_difference(a.orientation, b.orientation);
        report.max_orientation_error = report.max_orientation_error.max(da);
        if let Some(t) = tol.orientation {
            if da > t {
                report.orientation_errors += 1;
                let alone = |e: DiscreteElement| DiscreteScene { elements: vec![e], ..truth.clone() };
                let turned = DiscreteElement { orientation: b.orientation, ..a.clone() };
                if composite_hard(&alone(a.clone()), library) == composite_hard(&alone(turned), library) {
                    report.indistinguishable_orientations += 1;
                }
            }
        }
    }
    let pairs = overlapping_pairs(truth, library);
    report.overlapping_pairs = pairs.len();
    for (i, j) in pairs {
        match (matching[i], matching[j]) {
            (Some(a), Some(b)) => {
                let want = truth.elements[i].depth > truth.elements[j].depth;
                let got = found.elements[a].depth > found.elements[b].depth;
                if want != got {
                    report.depth_order_errors += 1;
                }
            }
            _ => report.depth_order_errors += 1,
        }
    }
    let render = composite_hard(found, library);
    report.l2 = mean_l2(&render, target)?;
    report.pass = report.recovered == report.expected
        && report.matched == report.expected
        && report.type_errors == 0
        && report.orientation_errors == 0
        && report.depth_order_errors == 0
        && report.l2 < tol.l2;
    Ok(report)
}

/// Per-pixel count of hard element masks.
pub fn hard_mask_sum(scene: &DiscreteScene, library: &PatchLibrary) -> Plane {
    let (w, h) = scene.canvas;
    let mut sum = Plane::new(w, h);
    for e in &scene.elements {
        for (x, y, px) in transform_element_hard(e, library, scene.canvas).iter() {
            if px[3] > 0.0 {
                sum.set(x, y, sum.get(x, y) + 1.0);
            }
        }
    }
    sum
}

/// Check that every pixel of the hard render shows either the background
/// or the nearest patch pixel of the visible element under its rigid
/// transform, recomputed independently of the compositor's sampling.
/// Returns the number of mismatching pixels.
pub fn integrity_violations(scene: &DiscreteScene, library: &PatchLibrary) -> usize {
    let (img, owner) = composite_hard_with_owner(scene, library);
    let (w, h) = scene.canvas;
    let (rx, ry) = library.spacing();
    let mut bad = 0;
    for y in 0..h {
        for x in 0..w {
            let got = img.get(x, y);
            let want = match owner[y * w + x] {
                None => library.background().rgb_at(x, y, scene.background_color),
                Some(i) => {
                    let e = &scene.elements[i];
                    let p = library.patch(e.type_index);
                    let (dx, dy) = (x as f64 - e.center[0], y as f64 - e.center[1]);
                    let (s, c) = e.orientation.sin_cos();
                    // inverse rotation, then patch pixel indices
                    let lx = c * dx + s * dy;
                    let ly = -s * dx + c * dy;
                    let u = (lx / rx + (p.width() as f64 - 1.0) / 2.0 + 0.5).floor();
                    let v = (ly / ry + (p.height() as f64 - 1.0) / 2.0 + 0.5).floor();
                    if u < 0.0 || v < 0.0 || u >= p.width() as f64 || v >= p.height() as f64 {
                        bad += 1;
                        continue;
                    }
                    let px = p.get(u as usize, v as usize);
                    if px[3] < 0.5 {
                        bad += 1;
                        continue;
                    }
                    [
                        px[0] * leaky_hard_sigmoid(e.color[0]),
                        px[1] * leaky_hard_sigmoid(e.color[1]),
                        px[2] * leaky_hard_sigmoid(e.color[2]),
                    ]
                }
            };
            if got[0] != want[0] || got[1] != want[1] || got[2] != want[2] {
                bad += 1;
            }
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_scene, SynthSpec};

    fn tol() -> Tolerances {
        Tolerances {
            center: 1.0,
            orientation: Some(2f64.to_radians()),
            l2: 1e-3,
        }
    }

    #[test]
    fn ground_truth_recovers_itself() {
        let s = synth_scene(1, &SynthSpec::default()).unwrap();
        let r = evaluate_recovery(&s.scene, &s.image, &s.scene, &s.library, &tol()).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r.l2, 0.0);
        assert_eq!(integrity_violations(&s.scene, &s.library), 0);
    }

    #[test]
    fn missing_and_swapped_elements_fail() {
        let s = synth_scene(2, &SynthSpec::default()).unwrap();
        let mut fewer = s.scene.clone();
        fewer.elements.pop();
        assert!(!evaluate_recovery(&s.scene, &s.image, &fewer, &s.library, &tol()).unwrap().pass);
        let pairs = overlapping_pairs(&s.scene, &s.library);
        if let Some(&(i, j)) = pairs.first() {
            let mut swapped = s.scene.clone();
            let di = swapped.elements[i].depth;
            swapped.elements[i].depth = swapped.elements[j].depth;
            swapped.elements[j].depth = di;
            let r = evaluate_recovery(&s.scene, &s.image, &swapped, &s.library, &tol()).unwrap();
            assert!(r.depth_order_errors >= 1);
        }
    }

    #[test]
    fn angle_difference_wraps() {
        assert!((angle_difference(0.1, TAU - 0.1) - 0.2).abs() < 1e-12);
        assert_eq!(angle_difference(1.0, 1.0), 0.0);
    }
}
