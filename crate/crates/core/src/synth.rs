//! Seeded synthetic pattern scenes with known ground truth.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::compositor::{composite_hard_with_owner, transform_element_hard};
use crate::element::{DiscreteElement, DiscreteScene, NEUTRAL_COLOR};
use crate::error::{Error, Result};
use crate::image::RgbmImage;
use crate::library::{Background, PatchLibrary};
use crate::rng::{Stream, STREAM_SYNTH};

pub const DEFAULT_BACKGROUND: [f64; 3] = [0.9, 0.88, 0.8];
pub const DEFAULT_PATCH_SIZE: usize = 17;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Disc,
    Square,
    /// Arrow pointing along +x; no rotational symmetry.
    Arrow,
    /// L-shaped block; no rotational symmetry.
    Ell,
}

impl std::str::FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disc" => Ok(Shape::Disc),
            "square" => Ok(Shape::Square),
            "arrow" => Ok(Shape::Arrow),
            "ell" => Ok(Shape::Ell),
            other => Err(Error::invalid("shape", format!("unknown shape {other:?}"))),
        }
    }
}

/// Odd-sized patch of the given shape with a smooth color ramp defined over
/// the whole square (transparent pixels included) and a transparent border.
pub fn builtin_patch(shape: Shape, size: usize) -> RgbmImage {
    let mut p = RgbmImage::new(size, size);
    let c = (size as f64 - 1.0) / 2.0;
    // shapes live in [-1, 1]^2, which leaves a one-pixel transparent margin
    let r = c - 1.0;
    for y in 0..size {
        for x in 0..size {
            let (u, v) = ((x as f64 - c) / r, (y as f64 - c) / r);
            let within = u.abs() <= 1.0 && v.abs() <= 1.0;
            let (rgb, inside) = match shape {
                Shape::Disc => (
                    [0.8 - 0.15 * v, 0.25 + 0.2 * u, 0.2],
                    u * u + v * v <= 1.0 + 1e-9,
                ),
                Shape::Square => ([0.15, 0.35 + 0.2 * u, 0.7 - 0.15 * v], within),
                Shape::Arrow => {
                    let head = u >= 0.0 && v.abs() <= 1.0 - u;
                    let shaft = u < 0.0 && u >= -1.0 && v.abs() <= 0.35;
                    ([0.75 + 0.2 * u, 0.2, 0.3 + 0.2 * v], head || shaft)
                }
                Shape::Ell => {
                    let arm = within && (v >= 0.2 || u <= -0.2);
                    ([0.2 + 0.15 * v, 0.55 + 0.2 * u, 0.25], arm)
                }
            };
            p.set(x, y, [rgb[0], rgb[1], rgb[2], if inside { 1.0 } else { 0.0 }]);
        }
    }
    p
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rotation {
    None,
    /// Uniform in `[0, 2 pi)`.
    Uniform,
    /// Midpoints between samples of an `n`-orientation grid.
    GridMidpoints(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub count: usize,
    pub shapes: Vec<Shape>,
    pub patch_size: usize,
    pub canvas: (usize, usize),
    pub rotation: Rotation,
    pub allow_overlap: bool,
    /// Minimum visible fraction of every element.
    pub min_visible: f64,
    /// Minimum center distance in units of the patch size.
    pub min_distance: f64,
    pub background: [f64; 3],
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 12,
            shapes: vec![Shape::Disc, Shape::Square],
            patch_size: DEFAULT_PATCH_SIZE,
            canvas: (128, 128),
            rotation: Rotation::None,
            allow_overlap: true,
            min_visible: 0.6,
            min_distance: 0.6,
            background: DEFAULT_BACKGROUND,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthScene {
    pub patches: Vec<RgbmImage>,
    pub library: PatchLibrary,
    pub scene: DiscreteScene,
    pub image: RgbmImage,
}

const MAX_ATTEMPTS: usize = 500;
const MAX_PLACEMENT_TRIES: usize = 2000;

fn visible_fractions(scene: &DiscreteScene, library: &PatchLibrary) -> Vec<f64> {
    let (_, owner) = composite_hard_with_owner(scene, library);
    let mut shown = vec![0usize; scene.elements.len()];
    for o in owner.into_iter().flatten() {
        shown[o] += 1;
    }
    scene
        .elements
        .iter()
        .zip(shown)
        .map(|(e, s)| {
            let layer = transform_element_hard(e, library, scene.canvas);
            let total = layer.iter().filter(|(_, _, px)| px[3] > 0.0).count();
            if total == 0 {
                0.0
            } else {
                s as f64 / total as f64
            }
        })
        .collect()
}

/// Generate a scene. Centers are integer pixels with the whole patch inside
/// the canvas; depths are distinct integers.
pub fn synth_scene(seed: u64, spec: &SynthSpec) -> Result<SynthScene> {
    if spec.shapes.is_empty() {
        return Err(Error::EmptyLibrary);
    }
    if spec.patch_size % 2 == 0 {
        return Err(Error::invalid("synth", "patch size must be odd"));
    }
    let patches: Vec<RgbmImage> = spec.shapes.iter().map(|&s| builtin_patch(s, spec.patch_size)).collect();
    let library = PatchLibrary::new(patches.clone(), Background::Color(spec.background), (1.0, 1.0))?;
    let (w, h) = spec.canvas;
    let half = spec.patch_size / 2;
    if w < spec.patch_size || h < spec.patch_size {
        return Err(Error::invalid("synth", "canvas smaller than the patch"));
    }
    let min_dist = spec.min_distance * spec.patch_size as f64;
    let m = spec.shapes.len();
    let mut rng = Stream::named(seed, STREAM_SYNTH);
    for _ in 0..MAX_ATTEMPTS {
        let mut elements: Vec<DiscreteElement> = Vec::with_capacity(spec.count);
        let mut occupied = vec![false; w * h];
        let mut failed = false;
        for k in 0..spec.count {
            let type_index = if k < m { k } else { rng.below(m) };
            let mut placed = None;
            for _ in 0..MAX_PLACEMENT_TRIES {
                let cx = (half + rng.below(w - 2 * half)) as f64;
                let cy = (half + rng.below(h - 2 * half)) as f64;
                if elements
                    .iter()
                    .any(|e| ((e.center[0] - cx).powi(2) + (e.center[1] - cy).powi(2)).sqrt() < min_dist)
                {
                    continue;
                }
                let orientation = match spec.rotation {
                    Rotation::None => 0.0,
                    Rotation::Uniform => rng.range(0.0, TAU),
                    Rotation::GridMidpoints(n) => (rng.below(n) as f64 + 0.5) * TAU / n as f64,
                };
                let e = DiscreteElement {
                    type_index,
                    center: [cx, cy],
                    orientation,
                    depth: 0.0,
                    color: [NEUTRAL_COLOR; 3],
                };
                if !spec.allow_overlap {
                    let layer = transform_element_hard(&e, &library, spec.canvas);
                    if layer.iter().any(|(x, y, px)| px[3] > 0.0 && occupied[y * w + x]) {
                        continue;
                    }
                    for (x, y, px) in layer.iter() {
                        if px[3] > 0.0 {
                            occupied[y * w + x] = true;
                        }
                    }
                }
                placed = Some(e);
                break;
            }
            match placed {
                Some(e) => elements.push(e),
                None => {
                    failed = true;
                    break;
                }
            }
        }
        if failed {
            continue;
        }
        let mut order: Vec<usize> = (0..spec.count).collect();
        rng.shuffle(&mut order);
        for (rank, &i) in order.iter().enumerate() {
            elements[i].depth = 4.0 + rank as f64;
        }
        let scene = DiscreteScene {
            canvas: spec.canvas,
            background_color: spec.background,
            background_depth: 3.3,
            elements,
        };
        if visible_fractions(&scene, &library).iter().any(|&f| f < spec.min_visible) {
            continue;
        }
        let image = crate::compositor::composite_hard(&scene, &library);
        return Ok(SynthScene {
            patches,
            library,
            scene,
            image,
        });
    }
    Err(Error::invalid(
        "synth",
        format!("could not place {} elements after {} attempts", spec.count, MAX_ATTEMPTS),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let a = synth_scene(3, &SynthSpec::default()).unwrap();
        let b = synth_scene(3, &SynthSpec::default()).unwrap();
        assert_eq!(a.scene, b.scene);
        assert_eq!(a.image, b.image);
        assert_eq!(a.scene.elements.len(), 12);
        let c = synth_scene(4, &SynthSpec::default()).unwrap();
        assert_ne!(a.scene, c.scene);
    }

    #[test]
    fn scenes_respect_constraints() {
        let spec = SynthSpec::default();
        let s = synth_scene(1, &spec).unwrap();
        let mut depths: Vec<f64> = s.scene.elements.iter().map(|e| e.depth).collect();
        depths.sort_by(f64::total_cmp);
        depths.dedup();
        assert_eq!(depths.len(), 12);
        assert!(visible_fractions(&s.scene, &s.library).iter().all(|&f| f >= 0.6));
        for e in &s.scene.elements {
            assert_eq!(e.center[0].fract(), 0.0);
            assert!(e.center[0] >= 8.0 && e.center[0] <= 119.0);
        }
    }

    #[test]
    fn non_overlapping_masks_are_disjoint() {
        let spec = SynthSpec {
            count: 8,
            allow_overlap: false,
            rotation: Rotation::Uniform,
            shapes: vec![Shape::Arrow, Shape::Ell],
            ..SynthSpec::default()
        };
        let s = synth_scene(2, &spec).unwrap();
        let mut cover = vec![0u32; 128 * 128];
        for e in &s.scene.elements {
            for (x, y, px) in transform_element_hard(e, &s.library, spec.canvas).iter() {
                if px[3] > 0.0 {
                    cover[y * 128 + x] += 1;
                }
            }
        }
        assert!(cover.iter().all(|&c| c <= 1));
    }

    #[test]
    fn grid_midpoint_orientations() {
        let spec = SynthSpec {
            rotation: Rotation::GridMidpoints(36),
            shapes: vec![Shape::Arrow, Shape::Ell],
            ..SynthSpec::default()
        };
        let s = synth_scene(5, &spec).unwrap();
        for e in &s.scene.elements {
            let steps = e.orientation / (TAU / 36.0);
            assert!((steps.fract() - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn asymmetric_shapes_change_under_quarter_turns() {
        for shape in [Shape::Arrow, Shape::Ell] {
            let p = builtin_patch(shape, 17);
            let n = 17;
            let rot = |x: usize, y: usize| p.get(y, n - 1 - x)[3];
            let differs = (0..n).any(|y| (0..n).any(|x| rot(x, y) != p.get(x, y)[3]));
            assert!(differs);
        }
    }
}
