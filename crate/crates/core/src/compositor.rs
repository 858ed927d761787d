//! Forward image formation.
//!
//! Soft path: each element is resampled through the bilinear kernel into a
//! [`Layer`] covering its bounding box (zero elsewhere), the type mixture is
//! the softmax expectation over library patches, RGB is scaled by the leaky
//! hard sigmoid of the element color, and layers are blended with the depth
//! softmax `v_i = e^{z_i} M_i / sum_k e^{z_k} M_k` over a background layer of
//! full coverage.
//!
//! Hard path: nearest-pixel sampling and argmax visibility, ties going to the
//! later element.

use rayon::prelude::*;

use crate::element::{leaky_hard_sigmoid_slope, softmax, DiscreteElement, DiscreteScene, Element, ElementSet};
use crate::image::{Plane, RgbmImage};
use crate::library::{Background, PatchLibrary};

/// One element's contribution on the canvas, stored over its bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub element_index: usize,
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    /// RGBM over the box, row-major.
    pub data: Vec<f64>,
}

impl Layer {
    pub fn empty(element_index: usize) -> Self {
        Self {
            element_index,
            x0: 0,
            y0: 0,
            width: 0,
            height: 0,
            data: Vec::new(),
        }
    }

    /// Value at canvas pixel `(x, y)`; zero outside the box.
    pub fn get(&self, x: usize, y: usize) -> [f64; 4] {
        if x < self.x0 || y < self.y0 || x >= self.x0 + self.width || y >= self.y0 + self.height {
            return [0.0; 4];
        }
        let i = ((y - self.y0) * self.width + (x - self.x0)) * 4;
        [self.data[i], self.data[i + 1], self.data[i + 2], self.data[i + 3]]
    }

    pub fn to_canvas(&self, canvas: (usize, usize)) -> RgbmImage {
        let mut img = RgbmImage::new(canvas.0, canvas.1);
        for y in self.y0..self.y0 + self.height {
            for x in self.x0..self.x0 + self.width {
                img.set(x, y, self.get(x, y));
            }
        }
        img
    }

    /// Iterate `(x, y, rgbm)` over the box.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &[f64])> + '_ {
        self.data.chunks_exact(4).enumerate().map(move |(i, px)| {
            (self.x0 + i % self.width.max(1), self.y0 + i / self.width.max(1), px)
        })
    }
}

/// Canvas pixel box `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }
    pub fn intersects(&self, other: &PixelBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }
}

/// Pixels whose center lies within the rotated rectangle of half extents
/// `half` around `center`, clipped to the canvas.
pub fn rotated_box(center: [f64; 2], orientation: f64, half: [f64; 2], canvas: (usize, usize)) -> PixelBox {
    let (s, c) = orientation.sin_cos();
    let ex = c.abs() * half[0] + s.abs() * half[1];
    let ey = s.abs() * half[0] + c.abs() * half[1];
    let clip = |lo: f64, hi: f64, n: usize| -> (usize, usize) {
        let a = lo.ceil().max(0.0);
        let b = (hi.floor() + 1.0).min(n as f64);
        if b <= a {
            (0, 0)
        } else {
            (a as usize, b as usize)
        }
    };
    let (x0, x1) = clip(center[0] - ex, center[0] + ex, canvas.0);
    let (y0, y1) = clip(center[1] - ey, center[1] + ey, canvas.1);
    PixelBox { x0, y0, x1, y1 }
}

/// Canvas offset to local patch frame: `R(theta)^{-1} (x - c)`.
#[inline]
pub fn to_local(d: [f64; 2], sin: f64, cos: f64) -> [f64; 2] {
    [cos * d[0] + sin * d[1], -sin * d[0] + cos * d[1]]
}

/// Sampled element, with the intermediate values the reverse pass needs
/// when `record` was requested.
#[derive(Clone, Debug)]
pub(crate) struct Footprint {
    pub layer: Layer,
    pub probs: Vec<f64>,
    pub modulation: [f64; 3],
    pub modulation_slope: [f64; 3],
    /// Per pixel, per type: interpolated RGBM (only when recorded).
    pub type_samples: Vec<[f64; 4]>,
    /// Per pixel: type-mixed RGBM before color modulation.
    pub mixed: Vec<[f64; 4]>,
    /// Per pixel: type-mixed spatial derivative in local coordinates.
    pub mixed_grad: Vec<[[f64; 4]; 2]>,
    /// Per pixel: local coordinates.
    pub local: Vec<[f64; 2]>,
}

pub(crate) fn sample_footprint(
    index: usize,
    element: &Element,
    library: &PatchLibrary,
    canvas: (usize, usize),
    record: bool,
) -> Footprint {
    let m = library.len();
    let probs = softmax(&element.type_logits);
    let modulation = element.modulation();
    let modulation_slope = element.color.map(leaky_hard_sigmoid_slope);
    let bx = rotated_box(element.center, element.orientation, library.support_half_extent(), canvas);
    let n = if bx.is_empty() { 0 } else { bx.width() * bx.height() };
    let mut layer = Layer {
        element_index: index,
        x0: bx.x0,
        y0: bx.y0,
        width: if n == 0 { 0 } else { bx.width() },
        height: if n == 0 { 0 } else { bx.height() },
        data: vec![0.0; n * 4],
    };
    let cap = if record { n } else { 0 };
    let mut type_samples = Vec::with_capacity(cap * m);
    let mut mixed = Vec::with_capacity(cap);
    let mut mixed_grad = Vec::with_capacity(cap);
    let mut locals = Vec::with_capacity(cap);
    let (sin, cos) = element.orientation.sin_cos();
    let mut i = 0;
    for y in bx.y0..bx.y0 + layer.height {
        for x in bx.x0..bx.x0 + layer.width {
            let d = [x as f64 - element.center[0], y as f64 - element.center[1]];
            let local = to_local(d, sin, cos);
            let mut value = [0.0; 4];
            let mut grad = [[0.0; 4]; 2];
            for (j, &p) in probs.iter().enumerate() {
                let s = library.sample(j, local);
                for c in 0..4 {
                    value[c] += p * s.value[c];
                    grad[0][c] += p * s.d_local[0][c];
                    grad[1][c] += p * s.d_local[1][c];
                }
                if record {
                    type_samples.push(s.value);
                }
            }
            let out = &mut layer.data[i * 4..i * 4 + 4];
            out[0] = value[0] * modulation[0];
            out[1] = value[1] * modulation[1];
            out[2] = value[2] * modulation[2];
            out[3] = value[3];
            if record {
                mixed.push(value);
                mixed_grad.push(grad);
                locals.push(local);
            }
            i += 1;
        }
    }
    Footprint {
        layer,
        probs,
        modulation,
        modulation_slope,
        type_samples,
        mixed,
        mixed_grad,
        local: locals,
    }
}

/// Layer `J_i` of one element (zero outside the returned box).
pub fn transform_element(element: &Element, index: usize, library: &PatchLibrary, canvas: (usize, usize)) -> Layer {
    sample_footprint(index, element, library, canvas, false).layer
}

pub(crate) fn sample_all(set: &ElementSet, library: &PatchLibrary, record: bool) -> Vec<Footprint> {
    set.elements
        .par_iter()
        .enumerate()
        .filter(|(_, e)| e.alive)
        .map(|(i, e)| sample_footprint(i, e, library, set.canvas, record))
        .collect()
}

/// Background layer of the soft compositor.
#[derive(Clone, Copy, Debug)]
pub enum BackgroundLayer<'a> {
    Color([f64; 3]),
    Image(&'a RgbmImage),
}

impl<'a> BackgroundLayer<'a> {
    pub fn from_library(library: &'a PatchLibrary, color: [f64; 3]) -> Self {
        match library.background() {
            Background::Color(_) => BackgroundLayer::Color(color),
            Background::Image(img) => BackgroundLayer::Image(img),
        }
    }

    #[inline]
    pub fn rgb_at(&self, x: usize, y: usize) -> [f64; 3] {
        match self {
            BackgroundLayer::Color(c) => *c,
            BackgroundLayer::Image(img) => {
                let p = img.get(x % img.width(), y % img.height());
                [p[0], p[1], p[2]]
            }
        }
    }
}

/// Per-pixel state of the soft composite.
#[derive(Clone, Debug)]
pub(crate) struct SoftComposite {
    pub image: RgbmImage,
    /// `max z_k` over layers covering the pixel and the background `z_0`.
    /// Plain depths keep a common depth shift exact.
    pub log_max: Vec<f64>,
    /// `sum_k e^{z_k - log_max} M_k`.
    pub norm: Vec<f64>,
    /// `sum_{k >= 1} M_k` over element layers.
    pub mask_sum: Plane,
}

pub(crate) fn blend_layers(
    layers: &[&Layer],
    depths: &[f64],
    background: BackgroundLayer<'_>,
    background_depth: f64,
    canvas: (usize, usize),
) -> SoftComposite {
    let (w, h) = canvas;
    let mut log_max = vec![background_depth; w * h];
    let mut mask_sum = Plane::new(w, h);
    for (layer, &z) in layers.iter().zip(depths) {
        for (x, y, px) in layer.iter() {
            let m = px[3];
            let p = y * w + x;
            mask_sum.data_mut()[p] += m;
            if m > 0.0 && z > log_max[p] {
                log_max[p] = z;
            }
        }
    }
    let mut norm = vec![0.0; w * h];
    let mut acc = vec![0.0; w * h * 4];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let e0 = (background_depth - log_max[p]).exp();
            let b = background.rgb_at(x, y);
            norm[p] = e0;
            acc[p * 4] = e0 * b[0];
            acc[p * 4 + 1] = e0 * b[1];
            acc[p * 4 + 2] = e0 * b[2];
            acc[p * 4 + 3] = e0;
        }
    }
    for (layer, &z) in layers.iter().zip(depths) {
        for (x, y, px) in layer.iter() {
            let m = px[3];
            if m > 0.0 {
                let p = y * w + x;
                let wk = (z - log_max[p]).exp() * m;
                norm[p] += wk;
                for c in 0..4 {
                    acc[p * 4 + c] += wk * px[c];
                }
            }
        }
    }
    for p in 0..w * h {
        let inv = 1.0 / norm[p];
        for c in 0..4 {
            acc[p * 4 + c] *= inv;
        }
    }
    SoftComposite {
        image: RgbmImage::from_data(w, h, acc).expect("canvas sized"),
        log_max,
        norm,
        mask_sum,
    }
}

/// Soft composite of arbitrary layers over a background of full coverage.
pub fn composite_soft(
    layers: &[Layer],
    depths: &[f64],
    background: BackgroundLayer<'_>,
    background_depth: f64,
    canvas: (usize, usize),
) -> RgbmImage {
    assert_eq!(layers.len(), depths.len(), "one depth per layer");
    let refs: Vec<&Layer> = layers.iter().collect();
    blend_layers(&refs, depths, background, background_depth, canvas).image
}

pub(crate) fn composite_footprints(set: &ElementSet, library: &PatchLibrary, footprints: &[Footprint]) -> SoftComposite {
    let layers: Vec<&Layer> = footprints.iter().map(|f| &f.layer).collect();
    let depths: Vec<f64> = footprints
        .iter()
        .map(|f| set.elements[f.layer.element_index].depth)
        .collect();
    blend_layers(
        &layers,
        &depths,
        BackgroundLayer::from_library(library, set.background_color),
        set.background_depth,
        set.canvas,
    )
}

/// Full-resolution soft composite of an element set.
pub fn render_soft(set: &ElementSet, library: &PatchLibrary) -> RgbmImage {
    let fps = sample_all(set, library, false);
    composite_footprints(set, library, &fps).image
}

/// Soft layers of every alive element.
pub fn soft_layers(set: &ElementSet, library: &PatchLibrary) -> Vec<Layer> {
    sample_all(set, library, false).into_iter().map(|f| f.layer).collect()
}

/// Hard (nearest-pixel) layer of a discrete element. Mask is binary.
pub fn transform_element_hard(e: &DiscreteElement, library: &PatchLibrary, canvas: (usize, usize)) -> Layer {
    let bx = rotated_box(e.center, e.orientation, library.support_half_extent(), canvas);
    if bx.is_empty() {
        return Layer::empty(0);
    }
    let (sin, cos) = e.orientation.sin_cos();
    let nu = e.modulation();
    let mut data = vec![0.0; bx.width() * bx.height() * 4];
    let mut i = 0;
    for y in bx.y0..bx.y1 {
        for x in bx.x0..bx.x1 {
            let local = to_local([x as f64 - e.center[0], y as f64 - e.center[1]], sin, cos);
            if let Some(px) = library.sample_nearest(e.type_index, local) {
                data[i * 4] = px[0] * nu[0];
                data[i * 4 + 1] = px[1] * nu[1];
                data[i * 4 + 2] = px[2] * nu[2];
                data[i * 4 + 3] = 1.0;
            }
            i += 1;
        }
    }
    Layer {
        element_index: 0,
        x0: bx.x0,
        y0: bx.y0,
        width: bx.width(),
        height: bx.height(),
        data,
    }
}

/// Hard composite plus, per pixel, the index of the visible element.
pub fn composite_hard_with_owner(scene: &DiscreteScene, library: &PatchLibrary) -> (RgbmImage, Vec<Option<usize>>) {
    let (w, h) = scene.canvas;
    let mut owner: Vec<Option<usize>> = vec![None; w * h];
    let mut best = vec![f64::NEG_INFINITY; w * h];
    let mut value = vec![[0.0f64; 3]; w * h];
    for (idx, e) in scene.elements.iter().enumerate() {
        let layer = transform_element_hard(e, library, scene.canvas);
        for (x, y, px) in layer.iter() {
            if px[3] > 0.0 {
                let p = y * w + x;
                if owner[p].is_none() || e.depth >= best[p] {
                    owner[p] = Some(idx);
                    best[p] = e.depth;
                    value[p] = [px[0], px[1], px[2]];
                }
            }
        }
    }
    let mut img = RgbmImage::new(w, h);
    let bg = library.background();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let rgb = match owner[p] {
                Some(_) => value[p],
                None => bg.rgb_at(x, y, scene.background_color),
            };
            img.set(x, y, [rgb[0], rgb[1], rgb[2], 1.0]);
        }
    }
    (img, owner)
}

/// Traditional compositor: nearest-pixel sampling, highest depth visible.
pub fn composite_hard(scene: &DiscreteScene, library: &PatchLibrary) -> RgbmImage {
    composite_hard_with_owner(scene, library).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::NEUTRAL_COLOR;
    use crate::library::Background;

    fn ramp_patch(w: usize, h: usize) -> RgbmImage {
        let mut p = RgbmImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                p.set(x, y, [0.1 + 0.05 * x as f64, 0.2 + 0.03 * y as f64, 0.5, 1.0]);
            }
        }
        p
    }

    fn library(patches: Vec<RgbmImage>) -> PatchLibrary {
        PatchLibrary::new(patches, Background::Color([0.0; 3]), (1.0, 1.0)).unwrap()
    }

    #[test]
    fn grid_aligned_placement_pastes_patch() {
        let patch = ramp_patch(5, 5);
        let lib = library(vec![patch.clone()]);
        let e = Element::new(1, [10.0, 7.0]);
        let layer = transform_element(&e, 0, &lib, (20, 16)).to_canvas((20, 16));
        for y in 0..16 {
            for x in 0..20 {
                let expect = if (8..13).contains(&x) && (5..10).contains(&y) {
                    patch.get(x - 8, y - 5)
                } else {
                    [0.0; 4]
                };
                assert_eq!(layer.get(x, y), expect, "({x},{y})");
            }
        }
    }

    #[test]
    fn equal_logits_average_two_types() {
        let a = RgbmImage::filled(3, 3, [1.0, 0.0, 0.0, 1.0]);
        let b = RgbmImage::filled(3, 3, [0.0, 0.0, 1.0, 1.0]);
        let lib = library(vec![a, b]);
        let e = Element::new(2, [4.0, 4.0]);
        let layer = transform_element(&e, 0, &lib, (9, 9));
        let v = layer.get(4, 4);
        assert!((v[0] - 0.5).abs() < 1e-15 && (v[2] - 0.5).abs() < 1e-15 && v[3] == 1.0);
    }

    /// Exact quarter-turn of a patch array: output pixel (u', v') of the
    /// rotated patch takes source pixel (v', w - 1 - u').
    fn rotate_quarter(p: &RgbmImage) -> RgbmImage {
        let (w, h) = p.dims();
        let mut out = RgbmImage::new(h, w);
        for v in 0..w {
            for u in 0..h {
                out.set(u, v, p.get(v, h - 1 - u));
            }
        }
        out
    }

    #[test]
    fn quarter_turn_matches_array_rotation() {
        let patch = ramp_patch(5, 5);
        let lib = library(vec![patch.clone()]);
        let mut e = Element::new(1, [8.0, 8.0]);
        e.orientation = std::f64::consts::FRAC_PI_2;
        let layer = transform_element(&e, 0, &lib, (17, 17));
        let rotated = rotate_quarter(&patch);
        for v in 0..5 {
            for u in 0..5 {
                let got = layer.get(6 + u, 6 + v);
                let want = rotated.get(u, v);
                for c in 0..4 {
                    assert!((got[c] - want[c]).abs() < 1e-12, "({u},{v}) {got:?} {want:?}");
                }
            }
        }
    }

    #[test]
    fn color_modulates_rgb_only() {
        let lib = library(vec![RgbmImage::filled(3, 3, [1.0, 1.0, 1.0, 1.0])]);
        let mut e = Element::new(1, [2.0, 2.0]);
        e.color = [0.5, 0.25, NEUTRAL_COLOR];
        let v = transform_element(&e, 0, &lib, (5, 5)).get(2, 2);
        assert_eq!(v, [0.5, 0.25, 1.0, 1.0]);
    }

    #[test]
    fn no_elements_gives_background() {
        let img = composite_soft(&[], &[], BackgroundLayer::Color([0.2, 0.4, 0.6]), 3.3, (4, 3));
        for px in img.pixels() {
            assert_eq!(px, &[0.2, 0.4, 0.6, 1.0]);
        }
    }

    #[test]
    fn deep_element_saturates_visibility() {
        let lib = library(vec![RgbmImage::filled(3, 3, [1.0, 0.0, 0.0, 1.0])]);
        let e = Element::new(1, [2.0, 2.0]);
        let layer = transform_element(&e, 0, &lib, (5, 5));
        let img = composite_soft(&[layer], &[40.0], BackgroundLayer::Color([0.0, 1.0, 0.0]), 0.0, (5, 5));
        let v = img.get(2, 2);
        assert!((v[0] - 1.0).abs() < 1e-17_f64.max((-40.0f64).exp()));
        assert!(v[1] <= (-40.0f64).exp());
    }

    #[test]
    fn equal_depth_layers_average() {
        let lib = library(vec![
            RgbmImage::filled(3, 3, [1.0, 0.0, 0.0, 1.0]),
            RgbmImage::filled(3, 3, [0.0, 0.0, 1.0, 1.0]),
        ]);
        let mut a = Element::new(2, [2.0, 2.0]);
        a.type_logits = vec![50.0, 0.0];
        let mut b = Element::new(2, [2.0, 2.0]);
        b.type_logits = vec![0.0, 50.0];
        let layers = vec![transform_element(&a, 0, &lib, (5, 5)), transform_element(&b, 1, &lib, (5, 5))];
        let img = composite_soft(&layers, &[60.0, 60.0], BackgroundLayer::Color([0.0, 1.0, 0.0]), 0.0, (5, 5));
        let v = img.get(2, 2);
        assert!((v[0] - 0.5).abs() < 1e-12 && (v[2] - 0.5).abs() < 1e-12 && v[1] < 1e-20);
    }

    fn two_element_scene(za: f64, zb: f64) -> (DiscreteScene, PatchLibrary) {
        let lib = library(vec![
            RgbmImage::filled(5, 5, [1.0, 0.0, 0.0, 1.0]),
            RgbmImage::filled(5, 5, [0.0, 0.0, 1.0, 1.0]),
        ]);
        let scene = DiscreteScene {
            canvas: (16, 16),
            background_color: [0.5, 0.5, 0.5],
            background_depth: 0.0,
            elements: vec![
                DiscreteElement { type_index: 0, center: [6.0, 6.0], orientation: 0.0, depth: za, color: [NEUTRAL_COLOR; 3] },
                DiscreteElement { type_index: 1, center: [8.0, 8.0], orientation: 0.0, depth: zb, color: [NEUTRAL_COLOR; 3] },
            ],
        };
        (scene, lib)
    }

    #[test]
    fn hard_composite_highest_depth_wins() {
        let (scene, lib) = two_element_scene(5.0, 2.0);
        let img = composite_hard(&scene, &lib);
        // overlap region is x, y in 6..=8
        for y in 6..=8 {
            for x in 6..=8 {
                assert_eq!(img.get(x, y), [1.0, 0.0, 0.0, 1.0]);
            }
        }
        assert_eq!(img.get(10, 10), [0.0, 0.0, 1.0, 1.0]);
        assert_eq!(img.get(0, 0), [0.5, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn hard_composite_ties_go_to_later_element() {
        let (scene, lib) = two_element_scene(3.0, 3.0);
        let (img, owner) = composite_hard_with_owner(&scene, &lib);
        assert_eq!(owner[7 * 16 + 7], Some(1));
        assert_eq!(img.get(7, 7), [0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn hard_composite_is_deterministic() {
        let (scene, lib) = two_element_scene(5.0, 2.0);
        let a = composite_hard(&scene, &lib);
        let b = composite_hard(&scene, &lib);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn layer_bounding_box_covers_support() {
        let lib = library(vec![RgbmImage::filled(4, 4, [1.0; 4])]);
        let mut e = Element::new(1, [10.3, 9.6]);
        e.orientation = 0.3;
        let layer = transform_element(&e, 0, &lib, (24, 24));
        // every pixel outside the box must sample to zero
        let (s, c) = e.orientation.sin_cos();
        for y in 0..24 {
            for x in 0..24 {
                let local = to_local([x as f64 - 10.3, y as f64 - 9.6], s, c);
                let v = lib.sample(0, local).value;
                let inside = x >= layer.x0 && x < layer.x0 + layer.width && y >= layer.y0 && y < layer.y0 + layer.height;
                if !inside {
                    assert_eq!(v, [0.0; 4], "({x},{y})");
                }
            }
        }
    }
}
