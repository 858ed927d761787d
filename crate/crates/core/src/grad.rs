//! Reverse-mode derivatives of the soft composite.
//!
//! [`forward_with_tape`] renders the pyramid and keeps the per-pixel type
//! samples, mixed spatial derivatives and visibility normalizers. Given
//! adjoints of a scalar loss with respect to each pyramid level (and
//! optionally with respect to the per-pixel sum of element masks),
//! [`backward`] returns the exact gradient for every element parameter.

use rayon::prelude::*;

use crate::compositor::{composite_footprints, sample_all, Footprint, SoftComposite};
use crate::element::ElementSet;
use crate::error::{Error, Result};
use crate::image::{Plane, RgbmImage};
use crate::library::{Background, PatchLibrary};
use crate::pyramid::{build_pyramid, pyramid_adjoint, Pyramid};

/// Gradient of one element.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ElementGradient {
    pub d_type_logits: Vec<f64>,
    pub d_center: [f64; 2],
    pub d_orientation: f64,
    pub d_depth: f64,
    pub d_color: [f64; 3],
}

impl ElementGradient {
    pub fn zeros(types: usize) -> Self {
        Self {
            d_type_logits: vec![0.0; types],
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGradients {
    pub elements: Vec<ElementGradient>,
    pub d_background_color: [f64; 3],
    pub d_background_depth: f64,
}

/// Parameter class, as used for learning rates and gradient reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamClass {
    TypeLogit,
    Center,
    Orientation,
    Depth,
    Color,
    BackgroundColor,
    BackgroundDepth,
}

impl ParamClass {
    pub const ALL: [ParamClass; 7] = [
        ParamClass::TypeLogit,
        ParamClass::Center,
        ParamClass::Orientation,
        ParamClass::Depth,
        ParamClass::Color,
        ParamClass::BackgroundColor,
        ParamClass::BackgroundDepth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamClass::TypeLogit => "type_logits",
            ParamClass::Center => "center",
            ParamClass::Orientation => "orientation",
            ParamClass::Depth => "depth",
            ParamClass::Color => "color",
            ParamClass::BackgroundColor => "background_color",
            ParamClass::BackgroundDepth => "background_depth",
        }
    }
}

/// Address of one scalar parameter in an [`ElementSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId {
    pub class: ParamClass,
    /// Element index; `None` for background parameters.
    pub element: Option<usize>,
    /// Component within the class (logit index, axis or channel).
    pub component: usize,
}

impl ParamGradients {
    pub fn zeros_like(set: &ElementSet) -> Self {
        let types = set.elements.first().map_or(0, |e| e.type_logits.len());
        Self {
            elements: set
                .elements
                .iter()
                .map(|e| ElementGradient::zeros(e.type_logits.len().max(types)))
                .collect(),
            d_background_color: [0.0; 3],
            d_background_depth: 0.0,
        }
    }

    pub fn get(&self, id: ParamId) -> f64 {
        match (id.class, id.element) {
            (ParamClass::TypeLogit, Some(i)) => self.elements[i].d_type_logits[id.component],
            (ParamClass::Center, Some(i)) => self.elements[i].d_center[id.component],
            (ParamClass::Orientation, Some(i)) => self.elements[i].d_orientation,
            (ParamClass::Depth, Some(i)) => self.elements[i].d_depth,
            (ParamClass::Color, Some(i)) => self.elements[i].d_color[id.component],
            (ParamClass::BackgroundColor, _) => self.d_background_color[id.component],
            (ParamClass::BackgroundDepth, _) => self.d_background_depth,
            _ => panic!("element parameter without element index"),
        }
    }

    pub fn set(&mut self, id: ParamId, v: f64) {
        let slot = match (id.class, id.element) {
            (ParamClass::TypeLogit, Some(i)) => &mut self.elements[i].d_type_logits[id.component],
            (ParamClass::Center, Some(i)) => &mut self.elements[i].d_center[id.component],
            (ParamClass::Orientation, Some(i)) => &mut self.elements[i].d_orientation,
            (ParamClass::Depth, Some(i)) => &mut self.elements[i].d_depth,
            (ParamClass::Color, Some(i)) => &mut self.elements[i].d_color[id.component],
            (ParamClass::BackgroundColor, _) => &mut self.d_background_color[id.component],
            (ParamClass::BackgroundDepth, _) => &mut self.d_background_depth,
            _ => panic!("element parameter without element index"),
        };
        *slot = v;
    }

    /// `self += w * other`.
    pub fn add_scaled(&mut self, other: &ParamGradients, w: f64) {
        for (a, b) in self.elements.iter_mut().zip(&other.elements) {
            for (x, y) in a.d_type_logits.iter_mut().zip(&b.d_type_logits) {
                *x += w * y;
            }
            for k in 0..2 {
                a.d_center[k] += w * b.d_center[k];
            }
            a.d_orientation += w * b.d_orientation;
            a.d_depth += w * b.d_depth;
            for k in 0..3 {
                a.d_color[k] += w * b.d_color[k];
            }
        }
        for k in 0..3 {
            self.d_background_color[k] += w * other.d_background_color[k];
        }
        self.d_background_depth += w * other.d_background_depth;
    }

    /// First non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<(ParamClass, Option<usize>)> {
        for (i, e) in self.elements.iter().enumerate() {
            if e.d_type_logits.iter().any(|v| !v.is_finite()) {
                return Some((ParamClass::TypeLogit, Some(i)));
            }
            if e.d_center.iter().any(|v| !v.is_finite()) {
                return Some((ParamClass::Center, Some(i)));
            }
            if !e.d_orientation.is_finite() {
                return Some((ParamClass::Orientation, Some(i)));
            }
            if !e.d_depth.is_finite() {
                return Some((ParamClass::Depth, Some(i)));
            }
            if e.d_color.iter().any(|v| !v.is_finite()) {
                return Some((ParamClass::Color, Some(i)));
            }
        }
        if self.d_background_color.iter().any(|v| !v.is_finite()) {
            return Some((ParamClass::BackgroundColor, None));
        }
        if !self.d_background_depth.is_finite() {
            return Some((ParamClass::BackgroundDepth, None));
        }
        None
    }
}

/// Every scalar parameter of the alive elements and the background.
pub fn parameter_ids(set: &ElementSet) -> Vec<ParamId> {
    let mut ids = Vec::new();
    for (i, e) in set.elements.iter().enumerate() {
        if !e.alive {
            continue;
        }
        let el = Some(i);
        for k in 0..e.type_logits.len() {
            ids.push(ParamId { class: ParamClass::TypeLogit, element: el, component: k });
        }
        for k in 0..2 {
            ids.push(ParamId { class: ParamClass::Center, element: el, component: k });
        }
        ids.push(ParamId { class: ParamClass::Orientation, element: el, component: 0 });
        ids.push(ParamId { class: ParamClass::Depth, element: el, component: 0 });
        for k in 0..3 {
            ids.push(ParamId { class: ParamClass::Color, element: el, component: k });
        }
    }
    for k in 0..3 {
        ids.push(ParamId { class: ParamClass::BackgroundColor, element: None, component: k });
    }
    ids.push(ParamId { class: ParamClass::BackgroundDepth, element: None, component: 0 });
    ids
}

/// Mutable access to a scalar parameter of an element set.
pub fn parameter_mut(set: &mut ElementSet, id: ParamId) -> &mut f64 {
    match (id.class, id.element) {
        (ParamClass::TypeLogit, Some(i)) => &mut set.elements[i].type_logits[id.component],
        (ParamClass::Center, Some(i)) => &mut set.elements[i].center[id.component],
        (ParamClass::Orientation, Some(i)) => &mut set.elements[i].orientation,
        (ParamClass::Depth, Some(i)) => &mut set.elements[i].depth,
        (ParamClass::Color, Some(i)) => &mut set.elements[i].color[id.component],
        (ParamClass::BackgroundColor, _) => &mut set.background_color[id.component],
        (ParamClass::BackgroundDepth, _) => &mut set.background_depth,
        _ => panic!("element parameter without element index"),
    }
}

/// Loss adjoint: one image per pyramid level, plus an optional adjoint with
/// respect to `sum_k M_k` over element layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjoint {
    pub levels: Vec<RgbmImage>,
    pub mask_sum: Option<Plane>,
}

impl Adjoint {
    pub fn zeros(dims: &[(usize, usize)]) -> Self {
        Self {
            levels: dims.iter().map(|&(w, h)| RgbmImage::new(w, h)).collect(),
            mask_sum: None,
        }
    }

    /// `self += w * other`.
    pub fn add_scaled(&mut self, other: &Adjoint, w: f64) -> Result<()> {
        if self.levels.len() != other.levels.len() {
            return Err(Error::Shape(format!(
                "adding a {}-level adjoint to a {}-level adjoint",
                other.levels.len(),
                self.levels.len()
            )));
        }
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            if !a.same_dims(b) {
                return Err(Error::Shape("adjoint level sizes differ".into()));
            }
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += w * y;
            }
        }
        if let Some(theirs) = &other.mask_sum {
            let ours = self
                .mask_sum
                .get_or_insert_with(|| Plane::new(theirs.width(), theirs.height()));
            if ours.dims() != theirs.dims() {
                return Err(Error::Shape("mask adjoint sizes differ".into()));
            }
            for (x, y) in ours.data_mut().iter_mut().zip(theirs.data()) {
                *x += w * y;
            }
        }
        Ok(())
    }
}

/// Forward state of one soft composite.
#[derive(Clone, Debug)]
pub struct GradientTape {
    set: ElementSet,
    background: Option<RgbmImage>,
    radius: f64,
    pyramid_dims: Vec<(usize, usize)>,
    footprints: Vec<Footprint>,
    composite: SoftComposite,
}

impl GradientTape {
    pub fn set(&self) -> &ElementSet {
        &self.set
    }

    pub fn pyramid_dims(&self) -> &[(usize, usize)] {
        &self.pyramid_dims
    }

    /// Full-resolution composite.
    pub fn image(&self) -> &RgbmImage {
        &self.composite.image
    }

    /// `sum_k M_k` over element layers (background excluded).
    pub fn mask_sum(&self) -> &Plane {
        &self.composite.mask_sum
    }
}

/// Render the pyramid of `set` and record what [`backward`] needs.
pub fn forward_with_tape(set: &ElementSet, library: &PatchLibrary, levels: usize) -> Result<(Pyramid, GradientTape)> {
    let footprints = sample_all(set, library, true);
    let composite = composite_footprints(set, library, &footprints);
    let radius = library.kernel_radius();
    let pyramid = build_pyramid(&composite.image, levels, radius)?;
    let background = match library.background() {
        Background::Color(_) => None,
        Background::Image(img) => Some(img.clone()),
    };
    let tape = GradientTape {
        set: set.clone(),
        background,
        radius,
        pyramid_dims: pyramid.dims(),
        footprints,
        composite,
    };
    Ok((pyramid, tape))
}

/// Gradient of `sum_k <adjoint_k, I_k> + <mask_adjoint, sum_i M_i>`.
pub fn backward(tape: &GradientTape, adjoint: &Adjoint) -> Result<ParamGradients> {
    let g = pyramid_adjoint(&adjoint.levels, &tape.pyramid_dims, tape.radius)?;
    let (w, h) = tape.set.canvas;
    if let Some(ms) = &adjoint.mask_sum {
        if ms.dims() != (w, h) {
            return Err(Error::Shape(format!(
                "mask adjoint is {}x{}, canvas is {}x{}",
                ms.width(),
                ms.height(),
                w,
                h
            )));
        }
    }
    let gd = g.data();
    let img = tape.composite.image.data();
    let abar: Vec<f64> = (0..w * h)
        .map(|p| (0..4).map(|c| gd[p * 4 + c] * img[p * 4 + c]).sum())
        .collect();

    let mut out = ParamGradients::zeros_like(&tape.set);

    let z0 = tape.set.background_depth;
    let mut dz0 = 0.0;
    let mut db = [0.0; 3];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let v0 = (z0 - tape.composite.log_max[p]).exp() / tape.composite.norm[p];
            let rgb = match &tape.background {
                None => tape.set.background_color,
                Some(bg) => {
                    let px = bg.get(x % bg.width(), y % bg.height());
                    [px[0], px[1], px[2]]
                }
            };
            let gp = &gd[p * 4..p * 4 + 4];
            let a0 = gp[0] * rgb[0] + gp[1] * rgb[1] + gp[2] * rgb[2] + gp[3];
            dz0 += v0 * (a0 - abar[p]);
            for c in 0..3 {
                db[c] += gp[c] * v0;
            }
        }
    }
    out.d_background_depth = dz0;
    if tape.background.is_none() {
        out.d_background_color = db;
    }

    let mask_adj = adjoint.mask_sum.as_ref().map(|m| m.data());
    let per_element: Vec<(usize, ElementGradient)> = tape
        .footprints
        .par_iter()
        .map(|fp| {
            let idx = fp.layer.element_index;
            (idx, element_backward(fp, &tape.set, &tape.composite, gd, &abar, mask_adj))
        })
        .collect();
    for (idx, eg) in per_element {
        out.elements[idx] = eg;
    }
    Ok(out)
}

fn element_backward(
    fp: &Footprint,
    set: &ElementSet,
    comp: &SoftComposite,
    g: &[f64],
    abar: &[f64],
    mask_adj: Option<&[f64]>,
) -> ElementGradient {
    let element = &set.elements[fp.layer.element_index];
    let m = fp.probs.len();
    let w = set.canvas.0;
    let z = element.depth;
    let (sin, cos) = element.orientation.sin_cos();
    let mut dp = vec![0.0; m];
    let mut dz = 0.0;
    let mut dcolor = [0.0; 3];
    let mut dlocal_c = [0.0; 2];
    let mut dtheta = 0.0;
    for (i, (x, y, px)) in fp.layer.iter().enumerate() {
        let p = y * w + x;
        let gp = &g[p * 4..p * 4 + 4];
        let ms = mask_adj.map_or(0.0, |a| a[p]);
        if gp.iter().all(|&v| v == 0.0) && ms == 0.0 {
            continue;
        }
        let e = (z - comp.log_max[p]).exp() / comp.norm[p];
        let mask = px[3];
        let v = e * mask;
        let a = gp[0] * px[0] + gp[1] * px[1] + gp[2] * px[2] + gp[3] * px[3];
        let diff = a - abar[p];
        dz += v * diff;
        let mixed = fp.mixed[i];
        let mut dmix = [0.0; 4];
        for c in 0..3 {
            let dj = gp[c] * v;
            dcolor[c] += dj * mixed[c] * fp.modulation_slope[c];
            dmix[c] = dj * fp.modulation[c];
        }
        dmix[3] = gp[3] * v + diff * e + ms;
        let samples = &fp.type_samples[i * m..(i + 1) * m];
        for (j, s) in samples.iter().enumerate() {
            dp[j] += dmix[0] * s[0] + dmix[1] * s[1] + dmix[2] * s[2] + dmix[3] * s[3];
        }
        let mg = &fp.mixed_grad[i];
        let dl = [
            (0..4).map(|c| dmix[c] * mg[0][c]).sum::<f64>(),
            (0..4).map(|c| dmix[c] * mg[1][c]).sum::<f64>(),
        ];
        dlocal_c[0] += dl[0];
        dlocal_c[1] += dl[1];
        let local = fp.local[i];
        dtheta += dl[0] * local[1] - dl[1] * local[0];
    }
    // local = R(-theta)(x - c), so d/dc = -R(theta) applied to the local adjoint
    let d_center = [
        -(cos * dlocal_c[0] - sin * dlocal_c[1]),
        -(sin * dlocal_c[0] + cos * dlocal_c[1]),
    ];
    let pdp: f64 = fp.probs.iter().zip(&dp).map(|(p, d)| p * d).sum();
    let d_type_logits = fp.probs.iter().zip(&dp).map(|(p, d)| p * (d - pdp)).collect();
    ElementGradient {
        d_type_logits,
        d_center,
        d_orientation: dtheta,
        d_depth: dz,
        d_color: dcolor,
    }
}

/// Per-class central-difference steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdSteps {
    pub type_logits: f64,
    pub center: f64,
    pub orientation: f64,
    pub depth: f64,
    pub color: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        Self {
            type_logits: 1e-4,
            center: 1e-3,
            orientation: 1e-3,
            depth: 1e-4,
            color: 1e-4,
        }
    }
}

impl FdSteps {
    pub fn uniform(eps: f64) -> Self {
        Self { type_logits: eps, center: eps, orientation: eps, depth: eps, color: eps }
    }

    pub fn for_class(&self, class: ParamClass) -> f64 {
        match class {
            ParamClass::TypeLogit => self.type_logits,
            ParamClass::Center => self.center,
            ParamClass::Orientation => self.orientation,
            ParamClass::Depth | ParamClass::BackgroundDepth => self.depth,
            ParamClass::Color | ParamClass::BackgroundColor => self.color,
        }
    }
}

/// Central difference for a single parameter.
pub fn finite_diff_one<F: Fn(&ElementSet) -> f64>(loss: &F, set: &ElementSet, id: ParamId, eps: f64) -> f64 {
    let mut s = set.clone();
    let base = *parameter_mut(&mut s, id);
    *parameter_mut(&mut s, id) = base + eps;
    let fp = loss(&s);
    *parameter_mut(&mut s, id) = base - eps;
    let fm = loss(&s);
    (fp - fm) / (2.0 * eps)
}

/// Central differences `(f(p + e) - f(p - e)) / 2e` for every parameter.
pub fn finite_diff_gradients<F: Fn(&ElementSet) -> f64>(loss: &F, set: &ElementSet, eps: &FdSteps) -> ParamGradients {
    let mut out = ParamGradients::zeros_like(set);
    for id in parameter_ids(set) {
        out.set(id, finite_diff_one(loss, set, id, eps.for_class(id.class)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::Element;
    use crate::library::Background;
    use crate::rng::Stream;

    fn blob(w: usize, h: usize, seed: u64) -> RgbmImage {
        let mut s = Stream::from_seed(seed);
        let mut p = RgbmImage::new(w, h);
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        for y in 0..h {
            for x in 0..w {
                let r = ((x as f64 - cx) / cx).powi(2) + ((y as f64 - cy) / cy).powi(2);
                let m = if r <= 1.0 { 1.0 } else { 0.0 };
                p.set(x, y, [s.uniform(), s.uniform(), s.uniform(), m]);
            }
        }
        p
    }

    fn scene(seed: u64) -> (ElementSet, PatchLibrary) {
        let lib = PatchLibrary::new(
            vec![blob(7, 7, seed), blob(5, 9, seed + 1)],
            Background::Color([0.0; 3]),
            (1.0, 1.0),
        )
        .unwrap();
        let mut s = Stream::from_seed(seed);
        let mut set = ElementSet::new((24, 20), [0.4, 0.5, 0.6]);
        for _ in 0..3 {
            let mut e = Element::new(2, [s.range(5.0, 19.0), s.range(5.0, 15.0)]);
            e.type_logits = vec![s.range(-1.0, 1.0), s.range(-1.0, 1.0)];
            e.orientation = s.range(-3.0, 3.0);
            e.depth = s.range(3.0, 6.0);
            e.color = [s.range(0.1, 0.9), s.range(0.1, 0.9), s.range(0.1, 0.9)];
            set.elements.push(e);
        }
        set.background_depth = 3.5;
        (set, lib)
    }

    fn weights(dims: &[(usize, usize)], seed: u64) -> Adjoint {
        let mut s = Stream::from_seed(seed);
        let mut a = Adjoint::zeros(dims);
        for l in &mut a.levels {
            for v in l.data_mut() {
                *v = s.range(-1.0, 1.0);
            }
        }
        a
    }

    fn linear_loss(set: &ElementSet, lib: &PatchLibrary, adj: &Adjoint) -> f64 {
        let (p, _) = forward_with_tape(set, lib, adj.levels.len()).unwrap();
        p.levels
            .iter()
            .zip(&adj.levels)
            .map(|(l, a)| l.data().iter().zip(a.data()).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-7 || (a - b).abs() / a.abs().max(b.abs()) < 1e-3
    }

    #[test]
    fn level_zero_is_the_soft_composite() {
        let (set, lib) = scene(1);
        let (p, tape) = forward_with_tape(&set, &lib, 3).unwrap();
        assert_eq!(p.level(0), &crate::compositor::render_soft(&set, &lib));
        assert_eq!(p.level(0), tape.image());
        let (p2, _) = forward_with_tape(&set, &lib, 3).unwrap();
        assert_eq!(p, p2);
    }

    #[test]
    fn zero_adjoint_gives_zero_gradient() {
        let (set, lib) = scene(2);
        let (_, tape) = forward_with_tape(&set, &lib, 2).unwrap();
        let g = backward(&tape, &Adjoint::zeros(tape.pyramid_dims())).unwrap();
        assert_eq!(g, ParamGradients::zeros_like(&set));
    }

    #[test]
    fn matches_finite_differences_on_linear_loss() {
        let mut checked = 0;
        let mut passed = 0;
        for seed in 0..4 {
            let (set, lib) = scene(seed);
            let (_, tape) = forward_with_tape(&set, &lib, 3).unwrap();
            let adj = weights(tape.pyramid_dims(), 100 + seed);
            let g = backward(&tape, &adj).unwrap();
            let f = |s: &ElementSet| linear_loss(s, &lib, &adj);
            let fd = finite_diff_gradients(&f, &set, &FdSteps::default());
            for id in parameter_ids(&set) {
                checked += 1;
                if close(g.get(id), fd.get(id)) {
                    passed += 1;
                }
            }
        }
        assert!(passed as f64 >= 0.95 * checked as f64, "{passed}/{checked}");
    }

    #[test]
    fn depth_gradients_sum_to_zero() {
        let (set, lib) = scene(5);
        let (_, tape) = forward_with_tape(&set, &lib, 2).unwrap();
        let g = backward(&tape, &weights(tape.pyramid_dims(), 9)).unwrap();
        let total: f64 = g.elements.iter().map(|e| e.d_depth).sum::<f64>() + g.d_background_depth;
        assert!(total.abs() < 1e-10, "{total}");
    }

    #[test]
    fn sum_of_interior_constant_element_is_translation_invariant() {
        let patch = RgbmImage::filled(5, 5, [0.7, 0.2, 0.4, 1.0]);
        let lib = PatchLibrary::new(vec![patch], Background::Color([0.0; 3]), (1.0, 1.0)).unwrap();
        let mut set = ElementSet::new((32, 32), [0.0; 3]);
        let mut e = Element::new(1, [15.3, 16.6]);
        e.depth = 60.0;
        set.elements.push(e);
        set.background_depth = -60.0;
        let (_, tape) = forward_with_tape(&set, &lib, 1).unwrap();
        let mut adj = Adjoint::zeros(tape.pyramid_dims());
        for px in adj.levels[0].data_mut().chunks_exact_mut(4) {
            px[..3].copy_from_slice(&[1.0; 3]);
        }
        // the background is black and fully hidden under the element, so the
        // loss is the (constant) integral of the layer
        let g = backward(&tape, &adj).unwrap();
        let dc = g.elements[0].d_center;
        assert!(dc[0].abs() < 1e-9 && dc[1].abs() < 1e-9, "{dc:?}");
    }

    #[test]
    fn finite_differences_are_exact_for_quadratics() {
        let mut set = ElementSet::new((4, 4), [0.0; 3]);
        set.elements.push(Element::new(1, [1.0, 2.0]));
        let f = |s: &ElementSet| {
            let x = s.elements[0].center[0];
            3.0 * x * x - 2.0 * x + 1.0
        };
        let g = finite_diff_gradients(&f, &set, &FdSteps::default());
        assert!((g.elements[0].d_center[0] - 4.0).abs() < 1e-9);
        assert_eq!(g.elements[0].d_depth, 0.0);
        let c = |_: &ElementSet| 2.5;
        assert_eq!(finite_diff_gradients(&c, &set, &FdSteps::default()), ParamGradients::zeros_like(&set));
    }
}
