//! Element parameters and their discretized counterparts.

use crate::library::PatchLibrary;

/// Depth of the background layer at initialization.
pub const INIT_BACKGROUND_DEPTH: f64 = 3.3;
/// Depth of every freshly seeded element.
pub const INIT_ELEMENT_DEPTH: f64 = 9.0;
/// Initial value of every type logit.
pub const INIT_TYPE_LOGIT: f64 = 1.0;
/// Color parameter at which the leaky hard sigmoid reaches exactly one.
pub const NEUTRAL_COLOR: f64 = 10.0;

/// One soft element: type logits over the library plus a rigid placement.
#[derive(Clone, Debug, PartialEq)]
pub struct Element {
    pub type_logits: Vec<f64>,
    /// Canvas pixel coordinates, origin at the top-left pixel center.
    pub center: [f64; 2],
    /// Radians.
    pub orientation: f64,
    pub depth: f64,
    /// Pre-activation color, mapped through [`leaky_hard_sigmoid`].
    pub color: [f64; 3],
    pub alive: bool,
}

impl Element {
    pub fn new(types: usize, center: [f64; 2]) -> Self {
        Self {
            type_logits: vec![INIT_TYPE_LOGIT; types],
            center,
            orientation: 0.0,
            depth: INIT_ELEMENT_DEPTH,
            color: [NEUTRAL_COLOR; 3],
            alive: true,
        }
    }

    pub fn type_probabilities(&self) -> Vec<f64> {
        softmax(&self.type_logits)
    }

    /// Most probable type, ties broken by lowest index.
    pub fn argmax_type(&self) -> usize {
        let mut best = 0;
        for (j, &v) in self.type_logits.iter().enumerate() {
            if v > self.type_logits[best] {
                best = j;
            }
        }
        best
    }

    pub fn modulation(&self) -> [f64; 3] {
        self.color.map(leaky_hard_sigmoid)
    }
}

/// The full optimization state: elements plus background parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementSet {
    pub canvas: (usize, usize),
    pub elements: Vec<Element>,
    pub background_color: [f64; 3],
    pub background_depth: f64,
}

impl ElementSet {
    pub fn new(canvas: (usize, usize), background_color: [f64; 3]) -> Self {
        Self {
            canvas,
            elements: Vec::new(),
            background_color,
            background_depth: INIT_BACKGROUND_DEPTH,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Elements that are alive and above the background.
    pub fn visible_count(&self) -> usize {
        self.elements
            .iter()
            .filter(|e| e.alive && e.depth >= self.background_depth)
            .count()
    }

    /// Add a constant to every depth, background included.
    pub fn shift_depths(&mut self, delta: f64) {
        self.background_depth += delta;
        for e in &mut self.elements {
            e.depth += delta;
        }
    }
}

/// An element after discretization: one library type, hard visibility.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteElement {
    /// Zero-based index into the library (serialized one-based).
    pub type_index: usize,
    pub center: [f64; 2],
    pub orientation: f64,
    pub depth: f64,
    pub color: [f64; 3],
}

impl DiscreteElement {
    pub fn modulation(&self) -> [f64; 3] {
        self.color.map(leaky_hard_sigmoid)
    }
}

/// A renderable discrete scene.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteScene {
    pub canvas: (usize, usize),
    pub background_color: [f64; 3],
    pub background_depth: f64,
    pub elements: Vec<DiscreteElement>,
}

/// One problem found by [`validate_element_set`].
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    /// `None` for background or set-level problems.
    pub element: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.element {
            Some(i) => write!(f, "element {i}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

pub fn validate_element_set(set: &ElementSet, library: &PatchLibrary) -> Vec<Violation> {
    let mut out = Vec::new();
    let m = library.len();
    if set.canvas.0 == 0 || set.canvas.1 == 0 {
        out.push(Violation {
            element: None,
            message: format!("canvas {}x{} is empty", set.canvas.0, set.canvas.1),
        });
    }
    if !set.background_depth.is_finite() || set.background_color.iter().any(|v| !v.is_finite())
    {
        out.push(Violation {
            element: None,
            message: "background parameters are not finite".into(),
        });
    }
    for (i, e) in set.elements.iter().enumerate() {
        if e.type_logits.len() != m {
            out.push(Violation {
                element: Some(i),
                message: format!(
                    "has {} type logits, library has {} patches",
                    e.type_logits.len(),
                    m
                ),
            });
        }
        let finite = e.type_logits.iter().all(|v| v.is_finite())
            && e.center.iter().all(|v| v.is_finite())
            && e.orientation.is_finite()
            && e.depth.is_finite()
            && e.color.iter().all(|v| v.is_finite());
        if !finite {
            out.push(Violation {
                element: Some(i),
                message: "has non-finite parameters".into(),
            });
        }
    }
    out
}

/// `max(min(o, 0.001 o + 0.99), 0.001 o)`.
#[inline]
pub fn leaky_hard_sigmoid(o: f64) -> f64 {
    o.min(0.001 * o + 0.99).max(0.001 * o)
}

/// Derivative of [`leaky_hard_sigmoid`], taking the branch that is active
/// for the forward value.
#[inline]
pub fn leaky_hard_sigmoid_slope(o: f64) -> f64 {
    if o < 0.0 || 0.001 * o + 0.99 < o {
        0.001
    } else {
        1.0
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&t| (t - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::RgbmImage;
    use crate::library::{Background, PatchLibrary};

    fn lib(m: usize) -> PatchLibrary {
        let patches = (0..m)
            .map(|_| RgbmImage::filled(3, 3, [1.0, 0.0, 0.0, 1.0]))
            .collect();
        PatchLibrary::new(patches, Background::Color([0.0; 3]), (1.0, 1.0)).unwrap()
    }

    #[test]
    fn neutral_color_is_exactly_one() {
        assert_eq!(leaky_hard_sigmoid(NEUTRAL_COLOR), 1.0);
        assert_eq!(leaky_hard_sigmoid(0.5), 0.5);
        assert_eq!(leaky_hard_sigmoid(-1.0), -0.001);
        assert!((leaky_hard_sigmoid(20.0) - 1.01).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_slope_matches_branches() {
        for &o in &[-3.0, -0.2, 0.1, 0.5, 0.98, 1.2, 5.0, 30.0] {
            let h = 1e-6;
            let fd = (leaky_hard_sigmoid(o + h) - leaky_hard_sigmoid(o - h)) / (2.0 * h);
            assert!((fd - leaky_hard_sigmoid_slope(o)).abs() < 1e-6, "o={o}");
        }
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let mut e = Element::new(3, [0.0, 0.0]);
        assert_eq!(e.argmax_type(), 0);
        e.type_logits = vec![0.1, 2.0, 0.5];
        assert_eq!(e.argmax_type(), 1);
    }

    #[test]
    fn well_formed_set_has_no_violations() {
        let mut set = ElementSet::new((8, 8), [0.5; 3]);
        set.elements.push(Element::new(3, [4.0, 4.0]));
        assert!(validate_element_set(&set, &lib(3)).is_empty());
    }

    #[test]
    fn logit_count_mismatch_names_element() {
        let mut set = ElementSet::new((8, 8), [0.5; 3]);
        set.elements.push(Element::new(3, [4.0, 4.0]));
        set.elements.push(Element::new(2, [4.0, 4.0]));
        let v = validate_element_set(&set, &lib(3));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].element, Some(1));
    }

    #[test]
    fn non_finite_depth_is_reported() {
        let mut set = ElementSet::new((8, 8), [0.5; 3]);
        let mut e = Element::new(3, [4.0, 4.0]);
        e.depth = f64::NAN;
        set.elements.push(e);
        let v = validate_element_set(&set, &lib(3));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].element, Some(0));
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax(&[1.0, 1.0, 1.0, 1.0]);
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }
}
