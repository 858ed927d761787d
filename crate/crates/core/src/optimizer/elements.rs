use std::f64::consts::FRAC_PI_2;

use crate::element::{DiscreteElement, DiscreteScene, Element, ElementSet, NEUTRAL_COLOR};
use crate::library::PatchLibrary;

use super::config::OptimizationConfig;

/// `n` centers on a regular grid of `ceil(sqrt n)` columns, row-major, each
/// at the middle of its cell.
pub fn grid_centers(n: usize, canvas: (usize, usize)) -> Vec<[f64; 2]> {
    if n == 0 {
        return Vec::new();
    }
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (w, h) = (canvas.0 as f64, canvas.1 as f64);
    (0..n)
        .map(|k| {
            let (i, j) = (k % cols, k / cols);
            [(i as f64 + 0.5) * w / cols as f64, (j as f64 + 0.5) * h / rows as f64]
        })
        .collect()
}

fn grid_elements(config: &OptimizationConfig, types: usize, canvas: (usize, usize)) -> Vec<Element> {
    grid_centers(config.n_max, canvas)
        .into_iter()
        .map(|c| Element {
            type_logits: vec![config.init_type_logit; types],
            center: c,
            orientation: 0.0,
            depth: config.init_element_depth,
            color: [NEUTRAL_COLOR; 3],
            alive: true,
        })
        .collect()
}

/// Initial grid of `n_max` elements over `canvas`.
pub fn init_elements(
    config: &OptimizationConfig,
    library: &PatchLibrary,
    canvas: (usize, usize),
    background_color: [f64; 3],
) -> ElementSet {
    let mut set = ElementSet::new(canvas, background_color);
    set.background_depth = config.init_background_depth;
    set.elements = grid_elements(config, library.len(), canvas);
    set
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PruneReport {
    /// Old indices removed for lying below the background.
    pub hidden: Vec<usize>,
    /// Old indices removed as the shallower member of a duplicate pair.
    pub duplicates: Vec<usize>,
    /// Old index to new index.
    pub mapping: Vec<Option<usize>>,
}

impl PruneReport {
    pub fn removed(&self) -> usize {
        self.hidden.len() + self.duplicates.len()
    }
}

/// Remove hidden elements (`z < z_0`) and the shallower member of every
/// duplicate pair (same argmax type, centers closer than half the smaller
/// mask extent). Elements flagged in `protected` are never removed.
pub fn prune_elements(set: &mut ElementSet, library: &PatchLibrary, protected: &[bool]) -> PruneReport {
    let n = set.elements.len();
    let is_protected = |i: usize| protected.get(i).copied().unwrap_or(false);
    let mut keep = vec![true; n];
    let mut report = PruneReport::default();
    for (i, e) in set.elements.iter().enumerate() {
        if !is_protected(i) && (!e.alive || e.depth < set.background_depth) {
            keep[i] = false;
            report.hidden.push(i);
        }
    }
    // deepest first; protected elements claim their spot before anything else
    let mut order: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
    order.sort_by(|&a, &b| {
        is_protected(b)
            .cmp(&is_protected(a))
            .then(set.elements[b].depth.total_cmp(&set.elements[a].depth))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let e = &set.elements[i];
        let ti = e.argmax_type();
        let duplicate = !is_protected(i)
            && kept.iter().any(|&k| {
                let o = &set.elements[k];
                let tk = o.argmax_type();
                let limit = 0.5 * library.mask_extent(ti).min(library.mask_extent(tk));
                let d = ((e.center[0] - o.center[0]).powi(2) + (e.center[1] - o.center[1]).powi(2)).sqrt();
                tk == ti && d < limit
            });
        if duplicate {
            keep[i] = false;
            report.duplicates.push(i);
        } else {
            kept.push(i);
        }
    }
    report.duplicates.sort_unstable();
    let mut next = 0;
    report.mapping = keep
        .iter()
        .map(|&k| {
            if k {
                next += 1;
                Some(next - 1)
            } else {
                None
            }
        })
        .collect();
    let old = std::mem::take(&mut set.elements);
    set.elements = old.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(e, _)| e).collect();
    report
}

/// Append rotated copies of every live element (when orientation is
/// optimized) and a fresh initialization grid. Returns the number added.
pub fn reseed_elements(set: &mut ElementSet, config: &OptimizationConfig, types: usize) -> usize {
    let before = set.elements.len();
    if config.optimize_orientation {
        let live: Vec<Element> = set.elements.iter().filter(|e| e.alive).cloned().collect();
        for k in 1..=3 {
            for e in &live {
                let mut c = e.clone();
                c.orientation += k as f64 * FRAC_PI_2;
                set.elements.push(c);
            }
        }
    }
    set.elements.extend(grid_elements(config, types, set.canvas));
    set.elements.len() - before
}

/// Hard scene of the visible elements, typed by argmax.
pub fn discretize(set: &ElementSet) -> DiscreteScene {
    DiscreteScene {
        canvas: set.canvas,
        background_color: set.background_color,
        background_depth: set.background_depth,
        elements: set
            .elements
            .iter()
            .filter(|e| e.alive && e.depth >= set.background_depth)
            .map(|e| DiscreteElement {
                type_index: e.argmax_type(),
                center: e.center,
                orientation: e.orientation,
                depth: e.depth,
                color: e.color,
            })
            .collect(),
    }
}
