//! Greedy grid-search decomposition: place the best-matching element at a
//! time, erode the image occupancy under it, and repeat.

use std::collections::HashMap;
use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compositor::to_local;
use crate::element::{DiscreteElement, NEUTRAL_COLOR};
use crate::error::{Error, Result};
use crate::image::{Plane, RgbmImage};
use crate::library::PatchLibrary;
use crate::losses::MIN_OVERLAP_FRACTION;

/// Which grid dimensions are searched; an inactive one has a single point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveDims {
    pub types: bool,
    pub positions: bool,
    pub orientations: bool,
    pub colors: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub types: usize,
    pub positions: (usize, usize),
    pub orientations: usize,
    /// Levels per color channel.
    pub colors: usize,
    pub active: ActiveDims,
}

impl SearchGrid {
    /// Every dimension active at the standard resolution.
    pub fn standard(types: usize) -> Self {
        Self {
            types,
            positions: (128, 128),
            orientations: 36,
            colors: 3,
            active: ActiveDims { types: true, positions: true, orientations: true, colors: true },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.types == 0 || self.positions.0 == 0 || self.positions.1 == 0 || self.orientations == 0 || self.colors == 0 {
            return Err(Error::invalid("search grid", "every resolution must be positive"));
        }
        Ok(())
    }

    fn type_count(&self) -> usize {
        if self.active.types {
            self.types
        } else {
            1
        }
    }

    fn orientation_count(&self) -> usize {
        if self.active.orientations {
            self.orientations
        } else {
            1
        }
    }

    fn color_levels(&self) -> usize {
        if self.active.colors {
            self.colors
        } else {
            1
        }
    }

    /// Grid positions along both axes for a canvas.
    pub fn position_axes(&self, canvas: (usize, usize)) -> (Vec<f64>, Vec<f64>) {
        let axis = |n: usize, size: usize| -> Vec<f64> {
            if !self.active.positions {
                return vec![(size as f64 - 1.0) / 2.0];
            }
            (0..n).map(|i| (i as f64 + 0.5) * size as f64 / n as f64 - 0.5).collect()
        };
        (axis(self.positions.0, canvas.0), axis(self.positions.1, canvas.1))
    }

    pub fn orientation(&self, k: usize) -> f64 {
        k as f64 * TAU / self.orientation_count() as f64
    }

    /// Color modulation of level `l`: evenly spaced in `[0, 1]`, or 1 alone.
    pub fn modulation(&self, l: usize) -> f64 {
        let n = self.color_levels();
        if n == 1 {
            1.0
        } else {
            l as f64 / (n - 1) as f64
        }
    }
}

/// Pre-activation color whose modulation is `nu`.
pub fn color_for_modulation(nu: f64) -> f64 {
    if nu >= 1.0 {
        NEUTRAL_COLOR
    } else if nu > 0.99 / 0.999 {
        (nu - 0.99) / 0.001
    } else {
        nu
    }
}

/// Nearest-neighbour footprint of one element, as offsets from
/// `floor(center)`.
struct Stamp {
    offsets: Vec<(i64, i64, [f64; 3])>,
    mask_pixels: usize,
}

fn build_stamp(library: &PatchLibrary, type_index: usize, orientation: f64, frac: [f64; 2]) -> Stamp {
    let h = library.support_half_extent();
    let r = (h[0].hypot(h[1])).ceil() as i64 + 1;
    let (sin, cos) = orientation.sin_cos();
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let local = to_local([dx as f64 - frac[0], dy as f64 - frac[1]], sin, cos);
            if let Some(px) = library.sample_nearest(type_index, local) {
                offsets.push((dx, dy, [px[0], px[1], px[2]]));
            }
        }
    }
    Stamp { mask_pixels: offsets.len(), offsets }
}

/// Sufficient statistics of `L_m` over a stamp for one placement.
#[derive(Default)]
struct Sums {
    overlap: f64,
    pp: [f64; 3],
    pa: [f64; 3],
    aa: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Best {
    score: f64,
    cell: usize,
}

impl Best {
    const NONE: Best = Best { score: f64::INFINITY, cell: usize::MAX };

    fn better(self, o: Best) -> bool {
        self.score < o.score || (self.score == o.score && self.cell < o.cell)
    }
}

struct Search<'a> {
    grid: &'a SearchGrid,
    image: &'a RgbmImage,
    xs: Vec<f64>,
    ys: Vec<f64>,
    stamps: HashMap<(usize, usize, u64, u64), Stamp>,
    radius: i64,
}

impl Search<'_> {
    fn stamp(&self, t: usize, o: usize, c: [f64; 2]) -> &Stamp {
        let f = [c[0] - c[0].floor(), c[1] - c[1].floor()];
        &self.stamps[&(t, o, f[0].to_bits(), f[1].to_bits())]
    }

    fn sums(&self, stamp: &Stamp, c: [f64; 2], occupancy: &Plane) -> Sums {
        let (w, h) = self.image.dims();
        let (bx, by) = (c[0].floor() as i64, c[1].floor() as i64);
        let mut s = Sums::default();
        for &(dx, dy, p) in &stamp.offsets {
            let (x, y) = (bx + dx, by + dy);
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                continue;
            }
            let m = occupancy.get(x as usize, y as usize);
            if m <= 0.0 {
                continue;
            }
            let a = self.image.get(x as usize, y as usize);
            s.overlap += m;
            for k in 0..3 {
                s.pp[k] += m * p[k] * p[k];
                s.pa[k] += m * p[k] * a[k];
                s.aa[k] += m * a[k] * a[k];
            }
        }
        s
    }

    /// Best cell at grid position `(ix, iy)`.
    fn best_at(&self, ix: usize, iy: usize, occupancy: &Plane) -> Best {
        let g = self.grid;
        let (nt, no, nc) = (g.type_count(), g.orientation_count(), g.color_levels());
        let npos = self.xs.len() * self.ys.len();
        let pos = iy * self.xs.len() + ix;
        let c = [self.xs[ix], self.ys[iy]];
        let mut best = Best::NONE;
        for t in 0..nt {
            for o in 0..no {
                let stamp = self.stamp(t, o, c);
                let s = self.sums(stamp, c, occupancy);
                if s.overlap <= 0.0 || s.overlap < MIN_OVERLAP_FRACTION * stamp.mask_pixels as f64 {
                    continue;
                }
                for col in 0..nc * nc * nc {
                    let nu = [col / (nc * nc), (col / nc) % nc, col % nc].map(|l| g.modulation(l));
                    let err: f64 = (0..3).map(|k| nu[k] * nu[k] * s.pp[k] - 2.0 * nu[k] * s.pa[k] + s.aa[k]).sum();
                    let cand = Best {
                        score: (err / s.overlap).max(0.0),
                        cell: ((t * npos + pos) * no + o) * nc * nc * nc + col,
                    };
                    if cand.better(best) {
                        best = cand;
                    }
                }
            }
        }
        best
    }

    fn decode(&self, cell: usize) -> DiscreteElement {
        let g = self.grid;
        let (no, nc) = (g.orientation_count(), g.color_levels());
        let ncol = nc * nc * nc;
        let npos = self.xs.len() * self.ys.len();
        let col = cell % ncol;
        let o = (cell / ncol) % no;
        let pos = (cell / (ncol * no)) % npos;
        let t = cell / (ncol * no * npos);
        let nu = [col / (nc * nc), (col / nc) % nc, col % nc].map(|l| g.modulation(l));
        DiscreteElement {
            type_index: t,
            center: [self.xs[pos % self.xs.len()], self.ys[pos / self.xs.len()]],
            orientation: g.orientation(o),
            depth: 0.0,
            color: nu.map(color_for_modulation),
        }
    }
}

/// Greedy decomposition by exhaustive matching on `grid`. Elements are
/// returned in match order; earlier matches get larger depths.
pub fn greedy_grid_decompose(
    image: &RgbmImage,
    library: &PatchLibrary,
    grid: &SearchGrid,
    stop_threshold: f64,
) -> Result<Vec<DiscreteElement>> {
    grid.validate()?;
    if !(stop_threshold > 0.0) {
        return Err(Error::invalid("stop threshold", "must be positive"));
    }
    if grid.active.types && grid.types != library.len() {
        return Err(Error::invalid(
            "search grid",
            format!("{} types on the grid but {} patches", grid.types, library.len()),
        ));
    }
    let (w, h) = image.dims();
    let (xs, ys) = grid.position_axes((w, h));
    let mut fracs: Vec<[u64; 2]> = Vec::new();
    for &y in &ys {
        for &x in &xs {
            let f = [(x - x.floor()).to_bits(), (y - y.floor()).to_bits()];
            if !fracs.contains(&f) {
                fracs.push(f);
            }
        }
    }
    let mut stamps = HashMap::new();
    for t in 0..grid.type_count() {
        for o in 0..grid.orientation_count() {
            for f in &fracs {
                let frac = [f64::from_bits(f[0]), f64::from_bits(f[1])];
                stamps.insert((t, o, f[0], f[1]), build_stamp(library, t, grid.orientation(o), frac));
            }
        }
    }
    let radius = stamps
        .values()
        .flat_map(|s| s.offsets.iter().map(|&(dx, dy, _)| dx.abs().max(dy.abs())))
        .max()
        .unwrap_or(0);
    let search = Search { grid, image, xs, ys, stamps, radius };

    let mut occupancy = Plane::from_data(w, h, (0..w * h).map(|i| image.data()[i * 4 + 3].clamp(0.0, 1.0)).collect())?;
    let (nx, ny) = (search.xs.len(), search.ys.len());
    let mut best: Vec<Best> = (0..nx * ny)
        .into_par_iter()
        .map(|p| search.best_at(p % nx, p / nx, &occupancy))
        .collect();

    let mut found = Vec::new();
    loop {
        let pick = best.iter().copied().fold(Best::NONE, |a, b| if b.better(a) { b } else { a });
        if !pick.score.is_finite() || pick.score > stop_threshold {
            break;
        }
        let e = search.decode(pick.cell);
        let stamp = search.stamp(e.type_index, pick.cell / grid.color_levels().pow(3) % grid.orientation_count(), e.center);
        let (bx, by) = (e.center[0].floor() as i64, e.center[1].floor() as i64);
        let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        for &(dx, dy, _) in &stamp.offsets {
            let (x, y) = (bx + dx, by + dy);
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                continue;
            }
            let m = occupancy.get(x as usize, y as usize);
            occupancy.set(x as usize, y as usize, (m - 1.0).max(0.0));
            (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
        }
        log::debug!("match {}: type {} at {:?}, L_m {:.4e}", found.len(), e.type_index, e.center, pick.score);
        found.push(e);
        if x0 > x1 {
            break;
        }
        let r = search.radius + 1;
        let affected: Vec<usize> = (0..nx * ny)
            .filter(|&p| {
                let (cx, cy) = (search.xs[p % nx].floor() as i64, search.ys[p / nx].floor() as i64);
                cx + r >= x0 && cx - r <= x1 && cy + r >= y0 && cy - r <= y1
            })
            .collect();
        let fresh: Vec<Best> = affected
            .par_iter()
            .map(|&p| search.best_at(p % nx, p / nx, &occupancy))
            .collect();
        for (p, b) in affected.into_iter().zip(fresh) {
            best[p] = b;
        }
    }
    let n = found.len();
    for (k, e) in found.iter_mut().enumerate() {
        e.depth = (n - k) as f64;
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compositor::composite_hard;
    use crate::element::{leaky_hard_sigmoid, DiscreteScene};
    use crate::library::Background;

    fn library() -> PatchLibrary {
        let mut p = RgbmImage::new(5, 5);
        for y in 0..5 {
            for x in 0..5 {
                if x < 4 || y < 2 {
                    p.set(x, y, [0.1, 0.2 + 0.1 * x as f64, 0.7, 1.0]);
                }
            }
        }
        PatchLibrary::new(vec![p], Background::Color([1.0, 1.0, 1.0]), (1.0, 1.0)).unwrap()
    }

    fn grid(orientations: bool) -> SearchGrid {
        SearchGrid {
            types: 1,
            positions: (24, 24),
            orientations: 36,
            colors: 3,
            active: ActiveDims { types: true, positions: true, orientations, colors: false },
        }
    }

    #[test]
    fn single_element_is_found_at_its_cell() {
        let lib = library();
        let truth = DiscreteElement { type_index: 0, center: [9.0, 14.0], orientation: 0.0, depth: 1.0, color: [NEUTRAL_COLOR; 3] };
        let scene = DiscreteScene { canvas: (24, 24), background_color: [1.0; 3], background_depth: 0.0, elements: vec![truth.clone()] };
        let img = composite_hard(&scene, &lib);
        let found = greedy_grid_decompose(&img, &lib, &grid(false), 1e-3).unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].center, truth.center);
        assert_eq!(found[0].type_index, 0);
    }

    #[test]
    fn blank_image_gives_nothing() {
        let lib = library();
        let img = RgbmImage::filled(24, 24, [1.0, 1.0, 1.0, 1.0]);
        let found = greedy_grid_decompose(&img, &lib, &grid(true), 0.01).unwrap();
        assert!(found.is_empty());
    }

    #[test]
    fn depth_follows_match_order() {
        let lib = library();
        let elements = vec![
            DiscreteElement { type_index: 0, center: [5.0, 5.0], orientation: 0.0, depth: 1.0, color: [NEUTRAL_COLOR; 3] },
            DiscreteElement { type_index: 0, center: [16.0, 17.0], orientation: 0.0, depth: 2.0, color: [NEUTRAL_COLOR; 3] },
        ];
        let scene = DiscreteScene { canvas: (24, 24), background_color: [1.0; 3], background_depth: 0.0, elements };
        let img = composite_hard(&scene, &lib);
        let found = greedy_grid_decompose(&img, &lib, &grid(false), 1e-3).unwrap();
        assert_eq!(found.len(), 2);
        assert!(found[0].depth > found[1].depth);
    }

    #[test]
    fn color_levels_round_trip() {
        for nu in [0.0, 0.5, 1.0] {
            assert_eq!(leaky_hard_sigmoid(color_for_modulation(nu)), nu);
        }
    }

    #[test]
    fn rejects_bad_threshold() {
        let lib = library();
        let img = RgbmImage::filled(8, 8, [1.0; 4]);
        assert!(greedy_grid_decompose(&img, &lib, &grid(false), 0.0).is_err());
    }
}
