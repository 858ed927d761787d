use serde::{Deserialize, Serialize};

use crate::element::{INIT_BACKGROUND_DEPTH, INIT_ELEMENT_DEPTH, INIT_TYPE_LOGIT};
use crate::error::{Error, Result};
use crate::losses::DEFAULT_STYLE_WEIGHT;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Constants exactly as published.
    Paper,
    /// Step sizes that converge within desk-scale iteration budgets.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::invalid("preset", format!("unknown preset {other:?} (expected paper or desk)"))),
        }
    }
}

/// Per-class learning-rate factors applied to `base_lr`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub type_logits: f64,
    pub center: f64,
    pub orientation: f64,
    pub depth: f64,
    pub color: f64,
}

impl Multipliers {
    pub const PAPER: Multipliers = Multipliers {
        type_logits: 1.0,
        center: 0.01,
        orientation: 2.25,
        depth: 0.0016,
        color: 0.0025,
    };

    pub const DESK: Multipliers = Multipliers {
        type_logits: 2.0,
        center: 0.015,
        orientation: 0.3,
        depth: 2.5,
        color: 2.0,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    /// Unscaled iterations of the first removals.
    pub removal_first: Vec<usize>,
    /// Unscaled period of removals after the last of `removal_first`.
    pub removal_every: usize,
    pub reseed: Vec<usize>,
    pub total_iters: usize,
    /// Multiplies every schedule point (and `total_iters`).
    pub scale: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            removal_first: vec![4000, 12000],
            removal_every: 8000,
            reseed: vec![8000, 16000, 24000],
            total_iters: 32000,
            scale: 1.0,
        }
    }
}

impl Schedule {
    fn scaled(&self, it: usize) -> usize {
        (it as f64 * self.scale).round() as usize
    }

    pub fn total(&self) -> usize {
        self.scaled(self.total_iters)
    }

    pub fn removals(&self) -> Vec<usize> {
        let total = self.total();
        let mut out: Vec<usize> = self.removal_first.iter().map(|&i| self.scaled(i)).collect();
        if let Some(&last) = self.removal_first.iter().max() {
            if self.removal_every > 0 {
                let mut it = last + self.removal_every;
                while self.scaled(it) < total {
                    out.push(self.scaled(it));
                    it += self.removal_every;
                }
            }
        }
        out.retain(|&i| i > 0 && i < total);
        out.sort_unstable();
        out.dedup();
        out
    }

    pub fn reseeds(&self) -> Vec<usize> {
        let total = self.total();
        let mut out: Vec<usize> = self.reseed.iter().map(|&i| self.scaled(i)).collect();
        out.retain(|&i| i > 0 && i < total);
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationConfig {
    pub preset: Preset,
    pub n_max: usize,
    /// Output canvas for expansion; other tasks use the target's size.
    pub canvas: Option<(usize, usize)>,
    pub levels: usize,
    /// Per-level weights of `L_d`; equal weights when absent.
    pub level_weights: Option<Vec<f64>>,
    pub base_lr: f64,
    pub betas: (f64, f64),
    pub epsilon: f64,
    pub multipliers: Multipliers,
    /// Step centers in units of the larger canvas side.
    pub normalized_centers: bool,
    pub schedule: Schedule,
    pub optimize_orientation: bool,
    pub optimize_color: bool,
    pub optimize_background: bool,
    pub lambda_overlap: f64,
    pub style_weights: Vec<f64>,
    pub init_element_depth: f64,
    pub init_background_depth: f64,
    pub init_type_logit: f64,
    /// Drop hidden elements and duplicates once more before discretizing.
    pub final_prune: bool,
    /// Local search of decomposed orientations and centers on the hard error.
    pub refine: bool,
    pub snapshot_every: usize,
    pub seed: u64,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl OptimizationConfig {
    pub fn preset(preset: Preset) -> Self {
        let (base_lr, multipliers, normalized_centers) = match preset {
            Preset::Paper => (1e-6, Multipliers::PAPER, false),
            Preset::Desk => (1e-2, Multipliers::DESK, true),
        };
        Self {
            preset,
            n_max: 256,
            canvas: None,
            levels: crate::pyramid::DEFAULT_LEVELS,
            level_weights: None,
            base_lr,
            betas: (0.9, 0.9),
            epsilon: 1e-8,
            multipliers,
            normalized_centers,
            schedule: Schedule::default(),
            optimize_orientation: true,
            optimize_color: false,
            optimize_background: true,
            lambda_overlap: 1.0,
            style_weights: vec![DEFAULT_STYLE_WEIGHT; 4],
            init_element_depth: INIT_ELEMENT_DEPTH,
            init_background_depth: INIT_BACKGROUND_DEPTH,
            init_type_logit: INIT_TYPE_LOGIT,
            final_prune: true,
            refine: true,
            snapshot_every: 0,
            seed: 0,
        }
    }

    pub fn level_weights(&self) -> Vec<f64> {
        self.level_weights.clone().unwrap_or_else(|| vec![1.0; self.levels])
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_max == 0 {
            return Err(Error::invalid("config", "n_max must be at least 1"));
        }
        if self.levels == 0 {
            return Err(Error::invalid("config", "levels must be at least 1"));
        }
        if let Some(w) = &self.level_weights {
            if w.len() != self.levels {
                return Err(Error::invalid(
                    "config",
                    format!("{} level weights for {} levels", w.len(), self.levels),
                ));
            }
        }
        let m = self.multipliers;
        if [m.type_logits, m.center, m.orientation, m.depth, m.color]
            .iter()
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(Error::invalid("config", "learning-rate multipliers must be positive"));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::invalid("config", "base_lr must be positive"));
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return Err(Error::invalid("config", "betas must lie in [0, 1)"));
        }
        if !(self.schedule.scale.is_finite() && self.schedule.scale > 0.0) {
            return Err(Error::invalid("config", "schedule scale must be positive"));
        }
        if self.lambda_overlap < 0.0 {
            return Err(Error::invalid("config", "lambda_overlap must be non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_schedule() {
        let s = Schedule {
            scale: 0.1,
            ..Schedule::default()
        };
        assert_eq!(s.total(), 3200);
        assert_eq!(s.removals(), vec![400, 1200, 2000, 2800]);
        assert_eq!(s.reseeds(), vec![800, 1600, 2400]);
    }

    #[test]
    fn full_schedule_points_stay_below_total() {
        let s = Schedule::default();
        assert_eq!(s.removals(), vec![4000, 12000, 20000, 28000]);
        assert!(s.reseeds().iter().all(|&i| i < s.total()));
    }

    #[test]
    fn paper_preset_is_verbatim() {
        let c = OptimizationConfig::preset(Preset::Paper);
        assert_eq!(c.base_lr, 1e-6);
        assert_eq!(c.betas, (0.9, 0.9));
        assert_eq!(c.multipliers, Multipliers::PAPER);
        assert_eq!(c.init_element_depth, 9.0);
        assert_eq!(c.init_background_depth, 3.3);
        assert_eq!(c.style_weights, vec![0.2; 4]);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut c = OptimizationConfig::default();
        c.level_weights = Some(vec![1.0]);
        assert!(c.validate().is_err());
        let mut c = OptimizationConfig::default();
        c.multipliers.depth = 0.0;
        assert!(c.validate().is_err());
    }
}
