use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::compositor::{composite_hard, render_soft};
use crate::element::{DiscreteScene, ElementSet};
use crate::error::{Error, Result};
use crate::features::{make_fixed_extractor, ExtractorConfig, FeatureExtractor};
use crate::grad::{backward, forward_with_tape, Adjoint, ParamGradients};
use crate::image::RgbmImage;
use crate::library::PatchLibrary;
use crate::losses::{l2_loss_weighted, overlap_loss, style_loss, StyleTarget};
use crate::pyramid::{build_pyramid, Pyramid};

use super::adam::{adam_step, AdamState};
use super::config::OptimizationConfig;
use super::refine::{refine_discrete, RefineOptions};
use super::elements::{discretize, init_elements, prune_elements, reseed_elements};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Reconstruct a pattern image (`L_d`).
    Decompose,
    /// Match an exemplar's style on a new canvas (`L_s`).
    Expand,
    /// Restore the style of an edited element set with some elements fixed.
    Tile,
    /// Reconstruct an arbitrary image without overlaps (`L_d + lambda L_o`).
    Mosaic,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Decompose => "decompose",
            Task::Expand => "expand",
            Task::Tile => "tile",
            Task::Mosaic => "mosaic",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TaskInputs {
    /// Target image (decompose, mosaic) or style exemplar (expand, tile).
    pub target: Option<RgbmImage>,
    /// Starting element set instead of the initialization grid.
    pub initial: Option<ElementSet>,
    /// Per-element update mask of `initial`.
    pub frozen: Vec<bool>,
    /// Style feature extractor; the seeded default when absent.
    pub extractor: Option<FeatureExtractor>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub l2: f64,
    pub style: f64,
    pub overlap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    #[serde(flatten)]
    pub loss: LossParts,
    pub live: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Event {
    Prune {
        iteration: usize,
        hidden: usize,
        duplicates: usize,
    },
    Reseed {
        iteration: usize,
        added: usize,
    },
}

#[derive(Clone, Debug)]
pub struct TaskOutput {
    pub set: ElementSet,
    pub frozen: Vec<bool>,
    pub discrete: DiscreteScene,
    /// Hard render of `discrete`.
    pub composite: RgbmImage,
    /// Soft render of `set`.
    pub soft: RgbmImage,
    pub trace: Vec<TraceRow>,
    pub events: Vec<Event>,
}

/// The loss of a task, evaluated on element sets.
pub struct Objective {
    l2: Option<(Pyramid, Vec<f64>)>,
    style: Option<(StyleTarget, FeatureExtractor, Vec<f64>)>,
    lambda_overlap: f64,
    levels: usize,
}

impl Objective {
    pub fn new(task: Task, target: &RgbmImage, library: &PatchLibrary, config: &OptimizationConfig, extractor: Option<FeatureExtractor>) -> Result<Self> {
        let levels = config.levels;
        let l2 = match task {
            Task::Decompose | Task::Mosaic => Some((
                build_pyramid(target, levels, library.kernel_radius())?,
                config.level_weights(),
            )),
            _ => None,
        };
        let style = match task {
            Task::Expand | Task::Tile => {
                let ex = match extractor {
                    Some(e) => e,
                    None => make_fixed_extractor(config.seed, &ExtractorConfig::default())?,
                };
                if ex.tap_count() != config.style_weights.len() {
                    return Err(Error::invalid(
                        "config",
                        format!("{} style weights for {} extractor taps", config.style_weights.len(), ex.tap_count()),
                    ));
                }
                let st = StyleTarget::new(&ex, target)?;
                Some((st, ex, config.style_weights.clone()))
            }
            _ => None,
        };
        let lambda_overlap = if task == Task::Mosaic { config.lambda_overlap } else { 0.0 };
        Ok(Self {
            l2,
            style,
            lambda_overlap,
            levels,
        })
    }

    /// Image terms of the loss for a rendered image; the overlap term is
    /// left at zero since it needs element masks.
    pub fn evaluate_image(&self, img: &RgbmImage, library: &PatchLibrary) -> Result<LossParts> {
        let pyr = build_pyramid(img, self.levels, library.kernel_radius())?;
        let mut parts = LossParts::default();
        if let Some((target, weights)) = &self.l2 {
            parts.l2 = l2_loss_weighted(target, &pyr, weights)?.value;
        }
        if let Some((target, ex, weights)) = &self.style {
            parts.style = style_loss(target, &pyr, ex, weights)?.value;
        }
        parts.total = parts.l2 + parts.style;
        Ok(parts)
    }

    /// Loss terms and, when `with_grad`, the gradient of the total.
    pub fn evaluate(&self, set: &ElementSet, library: &PatchLibrary, with_grad: bool) -> Result<(LossParts, Option<ParamGradients>)> {
        let (pyr, tape) = forward_with_tape(set, library, self.levels)?;
        let mut parts = LossParts::default();
        let mut adj = Adjoint::zeros(&pyr.dims());
        if let Some((target, weights)) = &self.l2 {
            let l = l2_loss_weighted(target, &pyr, weights)?;
            parts.l2 = l.value;
            adj.add_scaled(&l.adjoint, 1.0)?;
        }
        if let Some((target, ex, weights)) = &self.style {
            let l = style_loss(target, &pyr, ex, weights)?;
            parts.style = l.value;
            adj.add_scaled(&l.adjoint, 1.0)?;
        }
        if self.lambda_overlap > 0.0 {
            let l = overlap_loss(tape.mask_sum(), &pyr.dims());
            parts.overlap = l.value;
            adj.add_scaled(&l.adjoint, self.lambda_overlap)?;
        }
        parts.total = parts.l2 + parts.style + self.lambda_overlap * parts.overlap;
        let grads = if with_grad { Some(backward(&tape, &adj)?) } else { None };
        Ok((parts, grads))
    }
}

fn resolve_start(task: Task, inputs: &TaskInputs, library: &PatchLibrary, config: &OptimizationConfig) -> Result<(RgbmImage, ElementSet, Vec<bool>)> {
    let target = inputs.target.clone().ok_or(Error::MissingInput(match task {
        Task::Decompose | Task::Mosaic => "target image",
        Task::Expand | Task::Tile => "exemplar image",
    }))?;
    let set = match (&inputs.initial, task) {
        (Some(s), _) => s.clone(),
        (None, Task::Tile) => return Err(Error::MissingInput("element set to tile")),
        (None, Task::Expand) => {
            let canvas = config.canvas.ok_or(Error::MissingInput("output canvas size"))?;
            init_elements(config, library, canvas, target.mean_rgb())
        }
        (None, _) => init_elements(config, library, target.dims(), target.mean_rgb()),
    };
    if matches!(task, Task::Decompose | Task::Mosaic) && set.canvas != target.dims() {
        return Err(Error::Shape(format!(
            "element canvas {}x{} differs from target {}x{}",
            set.canvas.0,
            set.canvas.1,
            target.width(),
            target.height()
        )));
    }
    let (pw, ph) = library.max_patch_size();
    if (set.canvas.0 as f64) < pw || (set.canvas.1 as f64) < ph {
        return Err(Error::invalid(
            "canvas",
            format!(
                "{}x{} is smaller than the largest patch ({}x{})",
                set.canvas.0, set.canvas.1, pw, ph
            ),
        ));
    }
    let mut frozen = inputs.frozen.clone();
    frozen.resize(set.elements.len(), false);
    Ok((target, set, frozen))
}

pub fn run_task(task: Task, inputs: &TaskInputs, library: &PatchLibrary, config: &OptimizationConfig) -> Result<TaskOutput> {
    run_task_with_observer(task, inputs, library, config, &mut |_, _| {})
}

/// As [`run_task`], calling `observer` every `snapshot_every` iterations.
pub fn run_task_with_observer(
    task: Task,
    inputs: &TaskInputs,
    library: &PatchLibrary,
    config: &OptimizationConfig,
    observer: &mut dyn FnMut(usize, &ElementSet),
) -> Result<TaskOutput> {
    config.validate()?;
    let (target, mut set, mut frozen) = resolve_start(task, inputs, library, config)?;
    let objective = Objective::new(task, &target, library, config, inputs.extractor.clone())?;
    let mut adam = AdamState::new(&set);
    let total = config.schedule.total();
    let removals = config.schedule.removals();
    let reseeds = if task == Task::Tile { Vec::new() } else { config.schedule.reseeds() };
    let mut trace = Vec::with_capacity(total);
    let mut events = Vec::new();
    log::info!("{}: {} elements, {} iterations", task.name(), set.elements.len(), total);

    for it in 0..total {
        if removals.contains(&it) {
            let r = prune_elements(&mut set, library, &frozen);
            adam.remap(&r.mapping);
            frozen = remap_flags(&frozen, &r.mapping, set.elements.len());
            log::info!("iteration {it}: removed {} hidden, {} duplicates", r.hidden.len(), r.duplicates.len());
            events.push(Event::Prune {
                iteration: it,
                hidden: r.hidden.len(),
                duplicates: r.duplicates.len(),
            });
        }
        if reseeds.contains(&it) {
            let added = reseed_elements(&mut set, config, library.len());
            adam.extend_to(&set);
            frozen.resize(set.elements.len(), false);
            log::info!("iteration {it}: seeded {added} elements");
            events.push(Event::Reseed { iteration: it, added });
        }
        let (parts, grads) = objective.evaluate(&set, library, true)?;
        let grads = grads.expect("requested");
        adam_step(&mut adam, &mut set, &grads, config, &frozen)?;
        if it % 100 == 0 {
            log::debug!("iteration {it}: loss {:.6e}, {} visible", parts.total, set.visible_count());
        }
        trace.push(TraceRow {
            iteration: it,
            loss: parts,
            live: set.visible_count(),
        });
        if config.snapshot_every > 0 && (it + 1) % config.snapshot_every == 0 {
            observer(it + 1, &set);
        }
    }
    if config.final_prune {
        let r = prune_elements(&mut set, library, &frozen);
        frozen = remap_flags(&frozen, &r.mapping, set.elements.len());
        events.push(Event::Prune {
            iteration: total,
            hidden: r.hidden.len(),
            duplicates: r.duplicates.len(),
        });
    }
    let mut discrete = discretize(&set);
    if task == Task::Decompose && config.refine {
        let r = refine_discrete(&mut discrete, library, &target, config.optimize_orientation, &RefineOptions::default())?;
        log::info!("refined {} placements, hard error {:.3e} -> {:.3e}", r.moves, r.before, r.after);
        let background = set.background_depth;
        let visible = set.elements.iter_mut().filter(|e| e.alive && e.depth >= background);
        for (e, d) in visible.zip(&discrete.elements) {
            e.center = d.center;
            e.orientation = d.orientation;
        }
    }
    let composite = composite_hard(&discrete, library);
    let soft = render_soft(&set, library);
    Ok(TaskOutput {
        set,
        frozen,
        discrete,
        composite,
        soft,
        trace,
        events,
    })
}

fn remap_flags(flags: &[bool], mapping: &[Option<usize>], len: usize) -> Vec<bool> {
    let mut out = vec![false; len];
    for (i, to) in mapping.iter().enumerate() {
        if let Some(t) = to {
            out[*t] = flags.get(i).copied().unwrap_or(false);
        }
    }
    out
}

/// Loss trace as CSV: iteration, total and per-term losses, live count.
pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("iteration,total,l2,style,overlap,live\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:e},{:e},{:e},{:e},{}",
            r.iteration, r.loss.total, r.loss.l2, r.loss.style, r.loss.overlap, r.live
        );
    }
    s
}
