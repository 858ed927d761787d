use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use diffcomp::baseline::{greedy_grid_decompose, ActiveDims, SearchGrid};
use diffcomp::compositor::composite_hard;
use diffcomp::eval::{hard_mask_sum, integrity_violations};
use diffcomp::features::FeatureExtractor;
use diffcomp::grad::FdSteps;
use diffcomp::gradcheck::{run_gradcheck, GradcheckConfig};
use diffcomp::io::{
    discrete_scene_to_json, element_set_to_json, load_image_png, read_elements, save_png, write_text, ElementsFile,
};
use diffcomp::library::{load_patch_library, BackgroundSpec};
use diffcomp::losses::{mean_l2, overlap_loss};
use diffcomp::optimizer::{
    discretize, init_elements, run_task_with_observer, trace_to_csv, Objective, OptimizationConfig, Task, TaskInputs,
};
use diffcomp::synth::{synth_scene, Rotation, Shape, SynthSpec};
use diffcomp::{DiscreteScene, Element, ElementSet, PatchLibrary};
use serde_json::json;

use crate::args::{BaselineArgs, Command, GradcheckArgs, LibraryArgs, OptimizeArgs, RenderArgs, SynthArgs};
use crate::config::{read_config_file, resolve};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::UsageError;

/// Type logit of the chosen type when a discrete scene is loaded as a soft set.
const DISCRETE_TYPE_LOGIT: f64 = 10.0;

macro_rules! usage {
    ($($t:tt)*) => { return Err(UsageError(format!($($t)*)).into()) };
}

pub fn run(command: Command, argv: Vec<String>) -> Result<()> {
    match command {
        Command::Decompose(a) => optimize(Task::Decompose, a, argv),
        Command::Expand(a) => optimize(Task::Expand, a, argv),
        Command::Tile(a) => optimize(Task::Tile, a, argv),
        Command::Mosaic(a) => optimize(Task::Mosaic, a, argv),
        Command::Render(a) => render(a, argv),
        Command::Baseline(a) => baseline(a, argv),
        Command::Gradcheck(a) => gradcheck(a, argv),
        Command::Synth(a) => synth(a, argv),
    }
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            usage!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
enum BackgroundArg {
    Color([f64; 3]),
    File(PathBuf),
}

fn parse_background(s: &str) -> Result<BackgroundArg> {
    if let Some(hex) = s.strip_prefix('#') {
        if hex.len() != 6 || !hex.is_ascii() {
            usage!("background color {s:?} is not #rrggbb");
        }
        let mut c = [0.0; 3];
        for (k, v) in c.iter_mut().enumerate() {
            let byte = u8::from_str_radix(&hex[2 * k..2 * k + 2], 16)
                .map_err(|_| UsageError(format!("background color {s:?} is not #rrggbb")))?;
            *v = f64::from(byte) / 255.0;
        }
        return Ok(BackgroundArg::Color(c));
    }
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() == 3 {
        let mut c = [0.0; 3];
        for (v, p) in c.iter_mut().zip(parts) {
            *v = p.trim().parse().map_err(|_| UsageError(format!("bad background color {s:?}")))?;
        }
        return Ok(BackgroundArg::Color(c));
    }
    let path = PathBuf::from(s);
    if !path.is_file() {
        usage!("background {s:?} is neither a color nor a file");
    }
    Ok(BackgroundArg::File(path))
}

struct Loaded {
    library: PatchLibrary,
    background: Option<BackgroundArg>,
}

fn load_library(a: &LibraryArgs, m: &mut RunManifest) -> Result<Loaded> {
    if !(a.spacing.is_finite() && a.spacing > 0.0) {
        usage!("--spacing must be positive");
    }
    let background = a.background.as_deref().map(parse_background).transpose()?;
    for p in &a.patches {
        m.input(p)?;
    }
    let spec = match &background {
        Some(BackgroundArg::File(p)) => {
            m.input(p)?;
            BackgroundSpec::File(p)
        }
        Some(BackgroundArg::Color(c)) => BackgroundSpec::Color(*c),
        None => BackgroundSpec::Color([1.0; 3]),
    };
    let library = load_patch_library(&a.patches, spec, (a.spacing, a.spacing))?;
    Ok(Loaded { library, background })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn soften(scene: &DiscreteScene, types: usize) -> Result<ElementSet> {
    let mut set = ElementSet::new(scene.canvas, scene.background_color);
    set.background_depth = scene.background_depth;
    for e in &scene.elements {
        if e.type_index >= types {
            bail!("element type {} but only {types} patches", e.type_index + 1);
        }
        let mut logits = vec![0.0; types];
        logits[e.type_index] = DISCRETE_TYPE_LOGIT;
        set.elements.push(Element {
            type_logits: logits,
            center: e.center,
            orientation: e.orientation,
            depth: e.depth,
            color: e.color,
            alive: true,
        });
    }
    Ok(set)
}

fn optimize(task: Task, a: OptimizeArgs, argv: Vec<String>) -> Result<()> {
    set_threads(a.run.threads)?;
    let mut m = RunManifest::new(task.name(), argv);
    m.threads = a.run.threads;
    let file = match &a.config {
        Some(p) => {
            m.input(p)?;
            Some(read_config_file(p).map_err(|e| UsageError(format!("{e:#}")))?)
        }
        None => None,
    };
    let config: OptimizationConfig = resolve(&a, file).map_err(|e| UsageError(format!("{e:#}")))?;
    if task == Task::Tile && a.elements.is_none() {
        usage!("tile needs --elements");
    }
    if task == Task::Expand && a.elements.is_none() && config.canvas.is_none() {
        usage!("expand needs --canvas");
    }
    m.seed = Some(config.seed);
    m.config = serde_json::to_value(&config)?;

    m.input(&a.image)?;
    let target = load_image_png(&a.image)?;
    let Loaded { library, background } = load_library(&a.library, &mut m)?;
    let (initial, frozen) = match &a.elements {
        Some(p) => {
            m.input(p)?;
            match read_elements(p)? {
                ElementsFile::Soft { set, frozen } => (Some(set), frozen),
                ElementsFile::Discrete(scene) => (Some(soften(&scene, library.len())?), Vec::new()),
            }
        }
        None => match background {
            Some(BackgroundArg::Color(c)) => {
                let canvas = match task {
                    Task::Expand => config.canvas.expect("checked above"),
                    _ => target.dims(),
                };
                (Some(init_elements(&config, &library, canvas, c)), Vec::new())
            }
            _ => (None, Vec::new()),
        },
    };
    let extractor = match &a.extractor {
        Some(p) => {
            m.input(p)?;
            Some(FeatureExtractor::from_weights_file(p)?)
        }
        None => None,
    };
    let inputs = TaskInputs { target: Some(target.clone()), initial, frozen, extractor: extractor.clone() };

    create_dir(&a.out)?;
    let snapshots = a.out.join("snapshots");
    if config.snapshot_every > 0 {
        create_dir(&snapshots)?;
    }
    let mut snapshot_error = None;
    let mut snapshot_files = Vec::new();
    let output = {
        let mut observer = |it: usize, set: &ElementSet| {
            let path = snapshots.join(format!("elements_{it:06}.json"));
            match write_text(&path, &element_set_to_json(set, None)) {
                Ok(()) => snapshot_files.push(path),
                Err(e) => {
                    snapshot_error.get_or_insert(e);
                }
            }
        };
        m.time("optimize", || run_task_with_observer(task, &inputs, &library, &config, &mut observer))?
    };
    if let Some(e) = snapshot_error {
        return Err(e.into());
    }

    let objective = Objective::new(task, &target, &library, &config, extractor)?;
    let discrete_loss = objective.evaluate_image(&output.composite, &library)?;
    let mut metrics = json!({
        "iterations": output.trace.len(),
        "initial_loss": output.trace.first().map(|r| &r.loss),
        "final_loss": output.trace.last().map(|r| &r.loss),
        "discrete_loss": discrete_loss,
        "elements": output.discrete.elements.len(),
        "integrity_violations": integrity_violations(&output.discrete, &library),
        "events": output.events,
    });
    if matches!(task, Task::Decompose | Task::Mosaic) {
        metrics["mean_l2"] = json!(mean_l2(&output.composite, &target)?);
    }
    if task == Task::Mosaic {
        let sum = hard_mask_sum(&output.discrete, &library);
        metrics["discrete_overlap"] = json!(overlap_loss(&sum, &[output.discrete.canvas]).value);
    }
    m.metrics = metrics;

    let files = [
        ("elements.json", element_set_to_json(&output.set, Some(&output.frozen))),
        ("discrete.json", discrete_scene_to_json(&output.discrete)),
        ("loss.csv", trace_to_csv(&output.trace)),
    ];
    for (name, text) in files {
        let p = a.out.join(name);
        write_text(&p, &text)?;
        m.output(&p);
    }
    for (name, img) in [("composite.png", &output.composite), ("soft.png", &output.soft)] {
        let p = a.out.join(name);
        save_png(img, &p)?;
        m.output(&p);
    }
    for p in snapshot_files {
        m.output(&p);
    }
    m.write(&a.out.join(MANIFEST_FILE))?;
    log::info!("{}: {} elements written to {}", task.name(), output.discrete.elements.len(), a.out.display());
    Ok(())
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.{MANIFEST_FILE}"))
}

fn render(a: RenderArgs, argv: Vec<String>) -> Result<()> {
    set_threads(a.run.threads)?;
    let mut m = RunManifest::new("render", argv);
    m.input(&a.elements)?;
    let Loaded { library, .. } = load_library(&a.library, &mut m)?;
    let scene = match read_elements(&a.elements)? {
        ElementsFile::Soft { set, .. } => discretize(&set),
        ElementsFile::Discrete(scene) => scene,
    };
    if let Some(e) = scene.elements.iter().find(|e| e.type_index >= library.len()) {
        bail!("element type {} but only {} patches", e.type_index + 1, library.len());
    }
    let img = m.time("render", || composite_hard(&scene, &library));
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    save_png(&img, &a.out)?;
    m.output(&a.out);
    m.metrics = json!({
        "elements": scene.elements.len(),
        "integrity_violations": integrity_violations(&scene, &library),
    });
    m.write(&sibling_manifest(&a.out))
}

fn baseline(a: BaselineArgs, argv: Vec<String>) -> Result<()> {
    set_threads(a.run.threads)?;
    let mut m = RunManifest::new("baseline", argv);
    m.threads = a.run.threads;
    m.input(&a.image)?;
    let image = load_image_png(&a.image)?;
    let Loaded { library, background } = load_library(&a.library, &mut m)?;
    let grid = SearchGrid {
        types: library.len(),
        positions: a.positions,
        orientations: if a.no_orientation { 1 } else { a.orientations },
        colors: if a.no_color { 1 } else { a.colors },
        active: ActiveDims {
            types: true,
            positions: true,
            orientations: !a.no_orientation,
            colors: !a.no_color,
        },
    };
    grid.validate().map_err(|e| UsageError(e.to_string()))?;
    m.config = json!({ "grid": grid, "threshold": a.threshold });
    let elements = m.time("search", || greedy_grid_decompose(&image, &library, &grid, a.threshold))?;
    let background_color = match background {
        Some(BackgroundArg::Color(c)) => c,
        _ => image.mean_rgb(),
    };
    let scene = DiscreteScene { canvas: image.dims(), background_color, background_depth: 0.0, elements };
    let composite = composite_hard(&scene, &library);
    create_dir(&a.out)?;
    let p = a.out.join("discrete.json");
    write_text(&p, &discrete_scene_to_json(&scene))?;
    m.output(&p);
    let p = a.out.join("composite.png");
    save_png(&composite, &p)?;
    m.output(&p);
    m.metrics = json!({
        "elements": scene.elements.len(),
        "mean_l2": mean_l2(&composite, &image)?,
    });
    m.write(&a.out.join(MANIFEST_FILE))
}

fn gradcheck(a: GradcheckArgs, argv: Vec<String>) -> Result<()> {
    set_threads(a.threads)?;
    if a.scenes == 0 {
        usage!("--scenes must be at least 1");
    }
    if !(a.fd_step > 0.0 && a.fd_step.is_finite()) {
        usage!("--fd-step must be positive");
    }
    let config = GradcheckConfig {
        seed: a.seed,
        scenes: a.scenes,
        steps: FdSteps::uniform(a.fd_step),
        ..GradcheckConfig::default()
    };
    let mut m = RunManifest::new("gradcheck", argv);
    m.seed = Some(a.seed);
    m.threads = a.threads;
    let mut report = m.time("check", || run_gradcheck(&config))?;
    if !a.points {
        report.points.clear();
    }
    let text = serde_json::to_string_pretty(&report)? + "\n";
    match &a.out {
        None => print!("{text}"),
        Some(dir) => {
            create_dir(dir)?;
            let p = dir.join("gradcheck.json");
            write_text(&p, &text)?;
            m.output(&p);
            m.metrics = json!({
                "pass": report.pass,
                "max_rel_error": report.max_rel_error,
                "max_rel_error_away_from_kinks": report.max_rel_error_away_from_kinks,
            });
            m.write(&dir.join(MANIFEST_FILE))?;
        }
    }
    Ok(())
}

fn parse_rotation(s: &str) -> Result<Rotation> {
    Ok(match s {
        "none" => Rotation::None,
        "uniform" => Rotation::Uniform,
        "midpoints" => Rotation::GridMidpoints(36),
        _ => match s.strip_prefix("midpoints:").map(str::parse) {
            Some(Ok(n)) if n > 0 => Rotation::GridMidpoints(n),
            _ => usage!("unknown rotation {s:?} (expected none, uniform, midpoints or midpoints:N)"),
        },
    })
}

fn synth(a: SynthArgs, argv: Vec<String>) -> Result<()> {
    set_threads(a.threads)?;
    let shapes = a
        .shapes
        .iter()
        .map(|s| s.parse::<Shape>())
        .collect::<diffcomp::Result<Vec<_>>>()
        .map_err(|e| UsageError(e.to_string()))?;
    let spec = SynthSpec {
        count: a.count,
        shapes,
        patch_size: a.patch_size,
        canvas: a.canvas,
        rotation: parse_rotation(&a.rotation)?,
        allow_overlap: !a.no_overlap,
        ..SynthSpec::default()
    };
    let mut m = RunManifest::new("synth", argv);
    m.seed = Some(a.seed);
    m.threads = a.threads;
    m.config = serde_json::to_value(&spec)?;
    let s = m.time("generate", || synth_scene(a.seed, &spec))?;
    create_dir(&a.out)?;
    let p = a.out.join("truth.json");
    write_text(&p, &discrete_scene_to_json(&s.scene))?;
    m.output(&p);
    let p = a.out.join("image.png");
    save_png(&s.image, &p)?;
    m.output(&p);
    for (j, patch) in s.patches.iter().enumerate() {
        let p = a.out.join(format!("patch_{}.png", j + 1));
        save_png(patch, &p)?;
        m.output(&p);
    }
    m.metrics = json!({ "elements": s.scene.elements.len() });
    m.write(&a.out.join(MANIFEST_FILE))
}
