use diffcomp::baseline::{greedy_grid_decompose, ActiveDims, SearchGrid};
use diffcomp::eval::{evaluate_recovery, integrity_violations, Tolerances};
use diffcomp::io::{discrete_scene_to_json, element_set_to_json};
use diffcomp::optimizer::{run_task, OptimizationConfig, Preset, Task, TaskInputs};
use diffcomp::synth::{synth_scene, SynthScene, SynthSpec};

fn small_scene(seed: u64) -> SynthScene {
    let spec = SynthSpec { count: 3, canvas: (48, 48), allow_overlap: false, ..SynthSpec::default() };
    synth_scene(seed, &spec).unwrap()
}

fn small_config() -> OptimizationConfig {
    let mut c = OptimizationConfig::preset(Preset::Desk);
    c.n_max = 16;
    c.schedule.scale = 0.05;
    c
}

fn decompose(s: &SynthScene, config: &OptimizationConfig) -> diffcomp::optimizer::TaskOutput {
    let inputs = TaskInputs { target: Some(s.image.clone()), ..Default::default() };
    run_task(Task::Decompose, &inputs, &s.library, config).unwrap()
}

#[test]
fn decomposition_recovers_a_small_scene() {
    let s = small_scene(1);
    let out = decompose(&s, &small_config());
    let tol = Tolerances { center: 1.0, orientation: None, l2: 1e-3 };
    let r = evaluate_recovery(&s.scene, &s.image, &out.discrete, &s.library, &tol).unwrap();
    assert!(r.pass, "{r:?}");
    assert_eq!(integrity_violations(&out.discrete, &s.library), 0);
    assert_eq!(diffcomp::optimizer::discretize(&out.set), out.discrete);
    let first = out.trace.first().unwrap().loss.total;
    let last = out.trace.last().unwrap().loss.total;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn identical_runs_are_bit_identical() {
    let s = small_scene(2);
    let mut c = small_config();
    c.schedule.scale = 0.01;
    let a = decompose(&s, &c);
    let b = decompose(&s, &c);
    assert_eq!(element_set_to_json(&a.set, Some(&a.frozen)), element_set_to_json(&b.set, Some(&b.frozen)));
    assert_eq!(discrete_scene_to_json(&a.discrete), discrete_scene_to_json(&b.discrete));
    assert_eq!(a.composite, b.composite);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn baseline_and_gradient_agree_on_grid_aligned_centers() {
    let s = small_scene(1);
    let (w, h) = s.scene.canvas;
    // one grid point per pixel, so integer centers lie on the grid
    let grid = SearchGrid {
        types: s.library.len(),
        positions: (w, h),
        orientations: 1,
        colors: 1,
        active: ActiveDims { types: true, positions: true, orientations: false, colors: false },
    };
    let found = greedy_grid_decompose(&s.image, &s.library, &grid, 0.02).unwrap();
    let out = decompose(&s, &small_config());
    assert_eq!(found.len(), s.scene.elements.len());
    assert_eq!(out.discrete.elements.len(), s.scene.elements.len());
    for b in &found {
        let g = out
            .discrete
            .elements
            .iter()
            .map(|g| ((g.center[0] - b.center[0]).powi(2) + (g.center[1] - b.center[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(g <= 0.5, "baseline center {:?} is {g} px from the nearest gradient center", b.center);
    }
}

#[test]
fn frozen_elements_survive_tiling_unchanged() {
    let s = small_scene(3);
    let mut set = diffcomp::optimizer::init_elements(&small_config(), &s.library, (48, 48), s.image.mean_rgb());
    set.elements.truncate(4);
    let frozen = vec![true, false, false, false];
    let kept = set.elements[0].clone();
    let mut c = small_config();
    c.schedule.scale = 0.01;
    let inputs = TaskInputs { target: Some(s.image.clone()), initial: Some(set), frozen, extractor: None };
    let out = run_task(Task::Tile, &inputs, &s.library, &c).unwrap();
    let i = out.frozen.iter().position(|&f| f).expect("frozen element kept");
    assert_eq!(out.set.elements[i], kept);
}
