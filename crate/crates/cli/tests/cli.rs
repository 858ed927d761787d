use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diffcomp")).args(args).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A small synthetic scene: image.png, patch_1.png, patch_2.png, truth.json.
fn fixture(dir: &Path) -> std::path::PathBuf {
    let d = dir.join("synth");
    let out = run(&["synth", "--seed", "4", "--count", "3", "--canvas", "48x48", "--no-overlap", "--out", p(&d)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    d
}

fn quick(cmd: &str, d: &Path, out: &Path) -> Vec<String> {
    let mut v: Vec<String> = vec![cmd.into(), "--image".into(), p(&d.join("image.png")).into()];
    for patch in ["patch_1.png", "patch_2.png"] {
        v.push("--patch".into());
        v.push(p(&d.join(patch)).into());
    }
    v.extend(["--iters", "60", "--n-max", "4", "--out", p(out)].map(String::from));
    v
}

fn extend(args: &mut Vec<String>, more: &[&str]) {
    args.extend(more.iter().map(|s| s.to_string()));
}

#[test]
fn help_and_version_succeed() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["decompose", "expand", "tile", "mosaic", "render", "baseline", "gradcheck", "synth"] {
        assert!(text.contains(sub), "{sub} missing from help");
    }
    assert!(run(&["--version"]).status.success());
}

#[test]
fn usage_errors_exit_with_one() {
    let cases: [&[&str]; 7] = [
        &["frobnicate"],
        &["render", "--bogus"],
        &["decompose", "--image", "a.png"],
        &["synth", "--out", "x", "--rotation", "sideways"],
        &["expand", "--image", "a.png", "--patch", "b.png", "--out", "o"],
        &["gradcheck", "--scenes", "0"],
        &["gradcheck", "--fd-step", "0"],
    ];
    for args in cases {
        let out = run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("error"), "{args:?}");
    }
    assert!(String::from_utf8_lossy(&run(&["frobnicate"]).stderr).contains("Usage"));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["render", "--elements", "/no/such.json", "--patch", "/no/such.png", "--out", p(&dir.path().join("o.png"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_then_render_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = fixture(dir.path());
    let truth = json(&d.join("truth.json"));
    assert_eq!(truth["elements"].as_array().unwrap().len(), 3);
    let again = dir.path().join("again.png");
    let out = run(&[
        "render",
        "--elements",
        p(&d.join("truth.json")),
        "--patch",
        p(&d.join("patch_1.png")),
        "--patch",
        p(&d.join("patch_2.png")),
        "--out",
        p(&again),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(d.join("image.png")).unwrap());
    assert!(dir.path().join("again.manifest.json").is_file());
}

#[test]
fn decompose_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = fixture(dir.path());
    let out_dir = dir.path().join("run");
    let mut args = quick("decompose", &d, &out_dir);
    extend(&mut args, &["--snapshot-every", "30", "--seed", "9", "--background", "#e6e0cc"]);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["elements.json", "discrete.json", "composite.png", "soft.png", "loss.csv", "manifest.json"] {
        assert!(out_dir.join(f).is_file(), "{f}");
    }
    assert!(out_dir.join("snapshots/elements_000060.json").is_file());
    let csv = std::fs::read_to_string(out_dir.join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 61);
    let m = json(&out_dir.join("manifest.json"));
    assert_eq!(m["command"], "decompose");
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"]["n_max"], 4);
    assert_eq!(m["inputs"].as_array().unwrap().len(), 3);
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(m["metrics"]["mean_l2"].is_number());
    assert_eq!(m["metrics"]["integrity_violations"], 0);

    // a soft element document renders through its discretization
    let img = dir.path().join("r.png");
    let out = run(&[
        "render",
        "--elements",
        p(&out_dir.join("elements.json")),
        "--patch",
        p(&d.join("patch_1.png")),
        "--patch",
        p(&d.join("patch_2.png")),
        "--out",
        p(&img),
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read(&img).unwrap(), std::fs::read(out_dir.join("composite.png")).unwrap());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = fixture(dir.path());
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "n_max = 9\nlambda_overlap = 2.5\n[schedule]\nscale = 0.5\n").unwrap();
    let out_dir = dir.path().join("run");
    let mut args = quick("decompose", &d, &out_dir);
    extend(&mut args, &["--config", p(&cfg)]);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(&out_dir.join("manifest.json"));
    assert_eq!(m["config"]["n_max"], 4);
    assert_eq!(m["config"]["lambda_overlap"], 2.5);
    assert_eq!(m["config"]["schedule"]["scale"], 0.5);
    assert_eq!(std::fs::read_to_string(out_dir.join("loss.csv")).unwrap().lines().count(), 31);

    std::fs::write(&cfg, "n_maximum = 9\n").unwrap();
    let out = run(&args);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn mosaic_expand_and_tile_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = fixture(dir.path());
    let mosaic = dir.path().join("mosaic");
    let out = run(&quick("mosaic", &d, &mosaic));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(json(&mosaic.join("manifest.json"))["metrics"]["discrete_overlap"].is_number());

    let expand = dir.path().join("expand");
    let mut args = quick("expand", &d, &expand);
    extend(&mut args, &["--canvas", "64x56"]);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&expand.join("elements.json"))["canvas"], serde_json::json!([64, 56]));

    let tile = dir.path().join("tile");
    let mut args = quick("tile", &d, &tile);
    let elements = expand.join("elements.json");
    extend(&mut args, &["--elements", p(&elements)]);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let missing = dir.path().join("tile2");
    let out = run(&quick("tile", &d, &missing));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn baseline_writes_a_discrete_document() {
    let dir = tempfile::tempdir().unwrap();
    let d = fixture(dir.path());
    let out_dir = dir.path().join("base");
    let out = run(&[
        "baseline",
        "--image",
        p(&d.join("image.png")),
        "--patch",
        p(&d.join("patch_1.png")),
        "--patch",
        p(&d.join("patch_2.png")),
        "--positions",
        "48x48",
        "--no-orientation",
        "--no-color",
        "--out",
        p(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let found = json(&out_dir.join("discrete.json"));
    let truth = json(&d.join("truth.json"));
    assert_eq!(found["elements"].as_array().unwrap().len(), truth["elements"].as_array().unwrap().len());
    assert!(found["elements"][0]["type"].is_number());
}

#[test]
fn gradcheck_prints_a_report() {
    let out = run(&["gradcheck", "--seed", "7", "--scenes", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["losses"].as_array().unwrap().len(), 3);
    assert!(report["losses"][0]["classes"][0]["median_rel_error"].is_number());
    assert!(report["points"].as_array().unwrap().is_empty());
}
