//! Configuration precedence: preset defaults, then the config file, then flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use diffcomp::optimizer::{OptimizationConfig, Preset};
use serde_json::Value;

use crate::args::{OptimizeArgs, PresetArg};

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parse a TOML config document into a JSON tree.
pub fn read_config_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config_text(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn parse_config_text(text: &str) -> Result<Value> {
    let doc: toml::Table = toml::from_str(text)?;
    Ok(serde_json::to_value(doc)?)
}

fn preset_of(flag: Option<PresetArg>, file: Option<&Value>) -> Result<Preset> {
    if let Some(p) = flag {
        return Ok(match p {
            PresetArg::Paper => Preset::Paper,
            PresetArg::Desk => Preset::Desk,
        });
    }
    match file.and_then(|f| f.get("preset")) {
        None => Ok(Preset::Desk),
        Some(Value::String(s)) => Ok(s.parse()?),
        Some(other) => bail!("preset must be a string, got {other}"),
    }
}

/// Resolve the run configuration from an optional config tree and flags.
pub fn resolve(args: &OptimizeArgs, file: Option<Value>) -> Result<OptimizationConfig> {
    let preset = preset_of(args.preset, file.as_ref())?;
    let mut tree = serde_json::to_value(OptimizationConfig::preset(preset))?;
    if let Some(f) = file {
        merge(&mut tree, f);
    }
    let mut c: OptimizationConfig = serde_json::from_value(tree).context("invalid configuration")?;
    c.preset = preset;
    if let Some(v) = args.canvas {
        c.canvas = Some(v);
    }
    if let Some(v) = args.iters {
        c.schedule.total_iters = v;
    }
    if let Some(v) = args.schedule_scale {
        c.schedule.scale = v;
    }
    if let Some(v) = args.n_max {
        c.n_max = v;
    }
    if args.no_orientation {
        c.optimize_orientation = false;
    }
    if args.optimize_color {
        c.optimize_color = true;
    }
    if args.fixed_background {
        c.optimize_background = false;
    }
    if let Some(v) = args.lambda_overlap {
        c.lambda_overlap = v;
    }
    if let Some(v) = args.run.seed {
        c.seed = v;
    }
    if let Some(v) = args.snapshot_every {
        c.snapshot_every = v;
    }
    c.validate()?;
    Ok(c)
}
