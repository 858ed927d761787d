use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "diffcomp", version, about = "Differentiable compositing of discrete pattern elements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Recover the element set that reconstructs a pattern image.
    Decompose(OptimizeArgs),
    /// Synthesize elements on a new canvas in the style of an exemplar.
    Expand(OptimizeArgs),
    /// Restore the style of an edited element set; frozen elements stay put.
    Tile(OptimizeArgs),
    /// Reconstruct an arbitrary image with non-overlapping elements.
    Mosaic(OptimizeArgs),
    /// Render an element document with the hard compositor.
    Render(RenderArgs),
    /// Greedy template-matching decomposition over a parameter grid.
    Baseline(BaselineArgs),
    /// Compare analytic gradients with finite differences on random scenes.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic scene with known ground truth.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
pub struct LibraryArgs {
    /// Patch PNG; repeat for more types, in type order.
    #[arg(long = "patch", alias = "patches", required = true, num_args = 1..)]
    pub patches: Vec<PathBuf>,
    /// Background as a hex color (#rrggbb), r,g,b in [0,1], or a PNG file.
    #[arg(long)]
    pub background: Option<String>,
    /// Patch pixel spacing in canvas pixels.
    #[arg(long, default_value_t = 1.0)]
    pub spacing: f64,
}

#[derive(Args, Debug, Clone)]
pub struct OptimizeArgs {
    /// Target image (decompose, mosaic) or style exemplar (expand, tile).
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub library: LibraryArgs,
    /// Starting element document; required by tile.
    #[arg(long)]
    pub elements: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output canvas for expand, WxH.
    #[arg(long, value_parser = parse_canvas)]
    pub canvas: Option<(usize, usize)>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Total iterations before schedule scaling.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub schedule_scale: Option<f64>,
    /// Size of the initialization grid.
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub no_orientation: bool,
    #[arg(long)]
    pub optimize_color: bool,
    /// Keep the background color fixed.
    #[arg(long)]
    pub fixed_background: bool,
    #[arg(long)]
    pub lambda_overlap: Option<f64>,
    /// Style feature extractor weights file; seeded weights when absent.
    #[arg(long)]
    pub extractor: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
    /// Write the element set every N iterations.
    #[arg(long)]
    pub snapshot_every: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cap on worker threads; machine parallelism by default.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct RenderArgs {
    #[arg(long)]
    pub elements: PathBuf,
    #[command(flatten)]
    pub library: LibraryArgs,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Clone)]
pub struct BaselineArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[command(flatten)]
    pub library: LibraryArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Stop once the best remaining match has a mean error above this.
    #[arg(long, default_value_t = 0.02)]
    pub threshold: f64,
    /// Position grid, WxH samples.
    #[arg(long, value_parser = parse_canvas, default_value = "128x128")]
    pub positions: (usize, usize),
    #[arg(long, default_value_t = 36)]
    pub orientations: usize,
    /// Color levels per channel.
    #[arg(long, default_value_t = 3)]
    pub colors: usize,
    #[arg(long)]
    pub no_orientation: bool,
    #[arg(long)]
    pub no_color: bool,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug, Clone)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub scenes: usize,
    /// Central-difference step for every parameter class.
    #[arg(long, default_value_t = 1e-5)]
    pub fd_step: f64,
    /// Include every sampled point in the report.
    #[arg(long)]
    pub points: bool,
    /// Output directory; the report goes to standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub count: usize,
    /// Built-in shapes, in type order.
    #[arg(long, value_delimiter = ',', default_value = "disc,square")]
    pub shapes: Vec<String>,
    #[arg(long, default_value_t = 17)]
    pub patch_size: usize,
    #[arg(long, value_parser = parse_canvas, default_value = "128x128")]
    pub canvas: (usize, usize),
    /// none, uniform, or midpoints[:N] of an N-orientation grid.
    #[arg(long, default_value = "none")]
    pub rotation: String,
    #[arg(long)]
    pub no_overlap: bool,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresetArg {
    Paper,
    Desk,
}

pub fn parse_canvas(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    if w == 0 || h == 0 {
        return Err(format!("canvas {s:?} is empty"));
    }
    Ok((w, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canvas_sizes() {
        assert_eq!(parse_canvas("128x64"), Ok((128, 64)));
        assert_eq!(parse_canvas("3X4"), Ok((3, 4)));
        assert!(parse_canvas("0x4").is_err());
        assert!(parse_canvas("12").is_err());
    }

    #[test]
    fn definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
