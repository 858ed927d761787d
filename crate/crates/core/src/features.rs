//! Fixed multi-scale convolutional feature extractor for the style loss.
//!
//! Each stage is a same-size convolution with reflect padding, a leaky
//! rectifier (slope 0.01) and a 2x average pool. Tap points expose the
//! activations before pooling. Default weights are uniform in
//! `[-1, 1) / sqrt(fan_in)` drawn from a SplitMix64 stream.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbmImage;
use crate::pyramid::reflect;
use crate::rng::{Stream, STREAM_EXTRACTOR};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_CHANNELS: [usize; 4] = [16, 32, 64, 64];

/// Channel-major feature map: `data[c * w * h + y * w + x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, width: usize, height: usize) -> Self {
        Self {
            channels,
            width,
            height,
            data: vec![0.0; channels * width * height],
        }
    }

    /// RGB channels of an image.
    pub fn from_rgb(img: &RgbmImage) -> Self {
        let (w, h) = img.dims();
        let mut f = Self::zeros(3, w, h);
        for (p, px) in img.pixels().enumerate() {
            for c in 0..3 {
                f.data[c * w * h + p] = px[c];
            }
        }
        f
    }

    pub fn positions(&self) -> usize {
        self.width * self.height
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.positions();
        &self.data[c * n..(c + 1) * n]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSpec {
    #[serde(rename = "out")]
    pub out_channels: usize,
    #[serde(rename = "in")]
    pub in_channels: usize,
    pub kernel: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub spec: StageSpec,
    /// `out x in x k x k`, row-major.
    pub weights: Vec<f64>,
}

impl Stage {
    #[inline]
    fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        let k = self.spec.kernel;
        self.weights[((o * self.spec.in_channels + i) * k + ky) * k + kx]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorConfig {
    pub channels: Vec<usize>,
    pub kernel: usize,
    /// Stage indices exposed as style levels; all stages when `None`.
    pub taps: Option<Vec<usize>>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            channels: DEFAULT_CHANNELS.to_vec(),
            kernel: 3,
            taps: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    pub stages: Vec<Stage>,
    pub taps: Vec<usize>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct WeightsHeader {
    stages: Vec<StageSpec>,
    #[serde(default)]
    taps: Option<Vec<usize>>,
}

pub fn make_fixed_extractor(seed: u64, config: &ExtractorConfig) -> Result<FeatureExtractor> {
    if config.channels.is_empty() {
        return Err(Error::invalid("extractor", "at least one stage is required"));
    }
    if config.kernel == 0 || config.kernel % 2 == 0 {
        return Err(Error::invalid("extractor", "kernel size must be odd"));
    }
    let mut rng = Stream::named(seed, STREAM_EXTRACTOR);
    let mut stages = Vec::with_capacity(config.channels.len());
    let mut in_channels = 3;
    for &out in &config.channels {
        let spec = StageSpec {
            out_channels: out,
            in_channels,
            kernel: config.kernel,
        };
        let fan_in = (in_channels * config.kernel * config.kernel) as f64;
        let scale = 1.0 / fan_in.sqrt();
        let n = out * in_channels * config.kernel * config.kernel;
        let weights = (0..n).map(|_| rng.range(-1.0, 1.0) * scale).collect();
        stages.push(Stage { spec, weights });
        in_channels = out;
    }
    let taps = config.taps.clone().unwrap_or_else(|| (0..stages.len()).collect());
    FeatureExtractor::new(stages, taps, seed)
}

/// Per-stage activations kept for the reverse pass.
#[derive(Clone, Debug)]
pub struct FeatureTape {
    inputs: Vec<FeatureMap>,
    outputs: Vec<FeatureMap>,
    image_dims: (usize, usize),
}

impl FeatureTape {
    /// Sign of every rectifier input, stage by stage.
    pub fn rectifier_pattern(&self) -> Vec<bool> {
        self.outputs.iter().flat_map(|o| o.data.iter().map(|&v| v >= 0.0)).collect()
    }
}

impl FeatureExtractor {
    pub fn new(stages: Vec<Stage>, taps: Vec<usize>, seed: u64) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::invalid("extractor", "at least one stage is required"));
        }
        let mut in_channels = 3;
        for (k, s) in stages.iter().enumerate() {
            let sp = s.spec;
            if sp.in_channels != in_channels {
                return Err(Error::invalid(
                    "extractor",
                    format!("stage {} expects {} input channels, got {}", k + 1, sp.in_channels, in_channels),
                ));
            }
            if sp.kernel % 2 == 0 || s.weights.len() != sp.out_channels * sp.in_channels * sp.kernel * sp.kernel {
                return Err(Error::invalid("extractor", format!("stage {} has malformed weights", k + 1)));
            }
            in_channels = sp.out_channels;
        }
        if taps.is_empty() || taps.iter().any(|&t| t >= stages.len()) || taps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("extractor", "taps must be increasing stage indices"));
        }
        Ok(Self { stages, taps, seed })
    }

    /// Read a weights file: one JSON header line declaring the stage shapes,
    /// then little-endian `f32` weights in stage order.
    pub fn from_weights_file(path: &Path) -> Result<Self> {
        let load_err = |reason: String| Error::Load {
            path: path.to_path_buf(),
            reason,
        };
        let file = std::fs::File::open(path).map_err(|e| load_err(e.to_string()))?;
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        reader.read_line(&mut line).map_err(|e| load_err(e.to_string()))?;
        let header: WeightsHeader = serde_json::from_str(line.trim()).map_err(|e| load_err(e.to_string()))?;
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes).map_err(|e| load_err(e.to_string()))?;
        let total: usize = header
            .stages
            .iter()
            .map(|s| s.out_channels * s.in_channels * s.kernel * s.kernel)
            .sum();
        if bytes.len() != total * 4 {
            return Err(load_err(format!("expected {} weights, found {} bytes", total, bytes.len())));
        }
        let mut values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
        let stages: Vec<Stage> = header
            .stages
            .iter()
            .map(|&spec| {
                let n = spec.out_channels * spec.in_channels * spec.kernel * spec.kernel;
                Stage {
                    spec,
                    weights: values.by_ref().take(n).collect(),
                }
            })
            .collect();
        let taps = header.taps.unwrap_or_else(|| (0..stages.len()).collect());
        Self::new(stages, taps, 0)
    }

    /// Write the weights file format read by [`Self::from_weights_file`].
    pub fn write_weights_file(&self, path: &Path) -> Result<()> {
        let header = WeightsHeader {
            stages: self.stages.iter().map(|s| s.spec).collect(),
            taps: Some(self.taps.clone()),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for s in &self.stages {
            for w in &s.weights {
                out.extend_from_slice(&(*w as f32).to_le_bytes());
            }
        }
        std::fs::write(path, out).map_err(|e| Error::Save {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    pub fn tap_count(&self) -> usize {
        self.taps.len()
    }

    /// Smallest square input that survives every pooling step.
    pub fn min_size(&self) -> usize {
        1 << self.stages.len().saturating_sub(1)
    }

    pub fn extract(&self, img: &RgbmImage) -> Result<Vec<FeatureMap>> {
        self.extract_with_tape(img).map(|(f, _)| f)
    }

    pub fn extract_with_tape(&self, img: &RgbmImage) -> Result<(Vec<FeatureMap>, FeatureTape)> {
        let min = self.min_size();
        if img.width() < min || img.height() < min {
            return Err(Error::TooSmall {
                width: img.width(),
                height: img.height(),
                min,
            });
        }
        let mut inputs = Vec::with_capacity(self.stages.len());
        let mut outputs = Vec::with_capacity(self.stages.len());
        let mut x = FeatureMap::from_rgb(img);
        for (k, stage) in self.stages.iter().enumerate() {
            let mut y = conv_forward(stage, &x);
            for v in &mut y.data {
                if *v < 0.0 {
                    *v *= LEAKY_SLOPE;
                }
            }
            let next = if k + 1 < self.stages.len() { Some(avg_pool(&y)) } else { None };
            inputs.push(x);
            outputs.push(y);
            match next {
                Some(n) => x = n,
                None => break,
            }
        }
        let taps = self.taps.iter().map(|&t| outputs[t].clone()).collect();
        Ok((
            taps,
            FeatureTape {
                inputs,
                outputs,
                image_dims: img.dims(),
            },
        ))
    }

    /// Pull tap adjoints back to an image adjoint (RGB only; mask zero).
    pub fn backward(&self, tape: &FeatureTape, tap_adjoints: &[FeatureMap]) -> Result<RgbmImage> {
        if tap_adjoints.len() != self.taps.len() {
            return Err(Error::Shape(format!(
                "{} tap adjoints for {} taps",
                tap_adjoints.len(),
                self.taps.len()
            )));
        }
        let mut d: Option<FeatureMap> = None;
        for k in (0..self.stages.len()).rev() {
            let out = &tape.outputs[k];
            let mut dy = match d.take() {
                Some(dp) => avg_pool_adjoint(&dp, out.width, out.height),
                None => FeatureMap::zeros(out.channels, out.width, out.height),
            };
            if let Some(t) = self.taps.iter().position(|&t| t == k) {
                let a = &tap_adjoints[t];
                if a.data.len() != dy.data.len() {
                    return Err(Error::Shape(format!("tap {} adjoint has the wrong size", t + 1)));
                }
                for (x, y) in dy.data.iter_mut().zip(&a.data) {
                    *x += y;
                }
            }
            for (g, &v) in dy.data.iter_mut().zip(&out.data) {
                if v <= 0.0 {
                    *g *= LEAKY_SLOPE;
                }
            }
            d = Some(conv_adjoint(&self.stages[k], &dy, &tape.inputs[k]));
        }
        let d = d.expect("at least one stage");
        let (w, h) = tape.image_dims;
        let mut img = RgbmImage::new(w, h);
        let n = w * h;
        for (p, px) in img.data_mut().chunks_exact_mut(4).enumerate() {
            for c in 0..3 {
                px[c] = d.data[c * n + p];
            }
        }
        Ok(img)
    }
}

fn pad_reflect(x: &FeatureMap, pad: usize) -> (Vec<f64>, usize, usize) {
    let (w, h) = (x.width, x.height);
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let mut out = vec![0.0; x.channels * pw * ph];
    for c in 0..x.channels {
        let src = x.channel(c);
        let dst = &mut out[c * pw * ph..(c + 1) * pw * ph];
        for py in 0..ph {
            let sy = reflect(py as isize - pad as isize, h);
            for px in 0..pw {
                let sx = reflect(px as isize - pad as isize, w);
                dst[py * pw + px] = src[sy * w + sx];
            }
        }
    }
    (out, pw, ph)
}

fn conv_forward(stage: &Stage, x: &FeatureMap) -> FeatureMap {
    let sp = stage.spec;
    let k = sp.kernel;
    let (w, h) = (x.width, x.height);
    let (padded, pw, ph) = pad_reflect(x, k / 2);
    let mut out = FeatureMap::zeros(sp.out_channels, w, h);
    out.data.par_chunks_mut(w * h).enumerate().for_each(|(o, dst)| {
        for i in 0..sp.in_channels {
            let src = &padded[i * pw * ph..(i + 1) * pw * ph];
            for ky in 0..k {
                for kx in 0..k {
                    let wt = stage.weight(o, i, ky, kx);
                    for y in 0..h {
                        let row = &src[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                        let out_row = &mut dst[y * w..(y + 1) * w];
                        for (a, b) in out_row.iter_mut().zip(row) {
                            *a += wt * b;
                        }
                    }
                }
            }
        }
    });
    out
}

fn conv_adjoint(stage: &Stage, dy: &FeatureMap, x: &FeatureMap) -> FeatureMap {
    let sp = stage.spec;
    let k = sp.kernel;
    let pad = k / 2;
    let (w, h) = (x.width, x.height);
    let (pw, ph) = (w + 2 * pad, h + 2 * pad);
    let mut dx = FeatureMap::zeros(sp.in_channels, w, h);
    dx.data.par_chunks_mut(w * h).enumerate().for_each(|(i, dst)| {
        let mut dp = vec![0.0; pw * ph];
        for o in 0..sp.out_channels {
            let g = dy.channel(o);
            for ky in 0..k {
                for kx in 0..k {
                    let wt = stage.weight(o, i, ky, kx);
                    for y in 0..h {
                        let grow = &g[y * w..(y + 1) * w];
                        let prow = &mut dp[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                        for (a, b) in prow.iter_mut().zip(grow) {
                            *a += wt * b;
                        }
                    }
                }
            }
        }
        for py in 0..ph {
            let sy = reflect(py as isize - pad as isize, h);
            for px in 0..pw {
                let sx = reflect(px as isize - pad as isize, w);
                dst[sy * w + sx] += dp[py * pw + px];
            }
        }
    });
    dx
}

fn avg_pool(x: &FeatureMap) -> FeatureMap {
    let (w, h) = (x.width / 2, x.height / 2);
    let mut out = FeatureMap::zeros(x.channels, w, h);
    for c in 0..x.channels {
        let src = x.channel(c);
        for y in 0..h {
            for xx in 0..w {
                let a = (2 * y) * x.width + 2 * xx;
                let b = a + x.width;
                out.data[c * w * h + y * w + xx] = 0.25 * (src[a] + src[a + 1] + src[b] + src[b + 1]);
            }
        }
    }
    out
}

fn avg_pool_adjoint(d: &FeatureMap, width: usize, height: usize) -> FeatureMap {
    let mut out = FeatureMap::zeros(d.channels, width, height);
    let n = width * height;
    for c in 0..d.channels {
        for y in 0..d.height {
            for x in 0..d.width {
                let g = 0.25 * d.data[c * d.width * d.height + y * d.width + x];
                let a = c * n + (2 * y) * width + 2 * x;
                out.data[a] += g;
                out.data[a + 1] += g;
                out.data[a + width] += g;
                out.data[a + width + 1] += g;
            }
        }
    }
    out
}
