//! Gated-convolution U-Net mapping a raw-image pyramid to RGB.
//!
//! Encoder stage `e` (1-based) runs at `1/2^(e-1)` resolution with
//! `base * 2^(e-1)` channels. Its input is the previous stage's output after
//! 2x2 box downsampling, concatenated with raw image `S[e]` when `e <= T`
//! (stage 1 consumes `S[1]` alone). After the last encoder stage one more
//! downsample feeds the bottleneck, which keeps the deepest encoder width. Decoder stages
//! mirror the encoder: nearest upsample, concatenate the matching encoder
//! output, two gated convs. A 1x1 convolution and a sigmoid produce RGB.
//!
//! Every stage is two 3x3 gated convolutions with padding 1.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const OUTPUT_CHANNELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderNetConfig {
    /// Number of down/up-sampling stages.
    pub levels: usize,
    /// Raw-image channel count (descriptor width `M`).
    pub in_channels: usize,
    pub base_channels: usize,
    /// Raw pyramid depth `T`, injected into the first `T` encoder stages.
    pub pyramid_levels: usize,
}

impl Default for RenderNetConfig {
    fn default() -> Self {
        RenderNetConfig {
            levels: 5,
            in_channels: 8,
            base_channels: 8,
            pyramid_levels: 4,
        }
    }
}

impl RenderNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.levels > 16 {
            return Err(Error::Config(format!("levels must be in 1..=16, got {}", self.levels)));
        }
        if self.pyramid_levels == 0 || self.pyramid_levels > self.levels {
            return Err(Error::Config(format!(
                "pyramid levels T={} must satisfy 1 <= T <= L={}",
                self.pyramid_levels, self.levels
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be at least 1".into()));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be at least 1".into()));
        }
        Ok(())
    }

    /// Input extents must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << self.levels
    }

    pub fn stage_width(&self, stage: usize) -> usize {
        self.base_channels << (stage - 1)
    }

    /// Same width as the deepest encoder stage.
    pub fn bottleneck_width(&self) -> usize {
        self.stage_width(self.levels)
    }

    /// `(name, shape)` of every parameter tensor in canonical order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut gated = |prefix: String, cin: usize, cout: usize| {
            for branch in ["feature", "gate"] {
                out.push((format!("{prefix}.{branch}.weight"), vec![cout, cin, 3, 3]));
                out.push((format!("{prefix}.{branch}.bias"), vec![cout]));
            }
        };
        for e in 1..=self.levels {
            let w = self.stage_width(e);
            let cin = if e == 1 {
                self.in_channels
            } else {
                self.stage_width(e - 1) + if e <= self.pyramid_levels { self.in_channels } else { 0 }
            };
            gated(format!("enc{e}.conv1"), cin, w);
            gated(format!("enc{e}.conv2"), w, w);
        }
        let wb = self.bottleneck_width();
        gated("bottleneck.conv1".into(), self.stage_width(self.levels), wb);
        gated("bottleneck.conv2".into(), wb, wb);
        for e in (1..=self.levels).rev() {
            let w = self.stage_width(e);
            let below = if e == self.levels { wb } else { self.stage_width(e + 1) };
            gated(format!("dec{e}.conv1"), below + w, w);
            gated(format!("dec{e}.conv2"), w, w);
        }
        out.push(("out.weight".into(), vec![OUTPUT_CHANNELS, self.stage_width(1), 1, 1]));
        out.push(("out.bias".into(), vec![OUTPUT_CHANNELS]));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layout().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// Network weights, in [`RenderNetConfig::layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderNetParams<R> {
    config: RenderNetConfig,
    names: Vec<String>,
    tensors: Vec<Tensor<R>>,
    index: HashMap<String, usize>,
}

/// Parameter handles recorded on a tape.
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<R: Real> RenderNetParams<R> {
    /// Uniform He initialization `U(-sqrt(6/fan_in), sqrt(6/fan_in))`; all biases zero.
    pub fn build(config: &RenderNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in config.layout() {
            let t = if shape.len() == 4 {
                let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
                let bound = (6.0 / fan_in).sqrt();
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| R::from_f64(rng.gen_range(-bound..bound))).collect();
                Tensor::from_vec(&shape, data)?
            } else {
                Tensor::zeros(&shape)
            };
            names.push(name);
            tensors.push(t);
        }
        Ok(Self::assemble(config.clone(), names, tensors))
    }

    fn assemble(config: RenderNetConfig, names: Vec<String>, tensors: Vec<Tensor<R>>) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        RenderNetParams {
            config,
            names,
            tensors,
            index,
        }
    }

    /// Validates named tensors against the layout of `config`.
    pub fn from_named(config: &RenderNetConfig, named: Vec<(String, Tensor<R>)>) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut by_name: HashMap<String, Tensor<R>> = HashMap::new();
        for (name, t) in named {
            if by_name.insert(name.clone(), t).is_some() {
                return Err(Error::Config(format!("duplicate parameter '{name}'")));
            }
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape) in layout {
            let t = by_name
                .remove(&name)
                .ok_or_else(|| Error::Config(format!("missing parameter '{name}' for this config")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter '{name}' has shape {:?}, config expects {:?}",
                    t.shape(),
                    shape
                )));
            }
            names.push(name);
            tensors.push(t);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Config(format!("unexpected parameter '{extra}' for this config")));
        }
        Ok(Self::assemble(config.clone(), names, tensors))
    }

    pub fn config(&self) -> &RenderNetConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<R>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<R>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<R>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn named(&self) -> Vec<(String, Tensor<R>)> {
        self.names.iter().cloned().zip(self.tensors.iter().cloned()).collect()
    }

    pub fn cast<S: Real>(&self) -> RenderNetParams<S> {
        RenderNetParams::assemble(
            self.config.clone(),
            self.names.clone(),
            self.tensors.iter().map(Tensor::cast).collect(),
        )
    }

    pub fn record(&self, tape: &mut Tape<R>, requires_grad: bool) -> Result<ParamVars> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.clone(), requires_grad))
            .collect::<Result<_>>()?;
        Ok(ParamVars { vars })
    }

    /// Records the network on `tape`. `raw` holds the `T` raw-image variables,
    /// finest first.
    pub fn forward_on_tape(&self, tape: &mut Tape<R>, params: &ParamVars, raw: &[Var]) -> Result<Var> {
        let cfg = &self.config;
        if raw.len() != cfg.pyramid_levels {
            return Err(Error::shape(
                "rendernet",
                format!("expected {} raw images, got {}", cfg.pyramid_levels, raw.len()),
            ));
        }
        let (m, h, w) = tape.value(raw[0]).chw()?;
        let div = cfg.divisor();
        if h % div != 0 || w % div != 0 {
            return Err(Error::Extent(format!(
                "raw image {h}x{w} is not divisible by 2^{} = {div}",
                cfg.levels
            )));
        }
        for (t, &v) in raw.iter().enumerate() {
            let want = [m, h >> t, w >> t];
            if tape.value(v).shape() != want || m != cfg.in_channels {
                return Err(Error::shape(
                    "rendernet",
                    format!(
                        "raw level {}: expected {:?}, got {:?}",
                        t + 1,
                        [cfg.in_channels, h >> t, w >> t],
                        tape.value(v).shape()
                    ),
                ));
            }
        }
        let p = |name: &str| params.vars[self.index[name]];
        let gated = |tape: &mut Tape<R>, x: Var, prefix: &str| -> Result<Var> {
            tape.gated_conv(
                x,
                p(&format!("{prefix}.feature.weight")),
                p(&format!("{prefix}.feature.bias")),
                p(&format!("{prefix}.gate.weight")),
                p(&format!("{prefix}.gate.bias")),
                1,
                1,
            )
        };
        let block = |tape: &mut Tape<R>, x: Var, prefix: &str| -> Result<Var> {
            let y = gated(tape, x, &format!("{prefix}.conv1"))?;
            gated(tape, y, &format!("{prefix}.conv2"))
        };

        let mut skips = Vec::with_capacity(cfg.levels);
        let mut x = raw[0];
        for e in 1..=cfg.levels {
            if e > 1 {
                x = tape.downsample2x(x)?;
                if e <= cfg.pyramid_levels {
                    x = tape.concat_channels(x, raw[e - 1])?;
                }
            }
            x = block(tape, x, &format!("enc{e}"))?;
            skips.push(x);
        }
        x = tape.downsample2x(x)?;
        x = block(tape, x, "bottleneck")?;
        for e in (1..=cfg.levels).rev() {
            x = tape.upsample2x(x)?;
            x = tape.concat_channels(x, skips[e - 1])?;
            x = block(tape, x, &format!("dec{e}"))?;
        }
        let y = tape.conv2d(x, p("out.weight"), p("out.bias"), 1, 0)?;
        tape.sigmoid(y)
    }

    /// Inference without gradients: `[3, H, W]` in `(0, 1)`.
    pub fn forward(&self, raw: &[Tensor<R>]) -> Result<Tensor<R>> {
        let mut tape = Tape::new();
        let params = self.record(&mut tape, false)?;
        let raw_vars = raw
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = self.forward_on_tape(&mut tape, &params, &raw_vars)?;
        Ok(tape.value(out).clone())
    }
}

impl RenderNetParams<f32> {
    /// Writes `<path>` (NPBGCKPT) and `<path>.json` (config).
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.named())?;
        let sidecar = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sidecar = sidecar_path(path);
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let config: RenderNetConfig = serde_json::from_str(&text)
            .map_err(|e| Error::malformed("checkpoint config", &sidecar, e.to_string()))?;
        Self::from_named(&config, load_checkpoint(path)?)
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
