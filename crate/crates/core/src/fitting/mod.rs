//! Joint optimization of the rendering network and per-scene descriptors.
//!
//! Each step samples one scene uniformly, draws a zoomed crop of one of its
//! training views, renders it through the raw pyramid and the network, and
//! takes one ADAM step on the network weights and on that scene's
//! descriptors. The network and every descriptor set keep separate moment
//! estimates and step counters.

mod adam;
mod batch;
mod loss;

pub use adam::{AdamHyper, AdamState};
pub use batch::{batch_for, make_batch, Batch};
pub use loss::{loss, loss_on_tape, FeatureStack, GatedLayer, LossKind, FEATURE_SEED, FEATURE_WIDTHS};

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{Camera, PointCloud};
use crate::raster::{rasterize_aa, rasterize_backward, rasterize_pyramid, pyramid_cameras, DescriptorSet};
use crate::rendernet::RenderNetParams;
use crate::sceneio::{image_to_tensor, l1, psnr, EvalRecord, EvalReport, SceneDataset, Split};
use crate::tensor::{Real, Tensor};

/// What the raw images carry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    /// Learned per-point descriptors, zero-initialized.
    #[default]
    Descriptors,
    /// Fixed per-point RGB colors (the color-input baseline); the network
    /// must take 3 input channels.
    Colors,
}

impl std::str::FromStr for InputKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "descriptors" => Ok(InputKind::Descriptors),
            "colors" => Ok(InputKind::Colors),
            other => Err(Error::Config(format!(
                "unknown input '{other}' (expected descriptors or colors)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub lr_net: f64,
    pub lr_desc: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub crop: usize,
    pub zoom_min: f64,
    pub zoom_max: f64,
    pub loss: LossKind,
    pub input: InputKind,
    pub seed: u64,
    /// Write checkpoints every this many steps (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lr_net: 1e-4,
            lr_desc: 1e-1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 2000,
            crop: 64,
            zoom_min: 0.5,
            zoom_max: 2.0,
            loss: LossKind::L1,
            input: InputKind::Descriptors,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl FitConfig {
    /// Learning rates may be zero (that group is frozen) but not negative.
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.lr_net) || !ok(self.lr_desc) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("ADAM betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("ADAM eps must be positive".into()));
        }
        if self.crop == 0 {
            return Err(Error::Config("crop must be positive".into()));
        }
        if !(self.zoom_min > 0.0 && self.zoom_min <= self.zoom_max && self.zoom_max.is_finite()) {
            return Err(Error::Config(format!(
                "zoom range [{}, {}] must be positive and ordered",
                self.zoom_min, self.zoom_max
            )));
        }
        Ok(())
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub scene: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: RenderNetParams<f32>,
    /// One set per scene (the fixed colors in [`InputKind::Colors`] mode).
    pub descriptors: Vec<DescriptorSet<f32>>,
    pub history: Vec<StepRecord>,
}

impl FitResult {
    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.loss).collect()
    }
}

/// Optimizer state visible to the per-step callback.
pub struct FitProgress<'a> {
    pub step: usize,
    pub record: StepRecord,
    pub params: &'a RenderNetParams<f32>,
    pub descriptors: &'a [DescriptorSet<f32>],
}

/// Point colors as a 3-wide, untrained descriptor set.
pub fn color_descriptors(cloud: &PointCloud) -> Result<DescriptorSet<f32>> {
    let colors = cloud
        .colors
        .as_ref()
        .ok_or_else(|| Error::Config("color input needs a point cloud with colors".into()))?;
    let data = colors.iter().flat_map(|c| c.map(|v| v as f32)).collect();
    let mut d = DescriptorSet::from_tensor(Tensor::from_vec(&[colors.len(), 3], data)?)?;
    d.requires_grad = false;
    Ok(d)
}

/// Initial raw-image sources for each scene.
pub fn initial_descriptors(
    scenes: &[SceneDataset],
    params: &RenderNetParams<f32>,
    input: InputKind,
) -> Result<Vec<DescriptorSet<f32>>> {
    let m = params.config().in_channels;
    scenes
        .iter()
        .map(|s| match input {
            InputKind::Descriptors => Ok(DescriptorSet::zeros(s.cloud.len(), m)),
            InputKind::Colors => {
                if m != 3 {
                    return Err(Error::Config(format!(
                        "color input needs in_channels = 3, network has {m}"
                    )));
                }
                color_descriptors(&s.cloud)
            }
        })
        .collect()
}

fn check_scenes(scenes: &[SceneDataset], params: &RenderNetParams<f32>, config: &FitConfig) -> Result<()> {
    if scenes.is_empty() {
        return Err(Error::Config("fit needs at least one scene".into()));
    }
    config.validate()?;
    let div = params.config().divisor();
    if config.crop % div != 0 {
        return Err(Error::Config(format!(
            "crop {} must be divisible by 2^levels = {div}",
            config.crop
        )));
    }
    for (k, s) in scenes.iter().enumerate() {
        s.validate()?;
        if s.cloud.is_empty() {
            return Err(Error::Config(format!("scene {k} has no points")));
        }
        if s.view_indices(Split::Train).is_empty() {
            return Err(Error::Config(format!("scene {k} has no training views")));
        }
        for v in &s.views {
            if config.crop > v.camera.width.min(v.camera.height) {
                return Err(Error::Config(format!(
                    "crop {} exceeds view '{}' ({}x{})",
                    config.crop, v.image_name, v.camera.width, v.camera.height
                )));
            }
        }
    }
    Ok(())
}

/// The loop shared by [`fit`] and [`finetune`]. `on_step` runs after every
/// update.
pub fn fit_with(
    scenes: &[SceneDataset],
    mut params: RenderNetParams<f32>,
    mut descriptors: Vec<DescriptorSet<f32>>,
    config: &FitConfig,
    mut on_step: impl FnMut(&FitProgress<'_>) -> Result<()>,
) -> Result<FitResult> {
    check_scenes(scenes, &params, config)?;
    if descriptors.len() != scenes.len() {
        return Err(Error::Config(format!(
            "{} descriptor sets for {} scenes",
            descriptors.len(),
            scenes.len()
        )));
    }
    for (k, (d, s)) in descriptors.iter().zip(scenes).enumerate() {
        if d.len() != s.cloud.len() || d.width() != params.config().in_channels {
            return Err(Error::Config(format!(
                "scene {k}: descriptors are {}x{}, expected {}x{}",
                d.len(),
                d.width(),
                s.cloud.len(),
                params.config().in_channels
            )));
        }
    }
    let hyper = config.hyper();
    let train_net = config.lr_net > 0.0;
    let mut net_state = AdamState::new(params.tensors());
    let mut desc_states: Vec<AdamState<f32>> =
        descriptors.iter().map(|d| AdamState::new([d.values()])).collect();
    let stack = FeatureStack::<f32>::new();
    let levels = params.config().pyramid_levels;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let k = rng.gen_range(0..scenes.len());
        let batch = make_batch(&scenes[k], config, &mut rng)?;
        let train_desc = descriptors[k].requires_grad && config.lr_desc > 0.0;
        let pyramid = rasterize_pyramid(&scenes[k].cloud, &descriptors[k], &batch.camera, levels)?;

        let mut tape = Tape::<f32>::new();
        let diverged = |e: Error| match e {
            Error::NonFinite { .. } => Error::Diverged { step },
            other => other,
        };
        let pv = params.record(&mut tape, train_net).map_err(diverged)?;
        let raw: Vec<Var> = pyramid
            .levels
            .iter()
            .map(|l| tape.leaf(l.channels.clone(), train_desc))
            .collect::<Result<_>>()
            .map_err(diverged)?;
        let out = params.forward_on_tape(&mut tape, &pv, &raw).map_err(diverged)?;
        let target = tape.constant(batch.target).map_err(diverged)?;
        let l = loss_on_tape(&mut tape, out, target, config.loss, &stack).map_err(diverged)?;
        let value = tape.value(l).item().expect("scalar loss").as_f64();
        if !value.is_finite() {
            return Err(Error::Diverged { step });
        }
        let mut grads = tape.backward(l).map_err(diverged)?;

        if train_net {
            let g: Vec<Option<Tensor<f32>>> = pv.vars().iter().map(|&v| grads.take(v)).collect();
            let mut ps: Vec<&mut Tensor<f32>> = params.tensors_mut().iter_mut().collect();
            net_state.update(&mut ps, &g, config.lr_net, &hyper)?;
        }
        if train_desc {
            let upstream = raw
                .iter()
                .map(|&v| grads.take(v).ok_or_else(|| Error::Autodiff("missing raw-image gradient".into())))
                .collect::<Result<Vec<_>>>()?;
            let g = rasterize_backward(&pyramid, &upstream)?;
            desc_states[k].update(&mut [descriptors[k].values_mut()], &[Some(g)], config.lr_desc, &hyper)?;
        }
        if params.tensors().iter().any(|t| !t.is_finite()) || !descriptors[k].values().is_finite() {
            return Err(Error::Diverged { step });
        }
        let record = StepRecord {
            step,
            scene: k,
            loss: value,
        };
        history.push(record);
        on_step(&FitProgress {
            step,
            record,
            params: &params,
            descriptors: &descriptors,
        })?;
    }
    Ok(FitResult {
        params,
        descriptors,
        history,
    })
}

/// Fits `params` and fresh descriptor sets to all `scenes`.
pub fn fit(scenes: &[SceneDataset], params: RenderNetParams<f32>, config: &FitConfig) -> Result<FitResult> {
    let desc = initial_descriptors(scenes, &params, config.input)?;
    fit_with(scenes, params, desc, config, |_| Ok(()))
}

/// Second stage: zero descriptors for a new scene, starting from pretrained
/// weights. With `lr_net = 0` only the descriptors move.
pub fn finetune(scene: &SceneDataset, pretrained: RenderNetParams<f32>, config: &FitConfig) -> Result<FitResult> {
    fit(std::slice::from_ref(scene), pretrained, config)
}

/// Rasterizes the pyramid for `camera` (optionally supersampled by `aa`) and
/// runs the network: `[3, H, W]`.
pub fn render_view<R: Real>(
    params: &RenderNetParams<R>,
    cloud: &PointCloud,
    desc: &DescriptorSet<R>,
    camera: &Camera,
    aa: usize,
) -> Result<Tensor<R>> {
    let levels = params.config().pyramid_levels;
    let raw = if aa == 1 {
        rasterize_pyramid(cloud, desc, camera, levels)?.channel_tensors()
    } else {
        pyramid_cameras(camera, levels)?
            .iter()
            .map(|c| rasterize_aa(cloud, desc, c, aa).map(|r| r.channels))
            .collect::<Result<Vec<_>>>()?
    };
    params.forward(&raw)
}

/// Mean loss over the full-resolution training views.
pub fn training_loss(
    scene: &SceneDataset,
    params: &RenderNetParams<f32>,
    desc: &DescriptorSet<f32>,
    kind: LossKind,
) -> Result<f64> {
    let train = scene.view_indices(Split::Train);
    let mut total = 0.0;
    for &i in &train {
        let v = &scene.views[i];
        let out = render_view(params, &scene.cloud, desc, &v.camera, 1)?;
        total += loss(&out, &image_to_tensor(&v.image), kind)?;
    }
    Ok(total / train.len().max(1) as f64)
}

/// PSNR and L1 on every view of `split`.
pub fn evaluate(
    scene: &SceneDataset,
    params: &RenderNetParams<f32>,
    desc: &DescriptorSet<f32>,
    split: Split,
    aa: usize,
) -> Result<EvalReport> {
    let mut records = Vec::new();
    for i in scene.view_indices(split) {
        let v = &scene.views[i];
        let out = render_view(params, &scene.cloud, desc, &v.camera, aa)?;
        let target = image_to_tensor(&v.image);
        records.push(EvalRecord {
            view: v.image_name.clone(),
            psnr: psnr(&out, &target)?,
            l1: l1(&out, &target)?,
        });
    }
    Ok(EvalReport::from_records(records))
}

/// `step,loss` lines with a header.
pub fn write_history_csv(path: &Path, history: &[StepRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "step,loss")?;
        for r in history {
            writeln!(w, "{},{}", r.step, r.loss)?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}
