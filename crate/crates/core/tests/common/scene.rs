//! Small synthetic scenes and networks for fast fitting tests.

use npbg::fitting::FitConfig;
use npbg::rendernet::{RenderNetConfig, RenderNetParams};
use npbg::sceneio::{generate_synthetic, Preset, SceneDataset, SynthSpec};

/// 32x32 views, 4 train + 2 holdout.
pub fn tiny_spec(preset: Preset) -> SynthSpec {
    SynthSpec {
        points: 6000,
        views: 6,
        holdout_every: 3,
        width: 32,
        height: 32,
        ..SynthSpec::preset(preset)
    }
}

pub fn tiny_scene(seed: u64) -> SceneDataset {
    generate_synthetic(&tiny_spec(Preset::Cube), seed).unwrap().scene
}

pub fn tiny_net_config(in_channels: usize) -> RenderNetConfig {
    RenderNetConfig {
        levels: 2,
        in_channels,
        base_channels: 4,
        pyramid_levels: 2,
    }
}

pub fn tiny_net(seed: u64) -> RenderNetParams<f32> {
    RenderNetParams::build(&tiny_net_config(4), seed).unwrap()
}

pub fn tiny_fit(steps: usize, seed: u64) -> FitConfig {
    FitConfig {
        steps,
        crop: 16,
        lr_net: 1e-3,
        lr_desc: 0.1,
        seed,
        ..FitConfig::default()
    }
}
