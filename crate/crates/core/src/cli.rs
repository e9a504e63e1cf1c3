//! The `npbg` command line.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fitting::{
    evaluate, fit_with, initial_descriptors, render_view, write_history_csv, FitConfig, FitProgress,
    InputKind, LossKind,
};
use crate::geometry::{voxel_downsample, Camera, CameraJson, RigidTransform};
use crate::raster::{load_descriptors, save_descriptors, DescriptorSet};
use crate::rendernet::{RenderNetConfig, RenderNetParams};
use crate::sceneio::{
    compose_scenes, generate_synthetic, load_scene, orbit_camera, save_scene, tensor_to_image, Preset,
    SceneDataset, Split, SynthSpec,
};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";

#[derive(Debug, Parser, Serialize)]
#[command(name = "npbg", version, about = "Neural point-based graphics on the CPU")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic scene with ground-truth renders.
    Synth(SynthArgs),
    /// Fit a network and per-scene descriptors to one or more scenes.
    Fit(FitArgs),
    /// Fit fresh descriptors (and the network) to a new scene from a checkpoint.
    Finetune(FinetuneArgs),
    /// Render images from a checkpoint.
    Render(RenderArgs),
    /// Render the holdout views and report PSNR and L1.
    Eval(EvalArgs),
    /// Merge scene B, moved by a rigid transform, into scene A.
    Compose(ComposeArgs),
    /// Voxel-downsample a scene's point cloud.
    Downsample(DownsampleArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value = "cube", value_parser = parse_preset)]
    pub preset: Preset,
    /// Training points; defaults depend on the preset.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, default_value_t = 20)]
    pub views: usize,
    #[arg(long, default_value_t = 5)]
    pub holdout_every: usize,
    #[arg(long, default_value_t = 3.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value_t = 128)]
    pub height: usize,
    #[arg(long, default_value_t = 10)]
    pub density_factor: usize,
    #[arg(long, default_value_t = 10.0)]
    pub min_elevation: f64,
    #[arg(long, default_value_t = 40.0)]
    pub max_elevation: f64,
    #[arg(long, default_value_t = 2.0)]
    pub texture_frequency: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct NetArgs {
    #[arg(long, default_value_t = 5)]
    pub levels: usize,
    #[arg(long, default_value_t = 8)]
    pub in_channels: usize,
    #[arg(long, default_value_t = 8)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 4)]
    pub pyramid_levels: usize,
}

impl NetArgs {
    pub fn config(&self) -> RenderNetConfig {
        RenderNetConfig {
            levels: self.levels,
            in_channels: self.in_channels,
            base_channels: self.base_channels,
            pyramid_levels: self.pyramid_levels,
        }
    }
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 1e-4)]
    pub lr_net: f64,
    #[arg(long, default_value_t = 1e-1)]
    pub lr_desc: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 64)]
    pub crop: usize,
    #[arg(long, default_value_t = 0.5)]
    pub zoom_min: f64,
    #[arg(long, default_value_t = 2.0)]
    pub zoom_max: f64,
    /// l1, mse or fixed-feature.
    #[arg(long, default_value = "l1", value_parser = parse_loss)]
    pub loss: LossKind,
    /// descriptors or colors.
    #[arg(long, default_value = "descriptors", value_parser = parse_input)]
    pub input: InputKind,
    /// Seeds batch sampling and, for `fit`, network initialization.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write checkpoints every N steps (0 = final only).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
}

impl TrainArgs {
    pub fn config(&self) -> FitConfig {
        FitConfig {
            lr_net: self.lr_net,
            lr_desc: self.lr_desc,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            steps: self.steps,
            crop: self.crop,
            zoom_min: self.zoom_min,
            zoom_max: self.zoom_max,
            loss: self.loss,
            input: self.input,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// Scene directory; repeat for multi-scene pretraining.
    #[arg(long = "scene", required = true)]
    pub scenes: Vec<PathBuf>,
    #[command(flatten)]
    pub net: NetArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct SourceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub scene: PathBuf,
    /// NPBD file; defaults to the scene's descriptors.npbd, else zeros.
    #[arg(long)]
    pub descriptors: Option<PathBuf>,
    /// Use point colors instead of descriptors (3-channel networks).
    #[arg(long, default_value = "descriptors", value_parser = parse_input)]
    pub input: InputKind,
    /// Supersampling factor for the raw images: 1, 2 or 4.
    #[arg(long, default_value_t = 1)]
    pub aa: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Camera JSON: one camera object, or a list of {"image", "camera"} entries.
    #[arg(long, conflicts_with = "orbit_frames")]
    pub camera: Option<PathBuf>,
    /// Turntable frame count; enables the orbit spec.
    #[arg(long = "frames")]
    pub orbit_frames: Option<usize>,
    /// Orbit center as x,y,z.
    #[arg(long, default_value = "0,0,0", value_parser = parse_vec3)]
    pub orbit_center: [f64; 3],
    #[arg(long, default_value_t = 3.0)]
    pub orbit_radius: f64,
    #[arg(long, default_value_t = 25.0)]
    pub orbit_elevation: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ComposeArgs {
    #[arg(long)]
    pub scene_a: PathBuf,
    #[arg(long)]
    pub scene_b: PathBuf,
    /// JSON {"R": [9 row-major], "t": [3]} applied to scene B.
    #[arg(long)]
    pub transform: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DownsampleArgs {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub voxel: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_loss(s: &str) -> std::result::Result<LossKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_input(s: &str) -> std::result::Result<InputKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_vec3(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| "expected three comma-separated numbers".to_string())
}

/// Rigid transform file for `compose`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformJson {
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    #[serde(rename = "t")]
    pub translation: [f64; 3],
}

impl TryFrom<TransformJson> for RigidTransform {
    type Error = Error;

    fn try_from(j: TransformJson) -> Result<Self> {
        RigidTransform::new(
            Matrix3::from_row_slice(&j.rotation),
            Vector3::from_column_slice(&j.translation),
        )
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, kind: &'static str) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(kind, path, e.to_string()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Creates `out`, refusing to write into any of the input directories.
fn prepare_out(out: &Path, inputs: &[&Path]) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let canon = |p: &Path| std::fs::canonicalize(p).ok();
    let o = canon(out);
    for input in inputs {
        if o.is_some() && canon(input) == o {
            return Err(Error::Config(format!(
                "output directory {} is also an input; pick a fresh directory",
                out.display()
            )));
        }
    }
    Ok(())
}

/// The resolved invocation, written next to every command's outputs.
#[derive(Serialize)]
struct Resolved<'a, T: Serialize> {
    version: &'static str,
    command: &'a str,
    args: &'a T,
    #[serde(skip_serializing_if = "Option::is_none")]
    fit: Option<&'a FitConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    net: Option<&'a RenderNetConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    synth: Option<&'a SynthSpec>,
}

fn write_resolved<T: Serialize>(
    out: &Path,
    command: &str,
    args: &T,
    fit: Option<&FitConfig>,
    net: Option<&RenderNetConfig>,
    synth: Option<&SynthSpec>,
) -> Result<()> {
    write_json(
        &out.join(RESOLVED_CONFIG),
        &Resolved {
            version: env!("CARGO_PKG_VERSION"),
            command,
            args,
            fit,
            net,
            synth,
        },
    )
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let base = SynthSpec::preset(args.preset);
    let spec = SynthSpec {
        preset: args.preset,
        points: args.points.unwrap_or(base.points),
        views: args.views,
        holdout_every: args.holdout_every,
        radius: args.radius,
        width: args.width,
        height: args.height,
        density_factor: args.density_factor,
        min_elevation_deg: args.min_elevation,
        max_elevation_deg: args.max_elevation,
        texture_frequency: args.texture_frequency,
    };
    spec.validate()?;
    prepare_out(&args.out, &[])?;
    let out = generate_synthetic(&spec, args.seed)?;
    save_scene(&args.out, &out.scene)?;
    write_json(&args.out.join("oracle_stats.json"), &out.stats)?;
    write_resolved(&args.out, "synth", args, None, None, Some(&spec))
}

fn scene_label(k: usize, dir: &Path) -> String {
    let stem = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let clean: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{k:02}_{clean}")
}

fn write_fit_outputs(
    dir: &Path,
    params: &RenderNetParams<f32>,
    descriptors: &[DescriptorSet<f32>],
    labels: &[String],
    input: InputKind,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    params.save(&dir.join("model.ckpt"))?;
    if input == InputKind::Descriptors {
        for (d, label) in descriptors.iter().zip(labels) {
            save_descriptors(&dir.join(format!("{label}.npbd")), d)?;
        }
    }
    Ok(())
}

fn run_fit(
    scene_dirs: &[PathBuf],
    scenes: &[SceneDataset],
    params: RenderNetParams<f32>,
    config: &FitConfig,
    out: &Path,
) -> Result<()> {
    let labels: Vec<String> = scene_dirs.iter().enumerate().map(|(k, d)| scene_label(k, d)).collect();
    let desc = initial_descriptors(scenes, &params, config.input)?;
    let every = config.checkpoint_every;
    let result = fit_with(scenes, params, desc, config, |p: &FitProgress<'_>| {
        if every > 0 && (p.step + 1) % every == 0 && p.step + 1 < config.steps {
            let dir = out.join("checkpoints").join(format!("step{:06}", p.step + 1));
            write_fit_outputs(&dir, p.params, p.descriptors, &labels, config.input)?;
        }
        Ok(())
    })?;
    write_fit_outputs(out, &result.params, &result.descriptors, &labels, config.input)?;
    write_history_csv(&out.join("loss.csv"), &result.history)
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let net = args.net.config();
    let config = args.train.config();
    net.validate()?;
    config.validate()?;
    let inputs: Vec<&Path> = args.scenes.iter().map(PathBuf::as_path).collect();
    let scenes = args.scenes.iter().map(|d| load_scene(d)).collect::<Result<Vec<_>>>()?;
    prepare_out(&args.out, &inputs)?;
    write_resolved(&args.out, "fit", args, Some(&config), Some(&net), None)?;
    let params = RenderNetParams::build(&net, config.seed)?;
    run_fit(&args.scenes, &scenes, params, &config, &args.out)
}

pub fn cmd_finetune(args: &FinetuneArgs) -> Result<()> {
    let config = args.train.config();
    config.validate()?;
    let params = RenderNetParams::load(&args.checkpoint)?;
    let scene = load_scene(&args.scene)?;
    prepare_out(&args.out, &[&args.scene])?;
    write_resolved(&args.out, "finetune", args, Some(&config), Some(params.config()), None)?;
    run_fit(std::slice::from_ref(&args.scene), std::slice::from_ref(&scene), params, &config, &args.out)
}

struct Source {
    params: RenderNetParams<f32>,
    scene: SceneDataset,
    desc: DescriptorSet<f32>,
}

fn load_source(s: &SourceArgs) -> Result<Source> {
    if ![1, 2, 4].contains(&s.aa) {
        return Err(Error::Config(format!("--aa must be 1, 2 or 4, got {}", s.aa)));
    }
    let params = RenderNetParams::load(&s.checkpoint)?;
    let scene = load_scene(&s.scene)?;
    let m = params.config().in_channels;
    let desc = match (s.input, &s.descriptors) {
        (InputKind::Colors, _) => initial_descriptors(std::slice::from_ref(&scene), &params, InputKind::Colors)?
            .pop()
            .expect("one scene"),
        (InputKind::Descriptors, Some(path)) => load_descriptors(path)?,
        (InputKind::Descriptors, None) => scene
            .descriptors
            .clone()
            .unwrap_or_else(|| DescriptorSet::zeros(scene.cloud.len(), m)),
    };
    if desc.len() != scene.cloud.len() || desc.width() != m {
        return Err(Error::Extent(format!(
            "descriptors are {}x{}, scene has {} points and the network takes {m} channels",
            desc.len(),
            desc.width(),
            scene.cloud.len()
        )));
    }
    Ok(Source { params, scene, desc })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum CameraFile {
    List(Vec<NamedCamera>),
    Single(CameraJson),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NamedCamera {
    image: String,
    camera: CameraJson,
}

fn render_targets(args: &RenderArgs, scene: &SceneDataset) -> Result<Vec<(String, Camera)>> {
    if let Some(path) = &args.camera {
        return match read_json::<CameraFile>(path, "camera JSON")? {
            CameraFile::Single(c) => Ok(vec![("render_000.png".into(), Camera::try_from(c)?)]),
            CameraFile::List(list) => list
                .into_iter()
                .map(|n| {
                    let name = Path::new(&n.image)
                        .file_name()
                        .map(|s| s.to_string_lossy().into_owned())
                        .ok_or_else(|| Error::malformed("camera JSON", path, "empty image name"))?;
                    Ok((name, Camera::try_from(n.camera)?))
                })
                .collect(),
        };
    }
    if let Some(frames) = args.orbit_frames {
        if frames == 0 {
            return Err(Error::Config("--frames must be positive".into()));
        }
        let reference = scene
            .views
            .first()
            .ok_or_else(|| Error::Config("scene has no views to take intrinsics from".into()))?;
        let c = &reference.camera;
        let center = Vector3::from(args.orbit_center);
        return (0..frames)
            .map(|i| {
                let az = 360.0 * i as f64 / frames as f64;
                let cam = orbit_camera(center, args.orbit_radius, az, args.orbit_elevation, c.fx, c.width, c.height)?;
                Ok((format!("frame_{i:03}.png"), cam))
            })
            .collect();
    }
    Ok(scene
        .views
        .iter()
        .map(|v| (v.image_name.clone(), v.camera.clone()))
        .collect())
}

pub fn cmd_render(args: &RenderArgs) -> Result<()> {
    let src = load_source(&args.source)?;
    let targets = render_targets(args, &src.scene)?;
    prepare_out(&args.out, &[&args.source.scene])?;
    write_resolved(&args.out, "render", args, None, Some(src.params.config()), None)?;
    for (name, cam) in targets {
        let img = tensor_to_image(&render_view(&src.params, &src.scene.cloud, &src.desc, &cam, args.source.aa)?)?;
        let path = args.out.join(&name);
        img.save_with_format(&path, image::ImageFormat::Png)
            .map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let src = load_source(&args.source)?;
    prepare_out(&args.out, &[&args.source.scene])?;
    write_resolved(&args.out, "eval", args, None, Some(src.params.config()), None)?;
    let report = evaluate(&src.scene, &src.params, &src.desc, Split::Holdout, args.source.aa)?;
    write_json(&args.out.join("eval.json"), &report)
}

pub fn cmd_compose(args: &ComposeArgs) -> Result<()> {
    let a = load_scene(&args.scene_a)?;
    let b = load_scene(&args.scene_b)?;
    let t = RigidTransform::try_from(read_json::<TransformJson>(&args.transform, "transform JSON")?)?;
    let composed = compose_scenes(&a, &b, &t)?;
    prepare_out(&args.out, &[&args.scene_a, &args.scene_b])?;
    save_scene(&args.out, &composed)?;
    write_resolved(&args.out, "compose", args, None, None, None)
}

/// Downsampled scenes keep their views; descriptors (if any) restart at zero
/// because points no longer correspond one-to-one.
pub fn cmd_downsample(args: &DownsampleArgs) -> Result<()> {
    let scene = load_scene(&args.scene)?;
    let cloud = voxel_downsample(&scene.cloud, args.voxel)?;
    let descriptors = scene
        .descriptors
        .as_ref()
        .map(|d| DescriptorSet::zeros(cloud.len(), d.width()));
    let out_scene = SceneDataset {
        cloud,
        descriptors,
        views: scene.views,
    };
    prepare_out(&args.out, &[&args.scene])?;
    save_scene(&args.out, &out_scene)?;
    write_resolved(&args.out, "downsample", args, None, None, None)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compose(a) => cmd_compose(a),
        Command::Downsample(a) => cmd_downsample(a),
    }
}

/// Parses `argv`, runs the command and returns the process exit code. Errors
/// are printed as one line, `error: <code>: <message>`.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("error: usage: {}", first.trim_start_matches("error: "));
            return 2;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.code());
            1
        }
    }
}
