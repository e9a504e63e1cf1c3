//! Exact round trips of every on-disk format.

use std::path::Path;

use npbg::geometry::ply::{read_ply, write_ply};
use npbg::geometry::{Camera, CameraJson};
use npbg::raster::{load_descriptors, save_descriptors, DescriptorSet};
use npbg::rendernet::{RenderNetConfig, RenderNetParams};
use npbg::sceneio::{load_scene, save_scene};
use npbg::tensor::Tensor;
use rand::Rng;

use super::*;

fn ensure(ok: bool, what: &str) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(format!("{what} did not round-trip exactly"))
    }
}

/// Writes and re-reads PLY, camera JSON, NPBD, NPBGCKPT (+ sidecar) and a
/// whole scene directory under `dir`.
pub fn check_format_round_trips(dir: &Path, seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    let err = |e: npbg::Error| e.to_string();

    let mut cloud = random_cloud(&mut r, 300);
    cloud.colors = Some((0..300).map(|_| [r.gen(), r.gen(), r.gen()]).collect());
    let p = dir.join("c.ply");
    write_ply(&p, &cloud).map_err(err)?;
    ensure(read_ply(&p).map_err(err)? == cloud, "PLY")?;

    let cam = random_camera(&mut r, 37, 23);
    let text = serde_json::to_string(&cam.to_json()).unwrap();
    let back: CameraJson = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(Camera::try_from(back).map_err(err)? == cam, "camera JSON")?;

    let special = [0.0f32, -0.0, f32::MIN_POSITIVE, 1e-40, f32::MAX, -1.5];
    let mut vals: Vec<f32> = (0..300 * 4 - special.len()).map(|_| r.gen_range(-3.0..3.0)).collect();
    vals.extend_from_slice(&special);
    let desc = DescriptorSet::from_tensor(Tensor::from_vec(&[300, 4], vals).unwrap()).unwrap();
    let p = dir.join("d.npbd");
    save_descriptors(&p, &desc).map_err(err)?;
    let d2 = load_descriptors(&p).map_err(err)?;
    let bits = |d: &DescriptorSet<f32>| d.values().data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(bits(&d2) == bits(&desc) && d2.values().shape() == desc.values().shape(), "NPBD")?;

    let cfg = RenderNetConfig {
        levels: 3,
        in_channels: 4,
        base_channels: 3,
        pyramid_levels: 2,
    };
    let params = RenderNetParams::<f32>::build(&cfg, r.gen()).map_err(err)?;
    let p = dir.join("m.ckpt");
    params.save(&p).map_err(err)?;
    ensure(RenderNetParams::load(&p).map_err(err)? == params, "checkpoint")?;

    let mut scene = scene::tiny_scene(seed);
    scene.descriptors = Some(desc_for(&mut r, scene.cloud.len()));
    let sd = dir.join("scene");
    save_scene(&sd, &scene).map_err(err)?;
    ensure(load_scene(&sd).map_err(err)? == scene, "scene directory")?;
    Ok(())
}

fn desc_for(r: &mut ChaCha8Rng, n: usize) -> DescriptorSet<f32> {
    let vals = (0..n * 4).map(|_| r.gen_range(-1.0..1.0)).collect();
    DescriptorSet::from_tensor(Tensor::from_vec(&[n, 4], vals).unwrap()).unwrap()
}
