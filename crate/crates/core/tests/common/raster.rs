//! Randomized raster instances and their independent checks.

use nalgebra::Vector3;
use npbg::geometry::{apply_transform, Camera, PointCloud, RigidTransform};
use npbg::raster::{merge_rasters, rasterize, rasterize_aa, DescriptorSet, RawImage};
use rand::Rng;

use super::*;

pub struct Instance {
    pub cloud: PointCloud,
    pub desc: DescriptorSet<f64>,
    pub cam: Camera,
}

/// Up to 500 points and 64x64 pixels, random camera.
pub fn raster_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.gen_range(0..=500);
    let m = rng.gen_range(1..=8);
    let (w, h) = (rng.gen_range(2..=64), rng.gen_range(2..=64));
    let cam = random_camera(rng, w, h);
    Instance {
        cloud: random_cloud(rng, n),
        desc: random_descriptors(rng, n, m),
        cam,
    }
}

/// Bitwise comparison of a raster against the per-pixel brute-force oracle.
pub fn matches_oracle(raw: &RawImage<f64>, inst: &Instance) -> Result<(), String> {
    let (winner, depth) = raster_oracle(&inst.cloud, &inst.cam);
    if raw.winner != winner {
        return Err("winner map differs".into());
    }
    if raw.depth.iter().zip(&depth).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err("depth map differs".into());
    }
    let want = channels_from_winners(&winner, &inst.desc, inst.cam.width, inst.cam.height);
    if raw.channels.shape() != [inst.desc.width(), inst.cam.height, inst.cam.width] {
        return Err(format!("channel shape {:?}", raw.channels.shape()));
    }
    if raw.channels.data().iter().zip(&want).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err("channels differ".into());
    }
    Ok(())
}

pub fn check_raster_instance(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let inst = raster_instance(rng);
    let raw = rasterize(&inst.cloud, &inst.desc, &inst.cam).map_err(|e| e.to_string())?;
    matches_oracle(&raw, &inst)
}

/// Scene `a` plus scene `b` moved by a random rigid transform: rasterizing the
/// union must equal merging the two separate rasters.
pub fn check_composition_instance(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let a = raster_instance(rng);
    let nb = rng.gen_range(0..=300);
    let b_cloud = random_cloud(rng, nb);
    let b_desc = random_descriptors(rng, nb, a.desc.width());
    let t = RigidTransform::new(
        random_rotation(rng),
        Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)),
    )
    .map_err(|e| e.to_string())?;
    // Sometimes reuse a's points so exact depth ties across scenes occur.
    let (b_cloud, t) = if rng.gen_bool(0.25) {
        (a.cloud.clone(), RigidTransform::identity())
    } else {
        (b_cloud, t)
    };
    let b_desc = if b_cloud.len() == nb { b_desc } else { random_descriptors(rng, b_cloud.len(), a.desc.width()) };
    let moved = apply_transform(&b_cloud, &t);

    let union = a.cloud.union(&moved);
    let desc = a.desc.concat(&b_desc).map_err(|e| e.to_string())?;
    let whole = rasterize(&union, &desc, &a.cam).map_err(|e| e.to_string())?;
    let ra = rasterize(&a.cloud, &a.desc, &a.cam).map_err(|e| e.to_string())?;
    let rb = rasterize(&moved, &b_desc, &a.cam).map_err(|e| e.to_string())?;
    let merged = merge_rasters(&ra, &rb).map_err(|e| e.to_string())?;
    if !(merged.same_content(&whole) && merged.point_count == whole.point_count) {
        return Err("merged raster differs from the raster of the composed cloud".into());
    }
    Ok(())
}

/// Camera with twice the resolution, built from the continuous pixel model
/// directly: pixel `i` at scale 2 covers `[i/2 - 0.25, i/2 + 0.25)` of the
/// original image, so `c' = 2c + 0.5`.
pub fn doubled_camera(cam: &Camera) -> Camera {
    Camera {
        fx: 2.0 * cam.fx,
        fy: 2.0 * cam.fy,
        cx: 2.0 * cam.cx + 0.5,
        cy: 2.0 * cam.cy + 0.5,
        width: 2 * cam.width,
        height: 2 * cam.height,
        ..cam.clone()
    }
}

/// `rasterize_aa(k = 2)` against the brute-force oracle at 2x followed by the
/// box-average oracle.
pub fn check_aa_instance(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let inst = raster_instance(rng);
    let aa = rasterize_aa(&inst.cloud, &inst.desc, &inst.cam, 2).map_err(|e| e.to_string())?;
    let big = doubled_camera(&inst.cam);
    let (winner, _) = raster_oracle(&inst.cloud, &big);
    let fine = channels_from_winners(&winner, &inst.desc, big.width, big.height);
    let fine = Tensor::from_vec(&[inst.desc.width(), big.height, big.width], fine).unwrap();
    let want = box_down_oracle(&fine);
    if aa.channels.shape() != want.shape() {
        return Err(format!("shape {:?} vs {:?}", aa.channels.shape(), want.shape()));
    }
    if aa.channels.data().iter().zip(want.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err("anti-aliased channels differ".into());
    }
    Ok(())
}

/// Share of covered pixels won by far-plane points at each of `levels`
/// pyramid levels, finest first.
pub fn far_fractions(cloud: &PointCloud, far: &std::ops::Range<usize>, cam: &Camera, levels: usize) -> Vec<f64> {
    let desc = DescriptorSet::<f64>::zeros(cloud.len(), 1);
    let pyr = npbg::raster::rasterize_pyramid(cloud, &desc, cam, levels).unwrap();
    pyr.levels
        .iter()
        .map(|l| {
            let covered = l.winner.iter().filter(|&&w| w != u32::MAX).count();
            let far_won = l.winner.iter().filter(|&&w| w != u32::MAX && far.contains(&(w as usize))).count();
            far_won as f64 / covered.max(1) as f64
        })
        .collect()
}

/// Far-plane fractions for `draws` random two-planes viewpoints.
pub fn bleeding_draws(seed: u64, draws: usize) -> Vec<Vec<f64>> {
    use npbg::sceneio::{generate_synthetic, random_two_planes_camera, Preset, SynthSpec};
    let spec = SynthSpec {
        views: 1,
        holdout_every: 2,
        ..SynthSpec::preset(Preset::TwoPlanes)
    };
    let out = generate_synthetic(&spec, seed).unwrap();
    let far = out.far_plane.clone().expect("two-planes marks its far plane");
    let mut r = rng(seed ^ 0xB1EED);
    (0..draws)
        .map(|_| {
            let cam = random_two_planes_camera(&mut r, spec.radius, spec.width, spec.height).unwrap();
            far_fractions(&out.scene.cloud, &far, &cam, 4)
        })
        .collect()
}

pub fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}
