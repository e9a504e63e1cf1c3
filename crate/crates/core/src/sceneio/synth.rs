//! Procedural test scenes with exact ground truth.
//!
//! Ground-truth images come from a second, much denser colored cloud sampled
//! from the same surfaces. It is rasterized at 4x resolution with the regular
//! z-buffer and box-averaged down, so the targets follow the same projection
//! conventions as the renderer.

use std::ops::Range;

use image::RgbImage;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SceneDataset, Split, View};
use crate::error::{Error, Result};
use crate::geometry::{camera_upscale, Camera, PointCloud};
use crate::raster::{ZBuffer, NONE};

/// Supersampling factor of the ground-truth renders.
pub const ORACLE_SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Axis-aligned unit cube centered at the origin.
    Cube,
    /// Sphere of radius [`SPHERE_RADIUS`] at the origin.
    Sphere,
    /// Sparse front plane `x = 0`, `|y|,|z| <= 1`, in front of a dense far
    /// plane `x = -1`, `|y|,|z| <= 0.5`, seen from around `+x`.
    TwoPlanes,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cube" => Ok(Preset::Cube),
            "sphere" => Ok(Preset::Sphere),
            "two-planes" => Ok(Preset::TwoPlanes),
            other => Err(Error::Config(format!(
                "unknown preset '{other}' (expected cube, sphere or two-planes)"
            ))),
        }
    }
}

pub const SPHERE_RADIUS: f64 = 0.7;
const FAR_PLANE_X: f64 = -1.0;
const FAR_HALF: f64 = 0.5;
const FRONT_HALF: f64 = 1.0;
/// Far-plane training grid is `FAR_GRID x FAR_GRID`.
const FAR_GRID: usize = 100;
/// Minimum front-plane ground-truth grid, fine enough to leave no holes at 4x.
const FRONT_ORACLE_GRID: usize = 512;
/// Two-planes cameras stay within this many degrees of the `+x` axis.
pub const TWO_PLANES_MAX_ANGLE_DEG: f64 = 15.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub preset: Preset,
    /// Training points (front-plane points for two-planes).
    pub points: usize,
    pub views: usize,
    /// Every `holdout_every`-th view (1-based) is held out.
    pub holdout_every: usize,
    pub radius: f64,
    pub width: usize,
    pub height: usize,
    /// Ground-truth cloud size as a multiple of `points`.
    pub density_factor: usize,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    /// Base frequency of the value-noise texture, in cycles per world unit.
    pub texture_frequency: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            preset: Preset::Cube,
            points: 60_000,
            views: 20,
            holdout_every: 5,
            radius: 3.0,
            width: 128,
            height: 128,
            density_factor: 10,
            min_elevation_deg: 10.0,
            max_elevation_deg: 40.0,
            texture_frequency: 2.0,
        }
    }
}

impl SynthSpec {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Cube => SynthSpec::default(),
            Preset::Sphere => SynthSpec {
                preset,
                points: 40_000,
                ..SynthSpec::default()
            },
            Preset::TwoPlanes => SynthSpec {
                preset,
                points: 4_000,
                ..SynthSpec::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points == 0 {
            return Err(Error::Config("synthetic scene needs at least one point".into()));
        }
        if self.views == 0 {
            return Err(Error::Config("synthetic scene needs at least one view".into()));
        }
        if self.holdout_every == 1 {
            return Err(Error::Config("holdout_every = 1 would leave no training views".into()));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::Config("image extents must be at least 2".into()));
        }
        if self.density_factor == 0 {
            return Err(Error::Config("density_factor must be positive".into()));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Config("orbit radius must be positive".into()));
        }
        if !(self.texture_frequency > 0.0) {
            return Err(Error::Config("texture_frequency must be positive".into()));
        }
        let elev = -89.0..=89.0;
        if !elev.contains(&self.min_elevation_deg)
            || !elev.contains(&self.max_elevation_deg)
            || self.min_elevation_deg > self.max_elevation_deg
        {
            return Err(Error::Config("elevation range must lie within (-90, 90) degrees".into()));
        }
        Ok(())
    }

    fn focal(&self) -> f64 {
        self.width as f64
    }
}

/// Hole statistics of the ground-truth renders. A pixel is interior when all
/// of its supersamples hit the analytic surface; a hole is an interior pixel
/// with at least one supersample that no oracle point reached.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleStats {
    pub oracle_points: usize,
    pub interior_pixels: usize,
    pub holes: usize,
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub scene: SceneDataset,
    /// The dense colored cloud the targets were rendered from.
    pub oracle: PointCloud,
    pub stats: OracleStats,
    /// Indices of far-plane points (two-planes only).
    pub far_plane: Option<Range<usize>>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(ix: i64, iy: i64, iz: i64, salt: u64) -> f64 {
    let mut h = splitmix(salt);
    for v in [ix, iy, iz] {
        h = splitmix(h ^ v as u64);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(p: &Vector3<f64>, salt: u64) -> f64 {
    let f = p.map(f64::floor);
    let t = (p - f).map(|v| v * v * (3.0 - 2.0 * v));
    let (x, y, z) = (f.x as i64, f.y as i64, f.z as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { t.x } else { 1.0 - t.x })
                    * (if dy == 1 { t.y } else { 1.0 - t.y })
                    * (if dz == 1 { t.z } else { 1.0 - t.z });
                acc += w * lattice(x + dx, y + dy, z + dz, salt);
            }
        }
    }
    acc
}

/// Three-octave value-noise color at `p`, quantized to multiples of 1/255.
pub fn noise_color(p: &Vector3<f64>, frequency: f64, seed: u64) -> [f64; 3] {
    let mut rgb = [0.0; 3];
    for (c, out) in rgb.iter_mut().enumerate() {
        let salt = seed.wrapping_mul(3).wrapping_add(c as u64);
        let mut v = 0.0;
        let mut amp = 1.0;
        let mut freq = frequency;
        for octave in 0..3u64 {
            v += amp * value_noise(&(p * freq), salt.wrapping_mul(7).wrapping_add(octave));
            amp *= 0.5;
            freq *= 2.0;
        }
        let v = v / 1.75;
        // Stretch contrast around the mean; raw value noise is mostly mid-gray.
        *out = ((0.5 + 2.0 * (v - 0.5)).clamp(0.0, 1.0) * 255.0).round() / 255.0;
    }
    rgb
}

fn cube_face_point(face: usize, a: f64, b: f64) -> Vector3<f64> {
    let s = if face % 2 == 0 { 0.5 } else { -0.5 };
    match face / 2 {
        0 => Vector3::new(s, a, b),
        1 => Vector3::new(a, s, b),
        _ => Vector3::new(a, b, s),
    }
}

fn sample_training(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (Vec<Vector3<f64>>, Option<Range<usize>>) {
    let n = spec.points;
    match spec.preset {
        Preset::Cube => {
            let pts = (0..n)
                .map(|_| {
                    let face = rng.gen_range(0..6);
                    cube_face_point(face, rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))
                })
                .collect();
            (pts, None)
        }
        Preset::Sphere => {
            let pts = (0..n)
                .map(|_| loop {
                    let v = Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0f64),
                    );
                    let r = v.norm();
                    if r > 1e-3 && r <= 1.0 {
                        break v * (SPHERE_RADIUS / r);
                    }
                })
                .collect();
            (pts, None)
        }
        Preset::TwoPlanes => {
            let mut pts: Vec<Vector3<f64>> = (0..n)
                .map(|_| {
                    Vector3::new(
                        0.0,
                        rng.gen_range(-FRONT_HALF..FRONT_HALF),
                        rng.gen_range(-FRONT_HALF..FRONT_HALF),
                    )
                })
                .collect();
            let start = pts.len();
            pts.extend(plane_grid(FAR_PLANE_X, FAR_HALF, FAR_GRID));
            let end = pts.len();
            (pts, Some(start..end))
        }
    }
}

/// Cell-centered `k x k` grid on the plane `x = x0`, `|y|,|z| <= half`.
fn plane_grid(x0: f64, half: f64, k: usize) -> impl Iterator<Item = Vector3<f64>> {
    let step = 2.0 * half / k as f64;
    (0..k).flat_map(move |j| {
        (0..k).map(move |i| Vector3::new(x0, -half + (i as f64 + 0.5) * step, -half + (j as f64 + 0.5) * step))
    })
}

fn sample_oracle(spec: &SynthSpec) -> Vec<Vector3<f64>> {
    let total = spec.points * spec.density_factor;
    match spec.preset {
        Preset::Cube => {
            let k = ((total as f64 / 6.0).sqrt().ceil() as usize).max(1);
            let step = 1.0 / k as f64;
            let mut pts = Vec::with_capacity(6 * k * k);
            for face in 0..6 {
                for j in 0..k {
                    for i in 0..k {
                        let a = -0.5 + (i as f64 + 0.5) * step;
                        let b = -0.5 + (j as f64 + 0.5) * step;
                        pts.push(cube_face_point(face, a, b));
                    }
                }
            }
            pts
        }
        Preset::Sphere => {
            // Fibonacci lattice: near-uniform spacing without clustering at poles.
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..total)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / total as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * i as f64;
                    Vector3::new(r * phi.cos(), r * phi.sin(), z) * SPHERE_RADIUS
                })
                .collect()
        }
        Preset::TwoPlanes => {
            // The front plane is solid in the ground truth; only the training
            // cloud is sparse there.
            let k = ((total as f64).sqrt().ceil() as usize).max(FRONT_ORACLE_GRID);
            let mut pts: Vec<_> = plane_grid(0.0, FRONT_HALF, k).collect();
            pts.extend(plane_grid(FAR_PLANE_X, FAR_HALF, ORACLE_SUPERSAMPLE * FAR_GRID));
            pts
        }
    }
}

/// Camera at `radius` from `center`, at the given azimuth (about `+z`, from
/// `+x`) and elevation, looking at `center` with `+z` up.
pub fn orbit_camera(
    center: Vector3<f64>,
    radius: f64,
    azimuth_deg: f64,
    elevation_deg: f64,
    focal: f64,
    width: usize,
    height: usize,
) -> Result<Camera> {
    let (az, el) = (azimuth_deg.to_radians(), elevation_deg.to_radians());
    let eye = center + radius * Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    Camera::look_at(eye, center, Vector3::z(), focal, width, height)
}

/// A two-planes viewpoint: azimuth and elevation each uniform within
/// `±TWO_PLANES_MAX_ANGLE_DEG` of the `+x` axis, looking at the origin.
pub fn random_two_planes_camera<G: Rng>(rng: &mut G, radius: f64, width: usize, height: usize) -> Result<Camera> {
    let m = TWO_PLANES_MAX_ANGLE_DEG;
    orbit_camera(
        Vector3::zeros(),
        radius,
        rng.gen_range(-m..=m),
        rng.gen_range(-m..=m),
        width as f64,
        width,
        height,
    )
}

fn view_cameras(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Camera>> {
    match spec.preset {
        Preset::TwoPlanes => (0..spec.views)
            .map(|_| random_two_planes_camera(rng, spec.radius, spec.width, spec.height))
            .collect(),
        _ => {
            let offset = rng.gen_range(0.0..360.0);
            (0..spec.views)
                .map(|i| {
                    let az = offset + 360.0 * i as f64 / spec.views as f64;
                    let el = rng.gen_range(spec.min_elevation_deg..=spec.max_elevation_deg);
                    orbit_camera(Vector3::zeros(), spec.radius, az, el, spec.focal(), spec.width, spec.height)
                })
                .collect()
        }
    }
}

/// Whether the ray from `origin` along `dir` hits the preset's surface.
fn analytic_hit(preset: Preset, origin: &Vector3<f64>, dir: &Vector3<f64>) -> bool {
    match preset {
        Preset::Cube => {
            let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
            for a in 0..3 {
                if dir[a].abs() < 1e-15 {
                    if origin[a].abs() > 0.5 {
                        return false;
                    }
                    continue;
                }
                let (ta, tb) = ((-0.5 - origin[a]) / dir[a], (0.5 - origin[a]) / dir[a]);
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
            t0 <= t1
        }
        Preset::Sphere => {
            let b = origin.dot(dir);
            let c = origin.norm_squared() - SPHERE_RADIUS * SPHERE_RADIUS;
            b * b - dir.norm_squared() * c >= 0.0 && b < 0.0
        }
        Preset::TwoPlanes => {
            let on_plane = |x0: f64, half: f64| {
                if dir.x.abs() < 1e-15 {
                    return false;
                }
                let t = (x0 - origin.x) / dir.x;
                let p = origin + t * dir;
                t > 0.0 && p.y.abs() <= half && p.z.abs() <= half
            };
            on_plane(0.0, FRONT_HALF) || on_plane(FAR_PLANE_X, FAR_HALF)
        }
    }
}

/// Renders one ground-truth view and accumulates hole statistics.
fn oracle_render(
    preset: Preset,
    oracle: &PointCloud,
    colors: &[[f64; 3]],
    cam: &Camera,
    stats: &mut OracleStats,
) -> Result<RgbImage> {
    let k = ORACLE_SUPERSAMPLE;
    let big = camera_upscale(cam, k);
    let zb = ZBuffer::build(oracle, &big)?;
    let eye = big.viewpoint();
    let rt = big.rotation.transpose();
    let inv = 1.0 / (k * k) as f64;
    let mut img = RgbImage::new(cam.width as u32, cam.height as u32);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut sum = [0.0; 3];
            let mut interior = true;
            let mut missing = false;
            for sy in 0..k {
                for sx in 0..k {
                    let (bx, by) = (x * k + sx, y * k + sy);
                    let w = zb.winner[by * big.width + bx];
                    if w == NONE {
                        missing = true;
                    } else {
                        for (s, c) in sum.iter_mut().zip(colors[w as usize]) {
                            *s += c;
                        }
                    }
                    if interior {
                        let d = Vector3::new(
                            (bx as f64 - big.cx) / big.fx,
                            (by as f64 - big.cy) / big.fy,
                            1.0,
                        );
                        interior = analytic_hit(preset, &eye, &(rt * d));
                    }
                }
            }
            if interior {
                stats.interior_pixels += 1;
                if missing {
                    stats.holes += 1;
                }
            }
            let px = sum.map(|s| (s * inv * 255.0).round().clamp(0.0, 255.0) as u8);
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    Ok(img)
}

/// Deterministic function of `(spec, seed)`.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let texture_seed = rng.gen::<u64>();
    let color = |p: &Vector3<f64>| noise_color(p, spec.texture_frequency, texture_seed);

    let (positions, far_plane) = sample_training(spec, &mut rng);
    let colors = positions.iter().map(color).collect();
    let cloud = PointCloud::new(positions, Some(colors))?;

    let oracle_pos = sample_oracle(spec);
    let oracle_colors: Vec<[f64; 3]> = oracle_pos.iter().map(color).collect();
    let oracle = PointCloud::new(oracle_pos, Some(oracle_colors.clone()))?;

    let cameras = view_cameras(spec, &mut rng)?;
    let mut stats = OracleStats {
        oracle_points: oracle.len(),
        ..OracleStats::default()
    };
    let mut views = Vec::with_capacity(cameras.len());
    for (i, camera) in cameras.into_iter().enumerate() {
        let image = oracle_render(spec.preset, &oracle, &oracle_colors, &camera, &mut stats)?;
        let split = if spec.holdout_every > 0 && (i + 1) % spec.holdout_every == 0 {
            Split::Holdout
        } else {
            Split::Train
        };
        views.push(View {
            image_name: format!("{i:03}.png"),
            camera,
            image,
            split,
        });
    }
    let scene = SceneDataset {
        cloud,
        descriptors: None,
        views,
    };
    scene.validate()?;
    Ok(SynthOutput {
        scene,
        oracle,
        stats,
        far_plane,
    })
}
