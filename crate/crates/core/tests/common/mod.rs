//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

pub mod grad;
pub mod raster;
pub mod scene;
pub mod formats;

use nalgebra::{Matrix3, Rotation3, Vector3};
use npbg::autodiff::{Tape, Var};
use npbg::geometry::{Camera, PointCloud};
use npbg::raster::DescriptorSet;
use npbg::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Values with magnitude in `[0.1, 1]` and random sign, away from the kinks of
/// relu/abs so central differences are exact to O(h^2).
pub fn away_from_zero(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Direct six-loop cross-correlation.
pub fn conv_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; co * ho * wo];
    for o in 0..co {
        for y in 0..ho {
            for xo in 0..wo {
                let mut s = b.data()[o];
                for c in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (xo * stride + kx) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                s += x.data()[(c * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((o * ci + c) * k + ky) * k + kx];
                            }
                        }
                    }
                }
                out[(o * ho + y) * wo + xo] = s;
            }
        }
    }
    Tensor::from_vec(&[co, ho, wo], out).unwrap()
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn gated_oracle(
    x: &Tensor<f64>,
    fw: &Tensor<f64>,
    fb: &Tensor<f64>,
    gw: &Tensor<f64>,
    gb: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let f = conv_oracle(x, fw, fb, stride, pad);
    let g = conv_oracle(x, gw, gb, stride, pad);
    let data = f.data().iter().zip(g.data()).map(|(&a, &b)| elu(a) * sigmoid(b)).collect();
    Tensor::from_vec(f.shape(), data).unwrap()
}

pub fn box_down_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = vec![0.0; c * (h / 2) * (w / 2)];
    for ch in 0..c {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                let at = |dy: usize, dx: usize| x.data()[(ch * h + 2 * y + dy) * w + 2 * xx + dx];
                out[(ch * (h / 2) + y) * (w / 2) + xx] = (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)) / 4.0;
            }
        }
    }
    Tensor::from_vec(&[c, h / 2, w / 2], out).unwrap()
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn round_half_up(a: f64) -> i64 {
    (a + 0.5).floor() as i64
}

/// Scalar restatement of the projection rule, without nalgebra.
pub fn project_oracle(cam: &Camera, p: &Vector3<f64>) -> Option<(usize, usize, f64)> {
    let r = cam.rotation;
    let t = cam.translation;
    let pc = [
        r[(0, 0)] * p.x + r[(0, 1)] * p.y + r[(0, 2)] * p.z + t.x,
        r[(1, 0)] * p.x + r[(1, 1)] * p.y + r[(1, 2)] * p.z + t.y,
        r[(2, 0)] * p.x + r[(2, 1)] * p.y + r[(2, 2)] * p.z + t.z,
    ];
    if !(pc[2] > 1e-4) {
        return None;
    }
    let ix = round_half_up(cam.fx * pc[0] / pc[2] + cam.cx);
    let iy = round_half_up(cam.fy * pc[1] / pc[2] + cam.cy);
    if ix < 0 || iy < 0 || ix >= cam.width as i64 || iy >= cam.height as i64 {
        return None;
    }
    Some((ix as usize, iy as usize, pc[2]))
}

/// Brute force: for every pixel, scan all points for the lexicographic
/// minimum `(depth, index)`. Returns `(winner, depth)` with `u32::MAX`/inf
/// for empty pixels.
pub fn raster_oracle(cloud: &PointCloud, cam: &Camera) -> (Vec<u32>, Vec<f64>) {
    let proj: Vec<_> = cloud.positions.iter().map(|p| project_oracle(cam, p)).collect();
    let mut winner = vec![u32::MAX; cam.width * cam.height];
    let mut depth = vec![f64::INFINITY; cam.width * cam.height];
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut best: Option<(f64, usize)> = None;
            for (i, pr) in proj.iter().enumerate() {
                if let Some((px, py, z)) = *pr {
                    if (px, py) == (x, y) {
                        let cand = (z, i);
                        if best.map_or(true, |b| cand.0 < b.0 || (cand.0 == b.0 && cand.1 < b.1)) {
                            best = Some(cand);
                        }
                    }
                }
            }
            if let Some((z, i)) = best {
                winner[y * cam.width + x] = i as u32;
                depth[y * cam.width + x] = z;
            }
        }
    }
    (winner, depth)
}

/// Channels `[M, H, W]` implied by a winner map.
pub fn channels_from_winners(winner: &[u32], desc: &DescriptorSet<f64>, w: usize, h: usize) -> Vec<f64> {
    let m = desc.width();
    let mut out = vec![0.0; m * w * h];
    for (k, &win) in winner.iter().enumerate() {
        if win != u32::MAX {
            for c in 0..m {
                out[c * w * h + k] = desc.row(win as usize)[c];
            }
        }
    }
    out
}

pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis };
    Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), rng.gen_range(-3.1..3.1)).into_inner()
}

/// Camera at distance 2.5..4 from the origin looking roughly at it.
pub fn random_camera(rng: &mut impl Rng, width: usize, height: usize) -> Camera {
    for _ in 0..1000 {
        let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if dir.norm() < 0.2 {
            continue;
        }
        let eye = dir.normalize() * rng.gen_range(2.5..4.0);
        let target = Vector3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
        let up = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let focal = rng.gen_range(0.6..1.5) * width as f64;
        if let Ok(cam) = Camera::look_at(eye, target, up, focal, width, height) {
            return cam;
        }
    }
    panic!("no valid {width}x{height} camera");
}

/// Points in a unit ball, sometimes snapped to a coarse lattice so that
/// several land on one pixel and some share exact depths.
pub fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    let snap = rng.gen_bool(0.5);
    let positions = (0..n)
        .map(|_| {
            let p = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if snap {
                p.map(|v: f64| (v * 8.0).round() / 8.0)
            } else {
                p
            }
        })
        .collect();
    PointCloud::new(positions, None).unwrap()
}

pub fn random_descriptors(rng: &mut impl Rng, n: usize, m: usize) -> DescriptorSet<f64> {
    DescriptorSet::from_tensor(random_tensor(rng, &[n, m], -1.0, 1.0)).unwrap()
}

/// Relative error as used by every gradient check:
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

pub const GRAD_TOL: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-6;

/// Finite-difference check of a scalar function of several tensors.
///
/// `f` records the computation on a tape given leaf vars and returns the loss
/// var. Checks `probes` random entries of every input. Returns the worst
/// relative error seen.
pub fn gradcheck(
    rng: &mut impl Rng,
    inputs: &[Tensor<f64>],
    probes: usize,
    f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> f64 {
    let eval = |vals: &[Tensor<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), false).unwrap()).collect();
        let l = f(&mut tape, &vars);
        tape.value(l).item().unwrap()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true).unwrap()).collect();
    let l = f(&mut tape, &vars);
    let grads = tape.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let g = grads.get(vars[k]).expect("gradient for every input");
        assert_eq!(g.shape(), input.shape());
        for _ in 0..probes {
            let j = rng.gen_range(0..input.len());
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.data()[j], numeric));
        }
    }
    worst
}

/// `mean(x * r)` with a fixed random `r`, so every output entry gets a
/// distinct weight.
pub fn weighted_mean(tape: &mut Tape<f64>, x: Var, seed: u64) -> Var {
    let mut r = rng(seed);
    let shape = tape.value(x).shape().to_vec();
    let w = tape.constant(random_tensor(&mut r, &shape, -1.0, 1.0)).unwrap();
    let y = tape.mul(x, w).unwrap();
    tape.mean(y).unwrap()
}
