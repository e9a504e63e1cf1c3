//! Central-difference checks for every differentiable path, shared by the
//! gradient tests and the acceptance run.

use npbg::autodiff::{Tape, Var};
use npbg::raster::{rasterize_aa, rasterize_aa_backward, rasterize_backward, rasterize_pyramid, DescriptorSet};
use npbg::rendernet::{RenderNetConfig, RenderNetParams};
use npbg::tensor::Tensor;
use rand::Rng;

use super::*;

pub const PROBES: usize = 24;

pub struct GradCase {
    pub name: &'static str,
    pub worst: f64,
    pub probes: usize,
}

fn unary(rng: &mut ChaCha8Rng, name: &'static str, op: fn(&mut Tape<f64>, Var) -> Var) -> GradCase {
    let x = away_from_zero(rng, &[2, 3, 4]);
    let worst = gradcheck(rng, &[x], PROBES, &|t, v| {
        let y = op(t, v[0]);
        weighted_mean(t, y, 1)
    });
    GradCase { name, worst, probes: PROBES }
}

fn binary(rng: &mut ChaCha8Rng, name: &'static str, op: fn(&mut Tape<f64>, Var, Var) -> Var) -> GradCase {
    let a = away_from_zero(rng, &[2, 3, 4]);
    let b = away_from_zero(rng, &[2, 3, 4]);
    let worst = gradcheck(rng, &[a, b], PROBES, &|t, v| {
        let y = op(t, v[0], v[1]);
        weighted_mean(t, y, 2)
    });
    GradCase { name, worst, probes: 2 * PROBES }
}

fn conv_case(rng: &mut ChaCha8Rng, name: &'static str, stride: usize, pad: usize, k: usize) -> GradCase {
    let x = random_tensor(rng, &[3, 7, 5], -1.0, 1.0);
    let w = random_tensor(rng, &[4, 3, k, k], -0.5, 0.5);
    let b = random_tensor(rng, &[4], -0.5, 0.5);
    let worst = gradcheck(rng, &[x, w, b], PROBES, &|t, v| {
        let y = t.conv2d(v[0], v[1], v[2], stride, pad).unwrap();
        weighted_mean(t, y, 3)
    });
    GradCase { name, worst, probes: 3 * PROBES }
}

fn gated_case(rng: &mut ChaCha8Rng, name: &'static str, stride: usize) -> GradCase {
    let x = random_tensor(rng, &[2, 7, 7], -1.0, 1.0);
    let fw = random_tensor(rng, &[3, 2, 3, 3], -0.6, 0.6);
    let fb = random_tensor(rng, &[3], -0.5, 0.5);
    let gw = random_tensor(rng, &[3, 2, 3, 3], -0.6, 0.6);
    let gb = random_tensor(rng, &[3], -0.5, 0.5);
    let worst = gradcheck(rng, &[x, fw, fb, gw, gb], PROBES, &|t, v| {
        let y = t.gated_conv(v[0], v[1], v[2], v[3], v[4], stride, 1).unwrap();
        weighted_mean(t, y, 4)
    });
    GradCase { name, worst, probes: 5 * PROBES }
}

/// Small network with every parameter randomized (biases included, so the
/// gates are not all at 0.5).
pub fn random_net(rng: &mut ChaCha8Rng, config: &RenderNetConfig) -> RenderNetParams<f64> {
    let mut params = RenderNetParams::<f64>::build(config, rng.gen()).unwrap();
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.7..0.7);
        }
    }
    params
}

pub fn small_config() -> RenderNetConfig {
    RenderNetConfig {
        levels: 2,
        in_channels: 2,
        base_channels: 2,
        pyramid_levels: 2,
    }
}

fn net_loss(params: &RenderNetParams<f64>, raw: &[Tensor<f64>]) -> f64 {
    let out = params.forward(raw).unwrap();
    let mut tape = Tape::new();
    let o = tape.constant(out).unwrap();
    let l = weighted_mean(&mut tape, o, 5);
    tape.value(l).item().unwrap()
}

fn central<F: Fn(f64) -> f64>(f: F) -> f64 {
    (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
}

fn network_case(rng: &mut ChaCha8Rng) -> GradCase {
    let config = small_config();
    let params = random_net(rng, &config);
    let raw: Vec<Tensor<f64>> = (0..2)
        .map(|t| random_tensor(rng, &[2, 8 >> t, 8 >> t], -1.0, 1.0))
        .collect();

    let mut tape = Tape::new();
    let pv = params.record(&mut tape, true).unwrap();
    let rv: Vec<Var> = raw.iter().map(|r| tape.leaf(r.clone(), true).unwrap()).collect();
    let out = params.forward_on_tape(&mut tape, &pv, &rv).unwrap();
    let l = weighted_mean(&mut tape, out, 5);
    let grads = tape.backward(l).unwrap();

    let mut worst: f64 = 0.0;
    let mut probes = 0;
    // Every parameter tensor gets at least one probe, then random extras.
    let n = params.tensors().len();
    let picks: Vec<usize> = (0..n).chain((0..PROBES).map(|_| rng.gen_range(0..n))).collect();
    for k in picks {
        let j = rng.gen_range(0..params.tensors()[k].len());
        let numeric = central(|h| {
            let mut p = params.clone();
            p.tensors_mut()[k].data_mut()[j] += h;
            net_loss(&p, &raw)
        });
        let analytic = grads.get(pv.vars()[k]).unwrap().data()[j];
        worst = worst.max(rel_err(analytic, numeric));
        probes += 1;
    }
    for t in 0..raw.len() {
        for _ in 0..PROBES {
            let j = rng.gen_range(0..raw[t].len());
            let numeric = central(|h| {
                let mut r = raw.clone();
                r[t].data_mut()[j] += h;
                net_loss(&params, &r)
            });
            worst = worst.max(rel_err(grads.get(rv[t]).unwrap().data()[j], numeric));
            probes += 1;
        }
    }
    GradCase {
        name: "render network (parameters and raw inputs)",
        worst,
        probes,
    }
}

/// Loss of the full pipeline as a function of the descriptors: pyramid
/// rasterization followed by the network.
fn scene_loss(
    params: &RenderNetParams<f64>,
    cloud: &npbg::geometry::PointCloud,
    desc: &DescriptorSet<f64>,
    cam: &npbg::geometry::Camera,
) -> f64 {
    let pyr = rasterize_pyramid(cloud, desc, cam, 2).unwrap();
    net_loss(params, &pyr.channel_tensors())
}

fn scatter_case(rng: &mut ChaCha8Rng) -> GradCase {
    let config = small_config();
    let params = random_net(rng, &config);
    let cloud = random_cloud(rng, 120);
    let desc = random_descriptors(rng, 120, 2);
    let cam = random_camera(rng, 8, 8);

    let pyr = rasterize_pyramid(&cloud, &desc, &cam, 2).unwrap();
    let mut tape = Tape::new();
    let pv = params.record(&mut tape, false).unwrap();
    let rv: Vec<Var> = pyr.levels.iter().map(|l| tape.leaf(l.channels.clone(), true).unwrap()).collect();
    let out = params.forward_on_tape(&mut tape, &pv, &rv).unwrap();
    let l = weighted_mean(&mut tape, out, 5);
    let mut grads = tape.backward(l).unwrap();
    let upstream: Vec<Tensor<f64>> = rv.iter().map(|&v| grads.take(v).unwrap()).collect();
    let g = rasterize_backward(&pyr, &upstream).unwrap();
    assert!(g.data().iter().any(|&x| x != 0.0), "scatter produced no gradient");

    // Probe winners preferentially; losers must come out exactly zero.
    let winners: Vec<usize> = pyr
        .levels
        .iter()
        .flat_map(|lv| lv.winner.iter().filter(|&&w| w != u32::MAX).map(|&w| w as usize))
        .collect();
    let mut worst: f64 = 0.0;
    for p in 0..PROBES {
        let i = if p % 4 == 3 || winners.is_empty() {
            rng.gen_range(0..120)
        } else {
            winners[rng.gen_range(0..winners.len())]
        };
        let c = rng.gen_range(0..2);
        let numeric = central(|h| {
            let mut d = desc.clone();
            d.values_mut().data_mut()[i * 2 + c] += h;
            scene_loss(&params, &cloud, &d, &cam)
        });
        worst = worst.max(rel_err(g.data()[i * 2 + c], numeric));
    }
    GradCase {
        name: "descriptor scatter through pyramid and network",
        worst,
        probes: PROBES,
    }
}

fn aa_case(rng: &mut ChaCha8Rng) -> GradCase {
    let cloud = random_cloud(rng, 150);
    let desc = random_descriptors(rng, 150, 3);
    let cam = random_camera(rng, 6, 5);
    let weights = random_tensor(rng, &[3, 5, 6], -1.0, 1.0);
    let f = |d: &DescriptorSet<f64>| -> f64 {
        let aa = rasterize_aa(&cloud, d, &cam, 2).unwrap();
        aa.channels.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };
    let aa = rasterize_aa(&cloud, &desc, &cam, 2).unwrap();
    let g = rasterize_aa_backward(&aa, &weights).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..PROBES {
        let j = rng.gen_range(0..desc.values().len());
        let numeric = central(|h| {
            let mut d = desc.clone();
            d.values_mut().data_mut()[j] += h;
            f(&d)
        });
        worst = worst.max(rel_err(g.data()[j], numeric));
    }
    GradCase {
        name: "anti-aliased raster backward",
        worst,
        probes: PROBES,
    }
}

/// Runs every case with a fixed seed.
pub fn gradient_suite(seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let r = &mut r;
    vec![
        binary(r, "add", |t, a, b| t.add(a, b).unwrap()),
        binary(r, "sub", |t, a, b| t.sub(a, b).unwrap()),
        binary(r, "mul", |t, a, b| t.mul(a, b).unwrap()),
        unary(r, "scale", |t, a| t.scale(a, -1.7).unwrap()),
        unary(r, "relu", |t, a| t.relu(a).unwrap()),
        unary(r, "elu", |t, a| t.elu(a).unwrap()),
        unary(r, "sigmoid", |t, a| t.sigmoid(a).unwrap()),
        unary(r, "abs", |t, a| t.abs(a).unwrap()),
        {
            let x = away_from_zero(r, &[3, 5]);
            let worst = gradcheck(r, &[x], PROBES, &|t, v| t.mean(v[0]).unwrap());
            GradCase { name: "mean", worst, probes: PROBES }
        },
        conv_case(r, "conv2d 3x3 stride 1 pad 1", 1, 1, 3),
        conv_case(r, "conv2d 3x3 stride 2 pad 1", 2, 1, 3),
        conv_case(r, "conv2d 1x1", 1, 0, 1),
        gated_case(r, "gated_conv stride 1", 1),
        gated_case(r, "gated_conv stride 2", 2),
        unary(r, "upsample2x then downsample2x", |t, a| {
            let x = t.concat_channels(a, a).unwrap();
            let y = t.upsample2x(x).unwrap();
            t.downsample2x(y).unwrap()
        }),
        {
            let x = away_from_zero(r, &[2, 4, 6]);
            let worst = gradcheck(r, &[x], PROBES, &|t, v| {
                let y = t.downsample2x(v[0]).unwrap();
                weighted_mean(t, y, 6)
            });
            GradCase { name: "downsample2x alone", worst, probes: PROBES }
        },
        unary(r, "upsample2x", |t, a| t.upsample2x(a).unwrap()),
        binary(r, "concat_channels", |t, a, b| t.concat_channels(a, b).unwrap()),
        unary(r, "fan-out accumulation", |t, a| {
            let sq = t.mul(a, a).unwrap();
            let s = t.sigmoid(a).unwrap();
            let y = t.add(sq, s).unwrap();
            t.add(y, a).unwrap()
        }),
        network_case(r),
        scatter_case(r),
        aa_case(r),
    ]
}
