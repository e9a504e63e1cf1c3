//! Image mismatch terms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    L1,
    Mse,
    /// Sum of mean absolute differences between the activations of a frozen,
    /// randomly initialized three-stage gated-conv stack (a stand-in for a
    /// pretrained perceptual network).
    FixedFeature,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(LossKind::L1),
            "mse" => Ok(LossKind::Mse),
            "fixed-feature" => Ok(LossKind::FixedFeature),
            other => Err(Error::Config(format!(
                "unknown loss '{other}' (expected l1, mse or fixed-feature)"
            ))),
        }
    }
}

pub const FEATURE_SEED: u64 = 0x5EED_F00D;
/// Output channels of the three feature stages.
pub const FEATURE_WIDTHS: [usize; 3] = [8, 16, 32];

#[derive(Clone, Debug, PartialEq)]
pub struct GatedLayer<R> {
    pub feature_weight: Tensor<R>,
    pub feature_bias: Tensor<R>,
    pub gate_weight: Tensor<R>,
    pub gate_bias: Tensor<R>,
}

/// The frozen feature extractor behind [`LossKind::FixedFeature`]. Stage `s`
/// is one 3x3 gated conv (padding 1); stages 2 and 3 start with a 2x2 box
/// downsample.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack<R> {
    layers: Vec<GatedLayer<R>>,
}

impl<R: Real> Default for FeatureStack<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> FeatureStack<R> {
    pub fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(FEATURE_SEED);
        let mut uniform = |shape: &[usize]| {
            let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| R::from_f64(rng.gen_range(-bound..bound))).collect();
            Tensor::from_vec(shape, data).expect("shape")
        };
        let mut layers = Vec::new();
        let mut cin = 3;
        for &cout in &FEATURE_WIDTHS {
            let shape = [cout, cin, 3, 3];
            layers.push(GatedLayer {
                feature_weight: uniform(&shape),
                feature_bias: Tensor::zeros(&[cout]),
                gate_weight: uniform(&shape),
                gate_bias: Tensor::zeros(&[cout]),
            });
            cin = cout;
        }
        FeatureStack { layers }
    }

    pub fn layers(&self) -> &[GatedLayer<R>] {
        &self.layers
    }

    /// Feature maps of every stage, recorded on `tape`.
    pub fn features(&self, tape: &mut Tape<R>, x: Var) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let mut x = x;
        for (s, layer) in self.layers.iter().enumerate() {
            if s > 0 {
                x = tape.downsample2x(x)?;
            }
            let fw = tape.constant(layer.feature_weight.clone())?;
            let fb = tape.constant(layer.feature_bias.clone())?;
            let gw = tape.constant(layer.gate_weight.clone())?;
            let gb = tape.constant(layer.gate_bias.clone())?;
            x = tape.gated_conv(x, fw, fb, gw, gb, 1, 1)?;
            out.push(x);
        }
        Ok(out)
    }
}

/// Records the loss between `rendered` and `target` (both `[3, H, W]`).
/// `stack` is only consulted for [`LossKind::FixedFeature`].
pub fn loss_on_tape<R: Real>(
    tape: &mut Tape<R>,
    rendered: Var,
    target: Var,
    kind: LossKind,
    stack: &FeatureStack<R>,
) -> Result<Var> {
    let (a, b) = (tape.value(rendered).shape().to_vec(), tape.value(target).shape().to_vec());
    if a != b {
        return Err(Error::shape("loss", format!("rendered {a:?} vs target {b:?}")));
    }
    match kind {
        LossKind::L1 => {
            let d = tape.sub(rendered, target)?;
            let d = tape.abs(d)?;
            tape.mean(d)
        }
        LossKind::Mse => {
            let d = tape.sub(rendered, target)?;
            let d = tape.mul(d, d)?;
            tape.mean(d)
        }
        LossKind::FixedFeature => {
            let fa = stack.features(tape, rendered)?;
            let fb = stack.features(tape, target)?;
            let mut total: Option<Var> = None;
            for (x, y) in fa.into_iter().zip(fb) {
                let d = tape.sub(x, y)?;
                let d = tape.abs(d)?;
                let m = tape.mean(d)?;
                total = Some(match total {
                    Some(t) => tape.add(t, m)?,
                    None => m,
                });
            }
            Ok(total.expect("three stages"))
        }
    }
}

/// Loss value without gradients.
pub fn loss<R: Real>(rendered: &Tensor<R>, target: &Tensor<R>, kind: LossKind) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(rendered.clone())?;
    let b = tape.constant(target.clone())?;
    let l = loss_on_tape(&mut tape, a, b, kind, &FeatureStack::new())?;
    Ok(tape.value(l).item().expect("scalar").as_f64())
}
