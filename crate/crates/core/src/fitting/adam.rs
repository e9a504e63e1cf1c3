//! Bias-corrected ADAM.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments for one group of tensors sharing a step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<R> {
    pub m: Vec<Tensor<R>>,
    pub v: Vec<Tensor<R>>,
    pub step: u64,
}

impl<R: Real> AdamState<R> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<R>>) -> Self
    where
        R: 'a,
    {
        let m: Vec<Tensor<R>> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
        }
    }

    /// One update of `params` in place. Every parameter needs a gradient of
    /// its own shape.
    pub fn update(
        &mut self,
        params: &mut [&mut Tensor<R>],
        grads: &[Option<Tensor<R>>],
        lr: f64,
        hyper: &AdamHyper,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Autodiff(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let g = g
                .as_ref()
                .ok_or_else(|| Error::Autodiff(format!("missing gradient for trainable tensor {i}")))?;
            if g.shape() != p.shape() || self.m[i].shape() != p.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("tensor {i}: parameter {:?}, gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (R::from_f64(hyper.beta1), R::from_f64(hyper.beta2));
        let (c1, c2) = (R::one() - b1, R::one() - b2);
        let bc1 = R::from_f64(1.0 - hyper.beta1.powi(t));
        let bc2 = R::from_f64(1.0 - hyper.beta2.powi(t));
        let (lr, eps) = (R::from_f64(lr), R::from_f64(hyper.eps));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let g = g.as_ref().expect("checked");
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + c1 * gi;
                *vi = b2 * *vi + c2 * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
