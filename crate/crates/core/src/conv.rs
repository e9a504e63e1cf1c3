//! Convolution kernels on raw slices (im2col + GEMM).
//!
//! Single image, channels-first. These are the numeric workhorses behind the
//! `conv2d` and `gated_conv` tape operations.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    /// Validates `input [C,H,W]` against `weight [Co,C,k,k]` and `bias [Co]`.
    pub fn infer<R: Real>(
        op: &'static str,
        input: &Tensor<R>,
        weight: &Tensor<R>,
        bias: &Tensor<R>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let (c, h, w) = input
            .chw()
            .map_err(|_| Error::shape(op, format!("input must be [C,H,W], got {:?}", input.shape())))?;
        let [co, ci, kh, kw] = weight.shape()[..] else {
            return Err(Error::shape(
                op,
                format!("weight must be [C_out,C_in,k,k], got {:?}", weight.shape()),
            ));
        };
        if ci != c {
            return Err(Error::shape(
                op,
                format!("input channels: input has {c}, weight expects {ci}"),
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::shape(
                op,
                format!("kernel size: expected odd square kernel, got {kh}x{kw}"),
            ));
        }
        if bias.shape() != [co] {
            return Err(Error::shape(
                op,
                format!("bias length: expected [{co}], got {:?}", bias.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::shape(op, "stride must be positive"));
        }
        let out_extent = |extent: usize, name: &str| -> Result<usize> {
            let padded = extent + 2 * padding;
            if padded < kh || (padded - kh) % stride != 0 {
                return Err(Error::shape(
                    op,
                    format!(
                        "{name}: ({extent} + 2*{padding} - {kh}) is not a non-negative multiple of stride {stride}"
                    ),
                ));
            }
            Ok((padded - kh) / stride + 1)
        };
        let out_height = out_extent(h, "height")?;
        let out_width = out_extent(w, "width")?;
        Ok(ConvGeometry {
            in_channels: c,
            height: h,
            width: w,
            out_channels: co,
            kernel: kh,
            stride,
            padding,
            out_height,
            out_width,
        })
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    /// 1x1 kernel, unit stride, no padding: the input already is the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Output columns `[lo, hi)` whose input column `ox*s + kx - p` is inside `0..width`.
fn valid_span(g: &ConvGeometry, kx: usize) -> (usize, usize) {
    let (s, p) = (g.stride, g.padding);
    let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
    // largest ox with ox*s + kx - p <= width - 1
    let hi = if g.width + p > kx {
        ((g.width + p - kx - 1) / s + 1).min(g.out_width)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds the input into a `[C*k*k, Ho*Wo]` column matrix.
fn im2col<R: Real>(g: &ConvGeometry, input: &[R]) -> Vec<R> {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let mut col = Vec::with_capacity(g.patch_len() * g.out_pixels());
    for c in 0..g.in_channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let (lo, hi) = valid_span(g, kx);
                for oy in 0..g.out_height {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.height as isize || lo == hi {
                        col.resize(col.len() + g.out_width, R::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    col.resize(col.len() + lo, R::zero());
                    let first = lo * s + kx - g.padding;
                    if s == 1 {
                        col.extend_from_slice(&src_row[first..first + (hi - lo)]);
                    } else {
                        col.extend(src_row[first..].iter().step_by(s).take(hi - lo).copied());
                    }
                    col.resize(col.len() + g.out_width - hi, R::zero());
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: folds column gradients back onto the input, accumulating.
fn col2im<R: Real>(g: &ConvGeometry, col: &[R], grad_input: &mut [R]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let npix = g.out_pixels();
    for c in 0..g.in_channels {
        let plane = &mut grad_input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let (lo, hi) = valid_span(g, kx);
                if lo == hi {
                    continue;
                }
                let row = (c * k + ky) * k + kx;
                let src = &col[row * npix..(row + 1) * npix];
                let first = lo * s + kx - g.padding;
                for oy in 0..g.out_height {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src_row = &src[oy * g.out_width + lo..oy * g.out_width + hi];
                    for (d, &v) in dst_row[first..].iter_mut().step_by(s).zip(src_row) {
                        *d += v;
                    }
                }
            }
        }
    }
}

/// Pre-activation output `[Co, Ho*Wo]` for one or more weight banks stacked along
/// the output-channel axis, plus the unfolded input (empty for pointwise kernels)
/// for reuse by [`backward_stacked`].
pub(crate) fn forward_stacked<R: Real>(
    g: &ConvGeometry,
    input: &[R],
    weights: &[&[R]],
    biases: &[&[R]],
) -> (Vec<R>, Vec<R>) {
    let npix = g.out_pixels();
    let plen = g.patch_len();
    let unfolded = if g.is_pointwise() { Vec::new() } else { im2col(g, input) };
    let col: &[R] = if g.is_pointwise() { input } else { &unfolded };
    let banks = weights.len();
    let mut out = vec![R::zero(); banks * g.out_channels * npix];
    for (b, (w, bias)) in weights.iter().zip(biases).enumerate() {
        let dst = &mut out[b * g.out_channels * npix..(b + 1) * g.out_channels * npix];
        for (o, &bv) in bias.iter().enumerate() {
            dst[o * npix..(o + 1) * npix].fill(bv);
        }
        gemm(
            MatRef::new(w, g.out_channels, plen),
            MatRef::new(col, plen, npix),
            R::one(),
            dst,
        );
    }
    (out, unfolded)
}

/// Gradients for a stack of weight banks given pre-activation gradients
/// `grad_pre [banks*Co, Ho*Wo]`.
pub(crate) struct StackedGrads<R> {
    pub input: Option<Vec<R>>,
    pub weights: Vec<Vec<R>>,
    pub biases: Vec<Vec<R>>,
}

/// `unfolded` is the second value returned by [`forward_stacked`] for `input`.
pub(crate) fn backward_stacked<R: Real>(
    g: &ConvGeometry,
    input: &[R],
    unfolded: &[R],
    weights: &[&[R]],
    grad_pre: &[R],
    want_input: bool,
) -> StackedGrads<R> {
    let npix = g.out_pixels();
    let plen = g.patch_len();
    let col: &[R] = if g.is_pointwise() { input } else { unfolded };
    let mut grads = StackedGrads {
        input: None,
        weights: Vec::with_capacity(weights.len()),
        biases: Vec::with_capacity(weights.len()),
    };
    let mut grad_col = if want_input {
        Some(vec![R::zero(); plen * npix])
    } else {
        None
    };
    for (b, w) in weights.iter().enumerate() {
        let gout = &grad_pre[b * g.out_channels * npix..(b + 1) * g.out_channels * npix];
        let mut gw = vec![R::zero(); g.out_channels * plen];
        gemm(
            MatRef::new(gout, g.out_channels, npix),
            MatRef::new(col, plen, npix).t(),
            R::zero(),
            &mut gw,
        );
        grads.weights.push(gw);
        grads.biases.push(
            gout.chunks_exact(npix)
                .map(|row| row.iter().copied().sum())
                .collect(),
        );
        if let Some(gc) = grad_col.as_mut() {
            gemm(
                MatRef::new(w, g.out_channels, plen).t(),
                MatRef::new(gout, g.out_channels, npix),
                R::one(),
                gc,
            );
        }
    }
    if let Some(gc) = grad_col {
        if g.is_pointwise() {
            grads.input = Some(gc);
        } else {
            let mut gi = vec![R::zero(); g.in_channels * g.height * g.width];
            col2im(g, &gc, &mut gi);
            grads.input = Some(gi);
        }
    }
    grads
}
