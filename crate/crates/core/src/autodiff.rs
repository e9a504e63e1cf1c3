//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operation evaluates eagerly, checks its result for NaN/Inf, and
//! appends a node to the [`Tape`]. [`Tape::backward`] consumes the tape and
//! walks the nodes in exact reverse order, accumulating gradients additively
//! into every node that (transitively) depends on a `requires_grad` leaf.
//!
//! ```
//! use npbg::autodiff::Tape;
//! use npbg::tensor::Tensor;
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap(), true).unwrap();
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.mean(sq).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
//! ```

use std::sync::atomic::{AtomicU32, Ordering};

use crate::conv::{backward_stacked, forward_stacked, ConvGeometry, StackedGrads};
use crate::error::{Error, Result};
use crate::tensor::{ensure_same_shape, Real, Tensor};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: usize,
}

enum Op<R> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, R),
    Relu(usize),
    Elu(usize),
    Sigmoid(usize),
    Abs(usize),
    Mean(usize),
    Conv2d {
        input: usize,
        weight: usize,
        bias: usize,
        geometry: ConvGeometry,
        unfolded: Vec<R>,
    },
    GatedConv {
        input: usize,
        feature_weight: usize,
        gate_weight: usize,
        feature_bias: usize,
        gate_bias: usize,
        geometry: ConvGeometry,
        /// Stacked pre-activations `[feature; gate]`.
        pre: Vec<R>,
        unfolded: Vec<R>,
    },
    Downsample2x(usize),
    Upsample2x(usize),
    Concat(usize, usize),
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    needs_grad: bool,
    is_leaf: bool,
}

/// Record of executed operations. Single owner; not shared across threads.
pub struct Tape<R: Real> {
    id: u32,
    nodes: Vec<Node<R>>,
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
#[derive(Debug)]
pub struct Gradients<R> {
    tape: u32,
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, var: Var) -> Option<&Tensor<R>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<R>> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get_mut(var.index).and_then(Option::take)
    }
}

pub(crate) fn elu<R: Real>(x: R) -> R {
    if x > R::zero() {
        x
    } else {
        x.exp() - R::one()
    }
}

fn elu_grad<R: Real>(x: R) -> R {
    if x > R::zero() {
        R::one()
    } else {
        x.exp()
    }
}

/// `(elu(x), elu'(x))` with a single exponential.
fn elu_and_grad<R: Real>(x: R) -> (R, R) {
    if x > R::zero() {
        (x, R::one())
    } else {
        let e = x.exp();
        (e - R::one(), e)
    }
}

pub(crate) fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

fn check_finite<R: Real>(op: &'static str, t: &Tensor<R>) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn zip_map<R: Real>(a: &Tensor<R>, b: &Tensor<R>, f: impl Fn(R, R) -> R) -> Tensor<R> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

fn add_into<R: Real>(slot: &mut Option<Tensor<R>>, g: Tensor<R>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

pub(crate) fn downsample2x_values<R: Real>(x: &Tensor<R>) -> Result<Tensor<R>> {
    let (c, h, w) = x.chw()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "downsample2x",
            format!("extents must be even, got {h}x{w}"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let quarter = R::from_f64(0.25);
    let src = x.data();
    let mut out = vec![R::zero(); c * ho * wo];
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..ho {
            let r0 = &plane[2 * y * w..(2 * y + 1) * w];
            let r1 = &plane[(2 * y + 1) * w..(2 * y + 2) * w];
            let dst = &mut out[(ch * ho + y) * wo..(ch * ho + y + 1) * wo];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = (r0[2 * xo] + r0[2 * xo + 1] + r1[2 * xo] + r1[2 * xo + 1]) * quarter;
            }
        }
    }
    Tensor::from_vec(&[c, ho, wo], out)
}

pub(crate) fn upsample2x_values<R: Real>(x: &Tensor<R>) -> Result<Tensor<R>> {
    let (c, h, w) = x.chw()?;
    let (ho, wo) = (2 * h, 2 * w);
    let src = x.data();
    let mut out = vec![R::zero(); c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            let src_row = &src[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            let dst = &mut out[(ch * ho + y) * wo..(ch * ho + y + 1) * wo];
            for (xo, d) in dst.iter_mut().enumerate() {
                *d = src_row[xo / 2];
            }
        }
    }
    Tensor::from_vec(&[c, ho, wo], out)
}

/// Adjoint of nearest-neighbor upsampling: 2x2 block sums.
fn upsample2x_adjoint<R: Real>(g: &Tensor<R>) -> Tensor<R> {
    let mut t = downsample2x_values(g).expect("upsampled extents are even");
    let four = R::from_f64(4.0);
    for v in t.data_mut() {
        *v *= four;
    }
    t
}

/// Adjoint of 2x2 box averaging: duplicate and scale by 1/4.
fn downsample2x_adjoint<R: Real>(g: &Tensor<R>) -> Tensor<R> {
    let mut t = upsample2x_values(g).expect("rank-3 gradient");
    let quarter = R::from_f64(0.25);
    for v in t.data_mut() {
        *v *= quarter;
    }
    t
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Autodiff(
                "variable does not belong to this tape".into(),
            ));
        }
        Ok(v.index)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<R>, op: Op<R>, inputs: &[usize]) -> Result<Var> {
        check_finite(op_name, &value)?;
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            is_leaf: false,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    /// Records an input tensor. Gradients are reported only for leaves with
    /// `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<R>, requires_grad: bool) -> Result<Var> {
        check_finite("leaf", &value)?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
            is_leaf: true,
        });
        Ok(Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        })
    }

    pub fn constant(&mut self, value: Tensor<R>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        let i = self.idx(v).expect("variable from this tape");
        &self.nodes[i].value
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(R, R) -> R,
        op: impl Fn(usize, usize) -> Op<R>,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        ensure_same_shape(name, &self.nodes[ia].value, &self.nodes[ib].value)?;
        let value = zip_map(&self.nodes[ia].value, &self.nodes[ib].value, f);
        self.push(name, value, op(ia, ib), &[ia, ib])
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(R) -> R,
        op: impl Fn(usize) -> Op<R>,
    ) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = self.nodes[ia].value.map(f);
        self.push(name, value, op(ia), &[ia])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, s: R) -> Result<Var> {
        self.unary("scale", a, |x| x * s, |i| Op::Scale(i, s))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(R::zero()), Op::Relu)
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary("elu", a, elu, Op::Elu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, |x| x.abs(), Op::Abs)
    }

    /// Mean over all elements, as a rank-0 tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let t = &self.nodes[ia].value;
        if t.is_empty() {
            return Err(Error::shape("mean", "cannot average an empty tensor"));
        }
        let n = R::from_f64(t.len() as f64);
        let s: R = t.data().iter().copied().sum();
        self.push("mean", Tensor::scalar(s / n), Op::Mean(ia), &[ia])
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (ii, iw, ib) = (self.idx(input)?, self.idx(weight)?, self.idx(bias)?);
        let (x, w, b) = (&self.nodes[ii].value, &self.nodes[iw].value, &self.nodes[ib].value);
        let geometry = ConvGeometry::infer("conv2d", x, w, b, stride, padding)?;
        let (out, unfolded) = forward_stacked(&geometry, x.data(), &[w.data()], &[b.data()]);
        let value = Tensor::from_vec(
            &[geometry.out_channels, geometry.out_height, geometry.out_width],
            out,
        )?;
        self.push(
            "conv2d",
            value,
            Op::Conv2d {
                input: ii,
                weight: iw,
                bias: ib,
                geometry,
                unfolded,
            },
            &[ii, iw, ib],
        )
    }

    /// `ELU(conv(x; feature)) * sigmoid(conv(x; gate))`, evaluated as one fused
    /// node sharing the unfolded input between both branches.
    #[allow(clippy::too_many_arguments)]
    pub fn gated_conv(
        &mut self,
        input: Var,
        feature_weight: Var,
        feature_bias: Var,
        gate_weight: Var,
        gate_bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let ii = self.idx(input)?;
        let (ifw, ifb) = (self.idx(feature_weight)?, self.idx(feature_bias)?);
        let (igw, igb) = (self.idx(gate_weight)?, self.idx(gate_bias)?);
        let x = &self.nodes[ii].value;
        let (fw, fb) = (&self.nodes[ifw].value, &self.nodes[ifb].value);
        let (gw, gb) = (&self.nodes[igw].value, &self.nodes[igb].value);
        let geometry = ConvGeometry::infer("gated_conv", x, fw, fb, stride, padding)?;
        let gate_geometry = ConvGeometry::infer("gated_conv", x, gw, gb, stride, padding)?;
        if gate_geometry != geometry {
            return Err(Error::shape(
                "gated_conv",
                format!(
                    "gate branch {:?} differs from feature branch {:?}",
                    gw.shape(),
                    fw.shape()
                ),
            ));
        }
        let (pre, unfolded) = forward_stacked(&geometry, x.data(), &[fw.data(), gw.data()], &[fb.data(), gb.data()]);
        let n = geometry.out_channels * geometry.out_height * geometry.out_width;
        let (f, g) = pre.split_at(n);
        let out = f.iter().zip(g).map(|(&a, &b)| elu(a) * sigmoid(b)).collect();
        let value = Tensor::from_vec(
            &[geometry.out_channels, geometry.out_height, geometry.out_width],
            out,
        )?;
        self.push(
            "gated_conv",
            value,
            Op::GatedConv {
                input: ii,
                feature_weight: ifw,
                gate_weight: igw,
                feature_bias: ifb,
                gate_bias: igb,
                geometry,
                pre,
                unfolded,
            },
            &[ii, ifw, ifb, igw, igb],
        )
    }

    /// 2x2 box average.
    pub fn downsample2x(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = downsample2x_values(&self.nodes[ia].value)?;
        self.push("downsample2x", value, Op::Downsample2x(ia), &[ia])
    }

    /// Nearest-neighbor duplication.
    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let value = upsample2x_values(&self.nodes[ia].value).map_err(|_| {
            Error::shape("upsample2x", format!("expected [C,H,W], got {:?}", self.nodes[ia].value.shape()))
        })?;
        self.push("upsample2x", value, Op::Upsample2x(ia), &[ia])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (ca, ha, wa) = ta.chw()?;
        let (cb, hb, wb) = tb.chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("spatial extents differ: {ha}x{wa} vs {hb}x{wb}"),
            ));
        }
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        let value = Tensor::from_vec(&[ca + cb, ha, wa], data)?;
        self.push("concat_channels", value, Op::Concat(ia, ib), &[ia, ib])
    }

    /// Consumes the tape and returns d`loss`/d`leaf` for every leaf recorded
    /// with `requires_grad`.
    pub fn backward(self, loss: Var) -> Result<Gradients<R>> {
        if loss.tape != self.id || loss.index >= self.nodes.len() {
            return Err(Error::Autodiff(
                "backward called with a loss that was not recorded on this tape".into(),
            ));
        }
        let root_shape = self.nodes[loss.index].value.shape().to_vec();
        if self.nodes[loss.index].value.len() != 1 {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got shape {root_shape:?}"
            )));
        }
        let tape_id = self.id;
        let mut nodes = self.nodes;
        let mut grads: Vec<Option<Tensor<R>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Tensor::full(&root_shape, R::one()));

        for i in (0..=loss.index).rev() {
            if nodes[i].is_leaf || !nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let op = std::mem::replace(&mut nodes[i].op, Op::Leaf);
            let needs = |j: usize| nodes[j].needs_grad;
            match op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    if needs(a) {
                        add_into(&mut grads[a], g.clone());
                    }
                    if needs(b) {
                        add_into(&mut grads[b], g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(a) {
                        add_into(&mut grads[a], g.clone());
                    }
                    if needs(b) {
                        add_into(&mut grads[b], g.map(|v| -v));
                    }
                }
                Op::Mul(a, b) => {
                    if needs(a) {
                        add_into(&mut grads[a], zip_map(&g, &nodes[b].value, |u, y| u * y));
                    }
                    if needs(b) {
                        add_into(&mut grads[b], zip_map(&g, &nodes[a].value, |u, x| u * x));
                    }
                }
                Op::Scale(a, s) => add_into(&mut grads[a], g.map(|v| v * s)),
                Op::Relu(a) => add_into(
                    &mut grads[a],
                    zip_map(&g, &nodes[a].value, |u, x| if x > R::zero() { u } else { R::zero() }),
                ),
                Op::Elu(a) => add_into(&mut grads[a], zip_map(&g, &nodes[a].value, |u, x| u * elu_grad(x))),
                Op::Sigmoid(a) => add_into(
                    &mut grads[a],
                    zip_map(&g, &nodes[i].value, |u, s| u * s * (R::one() - s)),
                ),
                Op::Abs(a) => add_into(
                    &mut grads[a],
                    zip_map(&g, &nodes[a].value, |u, x| {
                        if x > R::zero() {
                            u
                        } else if x < R::zero() {
                            -u
                        } else {
                            R::zero()
                        }
                    }),
                ),
                Op::Mean(a) => {
                    let t = &nodes[a].value;
                    let v = g.data()[0] / R::from_f64(t.len() as f64);
                    add_into(&mut grads[a], Tensor::full(t.shape(), v));
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geometry,
                    unfolded,
                } => {
                    let sg = backward_stacked(
                        &geometry,
                        nodes[input].value.data(),
                        &unfolded,
                        &[nodes[weight].value.data()],
                        g.data(),
                        needs(input),
                    );
                    let StackedGrads { input: gi, mut weights, mut biases } = sg;
                    if let Some(gi) = gi {
                        add_into(&mut grads[input], Tensor::from_vec(nodes[input].value.shape(), gi)?);
                    }
                    if needs(weight) {
                        add_into(
                            &mut grads[weight],
                            Tensor::from_vec(nodes[weight].value.shape(), weights.pop().unwrap())?,
                        );
                    }
                    if needs(bias) {
                        add_into(&mut grads[bias], Tensor::from_vec(nodes[bias].value.shape(), biases.pop().unwrap())?);
                    }
                }
                Op::GatedConv {
                    input,
                    feature_weight,
                    gate_weight,
                    feature_bias,
                    gate_bias,
                    geometry,
                    pre,
                    unfolded,
                } => {
                    let n = g.len();
                    let (f, gt) = pre.split_at(n);
                    let mut grad_pre = vec![R::zero(); 2 * n];
                    let (gf, gg) = grad_pre.split_at_mut(n);
                    for k in 0..n {
                        let s = sigmoid(gt[k]);
                        let u = g.data()[k];
                        let (e, de) = elu_and_grad(f[k]);
                        gf[k] = u * s * de;
                        gg[k] = u * e * s * (R::one() - s);
                    }
                    let sg = backward_stacked(
                        &geometry,
                        nodes[input].value.data(),
                        &unfolded,
                        &[nodes[feature_weight].value.data(), nodes[gate_weight].value.data()],
                        &grad_pre,
                        needs(input),
                    );
                    let StackedGrads { input: gi, weights, biases } = sg;
                    if let Some(gi) = gi {
                        add_into(&mut grads[input], Tensor::from_vec(nodes[input].value.shape(), gi)?);
                    }
                    let mut weights = weights.into_iter();
                    let mut biases = biases.into_iter();
                    for (w, b) in [(feature_weight, feature_bias), (gate_weight, gate_bias)] {
                        let (gw, gb) = (weights.next().unwrap(), biases.next().unwrap());
                        if needs(w) {
                            add_into(&mut grads[w], Tensor::from_vec(nodes[w].value.shape(), gw)?);
                        }
                        if needs(b) {
                            add_into(&mut grads[b], Tensor::from_vec(nodes[b].value.shape(), gb)?);
                        }
                    }
                }
                Op::Downsample2x(a) => add_into(&mut grads[a], downsample2x_adjoint(&g)),
                Op::Upsample2x(a) => add_into(&mut grads[a], upsample2x_adjoint(&g)),
                Op::Concat(a, b) => {
                    let split = nodes[a].value.len();
                    if needs(a) {
                        add_into(&mut grads[a], Tensor::from_vec(nodes[a].value.shape(), g.data()[..split].to_vec())?);
                    }
                    if needs(b) {
                        add_into(&mut grads[b], Tensor::from_vec(nodes[b].value.shape(), g.data()[split..].to_vec())?);
                    }
                }
            }
        }

        for (i, node) in nodes.iter().enumerate() {
            if !(node.is_leaf && node.needs_grad) {
                grads[i] = None;
            } else if grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { tape: tape_id, grads })
    }
}
