use super::conv::{self, ConvDims};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Lower clamp applied inside [`Graph::log`].
pub const LOG_EPS: f64 = 1e-12;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var },
    Relu(Var),
    SoftmaxChannels(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Log(Var),
    Clamp { x: Var, lo: T, hi: T },
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Tape of tensor operations, recorded in execution order.
///
/// Nodes are appended as operations execute, so the node list is always a
/// valid topological order and the graph cannot contain cycles.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    ///
    /// `None` before `backward` has run or for nodes that do not require grad.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Same-padded stride-1 convolution: `[N,C,H,W] * [F,C,k,k] + [F] -> [N,F,H,W]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let dims = self.conv_dims(input, kernel, bias)?;
        let mut out = vec![T::zero(); dims.n * dims.f * dims.h * dims.w];
        conv::forward(
            dims,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
            &mut out,
        );
        let value = Tensor::new(vec![dims.n, dims.f, dims.h, dims.w], out)?;
        let rg = self.rg(&[input, kernel, bias]);
        Ok(self.push(Op::Conv2d { input, kernel, bias }, value, rg))
    }

    fn conv_dims(&self, input: Var, kernel: Var, bias: Var) -> Result<ConvDims> {
        let is = self.value(input).shape();
        let ks = self.value(kernel).shape();
        let bs = self.value(bias).shape();
        if is.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d input must be [N,C,H,W], got rank {}",
                is.len()
            )));
        }
        if ks.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d kernel must be [F,C,k,k], got rank {}",
                ks.len()
            )));
        }
        if ks[1] != is[1] {
            return Err(Error::Shape(format!(
                "conv2d channel dimension: kernel has {} input channels, input has {}",
                ks[1], is[1]
            )));
        }
        if ks[2] != ks[3] {
            return Err(Error::Shape(format!(
                "conv2d kernel spatial dimension: {}x{} is not square",
                ks[2], ks[3]
            )));
        }
        if ks[2] % 2 == 0 {
            return Err(Error::Shape(format!(
                "conv2d kernel size dimension: {} is not odd",
                ks[2]
            )));
        }
        if bs != [ks[0]] {
            return Err(Error::Shape(format!(
                "conv2d bias dimension: expected [{}], got {bs:?}",
                ks[0]
            )));
        }
        Ok(ConvDims {
            n: is[0],
            c: is[1],
            h: is[2],
            w: is[3],
            f: ks[0],
            k: ks[2],
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(&[x]);
        self.push(Op::Relu(x), value, rg)
    }

    /// Softmax over axis 1 of a `[N,C,H,W]` tensor.
    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x);
        let shape = xs.shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::Shape(format!(
                "softmax_channels expects [N,C,H,W], got {shape:?}"
            )));
        }
        let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
        let src = xs.data();
        let mut out = vec![T::zero(); src.len()];
        for ni in 0..n {
            let base = ni * c * plane;
            for p in 0..plane {
                let mut m = T::neg_infinity();
                for ci in 0..c {
                    m = m.max(src[base + ci * plane + p]);
                }
                let mut z = T::zero();
                for ci in 0..c {
                    let e = (src[base + ci * plane + p] - m).exp();
                    out[base + ci * plane + p] = e;
                    z = z + e;
                }
                for ci in 0..c {
                    out[base + ci * plane + p] = out[base + ci * plane + p] / z;
                }
            }
        }
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Op::SoftmaxChannels(x), value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb, "add")?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.same_shape(vb, "mul")?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    /// Natural log with inputs clamped below at [`LOG_EPS`].
    pub fn log(&mut self, x: Var) -> Var {
        let eps = T::from_f64(LOG_EPS);
        let value = self.value(x).map(|v| v.max(eps).ln());
        let rg = self.rg(&[x]);
        self.push(Op::Log(x), value, rg)
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let value = self.value(x).map(|v| v.max(lo).min(hi));
        let rg = self.rg(&[x]);
        self.push(Op::Clamp { x, lo, hi }, value, rg)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let value = self.value(x).map(|v| v * c);
        let rg = self.rg(&[x]);
        self.push(Op::Scale(x, c), value, rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(Op::Sum(x), value, rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / T::from_f64(t.len() as f64));
        let rg = self.rg(&[x]);
        self.push(Op::Mean(x), value, rg)
    }

    fn accumulate(&mut self, v: Var, g: &[T]) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => acc.add_assign(g),
            None => {
                node.grad = Some(
                    Tensor::new(node.value.shape().to_vec(), g.to_vec())
                        .expect("gradient shape follows value shape"),
                )
            }
        }
    }

    fn grad_buffer(&mut self, v: Var) -> &mut [T] {
        let node = &mut self.nodes[v.0];
        node.grad
            .get_or_insert_with(|| Tensor::zeros(node.value.shape()))
            .data_mut()
    }

    /// Reverse-mode sweep from a scalar loss.
    ///
    /// Gradients accumulate additively across every use of a node. Every
    /// node that requires grad holds a gradient afterwards, zero if it does
    /// not feed the loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if self.nodes[loss.0].requires_grad {
            self.nodes[loss.0].grad = Some(Tensor::ones(self.value(loss).shape()));
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            self.backprop(i, &op, &g)?;
            self.nodes[i].grad = Some(g);
        }
        for node in &mut self.nodes {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(())
    }

    fn backprop(&mut self, i: usize, op: &Op<T>, g: &Tensor<T>) -> Result<()> {
        let gd = g.data();
        match *op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => {
                let dims = self.conv_dims(input, kernel, bias)?;
                if self.requires_grad(input) {
                    let kv = self.nodes[kernel.0].value.data().to_vec();
                    conv::backward_input(dims, gd, &kv, self.grad_buffer(input));
                }
                let need_k = self.requires_grad(kernel);
                let need_b = self.requires_grad(bias);
                if need_k || need_b {
                    let mut gk = need_k.then(|| vec![T::zero(); self.value(kernel).len()]);
                    let mut gb = need_b.then(|| vec![T::zero(); self.value(bias).len()]);
                    conv::backward_params(
                        dims,
                        gd,
                        self.value(input).data(),
                        gk.as_deref_mut(),
                        gb.as_deref_mut(),
                    );
                    if let Some(gk) = gk {
                        self.accumulate(kernel, &gk);
                    }
                    if let Some(gb) = gb {
                        self.accumulate(bias, &gb);
                    }
                }
            }
            Op::Relu(x) => {
                if self.requires_grad(x) {
                    let out = self.nodes[i].value.data();
                    let dx: Vec<T> = out
                        .iter()
                        .zip(gd)
                        .map(|(&o, &gv)| if o > T::zero() { gv } else { T::zero() })
                        .collect();
                    self.accumulate(x, &dx);
                }
            }
            Op::SoftmaxChannels(x) => {
                if self.requires_grad(x) {
                    let y = &self.nodes[i].value;
                    let s = y.shape();
                    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                    let yd = y.data();
                    let mut dx = vec![T::zero(); yd.len()];
                    for ni in 0..n {
                        let base = ni * c * plane;
                        for p in 0..plane {
                            let mut dot = T::zero();
                            for ci in 0..c {
                                let j = base + ci * plane + p;
                                dot = dot + gd[j] * yd[j];
                            }
                            for ci in 0..c {
                                let j = base + ci * plane + p;
                                dx[j] = yd[j] * (gd[j] - dot);
                            }
                        }
                    }
                    self.accumulate(x, &dx);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(a, gd);
                self.accumulate(b, gd);
            }
            Op::Mul(a, b) => {
                if self.requires_grad(a) {
                    let vb = self.value(b).data();
                    let da: Vec<T> = gd.iter().zip(vb).map(|(&gv, &y)| gv * y).collect();
                    self.accumulate(a, &da);
                }
                if self.requires_grad(b) {
                    let va = self.value(a).data();
                    let db: Vec<T> = gd.iter().zip(va).map(|(&gv, &x)| gv * x).collect();
                    self.accumulate(b, &db);
                }
            }
            Op::Log(x) => {
                if self.requires_grad(x) {
                    let eps = T::from_f64(LOG_EPS);
                    let dx: Vec<T> = self
                        .value(x)
                        .data()
                        .iter()
                        .zip(gd)
                        .map(|(&v, &gv)| if v > eps { gv / v } else { T::zero() })
                        .collect();
                    self.accumulate(x, &dx);
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.requires_grad(x) {
                    let dx: Vec<T> = self
                        .value(x)
                        .data()
                        .iter()
                        .zip(gd)
                        .map(|(&v, &gv)| if v >= lo && v <= hi { gv } else { T::zero() })
                        .collect();
                    self.accumulate(x, &dx);
                }
            }
            Op::Scale(x, c) => {
                let dx: Vec<T> = gd.iter().map(|&gv| gv * c).collect();
                self.accumulate(x, &dx);
            }
            Op::Sum(x) => {
                let n = self.value(x).len();
                self.accumulate(x, &vec![gd[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(x).len();
                let gv = gd[0] / T::from_f64(n as f64);
                self.accumulate(x, &vec![gv; n]);
            }
        }
        Ok(())
    }
}
