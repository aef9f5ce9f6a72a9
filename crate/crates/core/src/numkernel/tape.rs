//! Explicit, single-use reverse-mode tape.
//!
//! A forward pass records every primitive on a [`Tape`]; [`Tape::backward`]
//! replays the records in reverse, returns the gradients of every
//! gradient-carrying leaf, and clears the tape. Handles ([`Var`]) from a
//! cleared tape are rejected, so a second `backward` without re-recording
//! is an error.

use std::sync::atomic::{AtomicU64, Ordering};

use super::ops;
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn fresh_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    generation: u64,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { input: usize, kernels: usize, stride: usize, pad: usize },
    AddBias { input: usize, bias: usize },
    Relu(usize),
    Sigmoid(usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    Transpose(usize),
    Softmax(usize),
    SpatialMul { features: usize, map: usize },
    GlobalAvgPool(usize),
    Reshape(usize),
    StackRows(Vec<usize>),
    Row(usize, usize),
    Mean(Vec<usize>),
    Bce { p: usize, target: f64, eps: f64 },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    generation: u64,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by one [`Tape::backward`] call.
#[derive(Debug)]
pub struct Gradients {
    generation: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `leaf`, if it was recorded with
    /// `requires_grad` and reachable from the loss.
    pub fn get(&self, leaf: Var) -> Option<&Tensor> {
        if leaf.generation != self.generation {
            return None;
        }
        self.grads.get(leaf.id).and_then(Option::as_ref)
    }

    /// Adds the gradient of `leaf` into `target`'s gradient buffer.
    pub fn install(&self, leaf: Var, target: &mut Tensor) -> Result<()> {
        match self.get(leaf) {
            Some(g) => target.accumulate_grad(g.data()),
            None => Ok(()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            generation: fresh_generation(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every record and invalidates outstanding handles.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.generation = fresh_generation();
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.generation != self.generation || v.id >= self.nodes.len() {
            return Err(Error::Tape(
                "variable is detached from this tape (cleared or recorded elsewhere)".into(),
            ));
        }
        Ok(v.id)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.index(v)?].value)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            id: self.nodes.len() - 1,
            generation: self.generation,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Records a leaf; it receives a gradient iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor.detached(), Op::Leaf, rg)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.detached(), Op::Leaf, false)
    }

    /// Records a leaf that always receives a gradient.
    pub fn variable(&mut self, tensor: Tensor) -> Var {
        self.push(tensor.detached(), Op::Leaf, true)
    }

    pub fn conv2d(&mut self, input: Var, kernels: Var, stride: usize, pad: usize) -> Result<Var> {
        let (i, k) = (self.index(input)?, self.index(kernels)?);
        let out = ops::conv2d(&self.nodes[i].value, &self.nodes[k].value, stride, pad)?;
        let rg = self.needs(&[i, k]);
        Ok(self.push(out, Op::Conv2d { input: i, kernels: k, stride, pad }, rg))
    }

    /// Adds `bias[c]` to every element whose last-axis index is `c`.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let (i, b) = (self.index(input)?, self.index(bias)?);
        let x = &self.nodes[i].value;
        let bv = &self.nodes[b].value;
        let c = *x.shape().last().expect("non-empty shape");
        if bv.rank() != 1 || bv.len() != c {
            return Err(Error::shape("bias channels", c, bv.len()));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(c) {
            for (v, bias) in row.iter_mut().zip(bv.data()) {
                *v += bias;
            }
        }
        let out = Tensor::new(x.shape(), data)?;
        let rg = self.needs(&[i, b]);
        Ok(self.push(out, Op::AddBias { input: i, bias: b }, rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Result<Var> {
        let i = self.index(x)?;
        let xv = &self.nodes[i].value;
        let out = Tensor::new(xv.shape(), xv.data().iter().map(|&v| f(v)).collect())?;
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(out, op(i), rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(0.0), Op::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, ops::sigmoid_scalar, Op::Sigmoid)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.unary(x, |v| v * factor, |i| Op::Scale(i, factor))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: fn(usize, usize) -> Op) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if av.shape() != bv.shape() {
            return Err(Error::InvalidShape(format!(
                "elementwise operands differ in shape: {:?} vs {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.shape(), data)?;
        let rg = self.needs(&[ia, ib]);
        Ok(self.push(out, op(ia, ib), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let out = ops::matmul(&self.nodes[ia].value, &self.nodes[ib].value)?;
        let rg = self.needs(&[ia, ib]);
        Ok(self.push(out, Op::MatMul(ia, ib), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let i = self.index(x)?;
        let out = ops::transpose(&self.nodes[i].value)?;
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(out, Op::Transpose(i), rg))
    }

    /// Softmax over a vector, or row-wise over a matrix.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let i = self.index(x)?;
        let out = ops::softmax(&self.nodes[i].value)?;
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(out, Op::Softmax(i), rg))
    }

    /// `out[h, w, c] = features[h, w, c] * map[h, w]`.
    pub fn spatial_mul(&mut self, features: Var, map: Var) -> Result<Var> {
        let (f, m) = (self.index(features)?, self.index(map)?);
        let fv = &self.nodes[f].value;
        let mv = &self.nodes[m].value;
        let &[h, w, c] = fv.shape() else {
            return Err(Error::InvalidShape(format!(
                "features must be [H, W, C], got {:?}",
                fv.shape()
            )));
        };
        let &[mh, mw] = mv.shape() else {
            return Err(Error::InvalidShape(format!(
                "attention map must be [H, W], got {:?}",
                mv.shape()
            )));
        };
        if mh != h {
            return Err(Error::shape("attention map height", h, mh));
        }
        if mw != w {
            return Err(Error::shape("attention map width", w, mw));
        }
        let mut data = fv.data().to_vec();
        for (px, a) in data.chunks_mut(c).zip(mv.data()) {
            px.iter_mut().for_each(|v| *v *= a);
        }
        let out = Tensor::new(fv.shape(), data)?;
        let rg = self.needs(&[f, m]);
        Ok(self.push(out, Op::SpatialMul { features: f, map: m }, rg))
    }

    /// Per-channel spatial mean: `[H, W, C] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let i = self.index(x)?;
        let xv = &self.nodes[i].value;
        let &[h, w, c] = xv.shape() else {
            return Err(Error::InvalidShape(format!(
                "global average pooling expects [H, W, C], got {:?}",
                xv.shape()
            )));
        };
        let mut sums = vec![0.0; c];
        for px in xv.data().chunks(c) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        let area = (h * w) as f64;
        sums.iter_mut().for_each(|s| *s /= area);
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(Tensor::from_vec(sums), Op::GlobalAvgPool(i), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let i = self.index(x)?;
        let out = self.nodes[i].value.reshape(shape)?;
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(out, Op::Reshape(i), rg))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("stack_rows needs at least one row".into()));
        }
        let ids = rows.iter().map(|&r| self.index(r)).collect::<Result<Vec<_>>>()?;
        let width = self.nodes[ids[0]].value.len();
        let mut data = Vec::with_capacity(width * ids.len());
        for (n, &i) in ids.iter().enumerate() {
            let v = &self.nodes[i].value;
            if v.rank() != 1 {
                return Err(Error::InvalidShape(format!(
                    "row {n} must be a vector, got {:?}",
                    v.shape()
                )));
            }
            if v.len() != width {
                return Err(Error::shape(format!("row {n} width"), width, v.len()));
            }
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(&[ids.len(), width], data)?;
        let rg = self.needs(&ids);
        Ok(self.push(out, Op::StackRows(ids), rg))
    }

    pub fn row(&mut self, x: Var, r: usize) -> Result<Var> {
        let i = self.index(x)?;
        let xv = &self.nodes[i].value;
        let (m, n) = match xv.shape() {
            &[m, n] => (m, n),
            other => {
                return Err(Error::InvalidShape(format!("row() expects a matrix, got {other:?}")))
            }
        };
        if r >= m {
            return Err(Error::InvalidArgument(format!("row {r} out of range for {m} rows")));
        }
        let out = Tensor::from_vec(xv.data()[r * n..(r + 1) * n].to_vec());
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(out, Op::Row(i, r), rg))
    }

    /// Mean of single-element tensors.
    pub fn mean(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::InvalidArgument("mean of no values".into()));
        }
        let ids = xs.iter().map(|&x| self.index(x)).collect::<Result<Vec<_>>>()?;
        let mut sum = 0.0;
        for &i in &ids {
            sum += self.nodes[i].value.item()?;
        }
        let rg = self.needs(&ids);
        let n = ids.len() as f64;
        Ok(self.push(Tensor::scalar(sum / n), Op::Mean(ids), rg))
    }

    /// Binary cross-entropy of a single probability against a 0/1 target,
    /// with the probability clamped to `[eps, 1 - eps]`.
    pub fn bce(&mut self, p: Var, target: f64, eps: f64) -> Result<Var> {
        let i = self.index(p)?;
        let prob = self.nodes[i].value.item()?;
        let loss = bce_value(prob, target, eps);
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(Tensor::scalar(loss), Op::Bce { p: i, target, eps }, rg))
    }

    /// Back-propagates from the scalar `loss`, returning gradients for every
    /// gradient-carrying leaf. The tape is cleared afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let root = self
            .index(loss)
            .map_err(|_| Error::Tape("loss is detached: the tape was cleared or never recorded it".into()))?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root] = Some(Tensor::full(self.nodes[root].value.shape(), 1.0));

        for id in (0..=root).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            for (target, contribution) in self.backward_node(id, &g)? {
                if !self.nodes[target].requires_grad {
                    continue;
                }
                match &mut grads[target] {
                    Some(acc) => {
                        for (a, c) in acc.data_mut().iter_mut().zip(contribution.data()) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
        }

        // Only leaves keep their gradients.
        for (id, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf) {
                grads[id] = None;
            }
        }
        let out = Gradients {
            generation: self.generation,
            grads,
        };
        self.clear();
        Ok(out)
    }

    fn backward_node(&self, id: usize, g: &Tensor) -> Result<Vec<(usize, Tensor)>> {
        let node = &self.nodes[id];
        let val = |i: usize| &self.nodes[i].value;
        let map = |t: &Tensor, f: &dyn Fn(usize, f64) -> f64| -> Result<Tensor> {
            Tensor::new(t.shape(), g.data().iter().enumerate().map(|(k, &gv)| f(k, gv)).collect())
        };
        Ok(match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { input, kernels, stride, pad } => {
                let (gx, gk) = ops::conv2d_backward(val(*input), val(*kernels), g, *stride, *pad)?;
                vec![(*input, gx), (*kernels, gk)]
            }
            Op::AddBias { input, bias } => {
                let c = val(*bias).len();
                let mut gb = vec![0.0; c];
                for row in g.data().chunks(c) {
                    for (s, v) in gb.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                vec![(*input, g.clone()), (*bias, Tensor::from_vec(gb))]
            }
            Op::Relu(x) => {
                let y = node.value.data();
                vec![(*x, map(g, &|k, gv| if y[k] > 0.0 { gv } else { 0.0 })?)]
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                vec![(*x, map(g, &|k, gv| gv * y[k] * (1.0 - y[k]))?)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                vec![
                    (*a, map(g, &|k, gv| gv * bd[k])?),
                    (*b, map(g, &|k, gv| gv * ad[k])?),
                ]
            }
            Op::Scale(x, s) => vec![(*x, map(g, &|_, gv| gv * s)?)],
            Op::MatMul(a, b) => {
                let ga = ops::matmul(g, &ops::transpose(val(*b))?)?;
                let gb = ops::matmul(&ops::transpose(val(*a))?, g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Transpose(x) => vec![(*x, ops::transpose(g)?)],
            Op::Softmax(x) => vec![(*x, ops::softmax_backward(&node.value, g))],
            Op::SpatialMul { features, map: m } => {
                let f = val(*features);
                let mv = val(*m);
                let c = f.shape()[2];
                let mut gf = vec![0.0; f.len()];
                let mut gm = vec![0.0; mv.len()];
                for (p, a) in mv.data().iter().enumerate() {
                    let base = p * c;
                    for ch in 0..c {
                        gf[base + ch] = g.data()[base + ch] * a;
                        gm[p] += g.data()[base + ch] * f.data()[base + ch];
                    }
                }
                vec![
                    (*features, Tensor::new(f.shape(), gf)?),
                    (*m, Tensor::new(mv.shape(), gm)?),
                ]
            }
            Op::GlobalAvgPool(x) => {
                let xv = val(*x);
                let (h, w, c) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let inv = 1.0 / (h * w) as f64;
                let data = (0..h * w * c).map(|k| g.data()[k % c] * inv).collect();
                vec![(*x, Tensor::new(xv.shape(), data)?)]
            }
            Op::Reshape(x) => vec![(*x, g.reshape(val(*x).shape())?)],
            Op::StackRows(ids) => {
                let width = g.shape()[1];
                ids.iter()
                    .enumerate()
                    .map(|(r, &i)| (i, Tensor::from_vec(g.data()[r * width..(r + 1) * width].to_vec())))
                    .collect()
            }
            Op::Row(x, r) => {
                let xv = val(*x);
                let n = xv.shape()[1];
                let mut gx = vec![0.0; xv.len()];
                gx[r * n..(r + 1) * n].copy_from_slice(g.data());
                vec![(*x, Tensor::new(xv.shape(), gx)?)]
            }
            Op::Mean(ids) => {
                let share = g.data()[0] / ids.len() as f64;
                ids.iter()
                    .map(|&i| (i, Tensor::full(val(i).shape(), share)))
                    .collect()
            }
            Op::Bce { p, target, eps } => {
                let prob = val(*p).data()[0];
                let d = bce_grad(prob, *target, *eps) * g.data()[0];
                vec![(*p, Tensor::full(val(*p).shape(), d))]
            }
        })
    }
}

fn clamp_prob(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

pub fn bce_value(p: f64, target: f64, eps: f64) -> f64 {
    let q = clamp_prob(p, eps);
    -(target * q.ln() + (1.0 - target) * (1.0 - q).ln())
}

/// d(bce)/dp evaluated at the clamped probability. The clamp's own zero
/// slope is not applied, so saturated wrong predictions still get a signal.
pub fn bce_grad(p: f64, target: f64, eps: f64) -> f64 {
    let q = clamp_prob(p, eps);
    -target / q + (1.0 - target) / (1.0 - q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::scalar(2.0));
        let y = tape.sigmoid(x).unwrap();
        tape.backward(y).unwrap();
        let err = tape.backward(y).unwrap_err();
        assert!(err.to_string().contains("detached"), "{err}");
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::zeros(&[2]));
        let y = tape.relu(x).unwrap();
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn var_from_other_tape_is_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.variable(Tensor::scalar(1.0));
        assert!(b.relu(x).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[5.0]);
        assert!(grads.get(c).is_none());
    }

    #[test]
    fn leaf_respects_tensor_flag_and_installs() {
        let mut param = Tensor::from_vec(vec![1.0, -2.0]).with_grad();
        let mut tape = Tape::new();
        let w = tape.leaf(&param);
        let s = tape.relu(w).unwrap();
        let s = tape.reshape(s, &[1, 2]).unwrap();
        let ones = tape.constant(Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap());
        let loss = tape.matmul(s, ones).unwrap();
        let grads = tape.backward(loss).unwrap();
        grads.install(w, &mut param).unwrap();
        assert_eq!(param.grad().unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn bce_values() {
        assert!((bce_value(0.5, 1.0, 1e-7) - std::f64::consts::LN_2).abs() < 1e-15);
        let saturated = bce_value(1.0, 1.0, 1e-7);
        assert!(saturated > 0.0 && (saturated - 1e-7).abs() < 1e-12);
        assert!(bce_value(0.0, 1.0, 1e-7).is_finite());
        assert_eq!(bce_grad(0.5, 1.0, 1e-7), -2.0);
    }
}
