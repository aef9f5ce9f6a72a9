//! Forward and backward kernels over plain tensors.
//!
//! These functions carry no autodiff bookkeeping; [`super::tape::Tape`]
//! records calls to them and invokes the matching `*_backward` kernels.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernels: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if input.len() != 3 {
            return Err(Error::InvalidShape(format!(
                "conv2d input must be [H, W, Cin], got {input:?}"
            )));
        }
        if kernels.len() != 4 {
            return Err(Error::InvalidShape(format!(
                "conv2d kernels must be [Kh, Kw, Cin, Cout], got {kernels:?}"
            )));
        }
        let (in_h, in_w, in_c) = (input[0], input[1], input[2]);
        let (k_h, k_w, k_c, out_c) = (kernels[0], kernels[1], kernels[2], kernels[3]);
        if k_c != in_c {
            return Err(Error::shape("input channels", k_c, in_c));
        }
        if k_h == 0 || k_w == 0 || out_c == 0 {
            return Err(Error::InvalidShape(format!("degenerate kernel shape {kernels:?}")));
        }
        if k_h > in_h + 2 * pad {
            return Err(Error::ShapeMismatch {
                axis: "height (kernel exceeds padded input)".into(),
                expected: in_h + 2 * pad,
                actual: k_h,
            });
        }
        if k_w > in_w + 2 * pad {
            return Err(Error::ShapeMismatch {
                axis: "width (kernel exceeds padded input)".into(),
                expected: in_w + 2 * pad,
                actual: k_w,
            });
        }
        Ok(ConvGeometry {
            in_h,
            in_w,
            in_c,
            k_h,
            k_w,
            out_c,
            out_h: (in_h + 2 * pad - k_h) / stride + 1,
            out_w: (in_w + 2 * pad - k_w) / stride + 1,
            stride,
            pad,
        })
    }

    /// Input coordinate feeding output `o` through kernel tap `k`, if in bounds.
    #[inline]
    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

/// 2-D cross-correlation with zero padding.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = ConvGeometry::new(input.shape(), kernels.shape(), stride, pad)?;
    let x = input.data();
    let k = kernels.data();
    let mut out = vec![0.0; g.out_h * g.out_w * g.out_c];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let o_base = (oy * g.out_w + ox) * g.out_c;
            let acc = &mut out[o_base..o_base + g.out_c];
            for ky in 0..g.k_h {
                let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                for kx in 0..g.k_w {
                    let Some(ix) = g.source(ox, kx, g.in_w) else { continue };
                    let x_base = (iy * g.in_w + ix) * g.in_c;
                    let k_base = (ky * g.k_w + kx) * g.in_c * g.out_c;
                    for ci in 0..g.in_c {
                        let xv = x[x_base + ci];
                        let krow = &k[k_base + ci * g.out_c..k_base + (ci + 1) * g.out_c];
                        for (a, kv) in acc.iter_mut().zip(krow) {
                            *a += xv * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[g.out_h, g.out_w, g.out_c], out)
}

/// Gradients of [`conv2d`] with respect to its input and kernels.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor)> {
    let g = ConvGeometry::new(input.shape(), kernels.shape(), stride, pad)?;
    if grad_out.shape() != [g.out_h, g.out_w, g.out_c] {
        return Err(Error::InvalidShape(format!(
            "conv2d upstream gradient has shape {:?}, expected {:?}",
            grad_out.shape(),
            [g.out_h, g.out_w, g.out_c]
        )));
    }
    let x = input.data();
    let k = kernels.data();
    let go = grad_out.data();
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let o_base = (oy * g.out_w + ox) * g.out_c;
            let grow = &go[o_base..o_base + g.out_c];
            for ky in 0..g.k_h {
                let Some(iy) = g.source(oy, ky, g.in_h) else { continue };
                for kx in 0..g.k_w {
                    let Some(ix) = g.source(ox, kx, g.in_w) else { continue };
                    let x_base = (iy * g.in_w + ix) * g.in_c;
                    let k_base = (ky * g.k_w + kx) * g.in_c * g.out_c;
                    for ci in 0..g.in_c {
                        let xv = x[x_base + ci];
                        let kr = k_base + ci * g.out_c;
                        let mut dx = 0.0;
                        for co in 0..g.out_c {
                            dx += grow[co] * k[kr + co];
                            gk[kr + co] += grow[co] * xv;
                        }
                        gx[x_base + ci] += dx;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape(), gx)?,
        Tensor::new(kernels.shape(), gk)?,
    ))
}

fn matrix_dims(t: &Tensor, name: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(Error::InvalidShape(format!(
            "{name} must be a matrix, got shape {other:?}"
        ))),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = matrix_dims(a, "matmul lhs")?;
    let (kb, n) = matrix_dims(b, "matmul rhs")?;
    if k != kb {
        return Err(Error::shape("matmul inner axis", k, kb));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            for (o, bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = matrix_dims(a, "transpose input")?;
    let d = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::new(&[n, m], out)
}

/// Elementwise primitives available outside a tape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pointwise {
    Sigmoid,
    Relu,
    Add,
    Mul,
    Scale(f64),
}

impl Pointwise {
    fn arity(self) -> usize {
        match self {
            Pointwise::Add | Pointwise::Mul => 2,
            _ => 1,
        }
    }
}

pub fn pointwise(op: Pointwise, args: &[&Tensor]) -> Result<Tensor> {
    if args.len() != op.arity() {
        return Err(Error::InvalidArgument(format!(
            "{op:?} takes {} tensor argument(s), got {}",
            op.arity(),
            args.len()
        )));
    }
    let x = args[0];
    let data: Vec<f64> = match op {
        Pointwise::Sigmoid => x.data().iter().map(|&v| sigmoid_scalar(v)).collect(),
        Pointwise::Relu => x.data().iter().map(|&v| v.max(0.0)).collect(),
        Pointwise::Scale(s) => x.data().iter().map(|&v| v * s).collect(),
        Pointwise::Add | Pointwise::Mul => {
            let y = args[1];
            if x.shape() != y.shape() {
                return Err(Error::InvalidShape(format!(
                    "elementwise operands differ in shape: {:?} vs {:?}",
                    x.shape(),
                    y.shape()
                )));
            }
            let f = if op == Pointwise::Add {
                |a: f64, b: f64| a + b
            } else {
                |a: f64, b: f64| a * b
            };
            x.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect()
        }
    };
    Tensor::new(x.shape(), data)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row, written into `out`.
pub fn softmax_into(x: &[f64], out: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Softmax over a 1-D tensor, or independently over each row of a matrix.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("softmax of an empty input".into()));
    }
    let row = *x.shape().last().expect("tensor has at least one axis");
    if x.rank() > 2 {
        return Err(Error::InvalidShape(format!(
            "softmax expects a vector or matrix, got {:?}",
            x.shape()
        )));
    }
    let mut out = vec![0.0; x.len()];
    for (xi, oi) in x.data().chunks(row).zip(out.chunks_mut(row)) {
        softmax_into(xi, oi);
    }
    Tensor::new(x.shape(), out)
}

/// Backward rule for [`softmax`] given its output `y`.
pub fn softmax_backward(y: &Tensor, grad_out: &Tensor) -> Tensor {
    let row = *y.shape().last().expect("non-empty shape");
    let mut gx = vec![0.0; y.len()];
    for ((yr, gr), xr) in y
        .data()
        .chunks(row)
        .zip(grad_out.data().chunks(row))
        .zip(gx.chunks_mut(row))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((x, y), g) in xr.iter_mut().zip(yr).zip(gr) {
            *x = y * (g - dot);
        }
    }
    Tensor::new(y.shape(), gx).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::full(&[3, 3, 1], 1.0);
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[3, 3, 1]);
        assert!(y.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn conv_sum_of_ones() {
        let x = Tensor::full(&[3, 3, 1], 1.0);
        let k = Tensor::full(&[3, 3, 1, 1], 1.0);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_output_size_with_stride_and_padding() {
        let x = Tensor::zeros(&[64, 64, 1]);
        let k = Tensor::zeros(&[3, 3, 1, 8]);
        let y = conv2d(&x, &k, 2, 1).unwrap();
        assert_eq!(y.shape(), &[32, 32, 8]);
    }

    #[test]
    fn conv_errors_name_axis() {
        let x = Tensor::zeros(&[4, 4, 2]);
        let k = Tensor::zeros(&[3, 3, 3, 1]);
        let err = conv2d(&x, &k, 1, 0).unwrap_err().to_string();
        assert!(err.contains("input channels"), "{err}");

        let k = Tensor::zeros(&[5, 3, 2, 1]);
        let err = conv2d(&x, &k, 1, 0).unwrap_err().to_string();
        assert!(err.contains("height"), "{err}");

        let k = Tensor::zeros(&[3, 3, 2, 1]);
        assert!(matches!(
            conv2d(&x, &k, 0, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::new(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[3.0, 7.0]);

        let id = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(matmul(&id, &a).unwrap(), a);

        let bad = Tensor::zeros(&[3, 1]);
        assert!(matmul(&a, &bad).is_err());
    }

    #[test]
    fn softmax_edge_cases() {
        let y = softmax(&Tensor::from_vec(vec![2.5; 3])).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(softmax(&Tensor::from_vec(vec![-7.0])).unwrap().data(), &[1.0]);

        let y = softmax(&Tensor::from_vec(vec![1000.0, 0.0])).unwrap();
        assert!(y.is_finite());
        // e^-1000 underflows even in extended precision; the exact answer is 1 - 5e-435.
        assert_eq!(y.data(), &[1.0, 0.0]);
    }

    #[test]
    fn pointwise_definitions() {
        let z = Tensor::scalar(0.0);
        assert_eq!(pointwise(Pointwise::Sigmoid, &[&z]).unwrap().data(), &[0.5]);
        let x = Tensor::from_vec(vec![-3.0, 3.0]);
        assert_eq!(pointwise(Pointwise::Relu, &[&x]).unwrap().data(), &[0.0, 3.0]);
        assert_eq!(pointwise(Pointwise::Scale(2.0), &[&x]).unwrap().data(), &[-6.0, 6.0]);
        assert_eq!(pointwise(Pointwise::Mul, &[&x, &x]).unwrap().data(), &[9.0, 9.0]);
        let y = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(pointwise(Pointwise::Add, &[&x, &y]).is_err());
        assert!(pointwise(Pointwise::Add, &[&x]).is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert_eq!(sigmoid_scalar(-800.0), 0.0);
        assert_eq!(sigmoid_scalar(800.0), 1.0);
    }
}
