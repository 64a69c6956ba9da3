//! Elementwise, reduction and shape operations.

use super::{numel, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Bcast {
    Same,
    RightScalar,
    LeftScalar,
}

fn bcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast> {
    if a.shape() == b.shape() {
        Ok(Bcast::Same)
    } else if b.numel() == 1 {
        Ok(Bcast::RightScalar)
    } else if a.numel() == 1 {
        Ok(Bcast::LeftScalar)
    } else {
        Err(Error::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}

/// Binary elementwise op; `df(x, y)` returns the partials (∂f/∂x, ∂f/∂y).
fn binary(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: fn(f64, f64) -> f64,
    df: fn(f64, f64) -> (f64, f64),
) -> Result<Tensor> {
    let kind = bcast(op, a, b)?;
    let (shape, n) = match kind {
        Bcast::LeftScalar => (b.shape().to_vec(), b.numel()),
        _ => (a.shape().to_vec(), a.numel()),
    };
    let at = |t: &Tensor, i: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
    let data = (0..n).map(|i| f(at(a, i), at(b, i))).collect();
    Ok(Tensor::from_op(op, data, shape, vec![a.clone(), b.clone()], move |ctx| {
        let (a, b) = (&ctx.parents[0], &ctx.parents[1]);
        let at = |t: &Tensor, i: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
        let mut ga = a.requires_grad().then(|| vec![0.0; a.numel()]);
        let mut gb = b.requires_grad().then(|| vec![0.0; b.numel()]);
        for (i, g) in ctx.grad.iter().enumerate() {
            let (dx, dy) = df(at(a, i), at(b, i));
            if let Some(ga) = ga.as_mut() {
                match kind {
                    Bcast::LeftScalar => ga[0] += g * dx,
                    _ => ga[i] += g * dx,
                }
            }
            if let Some(gb) = gb.as_mut() {
                match kind {
                    Bcast::RightScalar => gb[0] += g * dy,
                    _ => gb[i] += g * dy,
                }
            }
        }
        vec![ga, gb]
    }))
}

impl Tensor {
    /// Unary elementwise op; `df(x, out)` is the local derivative.
    fn unary(
        &self,
        op: &'static str,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Tensor {
        let data = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(op, data, self.shape().to_vec(), vec![self.clone()], move |ctx| {
            let x = ctx.parents[0].data();
            let g = ctx
                .grad
                .iter()
                .zip(x.iter().zip(ctx.out))
                .map(|(g, (&x, &o))| g * df(x, o))
                .collect();
            vec![Some(g)]
        })
    }

    /// Elementwise sum; either side may be a single-element tensor.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary("add", self, other, |x, y| x + y, |_, _| (1.0, 1.0))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary("sub", self, other, |x, y| x - y, |_, _| (1.0, -1.0))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary("mul", self, other, |x, y| x * y, |x, y| (y, x))
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        binary("div", self, other, |x, y| x / y, |x, y| (1.0 / y, -x / (y * y)))
    }

    pub fn neg(&self) -> Tensor {
        self.unary("neg", |x| -x, |_, _| -1.0)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary("scale", move |x| c * x, move |_, _| c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary("add_scalar", move |x| x + c, |_, _| 1.0)
    }

    /// Absolute value; the subgradient at 0 is taken as 0.
    pub fn abs(&self) -> Tensor {
        self.unary("abs", f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", |x| x * x, |x, _| 2.0 * x)
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary(
            "leaky_relu",
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x, _| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", sigmoid, |_, o| o * (1.0 - o))
    }

    pub fn ln(&self) -> Tensor {
        self.unary("ln", f64::ln, |x, _| 1.0 / x)
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", f64::exp, |_, o| o)
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.unary(
            "clamp",
            move |x| x.clamp(lo, hi),
            move |x, _| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 },
        )
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        Tensor::from_op("sum", vec![total], Vec::new(), vec![self.clone()], |ctx| {
            vec![Some(vec![ctx.grad[0]; ctx.parents[0].numel()])]
        })
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    /// Frobenius norm over all entries. The gradient at the zero tensor is taken as 0.
    pub fn frobenius(&self) -> Tensor {
        let norm = self.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        Tensor::from_op("frobenius", vec![norm], Vec::new(), vec![self.clone()], |ctx| {
            let n = ctx.out[0];
            let x = ctx.parents[0].data();
            let g = if n > 0.0 {
                x.iter().map(|v| ctx.grad[0] * v / n).collect()
            } else {
                vec![0.0; x.len()]
            };
            vec![Some(g)]
        })
    }

    /// Sums over the listed axes, removing them from the shape.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &ax in axes {
            if ax >= rank {
                return Err(Error::InvalidAxis { axis: ax, rank });
            }
            reduced[ax] = true;
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = in_shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&d, _)| d)
            .collect();
        let map = reduce_index_map(&in_shape, &reduced);
        let mut out = vec![0.0; numel(&out_shape)];
        for (x, &o) in self.data().iter().zip(&map) {
            out[o] += x;
        }
        Ok(Tensor::from_op("sum_axes", out, out_shape, vec![self.clone()], move |ctx| {
            vec![Some(map.iter().map(|&o| ctx.grad[o]).collect())]
        }))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let s = self.sum_axes(axes)?;
        let count = self.numel() / s.numel();
        Ok(s.scale(1.0 / count as f64))
    }

    /// Same data, new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape().to_vec(),
                right: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            "reshape",
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            |ctx| vec![Some(ctx.grad.to_vec())],
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let [r, c] = *self.shape() else {
            return Err(Error::invalid(format!("transpose needs rank 2, got {:?}", self.shape())));
        };
        let data = transpose_data(self.data(), r, c);
        Ok(Tensor::from_op("transpose", data, vec![c, r], vec![self.clone()], move |ctx| {
            vec![Some(transpose_data(ctx.grad, c, r))]
        }))
    }

    /// Slice `[start, start + len)` along the leading axis.
    pub fn narrow(&self, start: usize, len: usize) -> Result<Tensor> {
        let Some(&lead) = self.shape().first() else {
            return Err(Error::InvalidAxis { axis: 0, rank: 0 });
        };
        if len == 0 || start + len > lead {
            return Err(Error::invalid(format!(
                "narrow [{start}, {}) out of range for leading dim {lead}",
                start + len
            )));
        }
        let inner = self.numel() / lead;
        let mut shape = self.shape().to_vec();
        shape[0] = len;
        let data = self.data()[start * inner..(start + len) * inner].to_vec();
        Ok(Tensor::from_op("narrow", data, shape, vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; ctx.parents[0].numel()];
            g[start * inner..(start + len) * inner].copy_from_slice(ctx.grad);
            vec![Some(g)]
        }))
    }

    /// Concatenation along the leading axis; trailing dims must agree.
    pub fn concat(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        if first.rank() == 0 {
            return Err(Error::InvalidAxis { axis: 0, rank: 0 });
        }
        let tail = &first.shape()[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() == 0 || &p.shape()[1..] != tail {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    left: first.shape().to_vec(),
                    right: p.shape().to_vec(),
                });
            }
            lead += p.shape()[0];
            data.extend_from_slice(p.data());
        }
        let mut shape = first.shape().to_vec();
        shape[0] = lead;
        Ok(Tensor::from_op("concat", data, shape, parts.to_vec(), |ctx| {
            let mut offset = 0;
            ctx.parents
                .iter()
                .map(|p| {
                    let n = p.numel();
                    let g = ctx.grad[offset..offset + n].to_vec();
                    offset += n;
                    p.requires_grad().then_some(g)
                })
                .collect()
        }))
    }

    /// Picks entries by flat index into a rank-1 tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.numel()) {
            return Err(Error::invalid(format!(
                "gather index {bad} out of range for {} elements",
                self.numel()
            )));
        }
        if indices.is_empty() {
            return Err(Error::invalid("gather with no indices"));
        }
        let data = indices.iter().map(|&i| self.data()[i]).collect();
        let idx = indices.to_vec();
        Ok(Tensor::from_op("gather", data, vec![indices.len()], vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; ctx.parents[0].numel()];
            for (&i, v) in idx.iter().zip(ctx.grad) {
                g[i] += v;
            }
            vec![Some(g)]
        }))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn transpose_data(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// For every input flat index, the flat index of its reduction target.
fn reduce_index_map(shape: &[usize], reduced: &[bool]) -> Vec<usize> {
    let rank = shape.len();
    let mut out_strides = vec![0usize; rank];
    let mut stride = 1;
    for ax in (0..rank).rev() {
        if !reduced[ax] {
            out_strides[ax] = stride;
            stride *= shape[ax];
        }
    }
    let mut idx = vec![0usize; rank];
    let mut map = Vec::with_capacity(numel(shape));
    for _ in 0..numel(shape) {
        map.push(idx.iter().zip(&out_strides).map(|(i, s)| i * s).sum());
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    map
}
