//! Matrix products, convolution and row softmax.

use super::Tensor;
use crate::error::{Error, Result};

/// `c = a·b + beta·c` for row-major `a` (m×k) and `b` (k×n), either of which
/// may be read transposed from storage.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index matrixmultiply derives
    // from (m, k, n) and the strides chosen for row-major storage.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.h_out * self.w_out
    }

    /// Unfolds input patches into a (c_in·k·k) × (h_out·w_out) matrix.
    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut col = vec![0.0; self.patch_len() * p];
        for ci in 0..self.c_in {
            let plane = &input[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &mut col[((ci * self.k + ky) * self.k + kx) * p..][..p];
                    for oy in 0..self.h_out {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..][..self.w];
                        for ox in 0..self.w_out {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                row[oy * self.w_out + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    /// Adjoint of [`Self::im2col`].
    fn col2im(&self, col: &[f64]) -> Vec<f64> {
        let p = self.positions();
        let mut out = vec![0.0; self.c_in * self.h * self.w];
        for ci in 0..self.c_in {
            let plane = &mut out[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = &col[((ci * self.k + ky) * self.k + kx) * p..][..p];
                    for oy in 0..self.h_out {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..][..self.w];
                        for ox in 0..self.w_out {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += row[oy * self.w_out + ox];
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

impl Tensor {
    /// Matrix product of rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape().to_vec(),
                right: other.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), false, other.data(), false, 0.0, &mut out);
        Ok(Tensor::from_op(
            "matmul",
            out,
            vec![m, n],
            vec![self.clone(), other.clone()],
            move |ctx| {
                let (a, b) = (&ctx.parents[0], &ctx.parents[1]);
                let ga = a.requires_grad().then(|| {
                    let mut g = vec![0.0; m * k];
                    gemm(m, n, k, ctx.grad, false, b.data(), true, 0.0, &mut g);
                    g
                });
                let gb = b.requires_grad().then(|| {
                    let mut g = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), true, ctx.grad, false, 0.0, &mut g);
                    g
                });
                vec![ga, gb]
            },
        ))
    }

    /// 2-D cross-correlation of a `c_in×h×w` map with `c_out×c_in×k×k`
    /// kernels plus per-channel bias. Zero padding of `(k−1)/2` keeps the
    /// spatial size at stride 1; larger strides give `⌈h/stride⌉`.
    pub fn conv2d(&self, kernels: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
        let &[c_in, h, w] = self.shape() else {
            return Err(Error::invalid(format!("conv2d input must be c×h×w, got {:?}", self.shape())));
        };
        let &[c_out, kc, k, k2] = kernels.shape() else {
            return Err(Error::invalid(format!(
                "conv2d kernels must be c_out×c_in×k×k, got {:?}",
                kernels.shape()
            )));
        };
        if kc != c_in {
            return Err(Error::ShapeMismatch {
                op: "conv2d channels",
                left: self.shape().to_vec(),
                right: kernels.shape().to_vec(),
            });
        }
        if k != k2 || k % 2 == 0 {
            return Err(Error::invalid(format!("conv2d kernel must be square and odd, got {k}×{k2}")));
        }
        if bias.shape() != [c_out] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                left: vec![c_out],
                right: bias.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        let pad = (k - 1) / 2;
        let geom = ConvGeom {
            c_in,
            h,
            w,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        };
        let p = geom.positions();
        let plen = geom.patch_len();
        let col = geom.im2col(self.data());
        let mut out = vec![0.0; c_out * p];
        for (co, row) in out.chunks_mut(p).enumerate() {
            row.fill(bias.data()[co]);
        }
        gemm(c_out, plen, p, kernels.data(), false, &col, false, 1.0, &mut out);
        Ok(Tensor::from_op(
            "conv2d",
            out,
            vec![c_out, geom.h_out, geom.w_out],
            vec![self.clone(), kernels.clone(), bias.clone()],
            move |ctx| {
                let (input, kernels, bias) = (&ctx.parents[0], &ctx.parents[1], &ctx.parents[2]);
                let gk = kernels.requires_grad().then(|| {
                    let col = geom.im2col(input.data());
                    let mut g = vec![0.0; c_out * plen];
                    gemm(c_out, p, plen, ctx.grad, false, &col, true, 0.0, &mut g);
                    g
                });
                let gb = bias
                    .requires_grad()
                    .then(|| ctx.grad.chunks(p).map(|r| r.iter().sum()).collect());
                let gi = input.requires_grad().then(|| {
                    let mut gcol = vec![0.0; plen * p];
                    gemm(plen, c_out, p, kernels.data(), true, ctx.grad, false, 0.0, &mut gcol);
                    geom.col2im(&gcol)
                });
                vec![gi, gk, gb]
            },
        ))
    }

    /// Row-wise softmax of a rank-2 tensor, stabilised by subtracting each row's max.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let &[r, n] = self.shape() else {
            return Err(Error::invalid(format!("softmax_rows needs rank 2, got {:?}", self.shape())));
        };
        if self.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("softmax_rows"));
        }
        let mut out = vec![0.0; r * n];
        for (src, dst) in self.data().chunks(n).zip(out.chunks_mut(n)) {
            let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (s - max).exp();
                total += *d;
            }
            dst.iter_mut().for_each(|d| *d /= total);
        }
        Ok(Tensor::from_op("softmax_rows", out, vec![r, n], vec![self.clone()], move |ctx| {
            let mut g = vec![0.0; r * n];
            for ((y, gy), gx) in ctx.out.chunks(n).zip(ctx.grad.chunks(n)).zip(g.chunks_mut(n)) {
                let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                for ((o, y), gy) in gx.iter_mut().zip(y).zip(gy) {
                    *o = y * (gy - dot);
                }
            }
            vec![Some(g)]
        }))
    }
}
