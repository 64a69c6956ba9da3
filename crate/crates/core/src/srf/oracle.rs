//! Supervised reference fit: with the hyperspectral cube known, recover the
//! dictionary weights of each channel by least squares over the probability
//! simplex.

use super::SrfDictionary;
use crate::error::{Error, Result};
use crate::spectral::{HsImage, RgbImage, Srf};
use crate::tensor::gemm;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub max_iterations: usize,
    /// Stop once no weight moves by more than this in one iteration.
    pub tolerance: f64,
    pub power_iterations: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            max_iterations: 10_000,
            tolerance: 1e-10,
            power_iterations: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OracleFit {
    /// Simplex weights over the dictionary atoms, one vector per channel.
    pub weights: [Vec<f64>; 3],
    pub srf: Srf,
    /// `‖A·w − X(i)‖₂` per channel.
    pub residuals: [f64; 3],
    pub iterations: [usize; 3],
}

impl OracleFit {
    pub fn argmax(&self) -> [usize; 3] {
        [0, 1, 2].map(|i| argmax(&self.weights[i]))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Euclidean projection onto `{w ≥ 0, Σw = 1}` (sort-and-threshold).
pub fn project_simplex(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    v.iter_mut().for_each(|x| *x = (*x - theta).max(0.0));
}

/// Largest eigenvalue of a symmetric PSD `n×n` matrix.
fn spectral_norm(gram: &[f64], n: usize, iters: usize) -> f64 {
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut lambda = 0.0;
    for _ in 0..iters {
        let mut next = vec![0.0; n];
        gemm(n, n, 1, gram, false, &v, false, 0.0, &mut next);
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        let converged = (norm - lambda).abs() <= 1e-14 * norm;
        lambda = norm;
        v = next;
        if converged {
            break;
        }
    }
    lambda
}

struct ChannelFit {
    weights: Vec<f64>,
    residual: f64,
    iterations: usize,
}

fn fit_channel(
    design_t: &[f64],
    target: &[f64],
    n: usize,
    channel: usize,
    opts: &OracleOptions,
) -> Result<ChannelFit> {
    let pixels = target.len();
    // Gram = AᵀA and Aᵀx, with A stored transposed (n×pixels).
    let mut gram = vec![0.0; n * n];
    gemm(n, pixels, n, design_t, false, design_t, true, 0.0, &mut gram);
    let mut atx = vec![0.0; n];
    gemm(n, pixels, 1, design_t, false, target, false, 0.0, &mut atx);

    let lipschitz = 2.0 * spectral_norm(&gram, n, opts.power_iterations);
    let residual_of = |w: &[f64]| {
        let mut fitted = vec![0.0; pixels];
        gemm(1, n, pixels, w, false, design_t, false, 0.0, &mut fitted);
        fitted
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    if lipschitz == 0.0 {
        let w = vec![1.0 / n as f64; n];
        let residual = residual_of(&w);
        return Ok(ChannelFit {
            weights: w,
            residual,
            iterations: 0,
        });
    }
    let step = 1.0 / lipschitz;

    // Accelerated projected gradient with gradient-based restart.
    let mut w = vec![1.0 / n as f64; n];
    let mut probe = w.clone();
    let mut momentum = 1.0f64;
    let mut gw = vec![0.0; n];
    let mut last_move = f64::INFINITY;
    for it in 1..=opts.max_iterations {
        gemm(n, n, 1, &gram, false, &probe, false, 0.0, &mut gw);
        let mut next: Vec<f64> = probe
            .iter()
            .zip(gw.iter().zip(&atx))
            .map(|(pi, (g, b))| pi - step * 2.0 * (g - b))
            .collect();
        project_simplex(&mut next);
        last_move = w.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if last_move <= opts.tolerance {
            let residual = residual_of(&next);
            return Ok(ChannelFit {
                weights: next,
                residual,
                iterations: it,
            });
        }
        // Restart when the momentum direction opposes the gradient step.
        let uphill: f64 = probe
            .iter()
            .zip(&next)
            .zip(&w)
            .map(|((p, x), prev)| (p - x) * (x - prev))
            .sum();
        if uphill > 0.0 {
            momentum = 1.0;
            probe = next.clone();
        } else {
            let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / m_next;
            probe = next.iter().zip(&w).map(|(x, prev)| x + beta * (x - prev)).collect();
            momentum = m_next;
        }
        w = next;
    }
    Err(Error::NotConverged {
        channel,
        iterations: opts.max_iterations,
        residual: residual_of(&w),
        step: last_move,
    })
}

/// For each channel, minimises `‖Σ_j w_j C_j(i)·Y − X(i)‖₂` over simplex weights.
pub fn fit_srf_oracle(x: &RgbImage, y: &HsImage, dict: &SrfDictionary, opts: &OracleOptions) -> Result<OracleFit> {
    if dict.bands() != y.bands() {
        return Err(Error::BandMismatch {
            expected: y.bands(),
            actual: dict.bands(),
        });
    }
    if (x.height(), x.width()) != (y.height(), y.width()) {
        return Err(Error::ShapeMismatch {
            op: "fit_srf_oracle",
            left: vec![3, x.height(), x.width()],
            right: vec![y.bands(), y.height(), y.width()],
        });
    }
    let n = dict.len();
    if y.pixels() < n {
        return Err(Error::invalid(format!(
            "{} pixels cannot determine {n} weights",
            y.pixels()
        )));
    }
    let fits = [0, 1, 2].map(|i| fit_channel(&atom_responses(dict, i, y), x.channel(i), n, i, opts));
    let mut out = Vec::with_capacity(3);
    for f in fits {
        out.push(f?);
    }
    let weights = [out[0].weights.clone(), out[1].weights.clone(), out[2].weights.clone()];
    let srf = dict.combine_rows("oracle", &weights)?;
    Ok(OracleFit {
        weights,
        srf,
        residuals: [out[0].residual, out[1].residual, out[2].residual],
        iterations: [out[0].iterations, out[1].iterations, out[2].iterations],
    })
}

/// Channel-`i` response of every atom at every pixel, `n×pixels`.
fn atom_responses(dict: &SrfDictionary, channel: usize, y: &HsImage) -> Vec<f64> {
    let n = dict.len();
    let mut out = vec![0.0; n * y.pixels()];
    gemm(n, y.bands(), y.pixels(), &dict.channel_matrix(channel), false, y.data(), false, 0.0, &mut out);
    out
}
