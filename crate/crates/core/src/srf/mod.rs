//! Camera response estimation from a single RGB image.
//!
//! A small CNN maps the image to a `3×N` weight matrix `W`. Row `i` of the
//! estimated response is the softmax(`W(i)`)-weighted convex combination of
//! row `i` of every dictionary atom. The rows are then rescaled by the
//! ratio of the row's sigmoid-weight mass to the average mass over the three
//! rows, which mimics Gray World white balancing applied by the camera.

mod oracle;

pub use oracle::{fit_srf_oracle, OracleFit, OracleOptions};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, ConvStack, Init, Linear, Module, Param};
use crate::spectral::{RgbImage, Srf};
use crate::tensor::Tensor;

/// Ordered collection of candidate camera responses sharing one band grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SrfDictionary {
    atoms: Vec<Srf>,
}

impl SrfDictionary {
    pub fn new(atoms: Vec<Srf>) -> Result<Self> {
        if atoms.len() < 2 {
            return Err(Error::invalid(format!("dictionary needs at least 2 atoms, got {}", atoms.len())));
        }
        let s = atoms[0].bands();
        if let Some(bad) = atoms.iter().find(|a| a.bands() != s) {
            return Err(Error::BandMismatch {
                expected: s,
                actual: bad.bands(),
            });
        }
        Ok(SrfDictionary { atoms })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn bands(&self) -> usize {
        self.atoms[0].bands()
    }

    pub fn atoms(&self) -> &[Srf] {
        &self.atoms
    }

    pub fn atom(&self, j: usize) -> &Srf {
        &self.atoms[j]
    }

    pub fn names(&self) -> Vec<&str> {
        self.atoms.iter().map(Srf::name).collect()
    }

    /// Row `channel` of every atom stacked into an `N×s` matrix.
    pub fn channel_matrix(&self, channel: usize) -> Vec<f64> {
        self.atoms.iter().flat_map(|a| a.row(channel).iter().copied()).collect()
    }

    /// Convex combination of atoms using one weight vector per channel.
    pub fn combine_rows(&self, name: &str, weights: &[Vec<f64>; 3]) -> Result<Srf> {
        let s = self.bands();
        let mut m = vec![0.0; 3 * s];
        for (i, w) in weights.iter().enumerate() {
            if w.len() != self.len() {
                return Err(Error::invalid(format!("{} weights for {} atoms", w.len(), self.len())));
            }
            for (atom, &wj) in self.atoms.iter().zip(w) {
                for (dst, src) in m[i * s..(i + 1) * s].iter_mut().zip(atom.row(i)) {
                    *dst += wj * src;
                }
            }
        }
        Srf::new(name, s, m)
    }
}

/// `Ĉ(i) = Σ_j softmax(W(i))_j · C_j(i)` as a differentiable `3×s` tensor.
pub fn combine_dictionary(w: &Tensor, dict: &SrfDictionary) -> Result<Tensor> {
    let n = dict.len();
    if w.shape() != [3, n] {
        return Err(Error::ShapeMismatch {
            op: "combine_dictionary",
            left: vec![3, n],
            right: w.shape().to_vec(),
        });
    }
    let probs = w.softmax_rows()?;
    let rows = (0..3)
        .map(|i| {
            let atoms_i = Tensor::new(dict.channel_matrix(i), &[n, dict.bands()])?;
            probs.narrow(i, 1)?.matmul(&atoms_i)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat(&rows)
}

/// Per-row white-balance factors `Σ_j σ(W(i,j)) / (Σ_k Σ_j σ(W(k,j)) / 3)`.
pub fn white_balance_factors(w: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 || w.shape()[0] != 3 {
        return Err(Error::invalid(format!("weights must be 3×N, got {:?}", w.shape())));
    }
    // 3·r_i / (r_0 + r_1 + r_2): equal row masses give factors of exactly 1.
    let rows = w.sigmoid().sum_axes(&[1])?;
    rows.scale(3.0).div(&rows.sum())
}

/// Scales row `i` of `c_hat` by white-balance factor `i`; returns `(C_o, factors)`.
pub fn white_balance_rescale(w: &Tensor, c_hat: &Tensor) -> Result<(Tensor, Tensor)> {
    let factors = white_balance_factors(w)?;
    let &[3, s] = c_hat.shape() else {
        return Err(Error::invalid(format!("SRF tensor must be 3×s, got {:?}", c_hat.shape())));
    };
    let spread = factors.reshape(&[3, 1])?.matmul(&Tensor::ones(&[1, s]))?;
    Ok((spread.mul(c_hat)?, factors))
}

/// Feature extractor plus linear map producing the raw `3×N` weight matrix.
#[derive(Debug, Clone)]
pub struct WeightHead {
    pub features: ConvStack,
    pub linear: Linear,
    atoms: usize,
}

impl WeightHead {
    /// Three 3×3 convolutions (3→width→width→width), global average pooling
    /// and a linear map to `3·atoms` outputs. `zero_output` zero-initialises
    /// the linear layer so every image starts at the uniform dictionary mix.
    pub fn new(atoms: usize, width: usize, zero_output: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut features = ConvStack::new(
            "srf_head.conv",
            &[3, width, width, width],
            3,
            1,
            Init::HeUniform { slope: crate::nn::HIDDEN_SLOPE },
            rng,
        )?;
        features.activate_last = true;
        let init = if zero_output {
            Init::Zeros
        } else {
            Init::HeUniform { slope: 1.0 }
        };
        let linear = Linear::new("srf_head.linear", width, 3 * atoms, init, rng)?;
        Ok(WeightHead { features, linear, atoms })
    }

    pub fn atoms(&self) -> usize {
        self.atoms
    }

    /// Raw weight matrix `W = M(X)`, shape `3×N` for any image size.
    pub fn estimate_weights(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 || x.shape()[0] != 3 {
            return Err(Error::invalid(format!("RGB tensor must be 3×h×w, got {:?}", x.shape())));
        }
        let pooled = global_avg_pool(&self.features.forward(x)?)?;
        self.linear.forward(&pooled)?.reshape(&[3, self.atoms])
    }
}

impl Module for WeightHead {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.features.params();
        p.extend(self.linear.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.features.params_mut();
        p.extend(self.linear.params_mut());
        p
    }
}

/// Every intermediate of one response estimate, all differentiable.
#[derive(Debug, Clone)]
pub struct SrfEstimate {
    pub weights: Tensor,
    pub combined: Tensor,
    pub factors: Tensor,
    pub srf: Tensor,
}

/// Runs the head, the dictionary combination and the white-balance rescale.
pub fn estimate_srf(x: &Tensor, head: &WeightHead, dict: &SrfDictionary) -> Result<SrfEstimate> {
    if head.atoms() != dict.len() {
        return Err(Error::invalid(format!(
            "head predicts {} weights per channel, dictionary has {} atoms",
            head.atoms(),
            dict.len()
        )));
    }
    let weights = head.estimate_weights(x)?;
    let combined = combine_dictionary(&weights, dict)?;
    let (srf, factors) = white_balance_rescale(&weights, &combined)?;
    Ok(SrfEstimate {
        weights,
        combined,
        factors,
        srf,
    })
}

/// Convenience wrapper returning a plain [`Srf`] for an image.
pub fn estimate_srf_for_image(x: &RgbImage, head: &WeightHead, dict: &SrfDictionary) -> Result<(Srf, Vec<f64>)> {
    let est = estimate_srf(&x.to_tensor(), head, dict)?;
    Ok((Srf::from_tensor("estimated", &est.srf)?, est.weights.to_vec()))
}

/// Cosine similarity between matching rows of two responses.
pub fn row_cosines(a: &Srf, b: &Srf) -> [f64; 3] {
    [0, 1, 2].map(|i| {
        let (x, y) = (a.row(i), b.row(i));
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        dot / (nx * ny)
    })
}
