//! Coarse-to-fine spectral generator driven by the back-projected RGB error.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ConvStack, Init, Module, Param, HIDDEN_SLOPE};
use crate::spectral::{HsImage, RgbImage, Srf};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub bands: usize,
    /// Hidden channel count of every sub-network.
    pub width: usize,
    /// Total stage count: one coarse net plus `stages − 1` refinements.
    pub stages: usize,
    pub final_slope: f64,
    /// Scale of the coarse net's last-layer weights relative to He init.
    pub init_gain: f64,
    /// Initial bias of the coarse net's output. Starting every band above
    /// zero keeps bands that no camera sees from settling on the flat side
    /// of the final threshold, where their gradient is cut by `final_slope`.
    pub init_level: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            bands: crate::spectral::DEFAULT_BANDS,
            width: 32,
            stages: 4,
            final_slope: 0.01,
            init_gain: 0.1,
            init_level: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorNet {
    pub coarse: ConvStack,
    pub refine: Vec<ConvStack>,
    config: GeneratorConfig,
}

/// Intermediate cubes of one forward pass.
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    /// `Ỹ⁽¹⁾ … Ỹ⁽ᵀ⁾` before thresholding.
    pub stages: Vec<Tensor>,
    /// Back-projected error maps fed to each refinement.
    pub errors: Vec<Tensor>,
    /// Thresholded output.
    pub output: Tensor,
}

/// `C_o·Ỹ − X` as a `3×h×w` map.
pub fn error_map(y: &Tensor, x: &Tensor, c_o: &Tensor) -> Result<Tensor> {
    let (&[s, h, w], &[3, xh, xw], &[3, cs]) = (y.shape(), x.shape(), c_o.shape()) else {
        return Err(Error::invalid(format!(
            "error map needs s×h×w, 3×h×w and 3×s, got {:?}, {:?}, {:?}",
            y.shape(),
            x.shape(),
            c_o.shape()
        )));
    };
    if cs != s {
        return Err(Error::BandMismatch {
            expected: s,
            actual: cs,
        });
    }
    if (xh, xw) != (h, w) {
        return Err(Error::ShapeMismatch {
            op: "error_map",
            left: y.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    c_o.matmul(&y.reshape(&[s, h * w])?)?.reshape(&[3, h, w])?.sub(x)
}

/// One back-projection step `Ỹ + net(C_o·Ỹ − X)`, returning the new cube and the error map.
pub fn back_project(
    y: &Tensor,
    x: &Tensor,
    c_o: &Tensor,
    net: impl FnOnce(&Tensor) -> Result<Tensor>,
) -> Result<(Tensor, Tensor)> {
    let e = error_map(y, x, c_o)?;
    let update = net(&e)?;
    if update.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op: "back_project",
            left: y.shape().to_vec(),
            right: update.shape().to_vec(),
        });
    }
    Ok((y.add(&update)?, e))
}

impl GeneratorNet {
    pub fn new(config: GeneratorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if config.stages == 0 || config.bands == 0 || config.width == 0 {
            return Err(Error::invalid(format!("degenerate generator config {config:?}")));
        }
        let (s, w) = (config.bands, config.width);
        let last = Init::ScaledHeUniform {
            slope: HIDDEN_SLOPE,
            gain: config.init_gain,
        };
        let mut coarse = ConvStack::new("gen.coarse", &[3, w, w, w, s], 3, 1, last, rng)?;
        coarse.layers.last_mut().expect("four layers").bias.set_data(vec![config.init_level; s])?;
        let refine = (1..config.stages)
            .map(|t| ConvStack::new(&format!("gen.refine{t}"), &[3, w, w, s], 3, 1, Init::Zeros, rng))
            .collect::<Result<_>>()?;
        Ok(GeneratorNet { coarse, refine, config })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn bands(&self) -> usize {
        self.config.bands
    }

    /// `Ỹ⁽¹⁾ = G⁰(X)`.
    pub fn coarse_generate(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 || x.shape()[0] != 3 {
            return Err(Error::invalid(format!("RGB tensor must be 3×h×w, got {:?}", x.shape())));
        }
        self.coarse.forward(x)
    }

    /// Stage `t ∈ 1..T`: `Ỹ⁽ᵗ⁺¹⁾ = Ỹ⁽ᵗ⁾ + Gᵗ(C_o·Ỹ⁽ᵗ⁾ − X)`.
    pub fn refine_stage(&self, t: usize, y: &Tensor, x: &Tensor, c_o: &Tensor) -> Result<(Tensor, Tensor)> {
        let net = self
            .refine
            .get(t.wrapping_sub(1))
            .ok_or_else(|| Error::invalid(format!("no refinement stage {t}")))?;
        back_project(y, x, c_o, |e| net.forward(e))
    }

    /// Full differentiable pass with every intermediate kept.
    pub fn forward(&self, x: &Tensor, c_o: &Tensor) -> Result<GeneratorTrace> {
        let mut y = self.coarse_generate(x)?;
        let mut stages = vec![y.clone()];
        let mut errors = Vec::with_capacity(self.refine.len());
        for t in 1..self.config.stages {
            let (next, e) = self.refine_stage(t, &y, x, c_o)?;
            errors.push(e);
            stages.push(next.clone());
            y = next;
        }
        let output = y.leaky_relu(self.config.final_slope);
        Ok(GeneratorTrace { stages, errors, output })
    }

    /// Inference on plain images.
    pub fn reconstruct(&self, x: &RgbImage, c_o: &Srf) -> Result<HsImage> {
        if c_o.bands() != self.config.bands {
            return Err(Error::BandMismatch {
                expected: self.config.bands,
                actual: c_o.bands(),
            });
        }
        let trace = self.forward(&x.to_tensor(), &c_o.to_tensor())?;
        HsImage::from_tensor(&trace.output)
    }
}

impl Module for GeneratorNet {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.coarse.params();
        p.extend(self.refine.iter().flat_map(Module::params));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.coarse.params_mut();
        p.extend(self.refine.iter_mut().flat_map(Module::params_mut));
        p
    }
}
