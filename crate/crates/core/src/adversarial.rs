//! Discriminator, binary cross-entropy and L1 gradient clipping.

use std::cell::Cell;
use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, Conv2d, Init, Linear, Module, Param, HIDDEN_SLOPE};
use crate::tensor::Tensor;

/// Probabilities are clamped to `[ε, 1 − ε]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// The clipping threshold for a gradient of this shape: `1/√numel`, i.e.
/// `1/√(c·hw)` for a `c×h×w` image.
pub fn clip_threshold(shape: &[usize]) -> f64 {
    1.0 / (shape.iter().product::<usize>() as f64).sqrt()
}

/// Rescales `g` in place to Frobenius norm at most `tau`; returns the norm
/// before clipping. A zero gradient is left alone.
pub fn clip_in_place(g: &mut [f64], tau: f64) -> f64 {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > tau {
        let k = tau / norm;
        g.iter_mut().for_each(|v| *v *= k);
    }
    norm
}

/// `min(1, τ/‖G‖_F)·G` as a new constant tensor.
pub fn l1_gradient_clip(g: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("clip threshold must be positive, got {tau}")));
    }
    let mut data = g.to_vec();
    clip_in_place(&mut data, tau);
    Tensor::new(data, g.shape())
}

/// Norms observed by a clip hook during its most recent pass.
#[derive(Debug, Default)]
pub struct ClipRecord {
    pub before: Cell<f64>,
    pub after: Cell<f64>,
}

/// Installs a hook on `t` that clips its incoming gradient at `tau`.
pub fn install_clip_hook(t: &Tensor, tau: f64) -> Rc<ClipRecord> {
    let record = Rc::new(ClipRecord::default());
    let rec = Rc::clone(&record);
    t.set_gradient_hook(move |g| {
        rec.before.set(clip_in_place(g, tau));
        rec.after.set(g.iter().map(|v| v * v).sum::<f64>().sqrt());
    });
    record
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscriminatorConfig {
    pub bands: usize,
    pub widths: [usize; 3],
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            bands: crate::spectral::DEFAULT_BANDS,
            widths: [32, 64, 64],
        }
    }
}

/// Three stride-2 convolutions, global pooling and a single logit.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub convs: Vec<Conv2d>,
    pub head: Linear,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut c_in = config.bands;
        let mut convs = Vec::new();
        for (i, &c_out) in config.widths.iter().enumerate() {
            convs.push(Conv2d::new(&format!("disc.conv{i}"), c_in, c_out, 3, 2, Init::HeUniform { slope: HIDDEN_SLOPE }, rng)?);
            c_in = c_out;
        }
        let head = Linear::new("disc.linear", c_in, 1, Init::HeUniform { slope: 1.0 }, rng)?;
        Ok(Discriminator { convs, head })
    }

    /// Pre-sigmoid realness score of an already normalised cube.
    pub fn logit(&self, y: &Tensor) -> Result<Tensor> {
        let mut h = y.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.leaky_relu(HIDDEN_SLOPE);
        }
        self.head.forward(&global_avg_pool(&h)?)?.reshape(&[])
    }

    /// Realness probability of an already normalised cube, as a scalar tensor.
    pub fn probability(&self, y: &Tensor) -> Result<Tensor> {
        Ok(self.logit(y)?.sigmoid())
    }
}

impl Module for Discriminator {
    fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = self.convs.iter().flat_map(Module::params).collect();
        p.extend(self.head.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = self.convs.iter_mut().flat_map(Module::params_mut).collect();
        p.extend(self.head.params_mut());
        p
    }
}

/// `y/ȳ` with `ȳ` the mean over every entry; the mean is part of the graph.
pub fn mean_normalize(y: &Tensor) -> Result<Tensor> {
    let mean = y.mean();
    if mean.item() == 0.0 || !mean.item().is_finite() {
        return Err(Error::invalid(format!("cannot mean-normalise a cube with mean {}", mean.item())));
    }
    y.div(&mean)
}

/// `D(Y/ȳ)`.
pub fn discriminate(y: &Tensor, d: &Discriminator) -> Result<Tensor> {
    d.probability(&mean_normalize(y)?)
}

/// Binary cross-entropy of a scalar probability against a 0/1 label.
pub fn bce_loss(p: &Tensor, real: bool) -> Tensor {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if real {
        p.ln().neg()
    } else {
        p.neg().add_scalar(1.0).ln().neg()
    }
}

/// `ln(1 + eˣ)`, written so neither branch overflows.
pub fn softplus(x: &Tensor) -> Tensor {
    x.leaky_relu(0.0).add(&x.abs().neg().exp().add_scalar(1.0).ln()).expect("same shape")
}

/// Cross-entropy of `σ(z)` against a label, evaluated from the logit.
///
/// Equal to [`bce_loss`] wherever `σ(z)` lies inside the clamp range. Past
/// it the clamped form is flat, so a saturated discriminator would hand the
/// generator no gradient at all; here the gradient stays `σ(z) − label`.
pub fn bce_with_logits(z: &Tensor, real: bool) -> Tensor {
    if real {
        softplus(&z.neg())
    } else {
        softplus(z)
    }
}

/// `B(D(Ỹ/ȳ), 0) + B(D(Y_r/ȳ_r), 1)`; the fake is detached so only `D` learns.
pub fn discriminator_loss(fake: &Tensor, real: &Tensor, d: &Discriminator) -> Result<Tensor> {
    let fake_term = bce_with_logits(&d.logit(&mean_normalize(&fake.detach())?)?, false);
    let real_term = bce_with_logits(&d.logit(&mean_normalize(&real.detach())?)?, true);
    fake_term.add(&real_term)
}

/// The generator's adversarial term `B(D(Ỹ/ȳ), 1)`.
pub fn adversarial_term(fake: &Tensor, d: &Discriminator) -> Result<Tensor> {
    Ok(bce_with_logits(&d.logit(&mean_normalize(fake)?)?, true))
}
