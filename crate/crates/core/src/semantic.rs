//! Semantic regulariser: RGB and spectral encoders, a pointwise fusion head
//! and the pixel-wise cross-entropy against scene labels.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvStack, Init, Module, Param, HIDDEN_SLOPE};
use crate::tensor::Tensor;

/// Label value excluded from the loss.
pub const IGNORE_LABEL: u8 = 255;
/// Probabilities are clamped to `[ε, 1 − ε]` before taking logs.
pub const SEM_EPS: f64 = 1e-7;

/// Per-pixel class indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    classes: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::invalid(format!(
                "{} labels for a {height}×{width} map",
                labels.len()
            )));
        }
        if classes == 0 || classes > IGNORE_LABEL as usize {
            return Err(Error::invalid(format!("class count {classes} out of range")));
        }
        if let Some(bad) = labels.iter().find(|&&l| l != IGNORE_LABEL && l as usize >= classes) {
            return Err(Error::invalid(format!("label {bad} not below class count {classes}")));
        }
        Ok(LabelMap {
            height,
            width,
            classes,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticConfig {
    pub bands: usize,
    pub classes: usize,
    pub rgb_width: usize,
    pub hs_width: usize,
    pub fuse_width: usize,
}

impl Default for SemanticConfig {
    fn default() -> Self {
        SemanticConfig {
            bands: crate::spectral::DEFAULT_BANDS,
            classes: 6,
            rgb_width: 16,
            hs_width: 32,
            fuse_width: 32,
        }
    }
}

/// `E₁` encodes the RGB image and `E₂` the spectral cube; `SE` fuses both into class logits.
#[derive(Debug, Clone)]
pub struct SemanticNet {
    pub rgb_encoder: ConvStack,
    pub hs_encoder: ConvStack,
    pub fuse: Conv2d,
    pub classify: Conv2d,
    config: SemanticConfig,
}

impl SemanticNet {
    pub fn new(config: SemanticConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let he = Init::HeUniform { slope: HIDDEN_SLOPE };
        let (r, h, f) = (config.rgb_width, config.hs_width, config.fuse_width);
        let mut rgb_encoder = ConvStack::new("sem.rgb", &[3, r, r, r], 3, 1, he, rng)?;
        rgb_encoder.activate_last = true;
        let mut hs_encoder = ConvStack::new("sem.hs", &[config.bands, h, h, h], 3, 1, he, rng)?;
        hs_encoder.activate_last = true;
        let fuse = Conv2d::new("sem.fuse", r + h, f, 1, 1, he, rng)?;
        let classify = Conv2d::new("sem.classify", f, config.classes, 1, 1, Init::HeUniform { slope: 1.0 }, rng)?;
        Ok(SemanticNet {
            rgb_encoder,
            hs_encoder,
            fuse,
            classify,
            config,
        })
    }

    pub fn config(&self) -> &SemanticConfig {
        &self.config
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    /// Freezes or unfreezes `E₁`.
    pub fn set_rgb_encoder_trainable(&mut self, trainable: bool) {
        self.rgb_encoder.set_trainable(trainable);
    }

    /// Parameters trained alongside the generator: `E₂` and `SE`, plus `E₁` when unfrozen.
    pub fn trainable_params(&self) -> Vec<&Param> {
        self.params().into_iter().filter(|p| p.is_trainable()).collect()
    }

    /// Class logits, `M×h×w`.
    pub fn logits(&self, x: &Tensor, y: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 || y.rank() != 3 || x.shape()[1..] != y.shape()[1..] {
            return Err(Error::ShapeMismatch {
                op: "predict_semantics",
                left: x.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        let phi_x = self.rgb_encoder.forward(x)?;
        let phi_y = self.hs_encoder.forward(y)?;
        let fused = self.fuse.forward(&Tensor::concat(&[phi_x, phi_y])?)?.leaky_relu(HIDDEN_SLOPE);
        self.classify.forward(&fused)
    }
}

impl Module for SemanticNet {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.rgb_encoder.params();
        p.extend(self.hs_encoder.params());
        p.extend(self.fuse.params());
        p.extend(self.classify.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.rgb_encoder.params_mut();
        p.extend(self.hs_encoder.params_mut());
        p.extend(self.fuse.params_mut());
        p.extend(self.classify.params_mut());
        p
    }
}

/// Softmax over the leading (class) axis of an `M×h×w` map.
pub fn class_softmax(logits: &Tensor) -> Result<Tensor> {
    let &[m, h, w] = logits.shape() else {
        return Err(Error::invalid(format!("logits must be M×h×w, got {:?}", logits.shape())));
    };
    logits
        .reshape(&[m, h * w])?
        .transpose()?
        .softmax_rows()?
        .transpose()?
        .reshape(&[m, h, w])
}

/// Per-pixel class probabilities `P`, `M×h×w`.
pub fn predict_semantics(x: &Tensor, y: &Tensor, net: &SemanticNet) -> Result<Tensor> {
    class_softmax(&net.logits(x, y)?)
}

/// Mean of `−ln P(true class)` over pixels whose label is not ignored.
pub fn semantic_loss(p: &Tensor, labels: &LabelMap) -> Result<Tensor> {
    let &[m, h, w] = p.shape() else {
        return Err(Error::invalid(format!("probabilities must be M×h×w, got {:?}", p.shape())));
    };
    if (h, w) != (labels.height(), labels.width()) || m != labels.classes() {
        return Err(Error::ShapeMismatch {
            op: "semantic_loss",
            left: p.shape().to_vec(),
            right: vec![labels.classes(), labels.height(), labels.width()],
        });
    }
    let hw = h * w;
    let picks: Vec<usize> = labels
        .labels()
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != IGNORE_LABEL)
        .map(|(pix, &l)| l as usize * hw + pix)
        .collect();
    if picks.is_empty() {
        return Err(Error::invalid("every pixel carries the ignore label"));
    }
    Ok(p.gather(&picks)?.clamp(SEM_EPS, 1.0 - SEM_EPS).ln().neg().mean())
}
