//! Reconstruction regularisers and the weighted generator objective.

use crate::error::{Error, Result};
use crate::generator::error_map;
use crate::tensor::Tensor;

use super::config::{LossToggles, LossWeights};

/// `‖C_o·Ỹ − X‖²_F / (3hw)`.
pub fn s_bp(c_o: &Tensor, y: &Tensor, x: &Tensor) -> Result<Tensor> {
    Ok(error_map(y, x, c_o)?.square().mean())
}

/// Mean absolute difference between neighbouring bands.
pub fn s_smooth(y: &Tensor) -> Result<Tensor> {
    let s = y.shape().first().copied().unwrap_or(0);
    if y.rank() != 3 || s < 2 {
        return Err(Error::invalid(format!("smoothness needs s×h×w with s ≥ 2, got {:?}", y.shape())));
    }
    Ok(y.narrow(0, s - 1)?.sub(&y.narrow(1, s - 1)?)?.abs().mean())
}

/// `‖Ỹ − |Ỹ|‖²_F`, i.e. four times the squared mass of the negative entries.
pub fn s_pos(y: &Tensor) -> Result<Tensor> {
    Ok(y.sub(&y.abs())?.square().sum())
}

/// Scalar terms of the generator objective; `None` marks a term that was not computed.
#[derive(Debug, Clone, Default)]
pub struct LossParts {
    pub adversarial: Option<Tensor>,
    pub bp: Option<Tensor>,
    pub smooth: Option<Tensor>,
    pub pos: Option<Tensor>,
    pub sem: Option<Tensor>,
}

/// `B(D(Ỹ/ȳ),1) + λ_b·S_bp + λ_s·S_1 + λ_p·S_pos + λ_sem·S_sem` over the
/// enabled terms. Disabled terms are left out of the graph entirely.
pub fn generator_loss(parts: &LossParts, weights: &LossWeights, toggles: &LossToggles) -> Result<Tensor> {
    let terms = [
        (toggles.adversarial, &parts.adversarial, 1.0, "adversarial"),
        (toggles.bp, &parts.bp, weights.bp, "S_bp"),
        (toggles.smooth, &parts.smooth, weights.smooth, "S_1"),
        (toggles.pos, &parts.pos, weights.pos, "S_pos"),
        (toggles.sem, &parts.sem, weights.sem, "S_sem"),
    ];
    let mut total: Option<Tensor> = None;
    for (on, part, weight, name) in terms {
        if !on {
            continue;
        }
        let part = part
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("{name} is enabled but was not computed")))?;
        let term = part.scale(weight);
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| Tensor::scalar(0.0)))
}
