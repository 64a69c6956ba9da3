pub mod adversarial;
pub mod error;
pub mod generator;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod semantic;
pub mod spectral;
pub mod synth;
pub mod srf;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/tensor.md")]
    mod tensor {}
    #[doc = include_str!("../../../book/src/degradation.md")]
    mod degradation {}
    #[doc = include_str!("../../../book/src/generator.md")]
    mod generator {}
    #[doc = include_str!("../../../book/src/adversarial.md")]
    mod adversarial {}
    #[doc = include_str!("../../../book/src/semantic.md")]
    mod semantic {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/files_and_cli.md")]
    mod files_and_cli {}
}
