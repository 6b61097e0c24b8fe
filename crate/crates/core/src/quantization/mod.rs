//! Optimal quantization of the Gaussian law and functional quantization of
//! the signal diffusion.

pub mod cache;
pub mod functional;
pub mod marginal;
pub mod scalar;

pub use functional::{
    BrownianCodebook, KlMode, ProductQuantizer, allocate_sizes, brownian_codebook, kl_eigenpair,
    quantized_diffusion_codebook,
};
pub use marginal::{MarginalQuantization, TransitionMatrix, marginal_quantization};
pub use scalar::{QuantizerTable, ScalarQuantizer, optimal_gaussian_quantizer};
