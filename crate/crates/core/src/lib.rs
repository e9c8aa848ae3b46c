//! Few-step semi-implicit denoising diffusion on toy 2-D data.
//!
//! The crate bundles a small reverse-mode autodiff engine, the diffusion
//! forward process and posterior, MLP denoiser/critic networks, the SIDDM,
//! DDGAN and DDPM objectives, a mixture-of-Gaussians benchmark with
//! sample-quality metrics, the training loop, and an exact verifier for the
//! joint-divergence bound on discrete distributions.

pub mod autodiff;
pub mod diffusion;
pub mod divergence;
pub mod eval;
pub mod error;
pub mod gradcheck;
pub mod networks;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
