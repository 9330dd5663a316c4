//! Deterministic tensor arithmetic, seeded randomness and Gaussian special
//! functions shared by every other module.

pub mod pca;
pub mod rng;
pub mod special;
pub mod tensor;

pub use pca::{fit_pca2, pca_project, symmetric_eigen, Pca2};
pub use rng::{sample_standard_normal, SeededRng, RNG_ALGO_TAG};
pub use special::{integrate, inverse_normal_cdf, normal_cdf, normal_pdf};
pub use tensor::Tensor;
