//! Client-side learnable components: the polynomial spectral GNN with its
//! classifier head, and the label-conditional variational graph autoencoder.
//!
//! All training losses are expressed on a [`DiffTape`](crate::numcore::DiffTape).
//! The encoder reads the same filtered representation `P = Σ_k w^k L^k X`
//! as the classifier and shares the classifier's first-layer weights, so
//! the latent class distributions are distributions of the classifier's
//! own features.

mod energy;
mod gaussian;
mod losses;
mod model;
mod optim;

pub use energy::{spectral_energy, SpectralEnergy};
pub use gaussian::{reparameterize, ClassGaussian, VARIANCE_FLOOR};
pub use losses::{
    ce_loss, class_moments, elbo_loss, ClassMoment, gaussian_kl_to_frozen, kl_to_standard_normal,
    l_align, l_reg, ElboParts, PairSampling,
};
pub use model::{ClientModel, Encoder, Head, ModelDims, ModelVars, LOGVAR_BOUND};
pub use optim::{Adam, AdamConfig};

use crate::numcore::NumError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
}
