//! Fully-connected Gaussian VAE.
//!
//! The encoder maps an image through one ReLU hidden layer to two linear
//! heads, the posterior mean and the posterior log-variance. The decoder
//! mirrors it and outputs the mean of a Gaussian likelihood with fixed
//! variance `c` (identity output activation). The prior is `N(0, I)`.

mod model;
pub(crate) mod params;

pub use model::{
    build_elbo, decode, elbo, encode, kl_term, rec_term, sample_latent, Elbo, ElboNodes, Posterior,
};
pub use params::{init_params, Linear, ParamVars, VaeConfig, VaeParams};
