pub mod conditioning;
pub mod denoiser;
pub mod error;
pub mod filter;
pub mod formats;
pub mod inject;
pub mod latent;
pub mod metrics;
pub mod reference;
pub mod sampler;
pub mod schedule;
pub mod spatial;
pub mod spectral;
pub mod window;
pub mod world;
