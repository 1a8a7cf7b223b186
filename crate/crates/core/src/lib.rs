//! Poisson spectral deconvolution by data augmentation.
//!
//! The crate has three layers. The bottom layer is a forward model for
//! binned photon-count spectra (continuum plus emission line, absorption,
//! instrument blurring, background) together with exact conditional
//! reconstructions of its latent photon counts. The middle layer is a set
//! of generic fitting drivers (EM and its conditional, accelerated,
//! Monte Carlo, nested, and parameter-expanded variants) and their
//! stochastic counterparts (data-augmentation, Gibbs, partially blocked,
//! partially collapsed, and marginal-augmentation samplers), all written
//! against small problem contracts. The top layer instantiates those
//! contracts for the spectral model and for analytic Gaussian toy problems
//! whose closed forms make exact testing possible.

pub mod augmentation;
pub mod em;
pub mod error;
pub mod grid;
pub mod model;
pub mod mstep;
pub mod io;
pub mod problems;
pub mod sampler;
pub mod toys;

mod draws;
mod rng;
