//! Bindings of concrete models to the fitting drivers.
//!
//! Each binding implements the driver contracts for one model and one
//! choice of augmentation, so a driver never needs to know what it is
//! fitting. The analytic toy bindings exist mainly for tests; the spectral
//! bindings are the production surface.

pub mod family;
pub mod spectral;
pub mod spectral_sampler;
pub mod toy;
