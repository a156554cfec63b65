//! Discovery of regulated combinations of observables that track a latent
//! dynamic reference, by a two-player game between a combination network
//! with a learned one-step filter and an adversarial surrogate resampler.

pub mod config;
pub mod data;
pub mod diffnet;
pub mod io;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod simulators;
pub mod surrogate;
pub mod trainer;
