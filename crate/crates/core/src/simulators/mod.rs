//! Ground-truth dataset generators with a known control objective `c*`.

mod bacteria;
mod feynman;
mod kinetic;

pub use bacteria::{growth_rate_distribution, simulate_bacteria, simulate_ou_path, BacteriaParams, OuProcess};
pub use feynman::{simulate_feynman, FeynmanEquation, FeynmanSpec};
pub use kinetic::{drive, simulate_kinetic, steady_state_coefficient, system_phase, KineticParams, NoiseModel};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("integration became non-finite at t={t} (dt_sim={dt_sim}); reduce dt_sim")]
    Instability { t: f64, dt_sim: f64 },
    #[error("lineage {lineage} generation {generation}: no division within {horizon} min")]
    LineageStall {
        lineage: usize,
        generation: usize,
        horizon: f64,
    },
    #[error("unknown equation id `{0}`")]
    UnknownEquation(String),
}
