//! Two proteins P and S share an mRNA M whose production is repressed by
//! P + S, under an oscillating transcription rate K(t):
//!
//! ```text
//! K(t) = K0 (1 + 0.5 cos(2 pi t / tau_K + phi_K))
//! dM = (K - f (P + S) - gamma_M M) dt
//! dP = (k_P M - gamma_P P) dt + dW_P
//! dS = (k_S M - gamma_S S) dt + dW_S
//! ```
//!
//! Observations are `z = [P, S]`, the objective is `c* = P + S`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::SimError;
use crate::data::{ObservationSet, SystemSeries};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseModel {
    /// Increment std `amplitude * dt` per step.
    #[default]
    Literal,
    /// Wiener increment: std `amplitude * sqrt(dt)` per step.
    StandardWiener,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KineticParams {
    pub k0: f64,
    pub tau_k: f64,
    pub k_p: f64,
    pub k_s: f64,
    pub gamma_p: f64,
    pub gamma_s: f64,
    pub gamma_m: f64,
    pub f: f64,
    pub noise_amplitude: f64,
    pub noise_model: NoiseModel,
    /// Samples per unit time.
    pub sample_rate: f64,
    pub n_systems: usize,
    pub n_samples: usize,
    pub dt_sim: f64,
    /// Hold K at K0 (1 + 0.5 cos(phi_K)) instead of oscillating.
    pub constant_k: bool,
    pub init_low: f64,
    pub init_high: f64,
}

impl Default for KineticParams {
    fn default() -> Self {
        Self {
            k0: 300.0,
            tau_k: 0.2,
            k_p: 150.0,
            k_s: 150.0,
            gamma_p: 70.0,
            gamma_s: 70.0,
            gamma_m: 80.0,
            f: 2000.0,
            noise_amplitude: 0.5,
            noise_model: NoiseModel::Literal,
            sample_rate: 1.0,
            n_systems: 100,
            n_samples: 100,
            dt_sim: 1e-5,
            constant_k: false,
            init_low: 0.02,
            init_high: 0.1,
        }
    }
}

impl KineticParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let rates = [self.k0, self.tau_k, self.k_p, self.k_s, self.gamma_p, self.gamma_s, self.gamma_m, self.f];
        if rates.iter().any(|r| !(*r > 0.0)) {
            return Err(SimError::InvalidParams("all rates must be positive".into()));
        }
        if !(self.sample_rate > 0.0) || !(self.dt_sim > 0.0) || self.noise_amplitude < 0.0 {
            return Err(SimError::InvalidParams("sample_rate, dt_sim must be positive, noise >= 0".into()));
        }
        let fastest = [self.f, self.gamma_p, self.gamma_s, self.gamma_m].into_iter().fold(0.0, f64::max);
        if self.dt_sim * fastest >= 0.1 {
            return Err(SimError::InvalidParams(format!(
                "dt_sim={} violates stability guard dt_sim*max(f, gamma) < 0.1",
                self.dt_sim
            )));
        }
        if self.n_systems == 0 || self.n_samples < 2 {
            return Err(SimError::InvalidParams("need >= 1 system and >= 2 samples".into()));
        }
        if !(self.init_low < self.init_high) {
            return Err(SimError::InvalidParams("init range is empty".into()));
        }
        Ok(())
    }

    /// Integration steps between two samples.
    fn steps_per_sample(&self) -> Result<usize, SimError> {
        let exact = 1.0 / (self.sample_rate * self.dt_sim);
        let n = exact.round();
        if n < 1.0 || (exact - n).abs() > 1e-6 * exact {
            return Err(SimError::InvalidParams(format!(
                "sampling interval {} is not a multiple of dt_sim {}",
                1.0 / self.sample_rate,
                self.dt_sim
            )));
        }
        Ok(n as usize)
    }

    pub fn metadata(&self, seed: u64) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("generator", "kinetic".into());
        put("seed", seed.to_string());
        put("kinetic.k0", self.k0.to_string());
        put("kinetic.tau_k", self.tau_k.to_string());
        put("kinetic.k_p", self.k_p.to_string());
        put("kinetic.k_s", self.k_s.to_string());
        put("kinetic.gamma_p", self.gamma_p.to_string());
        put("kinetic.gamma_s", self.gamma_s.to_string());
        put("kinetic.gamma_m", self.gamma_m.to_string());
        put("kinetic.f", self.f.to_string());
        put("kinetic.noise_amplitude", self.noise_amplitude.to_string());
        put(
            "kinetic.noise_model",
            match self.noise_model {
                NoiseModel::Literal => "literal".into(),
                NoiseModel::StandardWiener => "standard_wiener".into(),
            },
        );
        put("kinetic.sample_rate", self.sample_rate.to_string());
        put("kinetic.n_systems", self.n_systems.to_string());
        put("kinetic.n_samples", self.n_samples.to_string());
        put("kinetic.dt_sim", self.dt_sim.to_string());
        put("kinetic.constant_k", self.constant_k.to_string());
        m
    }
}

/// `(P + S) / K` at the quasi-static operating point.
pub fn steady_state_coefficient(p: &KineticParams) -> f64 {
    1.0 / (p.f + p.gamma_m * p.gamma_p * p.gamma_s / (p.k_p * p.gamma_s + p.k_s * p.gamma_p))
}

/// Phase `phi_K` of system `system`; the first draw of its stream.
pub fn system_phase(seed: u64, system: usize) -> f64 {
    rng::substream(seed, &[rng::stage::SIM_KINETIC, system as u64]).random_range(0.0..PI)
}

/// Transcription drive K(t) for a system with phase `phase`.
pub fn drive(params: &KineticParams, phase: f64, t: f64) -> f64 {
    let arg = if params.constant_k { phase } else { 2.0 * PI * t / params.tau_k + phase };
    params.k0 * (1.0 + 0.5 * arg.cos())
}

pub fn simulate_kinetic(params: &KineticParams, seed: u64) -> Result<ObservationSet, SimError> {
    params.validate()?;
    let steps = params.steps_per_sample()?;
    let dt = params.dt_sim;
    let noise_std = match params.noise_model {
        NoiseModel::Literal => params.noise_amplitude * dt,
        NoiseModel::StandardWiener => params.noise_amplitude * dt.sqrt(),
    };
    let mut systems = Vec::with_capacity(params.n_systems);
    for s in 0..params.n_systems {
        let mut rng = rng::substream(seed, &[rng::stage::SIM_KINETIC, s as u64]);
        let phase = rng.random_range(0.0..PI);
        let mut m = rng.random_range(params.init_low..params.init_high);
        let mut p = rng.random_range(params.init_low..params.init_high);
        let mut q = rng.random_range(params.init_low..params.init_high);
        let mut times = Vec::with_capacity(params.n_samples);
        let mut obs = Vec::with_capacity(params.n_samples);
        let mut c_star = Vec::with_capacity(params.n_samples);
        let mut step_index: u64 = 0;
        for _ in 0..params.n_samples {
            for _ in 0..steps {
                let t = step_index as f64 * dt;
                let k = drive(params, phase, t);
                let dm = (k - params.f * (p + q) - params.gamma_m * m) * dt;
                let dp = (params.k_p * m - params.gamma_p * p) * dt;
                let dq = (params.k_s * m - params.gamma_s * q) * dt;
                let (wp, wq) = if noise_std > 0.0 {
                    let a: f64 = StandardNormal.sample(&mut rng);
                    let b: f64 = StandardNormal.sample(&mut rng);
                    (noise_std * a, noise_std * b)
                } else {
                    (0.0, 0.0)
                };
                m += dm;
                p += dp + wp;
                q += dq + wq;
                step_index += 1;
            }
            let t = step_index as f64 * dt;
            if !(m.is_finite() && p.is_finite() && q.is_finite()) {
                return Err(SimError::Instability { t, dt_sim: dt });
            }
            times.push(t);
            obs.push(vec![p, q]);
            c_star.push(p + q);
        }
        systems.push(SystemSeries {
            id: s,
            times,
            obs,
            c_star: Some(c_star),
        });
    }
    Ok(ObservationSet {
        feature_names: vec!["P".into(), "S".into()],
        systems,
        metadata: params.metadata(seed),
    })
}
