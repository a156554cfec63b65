//! Sizer life cycle: a cell born at size `x_b` grows as `x_b e^{alpha t}`
//! and divides when it crosses a slowly drifting threshold `u(t)`, an
//! Ornstein-Uhlenbeck process. The daughter keeps a fraction `f` of the
//! mother's division size.
//!
//! Observations per generation are `z = [x_b, alpha, T]`; the objective is
//! the division size `x_b e^{alpha T}`, which equals `u` at division.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};

use super::SimError;
use crate::data::{ObservationSet, SystemSeries};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuProcess {
    pub mu: f64,
    pub sigma: f64,
    pub tau: f64,
}

impl OuProcess {
    /// Exact transition over `dt` driven by a standard normal `xi`.
    pub fn step(&self, u: f64, dt: f64, xi: f64) -> f64 {
        let a = (-dt / self.tau).exp();
        self.mu + (u - self.mu) * a + self.sigma * (1.0 - a * a).sqrt() * xi
    }
}

/// `n` grid values of the process started at `u0`.
pub fn simulate_ou_path(ou: OuProcess, u0: f64, dt: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut u = u0;
    for _ in 0..n {
        out.push(u);
        let xi: f64 = StandardNormal.sample(rng);
        u = ou.step(u, dt, xi);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacteriaParams {
    pub mu_u: f64,
    pub sigma_u: f64,
    pub tau_u: f64,
    pub alpha_shape: f64,
    pub alpha_scale: f64,
    pub f_mean: f64,
    pub f_std: f64,
    pub xb_mean: f64,
    pub xb_std: f64,
    pub n_lineages: usize,
    pub generations: usize,
    /// OU grid step in minutes.
    pub grid_dt: f64,
    /// Longest allowed cell cycle in minutes.
    pub horizon: f64,
}

impl Default for BacteriaParams {
    fn default() -> Self {
        Self {
            mu_u: 1.0,
            sigma_u: 0.1,
            tau_u: 200.0,
            alpha_shape: 25.0,
            alpha_scale: 9.4e-4,
            f_mean: 0.5,
            f_std: 0.05,
            xb_mean: 0.5,
            xb_std: 0.05,
            n_lineages: 100,
            generations: 100,
            grid_dt: 0.1,
            horizon: 1000.0,
        }
    }
}

const F_CLIP: (f64, f64) = (0.05, 0.95);

pub fn growth_rate_distribution(p: &BacteriaParams) -> Result<Gamma<f64>, SimError> {
    Gamma::new(p.alpha_shape, p.alpha_scale).map_err(|e| SimError::InvalidParams(format!("growth rate: {e}")))
}

impl BacteriaParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidParams(m.into()));
        if !(self.tau_u > 0.0) {
            return bad("tau_u must be positive");
        }
        if !(self.mu_u > 0.0) || self.sigma_u < 0.0 {
            return bad("threshold must have positive mean and non-negative spread");
        }
        if !(self.alpha_shape > 0.0 && self.alpha_scale > 0.0) {
            return bad("growth-rate gamma parameters must be positive");
        }
        if self.f_std < 0.0 || self.xb_std < 0.0 || !(self.xb_mean > 0.0) {
            return bad("invalid birth-size or division-fraction distribution");
        }
        if !(self.grid_dt > 0.0 && self.horizon > self.grid_dt) {
            return bad("grid_dt must be positive and below the horizon");
        }
        if self.n_lineages == 0 || self.generations < 2 {
            return bad("need >= 1 lineage and >= 2 generations");
        }
        Ok(())
    }

    pub fn metadata(&self, seed: u64) -> BTreeMap<String, String> {
        let pairs = [
            ("generator", "bacteria".to_string()),
            ("seed", seed.to_string()),
            ("bacteria.mu_u", self.mu_u.to_string()),
            ("bacteria.sigma_u", self.sigma_u.to_string()),
            ("bacteria.tau_u", self.tau_u.to_string()),
            ("bacteria.alpha_shape", self.alpha_shape.to_string()),
            ("bacteria.alpha_scale", self.alpha_scale.to_string()),
            ("bacteria.f_mean", self.f_mean.to_string()),
            ("bacteria.f_std", self.f_std.to_string()),
            ("bacteria.xb_mean", self.xb_mean.to_string()),
            ("bacteria.xb_std", self.xb_std.to_string()),
            ("bacteria.n_lineages", self.n_lineages.to_string()),
            ("bacteria.generations", self.generations.to_string()),
            ("bacteria.grid_dt", self.grid_dt.to_string()),
            ("bacteria.horizon", self.horizon.to_string()),
            ("bacteria.time_axis", "generation".to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

/// Threshold sampled lazily on the grid `j * dt`, linearly interpolated.
struct Threshold {
    ou: OuProcess,
    dt: f64,
    values: Vec<f64>,
}

impl Threshold {
    fn at(&mut self, t: f64, rng: &mut ChaCha8Rng) -> f64 {
        let j = (t / self.dt).floor() as usize;
        while self.values.len() < j + 2 {
            let last = *self.values.last().expect("seeded with u(0)");
            let xi: f64 = StandardNormal.sample(rng);
            self.values.push(self.ou.step(last, self.dt, xi));
        }
        let w = t / self.dt - j as f64;
        self.values[j] * (1.0 - w) + self.values[j + 1] * w
    }
}

fn normal(mean: f64, std: f64) -> Normal<f64> {
    Normal::new(mean, std).expect("std validated non-negative")
}

pub fn simulate_bacteria(params: &BacteriaParams, seed: u64) -> Result<ObservationSet, SimError> {
    params.validate()?;
    let gamma = growth_rate_distribution(params)?;
    let systems = (0..params.n_lineages)
        .map(|l| simulate_lineage(params, &gamma, seed, l).map(|(s, _)| s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ObservationSet {
        feature_names: vec!["x_b".into(), "alpha".into(), "T".into()],
        systems,
        metadata: params.metadata(seed),
    })
}

/// One lineage, plus the interpolated threshold at each division.
fn simulate_lineage(
    params: &BacteriaParams,
    gamma: &Gamma<f64>,
    seed: u64,
    lineage: usize,
) -> Result<(SystemSeries, Vec<f64>), SimError> {
    let mut rng = rng::substream(seed, &[rng::stage::SIM_BACTERIA, lineage as u64]);
    let u0 = normal(params.mu_u, params.sigma_u).sample(&mut rng);
    let mut x_b = normal(params.xb_mean, params.xb_std).sample(&mut rng);
    let mut threshold = Threshold {
        ou: OuProcess {
            mu: params.mu_u,
            sigma: params.sigma_u,
            tau: params.tau_u,
        },
        dt: params.grid_dt,
        values: vec![u0],
    };
    let mut t_b = 0.0;
    let mut obs = Vec::with_capacity(params.generations);
    let mut c_star = Vec::with_capacity(params.generations);
    let mut u_div = Vec::with_capacity(params.generations);
    for generation in 0..params.generations {
        let alpha = gamma.sample(&mut rng);
        let f = normal(params.f_mean, params.f_std).sample(&mut rng).clamp(F_CLIP.0, F_CLIP.1);
        let gap = |t: f64, th: &mut Threshold, rng: &mut ChaCha8Rng| x_b.ln() + alpha * (t - t_b) - th.at(t, rng).ln();
        let mut prev_t = t_b;
        let mut prev_gap = gap(t_b, &mut threshold, &mut rng);
        let t_d = if prev_gap >= 0.0 {
            t_b
        } else {
            // walk the grid points after birth until the sign changes
            let mut j = (t_b / params.grid_dt).floor() as usize + 1;
            loop {
                let t = j as f64 * params.grid_dt;
                if t - t_b > params.horizon {
                    return Err(SimError::LineageStall {
                        lineage,
                        generation,
                        horizon: params.horizon,
                    });
                }
                let g = gap(t, &mut threshold, &mut rng);
                if g >= 0.0 {
                    break prev_t + (t - prev_t) * (-prev_gap) / (g - prev_gap);
                }
                prev_t = t;
                prev_gap = g;
                j += 1;
            }
        };
        let period = t_d - t_b;
        let x_d = x_b * (alpha * period).exp();
        obs.push(vec![x_b, alpha, period]);
        c_star.push(x_d);
        u_div.push(threshold.at(t_d, &mut rng));
        x_b = f * x_d;
        t_b = t_d;
    }
    let series = SystemSeries {
        id: lineage,
        times: (0..params.generations).map(|k| k as f64).collect(),
        obs,
        c_star: Some(c_star),
    };
    Ok((series, u_div))
}
