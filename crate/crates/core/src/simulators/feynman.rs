//! Oscillating physical relations: free observables are drawn U[lo, hi]
//! each step, the dependent variable is computed from the equation, and
//! the objective is the oscillatory factor at phase `omega * k`.
//!
//! | id        | z                      | equation                                   | c*                        |
//! |-----------|------------------------|--------------------------------------------|---------------------------|
//! | II.6.15b  | [E_f, eps, P_d, r]     | E_f = 3/(4 pi eps) P_d / r^3 cos sin       | cos(wt) sin(wt)           |
//! | I.12.11   | [F, q, E_f, B, v]      | F = q (E_f + B v sin)                      | sin(wt)                   |
//! | I.50.26   | [x, x1]                | x = x1 (cos + alpha cos^2)                 | cos(wt) + alpha cos^2(wt) |

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::SimError;
use crate::data::{ObservationSet, SystemSeries};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeynmanEquation {
    I12_11,
    I50_26,
    II6_15b,
}

impl FeynmanEquation {
    pub const ALL: [FeynmanEquation; 3] = [Self::I12_11, Self::I50_26, Self::II6_15b];

    pub fn id(self) -> &'static str {
        match self {
            Self::I12_11 => "I.12.11",
            Self::I50_26 => "I.50.26",
            Self::II6_15b => "II.6.15b",
        }
    }

    pub fn feature_names(self) -> Vec<String> {
        let names: &[&str] = match self {
            Self::I12_11 => &["F", "q", "E_f", "B", "v"],
            Self::I50_26 => &["x", "x1"],
            Self::II6_15b => &["E_f", "epsilon", "P_d", "r"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }

    /// Count of free observables drawn each step.
    pub fn free_count(self) -> usize {
        self.feature_names().len() - 1
    }

    /// Dependent variable from the free observables at phase `wt`.
    pub fn dependent(self, free: &[f64], wt: f64, alpha: f64) -> f64 {
        match self {
            Self::I12_11 => {
                let (q, e, b, v) = (free[0], free[1], free[2], free[3]);
                q * (e + b * v * wt.sin())
            }
            Self::I50_26 => free[0] * (wt.cos() + alpha * wt.cos().powi(2)),
            Self::II6_15b => {
                let (eps, p, r) = (free[0], free[1], free[2]);
                3.0 / (4.0 * PI * eps) * p / r.powi(3) * wt.cos() * wt.sin()
            }
        }
    }

    pub fn objective(self, wt: f64, alpha: f64) -> f64 {
        match self {
            Self::I12_11 => wt.sin(),
            Self::I50_26 => wt.cos() + alpha * wt.cos().powi(2),
            Self::II6_15b => wt.cos() * wt.sin(),
        }
    }
}

impl fmt::Display for FeynmanEquation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for FeynmanEquation {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.id().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| SimError::UnknownEquation(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeynmanSpec {
    pub equation: FeynmanEquation,
    pub n_systems: usize,
    pub n_samples: usize,
    pub obs_low: f64,
    pub obs_high: f64,
    /// Per-system angular step, drawn U[omega_low, omega_high] rad/step.
    pub omega_low: f64,
    pub omega_high: f64,
    /// I.12.11 only: force B = 0, which removes the oscillation.
    pub zero_b: bool,
}

impl FeynmanSpec {
    pub fn new(equation: FeynmanEquation) -> Self {
        Self {
            equation,
            n_systems: 100,
            n_samples: 100,
            obs_low: 1.0,
            obs_high: 5.0,
            omega_low: 0.1,
            omega_high: 0.5,
            zero_b: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidParams(m.into()));
        if !(self.obs_low < self.obs_high) {
            return bad("observable range is empty");
        }
        if !(0.0 < self.omega_low && self.omega_low <= self.omega_high && self.omega_high < PI) {
            return bad("omega range must lie in (0, pi)");
        }
        if self.n_systems == 0 || self.n_samples < 2 {
            return bad("need >= 1 system and >= 2 samples");
        }
        if self.zero_b && self.equation != FeynmanEquation::I12_11 {
            return bad("zero_b applies to I.12.11 only");
        }
        Ok(())
    }

    pub fn metadata(&self, seed: u64) -> BTreeMap<String, String> {
        let mut m: BTreeMap<String, String> = [
            ("generator", "feynman".to_string()),
            ("seed", seed.to_string()),
            ("feynman.equation", self.equation.id().to_string()),
            ("feynman.n_systems", self.n_systems.to_string()),
            ("feynman.n_samples", self.n_samples.to_string()),
            ("feynman.obs_low", self.obs_low.to_string()),
            ("feynman.obs_high", self.obs_high.to_string()),
            ("feynman.omega_low", self.omega_low.to_string()),
            ("feynman.omega_high", self.omega_high.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        if self.equation == FeynmanEquation::I50_26 {
            m.insert("feynman.alpha".into(), "per_system_uniform".into());
        }
        if self.equation == FeynmanEquation::I12_11 {
            m.insert("feynman.zero_b".into(), self.zero_b.to_string());
            m.insert("feynman.c_star_constant".into(), self.zero_b.to_string());
        }
        m
    }
}

pub fn simulate_feynman(spec: &FeynmanSpec, seed: u64) -> Result<ObservationSet, SimError> {
    spec.validate()?;
    let eq = spec.equation;
    let mut systems = Vec::with_capacity(spec.n_systems);
    for s in 0..spec.n_systems {
        let mut rng = rng::substream(seed, &[rng::stage::SIM_FEYNMAN, s as u64]);
        let omega = rng.random_range(spec.omega_low..=spec.omega_high);
        let alpha = rng.random_range(spec.obs_low..spec.obs_high);
        let mut obs = Vec::with_capacity(spec.n_samples);
        let mut c_star = Vec::with_capacity(spec.n_samples);
        for k in 0..spec.n_samples {
            let wt = omega * k as f64;
            let mut free: Vec<f64> = (0..eq.free_count()).map(|_| rng.random_range(spec.obs_low..spec.obs_high)).collect();
            if spec.zero_b {
                free[2] = 0.0;
            }
            let dep = eq.dependent(&free, wt, alpha);
            let mut z = Vec::with_capacity(free.len() + 1);
            z.push(dep);
            z.extend_from_slice(&free);
            obs.push(z);
            c_star.push(if spec.zero_b { 0.0 } else { eq.objective(wt, alpha) });
        }
        systems.push(SystemSeries {
            id: s,
            times: (0..spec.n_samples).map(|k| k as f64).collect(),
            obs,
            c_star: Some(c_star),
        });
    }
    Ok(ObservationSet {
        feature_names: eq.feature_names(),
        systems,
        metadata: spec.metadata(seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(eq: FeynmanEquation) -> FeynmanSpec {
        FeynmanSpec {
            n_systems: 4,
            n_samples: 50,
            ..FeynmanSpec::new(eq)
        }
    }

    #[test]
    fn dipole_field_at_quarter_phase() {
        let e = FeynmanEquation::II6_15b.dependent(&[1.0, 1.0, 1.0], PI / 4.0, 0.0);
        assert!((e - 3.0 / (8.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn zero_field_has_constant_objective() {
        let spec = FeynmanSpec {
            zero_b: true,
            ..small(FeynmanEquation::I12_11)
        };
        let set = simulate_feynman(&spec, 1).unwrap();
        assert_eq!(set.metadata["feynman.c_star_constant"], "true");
        for s in &set.systems {
            assert!(s.c_star.as_ref().unwrap().iter().all(|c| *c == 0.0));
            for z in &s.obs {
                assert_eq!(z[0], z[1] * z[2]);
            }
        }
        let bad = FeynmanSpec {
            zero_b: true,
            ..small(FeynmanEquation::I50_26)
        };
        assert!(simulate_feynman(&bad, 1).is_err());
    }

    #[test]
    fn dependent_matches_recomputation() {
        for eq in FeynmanEquation::ALL {
            let spec = small(eq);
            let set = simulate_feynman(&spec, 3).unwrap();
            assert_eq!(set.obs_dim(), eq.feature_names().len());
            for s in &set.systems {
                let mut rng = rng::substream(3, &[rng::stage::SIM_FEYNMAN, s.id as u64]);
                let omega: f64 = rng.random_range(spec.omega_low..=spec.omega_high);
                let alpha: f64 = rng.random_range(spec.obs_low..spec.obs_high);
                for (k, z) in s.obs.iter().enumerate() {
                    let wt = omega * k as f64;
                    assert!(z[1..].iter().all(|v| (1.0..=5.0).contains(v)));
                    assert_eq!(z[0], eq.dependent(&z[1..], wt, alpha));
                    assert_eq!(s.c_star.as_ref().unwrap()[k], eq.objective(wt, alpha));
                }
            }
        }
    }

    #[test]
    fn ids_parse() {
        for eq in FeynmanEquation::ALL {
            assert_eq!(eq.id().parse::<FeynmanEquation>().unwrap(), eq);
        }
        assert!(matches!("III.1".parse::<FeynmanEquation>(), Err(SimError::UnknownEquation(_))));
    }

    #[test]
    fn deterministic() {
        let spec = small(FeynmanEquation::I50_26);
        assert_eq!(simulate_feynman(&spec, 8).unwrap(), simulate_feynman(&spec, 8).unwrap());
    }

    proptest! {
        #[test]
        fn dipole_factor_bounded(wt in -100.0f64..100.0) {
            let c = FeynmanEquation::II6_15b.objective(wt, 0.0);
            prop_assert!((-0.5..=0.5).contains(&c));
        }
    }
}
