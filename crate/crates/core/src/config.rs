//! Flat `key=value` run configuration. `#` starts a comment; unknown keys
//! are rejected.
//!
//! ```text
//! seed=1
//! generator=kinetic          # kinetic | bacteria | feynman
//! kinetic.n_systems=20
//! mode=IDRAS
//! epochs=150
//! zeta.candidates=64
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::diffnet::InitScheme;
use crate::model::{Integrator, Mode};
use crate::simulators::{BacteriaParams, FeynmanEquation, FeynmanSpec, KineticParams, NoiseModel};
use crate::surrogate::{DistanceKind, DrawMode};
use crate::trainer::TrainConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("key `{key}`: {msg}")]
    Invalid { key: String, msg: String },
    #[error("unknown key `{0}`")]
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorConfig {
    Kinetic(KineticParams),
    Bacteria(BacteriaParams),
    Feynman(FeynmanSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub generator: Option<GeneratorConfig>,
    pub train: TrainConfig,
    /// Expected dataset columns, checked before training.
    pub features: Option<Vec<String>>,
    pub out: Option<PathBuf>,
    pub distance: Option<DistanceKind>,
    /// Every key as written, for the run manifest.
    pub entries: BTreeMap<String, String>,
}

struct Fields {
    map: BTreeMap<String, String>,
}

impl Fields {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| ConfigError::Invalid {
                key: key.to_string(),
                msg: format!("cannot parse `{v}`: {e}"),
            }),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<(), ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = self.take(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.map.keys().any(|k| k.starts_with(prefix))
    }
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError> {
    v.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| invalid(key, format!("bad list entry `{x}`"))))
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if map.insert(k.clone(), v).is_some() {
                return Err(ConfigError::Duplicate { line: i + 1, key: k });
            }
        }
        let entries = map.clone();
        let mut f = Fields { map };
        let seed: u64 = f.take("seed")?.ok_or(ConfigError::Missing("seed"))?;
        let generator = parse_generator(&mut f)?;
        let train = parse_train(&mut f, seed)?;
        let features = f.map.remove("features").map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
        let out = f.take::<PathBuf>("out")?;
        let distance = f.take::<DistanceKind>("eval.distance")?;
        if let Some(k) = f.map.keys().next() {
            return Err(ConfigError::Unknown(k.clone()));
        }
        Ok(Self {
            seed,
            generator,
            train,
            features,
            out,
            distance,
            entries,
        })
    }

    /// Applies command-line overrides and re-validates.
    pub fn override_with(&mut self, mode: Option<Mode>, epochs: Option<usize>, seed: Option<u64>) -> Result<(), ConfigError> {
        if let Some(m) = mode {
            let explicit = self.entries.contains_key("draw_mode");
            self.train.model.mode = m;
            if !explicit {
                self.train.draw_mode = None;
            }
            self.entries.insert("mode".into(), m.to_string());
        }
        if let Some(e) = epochs {
            self.train.epochs = e;
            self.entries.insert("epochs".into(), e.to_string());
        }
        if let Some(s) = seed {
            self.seed = s;
            self.train.seed = s;
            self.entries.insert("seed".into(), s.to_string());
        }
        self.train.validate().map_err(|e| invalid("train", e.to_string()))
    }
}

fn parse_generator(f: &mut Fields) -> Result<Option<GeneratorConfig>, ConfigError> {
    let Some(family) = f.map.remove("generator") else {
        for prefix in ["kinetic.", "bacteria.", "feynman."] {
            if f.has_prefix(prefix) {
                return Err(invalid("generator", format!("`{prefix}*` keys given without `generator`")));
            }
        }
        return Ok(None);
    };
    let g = match family.as_str() {
        "kinetic" => {
            let mut p = KineticParams::default();
            f.set("kinetic.k0", &mut p.k0)?;
            f.set("kinetic.tau_k", &mut p.tau_k)?;
            f.set("kinetic.k_p", &mut p.k_p)?;
            f.set("kinetic.k_s", &mut p.k_s)?;
            f.set("kinetic.gamma_p", &mut p.gamma_p)?;
            f.set("kinetic.gamma_s", &mut p.gamma_s)?;
            f.set("kinetic.gamma_m", &mut p.gamma_m)?;
            f.set("kinetic.f", &mut p.f)?;
            f.set("kinetic.noise_amplitude", &mut p.noise_amplitude)?;
            if let Some(v) = f.map.remove("kinetic.noise_model") {
                p.noise_model = match v.as_str() {
                    "literal" => NoiseModel::Literal,
                    "standard_wiener" => NoiseModel::StandardWiener,
                    _ => return Err(invalid("kinetic.noise_model", "expected literal or standard_wiener")),
                };
            }
            f.set("kinetic.sample_rate", &mut p.sample_rate)?;
            f.set("kinetic.n_systems", &mut p.n_systems)?;
            f.set("kinetic.n_samples", &mut p.n_samples)?;
            f.set("kinetic.dt_sim", &mut p.dt_sim)?;
            f.set("kinetic.constant_k", &mut p.constant_k)?;
            f.set("kinetic.init_low", &mut p.init_low)?;
            f.set("kinetic.init_high", &mut p.init_high)?;
            p.validate().map_err(|e| invalid("generator", e.to_string()))?;
            GeneratorConfig::Kinetic(p)
        }
        "bacteria" => {
            let mut p = BacteriaParams::default();
            f.set("bacteria.mu_u", &mut p.mu_u)?;
            f.set("bacteria.sigma_u", &mut p.sigma_u)?;
            f.set("bacteria.tau_u", &mut p.tau_u)?;
            f.set("bacteria.alpha_shape", &mut p.alpha_shape)?;
            f.set("bacteria.alpha_scale", &mut p.alpha_scale)?;
            f.set("bacteria.f_mean", &mut p.f_mean)?;
            f.set("bacteria.f_std", &mut p.f_std)?;
            f.set("bacteria.xb_mean", &mut p.xb_mean)?;
            f.set("bacteria.xb_std", &mut p.xb_std)?;
            f.set("bacteria.n_lineages", &mut p.n_lineages)?;
            f.set("bacteria.generations", &mut p.generations)?;
            f.set("bacteria.grid_dt", &mut p.grid_dt)?;
            f.set("bacteria.horizon", &mut p.horizon)?;
            p.validate().map_err(|e| invalid("generator", e.to_string()))?;
            GeneratorConfig::Bacteria(p)
        }
        "feynman" => {
            let eq: FeynmanEquation = f.take("feynman.equation")?.ok_or(ConfigError::Missing("feynman.equation"))?;
            let mut p = FeynmanSpec::new(eq);
            f.set("feynman.n_systems", &mut p.n_systems)?;
            f.set("feynman.n_samples", &mut p.n_samples)?;
            f.set("feynman.obs_low", &mut p.obs_low)?;
            f.set("feynman.obs_high", &mut p.obs_high)?;
            f.set("feynman.omega_low", &mut p.omega_low)?;
            f.set("feynman.omega_high", &mut p.omega_high)?;
            f.set("feynman.zero_b", &mut p.zero_b)?;
            p.validate().map_err(|e| invalid("generator", e.to_string()))?;
            GeneratorConfig::Feynman(p)
        }
        other => return Err(invalid("generator", format!("unknown family `{other}`"))),
    };
    Ok(Some(g))
}

fn parse_train(f: &mut Fields, seed: u64) -> Result<TrainConfig, ConfigError> {
    let mut t = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let m = &mut t.model;
    f.set::<Mode>("mode", &mut m.mode)?;
    f.set("window", &mut m.window)?;
    f.set("latent_dim", &mut m.latent_dim)?;
    if let Some(v) = f.map.remove("hidden") {
        m.hidden_dims = parse_list("hidden", &v)?;
    }
    f.set("leaky_slope", &mut m.leaky_slope)?;
    f.set("sigmoid_all_heads", &mut m.sigmoid_all_heads)?;
    f.set("substeps", &mut m.substeps)?;
    f.set("dt", &mut m.dt)?;
    f.set::<Integrator>("integrator", &mut m.integrator)?;
    f.set("lr", &mut t.lr)?;
    f.set("momentum", &mut t.momentum)?;
    f.set("nesterov", &mut t.nesterov)?;
    f.set("epochs", &mut t.epochs)?;
    f.set("freeze_zeta", &mut t.freeze_zeta)?;
    if let Some(v) = f.map.remove("init") {
        t.init = match v.as_str() {
            "normal" => InitScheme::StandardNormal,
            "scaled" => InitScheme::Scaled,
            _ => return Err(invalid("init", "expected normal or scaled")),
        };
    }
    if let Some(v) = f.map.remove("draw_mode") {
        t.draw_mode = match v.as_str() {
            "auto" => None,
            other => Some(other.parse::<DrawMode>().map_err(|e| invalid("draw_mode", e))?),
        };
    }
    f.set("zeta.n_bins", &mut t.zeta.n_bins)?;
    f.set("zeta.clip_max", &mut t.zeta.clip_max)?;
    f.set("zeta.smoothing", &mut t.zeta.smoothing)?;
    f.set("zeta.candidates", &mut t.zeta.candidates)?;
    if t.epochs == 0 {
        return Err(invalid("epochs", "must be >= 1"));
    }
    t.validate().map_err(|e| invalid("train", e.to_string()))?;
    Ok(t)
}
