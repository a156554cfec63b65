//! The two-player loop: per epoch, every system builds its error series,
//! draws constrained surrogates under its current `zeta`, scores the
//! coefficient of regulation `CR = sigma(e) / sigma(e_tilde)`, refreshes
//! `zeta`, and a single momentum-SGD step is taken on the mean CR.

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::{DataError, ObservationSet};
use crate::diffnet::{format_f64, read_params, write_params, InitScheme, NetError, ParamVector, Sgd};
use crate::metrics::{rho, rho_validation, std_dev, MetricError, ScoredPair, Standardizer};
use crate::model::{Estimator, Integrator, Mode, ModelConfig, ModelError, SystemForward};
use crate::rng;
use crate::surrogate::{
    distribution_distance, estimate_zeta, resample, Draw, DistanceKind, DistanceReport, DrawMode, ResampleFn,
    SurrogateError, SurrogatePool, ZetaConfig,
};

/// Smallest surrogate spread accepted before the run is aborted.
pub const MIN_SURROGATE_STD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("surrogate errors collapsed (sigma = {std:e}) at epoch {epoch}, system {system}")]
    DegenerateSurrogate { epoch: usize, system: usize, std: f64 },
    #[error("non-finite objective at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("parameter file: {0}")]
    Format(String),
    #[error("architecture mismatch: parameters expect {expected} observables, dataset has {found}")]
    Architecture { expected: usize, found: usize },
}

impl From<NetError> for TrainError {
    fn from(e: NetError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub epochs: usize,
    pub seed: u64,
    pub zeta: ZetaConfig,
    /// `None` picks whole-vector draws for IDRAS and per-component draws
    /// for IRAS.
    pub draw_mode: Option<DrawMode>,
    pub init: InitScheme,
    /// Keep `zeta = 1` for the whole run.
    pub freeze_zeta: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: 0.01,
            momentum: 0.9,
            nesterov: false,
            epochs: 150,
            seed: 0,
            zeta: ZetaConfig::default(),
            draw_mode: None,
            init: InitScheme::StandardNormal,
            freeze_zeta: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!("momentum must be in [0,1), got {}", self.momentum)));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be >= 1".into()));
        }
        self.model.validate()?;
        self.zeta.validate()?;
        Ok(())
    }

    pub fn effective_draw_mode(&self) -> DrawMode {
        self.draw_mode.unwrap_or(match self.model.mode {
            Mode::Idras => DrawMode::WholeVector,
            Mode::Iras => DrawMode::PerComponent,
        })
    }
}

/// `sigma(e) / sigma(e_tilde)` with population deviations.
pub fn cr(e: &[f64], e_tilde: &[f64]) -> Result<f64, TrainError> {
    if e.len() < 2 || e_tilde.len() < 2 {
        return Err(MetricError::TooShort(e.len().min(e_tilde.len())).into());
    }
    let den = std_dev(e_tilde);
    if !(den >= MIN_SURROGATE_STD) {
        return Err(TrainError::DegenerateSurrogate {
            epoch: 0,
            system: 0,
            std: den,
        });
    }
    Ok(std_dev(e) / den)
}

/// `d CR / d e` and `d CR / d e_tilde`.
fn cr_gradients(e: &[f64], e_tilde: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = e.len() as f64;
    let (me, mt) = (crate::metrics::mean(e), crate::metrics::mean(e_tilde));
    let (se, st) = (std_dev(e), std_dev(e_tilde));
    let value = se / st;
    let de = e
        .iter()
        .map(|x| if se > 0.0 { (x - me) / (n * se * st) } else { 0.0 })
        .collect();
    let dt = e_tilde.iter().map(|x| -value * (x - mt) / (n * st * st)).collect();
    (value, de, dt)
}

/// How a bundle is scored: surrogate settings and the evaluation stream.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalSettings {
    pub seed: u64,
    pub draw_mode: DrawMode,
    pub zeta: ZetaConfig,
}

/// The model plus the input standardization it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaBundle {
    pub estimator: Estimator,
    pub standardizer: Standardizer,
    pub feature_names: Vec<String>,
    pub params: ParamVector,
    pub eval: EvalSettings,
}

impl OmegaBundle {
    pub fn to_text(&self) -> String {
        let cfg = &self.estimator.config;
        let mut s = String::from("[meta]\n");
        let hidden: Vec<String> = cfg.hidden_dims.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(s, "mode={}", cfg.mode);
        let _ = writeln!(s, "window={}", cfg.window);
        let _ = writeln!(s, "latent_dim={}", cfg.latent_dim);
        let _ = writeln!(s, "hidden={}", hidden.join(","));
        let _ = writeln!(s, "leaky_slope={:?}", cfg.leaky_slope);
        let _ = writeln!(s, "sigmoid_all_heads={}", cfg.sigmoid_all_heads);
        let _ = writeln!(s, "substeps={}", cfg.substeps);
        let _ = writeln!(s, "dt={:?}", cfg.dt);
        let _ = writeln!(s, "integrator={}", cfg.integrator);
        let _ = writeln!(s, "features={}", self.feature_names.join(","));
        s.push_str("[eval]\n");
        let ev = &self.eval;
        let _ = writeln!(s, "seed={}", ev.seed);
        let _ = writeln!(s, "draw_mode={}", ev.draw_mode);
        let _ = writeln!(s, "n_bins={}", ev.zeta.n_bins);
        let _ = writeln!(s, "clip_max={:?}", ev.zeta.clip_max);
        let _ = writeln!(s, "smoothing={:?}", ev.zeta.smoothing);
        let _ = writeln!(s, "candidates={}", ev.zeta.candidates);
        s.push_str("[standardize]\n");
        let join = |v: &[f64]| v.iter().map(|x| format_f64(*x)).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "mean={}", join(&self.standardizer.mean));
        let _ = writeln!(s, "std={}", join(&self.standardizer.std));
        for (name, mlp, range) in self.estimator.sub_networks() {
            let _ = writeln!(s, "[{name}]");
            s.push_str(&write_params(mlp.spec(), &self.params[range]));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let fmt_err = |m: String| TrainError::Format(m);
        let mut sections: Vec<(String, Vec<&str>)> = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                sections.push((name.to_string(), Vec::new()));
            } else if let Some((_, body)) = sections.last_mut() {
                body.push(line);
            } else {
                return Err(fmt_err(format!("content before first section: `{line}`")));
            }
        }
        let section = |name: &str| {
            sections
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, b)| b.clone())
                .ok_or_else(|| fmt_err(format!("missing section [{name}]")))
        };
        let kv = |body: &[&str]| -> Result<Vec<(String, String)>, TrainError> {
            body.iter()
                .map(|l| {
                    l.split_once('=')
                        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                        .ok_or_else(|| fmt_err(format!("expected key=value, got `{l}`")))
                })
                .collect()
        };
        let meta = kv(&section("meta")?)?;
        let ev = kv(&section("eval")?)?;
        let lookup = |pairs: &[(String, String)], sec: &str, k: &str| {
            pairs
                .iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| fmt_err(format!("missing key `{k}` in [{sec}]")))
        };
        let get = |k: &str| lookup(&meta, "meta", k);
        let num = |k: &str| -> Result<f64, TrainError> {
            get(k)?.parse().map_err(|_| fmt_err(format!("bad number for `{k}`")))
        };
        let int = |k: &str| -> Result<usize, TrainError> {
            get(k)?.parse().map_err(|_| fmt_err(format!("bad integer for `{k}`")))
        };
        fn parse_as<T: std::str::FromStr>(v: String, k: &str) -> Result<T, TrainError> {
            v.parse().map_err(|_| TrainError::Format(format!("bad value `{v}` for `{k}`")))
        }
        let ev_get = |k: &str| lookup(&ev, "eval", k);
        let eval = EvalSettings {
            seed: parse_as(ev_get("seed")?, "seed")?,
            draw_mode: parse_as(ev_get("draw_mode")?, "draw_mode")?,
            zeta: ZetaConfig {
                n_bins: parse_as(ev_get("n_bins")?, "n_bins")?,
                clip_max: parse_as(ev_get("clip_max")?, "clip_max")?,
                smoothing: parse_as(ev_get("smoothing")?, "smoothing")?,
                candidates: parse_as(ev_get("candidates")?, "candidates")?,
            },
        };
        let hidden = get("hidden")?
            .split(',')
            .map(|h| h.parse::<usize>().map_err(|_| fmt_err(format!("bad hidden width `{h}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        let config = ModelConfig {
            window: int("window")?,
            latent_dim: int("latent_dim")?,
            hidden_dims: hidden,
            leaky_slope: num("leaky_slope")?,
            sigmoid_all_heads: get("sigmoid_all_heads")? == "true",
            substeps: int("substeps")?,
            dt: num("dt")?,
            integrator: get("integrator")?.parse::<Integrator>().map_err(fmt_err)?,
            mode: get("mode")?.parse::<Mode>().map_err(fmt_err)?,
        };
        let feature_names: Vec<String> = get("features")?.split(',').map(|s| s.to_string()).collect();
        let estimator = Estimator::new(feature_names.len(), config)?;
        let st = kv(&section("standardize")?)?;
        let vec_of = |k: &str| -> Result<Vec<f64>, TrainError> {
            let v = st
                .iter()
                .find(|(key, _)| key == k)
                .ok_or_else(|| fmt_err(format!("missing standardize key `{k}`")))?;
            v.1.split(',')
                .map(|x| x.parse::<f64>().map_err(|_| fmt_err(format!("bad value `{x}` in `{k}`"))))
                .collect()
        };
        let standardizer = Standardizer {
            mean: vec_of("mean")?,
            std: vec_of("std")?,
        };
        if standardizer.dim() != feature_names.len() || standardizer.std.len() != feature_names.len() {
            return Err(fmt_err("standardize vectors do not match feature count".into()));
        }
        let mut params = vec![0.0; estimator.param_count()];
        for (name, mlp, range) in estimator.sub_networks() {
            let (spec, values) = read_params(&section(name)?.join("\n"))?;
            if &spec != mlp.spec() {
                return Err(fmt_err(format!(
                    "network [{name}] is `{}`, expected `{}`",
                    spec.descriptor(),
                    mlp.spec().descriptor()
                )));
            }
            params[range].copy_from_slice(&values);
        }
        Ok(Self {
            estimator,
            standardizer,
            feature_names,
            params: ParamVector(params),
            eval,
        })
    }

    /// Rejects datasets whose features differ from the trained ones.
    pub fn check_dataset(&self, data: &ObservationSet) -> Result<(), TrainError> {
        if data.obs_dim() != self.estimator.obs_dim {
            return Err(TrainError::Architecture {
                expected: self.estimator.obs_dim,
                found: data.obs_dim(),
            });
        }
        data.require_features(&self.feature_names)?;
        Ok(())
    }
}

/// Per-epoch training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub cr: Vec<f64>,
    pub mean_cr: f64,
    /// Per system: number of starved resample calls.
    pub starved: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRecord {
    pub system: usize,
    pub times: Vec<f64>,
    /// `c_j` for every sample.
    pub c: Vec<f64>,
    /// From here on, one entry per predicted step `k = T..N`.
    pub c_hat: Vec<f64>,
    pub e: Vec<f64>,
    pub e_tilde: Vec<f64>,
    /// Ground truth aligned with `c_hat`.
    pub c_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub epochs: Vec<EpochRecord>,
    pub omega: OmegaBundle,
    /// `zeta` after the final refresh.
    pub zeta: Vec<ResampleFn>,
}

/// Standardized observations of every system.
fn standardized(data: &ObservationSet, st: &Standardizer) -> Vec<Vec<Vec<f64>>> {
    data.systems
        .iter()
        .map(|s| s.obs.iter().map(|z| st.apply(z)).collect())
        .collect()
}

/// Surrogate draws for one system under `zeta`.
struct SystemDraws {
    draws: Vec<Draw>,
    e_tilde: Vec<f64>,
    /// One naive (`zeta = 1`) surrogate error per window: the first
    /// candidate of each resample call.
    naive: Vec<f64>,
    starved: usize,
}

fn draw_system(
    est: &Estimator,
    omega: &[f64],
    fwd: &SystemForward,
    pool: &SurrogatePool<'_>,
    zeta: &ResampleFn,
    n_candidates: usize,
    stream: &[u64],
) -> Result<SystemDraws, TrainError> {
    let t = fwd.window();
    let n = fwd.c.len();
    let mut out = SystemDraws {
        draws: Vec::with_capacity(n - t),
        e_tilde: Vec::with_capacity(n - t),
        naive: Vec::with_capacity(n - t),
        starved: 0,
    };
    for k in t..n {
        let c_hat = fwd.c_hat[k - t];
        let mut tags = stream.to_vec();
        tags.push(k as u64);
        let mut r = rng::substream(tags[0], &tags[1..]);
        let picked = resample(
            pool,
            n_candidates,
            |d| match d {
                // the combination of a whole past observation is already known
                Draw::Index(j) => Ok(fwd.c[*j] - c_hat),
                Draw::Components(_) => Ok(est.combine(omega, &pool.materialize(d))? - c_hat),
            },
            zeta,
            &mut r,
        )?;
        out.starved += picked.starved as usize;
        out.e_tilde.push(picked.error);
        out.naive.push(picked.candidate_errors[0]);
        out.draws.push(picked.draw);
    }
    Ok(out)
}

/// CR of one system with frozen draws, accumulating `weight * dCR/dOmega`
/// into `grad`. Returns `(CR, e, e_tilde)`.
fn system_cr_grad(
    est: &Estimator,
    omega: &[f64],
    fwd: &SystemForward,
    pool: &SurrogatePool<'_>,
    draws: &[Draw],
    weight: f64,
    grad: &mut [f64],
) -> Result<(f64, Vec<f64>, Vec<f64>), TrainError> {
    let t = fwd.window();
    let e = fwd.errors();
    let mut e_tilde = Vec::with_capacity(draws.len());
    let mut tapes = Vec::new();
    for (i, d) in draws.iter().enumerate() {
        let c_tilde = match d {
            Draw::Index(j) => fwd.c[*j],
            Draw::Components(_) => {
                let (v, tape) = est.combine_taped(omega, &pool.materialize(d))?;
                tapes.push(tape);
                v
            }
        };
        e_tilde.push(c_tilde - fwd.c_hat[i]);
    }
    let st = std_dev(&e_tilde);
    if !(st >= MIN_SURROGATE_STD) {
        return Err(TrainError::DegenerateSurrogate {
            epoch: 0,
            system: 0,
            std: st,
        });
    }
    let (value, de, dt) = cr_gradients(&e, &e_tilde);
    let mut dc = vec![0.0; fwd.c.len()];
    let mut dc_hat = vec![0.0; fwd.c_hat.len()];
    let mut tape_iter = tapes.iter();
    for i in 0..e.len() {
        dc[t + i] += weight * de[i];
        dc_hat[i] = -weight * (de[i] + dt[i]);
        match &draws[i] {
            Draw::Index(j) => dc[*j] += weight * dt[i],
            Draw::Components(_) => {
                let tape = tape_iter.next().expect("one tape per component draw");
                est.backward_combine(omega, tape, weight * dt[i], grad)?;
            }
        }
    }
    est.backward_system(omega, fwd, &dc, &dc_hat, grad)?;
    Ok((value, e, e_tilde))
}

/// Mean CR over systems and its gradient, with every surrogate draw held
/// fixed. `systems` are standardized observation series.
pub fn frozen_objective(
    est: &Estimator,
    omega: &[f64],
    systems: &[Vec<Vec<f64>>],
    draws: &[Vec<Draw>],
    mode: DrawMode,
) -> Result<(f64, Vec<f64>), TrainError> {
    let mut grad = vec![0.0; omega.len()];
    let w = 1.0 / systems.len() as f64;
    let mut total = 0.0;
    for (zs, d) in systems.iter().zip(draws) {
        let fwd = est.forward_system(omega, zs)?;
        let pool = SurrogatePool::new(zs, mode)?;
        total += w * system_cr_grad(est, omega, &fwd, &pool, d, w, &mut grad)?.0;
    }
    Ok((total, grad))
}

/// Naive draws for every window of every system: a fixed draw set for
/// gradient checks.
pub fn naive_draws(systems: &[Vec<Vec<f64>>], window: usize, mode: DrawMode, seed: u64) -> Result<Vec<Vec<Draw>>, TrainError> {
    systems
        .iter()
        .enumerate()
        .map(|(s, zs)| {
            let pool = SurrogatePool::new(zs, mode)?;
            let mut r = rng::substream(seed, &[rng::stage::RESAMPLE, s as u64, u64::MAX]);
            Ok((window..zs.len()).map(|_| pool.naive_draw(&mut r)).collect())
        })
        .collect()
}

fn check_data(data: &ObservationSet, window: usize) -> Result<(), TrainError> {
    data.validate()?;
    if let Some(s) = data.systems.iter().find(|s| s.len() <= window + 1) {
        return Err(DataError::System {
            system: s.id,
            msg: format!("{} samples is too short for window {window}", s.len()),
        }
        .into());
    }
    Ok(())
}

pub fn train(data: &ObservationSet, cfg: &TrainConfig) -> Result<TrainRecord, TrainError> {
    cfg.validate()?;
    check_data(data, cfg.model.window)?;
    let est = Estimator::new(data.obs_dim(), cfg.model.clone())?;
    let standardizer = Standardizer::fit(data.systems.iter().flat_map(|s| s.obs.iter().map(|z| z.as_slice())), data.obs_dim());
    let systems = standardized(data, &standardizer);
    let mode = cfg.effective_draw_mode();
    let mut omega = est.init_params(cfg.seed, cfg.init);
    let mut velocity = vec![0.0; omega.len()];
    let sgd = Sgd {
        lr: cfg.lr,
        momentum: cfg.momentum,
        nesterov: cfg.nesterov,
    };
    let mut zeta = vec![ResampleFn::identity(); systems.len()];
    let weight = 1.0 / systems.len() as f64;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut grad = vec![0.0; omega.len()];
        let mut rec = EpochRecord {
            cr: Vec::with_capacity(systems.len()),
            mean_cr: 0.0,
            starved: Vec::with_capacity(systems.len()),
        };
        for (s, zs) in systems.iter().enumerate() {
            let fwd = est.forward_system(&omega, zs)?;
            let pool = SurrogatePool::new(zs, mode)?;
            let stream = [cfg.seed, rng::stage::RESAMPLE, s as u64, epoch as u64];
            let d = draw_system(&est, &omega, &fwd, &pool, &zeta[s], cfg.zeta.candidates, &stream)?;
            let (value, e, _) = system_cr_grad(&est, &omega, &fwd, &pool, &d.draws, weight, &mut grad).map_err(|err| match err {
                TrainError::DegenerateSurrogate { std, .. } => TrainError::DegenerateSurrogate { epoch, system: s, std },
                other => other,
            })?;
            if !cfg.freeze_zeta {
                zeta[s] = estimate_zeta(&e, &d.naive, &cfg.zeta)?;
            }
            rec.cr.push(value);
            rec.starved.push(d.starved);
        }
        rec.mean_cr = rec.cr.iter().sum::<f64>() * weight;
        if !rec.mean_cr.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFinite { epoch });
        }
        sgd.step(&mut omega, &grad, &mut velocity)?;
        epochs.push(rec);
    }
    Ok(TrainRecord {
        epochs,
        omega: OmegaBundle {
            estimator: est,
            standardizer,
            feature_names: data.feature_names.clone(),
            params: omega,
            eval: EvalSettings {
                seed: cfg.seed,
                draw_mode: mode,
                zeta: cfg.zeta,
            },
        },
        zeta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemMetrics {
    pub system: usize,
    pub cr: f64,
    pub rho_prediction: ScoredPair,
    pub rho_validation: Option<ScoredPair>,
    pub starved: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub mode: Mode,
    /// Unweighted mean of per-system CR.
    pub mean_cr: f64,
    /// `sigma(e) / sigma(e_tilde)` over all systems' errors concatenated.
    pub pooled_cr: f64,
    /// `rho(c, c_hat)` over the concatenated series.
    pub rho_prediction: ScoredPair,
    pub rho_validation: Option<ScoredPair>,
    pub systems: Vec<SystemMetrics>,
    pub series: Vec<SeriesRecord>,
    pub zeta: Vec<ResampleFn>,
    pub distance: Option<DistanceReport>,
}

/// Below this prediction score a tracked reference was found.
pub const SUCCESS_RHO: f64 = 0.5;

impl MetricReport {
    pub fn success(&self) -> bool {
        matches!(self.rho_prediction.rho, Some(r) if r < SUCCESS_RHO)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let opt = |p: &ScoredPair| p.rho.map_or("undefined".to_string(), format_f64);
        let _ = writeln!(s, "mode={}", self.mode);
        let _ = writeln!(s, "mean_cr={}", format_f64(self.mean_cr));
        let _ = writeln!(s, "pooled_cr={}", format_f64(self.pooled_cr));
        let _ = writeln!(s, "rho_c_chat={}", opt(&self.rho_prediction));
        let _ = writeln!(s, "rho_c_chat_degenerate={}", self.rho_prediction.degenerate);
        if let Some(v) = &self.rho_validation {
            let _ = writeln!(s, "rho_c_cstar={}", opt(v));
            let _ = writeln!(s, "rho_c_cstar_sign_flipped={}", v.sign_flipped);
            let _ = writeln!(s, "rho_c_cstar_degenerate={}", v.degenerate);
        }
        let _ = writeln!(s, "success={}", self.success());
        if let Some(d) = &self.distance {
            let _ = writeln!(s, "distance_{}={}", d.kind, format_f64(d.statistic));
        }
        let starved: usize = self.systems.iter().map(|m| m.starved).sum();
        let _ = writeln!(s, "starved_draws={starved}");
        for m in &self.systems {
            let _ = write!(s, "system.{}.cr={}\nsystem.{}.rho_c_chat={}\n", m.system, format_f64(m.cr), m.system, opt(&m.rho_prediction));
            if let Some(v) = &m.rho_validation {
                let _ = writeln!(s, "system.{}.rho_c_cstar={}", m.system, opt(v));
            }
        }
        s
    }
}

/// Scores a trained model with its own [`EvalSettings`]. `zeta` is
/// re-estimated per system from a naive pass, then one constrained draw per
/// window gives `e_tilde`.
pub fn evaluate(bundle: &OmegaBundle, data: &ObservationSet, distance: Option<DistanceKind>) -> Result<MetricReport, TrainError> {
    bundle.check_dataset(data)?;
    let EvalSettings { seed, draw_mode, zeta: zeta_cfg } = bundle.eval;
    let zeta_cfg = &zeta_cfg;
    let est = &bundle.estimator;
    check_data(data, est.window())?;
    let omega = &bundle.params[..];
    let systems = standardized(data, &bundle.standardizer);
    let t = est.window();
    let mut report = MetricReport {
        mode: est.mode(),
        mean_cr: 0.0,
        pooled_cr: 0.0,
        rho_prediction: ScoredPair {
            rho: None,
            sign_flipped: false,
            degenerate: true,
        },
        rho_validation: None,
        systems: Vec::new(),
        series: Vec::new(),
        zeta: Vec::new(),
        distance: None,
    };
    let (mut all_c, mut all_hat, mut all_star, mut all_e, mut all_t) = (vec![], vec![], vec![], vec![], vec![]);
    let with_truth = data.has_ground_truth();
    for (s, (zs, sys)) in systems.iter().zip(&data.systems).enumerate() {
        let fwd = est.forward_system(omega, zs)?;
        let pool = SurrogatePool::new(zs, draw_mode)?;
        let naive = draw_system(est, omega, &fwd, &pool, &ResampleFn::identity(), zeta_cfg.candidates, &[seed, rng::stage::EVAL, s as u64, 0])?;
        let e = fwd.errors();
        let zeta = estimate_zeta(&e, &naive.naive, zeta_cfg)?;
        let d = draw_system(est, omega, &fwd, &pool, &zeta, zeta_cfg.candidates, &[seed, rng::stage::EVAL, s as u64, 1])?;
        let value = cr(&e, &d.e_tilde).map_err(|err| match err {
            TrainError::DegenerateSurrogate { std, .. } => TrainError::DegenerateSurrogate { epoch: 0, system: s, std },
            other => other,
        })?;
        let c = &fwd.c[t..];
        let c_star = sys.c_star.as_ref().map(|v| v[t..].to_vec());
        report.systems.push(SystemMetrics {
            system: sys.id,
            cr: value,
            rho_prediction: rho(c, &fwd.c_hat)?,
            rho_validation: c_star.as_ref().map(|v| rho_validation(c, v)).transpose()?,
            starved: d.starved,
        });
        all_c.extend_from_slice(c);
        all_hat.extend_from_slice(&fwd.c_hat);
        all_e.extend_from_slice(&e);
        all_t.extend_from_slice(&d.e_tilde);
        if let Some(v) = &c_star {
            all_star.extend_from_slice(v);
        }
        report.series.push(SeriesRecord {
            system: sys.id,
            times: sys.times.clone(),
            c: fwd.c.clone(),
            c_hat: fwd.c_hat.clone(),
            e,
            e_tilde: d.e_tilde,
            c_star,
        });
        report.zeta.push(zeta);
    }
    report.mean_cr = report.systems.iter().map(|m| m.cr).sum::<f64>() / report.systems.len() as f64;
    report.pooled_cr = cr(&all_e, &all_t)?;
    report.rho_prediction = rho(&all_c, &all_hat)?;
    if with_truth {
        report.rho_validation = Some(rho_validation(&all_c, &all_star)?);
    }
    if let Some(kind) = distance {
        report.distance = Some(distribution_distance(&all_e, &all_t, kind)?);
    }
    Ok(report)
}
