//! The error block: a combination network `c = g(z)` and a latent-dynamics
//! filter that predicts `c_k` from the window `c_{k-T..k-1}`.
//!
//! The filter encodes the window into a latent state, advances it over one
//! sampling interval by integrating a learned drift, and decodes the result.
//! The filtering error is `e_k = c_k - c_hat_k`.
//!
//! All observation vectors handed to this module are expected to be
//! standardized already (see [`crate::metrics::Standardizer`]).

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use thiserror::Error;

use crate::diffnet::{
    apply_scaled_init, standard_normal_vector, GradientTape, InitScheme, Mlp, MlpSpec, NetError,
    OutputActivation, ParamVector, DEFAULT_HIDDEN, DEFAULT_LEAKY_SLOPE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("series of length {len} is too short for window {window}")]
    TooShort { len: usize, window: usize },
    #[error("window history must have length {expected}, got {got}")]
    History { expected: usize, got: usize },
}

/// Whether the filter is learned (dynamic reference) or pinned to zero
/// (constant-setpoint baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Idras,
    Iras,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Idras => "IDRAS",
            Mode::Iras => "IRAS",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "IDRAS" => Ok(Mode::Idras),
            "IRAS" => Ok(Mode::Iras),
            _ => Err(format!("unknown mode `{s}` (expected IDRAS or IRAS)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

impl fmt::Display for Integrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Integrator::Euler => "euler",
            Integrator::Rk4 => "rk4",
        })
    }
}

impl FromStr for Integrator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" => Ok(Integrator::Euler),
            "rk4" => Ok(Integrator::Rk4),
            _ => Err(format!("unknown integrator `{s}` (expected euler or rk4)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// History length `T`.
    pub window: usize,
    /// Latent dimension `n_y`.
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub leaky_slope: f64,
    /// Apply the sigmoid head to encoder, drift and decoder as well as `g`.
    pub sigmoid_all_heads: bool,
    pub substeps: usize,
    /// Integration horizon of one sampling interval.
    pub dt: f64,
    pub integrator: Integrator,
    pub mode: Mode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 10,
            latent_dim: 2,
            hidden_dims: DEFAULT_HIDDEN.to_vec(),
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            sigmoid_all_heads: false,
            substeps: 4,
            dt: 1.0,
            integrator: Integrator::Euler,
            mode: Mode::Idras,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.window == 0 {
            return Err(ModelError::Config("window T must be >= 1".into()));
        }
        if self.latent_dim == 0 {
            return Err(ModelError::Config("latent_dim must be >= 1".into()));
        }
        if self.substeps == 0 {
            return Err(ModelError::Config("substeps must be >= 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ModelError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Partition of the full parameter vector into the four sub-networks.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaLayout {
    /// Combination network `g`.
    pub theta: Range<usize>,
    /// Encoder.
    pub phi: Range<usize>,
    /// Drift.
    pub omega: Range<usize>,
    /// Decoder.
    pub delta: Range<usize>,
}

impl OmegaLayout {
    pub fn total(&self) -> usize {
        self.delta.end
    }

    pub fn filter(&self) -> Range<usize> {
        self.phi.start..self.delta.end
    }
}

/// Scalar combination `c = g(z)` with a sigmoid head.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinationNet {
    pub mlp: Mlp,
}

/// Encoder, drift and decoder with the integration settings.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBlock {
    pub encoder: Mlp,
    pub drift: Mlp,
    pub decoder: Mlp,
    pub window: usize,
    pub latent_dim: usize,
    pub dt: f64,
    pub substeps: usize,
    pub integrator: Integrator,
}

/// Recorded drift evaluations for one integration substep.
#[derive(Debug, Clone)]
enum StepTape {
    Euler(GradientTape),
    Rk4([GradientTape; 4]),
}

#[derive(Debug, Clone)]
pub struct FilterTape {
    encoder: GradientTape,
    steps: Vec<StepTape>,
    decoder: GradientTape,
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

impl FilterBlock {
    fn step_h(&self) -> f64 {
        self.dt / self.substeps as f64
    }

    /// Advances `y` over one sampling interval.
    pub fn advance(&self, drift_params: &[f64], y: &[f64]) -> Vec<f64> {
        let h = self.step_h();
        let w = |v: &[f64]| self.drift.eval_unchecked(drift_params, v);
        let mut y = y.to_vec();
        for _ in 0..self.substeps {
            y = match self.integrator {
                Integrator::Euler => axpy(&y, h, &w(&y)),
                Integrator::Rk4 => {
                    let k1 = w(&y);
                    let k2 = w(&axpy(&y, h / 2.0, &k1));
                    let k3 = w(&axpy(&y, h / 2.0, &k2));
                    let k4 = w(&axpy(&y, h, &k3));
                    y.iter()
                        .enumerate()
                        .map(|(i, yi)| yi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                        .collect()
                }
            };
        }
        y
    }

    fn advance_taped(&self, drift_params: &[f64], y: &[f64]) -> (Vec<f64>, Vec<StepTape>) {
        let h = self.step_h();
        let w = |v: &[f64]| self.drift.forward_unchecked(drift_params, v);
        let mut y = y.to_vec();
        let mut tapes = Vec::with_capacity(self.substeps);
        for _ in 0..self.substeps {
            match self.integrator {
                Integrator::Euler => {
                    let (k, t) = w(&y);
                    y = axpy(&y, h, &k);
                    tapes.push(StepTape::Euler(t));
                }
                Integrator::Rk4 => {
                    let (k1, t1) = w(&y);
                    let (k2, t2) = w(&axpy(&y, h / 2.0, &k1));
                    let (k3, t3) = w(&axpy(&y, h / 2.0, &k2));
                    let (k4, t4) = w(&axpy(&y, h, &k3));
                    y = y
                        .iter()
                        .enumerate()
                        .map(|(i, yi)| yi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                        .collect();
                    tapes.push(StepTape::Rk4([t1, t2, t3, t4]));
                }
            }
        }
        (y, tapes)
    }

    /// Latent state after encoding and advancing, without decoding.
    pub fn latent(&self, enc: &[f64], drift: &[f64], history: &[f64]) -> Vec<f64> {
        let y_plus = self.encoder.eval_unchecked(enc, history);
        self.advance(drift, &y_plus)
    }

    pub fn predict(&self, enc: &[f64], drift: &[f64], dec: &[f64], history: &[f64]) -> f64 {
        let y_minus = self.latent(enc, drift, history);
        self.decoder.eval_unchecked(dec, &y_minus)[0]
    }

    fn predict_taped(&self, enc: &[f64], drift: &[f64], dec: &[f64], history: &[f64]) -> (f64, FilterTape) {
        let (y_plus, enc_tape) = self.encoder.forward_unchecked(enc, history);
        let (y_minus, steps) = self.advance_taped(drift, &y_plus);
        let (out, dec_tape) = self.decoder.forward_unchecked(dec, &y_minus);
        (
            out[0],
            FilterTape {
                encoder: enc_tape,
                steps,
                decoder: dec_tape,
            },
        )
    }

    /// Backpropagates `upstream * d(c_hat)` and returns the gradient with
    /// respect to the history window.
    fn backward(&self, params: FilterParams<'_>, grads: FilterGrads<'_>, tape: &FilterTape, upstream: f64) -> Vec<f64> {
        let h = self.step_h();
        let FilterGrads { enc: g_enc, drift: g_drift, dec: g_dec } = grads;
        let mut dy = self.decoder.backward_unchecked(params.dec, &tape.decoder, &[upstream], g_dec);
        for step in tape.steps.iter().rev() {
            match step {
                StepTape::Euler(t) => {
                    let up: Vec<f64> = dy.iter().map(|v| h * v).collect();
                    let back = self.drift.backward_unchecked(params.drift, t, &up, g_drift);
                    for (d, b) in dy.iter_mut().zip(&back) {
                        *d += b;
                    }
                }
                StepTape::Rk4([t1, t2, t3, t4]) => {
                    let ybar = dy.clone();
                    let mut k1 = ybar.iter().map(|v| h / 6.0 * v).collect::<Vec<_>>();
                    let mut k2 = ybar.iter().map(|v| h / 3.0 * v).collect::<Vec<_>>();
                    let mut k3 = k2.clone();
                    let k4 = k1.clone();
                    let a4 = self.drift.backward_unchecked(params.drift, t4, &k4, g_drift);
                    for i in 0..dy.len() {
                        dy[i] += a4[i];
                        k3[i] += h * a4[i];
                    }
                    let a3 = self.drift.backward_unchecked(params.drift, t3, &k3, g_drift);
                    for i in 0..dy.len() {
                        dy[i] += a3[i];
                        k2[i] += h / 2.0 * a3[i];
                    }
                    let a2 = self.drift.backward_unchecked(params.drift, t2, &k2, g_drift);
                    for i in 0..dy.len() {
                        dy[i] += a2[i];
                        k1[i] += h / 2.0 * a2[i];
                    }
                    let a1 = self.drift.backward_unchecked(params.drift, t1, &k1, g_drift);
                    for i in 0..dy.len() {
                        dy[i] += a1[i];
                    }
                }
            }
        }
        self.encoder.backward_unchecked(params.enc, &tape.encoder, &dy, g_enc)
    }
}

#[derive(Clone, Copy)]
struct FilterParams<'a> {
    enc: &'a [f64],
    drift: &'a [f64],
    dec: &'a [f64],
}

struct FilterGrads<'a> {
    enc: &'a mut [f64],
    drift: &'a mut [f64],
    dec: &'a mut [f64],
}

/// Forward values and tapes for one system's full series.
#[derive(Debug, Clone)]
pub struct SystemForward {
    /// `c_j` for every sample `j`.
    pub c: Vec<f64>,
    /// `c_hat_k` for `k = T..N`, stored at index `k - T`.
    pub c_hat: Vec<f64>,
    c_tapes: Vec<GradientTape>,
    filter_tapes: Vec<FilterTape>,
}

impl SystemForward {
    pub fn window(&self) -> usize {
        self.c.len() - self.c_hat.len()
    }

    /// `e_k = c_k - c_hat_k` for `k = T..N`.
    pub fn errors(&self) -> Vec<f64> {
        let t = self.window();
        self.c[t..].iter().zip(&self.c_hat).map(|(c, h)| c - h).collect()
    }
}

/// The full error block with its parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    pub config: ModelConfig,
    pub obs_dim: usize,
    pub combination: CombinationNet,
    pub filter: FilterBlock,
    pub layout: OmegaLayout,
}

impl Estimator {
    pub fn new(obs_dim: usize, config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        if obs_dim == 0 {
            return Err(ModelError::Config("observation dimension must be >= 1".into()));
        }
        let inner_head = if config.sigmoid_all_heads {
            OutputActivation::Sigmoid
        } else {
            OutputActivation::Linear
        };
        let mk = |i, o, head| MlpSpec::new(i, config.hidden_dims.clone(), o, head, config.leaky_slope).and_then(Mlp::new);
        let g = mk(obs_dim, 1, OutputActivation::Sigmoid)?;
        let encoder = mk(config.window, config.latent_dim, inner_head)?;
        let drift = mk(config.latent_dim, config.latent_dim, inner_head)?;
        let decoder = mk(config.latent_dim, 1, inner_head)?;
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let layout = OmegaLayout {
            theta: take(g.param_count()),
            phi: take(encoder.param_count()),
            omega: take(drift.param_count()),
            delta: take(decoder.param_count()),
        };
        Ok(Self {
            filter: FilterBlock {
                encoder,
                drift,
                decoder,
                window: config.window,
                latent_dim: config.latent_dim,
                dt: config.dt,
                substeps: config.substeps,
                integrator: config.integrator,
            },
            combination: CombinationNet { mlp: g },
            obs_dim,
            layout,
            config,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layout.total()
    }

    pub fn window(&self) -> usize {
        self.config.window
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    /// Ω drawn from the init stream of `seed`.
    pub fn init_params(&self, seed: u64, scheme: InitScheme) -> ParamVector {
        let mut v = standard_normal_vector(self.param_count(), seed);
        if scheme == InitScheme::Scaled {
            let l = &self.layout;
            apply_scaled_init(self.combination.mlp.spec(), &mut v[l.theta.clone()]);
            apply_scaled_init(self.filter.encoder.spec(), &mut v[l.phi.clone()]);
            apply_scaled_init(self.filter.drift.spec(), &mut v[l.omega.clone()]);
            apply_scaled_init(self.filter.decoder.spec(), &mut v[l.delta.clone()]);
        }
        ParamVector(v)
    }

    pub fn sub_networks(&self) -> [(&'static str, &Mlp, Range<usize>); 4] {
        let l = &self.layout;
        [
            ("g", &self.combination.mlp, l.theta.clone()),
            ("encoder", &self.filter.encoder, l.phi.clone()),
            ("drift", &self.filter.drift, l.omega.clone()),
            ("decoder", &self.filter.decoder, l.delta.clone()),
        ]
    }

    fn check_params(&self, omega: &[f64]) -> Result<(), ModelError> {
        if omega.len() != self.param_count() {
            return Err(NetError::Dimension {
                expected: self.param_count(),
                got: omega.len(),
            }
            .into());
        }
        Ok(())
    }

    fn check_obs(&self, z: &[f64]) -> Result<(), ModelError> {
        if z.len() != self.obs_dim {
            return Err(NetError::Dimension {
                expected: self.obs_dim,
                got: z.len(),
            }
            .into());
        }
        Ok(())
    }

    fn filter_params<'a>(&self, omega: &'a [f64]) -> FilterParams<'a> {
        let l = &self.layout;
        FilterParams {
            enc: &omega[l.phi.clone()],
            drift: &omega[l.omega.clone()],
            dec: &omega[l.delta.clone()],
        }
    }

    /// `c = g(z)`.
    pub fn combine(&self, omega: &[f64], z: &[f64]) -> Result<f64, ModelError> {
        self.check_params(omega)?;
        self.check_obs(z)?;
        Ok(self.combine_unchecked(omega, z))
    }

    pub(crate) fn combine_unchecked(&self, omega: &[f64], z: &[f64]) -> f64 {
        self.combination.mlp.eval_unchecked(&omega[self.layout.theta.clone()], z)[0]
    }

    /// One-step prediction `c_hat` from a window of `T` past combination
    /// values. Zero in IRAS mode.
    pub fn predict(&self, omega: &[f64], history: &[f64]) -> Result<f64, ModelError> {
        self.check_params(omega)?;
        if history.len() != self.window() {
            return Err(ModelError::History {
                expected: self.window(),
                got: history.len(),
            });
        }
        Ok(self.predict_unchecked(omega, history))
    }

    pub(crate) fn predict_unchecked(&self, omega: &[f64], history: &[f64]) -> f64 {
        match self.mode() {
            Mode::Iras => 0.0,
            Mode::Idras => {
                let p = self.filter_params(omega);
                self.filter.predict(p.enc, p.drift, p.dec, history)
            }
        }
    }

    /// `c_j` for every observation.
    pub fn combination_series(&self, omega: &[f64], zs: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        self.check_params(omega)?;
        zs.iter()
            .map(|z| {
                self.check_obs(z)?;
                Ok(self.combine_unchecked(omega, z))
            })
            .collect()
    }

    /// `c_hat_k` for `k = T..N` from a combination series.
    pub fn prediction_series(&self, omega: &[f64], c: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_params(omega)?;
        let t = self.window();
        if c.len() <= t {
            return Err(ModelError::TooShort { len: c.len(), window: t });
        }
        Ok((t..c.len()).map(|k| self.predict_unchecked(omega, &c[k - t..k])).collect())
    }

    /// Filtering errors `e_k` for `k = T..N` (length `N - T`).
    pub fn error_series(&self, omega: &[f64], zs: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        let t = self.window();
        if zs.len() <= t {
            return Err(ModelError::TooShort { len: zs.len(), window: t });
        }
        let c = self.combination_series(omega, zs)?;
        let c_hat = self.prediction_series(omega, &c)?;
        Ok(c[t..].iter().zip(&c_hat).map(|(a, b)| a - b).collect())
    }

    /// Error with the last observation of a window replaced by a surrogate:
    /// `g(z_tilde) - F(g(z_{k-T..k-1}))`. The history always comes from the
    /// true observations.
    pub fn surrogate_error(&self, omega: &[f64], history_obs: &[Vec<f64>], z_tilde: &[f64]) -> Result<f64, ModelError> {
        self.check_params(omega)?;
        if history_obs.len() != self.window() {
            return Err(ModelError::History {
                expected: self.window(),
                got: history_obs.len(),
            });
        }
        self.check_obs(z_tilde)?;
        let history = self.combination_series(omega, history_obs)?;
        Ok(self.combine_unchecked(omega, z_tilde) - self.predict_unchecked(omega, &history))
    }

    /// Forward pass over a whole standardized series, keeping tapes.
    pub fn forward_system(&self, omega: &[f64], zs: &[Vec<f64>]) -> Result<SystemForward, ModelError> {
        self.check_params(omega)?;
        let t = self.window();
        if zs.len() <= t {
            return Err(ModelError::TooShort { len: zs.len(), window: t });
        }
        let theta = &omega[self.layout.theta.clone()];
        let mut c = Vec::with_capacity(zs.len());
        let mut c_tapes = Vec::with_capacity(zs.len());
        for z in zs {
            self.check_obs(z)?;
            let (y, tape) = self.combination.mlp.forward_unchecked(theta, z);
            c.push(y[0]);
            c_tapes.push(tape);
        }
        let (c_hat, filter_tapes) = match self.mode() {
            Mode::Iras => (vec![0.0; zs.len() - t], Vec::new()),
            Mode::Idras => {
                let p = self.filter_params(omega);
                (t..zs.len())
                    .map(|k| self.filter.predict_taped(p.enc, p.drift, p.dec, &c[k - t..k]))
                    .unzip()
            }
        };
        Ok(SystemForward {
            c,
            c_hat,
            c_tapes,
            filter_tapes,
        })
    }

    /// Accumulates into `grad` the gradient of `sum_j dc[j] c_j + sum_k dc_hat[k] c_hat_k`.
    /// `dc` has one entry per sample, `dc_hat` one per predicted step.
    pub fn backward_system(
        &self,
        omega: &[f64],
        fwd: &SystemForward,
        dc: &[f64],
        dc_hat: &[f64],
        grad: &mut [f64],
    ) -> Result<(), ModelError> {
        self.check_params(omega)?;
        if grad.len() != omega.len() || dc.len() != fwd.c.len() || dc_hat.len() != fwd.c_hat.len() {
            return Err(ModelError::Net(NetError::State("backward buffers do not match forward pass")));
        }
        let mut dc = dc.to_vec();
        if self.mode() == Mode::Idras {
            let p = self.filter_params(omega);
            let l = &self.layout;
            let (g_theta_rest, _) = grad.split_at_mut(l.delta.end);
            let (_, g_filter) = g_theta_rest.split_at_mut(l.phi.start);
            let (g_enc, rest) = g_filter.split_at_mut(l.phi.len());
            let (g_drift, g_dec) = rest.split_at_mut(l.omega.len());
            for (i, tape) in fwd.filter_tapes.iter().enumerate() {
                let up = dc_hat[i];
                if up == 0.0 {
                    continue;
                }
                let grads = FilterGrads {
                    enc: &mut *g_enc,
                    drift: &mut *g_drift,
                    dec: &mut *g_dec,
                };
                let dh = self.filter.backward(p, grads, tape, up);
                for (j, d) in dh.iter().enumerate() {
                    dc[i + j] += d;
                }
            }
        }
        let theta = &omega[self.layout.theta.clone()];
        let g_theta = &mut grad[self.layout.theta.clone()];
        for (tape, &d) in fwd.c_tapes.iter().zip(&dc) {
            if d != 0.0 {
                self.combination.mlp.backward_unchecked(theta, tape, &[d], g_theta);
            }
        }
        Ok(())
    }

    /// `g(z)` with its tape, for surrogate observations outside the series.
    pub fn combine_taped(&self, omega: &[f64], z: &[f64]) -> Result<(f64, GradientTape), ModelError> {
        self.check_params(omega)?;
        self.check_obs(z)?;
        let (y, tape) = self.combination.mlp.forward_unchecked(&omega[self.layout.theta.clone()], z);
        Ok((y[0], tape))
    }

    pub fn backward_combine(&self, omega: &[f64], tape: &GradientTape, upstream: f64, grad: &mut [f64]) -> Result<(), ModelError> {
        self.check_params(omega)?;
        let r = self.layout.theta.clone();
        self.combination.mlp.backward(&omega[r.clone()], tape, &[upstream], &mut grad[r])?;
        Ok(())
    }
}
