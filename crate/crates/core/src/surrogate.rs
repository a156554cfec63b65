//! The shuffle player.
//!
//! Surrogate observations are drawn at random times from the empirical
//! distribution of a system's own measurements, then reweighted by a
//! density-ratio function `zeta` defined on the one-dimensional error axis.
//! When `zeta` equals the ratio between the error density of the real data
//! and the error density under naive shuffling, the resampled surrogate
//! errors share the real errors' distribution.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::model::{Estimator, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurrogateError {
    #[error("surrogate pool is empty")]
    EmptyPool,
    #[error("empty input series")]
    EmptySeries,
    #[error("invalid resample function: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DrawMode {
    /// The complete observation vector from one random time.
    #[default]
    WholeVector,
    /// Each component from its own random time.
    PerComponent,
}

impl fmt::Display for DrawMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DrawMode::WholeVector => "whole",
            DrawMode::PerComponent => "per_component",
        })
    }
}

impl FromStr for DrawMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whole" | "whole_vector" => Ok(DrawMode::WholeVector),
            "per_component" => Ok(DrawMode::PerComponent),
            _ => Err(format!("unknown draw mode `{s}` (expected whole or per_component)")),
        }
    }
}

/// A frozen surrogate draw: which time index supplies each component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Draw {
    Index(usize),
    Components(Vec<usize>),
}

/// The empirical observation distribution of one system.
#[derive(Debug, Clone, Copy)]
pub struct SurrogatePool<'a> {
    obs: &'a [Vec<f64>],
    mode: DrawMode,
}

impl<'a> SurrogatePool<'a> {
    pub fn new(obs: &'a [Vec<f64>], mode: DrawMode) -> Result<Self, SurrogateError> {
        if obs.is_empty() {
            return Err(SurrogateError::EmptyPool);
        }
        Ok(Self { obs, mode })
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn mode(&self) -> DrawMode {
        self.mode
    }

    pub fn naive_draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Draw {
        let n = self.obs.len();
        match self.mode {
            DrawMode::WholeVector => Draw::Index(rng.random_range(0..n)),
            DrawMode::PerComponent => {
                Draw::Components((0..self.obs[0].len()).map(|_| rng.random_range(0..n)).collect())
            }
        }
    }

    pub fn materialize(&self, draw: &Draw) -> Vec<f64> {
        match draw {
            Draw::Index(i) => self.obs[*i].clone(),
            Draw::Components(idx) => idx.iter().enumerate().map(|(c, &i)| self.obs[i][c]).collect(),
        }
    }

    /// A time-random observation under `zeta = 1`.
    pub fn naive_shuffle<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.naive_draw(rng);
        self.materialize(&d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZetaConfig {
    pub n_bins: usize,
    pub clip_max: f64,
    /// Pseudo-count added to every bin of both histograms.
    pub smoothing: f64,
    /// Candidates drawn per resample call (capped by the pool size).
    pub candidates: usize,
}

impl Default for ZetaConfig {
    fn default() -> Self {
        Self {
            n_bins: 50,
            clip_max: 20.0,
            smoothing: 1.0,
            candidates: 64,
        }
    }
}

impl ZetaConfig {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        if self.n_bins == 0 || self.candidates == 0 {
            return Err(SurrogateError::Invalid("n_bins and candidates must be >= 1".into()));
        }
        if !(self.clip_max > 0.0) || !(self.smoothing > 0.0) {
            return Err(SurrogateError::Invalid("clip_max and smoothing must be positive".into()));
        }
        Ok(())
    }
}

/// Piecewise-constant density ratio over the error axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampleFn {
    edges: Vec<f64>,
    ratios: Vec<f64>,
    clip_max: f64,
    /// Set when the estimate fell back to identity on degenerate input.
    pub degenerate: bool,
}

impl ResampleFn {
    /// `zeta = 1` everywhere.
    pub fn identity() -> Self {
        Self {
            edges: Vec::new(),
            ratios: Vec::new(),
            clip_max: f64::INFINITY,
            degenerate: false,
        }
    }

    pub fn from_bins(edges: Vec<f64>, ratios: Vec<f64>, clip_max: f64) -> Result<Self, SurrogateError> {
        if edges.len() != ratios.len() + 1 || ratios.is_empty() {
            return Err(SurrogateError::Invalid("need one more edge than ratios".into()));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(SurrogateError::Invalid("bin edges must be strictly increasing".into()));
        }
        if !(clip_max > 0.0) {
            return Err(SurrogateError::Invalid("clip_max must be positive".into()));
        }
        let ratios = ratios.into_iter().map(|r| r.clamp(0.0, clip_max)).collect();
        Ok(Self {
            edges,
            ratios,
            clip_max,
            degenerate: false,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.ratios.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    pub fn clip_max(&self) -> f64 {
        self.clip_max
    }

    /// Bin index of `x`, clamped to the edge bins.
    pub fn bin(&self, x: f64) -> Option<usize> {
        let n = self.ratios.len();
        if n == 0 {
            return None;
        }
        let i = self.edges.partition_point(|&e| e <= x);
        Some(i.saturating_sub(1).min(n - 1))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.bin(x) {
            None => 1.0,
            Some(i) => self.ratios[i],
        }
    }

    /// `bin_left,bin_right,ratio` rows.
    pub fn to_csv_rows(&self) -> Vec<(f64, f64, f64)> {
        self.ratios
            .iter()
            .enumerate()
            .map(|(i, &r)| (self.edges[i], self.edges[i + 1], r))
            .collect()
    }
}

/// Histogram density ratio between real errors `e` and naive-surrogate
/// errors `e_star`, on shared bins spanning both ranges.
pub fn estimate_zeta(e: &[f64], e_star: &[f64], cfg: &ZetaConfig) -> Result<ResampleFn, SurrogateError> {
    if e.is_empty() || e_star.is_empty() {
        return Err(SurrogateError::EmptySeries);
    }
    cfg.validate()?;
    let (lo, hi) = e
        .iter()
        .chain(e_star)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi.is_finite()) || hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs())) {
        let mut id = ResampleFn::identity();
        id.degenerate = true;
        return Ok(id);
    }
    let nb = cfg.n_bins;
    let mut edges: Vec<f64> = (0..=nb).map(|i| lo + (hi - lo) * i as f64 / nb as f64).collect();
    edges[nb] = hi;
    let width = (hi - lo) / nb as f64;
    let bin = |v: f64| (((v - lo) / width) as usize).min(nb - 1);
    let mut h_e = vec![0.0; nb];
    let mut h_s = vec![0.0; nb];
    for &v in e {
        h_e[bin(v)] += 1.0;
    }
    for &v in e_star {
        h_s[bin(v)] += 1.0;
    }
    let eps = cfg.smoothing;
    let tot_e = e.len() as f64 + eps * nb as f64;
    let tot_s = e_star.len() as f64 + eps * nb as f64;
    let ratios = h_e
        .iter()
        .zip(&h_s)
        .map(|(a, b)| ((a + eps) / tot_e) / ((b + eps) / tot_s))
        .collect();
    ResampleFn::from_bins(edges, ratios, cfg.clip_max)
}

/// Outcome of one constrained draw.
#[derive(Debug, Clone)]
pub struct Resampled {
    pub draw: Draw,
    /// Surrogate error of the selected candidate.
    pub error: f64,
    /// Every candidate's surrogate error (naive draws, `zeta = 1`).
    pub candidate_errors: Vec<f64>,
    /// All candidate weights were zero; the choice was uniform.
    pub starved: bool,
}

/// Draws candidates by naive shuffling, scores each with `score`
/// (the surrogate error), and selects one with probability proportional to
/// `zeta(score)`.
pub fn resample<R, F>(
    pool: &SurrogatePool<'_>,
    n_candidates: usize,
    mut score: F,
    zeta: &ResampleFn,
    rng: &mut R,
) -> Result<Resampled, SurrogateError>
where
    R: Rng + ?Sized,
    F: FnMut(&Draw) -> Result<f64, SurrogateError>,
{
    let m = n_candidates.min(pool.len()).max(1);
    let mut draws = Vec::with_capacity(m);
    let mut errors = Vec::with_capacity(m);
    for _ in 0..m {
        let d = pool.naive_draw(rng);
        errors.push(score(&d)?);
        draws.push(d);
    }
    let weights: Vec<f64> = errors.iter().map(|&e| zeta.eval(e)).collect();
    let total: f64 = weights.iter().sum();
    let (pick, starved) = if total > 0.0 && total.is_finite() {
        let mut u = rng.random::<f64>() * total;
        let mut pick = m - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        // guard against the float tail landing on a zero-weight candidate
        if weights[pick] == 0.0 {
            pick = weights.iter().rposition(|&w| w > 0.0).unwrap_or(pick);
        }
        (pick, false)
    } else {
        (rng.random_range(0..m), true)
    };
    Ok(Resampled {
        draw: draws.swap_remove(pick),
        error: errors[pick],
        candidate_errors: errors,
        starved,
    })
}

/// Constrained surrogate observation for one window, scoring candidates with
/// the estimator's surrogate error. `history_obs` are the true observations
/// `z_{k-T..k-1}` (standardized).
pub fn resample_observation<R: Rng + ?Sized>(
    est: &Estimator,
    omega: &[f64],
    pool: &SurrogatePool<'_>,
    history_obs: &[Vec<f64>],
    zeta: &ResampleFn,
    n_candidates: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Resampled), SurrogateError> {
    let history = est.combination_series(omega, history_obs)?;
    let c_hat = est.predict(omega, &history)?;
    let r = resample(
        pool,
        n_candidates,
        |d| Ok(est.combine(omega, &pool.materialize(d))? - c_hat),
        zeta,
        rng,
    )?;
    Ok((pool.materialize(&r.draw), r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceKind {
    #[default]
    Wasserstein1,
    KolmogorovSmirnov,
}

impl fmt::Display for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceKind::Wasserstein1 => "w1",
            DistanceKind::KolmogorovSmirnov => "ks",
        })
    }
}

impl FromStr for DistanceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "w1" => Ok(DistanceKind::Wasserstein1),
            "ks" => Ok(DistanceKind::KolmogorovSmirnov),
            _ => Err(format!("unknown distance `{s}` (expected w1 or ks)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceReport {
    pub statistic: f64,
    pub kind: DistanceKind,
}

/// Distance between the empirical distributions of `a` and `b`.
///
/// Both statistics walk the merged sorted samples and compare the two
/// empirical CDFs: W1 integrates `|F_a - F_b|`, KS takes its maximum.
pub fn distribution_distance(a: &[f64], b: &[f64], kind: DistanceKind) -> Result<DistanceReport, SurrogateError> {
    if a.is_empty() || b.is_empty() {
        return Err(SurrogateError::EmptySeries);
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut w1 = 0.0;
    let mut ks: f64 = 0.0;
    let mut prev = sa[0].min(sb[0]);
    while i < sa.len() || j < sb.len() {
        let x = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let gap = (i as f64 / na - j as f64 / nb).abs();
        w1 += gap * (x - prev);
        while i < sa.len() && sa[i] == x {
            i += 1;
        }
        while j < sb.len() && sb[j] == x {
            j += 1;
        }
        ks = ks.max((i as f64 / na - j as f64 / nb).abs());
        prev = x;
    }
    Ok(DistanceReport {
        statistic: match kind {
            DistanceKind::Wasserstein1 => w1,
            DistanceKind::KolmogorovSmirnov => ks,
        },
        kind,
    })
}
