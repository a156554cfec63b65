//! Small feed-forward network engine: forward pass, reverse-mode gradients
//! and SGD with momentum.
//!
//! Parameters live in a flat vector. Layer `l` occupies a contiguous block
//! holding its weight matrix in row-major `[out][in]` order followed by its
//! bias vector. Hidden layers use Leaky-ReLU; the output layer applies the
//! configured head activation.

use std::fmt;
use std::ops::{Deref, DerefMut};
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("gradient tape state: {0}")]
    State(&'static str),
    #[error("parameter file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Sigmoid,
    Linear,
}

impl fmt::Display for OutputActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputActivation::Sigmoid => "sigmoid",
            OutputActivation::Linear => "linear",
        })
    }
}

impl FromStr for OutputActivation {
    type Err = NetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sigmoid" => Ok(OutputActivation::Sigmoid),
            "linear" => Ok(OutputActivation::Linear),
            other => Err(NetError::Format(format!("unknown head activation `{other}`"))),
        }
    }
}

pub const DEFAULT_HIDDEN: [usize; 2] = [32, 16];
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub output_activation: OutputActivation,
    pub leaky_slope: f64,
}

/// Position of one scalar parameter inside the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamIndex {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, row: usize },
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        output_dim: usize,
        output_activation: OutputActivation,
        leaky_slope: f64,
    ) -> Result<Self, NetError> {
        let spec = Self {
            input_dim,
            hidden_dims,
            output_dim,
            output_activation,
            leaky_slope,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.hidden_dims.is_empty() {
            return Err(NetError::InvalidSpec("hidden_dims must be non-empty".into()));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(NetError::InvalidSpec("all layer widths must be >= 1".into()));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(NetError::InvalidSpec(format!(
                "leaky_slope must lie in (0,1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for every affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::new();
        let mut acc = 0;
        for (i, o) in self.layer_shapes() {
            offs.push(acc);
            acc += i * o + o;
        }
        offs
    }

    pub fn flat_index(&self, idx: ParamIndex) -> Option<usize> {
        let shapes = self.layer_shapes();
        let offs = self.layer_offsets();
        match idx {
            ParamIndex::Weight { layer, row, col } => {
                let &(fan_in, fan_out) = shapes.get(layer)?;
                (row < fan_out && col < fan_in).then(|| offs[layer] + row * fan_in + col)
            }
            ParamIndex::Bias { layer, row } => {
                let &(fan_in, fan_out) = shapes.get(layer)?;
                (row < fan_out).then(|| offs[layer] + fan_in * fan_out + row)
            }
        }
    }

    pub fn locate(&self, flat: usize) -> Option<ParamIndex> {
        let mut base = 0;
        for (layer, (fan_in, fan_out)) in self.layer_shapes().into_iter().enumerate() {
            let size = fan_in * fan_out + fan_out;
            if flat < base + size {
                let local = flat - base;
                return Some(if local < fan_in * fan_out {
                    ParamIndex::Weight {
                        layer,
                        row: local / fan_in,
                        col: local % fan_in,
                    }
                } else {
                    ParamIndex::Bias {
                        layer,
                        row: local - fan_in * fan_out,
                    }
                });
            }
            base += size;
        }
        None
    }

    /// One-line architecture descriptor used in parameter files.
    pub fn descriptor(&self) -> String {
        let hidden: Vec<String> = self.hidden_dims.iter().map(|h| h.to_string()).collect();
        format!(
            "mlp in={} hidden={} out={} head={} slope={:?} count={}",
            self.input_dim,
            hidden.join(","),
            self.output_dim,
            self.output_activation,
            self.leaky_slope,
            self.param_count()
        )
    }

    pub fn parse_descriptor(line: &str) -> Result<Self, NetError> {
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some("mlp") {
            return Err(NetError::Format(format!("expected `mlp` descriptor, got `{line}`")));
        }
        let (mut input, mut hidden, mut output, mut head, mut slope, mut count) =
            (None, None, None, None, None, None);
        let bad = |k: &str, v: &str| NetError::Format(format!("bad value `{v}` for `{k}`"));
        for tok in tokens {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| NetError::Format(format!("malformed token `{tok}`")))?;
            match k {
                "in" => input = Some(v.parse::<usize>().map_err(|_| bad(k, v))?),
                "hidden" => {
                    hidden = Some(
                        v.split(',')
                            .map(|h| h.parse::<usize>().map_err(|_| bad(k, v)))
                            .collect::<Result<Vec<_>, _>>()?,
                    )
                }
                "out" => output = Some(v.parse::<usize>().map_err(|_| bad(k, v))?),
                "head" => head = Some(v.parse::<OutputActivation>()?),
                "slope" => slope = Some(v.parse::<f64>().map_err(|_| bad(k, v))?),
                "count" => count = Some(v.parse::<usize>().map_err(|_| bad(k, v))?),
                other => return Err(NetError::Format(format!("unknown descriptor key `{other}`"))),
            }
        }
        let missing = |k: &str| NetError::Format(format!("descriptor missing `{k}`"));
        let spec = MlpSpec::new(
            input.ok_or_else(|| missing("in"))?,
            hidden.ok_or_else(|| missing("hidden"))?,
            output.ok_or_else(|| missing("out"))?,
            head.ok_or_else(|| missing("head"))?,
            slope.ok_or_else(|| missing("slope"))?,
        )?;
        if let Some(c) = count {
            if c != spec.param_count() {
                return Err(NetError::Format(format!(
                    "descriptor count {c} disagrees with architecture ({})",
                    spec.param_count()
                )));
            }
        }
        Ok(spec)
    }
}

/// Flat parameter storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Initialization scheme for network weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitScheme {
    /// Every entry i.i.d. N(0, 1).
    #[default]
    StandardNormal,
    /// Weights N(0, 1/fan_in), biases zero.
    Scaled,
}

/// Draws `len` i.i.d. standard normals from the seeded init stream.
pub fn standard_normal_vector(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::substream(seed, &[rng::stage::INIT]);
    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect()
}

pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamVector {
    init_params_with(spec, seed, InitScheme::StandardNormal)
}

pub fn init_params_with(spec: &MlpSpec, seed: u64, scheme: InitScheme) -> ParamVector {
    let mut values = standard_normal_vector(spec.param_count(), seed);
    if scheme == InitScheme::Scaled {
        apply_scaled_init(spec, &mut values);
    }
    ParamVector(values)
}

/// Rescales a block of standard normals into the `Scaled` scheme in place.
pub(crate) fn apply_scaled_init(spec: &MlpSpec, values: &mut [f64]) {
    let mut off = 0;
    for (fan_in, fan_out) in spec.layer_shapes() {
        let scale = 1.0 / (fan_in as f64).sqrt();
        for v in &mut values[off..off + fan_in * fan_out] {
            *v *= scale;
        }
        off += fan_in * fan_out;
        for v in &mut values[off..off + fan_out] {
            *v = 0.0;
        }
        off += fan_out;
    }
}

/// Activations recorded by a forward pass, consumed by `Mlp::backward`.
#[derive(Debug, Clone, Default)]
pub struct GradientTape {
    /// Input to each affine layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Activated output of each layer.
    outputs: Vec<Vec<f64>>,
}

impl GradientTape {
    pub fn is_recorded(&self) -> bool {
        !self.inputs.is_empty()
    }

    pub fn output(&self) -> Option<&[f64]> {
        self.outputs.last().map(|v| v.as_slice())
    }
}

/// Largest double below one; keeps saturated sigmoid outputs inside (0,1).
const SIGMOID_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

#[inline]
fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, SIGMOID_MAX)
}

/// An MLP bound to a spec, with cached layer offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    count: usize,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self, NetError> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        let offsets = spec.layer_offsets();
        let count = spec.param_count();
        Ok(Self {
            spec,
            shapes,
            offsets,
            count,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.count
    }

    fn check(&self, params: &[f64], x: &[f64]) -> Result<(), NetError> {
        if params.len() != self.count {
            return Err(NetError::Dimension {
                expected: self.count,
                got: params.len(),
            });
        }
        if x.len() != self.spec.input_dim {
            return Err(NetError::Dimension {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    #[inline]
    fn layer(&self, params: &[f64], l: usize, x: &[f64], out: &mut Vec<f64>) {
        let (fan_in, fan_out) = self.shapes[l];
        let w = &params[self.offsets[l]..self.offsets[l] + fan_in * fan_out];
        let b = &params[self.offsets[l] + fan_in * fan_out..self.offsets[l] + fan_in * fan_out + fan_out];
        let last = l + 1 == self.shapes.len();
        out.clear();
        for r in 0..fan_out {
            let row = &w[r * fan_in..(r + 1) * fan_in];
            let mut acc = b[r];
            for (wi, xi) in row.iter().zip(x) {
                acc += wi * xi;
            }
            let a = if last {
                match self.spec.output_activation {
                    OutputActivation::Sigmoid => sigmoid(acc),
                    OutputActivation::Linear => acc,
                }
            } else if acc > 0.0 {
                acc
            } else {
                self.spec.leaky_slope * acc
            };
            out.push(a);
        }
    }

    /// Forward pass without recording.
    pub fn eval(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check(params, x)?;
        Ok(self.eval_unchecked(params, x))
    }

    pub(crate) fn eval_unchecked(&self, params: &[f64], x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for l in 0..self.shapes.len() {
            self.layer(params, l, &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward(&self, params: &[f64], x: &[f64]) -> Result<(Vec<f64>, GradientTape), NetError> {
        self.check(params, x)?;
        Ok(self.forward_unchecked(params, x))
    }

    pub(crate) fn forward_unchecked(&self, params: &[f64], x: &[f64]) -> (Vec<f64>, GradientTape) {
        let n = self.shapes.len();
        let mut tape = GradientTape {
            inputs: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
        };
        let mut cur = x.to_vec();
        for l in 0..n {
            let mut next = Vec::with_capacity(self.shapes[l].1);
            self.layer(params, l, &cur, &mut next);
            tape.inputs.push(cur);
            cur = next.clone();
            tape.outputs.push(next);
        }
        (cur, tape)
    }

    /// Reverse pass: accumulates `d(upstream . y)/d(params)` into `grad` and
    /// returns `d(upstream . y)/dx`.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &GradientTape,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>, NetError> {
        if !tape.is_recorded() {
            return Err(NetError::State("backward called before forward"));
        }
        if tape.inputs.len() != self.shapes.len() || tape.inputs[0].len() != self.spec.input_dim {
            return Err(NetError::State("tape was recorded by a different network"));
        }
        if upstream.len() != self.spec.output_dim {
            return Err(NetError::Dimension {
                expected: self.spec.output_dim,
                got: upstream.len(),
            });
        }
        if grad.len() != self.count || params.len() != self.count {
            return Err(NetError::Dimension {
                expected: self.count,
                got: grad.len().min(params.len()),
            });
        }
        Ok(self.backward_unchecked(params, tape, upstream, grad))
    }

    pub(crate) fn backward_unchecked(
        &self,
        params: &[f64],
        tape: &GradientTape,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let n = self.shapes.len();
        let mut delta: Vec<f64> = upstream.to_vec();
        for l in (0..n).rev() {
            let (fan_in, fan_out) = self.shapes[l];
            let out = &tape.outputs[l];
            // d(activation)/d(pre-activation), expressed through the stored output
            if l + 1 == n {
                if self.spec.output_activation == OutputActivation::Sigmoid {
                    for (d, &y) in delta.iter_mut().zip(out) {
                        *d *= y * (1.0 - y);
                    }
                }
            } else {
                for (d, &y) in delta.iter_mut().zip(out) {
                    if y <= 0.0 {
                        *d *= self.spec.leaky_slope;
                    }
                }
            }
            let x = &tape.inputs[l];
            let off = self.offsets[l];
            let w = &params[off..off + fan_in * fan_out];
            let mut dx = vec![0.0; fan_in];
            {
                let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for r in 0..fan_out {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    gb[r] += d;
                    let grow = &mut gw[r * fan_in..(r + 1) * fan_in];
                    let wrow = &w[r * fan_in..(r + 1) * fan_in];
                    for c in 0..fan_in {
                        grow[c] += d * x[c];
                        dx[c] += d * wrow[c];
                    }
                }
            }
            delta = dx;
        }
        delta
    }
}

/// Stochastic gradient descent with classical (or Nesterov) momentum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            nesterov: false,
        }
    }

    /// `v <- momentum * v + grad; params <- params - lr * v`.
    pub fn step(&self, params: &mut [f64], grad: &[f64], velocity: &mut [f64]) -> Result<(), NetError> {
        if grad.len() != params.len() || velocity.len() != params.len() {
            return Err(NetError::Dimension {
                expected: params.len(),
                got: if grad.len() != params.len() { grad.len() } else { velocity.len() },
            });
        }
        for ((p, &g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
            *v = self.momentum * *v + g;
            let d = if self.nesterov { g + self.momentum * *v } else { *v };
            *p -= self.lr * d;
        }
        Ok(())
    }
}

pub fn sgd_step(
    params: &mut ParamVector,
    grad: &[f64],
    velocity: &mut [f64],
    lr: f64,
    momentum: f64,
) -> Result<(), NetError> {
    Sgd::new(lr, momentum).step(params, grad, velocity)
}

/// Formats a float with 17 significant digits; parses back bit-exactly.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes one network section: descriptor line, then one value per line.
pub fn write_params(spec: &MlpSpec, params: &[f64]) -> String {
    let mut s = spec.descriptor();
    s.push('\n');
    for v in params {
        s.push_str(&format_f64(*v));
        s.push('\n');
    }
    s
}

pub fn read_params(text: &str) -> Result<(MlpSpec, ParamVector), NetError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| NetError::Format("empty parameter file".into()))?;
    let spec = MlpSpec::parse_descriptor(header.trim())?;
    let values = lines
        .map(|l| {
            l.trim()
                .parse::<f64>()
                .map_err(|_| NetError::Format(format!("bad parameter value `{l}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if values.len() != spec.param_count() {
        return Err(NetError::Format(format!(
            "expected {} values, found {}",
            spec.param_count(),
            values.len()
        )));
    }
    Ok((spec, ParamVector(values)))
}
