//! Small deterministic MLP policies over continuous states, and full-batch
//! behavioral-cloning training.
//!
//! The forward and backward passes are written once, generically over a
//! [`Scalar`] that is either plain `f64` or a forward-mode dual number; the
//! unroll engine runs the same backward pass on duals to get the exact
//! Hessian-vector products it needs. Hidden layers use one activation
//! (`tanh` or `relu`); the output layer is linear. With the residual flag,
//! equal-width interior hidden layers become skip blocks built from the same
//! linear-plus-activation primitive.

use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use thiserror::Error;

use crate::rng::seeded_rng;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite {what} at step {step}")]
    NonFinite { what: &'static str, step: usize },
    #[error("empty dataset")]
    EmptyData,
    #[error("parse error: {0}")]
    Parse(String),
}

/// Closed set of scalar operations needed by the network passes.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    /// Primal part.
    fn value(self) -> f64;
    fn tanh(self) -> Self;
    fn relu(self) -> Self;
}

impl Scalar for f64 {
    const ZERO: f64 = 0.0;
    const ONE: f64 = 1.0;

    fn from_f64(v: f64) -> f64 {
        v
    }

    fn value(self) -> f64 {
        self
    }

    fn tanh(self) -> f64 {
        f64::tanh(self)
    }

    fn relu(self) -> f64 {
        self.max(0.0)
    }
}

/// First-order dual number `re + eps * d`; arithmetic carries the tangent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl Scalar for Dual {
    const ZERO: Dual = Dual { re: 0.0, eps: 0.0 };
    const ONE: Dual = Dual { re: 1.0, eps: 0.0 };

    fn from_f64(v: f64) -> Dual {
        Dual::new(v, 0.0)
    }

    fn value(self) -> f64 {
        self.re
    }

    fn tanh(self) -> Dual {
        let t = self.re.tanh();
        Dual::new(t, (1.0 - t * t) * self.eps)
    }

    fn relu(self) -> Dual {
        if self.re > 0.0 {
            self
        } else {
            Dual::ZERO
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply<S: Scalar>(self, z: S) -> S {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.relu(),
        }
    }

    /// Derivative expressed through the cached post-activation value.
    fn grad_from_output<S: Scalar>(self, a: S) -> S {
        match self {
            Activation::Tanh => S::ONE - a * a,
            Activation::Relu => {
                if a.value() > 0.0 {
                    S::ONE
                } else {
                    S::ZERO
                }
            }
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self, PolicyError> {
        match tag {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(PolicyError::Parse(format!("unknown activation {other:?}"))),
        }
    }
}

/// Network shape: `layer_dims = [input, hidden.., output]`, hidden
/// activation, and whether interior equal-width hidden layers carry skips.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArch {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
    pub residual: bool,
}

impl MlpArch {
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Self {
        Self { layer_dims, activation, residual: false }
    }

    pub fn with_residual(mut self) -> Self {
        self.residual = true;
        self
    }

    pub fn n_weight_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.layer_dims[..=layer]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Skip connection around weight layer `l`?
    fn has_skip(&self, layer: usize) -> bool {
        self.residual
            && layer > 0
            && layer + 1 < self.n_weight_layers()
            && self.layer_dims[layer] == self.layer_dims[layer + 1]
    }
}

/// Deterministic MLP policy: architecture plus a flat parameter vector laid
/// out as `[W0 (row-major out x in), b0, W1, b1, ..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    arch: MlpArch,
    params: Vec<f64>,
}

impl MlpPolicy {
    pub fn new(arch: MlpArch, params: Vec<f64>) -> Result<Self, PolicyError> {
        if params.len() != arch.param_count() {
            return Err(PolicyError::Dimension(format!(
                "{} params for an architecture needing {}",
                params.len(),
                arch.param_count()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(PolicyError::NonFinite { what: "parameter", step: 0 });
        }
        Ok(Self { arch, params })
    }

    /// Seeded initialization, uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`
    /// per layer for both weights and biases.
    pub fn init(arch: &MlpArch, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut params = Vec::with_capacity(arch.param_count());
        for w in arch.layer_dims.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(rng.gen_range(-bound..=bound));
            }
        }
        Self { arch: arch.clone(), params }
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Deterministic action for one state.
    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>, PolicyError> {
        if state.len() != self.arch.input_dim() {
            return Err(PolicyError::Dimension(format!(
                "state dim {} vs input dim {}",
                state.len(),
                self.arch.input_dim()
            )));
        }
        let cache = forward_cached(&self.arch, &self.params, state);
        Ok(cache.layers.into_iter().last().unwrap())
    }

    /// Serialize to the `mlp-policy v1` checkpoint format: header, layer
    /// dims, activation tag, then row-major weight/bias lines per layer.
    pub fn to_text(&self) -> String {
        let mut out = String::from("mlp-policy v1\n");
        let dims: Vec<String> = self.arch.layer_dims.iter().map(|d| d.to_string()).collect();
        out.push_str(&dims.join(" "));
        out.push('\n');
        out.push_str(self.arch.activation.tag());
        if self.arch.residual {
            out.push_str(" residual");
        }
        out.push('\n');
        for layer in 0..self.arch.n_weight_layers() {
            let (w, b) = layer_slices(&self.arch, &self.params, layer);
            push_floats(&mut out, w);
            push_floats(&mut out, b);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PolicyError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| PolicyError::Parse("empty input".into()))?;
        if header.trim() != "mlp-policy v1" {
            return Err(PolicyError::Parse(format!("bad header {header:?}")));
        }
        let dims: Vec<usize> = lines
            .next()
            .ok_or_else(|| PolicyError::Parse("missing dims".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|e| PolicyError::Parse(format!("dims: {e}"))))
            .collect::<Result<_, _>>()?;
        if dims.len() < 2 {
            return Err(PolicyError::Parse("need at least input and output dims".into()));
        }
        let tag_line =
            lines.next().ok_or_else(|| PolicyError::Parse("missing activation".into()))?;
        let mut tags = tag_line.split_whitespace();
        let activation = Activation::from_tag(tags.next().unwrap_or(""))?;
        let residual = match tags.next() {
            None => false,
            Some("residual") => true,
            Some(other) => return Err(PolicyError::Parse(format!("unknown tag {other:?}"))),
        };
        let mut arch = MlpArch::new(dims, activation);
        arch.residual = residual;
        let mut params = Vec::with_capacity(arch.param_count());
        for line in lines {
            for tok in line.split_whitespace() {
                params.push(
                    tok.parse::<f64>().map_err(|e| PolicyError::Parse(format!("{tok:?}: {e}")))?,
                );
            }
        }
        Self::new(arch, params)
    }
}

/// Anything that maps continuous states to continuous actions.
pub trait ContinuousPolicy {
    fn act(&self, state: &[f64]) -> Vec<f64>;
}

impl ContinuousPolicy for MlpPolicy {
    fn act(&self, state: &[f64]) -> Vec<f64> {
        self.forward(state).expect("state dimension checked by caller")
    }
}

fn push_floats(out: &mut String, vals: &[f64]) {
    for (i, v) in vals.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{v}"));
    }
    out.push('\n');
}

fn layer_slices<'p, S>(arch: &MlpArch, params: &'p [S], layer: usize) -> (&'p [S], &'p [S]) {
    let off = arch.layer_offset(layer);
    let (d_in, d_out) = (arch.layer_dims[layer], arch.layer_dims[layer + 1]);
    (&params[off..off + d_in * d_out], &params[off + d_in * d_out..off + d_in * d_out + d_out])
}

pub(crate) struct ForwardCache<S> {
    /// Post-activation values per layer, `layers[0]` being the input.
    pub layers: Vec<Vec<S>>,
}

pub(crate) fn forward_cached<S: Scalar>(
    arch: &MlpArch,
    params: &[S],
    input: &[S],
) -> ForwardCache<S> {
    let n_layers = arch.n_weight_layers();
    let mut layers = Vec::with_capacity(n_layers + 1);
    layers.push(input.to_vec());
    for layer in 0..n_layers {
        let (w, b) = layer_slices(arch, params, layer);
        let d_in = arch.layer_dims[layer];
        let d_out = arch.layer_dims[layer + 1];
        let x = layers.last().unwrap();
        let mut next = Vec::with_capacity(d_out);
        let last = layer == n_layers - 1;
        let skip = arch.has_skip(layer);
        for o in 0..d_out {
            let mut z = b[o];
            let row = &w[o * d_in..(o + 1) * d_in];
            for (wv, xv) in row.iter().zip(x) {
                z = z + *wv * *xv;
            }
            let mut y = if last { z } else { arch.activation.apply(z) };
            if skip {
                y = y + x[o];
            }
            next.push(y);
        }
        layers.push(next);
    }
    ForwardCache { layers }
}

/// Gradients of a batch objective with respect to parameters, input states,
/// and target actions, plus the objective value itself.
pub(crate) struct BatchGrads<S> {
    pub loss: S,
    pub grad_params: Vec<S>,
    pub grad_states: Vec<Vec<S>>,
    pub grad_actions: Vec<Vec<S>>,
}

/// Weighted squared-error objective `(1/N) sum_i w_i ||f(s_i) - a_i||^2`
/// with its full gradient. Behavioral cloning uses unit weights.
pub(crate) fn weighted_sq_loss_grads<S: Scalar>(
    arch: &MlpArch,
    params: &[S],
    states: &[Vec<S>],
    actions: &[Vec<S>],
    weights: Option<&[S]>,
) -> BatchGrads<S> {
    let n = states.len();
    let inv_n = S::from_f64(1.0 / n as f64);
    let two = S::from_f64(2.0);
    let mut loss = S::ZERO;
    let mut grad_params = vec![S::ZERO; params.len()];
    let mut grad_states = Vec::with_capacity(n);
    let mut grad_actions = Vec::with_capacity(n);
    for i in 0..n {
        let w_i = weights.map_or(S::ONE, |w| w[i]);
        let cache = forward_cached(arch, params, &states[i]);
        let out = cache.layers.last().unwrap();
        let mut out_grad = Vec::with_capacity(out.len());
        let mut act_grad = Vec::with_capacity(out.len());
        for (&y, &a) in out.iter().zip(&actions[i]) {
            let e = y - a;
            loss = loss + w_i * e * e * inv_n;
            let g = two * w_i * e * inv_n;
            out_grad.push(g);
            act_grad.push(-g);
        }
        let input_grad = backward_into(arch, params, &cache, &out_grad, &mut grad_params);
        grad_states.push(input_grad);
        grad_actions.push(act_grad);
    }
    BatchGrads { loss, grad_params, grad_states, grad_actions }
}

/// Backpropagate `out_grad` through the cached forward pass, accumulating
/// parameter gradients into `grad_params` and returning the input gradient.
pub(crate) fn backward_into<S: Scalar>(
    arch: &MlpArch,
    params: &[S],
    cache: &ForwardCache<S>,
    out_grad: &[S],
    grad_params: &mut [S],
) -> Vec<S> {
    let n_layers = arch.n_weight_layers();
    let mut delta = out_grad.to_vec();
    for layer in (0..n_layers).rev() {
        let d_in = arch.layer_dims[layer];
        let d_out = arch.layer_dims[layer + 1];
        let off = arch.layer_offset(layer);
        let x = &cache.layers[layer];
        let y = &cache.layers[layer + 1];
        let last = layer == n_layers - 1;
        let skip = arch.has_skip(layer);
        // gradient with respect to the pre-activation z
        let mut dz = Vec::with_capacity(d_out);
        for o in 0..d_out {
            let d = delta[o];
            if last {
                dz.push(d);
            } else {
                // post-activation value with the skip contribution removed
                let a = if skip { y[o] - x[o] } else { y[o] };
                dz.push(d * arch.activation.grad_from_output(a));
            }
        }
        let w_start = off;
        let b_start = off + d_in * d_out;
        let mut dx = vec![S::ZERO; d_in];
        for o in 0..d_out {
            let g = dz[o];
            for j in 0..d_in {
                grad_params[w_start + o * d_in + j] =
                    grad_params[w_start + o * d_in + j] + g * x[j];
                dx[j] = dx[j] + params[w_start + o * d_in + j] * g;
            }
            grad_params[b_start + o] = grad_params[b_start + o] + g;
        }
        if skip {
            for j in 0..d_in {
                dx[j] = dx[j] + delta[j];
            }
        }
        delta = dx;
    }
    delta
}

/// Full-batch SGD-with-momentum settings: `v <- momentum * v + g`,
/// `theta <- theta - learning_rate * v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
}

impl SgdConfig {
    pub fn plain(learning_rate: f64) -> Self {
        Self { learning_rate, momentum: 0.0 }
    }
}

/// Incremental full-batch cloning trainer; keeps the momentum buffer across
/// calls so training can be interleaved with evaluation.
pub struct BcTrainer {
    arch: MlpArch,
    params: Vec<f64>,
    velocity: Vec<f64>,
    sgd: SgdConfig,
}

impl BcTrainer {
    pub fn new(policy: &MlpPolicy, sgd: SgdConfig) -> Self {
        Self {
            arch: policy.arch.clone(),
            params: policy.params.clone(),
            velocity: vec![0.0; policy.params.len()],
            sgd,
        }
    }

    /// One gradient step; returns the loss before the update.
    pub fn step(&mut self, states: &[Vec<f64>], actions: &[Vec<f64>]) -> Result<f64, PolicyError> {
        if states.is_empty() {
            return Err(PolicyError::EmptyData);
        }
        let grads =
            weighted_sq_loss_grads::<f64>(&self.arch, &self.params, states, actions, None);
        if !grads.loss.is_finite() {
            return Err(PolicyError::NonFinite { what: "loss", step: 0 });
        }
        for ((p, v), g) in self.params.iter_mut().zip(&mut self.velocity).zip(&grads.grad_params)
        {
            *v = self.sgd.momentum * *v + g;
            *p -= self.sgd.learning_rate * *v;
        }
        Ok(grads.loss)
    }

    pub fn policy(&self) -> MlpPolicy {
        MlpPolicy { arch: self.arch.clone(), params: self.params.clone() }
    }
}

/// Mean squared behavioral-cloning loss of `policy` on `(states, actions)`
/// pairs: squared Euclidean norm summed over action dimensions, averaged
/// over pairs.
pub fn bc_loss(
    policy: &MlpPolicy,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
) -> Result<f64, PolicyError> {
    if states.is_empty() {
        return Err(PolicyError::EmptyData);
    }
    if states.len() != actions.len() {
        return Err(PolicyError::Dimension("states/actions length".into()));
    }
    let mut total = 0.0;
    for (s, a) in states.iter().zip(actions) {
        let out = policy.forward(s)?;
        if out.len() != a.len() {
            return Err(PolicyError::Dimension("action dim".into()));
        }
        total += out.iter().zip(a).map(|(&y, &t)| (y - t) * (y - t)).sum::<f64>();
    }
    Ok(total / states.len() as f64)
}

/// Train `policy` on the full batch for `steps` gradient steps with momentum.
/// Returns the trained policy and the loss curve (loss before each step plus
/// the final loss, `steps + 1` entries).
pub fn train_bc(
    policy: &MlpPolicy,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    steps: usize,
    sgd: SgdConfig,
) -> Result<(MlpPolicy, Vec<f64>), PolicyError> {
    if states.is_empty() {
        return Err(PolicyError::EmptyData);
    }
    let arch = policy.arch.clone();
    let mut params = policy.params.clone();
    let mut velocity = vec![0.0; params.len()];
    let mut curve = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        let grads = weighted_sq_loss_grads::<f64>(&arch, &params, states, actions, None);
        if !grads.loss.is_finite() {
            return Err(PolicyError::NonFinite { what: "loss", step });
        }
        curve.push(grads.loss);
        for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grads.grad_params) {
            *v = sgd.momentum * *v + g;
            *p -= sgd.learning_rate * *v;
        }
    }
    let trained = MlpPolicy::new(arch, params)?;
    curve.push(bc_loss(&trained, states, actions)?);
    Ok((trained, curve))
}
