//! Policy and value approximators with exact hand-derived gradients, the
//! clipped-surrogate loss family shared by both hierarchy levels, and the
//! binary checkpoint format.
//!
//! Three approximator kinds are supported: tabular softmax over a discrete
//! input index, a linear map over a feature vector, and a one-hidden-layer
//! tanh network. No autodiff: every backward pass is written out and checked
//! against central finite differences in the tests.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("approximator produced a non-finite output")]
    NonFiniteOutput,
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("probability vector invalid: {0}")]
    InvalidDistribution(String),
    #[error("likelihood ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("values must have length {expected} (rewards + bootstrap), got {got}")]
    ValueLength { expected: usize, got: usize },
    #[error("checkpoint malformed: {0}")]
    Checkpoint(String),
}

// ---------------------------------------------------------------------------
// Action distributions
// ---------------------------------------------------------------------------

/// Categorical distribution over a finite action set.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistribution {
    probs: Vec<f64>,
}

impl ActionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, PolicyError> {
        if probs.is_empty() {
            return Err(PolicyError::InvalidDistribution("empty".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(PolicyError::InvalidDistribution(
                "negative or non-finite entry".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(PolicyError::InvalidDistribution(format!("sums to {total}")));
        }
        Ok(ActionDistribution { probs })
    }

    /// Numerically stable softmax.
    pub fn from_logits(logits: &[f64]) -> Result<Self, PolicyError> {
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(PolicyError::NonFiniteOutput);
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Ok(ActionDistribution {
            probs: exps.into_iter().map(|e| e / total).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.probs[action].ln()
    }

    /// Shannon entropy with the `0 ln 0 = 0` convention.
    pub fn entropy(&self) -> f64 {
        -self
            .probs
            .iter()
            .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
            .sum::<f64>()
    }

    /// Inverse-CDF sample from one uniform draw in `[0, 1)`.
    pub fn sample_with(&self, uniform: f64) -> usize {
        let mut acc = 0.0;
        for (a, &p) in self.probs.iter().enumerate() {
            acc += p;
            if uniform < acc {
                return a;
            }
        }
        self.probs.len() - 1
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (a, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = a;
            }
        }
        best
    }
}

/// Gradient of `log p[action]` with respect to the logits: `onehot - p`.
pub fn log_prob_logit_grad(dist: &ActionDistribution, action: usize) -> Vec<f64> {
    dist.probs
        .iter()
        .enumerate()
        .map(|(a, &p)| if a == action { 1.0 - p } else { -p })
        .collect()
}

/// Gradient of the Shannon entropy with respect to the logits.
pub fn entropy_logit_grad(dist: &ActionDistribution) -> Vec<f64> {
    let entropy = dist.entropy();
    dist.probs
        .iter()
        .map(|&p| if p > 0.0 { -p * (p.ln() + entropy) } else { 0.0 })
        .collect()
}

// ---------------------------------------------------------------------------
// Loss terms
// ---------------------------------------------------------------------------

/// Clipped-surrogate term `min(r A, clip(r, 1 ± eps) A)`, to be maximized.
pub fn ppo_clip_term(ratio: f64, advantage: f64, eps: f64) -> Result<f64, PolicyError> {
    if !(ratio > 0.0) {
        return Err(PolicyError::NonPositiveRatio(ratio));
    }
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    Ok((ratio * advantage).min(clipped * advantage))
}

/// Derivative of the clip term with respect to `log p[action]` (the ratio's
/// log-numerator): `r A` when the unclipped branch is active, else 0.
pub fn ppo_clip_grad_logp(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let active = if advantage >= 0.0 {
        ratio <= 1.0 + eps
    } else {
        ratio >= 1.0 - eps
    };
    if active {
        ratio * advantage
    } else {
        0.0
    }
}

/// Pessimistic clipped value loss
/// `max[(v - target)^2, (clip(v, v_old ± eps) - target)^2]`.
pub fn value_clip_loss(v_new: f64, v_old: f64, target: f64, eps: f64) -> f64 {
    let clipped = v_new.clamp(v_old - eps, v_old + eps);
    (v_new - target).powi(2).max((clipped - target).powi(2))
}

/// Derivative of [`value_clip_loss`] with respect to `v_new`; zero when the
/// saturated clipped branch dominates.
pub fn value_clip_grad(v_new: f64, v_old: f64, target: f64, eps: f64) -> f64 {
    let clipped = v_new.clamp(v_old - eps, v_old + eps);
    if (v_new - target).powi(2) >= (clipped - target).powi(2) {
        2.0 * (v_new - target)
    } else {
        0.0
    }
}

/// Generalized advantage estimation. `values` carries one bootstrap slot
/// beyond the rewards (zero at terminal states).
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>, PolicyError> {
    if values.len() != rewards.len() + 1 {
        return Err(PolicyError::ValueLength {
            expected: rewards.len() + 1,
            got: values.len(),
        });
    }
    let mut advantages = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        advantages[t] = acc;
    }
    Ok(advantages)
}

// ---------------------------------------------------------------------------
// Approximators
// ---------------------------------------------------------------------------

/// Input to an approximator: a table row or a feature vector.
#[derive(Clone, Copy, Debug)]
pub enum Input<'a> {
    Index(usize),
    Features(&'a [f64]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ApproximatorKind {
    TabularSoftmax,
    Linear,
    Mlp { hidden: usize },
}

/// Parametric map from inputs to `out_dim` raw outputs (logits for policies,
/// a single value for critics).
#[derive(Clone, Debug, PartialEq)]
pub struct Approximator {
    kind: ApproximatorKind,
    in_dim: usize,
    out_dim: usize,
    params: Vec<f64>,
}

impl Approximator {
    /// Zero-initialized table over `rows` discrete inputs.
    pub fn tabular(rows: usize, out_dim: usize) -> Self {
        Approximator {
            kind: ApproximatorKind::TabularSoftmax,
            in_dim: rows,
            out_dim,
            params: vec![0.0; rows * out_dim],
        }
    }

    /// Linear map, weights uniform in `±1/sqrt(in_dim)`, zero bias.
    pub fn linear(in_dim: usize, out_dim: usize, rng: &mut impl rand::Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut params = vec![0.0; in_dim * out_dim + out_dim];
        for w in params.iter_mut().take(in_dim * out_dim) {
            *w = (rng.random::<f64>() * 2.0 - 1.0) * bound;
        }
        Approximator {
            kind: ApproximatorKind::Linear,
            in_dim,
            out_dim,
            params,
        }
    }

    /// One-hidden-layer tanh network, weights uniform in `±1/sqrt(fan_in)`.
    pub fn mlp(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut impl rand::Rng) -> Self {
        let mut params = vec![0.0; hidden * in_dim + hidden + out_dim * hidden + out_dim];
        let b1 = 1.0 / (in_dim as f64).sqrt();
        for w in params.iter_mut().take(hidden * in_dim) {
            *w = (rng.random::<f64>() * 2.0 - 1.0) * b1;
        }
        let b2 = 1.0 / (hidden as f64).sqrt();
        let w2_start = hidden * in_dim + hidden;
        for w in params[w2_start..w2_start + out_dim * hidden].iter_mut() {
            *w = (rng.random::<f64>() * 2.0 - 1.0) * b2;
        }
        Approximator {
            kind: ApproximatorKind::Mlp { hidden },
            in_dim,
            out_dim,
            params,
        }
    }

    pub fn kind(&self) -> ApproximatorKind {
        self.kind
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Raw outputs (logits or value).
    pub fn forward(&self, input: Input) -> Vec<f64> {
        match (self.kind, input) {
            (ApproximatorKind::TabularSoftmax, Input::Index(row)) => {
                assert!(row < self.in_dim, "table row out of range");
                self.params[row * self.out_dim..(row + 1) * self.out_dim].to_vec()
            }
            (ApproximatorKind::Linear, Input::Features(x)) => {
                assert_eq!(x.len(), self.in_dim, "feature length mismatch");
                let (w, b) = self.params.split_at(self.in_dim * self.out_dim);
                (0..self.out_dim)
                    .map(|o| {
                        b[o] + w[o * self.in_dim..(o + 1) * self.in_dim]
                            .iter()
                            .zip(x)
                            .map(|(wi, xi)| wi * xi)
                            .sum::<f64>()
                    })
                    .collect()
            }
            (ApproximatorKind::Mlp { hidden }, Input::Features(x)) => {
                assert_eq!(x.len(), self.in_dim, "feature length mismatch");
                self.mlp_forward(hidden, x).1
            }
            _ => panic!("input kind does not match approximator kind"),
        }
    }

    fn mlp_layout(&self, hidden: usize) -> (usize, usize, usize) {
        let b1 = hidden * self.in_dim;
        let w2 = b1 + hidden;
        let b2 = w2 + self.out_dim * hidden;
        (b1, w2, b2)
    }

    fn mlp_forward(&self, hidden: usize, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (b1_off, w2_off, b2_off) = self.mlp_layout(hidden);
        let mut h = vec![0.0; hidden];
        for (j, hj) in h.iter_mut().enumerate() {
            let mut z = self.params[b1_off + j];
            for i in 0..self.in_dim {
                z += self.params[j * self.in_dim + i] * x[i];
            }
            *hj = z.tanh();
        }
        let mut out = vec![0.0; self.out_dim];
        for (o, oo) in out.iter_mut().enumerate() {
            let mut z = self.params[b2_off + o];
            for (j, hj) in h.iter().enumerate() {
                z += self.params[w2_off + o * hidden + j] * hj;
            }
            *oo = z;
        }
        (h, out)
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given the upstream
    /// `d(loss)/d(outputs)` at this input.
    pub fn backward(&self, input: Input, upstream: &[f64], grad: &mut [f64]) {
        assert_eq!(upstream.len(), self.out_dim, "upstream length mismatch");
        assert_eq!(grad.len(), self.params.len(), "gradient buffer mismatch");
        match (self.kind, input) {
            (ApproximatorKind::TabularSoftmax, Input::Index(row)) => {
                for (o, &u) in upstream.iter().enumerate() {
                    grad[row * self.out_dim + o] += u;
                }
            }
            (ApproximatorKind::Linear, Input::Features(x)) => {
                let bias_off = self.in_dim * self.out_dim;
                for (o, &u) in upstream.iter().enumerate() {
                    for (i, &xi) in x.iter().enumerate() {
                        grad[o * self.in_dim + i] += u * xi;
                    }
                    grad[bias_off + o] += u;
                }
            }
            (ApproximatorKind::Mlp { hidden }, Input::Features(x)) => {
                let (b1_off, w2_off, b2_off) = self.mlp_layout(hidden);
                let (h, _) = self.mlp_forward(hidden, x);
                let mut dh = vec![0.0; hidden];
                for (o, &u) in upstream.iter().enumerate() {
                    grad[b2_off + o] += u;
                    for (j, hj) in h.iter().enumerate() {
                        grad[w2_off + o * hidden + j] += u * hj;
                        dh[j] += u * self.params[w2_off + o * hidden + j];
                    }
                }
                for (j, hj) in h.iter().enumerate() {
                    let dz = dh[j] * (1.0 - hj * hj);
                    grad[b1_off + j] += dz;
                    for (i, &xi) in x.iter().enumerate() {
                        grad[j * self.in_dim + i] += dz * xi;
                    }
                }
            }
            _ => panic!("input kind does not match approximator kind"),
        }
    }

    /// Softmax policy head over the raw outputs.
    pub fn policy(&self, input: Input) -> Result<ActionDistribution, PolicyError> {
        ActionDistribution::from_logits(&self.forward(input))
    }

    /// Scalar value head (first output).
    pub fn value(&self, input: Input) -> f64 {
        self.forward(input)[0]
    }
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Gradient-ascent optimizer with optional Adam-style moment accumulation.
#[derive(Clone, Debug)]
pub struct GradAscent {
    lr: f64,
    adam: Option<AdamState>,
}

#[derive(Clone, Debug)]
struct AdamState {
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl GradAscent {
    /// Adam moments (the default path), beta1 = 0.9, beta2 = 0.999.
    pub fn adam(lr: f64, len: usize) -> Self {
        GradAscent {
            lr,
            adam: Some(AdamState {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                m: vec![0.0; len],
                v: vec![0.0; len],
                t: 0,
            }),
        }
    }

    /// Plain ascent with a fixed step size.
    pub fn plain(lr: f64) -> Self {
        GradAscent { lr, adam: None }
    }

    /// Ascends `params` along `grad` (negate the gradient to descend).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match &mut self.adam {
            None => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p += self.lr * g;
                }
            }
            Some(state) => {
                state.t += 1;
                let bc1 = 1.0 - state.beta1.powi(state.t as i32);
                let bc2 = 1.0 - state.beta2.powi(state.t as i32);
                for ((p, g), (m, v)) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(state.m.iter_mut().zip(state.v.iter_mut()))
                {
                    *m = state.beta1 * *m + (1.0 - state.beta1) * g;
                    *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p += self.lr * m_hat / (v_hat.sqrt() + state.eps);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"SOPC";
const CHECKPOINT_VERSION: u16 = 1;

impl Approximator {
    /// Serializes to the versioned binary checkpoint format: header
    /// (magic, version, kind, shapes, seed) followed by the flat
    /// little-endian f64 parameter payload. Round-trips bit-exactly.
    pub fn to_checkpoint_bytes(&self, seed: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.params.len() * 8);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let (kind, hidden) = match self.kind {
            ApproximatorKind::TabularSoftmax => (0u8, 0u32),
            ApproximatorKind::Linear => (1u8, 0u32),
            ApproximatorKind::Mlp { hidden } => (2u8, hidden as u32),
        };
        out.push(kind);
        out.extend_from_slice(&(self.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&hidden.to_le_bytes());
        out.extend_from_slice(&(self.out_dim as u32).to_le_bytes());
        out.extend_from_slice(&seed.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Parses a checkpoint; returns the approximator and the recorded seed.
    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(Self, u64), PolicyError> {
        let bad = |m: &str| PolicyError::Checkpoint(m.to_string());
        if bytes.len() < 35 {
            return Err(bad("truncated header"));
        }
        if &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(bad("wrong magic"));
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(PolicyError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let kind_tag = bytes[6];
        let in_dim = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let hidden = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
        let out_dim = u32::from_le_bytes(bytes[15..19].try_into().unwrap()) as usize;
        let seed = u64::from_le_bytes(bytes[19..27].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[27..35].try_into().unwrap()) as usize;
        let kind = match kind_tag {
            0 => ApproximatorKind::TabularSoftmax,
            1 => ApproximatorKind::Linear,
            2 => ApproximatorKind::Mlp { hidden },
            other => return Err(PolicyError::Checkpoint(format!("unknown kind {other}"))),
        };
        let expected = match kind {
            ApproximatorKind::TabularSoftmax => in_dim * out_dim,
            ApproximatorKind::Linear => in_dim * out_dim + out_dim,
            ApproximatorKind::Mlp { hidden } => {
                hidden * in_dim + hidden + out_dim * hidden + out_dim
            }
        };
        if count != expected {
            return Err(PolicyError::Checkpoint(format!(
                "parameter count {count} does not match shapes (expected {expected})"
            )));
        }
        let payload = &bytes[35..];
        if payload.len() != count * 8 {
            return Err(bad("payload length mismatch"));
        }
        let params: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((
            Approximator {
                kind,
                in_dim,
                out_dim,
                params,
            },
            seed,
        ))
    }
}
