//! Preference-conditioned routing policy.
//!
//! The network maps a frozen prompt embedding `e` and a preference `w` to a
//! distribution over `K` arms:
//!
//! ```text
//! u = φ(w)              two-layer ReLU MLP, 2 → pref_hidden → d_p
//! z = [e; u]
//! o = g(z)              decision head: linear | bilinear | mlp
//! π = softmax(o)
//! ```
//!
//! All trainable parameters live in one flat vector. Gradients are exact and
//! hand-derived; they never flow into `e`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Context, DomainError, PreferenceVector};
use crate::numerics::{dot, SeededRng};

/// Logits are clamped to this magnitude before the softmax.
pub const LOGIT_CLAMP: f64 = 50.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("backward called without a forward cache")]
    MissingCache,
    #[error("forward cache does not belong to this network shape")]
    CacheMismatch,
    #[error("action {action} out of range for {k} arms")]
    ActionOutOfRange { action: usize, k: usize },
    #[error("parameter vector has {got} entries, expected {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("non-finite parameter")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, PolicyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Linear,
    Bilinear,
    Mlp,
}

impl std::str::FromStr for HeadKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(HeadKind::Linear),
            "bilinear" => Ok(HeadKind::Bilinear),
            "mlp" => Ok(HeadKind::Mlp),
            other => Err(format!("unknown head kind `{other}` (linear|bilinear|mlp)")),
        }
    }
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HeadKind::Linear => "linear",
            HeadKind::Bilinear => "bilinear",
            HeadKind::Mlp => "mlp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDims {
    /// Prompt embedding width.
    pub d_e: usize,
    /// Preference embedding width.
    pub d_p: usize,
    /// Hidden width of the preference encoder.
    pub pref_hidden: usize,
    /// Hidden width of the MLP head (ignored by other heads).
    pub head_hidden: usize,
    /// Rank of each arm's interaction matrix in the bilinear head.
    pub rank: usize,
    /// Number of arms.
    pub k: usize,
}

impl PolicyDims {
    pub fn new(d_e: usize, k: usize) -> Self {
        Self {
            d_e,
            d_p: 64,
            pref_hidden: 64,
            head_hidden: 256,
            rank: 8,
            k,
        }
    }

    pub fn d_z(&self) -> usize {
        self.d_e + self.d_p
    }

    fn validate(&self) -> Result<()> {
        let checks = [
            (self.d_e, "d_e"),
            (self.d_p, "d_p"),
            (self.pref_hidden, "pref_hidden"),
            (self.head_hidden, "head_hidden"),
            (self.rank, "rank"),
        ];
        for (v, name) in checks {
            if v == 0 {
                return Err(PolicyError::InvalidDims(format!("{name} must be positive")));
            }
        }
        if self.k < 2 {
            return Err(PolicyError::InvalidDims("k must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Block {
    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum HeadLayout {
    Linear {
        w: Block,
        b: Block,
    },
    Mlp {
        w1: Block,
        b1: Block,
        w2: Block,
        b2: Block,
    },
    /// `u` and `v` store, for arm `a` and rank slot `r`, the row `a * rank + r`.
    Bilinear {
        u: Block,
        v: Block,
        w: Block,
        b: Block,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    pw1: Block,
    pb1: Block,
    pw2: Block,
    pb2: Block,
    head: HeadLayout,
    total: usize,
}

impl Layout {
    fn new(kind: HeadKind, dims: &PolicyDims) -> Self {
        let mut offset = 0;
        let mut block = |rows: usize, cols: usize| {
            let b = Block { offset, rows, cols };
            offset += rows * cols;
            b
        };
        let pw1 = block(dims.pref_hidden, 2);
        let pb1 = block(dims.pref_hidden, 1);
        let pw2 = block(dims.d_p, dims.pref_hidden);
        let pb2 = block(dims.d_p, 1);
        let head = match kind {
            HeadKind::Linear => HeadLayout::Linear {
                w: block(dims.k, dims.d_z()),
                b: block(dims.k, 1),
            },
            HeadKind::Mlp => HeadLayout::Mlp {
                w1: block(dims.head_hidden, dims.d_z()),
                b1: block(dims.head_hidden, 1),
                w2: block(dims.k, dims.head_hidden),
                b2: block(dims.k, 1),
            },
            HeadKind::Bilinear => HeadLayout::Bilinear {
                u: block(dims.k * dims.rank, dims.d_e),
                v: block(dims.k * dims.rank, dims.d_p),
                w: block(dims.k, dims.d_z()),
                b: block(dims.k, 1),
            },
        };
        Self {
            pw1,
            pb1,
            pw2,
            pb2,
            head,
            total: offset,
        }
    }

    /// Weight blocks with their Glorot fan sizes.
    fn weight_blocks(&self, dims: &PolicyDims) -> Vec<(Block, usize, usize)> {
        let mut out = vec![(self.pw1, 2, dims.pref_hidden), (self.pw2, dims.pref_hidden, dims.d_p)];
        match &self.head {
            HeadLayout::Linear { w, .. } => out.push((*w, dims.d_z(), dims.k)),
            HeadLayout::Mlp { w1, w2, .. } => {
                out.push((*w1, dims.d_z(), dims.head_hidden));
                out.push((*w2, dims.head_hidden, dims.k));
            }
            HeadLayout::Bilinear { u, v, w, .. } => {
                out.push((*u, dims.d_e, dims.rank));
                out.push((*v, dims.d_p, dims.rank));
                out.push((*w, dims.d_z(), dims.k));
            }
        }
        out
    }
}

/// `y = W x + b` for a row-major block.
fn affine(params: &[f64], w: Block, b: Block, x: &[f64]) -> Vec<f64> {
    let wm = &params[w.range()];
    let bv = &params[b.range()];
    (0..w.rows)
        .map(|r| dot(&wm[r * w.cols..(r + 1) * w.cols], x) + bv[r])
        .collect()
}

/// Accumulates `dW += g xᵀ`, `db += g` and returns `Wᵀ g` when `want_input`.
fn affine_backward(
    params: &[f64],
    grad: &mut [f64],
    w: Block,
    b: Block,
    x: &[f64],
    g: &[f64],
    want_input: bool,
) -> Vec<f64> {
    let mut dx = if want_input { vec![0.0; w.cols] } else { Vec::new() };
    for r in 0..w.rows {
        let gr = g[r];
        if gr == 0.0 {
            continue;
        }
        let row = w.offset + r * w.cols;
        for c in 0..w.cols {
            grad[row + c] += gr * x[c];
        }
        grad[b.offset + r] += gr;
        if want_input {
            for c in 0..w.cols {
                dx[c] += gr * params[row + c];
            }
        }
    }
    dx
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNetwork {
    kind: HeadKind,
    dims: PolicyDims,
    params: Vec<f64>,
    layout: Layout,
}

#[derive(Debug, Clone, PartialEq)]
struct ForwardCache {
    total_params: usize,
    embedding: Vec<f64>,
    preference: [f64; 2],
    pref_pre: Vec<f64>,
    pref_hidden: Vec<f64>,
    z: Vec<f64>,
    head_pre: Vec<f64>,
    head_hidden: Vec<f64>,
    /// Bilinear projections `U_{a,r}·e` and `V_{a,r}·u`, indexed `a * rank + r`.
    proj_e: Vec<f64>,
    proj_u: Vec<f64>,
    clamped: Vec<bool>,
}

/// Logits, probabilities and (after [`PolicyNetwork::forward`]) the
/// activations needed for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    logits: Vec<f64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    cache: Option<ForwardCache>,
}

impl PolicyOutput {
    /// Softmax of the given logits, with no backprop cache attached.
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let logits: Vec<f64> = logits.iter().map(|o| o.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).collect();
        let (probs, log_probs) = softmax(&logits);
        Self {
            logits,
            probs,
            log_probs,
            cache: None,
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    /// Smallest `|pre-activation|` over all ReLU units: how far the forward
    /// pass is from a point where the network is not differentiable.
    pub fn relu_margin(&self) -> Option<f64> {
        let c = self.cache.as_ref()?;
        Some(
            c.pref_pre
                .iter()
                .chain(&c.head_pre)
                .fold(f64::INFINITY, |m, x| m.min(x.abs())),
        )
    }
}

/// Max-subtracted softmax; returns `(π, log π)`.
pub fn softmax(logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|o| (o - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let log_sum = sum.ln();
    let probs = exps.iter().map(|e| e / sum).collect();
    let log_probs = logits.iter().map(|o| o - m - log_sum).collect();
    (probs, log_probs)
}

/// Shannon entropy of the policy, in nats.
pub fn entropy(out: &PolicyOutput) -> f64 {
    -out.probs
        .iter()
        .zip(&out.log_probs)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, lp)| p * lp)
        .sum::<f64>()
}

/// Per-sample policy-gradient loss `-(advantage) log π(a) - β H(π)`.
pub fn sample_loss(out: &PolicyOutput, action: usize, advantage: f64, beta: f64) -> Result<f64> {
    let k = out.probs.len();
    if action >= k {
        return Err(PolicyError::ActionOutOfRange { action, k });
    }
    Ok(-advantage * out.log_probs[action] - beta * entropy(out))
}

/// Gradient of [`sample_loss`] with respect to the (clamped) logits.
pub fn logit_gradient(out: &PolicyOutput, action: usize, advantage: f64, beta: f64) -> Result<Vec<f64>> {
    let k = out.probs.len();
    if action >= k {
        return Err(PolicyError::ActionOutOfRange { action, k });
    }
    let h = entropy(out);
    Ok((0..k)
        .map(|j| {
            let p = out.probs[j];
            let indicator = if j == action { 1.0 } else { 0.0 };
            advantage * (p - indicator) + beta * p * (out.log_probs[j] + h)
        })
        .collect())
}

/// Smallest index with maximal probability.
pub fn select_argmax(out: &PolicyOutput) -> usize {
    argmax(&out.probs)
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from the categorical distribution `π`.
pub fn select_sample(out: &PolicyOutput, rng: &mut SeededRng) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in out.probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

impl PolicyNetwork {
    /// Glorot-uniform weights, zero biases.
    pub fn new(kind: HeadKind, dims: PolicyDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        let layout = Layout::new(kind, &dims);
        let mut params = vec![0.0; layout.total];
        let mut rng = SeededRng::new(seed);
        for (block, fan_in, fan_out) in layout.weight_blocks(&dims) {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[block.range()] {
                *p = rng.uniform_range(-s, s);
            }
        }
        Ok(Self {
            kind,
            dims,
            params,
            layout,
        })
    }

    /// Rebuilds a network from a flat parameter vector.
    pub fn from_params(kind: HeadKind, dims: PolicyDims, params: Vec<f64>) -> Result<Self> {
        dims.validate()?;
        let layout = Layout::new(kind, &dims);
        if params.len() != layout.total {
            return Err(PolicyError::ParamCount {
                expected: layout.total,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        Ok(Self {
            kind,
            dims,
            params,
            layout,
        })
    }

    pub fn param_count(kind: HeadKind, dims: &PolicyDims) -> usize {
        Layout::new(kind, dims).total
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn dims(&self) -> &PolicyDims {
        &self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Zeroes every decision-head parameter.
    pub fn zero_head(&mut self) {
        let blocks: Vec<Block> = match self.layout.head.clone() {
            HeadLayout::Linear { w, b } => vec![w, b],
            HeadLayout::Mlp { w1, b1, w2, b2 } => vec![w1, b1, w2, b2],
            HeadLayout::Bilinear { u, v, w, b } => vec![u, v, w, b],
        };
        for b in blocks {
            self.params[b.range()].iter_mut().for_each(|p| *p = 0.0);
        }
    }

    /// Preference embedding `φ(w)`.
    pub fn encode_preference(&self, w: &PreferenceVector) -> Vec<f64> {
        let l = self.layout();
        let h = relu(&affine(&self.params, l.pw1, l.pb1, &w.as_array()));
        affine(&self.params, l.pw2, l.pb2, &h)
    }

    pub fn forward(&self, ctx: &Context<'_>) -> Result<PolicyOutput> {
        ctx.check_dim(self.dims.d_e)?;
        let l = self.layout();
        let p = &self.params;
        let w = ctx.preference.as_array();
        let pref_pre = affine(p, l.pw1, l.pb1, &w);
        let pref_hidden = relu(&pref_pre);
        let u = affine(p, l.pw2, l.pb2, &pref_hidden);
        let mut z = Vec::with_capacity(self.dims.d_z());
        z.extend_from_slice(ctx.embedding);
        z.extend_from_slice(&u);

        let mut head_pre = Vec::new();
        let mut head_hidden = Vec::new();
        let mut proj_e = Vec::new();
        let mut proj_u = Vec::new();
        let raw = match l.head {
            HeadLayout::Linear { w, b } => affine(p, w, b, &z),
            HeadLayout::Mlp { w1, b1, w2, b2 } => {
                head_pre = affine(p, w1, b1, &z);
                head_hidden = relu(&head_pre);
                affine(p, w2, b2, &head_hidden)
            }
            HeadLayout::Bilinear { u: ub, v: vb, w, b } => {
                let mut o = affine(p, w, b, &z);
                let (d_e, d_p, rank) = (self.dims.d_e, self.dims.d_p, self.dims.rank);
                for a in 0..self.dims.k {
                    for r in 0..rank {
                        let row = a * rank + r;
                        let pe = dot(&p[ub.offset + row * d_e..ub.offset + (row + 1) * d_e], ctx.embedding);
                        let pu = dot(&p[vb.offset + row * d_p..vb.offset + (row + 1) * d_p], &u);
                        o[a] += pe * pu;
                        proj_e.push(pe);
                        proj_u.push(pu);
                    }
                }
                o
            }
        };

        let clamped: Vec<bool> = raw.iter().map(|o| o.abs() > LOGIT_CLAMP).collect();
        if clamped.iter().any(|c| *c) {
            log::debug!("logit clamp active: {raw:?}");
        }
        let logits: Vec<f64> = raw.iter().map(|o| o.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).collect();
        let (probs, log_probs) = softmax(&logits);
        Ok(PolicyOutput {
            logits: raw,
            probs,
            log_probs,
            cache: Some(ForwardCache {
                total_params: p.len(),
                embedding: ctx.embedding.to_vec(),
                preference: w,
                pref_pre,
                pref_hidden,
                z,
                head_pre,
                head_hidden,
                proj_e,
                proj_u,
                clamped,
            }),
        })
    }

    /// Gradient of the per-sample loss w.r.t. all parameters, flattened.
    pub fn backward(&self, out: &PolicyOutput, action: usize, advantage: f64, beta: f64) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_backward(out, action, advantage, beta, &mut grad)?;
        Ok(grad)
    }

    /// Adds the per-sample gradient into `grad`.
    pub fn accumulate_backward(
        &self,
        out: &PolicyOutput,
        action: usize,
        advantage: f64,
        beta: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        let cache = out.cache.as_ref().ok_or(PolicyError::MissingCache)?;
        if cache.total_params != self.params.len() || out.probs.len() != self.dims.k {
            return Err(PolicyError::CacheMismatch);
        }
        if grad.len() != self.params.len() {
            return Err(PolicyError::ParamCount {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let mut g_o = logit_gradient(out, action, advantage, beta)?;
        for (g, c) in g_o.iter_mut().zip(&cache.clamped) {
            if *c {
                *g = 0.0;
            }
        }

        let l = self.layout();
        let p = &self.params;
        let (d_e, d_p) = (self.dims.d_e, self.dims.d_p);
        let mut du = vec![0.0; d_p];
        match l.head {
            HeadLayout::Linear { w, b } => {
                let dz = affine_backward(p, grad, w, b, &cache.z, &g_o, true);
                du.copy_from_slice(&dz[d_e..]);
            }
            HeadLayout::Mlp { w1, b1, w2, b2 } => {
                let dh = affine_backward(p, grad, w2, b2, &cache.head_hidden, &g_o, true);
                let da: Vec<f64> = dh
                    .iter()
                    .zip(&cache.head_pre)
                    .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
                    .collect();
                let dz = affine_backward(p, grad, w1, b1, &cache.z, &da, true);
                du.copy_from_slice(&dz[d_e..]);
            }
            HeadLayout::Bilinear { u: ub, v: vb, w, b } => {
                let dz = affine_backward(p, grad, w, b, &cache.z, &g_o, true);
                du.copy_from_slice(&dz[d_e..]);
                let u_vec = &cache.z[d_e..];
                let rank = self.dims.rank;
                for a in 0..self.dims.k {
                    let ga = g_o[a];
                    if ga == 0.0 {
                        continue;
                    }
                    for r in 0..rank {
                        let row = a * rank + r;
                        let pe = cache.proj_e[row];
                        let pu = cache.proj_u[row];
                        let uo = ub.offset + row * d_e;
                        for i in 0..d_e {
                            grad[uo + i] += ga * pu * cache.embedding[i];
                        }
                        let vo = vb.offset + row * d_p;
                        for j in 0..d_p {
                            grad[vo + j] += ga * pe * u_vec[j];
                            du[j] += ga * pe * p[vo + j];
                        }
                    }
                }
            }
        }

        let dh = affine_backward(p, grad, l.pw2, l.pb2, &cache.pref_hidden, &du, true);
        let da: Vec<f64> = dh
            .iter()
            .zip(&cache.pref_pre)
            .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
            .collect();
        affine_backward(p, grad, l.pw1, l.pb1, &cache.preference, &da, false);
        Ok(())
    }
}
