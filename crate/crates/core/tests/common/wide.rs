//! Double-double arithmetic (about 106 significand bits) and a policy loss
//! evaluated in it, used as a finite-difference oracle whose rounding noise
//! sits far below f64 resolution.

use std::ops::{Add, Mul, Neg, Sub};

use prefroute::domain::PreferenceVector;
use prefroute::policy::{HeadKind, PolicyDims};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// Exact product with a power of two.
    fn scale(self, p: f64) -> Self {
        Dd {
            hi: self.hi * p,
            lo: self.lo * p,
        }
    }

    pub fn div(self, y: Dd) -> Dd {
        let q1 = self.hi / y.hi;
        let r = self - y * Dd::new(q1);
        let q2 = r.hi / y.hi;
        let r = r - y * Dd::new(q2);
        let q3 = r.hi / y.hi;
        let (s, e) = quick_two_sum(q1, q2);
        Dd { hi: s, lo: e } + Dd::new(q3)
    }

    pub fn exp(self) -> Dd {
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::new(k)).scale(1.0 / 1024.0);
        let mut term = Dd::new(1.0);
        let mut sum = Dd::new(1.0);
        for n in 1..=14 {
            term = (term * r).div(Dd::new(n as f64));
            sum = sum + term;
        }
        for _ in 0..10 {
            sum = sum * sum;
        }
        sum.scale(2f64.powi(k as i32))
    }

    /// Newton iteration on `exp(y) = x`, from the f64 logarithm.
    pub fn ln(self) -> Dd {
        let mut y = Dd::new(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp() - Dd::new(1.0);
        }
        y
    }

    fn relu(self) -> Dd {
        if self.hi > 0.0 {
            self
        } else {
            Dd::ZERO
        }
    }

    fn clamp(self, bound: f64) -> Dd {
        if self.hi > bound {
            Dd::new(bound)
        } else if self.hi < -bound {
            Dd::new(-bound)
        } else {
            self
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, y: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, y.hi);
        let (t, f) = two_sum(self.lo, y.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, y: Dd) -> Dd {
        self + (-y)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, y: Dd) -> Dd {
        let p = self.hi * y.hi;
        let e = self.hi.mul_add(y.hi, -p) + (self.hi * y.lo + self.lo * y.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

/// `W x + b` with `W` stored row-major at `params[w..]` and `b` right after.
fn affine(params: &[Dd], at: &mut usize, rows: usize, x: &[Dd]) -> Vec<Dd> {
    let cols = x.len();
    let w = *at;
    let b = w + rows * cols;
    *at = b + rows;
    (0..rows)
        .map(|r| (0..cols).fold(params[b + r], |acc, c| acc + params[w + r * cols + c] * x[c]))
        .collect()
}

fn block<'a>(params: &'a [Dd], at: &mut usize, len: usize) -> &'a [Dd] {
    let s = &params[*at..*at + len];
    *at += len;
    s
}

fn dot(a: &[Dd], b: &[Dd]) -> Dd {
    a.iter().zip(b).fold(Dd::ZERO, |acc, (x, y)| acc + *x * *y)
}

fn encoder_len(dims: &PolicyDims) -> usize {
    dims.pref_hidden * 3 + dims.d_p * (dims.pref_hidden + 1)
}

/// Prompt embedding and preference embedding, concatenated.
fn encode(dims: &PolicyDims, params: &[Dd], embedding: &[f64], pref: PreferenceVector) -> Vec<Dd> {
    let mut at = 0;
    let w = pref.as_array().map(Dd::new);
    let h: Vec<Dd> = affine(params, &mut at, dims.pref_hidden, &w)
        .into_iter()
        .map(Dd::relu)
        .collect();
    let u = affine(params, &mut at, dims.d_p, &h);
    embedding.iter().map(|x| Dd::new(*x)).chain(u).collect()
}

/// MLP output layer applied to hidden pre-activations.
fn mlp_output(dims: &PolicyDims, params: &[Dd], pre: &[Dd]) -> Vec<Dd> {
    let hidden: Vec<Dd> = pre.iter().map(|x| x.relu()).collect();
    let mut at = encoder_len(dims) + dims.head_hidden * (dims.d_e + dims.d_p + 1);
    affine(params, &mut at, dims.k, &hidden)
}

fn head(kind: HeadKind, dims: &PolicyDims, params: &[Dd], z: &[Dd]) -> Vec<Dd> {
    let mut at = encoder_len(dims);
    let out = match kind {
        HeadKind::Linear => affine(params, &mut at, dims.k, z),
        HeadKind::Mlp => {
            let pre = affine(params, &mut at, dims.head_hidden, z);
            at += dims.k * (dims.head_hidden + 1);
            mlp_output(dims, params, &pre)
        }
        HeadKind::Bilinear => {
            let (e, u) = z.split_at(dims.d_e);
            let n = dims.k * dims.rank;
            let ub = block(params, &mut at, n * dims.d_e).to_vec();
            let vb = block(params, &mut at, n * dims.d_p).to_vec();
            let mut o = affine(params, &mut at, dims.k, z);
            for (a, oa) in o.iter_mut().enumerate() {
                for r in 0..dims.rank {
                    let row = a * dims.rank + r;
                    let pe = dot(&ub[row * dims.d_e..(row + 1) * dims.d_e], e);
                    let pu = dot(&vb[row * dims.d_p..(row + 1) * dims.d_p], u);
                    *oa = *oa + pe * pu;
                }
            }
            o
        }
    };
    assert_eq!(at, params.len(), "parameter layout mismatch");
    out
}

/// Logits of the policy network for a flat parameter vector. Blocks are laid
/// out as: encoder `W1, b1, W2, b2`, then the head (`W, b` for linear;
/// `W1, b1, W2, b2` for MLP; `U, V, W, b` for bilinear).
pub fn logits(kind: HeadKind, dims: &PolicyDims, params: &[Dd], embedding: &[f64], pref: PreferenceVector) -> Vec<Dd> {
    head(kind, dims, params, &encode(dims, params, embedding, pref))
}

/// `-adv log π(a) - β H(π)` with logits clamped to ±50.
fn loss_of_logits(logits: Vec<Dd>, action: usize, adv: f64, beta: f64) -> Dd {
    let o: Vec<Dd> = logits.into_iter().map(|x| x.clamp(50.0)).collect();
    let m = o.iter().map(|x| x.hi).fold(f64::NEG_INFINITY, f64::max);
    let sum = o.iter().fold(Dd::ZERO, |acc, x| acc + (*x - Dd::new(m)).exp());
    let lse = Dd::new(m) + sum.ln();
    let log_p: Vec<Dd> = o.iter().map(|x| *x - lse).collect();
    let neg_h = log_p.iter().fold(Dd::ZERO, |acc, lp| acc + lp.exp() * *lp);
    Dd::new(-adv) * log_p[action] + Dd::new(beta) * neg_h
}

#[allow(clippy::too_many_arguments)]
pub fn loss(
    kind: HeadKind,
    dims: &PolicyDims,
    params: &[Dd],
    embedding: &[f64],
    pref: PreferenceVector,
    action: usize,
    adv: f64,
    beta: f64,
) -> Dd {
    loss_of_logits(logits(kind, dims, params, embedding, pref), action, adv, beta)
}

/// Central differences of [`loss`] at step `h`, with the perturbation and
/// the quotient carried in double-double. Stages a perturbation cannot reach
/// are reused from the unperturbed pass.
#[allow(clippy::too_many_arguments)]
pub fn central_differences(
    kind: HeadKind,
    dims: &PolicyDims,
    params: &[f64],
    embedding: &[f64],
    pref: PreferenceVector,
    action: usize,
    adv: f64,
    beta: f64,
    h: f64,
) -> Vec<f64> {
    let mut p: Vec<Dd> = params.iter().map(|x| Dd::new(*x)).collect();
    let enc = encoder_len(dims);
    let z = encode(dims, &p, embedding, pref);
    let d_z = z.len();
    let first = enc..enc + dims.head_hidden * (d_z + 1);
    let base_pre = if kind == HeadKind::Mlp {
        affine(&p, &mut enc.clone(), dims.head_hidden, &z)
    } else {
        Vec::new()
    };
    let eval = |p: &[Dd], i: usize| {
        let o = if i < enc {
            logits(kind, dims, p, embedding, pref)
        } else if kind == HeadKind::Mlp {
            let mut pre = base_pre.clone();
            if first.contains(&i) {
                let off = i - enc;
                let r = if off < dims.head_hidden * d_z {
                    off / d_z
                } else {
                    off - dims.head_hidden * d_z
                };
                let w = enc + r * d_z;
                let b = enc + dims.head_hidden * d_z + r;
                pre[r] = (0..d_z).fold(p[b], |acc, c| acc + p[w + c] * z[c]);
            }
            mlp_output(dims, p, &pre)
        } else {
            head(kind, dims, p, &z)
        };
        loss_of_logits(o, action, adv, beta)
    };
    let step = Dd::new(h);
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = eval(&p, i);
            p[i] = orig - step;
            let down = eval(&p, i);
            p[i] = orig;
            (up - down).div(Dd::new(2.0 * h)).to_f64()
        })
        .collect()
}
