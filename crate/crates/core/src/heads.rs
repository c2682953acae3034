//! Decoders over the history state.
//!
//! [`LogNormalHead`] maps a state `s` to `(mu, sigma2)` of a log-normal over
//! a positive gap: `mu = W1 s + b1`, `sigma2 = softplus(W2 s + b2) + 1e-6`.
//! The same head type serves inter-arrival times and inter-event distances.
//! [`MarkHead`] is an affine map to mark logits.
//!
//! Each quantity has a plain `f64` form and a tape form (suffix `_var`) that
//! keeps gradients.

use std::f64::consts::PI;

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::{Error, Result};

/// Floor added to the softplus output so `sigma2` is strictly positive.
pub const SIGMA2_FLOOR: f64 = 1e-6;
/// Zero distances are raised to this before evaluating a log-density.
pub const DIST_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma2: f64,
}

impl LogNormalParams {
    pub fn new(mu: f64, sigma2: f64) -> Self {
        debug_assert!(sigma2 > 0.0);
        Self { mu, sigma2 }
    }
}

/// `(mu, sigma2)` as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct LogNormalVars {
    pub mu: Var,
    pub sigma2: Var,
}

impl LogNormalVars {
    pub fn value(&self, tape: &Tape) -> LogNormalParams {
        LogNormalParams { mu: tape.scalar(self.mu), sigma2: tape.scalar(self.sigma2) }
    }
}

pub(crate) fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

#[derive(Clone, Debug)]
pub struct LogNormalHead {
    pub w_mu: ParamId,
    pub b_mu: ParamId,
    pub w_var: ParamId,
    pub b_var: ParamId,
    pub dim: usize,
}

impl LogNormalHead {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) -> Result<Self> {
        let b = init_bound(dim);
        Ok(Self {
            w_mu: store.add_uniform(format!("{prefix}.w_mu"), 1, dim, b, rng)?,
            b_mu: store.add_uniform(format!("{prefix}.b_mu"), 1, 1, b, rng)?,
            w_var: store.add_uniform(format!("{prefix}.w_var"), 1, dim, b, rng)?,
            b_var: store.add_uniform(format!("{prefix}.b_var"), 1, 1, b, rng)?,
            dim,
        })
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.w_mu, self.b_mu, self.w_var, self.b_var]
    }

    pub fn params_var(&self, tape: &mut Tape, store: &ParamStore, s: Var) -> Result<LogNormalVars> {
        let w_mu = tape.param(store, self.w_mu);
        let b_mu = tape.param(store, self.b_mu);
        let w_var = tape.param(store, self.w_var);
        let b_var = tape.param(store, self.b_var);
        let mu = tape.affine(w_mu, s, b_mu)?;
        let mu = tape.pick(mu, 0)?;
        let pre = tape.affine(w_var, s, b_var)?;
        let pre = tape.pick(pre, 0)?;
        let sp = tape.softplus(pre);
        let sigma2 = tape.offset(sp, SIGMA2_FLOOR);
        Ok(LogNormalVars { mu, sigma2 })
    }

    pub fn params(&self, store: &ParamStore, s: &[f64]) -> Result<LogNormalParams> {
        let mut tape = Tape::new();
        let sv = tape.constant_vector(s.to_vec());
        Ok(self.params_var(&mut tape, store, sv)?.value(&tape))
    }
}

pub fn lognormal_logpdf(x: f64, p: LogNormalParams) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::invalid(format!("log-normal density needs x > 0, got {x}")));
    }
    let lx = x.ln();
    Ok(-lx - 0.5 * (2.0 * PI * p.sigma2).ln() - (lx - p.mu).powi(2) / (2.0 * p.sigma2))
}

/// Tape form of [`lognormal_logpdf`] for an observed `x`.
pub fn lognormal_logpdf_var(tape: &mut Tape, x: f64, p: LogNormalVars) -> Result<Var> {
    if !(x > 0.0) {
        return Err(Error::invalid(format!("log-normal density needs x > 0, got {x}")));
    }
    let lx = x.ln();
    // -lx - 0.5 ln(2 pi) - 0.5 ln(sigma2) - (lx - mu)^2 / (2 sigma2)
    let log_s2 = tape.log(p.sigma2)?;
    let half_log = tape.scale(log_s2, -0.5);
    let neg_mu = tape.neg(p.mu);
    let resid = tape.offset(neg_mu, lx);
    let sq = tape.mul(resid, resid)?;
    let quad = tape.div(sq, p.sigma2)?;
    let quad = tape.scale(quad, -0.5);
    let sum = tape.add(half_log, quad)?;
    Ok(tape.offset(sum, -lx - 0.5 * (2.0 * PI).ln()))
}

/// Log-density at a gap that is itself a tape node (a reparameterized draw
/// or a difference of sampled times).
pub fn lognormal_logpdf_at_var(tape: &mut Tape, x: Var, p: LogNormalVars) -> Result<Var> {
    let lx = tape.log(x)?;
    let log_s2 = tape.log(p.sigma2)?;
    let half_log = tape.scale(log_s2, -0.5);
    let resid = tape.sub(lx, p.mu)?;
    let sq = tape.mul(resid, resid)?;
    let quad = tape.div(sq, p.sigma2)?;
    let quad = tape.scale(quad, -0.5);
    let sum = tape.add(half_log, quad)?;
    let sum = tape.sub(sum, lx)?;
    Ok(tape.offset(sum, -0.5 * (2.0 * PI).ln()))
}

/// Reparameterized draw `exp(mu + sqrt(sigma2) * noise)`.
pub fn lognormal_sample(p: LogNormalParams, noise: f64) -> f64 {
    (p.mu + p.sigma2.sqrt() * noise).exp()
}

pub fn lognormal_sample_var(tape: &mut Tape, p: LogNormalVars, noise: f64) -> Result<Var> {
    let sd = tape.sqrt(p.sigma2)?;
    let shock = tape.scale(sd, noise);
    let z = tape.add(p.mu, shock)?;
    Ok(tape.exp(z))
}

/// Median `exp(mu)`, the absolute-error-optimal point prediction.
pub fn lognormal_point(p: LogNormalParams) -> f64 {
    p.mu.exp()
}

/// `KL(q || p)` between log-normals, equal to the KL of the underlying normals.
pub fn kl_lognormal(q: LogNormalParams, p: LogNormalParams) -> f64 {
    0.5 * (p.sigma2 / q.sigma2).ln() + (q.sigma2 + (q.mu - p.mu).powi(2)) / (2.0 * p.sigma2) - 0.5
}

/// Tape form of [`kl_lognormal`] with a fixed `p`.
pub fn kl_lognormal_var(tape: &mut Tape, q: LogNormalVars, p: LogNormalParams) -> Result<Var> {
    let log_q = tape.log(q.sigma2)?;
    let a = tape.scale(log_q, -0.5);
    let d = tape.offset(q.mu, -p.mu);
    let d2 = tape.mul(d, d)?;
    let num = tape.add(q.sigma2, d2)?;
    let b = tape.scale(num, 1.0 / (2.0 * p.sigma2));
    let s = tape.add(a, b)?;
    Ok(tape.offset(s, 0.5 * p.sigma2.ln() - 0.5))
}

#[derive(Clone, Debug)]
pub struct MarkHead {
    pub w: ParamId,
    pub b: ParamId,
    pub num_marks: usize,
}

impl MarkHead {
    pub fn new<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, num_marks: usize, rng: &mut R) -> Result<Self> {
        if num_marks == 0 {
            return Err(Error::invalid("mark head needs at least one mark"));
        }
        let bound = init_bound(dim);
        Ok(Self {
            w: store.add_uniform(format!("{prefix}.w"), num_marks, dim, bound, rng)?,
            b: store.add_uniform(format!("{prefix}.b"), num_marks, 1, bound, rng)?,
            num_marks,
        })
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }

    pub fn logits_var(&self, tape: &mut Tape, store: &ParamStore, s: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        Ok(tape.affine(w, s, b)?)
    }

    pub fn logits(&self, store: &ParamStore, s: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let sv = tape.constant_vector(s.to_vec());
        let l = self.logits_var(&mut tape, store, sv)?;
        Ok(tape.value(l).data().to_vec())
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// `logsumexp(logits) - logits[mark]`.
pub fn mark_nll(logits: &[f64], mark: usize) -> Result<f64> {
    if mark >= logits.len() {
        return Err(Error::invalid(format!("mark {mark} out of range for {} marks", logits.len())));
    }
    Ok(logsumexp(logits) - logits[mark])
}

pub fn mark_nll_var(tape: &mut Tape, logits: Var, mark: usize) -> Result<Var> {
    let n = tape.value(logits).len();
    if mark >= n {
        return Err(Error::invalid(format!("mark {mark} out of range for {n} marks")));
    }
    let lse = tape.logsumexp(logits);
    let picked = tape.pick(logits, mark)?;
    Ok(tape.sub(lse, picked)?)
}

/// `KL(q || p)` for probability vectors; terms with `q_i = 0` contribute 0.
pub fn kl_categorical(q: &[f64], p: &[f64]) -> Result<f64> {
    if q.len() != p.len() || q.is_empty() {
        return Err(Error::invalid("categorical KL needs equal, non-empty supports"));
    }
    Ok(q.iter().zip(p).filter(|(qi, _)| **qi > 0.0).map(|(qi, pi)| qi * (qi / pi).ln()).sum())
}

/// `KL(softmax(logits) || uniform)` on the tape: `sum q log q + log |C|`.
pub fn kl_categorical_uniform_var(tape: &mut Tape, logits: Var) -> Result<Var> {
    let n = tape.value(logits).len();
    let lse = tape.logsumexp(logits);
    let log_q = tape.sub(logits, lse)?;
    let q = tape.exp(log_q);
    let ent = tape.dot(q, log_q)?;
    Ok(tape.offset(ent, (n as f64).ln()))
}
