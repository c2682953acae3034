//! Multivariate exponential-kernel Hawkes process with one excitation
//! matrix shared by every sequence.
//!
//! ```text
//! lambda_u(t) = mu[u] + sum_{(v, t_i), t_i < t} A[u][v] * beta * exp(-beta (t - t_i))
//! ```
//!
//! Users play the role of marks. Community detection is a surrogate for a
//! latent-community model: maximum likelihood for `mu` and `A` at a fixed
//! `beta`, then k-means on each user's out/in influence profile.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{Event, Sequence};
use crate::rng::{derive_seed, rng};
use crate::{Error, Result};

const PARAMS_MAGIC: &str = "CTES-HAWKES v1";

#[derive(Clone, Debug, PartialEq)]
pub struct HawkesParams {
    pub mu: DVector<f64>,
    /// `a[(u, v)]`: influence of `v`'s events on `u`'s intensity.
    pub a: DMatrix<f64>,
    pub beta: f64,
}

impl HawkesParams {
    pub fn new(mu: Vec<f64>, a: DMatrix<f64>, beta: f64) -> Result<Self> {
        let p = Self { mu: DVector::from_vec(mu), a, beta };
        p.validate()?;
        Ok(p)
    }

    /// Builds from row-major nested rows of `A`.
    pub fn from_rows(mu: Vec<f64>, rows: &[Vec<f64>], beta: f64) -> Result<Self> {
        let u = rows.len();
        if rows.iter().any(|r| r.len() != u) {
            return Err(Error::invalid("excitation matrix must be square"));
        }
        let a = DMatrix::from_fn(u, u, |i, j| rows[i][j]);
        Self::new(mu, a, beta)
    }

    pub fn users(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        let u = self.mu.len();
        if u == 0 {
            return Err(Error::invalid("Hawkes process needs at least one user"));
        }
        if self.a.shape() != (u, u) {
            return Err(Error::invalid(format!("A has shape {:?}, expected ({u}, {u})", self.a.shape())));
        }
        if self.mu.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::invalid("base rates must be positive and finite"));
        }
        if self.a.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid("excitation entries must be non-negative and finite"));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::invalid(format!("decay must be positive, got {}", self.beta)));
        }
        Ok(())
    }

    /// Largest eigenvalue modulus of `A`.
    pub fn spectral_radius(&self) -> f64 {
        self.a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Long-run event rate per user, `(I - A)^-1 mu`.
    pub fn stationary_rates(&self) -> Result<DVector<f64>> {
        self.check_stable()?;
        let m = DMatrix::identity(self.users(), self.users()) - &self.a;
        m.lu().solve(&self.mu).ok_or_else(|| Error::invalid("I - A is singular"))
    }

    fn check_stable(&self) -> Result<()> {
        let rho = self.spectral_radius();
        if rho >= 1.0 {
            return Err(Error::invalid(format!("excitation matrix is unstable (spectral radius {rho:.4} >= 1)")));
        }
        Ok(())
    }

    /// Intensity of user `u` at time `t` given `(user, time)` history.
    pub fn intensity(&self, history: &[(usize, f64)], u: usize, t: f64) -> Result<f64> {
        self.check_user(u)?;
        let mut lam = self.mu[u];
        for &(v, ti) in history {
            self.check_user(v)?;
            if ti > t {
                return Err(Error::invalid(format!("history event at {ti} is later than query time {t}")));
            }
            lam += self.a[(u, v)] * self.beta * (-self.beta * (t - ti)).exp();
        }
        Ok(lam)
    }

    fn check_user(&self, u: usize) -> Result<()> {
        if u >= self.users() {
            return Err(Error::invalid(format!("user {u} outside 0..{}", self.users())));
        }
        Ok(())
    }

    /// One realization on `[0, horizon]` by Ogata thinning. Marks are users.
    /// The returned sequence can be empty.
    pub fn simulate(&self, horizon: f64, seed: u64) -> Result<Sequence> {
        self.validate()?;
        self.check_stable()?;
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        let n = self.users();
        let mut r = rng(seed);
        // excitation part of each user's intensity at the current time
        let mut exc = vec![0.0; n];
        let mut t = 0.0;
        let mut events = Vec::new();
        loop {
            let bound: f64 = self.mu.iter().zip(&exc).map(|(m, e)| m + e).sum();
            let w = Exp::new(bound).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut r);
            t += w;
            if t > horizon {
                break;
            }
            let decay = (-self.beta * w).exp();
            exc.iter_mut().for_each(|e| *e *= decay);
            let lam: Vec<f64> = self.mu.iter().zip(&exc).map(|(m, e)| m + e).collect();
            let total: f64 = lam.iter().sum();
            let u: f64 = r.random();
            if u * bound > total {
                continue;
            }
            let pick = r.random::<f64>() * total;
            let mut acc = 0.0;
            let mut user = n - 1;
            for (i, l) in lam.iter().enumerate() {
                acc += l;
                if pick < acc {
                    user = i;
                    break;
                }
            }
            for (i, e) in exc.iter_mut().enumerate() {
                *e += self.a[(i, user)] * self.beta;
            }
            events.push(Event::new(user, t));
        }
        Ok(Sequence { id: format!("hawkes{seed}"), events, region: None })
    }

    /// `count` independent realizations, sequence `i` seeded from
    /// `derive_seed(seed, [i])`.
    pub fn simulate_many(&self, count: usize, horizon: f64, seed: u64) -> Result<Vec<Sequence>> {
        (0..count)
            .map(|i| {
                let mut s = self.simulate(horizon, derive_seed(seed, &[i as u64]))?;
                s.id = format!("seq{i}");
                Ok(s)
            })
            .collect()
    }

    /// Textual file: header, user count, decay, base rates, then `A` row by row.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let row = |xs: &mut dyn Iterator<Item = f64>| {
            let mut s = String::new();
            for (i, x) in xs.enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{x:?}");
            }
            s
        };
        writeln!(w, "{PARAMS_MAGIC}")?;
        writeln!(w, "users {}", self.users())?;
        writeln!(w, "beta {:?}", self.beta)?;
        writeln!(w, "mu {}", row(&mut self.mu.iter().copied()))?;
        for i in 0..self.users() {
            writeln!(w, "A {}", row(&mut self.a.row(i).iter().copied()))?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(Error::Parse { line: 0, msg: format!("missing {what}") }),
            }
        };
        let (ln, head) = next("header")?;
        if head.trim() != PARAMS_MAGIC {
            return Err(Error::Parse { line: ln, msg: format!("expected `{PARAMS_MAGIC}`, found `{head}`") });
        }
        let field = |(ln, line): (usize, String), key: &str| -> Result<Vec<f64>> {
            let rest = line
                .strip_prefix(key)
                .ok_or_else(|| Error::Parse { line: ln, msg: format!("expected `{key}` line") })?;
            rest.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Parse { line: ln, msg: format!("`{t}`: {e}") }))
                .collect()
        };
        let users = field(next("users")?, "users ")?;
        let n = match users.as_slice() {
            [u] if *u >= 1.0 && u.fract() == 0.0 => *u as usize,
            _ => return Err(Error::Parse { line: 2, msg: "bad user count".into() }),
        };
        let beta = field(next("beta")?, "beta ")?;
        let mu = field(next("mu")?, "mu ")?;
        if beta.len() != 1 || mu.len() != n {
            return Err(Error::Parse { line: 3, msg: "bad beta or mu line".into() });
        }
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, l) = next("row of A")?;
            let row = field((ln, l), "A ")?;
            if row.len() != n {
                return Err(Error::Parse { line: ln, msg: format!("row has {} entries, expected {n}", row.len()) });
            }
            rows.push(row);
        }
        Self::from_rows(mu, &rows, beta[0])
    }
}

fn check_sequences(seqs: &[Sequence], users: usize, horizon: f64) -> Result<()> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
    }
    for s in seqs {
        for (i, e) in s.events.iter().enumerate() {
            if e.mark >= users {
                return Err(Error::MalformedSequence { seq: s.id.clone(), index: i, reason: format!("user {} outside 0..{users}", e.mark) });
            }
            if e.time > horizon {
                return Err(Error::MalformedSequence { seq: s.id.clone(), index: i, reason: format!("time {} beyond horizon {horizon}", e.time) });
            }
            if i > 0 && !(s.events[i - 1].time < e.time) {
                return Err(Error::MalformedSequence { seq: s.id.clone(), index: i, reason: "times must increase".into() });
            }
        }
    }
    Ok(())
}

/// Negative log-likelihood of `seqs`, each observed on `[0, horizon]`,
/// with the compensator in closed form.
pub fn nll(params: &HawkesParams, seqs: &[Sequence], horizon: f64) -> Result<f64> {
    params.validate()?;
    check_sequences(seqs, params.users(), horizon)?;
    let n = params.users();
    let beta = params.beta;
    let mut total = 0.0;
    for s in seqs {
        let mut exc = vec![0.0; n];
        let mut last = 0.0;
        for e in &s.events {
            let decay = (-beta * (e.time - last)).exp();
            exc.iter_mut().for_each(|x| *x *= decay);
            last = e.time;
            let lam = params.mu[e.mark] + exc[e.mark];
            total -= lam.ln();
            for (u, x) in exc.iter_mut().enumerate() {
                *x += params.a[(u, e.mark)] * beta;
            }
            let tail = 1.0 - (-beta * (horizon - e.time)).exp();
            total += params.a.column(e.mark).sum() * tail;
        }
        total += horizon * params.mu.sum();
    }
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("Hawkes NLL {total}")));
    }
    Ok(total)
}

/// Data-only statistics that make the NLL linear in `A` inside each log.
///
/// For user `u`, `kernels[u]` has one row per event of `u` holding
/// `sum_{j < i, v_j = v} beta exp(-beta (t_i - t_j))` for every `v`;
/// `tails[v]` is `sum_{i: v_i = v} (1 - exp(-beta (T - t_i)))`.
#[derive(Clone, Debug)]
pub struct HawkesFeatures {
    pub users: usize,
    pub beta: f64,
    pub kernels: Vec<Tensor>,
    pub tails: Tensor,
    /// Total observed time, `sequences * horizon`.
    pub exposure: f64,
    pub events: usize,
}

impl HawkesFeatures {
    pub fn new(seqs: &[Sequence], users: usize, beta: f64, horizon: f64) -> Result<Self> {
        if users == 0 {
            return Err(Error::invalid("need at least one user"));
        }
        if !(beta > 0.0) {
            return Err(Error::invalid(format!("decay must be positive, got {beta}")));
        }
        check_sequences(seqs, users, horizon)?;
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); users];
        let mut tails = vec![0.0; users];
        let mut events = 0;
        for s in seqs {
            let mut state = vec![0.0; users];
            let mut last = 0.0;
            for e in &s.events {
                let decay = (-beta * (e.time - last)).exp();
                state.iter_mut().for_each(|x| *x *= decay);
                last = e.time;
                rows[e.mark].extend_from_slice(&state);
                state[e.mark] += beta;
                tails[e.mark] += 1.0 - (-beta * (horizon - e.time)).exp();
                events += 1;
            }
        }
        let kernels = rows.into_iter().map(|r| Tensor::from_vec(r.len() / users, users, r)).collect();
        Ok(Self { users, beta, kernels, tails: Tensor::vector(tails), exposure: seqs.len() as f64 * horizon, events })
    }
}

/// Trainable `mu = softplus(raw_mu)`, `A = softplus(raw_a)`.
#[derive(Clone, Debug)]
pub struct HawkesNet {
    pub raw_mu: ParamId,
    pub raw_a: ParamId,
    pub users: usize,
}

fn inv_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

impl HawkesNet {
    pub fn new(store: &mut ParamStore, mu: &[f64], a: &DMatrix<f64>) -> Result<Self> {
        let users = mu.len();
        let raw_mu = store.add("hawkes.mu", Tensor::vector(mu.iter().map(|&m| inv_softplus(m)).collect()))?;
        let data = (0..users * users).map(|k| inv_softplus(a[(k / users, k % users)])).collect();
        let raw_a = store.add("hawkes.a", Tensor::from_vec(users, users, data))?;
        Ok(Self { raw_mu, raw_a, users })
    }

    /// Total NLL over the sequences summarized in `f`.
    pub fn nll_var(&self, tape: &mut Tape, store: &ParamStore, f: &HawkesFeatures) -> Result<Var> {
        let rm = tape.param(store, self.raw_mu);
        let mu = tape.softplus(rm);
        let ra = tape.param(store, self.raw_a);
        let a = tape.softplus(ra);
        let sum_mu = tape.sum(mu);
        let mut total = tape.scale(sum_mu, f.exposure);
        let tails = tape.constant(f.tails.clone());
        let comp = tape.matvec(a, tails)?;
        let comp = tape.sum(comp);
        total = tape.add(total, comp)?;
        for (u, k) in f.kernels.iter().enumerate() {
            if k.rows() == 0 {
                continue;
            }
            let kv = tape.constant(k.clone());
            let row = tape.row(a, u)?;
            let exc = tape.matvec(kv, row)?;
            let mu_u = tape.pick(mu, u)?;
            let lam = tape.add(exc, mu_u)?;
            let log = tape.log(lam)?;
            let s = tape.sum(log);
            total = tape.sub(total, s)?;
        }
        Ok(total)
    }

    pub fn params(&self, store: &ParamStore, beta: f64) -> Result<HawkesParams> {
        let sp = |x: f64| if x > 30.0 { x } else { x.exp().ln_1p() };
        let mu = store.value(self.raw_mu).data().iter().map(|&x| sp(x)).collect();
        let a = DMatrix::from_row_slice(self.users, self.users, store.value(self.raw_a).data()).map(sp);
        HawkesParams::new(mu, a, beta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HawkesFitConfig {
    /// Fixed kernel decay.
    pub beta: f64,
    /// Full-batch Adam steps.
    pub steps: usize,
    pub lr: f64,
    /// Starting value of every entry of `A` before seeded jitter.
    pub init_a: f64,
    pub seed: u64,
}

impl Default for HawkesFitConfig {
    fn default() -> Self {
        Self { beta: 1.0, steps: 800, lr: 0.05, init_a: 0.1, seed: 0 }
    }
}

/// Maximum-likelihood `mu` and `A` at fixed decay. Returns the fitted
/// parameters and the per-event NLL after every step.
pub fn fit_mle(seqs: &[Sequence], users: usize, horizon: f64, cfg: &HawkesFitConfig) -> Result<(HawkesParams, Vec<f64>)> {
    if seqs.is_empty() {
        return Err(Error::invalid("no sequences to fit"));
    }
    if !(cfg.lr > 0.0) || !(cfg.init_a > 0.0) {
        return Err(Error::invalid("lr and init_a must be positive"));
    }
    let f = HawkesFeatures::new(seqs, users, cfg.beta, horizon)?;
    if f.events == 0 {
        return Err(Error::invalid("sequences contain no events"));
    }
    let mut r = rng(cfg.seed);
    let mut counts = vec![0usize; users];
    for s in seqs {
        for e in &s.events {
            counts[e.mark] += 1;
        }
    }
    // half the empirical rate leaves room for excitation
    let mu0: Vec<f64> = counts.iter().map(|&c| (0.5 * c as f64 / f.exposure).max(1e-3)).collect();
    let a0 = DMatrix::from_fn(users, users, |_, _| cfg.init_a / users as f64 * r.random_range(0.5..1.5));
    let mut store = ParamStore::new();
    let net = HawkesNet::new(&mut store, &mu0, &a0)?;
    let adam = Adam { lr: cfg.lr, ..Adam::default() };
    let scale = 1.0 / f.events as f64;
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let l = net.nll_var(&mut tape, &store, &f)?;
        let l = tape.scale(l, scale);
        let v = tape.scalar(l);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("Hawkes NLL at step {step}")));
        }
        trace.push(v);
        tape.backward(l, &mut store)?;
        store.adam_step(&adam)?;
    }
    Ok((net.params(&store, cfg.beta)?, trace))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommunityAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
}

const KMEANS_RESTARTS: u64 = 10;
const KMEANS_ITERS: usize = 100;

/// Out/in influence profile of each user, `[A[u, :], A[:, u]]`, scaled to
/// unit Euclidean norm (all-zero profiles stay zero).
pub fn influence_profiles(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows())
        .map(|u| {
            let mut f: Vec<f64> = a.row(u).iter().chain(a.column(u).iter()).copied().collect();
            let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                f.iter_mut().for_each(|x| *x /= norm);
            }
            f
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One k-means run with k-means++ seeding. Returns labels and WCSS.
fn kmeans<R: Rng>(points: &[Vec<f64>], k: usize, r: &mut R) -> (Vec<usize>, f64) {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = vec![points[r.random_range(0..n)].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points.iter().map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d.iter().sum();
        let idx = if total > 0.0 {
            let pick = r.random::<f64>() * total;
            let mut acc = 0.0;
            d.iter().position(|x| {
                acc += x;
                pick < acc
            })
            .unwrap_or(n - 1)
        } else {
            r.random_range(0..n)
        };
        centers.push(points[idx].clone());
    }
    let nearest = |p: &[f64], centers: &[Vec<f64>]| {
        let mut best = (0, f64::INFINITY);
        for (j, c) in centers.iter().enumerate() {
            let d = sq_dist(p, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    };
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_ITERS {
        let new: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        if new == labels {
            break;
        }
        labels = new;
        for (j, c) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(p, _)| p).collect();
            // an emptied cluster keeps its old center
            if members.is_empty() {
                continue;
            }
            for (d, x) in c.iter_mut().enumerate() {
                *x = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    let wcss = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    (labels, wcss)
}

/// Renumbers labels in order of first appearance.
fn canonical(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

/// Clusters users by influence profile into `k` communities (best of ten
/// seeded k-means++ restarts by within-cluster sum of squares).
pub fn assign_communities(a: &DMatrix<f64>, k: usize, seed: u64) -> Result<CommunityAssignment> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::invalid("excitation matrix must be square"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("need 1 <= K <= {n} users, got K = {k}")));
    }
    let points = influence_profiles(a);
    let mut best: Option<(Vec<usize>, f64)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let (labels, wcss) = kmeans(&points, k, &mut rng(derive_seed(seed, &[restart])));
        if best.as_ref().is_none_or(|b| wcss < b.1) {
            best = Some((labels, wcss));
        }
    }
    let (labels, _) = best.expect("at least one restart");
    Ok(CommunityAssignment { labels: canonical(&labels), k })
}

/// Fraction of users whose label agrees with `truth` under the best
/// one-to-one relabeling (exhaustive over permutations, so keep `k` small).
pub fn label_agreement(labels: &[usize], truth: &[usize], k: usize) -> f64 {
    assert_eq!(labels.len(), truth.len(), "label vectors differ in length");
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    loop {
        let hits = labels.iter().zip(truth).filter(|(&l, &t)| l < k && perm[l] == t).count();
        best = best.max(hits);
        if !next_permutation(&mut perm) {
            break;
        }
    }
    best as f64 / labels.len().max(1) as f64
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}
