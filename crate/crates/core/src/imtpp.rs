//! MTPP with latent missing events.
//!
//! Two processes share one parameter store. `p` is an [`MtppNet`] that
//! consumes the interleaved stream of observed and sampled missing events
//! and scores each observed event. `q` is a posterior over the missing
//! events of one observed gap: a separate encoder over the same stream whose
//! heads also see the featurized next observed event (its mark, the time
//! still remaining until it, and its distance).
//!
//! Missing events in a gap `(t_k, t_{k+1})` are drawn one at a time from
//! `q`; a draw landing at or after `t_{k+1}` is discarded and ends the gap.
//! The training objective is the single-sample estimate
//!
//! ```text
//! elbo = sum_k log p(e_{k+1} | observed and sampled history)
//!      - sum_{accepted eps} [ KL(q_time || prior) + KL(q_mark || uniform) ]
//! ```
//!
//! [`ImtppModel::elbo_var`] builds it with reparameterized gaps, so the
//! estimate is a differentiable function of the parameters for fixed noise.
//! Training instead follows [`ImtppModel::objective_var`], which estimates
//! the gradient of the expected ELBO with respect to the posterior's gap
//! draws by the score-function method. The pathwise gradient ignores the
//! overshoot rule and drifts toward filling every gap to `max_count`.
//! Sampled marks are not relaxed and get no score-function term.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape, Var};
use crate::data::{compute_deltas, distance, Dataset, Event, Sequence};
use crate::encoder::{Encoder, EncoderConfig};
use crate::heads::{
    kl_categorical_uniform_var, kl_lognormal_var, lognormal_logpdf_var, lognormal_sample_var, softmax, LogNormalHead, LogNormalParams,
    MarkHead,
};
use crate::mtpp::{fit_loop, rollout, sample_categorical, Gap, MarkChoice, MtppModel, MtppNet, TrainConfig, TrainReport};
use crate::rng::{derive_seed, rng, Noise};
use crate::{Error, Result};

/// Cap on missing events drawn per observed gap.
pub const DEFAULT_MAX_COUNT: usize = 8;

/// A latent event strictly inside an observed interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MissingEvent {
    pub mark: usize,
    pub time: f64,
}

/// Posterior network handles.
#[derive(Clone, Debug)]
pub struct Posterior {
    pub encoder: Encoder,
    pub time_head: LogNormalHead,
    pub mark_head: MarkHead,
}

impl Posterior {
    fn new<R: rand::Rng>(store: &mut ParamStore, num_marks: usize, cfg: EncoderConfig, r: &mut R) -> Result<Self> {
        let encoder = Encoder::new(store, "q.encoder", num_marks, cfg, r)?;
        let dim = cfg.d_h + cfg.d_in;
        let time_head = LogNormalHead::new(store, "q.time", dim, r)?;
        let mark_head = MarkHead::new(store, "q.mark", dim, num_marks, r)?;
        Ok(Self { encoder, time_head, mark_head })
    }

    fn advance(&self, tape: &mut Tape, store: &ParamStore, state: Var, mark: usize, gap: Option<Gap>, log_dd1: f64) -> Result<Var> {
        let log_dt = match gap {
            None => tape.constant_scalar(0.0),
            Some(Gap::Fixed(x)) => tape.constant_scalar(x.ln()),
            Some(Gap::Tape(v)) => tape.log(v)?,
        };
        let x = self.encoder.featurize_parts_var(tape, store, mark, log_dt, log_dd1)?;
        self.encoder.step_var(tape, store, state, x)
    }
}

/// Tunables of the missing-event model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImtppMeta {
    pub prior_mu: f64,
    pub prior_sigma2: f64,
    pub max_count: usize,
}

#[derive(Clone, Debug)]
pub struct ImtppModel {
    /// Observed process; its store also holds the posterior's parameters.
    pub p: MtppModel,
    pub q: Posterior,
    /// Fixed prior over missing inter-arrival gaps; marks are uniform.
    pub prior: LogNormalParams,
    pub max_count: usize,
}

/// A time on the tape: the last observed time plus sampled gaps.
#[derive(Clone, Copy, Debug)]
enum Clock {
    Fixed(f64),
    Tape(Var),
}

impl Clock {
    fn value(self, tape: &Tape) -> f64 {
        match self {
            Clock::Fixed(t) => t,
            Clock::Tape(v) => tape.scalar(v),
        }
    }

    /// `until - self`, kept on the tape when `self` is.
    fn gap_to(self, tape: &mut Tape, until: f64) -> Gap {
        match self {
            Clock::Fixed(t) => Gap::Fixed(until - t),
            Clock::Tape(v) => {
                let n = tape.neg(v);
                Gap::Tape(tape.offset(n, until))
            }
        }
    }

    fn plus(self, tape: &mut Tape, delta: Var) -> Result<Clock> {
        Ok(match self {
            Clock::Fixed(t) => Clock::Tape(tape.offset(delta, t)),
            Clock::Tape(v) => Clock::Tape(tape.add(v, delta)?),
        })
    }
}

struct GapDraws {
    p_state: Var,
    q_state: Var,
    clock: Clock,
    kl: Option<Var>,
    /// Log-density of every gap draw of a score-function pass.
    score: Option<Var>,
    missing: Vec<MissingEvent>,
}

/// One observed gap after sampling: the states before the next observed
/// event, its log-likelihood node and the KL of the accepted draws.
struct GapPass {
    p_state: Var,
    q_state: Var,
    clock: Clock,
    log_lik: Var,
    kl: Option<Var>,
    /// Score-function surrogate for the decisions (value 0), when requested.
    surrogate: Option<Var>,
    missing: Vec<MissingEvent>,
}

/// The observed events of a sequence with the distances the models use.
struct Observed<'a> {
    seq: &'a Sequence,
    dd: Option<Vec<f64>>,
}

impl<'a> Observed<'a> {
    fn new(seq: &'a Sequence) -> Result<Self> {
        let deltas = compute_deltas(seq)?;
        Ok(Self { seq, dd: deltas.dd })
    }

    fn dd(&self, k: usize) -> Option<f64> {
        self.dd.as_ref().map(|d| d[k])
    }
}

impl ImtppModel {
    pub fn new(
        vocab: Vec<String>,
        spatial: bool,
        config: EncoderConfig,
        prior: LogNormalParams,
        seed: u64,
    ) -> Result<Self> {
        if !(prior.sigma2 > 0.0) || !prior.mu.is_finite() {
            return Err(Error::invalid(format!("prior needs finite mu and sigma2 > 0, got {prior:?}")));
        }
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let net = MtppNet::new(&mut store, "p", vocab.len(), spatial, config, &mut r)?;
        let q = Posterior::new(&mut store, vocab.len(), config, &mut r)?;
        // start the posterior at the prior's location
        crate::mtpp::set_head_bias(&mut store, &q.time_head, prior.mu, 0.25 * prior.sigma2);
        Ok(Self { p: MtppModel { store, net, vocab }, q, prior, max_count: DEFAULT_MAX_COUNT })
    }

    /// Prior `LogNormal(ln(median gap / 2), 1)` scaled to the dataset.
    pub fn default_prior(ds: &Dataset) -> Result<LogNormalParams> {
        let median = ds.median_gap().ok_or_else(|| Error::invalid("dataset has no observed gaps"))?;
        Ok(LogNormalParams::new((median / 2.0).ln(), 1.0))
    }

    pub fn for_dataset(ds: &Dataset, config: EncoderConfig, seed: u64) -> Result<Self> {
        Self::new(ds.vocab.clone(), ds.has_locations, config, Self::default_prior(ds)?, seed)
    }

    pub fn store(&self) -> &ParamStore {
        &self.p.store
    }

    fn net(&self) -> &MtppNet {
        &self.p.net
    }

    /// Draws missing events after `clock` until one overshoots `next`,
    /// updating both encoders with every accepted draw.
    #[allow(clippy::too_many_arguments)]
    fn sample_gap(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        mut p_state: Var,
        mut q_state: Var,
        start: f64,
        next: &Event,
        next_log_dd1: f64,
        noise: &mut Noise,
        max_count: usize,
        score_function: bool,
    ) -> Result<GapDraws> {
        let mut clock = Clock::Fixed(start);
        let mut kl: Option<Var> = None;
        let mut score: Option<Var> = None;
        let mut missing = Vec::new();
        while missing.len() < max_count {
            let remaining = clock.gap_to(tape, next.time);
            let log_rem = match remaining {
                Gap::Fixed(x) => tape.constant_scalar(x.ln()),
                Gap::Tape(v) => tape.log(v)?,
            };
            let x_next = self.q.encoder.featurize_parts_var(tape, store, next.mark, log_rem, next_log_dd1)?;
            let input = tape.concat(&[q_state, x_next])?;
            let qt = self.q.time_head.params_var(tape, store, input)?;
            let z = noise.normal();
            let u = noise.uniform();
            let delta = lognormal_sample_var(tape, qt, z)?;
            let now = clock.value(tape);
            let step = tape.scalar(delta);
            let cand = now + step;
            let accept = cand < next.time && cand > now;
            let delta = if score_function && step > 0.0 && step.is_finite() {
                // the draw enters the stream as data; its density carries the gradient
                let lp = lognormal_logpdf_var(tape, step, qt)?;
                score = Some(match score {
                    Some(acc) => tape.add(acc, lp)?,
                    None => lp,
                });
                tape.constant_scalar(step)
            } else {
                delta
            };
            if !accept {
                break;
            }
            let logits = self.q.mark_head.logits_var(tape, store, input)?;
            let mark = sample_categorical(&softmax(tape.value(logits).data()), u);
            let k_time = kl_lognormal_var(tape, qt, self.prior)?;
            let k_mark = kl_categorical_uniform_var(tape, logits)?;
            let k = tape.add(k_time, k_mark)?;
            kl = Some(match kl {
                Some(acc) => tape.add(acc, k)?,
                None => k,
            });
            let gap = Some(Gap::Tape(delta));
            p_state = self.net().advance(tape, store, p_state, mark, gap, Some(0.0))?;
            q_state = self.q.advance(tape, store, q_state, mark, gap, 0.0)?;
            clock = clock.plus(tape, delta)?;
            missing.push(MissingEvent { mark, time: cand });
        }
        Ok(GapDraws { p_state, q_state, clock, kl, score, missing })
    }

    /// Samples the gap after observed event `k` and scores event `k + 1`.
    fn gap_pass(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        obs: &Observed,
        k: usize,
        p_state: Var,
        q_state: Var,
        noise: &mut Noise,
        surrogate: bool,
    ) -> Result<GapPass> {
        let (cur, next) = (&obs.seq.events[k], &obs.seq.events[k + 1]);
        let dd_next = obs.dd(k + 1);
        let log_dd1 = if self.net().uses_locations() { dd_next.unwrap_or(0.0).ln_1p() } else { 0.0 };
        // the gap's value with no insertions is the baseline for the decisions
        let baseline = if surrogate {
            let terms = self.net().score(tape, store, p_state, next.mark, Gap::Fixed(next.time - cur.time), dd_next)?;
            let nll = self.net().weigh(tape, terms)?;
            Some(-tape.scalar(nll))
        } else {
            None
        };
        let d =
            self.sample_gap(tape, store, p_state, q_state, cur.time, next, log_dd1, noise, self.max_count, surrogate)?;
        let gap = d.clock.gap_to(tape, next.time);
        let terms = self.net().score(tape, store, d.p_state, next.mark, gap, dd_next)?;
        let nll = self.net().weigh(tape, terms)?;
        let log_lik = tape.neg(nll);
        let surrogate = match (baseline, d.score) {
            (Some(b), Some(dec)) => {
                let value = tape.scalar(log_lik) - d.kl.map_or(0.0, |v| tape.scalar(v));
                let adv = value - b;
                let scaled = tape.scale(dec, adv);
                let v = tape.scalar(scaled);
                Some(tape.offset(scaled, -v))
            }
            _ => None,
        };
        Ok(GapPass { p_state: d.p_state, q_state: d.q_state, clock: d.clock, log_lik, kl: d.kl, surrogate, missing: d.missing })
    }

    /// Feeds observed event `k` (preceded by `clock`) into both encoders.
    fn consume_observed(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        obs: &Observed,
        k: usize,
        clock: Option<Clock>,
        p_state: Var,
        q_state: Var,
    ) -> Result<(Var, Var)> {
        let e = &obs.seq.events[k];
        let gap = clock.map(|c| c.gap_to(tape, e.time));
        let dd = obs.dd(k);
        let p = self.net().advance(tape, store, p_state, e.mark, gap, dd)?;
        let log_dd1 = if self.net().uses_locations() && gap.is_some() { dd.unwrap_or(0.0).ln_1p() } else { 0.0 };
        let q = self.q.advance(tape, store, q_state, e.mark, gap, log_dd1)?;
        Ok((p, q))
    }

    fn check(&self, seq: &Sequence) -> Result<()> {
        if seq.len() < 2 {
            return Err(Error::invalid(format!("sequence `{}` has no prediction target", seq.id)));
        }
        if let Some((i, e)) = seq.events.iter().enumerate().find(|(_, e)| e.mark >= self.p.num_marks()) {
            return Err(Error::MalformedSequence {
                seq: seq.id.clone(),
                index: i,
                reason: format!("mark {} outside model vocabulary", e.mark),
            });
        }
        if self.net().uses_locations() && !seq.has_locations() {
            return Err(Error::invalid(format!("spatial model given sequence `{}` without locations", seq.id)));
        }
        Ok(())
    }

    /// Single-sample ELBO on the tape, plus the sampled missing events of
    /// every gap.
    pub fn elbo_var(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        seq: &Sequence,
        noise: &mut Noise,
    ) -> Result<(Var, Vec<Vec<MissingEvent>>)> {
        let (elbo, _, missing) = self.elbo_core(tape, store, seq, noise, false)?;
        Ok((elbo, missing))
    }

    /// Training objective with the same value as [`ImtppModel::elbo_var`].
    ///
    /// Sampled gaps enter the stream as data, and a zero-valued
    /// score-function term carries their gradient: the log-density of every
    /// draw in a gap (the discarded overshoot included) times that gap's ELBO
    /// contribution minus its value without insertions. Unlike the pathwise
    /// gradient, this sees that shorter draws admit more events.
    pub fn objective_var(&self, tape: &mut Tape, store: &ParamStore, seq: &Sequence, noise: &mut Noise) -> Result<Var> {
        let (elbo, surrogate, _) = self.elbo_core(tape, store, seq, noise, true)?;
        Ok(match surrogate {
            Some(s) => tape.add(elbo, s)?,
            None => elbo,
        })
    }

    fn elbo_core(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        seq: &Sequence,
        noise: &mut Noise,
        with_surrogate: bool,
    ) -> Result<(Var, Option<Var>, Vec<Vec<MissingEvent>>)> {
        self.check(seq)?;
        let obs = Observed::new(seq)?;
        let mut p_state = self.net().initial_state(tape, store);
        let mut q_state = self.q.encoder.initial_state_var(tape, store);
        let mut recon = tape.constant_scalar(0.0);
        let mut kl: Option<Var> = None;
        let mut surrogate: Option<Var> = None;
        let mut clock = None;
        let mut missing = Vec::with_capacity(seq.len() - 1);
        for k in 0..seq.len() - 1 {
            (p_state, q_state) = self.consume_observed(tape, store, &obs, k, clock, p_state, q_state)?;
            let g = self.gap_pass(tape, store, &obs, k, p_state, q_state, noise, with_surrogate)?;
            let ll = tape.value(g.log_lik).item();
            if !ll.is_finite() {
                return Err(Error::NonFinite(format!("log-likelihood of gap {k} in sequence `{}`", seq.id)));
            }
            // the recon term accumulates NLLs in the same order as sequence_nll
            let nll = tape.neg(g.log_lik);
            recon = tape.add(recon, nll)?;
            if let Some(k2) = g.kl {
                kl = Some(match kl {
                    Some(acc) => tape.add(acc, k2)?,
                    None => k2,
                });
            }
            if let Some(sg) = g.surrogate {
                surrogate = Some(match surrogate {
                    Some(acc) => tape.add(acc, sg)?,
                    None => sg,
                });
            }
            (p_state, q_state) = (g.p_state, g.q_state);
            clock = Some(g.clock);
            missing.push(g.missing);
        }
        let mut elbo = tape.neg(recon);
        if let Some(kl) = kl {
            elbo = tape.sub(elbo, kl)?;
        }
        Ok((elbo, surrogate, missing))
    }

    pub fn elbo(&self, seq: &Sequence, noise: &mut Noise) -> Result<f64> {
        let mut tape = Tape::new();
        let (v, _) = self.elbo_var(&mut tape, self.store(), seq, noise)?;
        Ok(tape.scalar(v))
    }

    /// Mean ELBO per predicted event over `samples` noise streams.
    pub fn mean_elbo_per_event(&self, seqs: &[Sequence], samples: usize, seed: u64) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for (i, s) in seqs.iter().enumerate().filter(|(_, s)| s.len() >= 2) {
            let mut acc = 0.0;
            for j in 0..samples.max(1) {
                let mut noise = Noise::seeded(derive_seed(seed, &[i as u64, j as u64]));
                acc += self.elbo(s, &mut noise)?;
            }
            total += acc / samples.max(1) as f64 / (s.len() - 1) as f64;
            n += 1;
        }
        if n == 0 {
            return Err(Error::invalid("no sequence with at least two events"));
        }
        Ok(total / n as f64)
    }

    /// Posterior draws between `e_k` and `e_next` from a given posterior
    /// state (the state after consuming `e_k`).
    pub fn sample_missing_between(
        &self,
        q_state: &[f64],
        e_k: &Event,
        e_next: &Event,
        noise: &mut Noise,
        max_count: usize,
    ) -> Result<Vec<MissingEvent>> {
        if !(e_k.time < e_next.time) {
            return Err(Error::invalid(format!("interval ({}, {}) is empty", e_k.time, e_next.time)));
        }
        let store = self.store();
        let mut tape = Tape::new();
        let q = tape.constant_vector(q_state.to_vec());
        let p = self.net().initial_state(&mut tape, store);
        let log_dd1 = match (self.net().uses_locations(), e_k.location, e_next.location) {
            (true, Some(a), Some(b)) => distance(a, b).ln_1p(),
            _ => 0.0,
        };
        Ok(self.sample_gap(&mut tape, store, p, q, e_k.time, e_next, log_dd1, noise, max_count, false)?.missing)
    }

    /// Posterior state after consuming `seq` without any missing events.
    pub fn posterior_state(&self, seq: &Sequence) -> Result<Vec<f64>> {
        let obs = Observed::new(seq)?;
        let store = self.store();
        let mut tape = Tape::new();
        let mut p = self.net().initial_state(&mut tape, store);
        let mut q = self.q.encoder.initial_state_var(&mut tape, store);
        for k in 0..seq.len() {
            let clock = (k > 0).then(|| Clock::Fixed(seq.events[k - 1].time));
            (p, q) = self.consume_observed(&mut tape, store, &obs, k, clock, p, q)?;
        }
        Ok(tape.value(q).data().to_vec())
    }

    /// Fills every observed gap with the best of `samples_per_gap`
    /// posterior trajectories, ranked by the gap's ELBO contribution.
    pub fn impute(&self, seq: &Sequence, samples_per_gap: usize, seed: u64) -> Result<Sequence> {
        let mut noise = Noise::seeded(seed);
        self.impute_with(seq, samples_per_gap, &mut noise)
    }

    pub fn impute_with(&self, seq: &Sequence, samples_per_gap: usize, noise: &mut Noise) -> Result<Sequence> {
        if samples_per_gap == 0 {
            return Err(Error::invalid("samples_per_gap must be at least 1"));
        }
        let (missing, _) = self.impute_gaps(seq, samples_per_gap, noise)?;
        Ok(merge_imputed(seq, &missing))
    }

    /// Chosen missing events per gap and the encoder state of `p` after the
    /// whole interleaved sequence.
    fn impute_gaps(
        &self,
        seq: &Sequence,
        samples_per_gap: usize,
        noise: &mut Noise,
    ) -> Result<(Vec<Vec<MissingEvent>>, Vec<f64>)> {
        let obs = Observed::new(seq)?;
        if seq.len() == 1 {
            return Ok((Vec::new(), self.net().final_state(self.store(), seq)?));
        }
        self.check(seq)?;
        let store = self.store();
        let mut tape = Tape::new();
        let p0 = self.net().initial_state(&mut tape, store);
        let q0 = self.q.encoder.initial_state_var(&mut tape, store);
        let (p0, q0) = self.consume_observed(&mut tape, store, &obs, 0, None, p0, q0)?;
        let mut p_state = tape.value(p0).data().to_vec();
        let mut q_state = tape.value(q0).data().to_vec();
        let mut chosen = Vec::with_capacity(seq.len() - 1);
        for k in 0..seq.len() - 1 {
            let mut best: Option<(f64, Vec<MissingEvent>, Vec<f64>, Vec<f64>)> = None;
            for _ in 0..samples_per_gap {
                let mut tape = Tape::new();
                let p = tape.constant_vector(p_state.clone());
                let q = tape.constant_vector(q_state.clone());
                let g = self.gap_pass(&mut tape, store, &obs, k, p, q, noise, false)?;
                let mut score = tape.scalar(g.log_lik);
                if let Some(kl) = g.kl {
                    score -= tape.scalar(kl);
                }
                if best.as_ref().is_none_or(|b| score > b.0) {
                    let (p2, q2) =
                        self.consume_observed(&mut tape, store, &obs, k + 1, Some(g.clock), g.p_state, g.q_state)?;
                    best = Some((score, g.missing, tape.value(p2).data().to_vec(), tape.value(q2).data().to_vec()));
                }
            }
            let (_, missing, p2, q2) = best.expect("at least one sample per gap");
            chosen.push(missing);
            p_state = p2;
            q_state = q2;
        }
        Ok((chosen, p_state))
    }

    /// Imputes the prefix, then rolls `p` forward from its state over the
    /// interleaved history.
    pub fn forecast_with_missing(&self, prefix: &Sequence, horizon: usize, seed: u64) -> Result<Vec<Event>> {
        self.forecast_with_missing_with(
            prefix,
            horizon,
            &mut Noise::seeded(derive_seed(seed, &[0x1]),),
            &mut Noise::seeded(seed),
            MarkChoice::Sample,
            1,
        )
    }

    pub fn forecast_with_missing_with(
        &self,
        prefix: &Sequence,
        horizon: usize,
        impute_noise: &mut Noise,
        rollout_noise: &mut Noise,
        marks: MarkChoice,
        samples_per_gap: usize,
    ) -> Result<Vec<Event>> {
        if prefix.is_empty() {
            return Err(Error::invalid("prefix is empty"));
        }
        let (_, state) = self.impute_gaps(prefix, samples_per_gap.max(1), impute_noise)?;
        rollout(self.net(), self.store(), state, prefix, horizon, rollout_noise, marks)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let meta = ImtppMeta { prior_mu: self.prior.mu, prior_sigma2: self.prior.sigma2, max_count: self.max_count };
        // header lines of the observed model, then the posterior metadata
        let mut head = Vec::new();
        self.p.write_to(&mut head, "imtpp")?;
        let text = String::from_utf8(head).map_err(|e| Error::Config(e.to_string()))?;
        let mut lines = text.splitn(3, '\n');
        let (magic, pmeta, params) = (lines.next().unwrap_or(""), lines.next().unwrap_or(""), lines.next().unwrap_or(""));
        writeln!(w, "{magic}")?;
        writeln!(w, "{pmeta}")?;
        writeln!(w, "{}", serde_json::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?)?;
        w.write_all(params.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let (p, kind) = MtppModel::read_header(&mut r)?;
        if kind != "imtpp" {
            return Err(Error::invalid(format!("checkpoint holds a `{kind}` model, expected `imtpp`")));
        }
        let mut line = String::new();
        r.read_line(&mut line)?;
        let meta: ImtppMeta =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::Config(format!("posterior metadata: {e}")))?;
        let prior = LogNormalParams::new(meta.prior_mu, meta.prior_sigma2);
        let mut model = Self::new(p.vocab.clone(), p.net.dist_head.is_some(), p.net.encoder.config, prior, 0)?;
        model.p.net.spatial = p.net.spatial;
        model.p.net.weights = p.net.weights;
        model.max_count = meta.max_count;
        let loaded = ParamStore::load(&mut r)?;
        model.p.store.load_values_from(&loaded)?;
        Ok(model)
    }
}

/// Observed events plus imputed ones (flagged), in time order. In spatial
/// sequences imputed events get locations interpolated linearly in time
/// between the bracketing observed events.
pub fn merge_imputed(seq: &Sequence, missing: &[Vec<MissingEvent>]) -> Sequence {
    let mut events = Vec::with_capacity(seq.len() + missing.iter().map(Vec::len).sum::<usize>());
    for (k, e) in seq.events.iter().enumerate() {
        events.push(e.clone());
        if let (Some(gap), Some(next)) = (missing.get(k), seq.events.get(k + 1)) {
            for m in gap {
                let location = match (e.location, next.location) {
                    (Some(a), Some(b)) => {
                        let w = (m.time - e.time) / (next.time - e.time);
                        Some([a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])])
                    }
                    _ => None,
                };
                events.push(Event { mark: m.mark, time: m.time, location, imputed: true });
            }
        }
    }
    Sequence { id: seq.id.clone(), events, region: seq.region.clone() }
}

/// Variational training; the returned trace holds the mean ELBO per event
/// of each epoch (train) and, with `val`, a held-out ELBO.
pub fn train_imtpp(
    model: &mut ImtppModel,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    model.p.check_vocab(&train.vocab)?;
    if train.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let seqs: Vec<&Sequence> = train.sequences.iter().filter(|s| s.len() >= 2).collect();
    model.p.net.weights = cfg.weights;
    let frozen = model.clone();
    let names = |i: usize| seqs[i].id.clone();
    let loss = |tape: &mut Tape, store: &ParamStore, i: usize, noise_seed: u64| -> Result<Var> {
        let s = seqs[i];
        let mut noise = Noise::seeded(noise_seed);
        let obj = frozen.objective_var(tape, store, s, &mut noise)?;
        Ok(tape.scale(obj, -1.0 / (s.len() - 1) as f64))
    };
    let val_seed = derive_seed(cfg.seed, &[0x7661_6c]);
    let mut report = match val {
        Some(v) => {
            model.p.check_vocab(&v.vocab)?;
            let mut mon = |store: &ParamStore| {
                let mut m = frozen.clone();
                m.p.store = store.clone();
                m.mean_elbo_per_event(&v.sequences, 1, val_seed)
            };
            fit_loop(&mut model.p.store, seqs.len(), cfg, &names, loss, Some(&mut mon))?
        }
        None => fit_loop(&mut model.p.store, seqs.len(), cfg, &names, loss, None)?,
    };
    report.train.iter_mut().for_each(|x| *x = -*x);
    Ok(report)
}
