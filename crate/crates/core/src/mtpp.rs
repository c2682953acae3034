//! Fully observed neural MTPP.
//!
//! The history state `s_k` (after consuming events `0..=k`) conditions three
//! decoders for event `k + 1`: a categorical over marks, a log-normal over
//! the inter-arrival time and, for spatial data, a log-normal over the
//! distance to the previous location. The per-sequence loss is
//!
//! ```text
//! nll = - sum_{k=1}^{K-1} [ w_mark log p(m_{k+1} | s_k)
//!                         + w_time log p_t(dt_{k+1} | s_k)
//!                         + w_dist log p_d(dd_{k+1} | s_k) ]
//! ```
//!
//! The scoring primitives here work on arbitrary event streams whose gaps
//! may be tape nodes, which is how the missing-event model feeds sampled
//! events through the same likelihood.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, ParamId, ParamStore, Tape, Tensor, Var};
use crate::data::{compute_deltas, Event, Sequence};
use crate::encoder::{Encoder, EncoderConfig};
use crate::heads::{
    lognormal_logpdf_at_var, lognormal_logpdf_var, lognormal_point, lognormal_sample, mark_nll_var, softmax,
    LogNormalHead, LogNormalParams, MarkHead, DIST_FLOOR,
};
use crate::rng::{derive_seed, rng, Noise};
use crate::{Error, Result};

const MODEL_MAGIC: &str = "CTES-MODEL v1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub mark: f64,
    pub time: f64,
    pub dist: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mark: 1.0, time: 1.0, dist: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.mark, self.time, self.dist];
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid(format!("loss weights must be finite and >= 0, got {self:?}")));
        }
        if w.iter().all(|x| *x == 0.0) {
            return Err(Error::invalid("loss weights are all zero"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            clip_norm: Some(5.0),
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::invalid("Adam needs betas in [0, 1) and eps > 0"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::invalid(format!("clip_norm must be positive, got {c}")));
            }
        }
        self.weights.validate()
    }

    pub fn adam(&self) -> Adam {
        Adam { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

/// Per-epoch losses. `val` is empty when no monitor was supplied.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub train: Vec<f64>,
    pub val: Vec<f64>,
}

/// A gap fed to the likelihood: observed, or produced on the tape.
#[derive(Clone, Copy, Debug)]
pub enum Gap {
    Fixed(f64),
    Tape(Var),
}

impl Gap {
    fn log_var(self, tape: &mut Tape) -> Result<Var> {
        match self {
            Gap::Fixed(x) => {
                if !(x > 0.0) {
                    return Err(Error::invalid(format!("gap must be positive, got {x}")));
                }
                Ok(tape.constant_scalar(x.ln()))
            }
            Gap::Tape(v) => Ok(tape.log(v)?),
        }
    }
}

/// Unweighted negative log-likelihood components of one event.
#[derive(Clone, Copy, Debug)]
pub struct TermVars {
    pub mark: Var,
    pub time: Var,
    pub dist: Option<Var>,
}

/// Plain-valued [`TermVars`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventTerms {
    pub mark: f64,
    pub time: f64,
    pub dist: Option<f64>,
}

/// Parameter handles of an MTPP inside some [`ParamStore`].
#[derive(Clone, Debug)]
pub struct MtppNet {
    pub encoder: Encoder,
    pub time_head: LogNormalHead,
    pub dist_head: Option<LogNormalHead>,
    pub mark_head: MarkHead,
    pub weights: LossWeights,
    /// Whether locations enter the features and the loss. Only meaningful
    /// when `dist_head` exists.
    pub spatial: bool,
}

impl MtppNet {
    pub fn new<R: rand::Rng>(
        store: &mut ParamStore,
        prefix: &str,
        num_marks: usize,
        spatial: bool,
        config: EncoderConfig,
        r: &mut R,
    ) -> Result<Self> {
        let encoder = Encoder::new(store, &format!("{prefix}.encoder"), num_marks, config, r)?;
        let time_head = LogNormalHead::new(store, &format!("{prefix}.time"), config.d_h, r)?;
        let dist_head = if spatial {
            Some(LogNormalHead::new(store, &format!("{prefix}.dist"), config.d_h, r)?)
        } else {
            None
        };
        let mark_head = MarkHead::new(store, &format!("{prefix}.mark"), config.d_h, num_marks, r)?;
        Ok(Self { encoder, time_head, dist_head, mark_head, weights: LossWeights::default(), spatial })
    }

    pub fn uses_locations(&self) -> bool {
        self.spatial && self.dist_head.is_some()
    }

    pub fn num_marks(&self) -> usize {
        self.mark_head.num_marks
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut out = self.encoder.ids();
        out.extend(self.time_head.ids());
        if let Some(h) = &self.dist_head {
            out.extend(h.ids());
        }
        out.extend(self.mark_head.ids());
        out
    }

    pub fn initial_state(&self, tape: &mut Tape, store: &ParamStore) -> Var {
        self.encoder.initial_state_var(tape, store)
    }

    /// Feeds one event into the encoder. `gap` is `None` for the first
    /// event of a stream.
    pub fn advance(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: Var,
        mark: usize,
        gap: Option<Gap>,
        dd: Option<f64>,
    ) -> Result<Var> {
        let (log_dt, log_dd1) = match gap {
            None => (tape.constant_scalar(0.0), 0.0),
            Some(g) => {
                let l = g.log_var(tape)?;
                let d = if self.uses_locations() { dd.unwrap_or(0.0).max(0.0).ln_1p() } else { 0.0 };
                (l, d)
            }
        };
        let x = self.encoder.featurize_parts_var(tape, store, mark, log_dt, log_dd1)?;
        self.encoder.step_var(tape, store, state, x)
    }

    /// Unweighted NLL terms of an event with the given gap and distance,
    /// predicted from `state`.
    pub fn score(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        state: Var,
        mark: usize,
        gap: Gap,
        dd: Option<f64>,
    ) -> Result<TermVars> {
        let logits = self.mark_head.logits_var(tape, store, state)?;
        let mark_term = mark_nll_var(tape, logits, mark)?;
        let tp = self.time_head.params_var(tape, store, state)?;
        let lp = match gap {
            Gap::Fixed(x) => lognormal_logpdf_var(tape, x, tp)?,
            Gap::Tape(v) => lognormal_logpdf_at_var(tape, v, tp)?,
        };
        let time = tape.neg(lp);
        let dist = match (&self.dist_head, self.spatial) {
            (Some(head), true) => {
                let d = dd.ok_or_else(|| Error::invalid("spatial model needs a distance for every scored event"))?;
                let dp = head.params_var(tape, store, state)?;
                let lp = lognormal_logpdf_var(tape, d.max(DIST_FLOOR), dp)?;
                Some(tape.neg(lp))
            }
            _ => None,
        };
        Ok(TermVars { mark: mark_term, time, dist })
    }

    /// `w_mark * mark + w_time * time + w_dist * dist`; zero-weight terms
    /// are left out.
    pub fn weigh(&self, tape: &mut Tape, t: TermVars) -> Result<Var> {
        let w = self.weights;
        let mut parts = Vec::with_capacity(3);
        if w.mark != 0.0 {
            parts.push(tape.scale(t.mark, w.mark));
        }
        if w.time != 0.0 {
            parts.push(tape.scale(t.time, w.time));
        }
        if let Some(d) = t.dist {
            if w.dist != 0.0 {
                parts.push(tape.scale(d, w.dist));
            }
        }
        let mut acc = match parts.first() {
            Some(&p) => p,
            None => return Ok(tape.constant_scalar(0.0)),
        };
        for &p in &parts[1..] {
            acc = tape.add(acc, p)?;
        }
        Ok(acc)
    }

    fn check_sequence(&self, seq: &Sequence) -> Result<()> {
        for (i, e) in seq.events.iter().enumerate() {
            if e.mark >= self.num_marks() {
                return Err(Error::MalformedSequence {
                    seq: seq.id.clone(),
                    index: i,
                    reason: format!("mark {} outside model vocabulary of {}", e.mark, self.num_marks()),
                });
            }
        }
        if self.uses_locations() && !seq.has_locations() {
            return Err(Error::invalid(format!("spatial model given sequence `{}` without locations", seq.id)));
        }
        Ok(())
    }

    /// Unweighted per-event terms for events `1..K` as tape nodes.
    pub fn terms_var(&self, tape: &mut Tape, store: &ParamStore, seq: &Sequence) -> Result<Vec<TermVars>> {
        self.check_sequence(seq)?;
        let deltas = compute_deltas(seq)?;
        let mut state = self.initial_state(tape, store);
        let mut out = Vec::with_capacity(seq.len().saturating_sub(1));
        for (k, e) in seq.events.iter().enumerate() {
            let dd = deltas.dd_at(k);
            if k > 0 {
                out.push(self.score(tape, store, state, e.mark, Gap::Fixed(deltas.dt[k]), dd)?);
            }
            if k + 1 < seq.len() {
                let gap = (k > 0).then_some(Gap::Fixed(deltas.dt[k]));
                state = self.advance(tape, store, state, e.mark, gap, dd)?;
            }
        }
        Ok(out)
    }

    /// Weighted sequence NLL, optionally skipping the terms of some events
    /// (`mask[j]` true drops event `j`'s term).
    pub fn sequence_nll_var(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        seq: &Sequence,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        if seq.len() < 2 {
            return Err(Error::invalid(format!("sequence `{}` has no prediction target", seq.id)));
        }
        let terms = self.terms_var(tape, store, seq)?;
        let mut total = tape.constant_scalar(0.0);
        for (j, t) in terms.into_iter().enumerate() {
            if mask.is_some_and(|m| m.get(j + 1).copied().unwrap_or(false)) {
                continue;
            }
            let w = self.weigh(tape, t)?;
            total = tape.add(total, w)?;
        }
        Ok(total)
    }

    /// Encoder state after consuming every event of `seq`.
    pub fn final_state(&self, store: &ParamStore, seq: &Sequence) -> Result<Vec<f64>> {
        if seq.is_empty() {
            return Err(Error::invalid("prefix is empty"));
        }
        self.check_sequence(seq)?;
        let deltas = compute_deltas(seq)?;
        let mut tape = Tape::new();
        let mut state = self.initial_state(&mut tape, store);
        for (k, e) in seq.events.iter().enumerate() {
            let gap = (k > 0).then_some(Gap::Fixed(deltas.dt[k]));
            state = self.advance(&mut tape, store, state, e.mark, gap, deltas.dd_at(k))?;
        }
        Ok(tape.value(state).data().to_vec())
    }

    pub fn predict_from_state(&self, store: &ParamStore, state: &[f64]) -> Result<Prediction> {
        let logits = self.mark_head.logits(store, state)?;
        let probs = softmax(&logits);
        let mark = argmax(&probs);
        let time = self.time_head.params(store, state)?;
        let dist = match (&self.dist_head, self.spatial) {
            (Some(h), true) => Some(h.params(store, state)?),
            _ => None,
        };
        Ok(Prediction {
            mark,
            dt: lognormal_point(time),
            dd: dist.map(lognormal_point),
            mark_probs: probs,
            time,
            dist,
        })
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Next-event prediction from a history state.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Argmax mark.
    pub mark: usize,
    /// Median inter-arrival time.
    pub dt: f64,
    /// Median distance, for spatial models.
    pub dd: Option<f64>,
    pub mark_probs: Vec<f64>,
    pub time: LogNormalParams,
    pub dist: Option<LogNormalParams>,
}

impl Prediction {
    /// Whether `mark` is among the `k` most probable marks (ties broken
    /// toward lower indices).
    pub fn in_top_k(&self, mark: usize, k: usize) -> bool {
        let p = self.mark_probs[mark];
        let better = self
            .mark_probs
            .iter()
            .enumerate()
            .filter(|&(i, &q)| q > p || (q == p && i < mark))
            .count();
        better < k
    }
}

/// How a rollout picks marks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarkChoice {
    Sample,
    Argmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    vocab: Vec<String>,
    encoder: EncoderConfig,
    spatial_head: bool,
    spatial: bool,
    weights: LossWeights,
}

/// An MTPP together with its parameters and vocabulary.
#[derive(Clone, Debug)]
pub struct MtppModel {
    pub store: ParamStore,
    pub net: MtppNet,
    pub vocab: Vec<String>,
}

impl MtppModel {
    pub fn new(vocab: Vec<String>, spatial: bool, config: EncoderConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let net = MtppNet::new(&mut store, "p", vocab.len(), spatial, config, &mut rng(seed))?;
        Ok(Self { store, net, vocab })
    }

    /// Model shaped for a dataset: vocabulary and spatial head follow it.
    pub fn for_dataset(ds: &crate::data::Dataset, config: EncoderConfig, seed: u64) -> Result<Self> {
        Self::new(ds.vocab.clone(), ds.has_locations, config, seed)
    }

    pub fn num_marks(&self) -> usize {
        self.net.num_marks()
    }

    /// Zeroes and freezes the state weights of the time and distance
    /// heads, leaving history-independent log-normals fitted via biases.
    pub fn make_heads_constant(&mut self) {
        let mut heads = vec![&self.net.time_head];
        if let Some(h) = &self.net.dist_head {
            heads.push(h);
        }
        for h in heads {
            for id in [h.w_mu, h.w_var] {
                self.store.value_mut(id).fill(0.0);
                self.store.set_frozen(id, true);
            }
        }
    }

    /// Copy with the distance head and its loss switched off.
    pub fn temporal_only_mode(&self) -> Self {
        let mut m = self.clone();
        m.net.spatial = false;
        m
    }

    /// Copy with the distance head switched back on (when one exists).
    pub fn spatial_mode(&self) -> Self {
        let mut m = self.clone();
        m.net.spatial = true;
        m
    }

    pub fn check_vocab(&self, vocab: &[String]) -> Result<()> {
        if self.vocab != vocab {
            return Err(Error::VocabMismatch(format!(
                "model has {} marks {:?}, data has {} marks {:?}",
                self.vocab.len(),
                abbreviate(&self.vocab),
                vocab.len(),
                abbreviate(vocab)
            )));
        }
        Ok(())
    }

    pub fn sequence_nll(&self, seq: &Sequence) -> Result<f64> {
        let mut tape = Tape::new();
        let v = self.net.sequence_nll_var(&mut tape, &self.store, seq, None)?;
        Ok(tape.scalar(v))
    }

    /// NLL with the terms of the flagged events left out.
    pub fn sequence_nll_masked(&self, seq: &Sequence, mask: &[bool]) -> Result<f64> {
        let mut tape = Tape::new();
        let v = self.net.sequence_nll_var(&mut tape, &self.store, seq, Some(mask))?;
        Ok(tape.scalar(v))
    }

    /// Unweighted NLL components for events `1..K`.
    pub fn event_terms(&self, seq: &Sequence) -> Result<Vec<EventTerms>> {
        let mut tape = Tape::new();
        let terms = self.net.terms_var(&mut tape, &self.store, seq)?;
        Ok(terms
            .into_iter()
            .map(|t| EventTerms { mark: tape.scalar(t.mark), time: tape.scalar(t.time), dist: t.dist.map(|d| tape.scalar(d)) })
            .collect())
    }

    pub fn predict_next(&self, prefix: &Sequence) -> Result<Prediction> {
        let state = self.net.final_state(&self.store, prefix)?;
        self.net.predict_from_state(&self.store, &state)
    }

    /// Predictions for events `1..K`, each from its own prefix, computed in
    /// a single pass.
    pub fn predictions(&self, seq: &Sequence) -> Result<Vec<Prediction>> {
        self.net.check_sequence(seq)?;
        let deltas = compute_deltas(seq)?;
        let mut tape = Tape::new();
        let mut state = self.net.initial_state(&mut tape, &self.store);
        let mut out = Vec::with_capacity(seq.len().saturating_sub(1));
        for (k, e) in seq.events.iter().enumerate().take(seq.len().saturating_sub(1)) {
            let gap = (k > 0).then_some(Gap::Fixed(deltas.dt[k]));
            state = self.net.advance(&mut tape, &self.store, state, e.mark, gap, deltas.dd_at(k))?;
            out.push(self.net.predict_from_state(&self.store, tape.value(state).data())?);
        }
        Ok(out)
    }

    /// Sampled autoregressive rollout of `horizon` events after `prefix`.
    pub fn forecast(&self, prefix: &Sequence, horizon: usize, seed: u64) -> Result<Vec<Event>> {
        self.forecast_with(prefix, horizon, &mut Noise::seeded(seed), MarkChoice::Sample)
    }

    pub fn forecast_with(
        &self,
        prefix: &Sequence,
        horizon: usize,
        noise: &mut Noise,
        marks: MarkChoice,
    ) -> Result<Vec<Event>> {
        let state = self.net.final_state(&self.store, prefix)?;
        rollout(&self.net, &self.store, state, prefix, horizon, noise, marks)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w, "mtpp")?;
        w.flush()?;
        Ok(())
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut W, kind: &str) -> Result<()> {
        let meta = ModelMeta {
            kind: kind.to_string(),
            vocab: self.vocab.clone(),
            encoder: self.net.encoder.config,
            spatial_head: self.net.dist_head.is_some(),
            spatial: self.net.spatial,
            weights: self.net.weights,
        };
        writeln!(w, "{MODEL_MAGIC}")?;
        writeln!(w, "{}", serde_json::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?)?;
        self.store.save(&mut *w)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let (model, kind) = Self::read_header(&mut r)?;
        if kind != "mtpp" {
            return Err(Error::invalid(format!("checkpoint holds a `{kind}` model, expected `mtpp`")));
        }
        let mut model = model;
        let loaded = ParamStore::load(&mut r)?;
        model.store.load_values_from(&loaded)?;
        Ok(model)
    }

    /// Parses the header and rebuilds the architecture with placeholder
    /// values.
    pub(crate) fn read_header<R: BufRead>(r: &mut R) -> Result<(Self, String)> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != MODEL_MAGIC {
            return Err(Error::invalid(format!("not a model checkpoint (header `{}`)", line.trim_end())));
        }
        line.clear();
        r.read_line(&mut line)?;
        let meta: ModelMeta =
            serde_json::from_str(line.trim_end()).map_err(|e| Error::Config(format!("checkpoint metadata: {e}")))?;
        let mut model = Self::new(meta.vocab, meta.spatial_head, meta.encoder, 0)?;
        model.net.spatial = meta.spatial;
        model.net.weights = meta.weights;
        Ok((model, meta.kind))
    }
}

fn abbreviate(v: &[String]) -> Vec<&str> {
    v.iter().take(5).map(String::as_str).collect()
}

/// Unit vector of the last non-zero displacement in `seq`, else `(1, 0)`.
pub fn last_bearing(seq: &Sequence) -> [f64; 2] {
    let locs: Vec<[f64; 2]> = seq.events.iter().filter_map(|e| e.location).collect();
    for w in locs.windows(2).rev() {
        let (dx, dy) = (w[1][0] - w[0][0], w[1][1] - w[0][1]);
        let n = dx.hypot(dy);
        if n > 0.0 {
            return [dx / n, dy / n];
        }
    }
    [1.0, 0.0]
}

/// Smallest float strictly above `t + dt`'s predecessor `t`.
fn advance_time(t: f64, dt: f64) -> f64 {
    let next = t + dt;
    if next > t {
        next
    } else {
        t.next_up()
    }
}

/// Rolls `horizon` events forward from `state`, the encoding of `prefix`.
pub(crate) fn rollout(
    net: &MtppNet,
    store: &ParamStore,
    state: Vec<f64>,
    prefix: &Sequence,
    horizon: usize,
    noise: &mut Noise,
    marks: MarkChoice,
) -> Result<Vec<Event>> {
    if horizon == 0 {
        return Err(Error::invalid("forecast horizon must be at least 1"));
    }
    let last = prefix.events.last().ok_or_else(|| Error::invalid("prefix is empty"))?;
    let bearing = last_bearing(prefix);
    let mut t = last.time;
    let mut loc = last.location;
    let mut tape = Tape::new();
    let mut state = tape.constant_vector(state);
    let mut out = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let pred = net.predict_from_state(store, tape.value(state).data())?;
        let dt = lognormal_sample(pred.time, noise.normal()).max(f64::MIN_POSITIVE);
        let mark = match marks {
            MarkChoice::Argmax => pred.mark,
            MarkChoice::Sample => sample_categorical(&pred.mark_probs, noise.uniform()),
        };
        let dd = pred.dist.map(|p| lognormal_sample(p, noise.normal()));
        let new_t = advance_time(t, dt);
        let dt = new_t - t;
        t = new_t;
        if let (Some(l), Some(d)) = (loc.as_mut(), dd) {
            l[0] += d * bearing[0];
            l[1] += d * bearing[1];
        }
        out.push(Event { mark, time: t, location: loc, imputed: false });
        if step + 1 < horizon {
            state = net.advance(&mut tape, store, state, mark, Some(Gap::Fixed(dt)), dd)?;
        }
    }
    Ok(out)
}

/// Inverse-CDF draw from `probs` with a uniform `u`.
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Generic minibatch Adam loop shared by every trainer.
///
/// `loss(tape, store, i, noise_seed)` builds the loss of item `i`; the
/// returned node is divided by the batch size before backpropagation. The
/// epoch's train value is the mean item loss; `monitor` (if any) is called
/// after each epoch.
pub(crate) fn fit_loop<F>(
    store: &mut ParamStore,
    n: usize,
    cfg: &TrainConfig,
    names: &dyn Fn(usize) -> String,
    mut loss: F,
    monitor: Option<&mut dyn FnMut(&ParamStore) -> Result<f64>>,
) -> Result<TrainReport>
where
    F: FnMut(&mut Tape, &ParamStore, usize, u64) -> Result<Var>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::invalid("no trainable sequences"));
    }
    let adam = cfg.adam();
    let mut report = TrainReport::default();
    let mut monitor = monitor;
    store.zero_grad();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng(derive_seed(cfg.seed, &[epoch as u64, 0])));
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            for (j, &i) in batch.iter().enumerate() {
                let noise_seed = derive_seed(cfg.seed, &[epoch as u64, 1, (b * cfg.batch_size + j) as u64]);
                let mut tape = Tape::new();
                let l = loss(&mut tape, store, i, noise_seed)?;
                let value = tape.scalar(l);
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("loss {value} on sequence `{}` in epoch {epoch}", names(i))));
                }
                total += value;
                let scaled = tape.scale(l, 1.0 / batch.len() as f64);
                tape.backward(scaled, store)?;
            }
            if let Some(c) = cfg.clip_norm {
                store.clip_grad_norm(c);
            }
            store.adam_step(&adam).map_err(|e| match e {
                crate::autodiff::AutodiffError::NonFinite(what) => {
                    Error::NonFinite(format!("{what} after batch {b} of epoch {epoch}"))
                }
                other => other.into(),
            })?;
        }
        report.train.push(total / n as f64);
        if let Some(m) = monitor.as_mut() {
            report.val.push(m(store)?);
        }
    }
    Ok(report)
}

/// Mean over sequences of the per-event weighted NLL.
pub fn mean_nll(net: &MtppNet, store: &ParamStore, seqs: &[Sequence]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for s in seqs.iter().filter(|s| s.len() >= 2) {
        let mut tape = Tape::new();
        let v = net.sequence_nll_var(&mut tape, store, s, None)?;
        total += tape.scalar(v) / (s.len() - 1) as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("no sequence with at least two events"));
    }
    Ok(total / n as f64)
}

/// Trains `model` on the sequences of `train` with at least two events.
/// `val`, when given, is scored after every epoch.
pub fn train(
    model: &mut MtppModel,
    train: &crate::data::Dataset,
    val: Option<&crate::data::Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    model.check_vocab(&train.vocab)?;
    if train.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let seqs: Vec<&Sequence> = train.sequences.iter().filter(|s| s.len() >= 2).collect();
    model.net.weights = cfg.weights;
    let net = model.net.clone();
    let names = |i: usize| seqs[i].id.clone();
    let loss = |tape: &mut Tape, store: &ParamStore, i: usize, _noise: u64| -> Result<Var> {
        let s = seqs[i];
        let v = net.sequence_nll_var(tape, store, s, None)?;
        Ok(tape.scale(v, 1.0 / (s.len() - 1) as f64))
    };
    match val {
        Some(v) => {
            model.check_vocab(&v.vocab)?;
            let mut mon = |store: &ParamStore| mean_nll(&net, store, &v.sequences);
            fit_loop(&mut model.store, seqs.len(), cfg, &names, loss, Some(&mut mon))
        }
        None => fit_loop(&mut model.store, seqs.len(), cfg, &names, loss, None),
    }
}

/// Initializes a head's bias so it starts at `LogNormal(mu, sigma2)`.
pub(crate) fn set_head_bias(store: &mut ParamStore, head: &LogNormalHead, mu: f64, sigma2: f64) {
    store.replace(head.b_mu, Tensor::scalar(mu));
    let pre = (sigma2 - crate::heads::SIGMA2_FLOOR).max(1e-9);
    // inverse softplus
    let raw = if pre > 30.0 { pre } else { pre.exp_m1().ln() };
    store.replace(head.b_var, Tensor::scalar(raw));
}
