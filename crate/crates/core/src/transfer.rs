//! Source training and target fine-tuning.
//!
//! The encoder recurrence and the time/distance heads only see gaps, so
//! they carry over between regions. Mark heads and mark embeddings are
//! vocabulary specific and are drawn afresh for the target.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::data::{Dataset, Sequence};
use crate::encoder::EncoderConfig;
use crate::heads::MarkHead;
use crate::mtpp::{fit_loop, train, MtppModel, MtppNet, TrainConfig, TrainReport};
use crate::rng::{derive_seed, rng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    /// GRU weights, input projection and initial state. The mark embedding
    /// belongs to [`Component::MarkHead`].
    Encoder,
    TimeHead,
    DistHead,
    /// Mark decoder plus mark embedding.
    MarkHead,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::Encoder, Component::TimeHead, Component::DistHead, Component::MarkHead];

    pub fn name(self) -> &'static str {
        match self {
            Component::Encoder => "encoder",
            Component::TimeHead => "time_head",
            Component::DistHead => "dist_head",
            Component::MarkHead => "mark_head",
        }
    }

    /// Parameter handles of this component within `net`.
    pub fn ids(self, net: &MtppNet) -> Vec<ParamId> {
        match self {
            Component::Encoder => net.encoder.ids().into_iter().filter(|&id| id != net.encoder.embedding).collect(),
            Component::TimeHead => net.time_head.ids().to_vec(),
            Component::DistHead => net.dist_head.as_ref().map(|h| h.ids().to_vec()).unwrap_or_default(),
            Component::MarkHead => {
                let mut v = net.mark_head.ids().to_vec();
                v.push(net.encoder.embedding);
                v
            }
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown component `{s}` (expected encoder, time_head, dist_head or mark_head)")))
    }
}

/// Parses a comma list such as `encoder,time_head`. Empty input means none.
pub fn parse_components(list: &str) -> Result<Vec<Component>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    /// Fine-tuning learning rate is the source rate times this.
    pub lr_multiplier: f64,
    pub freeze: Vec<Component>,
    pub target_epochs: usize,
    pub seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self { lr_multiplier: 0.1, freeze: Vec::new(), target_epochs: 20, seed: 0 }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_multiplier > 0.0) || !self.lr_multiplier.is_finite() {
            return Err(Error::invalid(format!("lr multiplier must be positive, got {}", self.lr_multiplier)));
        }
        if Component::ALL.iter().all(|c| self.freeze.contains(c)) {
            return Err(Error::invalid("every component is frozen; nothing to fine-tune"));
        }
        Ok(())
    }

    fn target_train_config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig { lr: base.lr * self.lr_multiplier, epochs: self.target_epochs, seed: self.seed, ..base.clone() }
    }
}

/// Fresh model trained on the source region.
pub fn train_source(
    source: &Dataset,
    val: Option<&Dataset>,
    encoder: EncoderConfig,
    cfg: &TrainConfig,
    model_seed: u64,
) -> Result<(MtppModel, TrainReport)> {
    if source.is_empty() {
        return Err(Error::invalid("source dataset is empty"));
    }
    let mut model = MtppModel::for_dataset(source, encoder, model_seed)?;
    let report = train(&mut model, source, val, cfg)?;
    Ok((model, report))
}

/// Copy of `source` with the mark embedding and mark head drawn afresh for
/// `vocab`. Everything else is untouched.
pub fn reinit_marks(source: &MtppModel, vocab: Vec<String>, seed: u64) -> Result<MtppModel> {
    if vocab.is_empty() {
        return Err(Error::invalid("target vocabulary is empty"));
    }
    let mut m = source.clone();
    let mut r = rng(derive_seed(seed, &[0x6d61_726b]));
    m.net.encoder.reset_embedding(&mut m.store, vocab.len(), &mut r);
    let d_h = m.net.encoder.config.d_h;
    // draw into a scratch store so the parameter layout stays fixed
    let mut scratch = ParamStore::new();
    let fresh = MarkHead::new(&mut scratch, "tmp", d_h, vocab.len(), &mut r)?;
    m.store.replace(m.net.mark_head.w, scratch.value(fresh.w).clone());
    m.store.replace(m.net.mark_head.b, scratch.value(fresh.b).clone());
    m.net.mark_head.num_marks = vocab.len();
    m.vocab = vocab;
    Ok(m)
}

/// Mean per-event time NLL (the unweighted gap term) over `seqs`.
pub fn mean_time_nll(net: &MtppNet, store: &ParamStore, seqs: &[Sequence]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for s in seqs.iter().filter(|s| s.len() >= 2) {
        let mut tape = Tape::new();
        for t in net.terms_var(&mut tape, store, s)? {
            total += tape.scalar(t.time);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("no sequence with at least two events"));
    }
    Ok(total / n as f64)
}

fn train_on_target(model: &mut MtppModel, target: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainReport> {
    let seqs: Vec<&Sequence> = target.sequences.iter().filter(|s| s.len() >= 2).collect();
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
            let mut mon = |store: &ParamStore| mean_time_nll(&net, store, &v.sequences);
            fit_loop(&mut model.store, seqs.len(), cfg, &names, loss, Some(&mut mon))
        }
        None => fit_loop(&mut model.store, seqs.len(), cfg, &names, loss, None),
    }
}

fn adapt_to(model: &mut MtppModel, target: &Dataset) {
    // a target without locations runs the source model temporal-only
    model.net.spatial = model.net.dist_head.is_some() && target.has_locations;
}

/// Fine-tunes `source` on `target`.
///
/// Marks are re-initialized for the target vocabulary, the components in
/// `cfg.freeze` are held fixed, optimizer moments start from zero and the
/// learning rate is `base.lr * cfg.lr_multiplier`. The validation trace in
/// the report is [`mean_time_nll`] on `val`. Freeze flags are restored on
/// the returned model.
pub fn fine_tune(
    source: &MtppModel,
    target: &Dataset,
    val: Option<&Dataset>,
    base: &TrainConfig,
    cfg: &TransferConfig,
) -> Result<(MtppModel, TrainReport)> {
    cfg.validate()?;
    if target.is_empty() || target.sequences.iter().all(|s| s.len() < 2) {
        return Err(Error::invalid("target dataset has no sequence with at least two events"));
    }
    let mut model = reinit_marks(source, target.vocab.clone(), cfg.seed)?;
    adapt_to(&mut model, target);
    model.store.reset_optimizer();
    let before: Vec<(ParamId, bool)> = model.store.ids().map(|id| (id, model.store.is_frozen(id))).collect();
    for c in &cfg.freeze {
        for id in c.ids(&model.net) {
            model.store.set_frozen(id, true);
        }
    }
    let tcfg = cfg.target_train_config(base);
    let report = train_on_target(&mut model, target, val, &tcfg);
    for (id, f) in before {
        model.store.set_frozen(id, f);
    }
    Ok((model, report?))
}

/// From-scratch baseline on the target with the same schedule as
/// [`fine_tune`] (full learning rate, nothing frozen).
pub fn train_from_scratch(
    target: &Dataset,
    val: Option<&Dataset>,
    encoder: EncoderConfig,
    base: &TrainConfig,
    epochs: usize,
    seed: u64,
) -> Result<(MtppModel, TrainReport)> {
    let mut model = MtppModel::for_dataset(target, encoder, seed)?;
    let cfg = TrainConfig { epochs, seed, ..base.clone() };
    let report = train_on_target(&mut model, target, val, &cfg)?;
    Ok((model, report))
}

/// First epoch (1-based) whose value is at or below `threshold`.
pub fn epochs_to_threshold(trace: &[f64], threshold: f64) -> Option<usize> {
    trace.iter().position(|&v| v <= threshold).map(|i| i + 1)
}
