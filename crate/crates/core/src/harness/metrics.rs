//! Evaluation metrics and the report written as `metrics.json`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::data::{compute_deltas, Dataset, Event, Sequence};
use crate::imtpp::ImtppModel;
use crate::mtpp::{MarkChoice, MtppModel};
use crate::rng::Noise;
use crate::{Error, Result};

pub const TOP_K: [usize; 3] = [1, 5, 10];

/// Next-event metrics over every prefix of every test sequence.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub predictions: usize,
    pub time_mae: f64,
    pub dist_mae: Option<f64>,
    /// Keys are `"1"`, `"5"`, `"10"`.
    pub mark_accuracy_at_k: BTreeMap<String, f64>,
    pub nll_per_event: f64,
}

/// Sequences sorted by id, so every reduction runs in a fixed order.
fn sorted(ds: &Dataset) -> Vec<&Sequence> {
    let mut v: Vec<&Sequence> = ds.sequences.iter().filter(|s| s.len() >= 2).collect();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

/// Accuracy@k, median-predictor time and distance MAE, and the mean
/// unweighted NLL per scored event.
pub fn evaluate(model: &MtppModel, test: &Dataset) -> Result<EvalMetrics> {
    model.check_vocab(&test.vocab)?;
    let seqs = sorted(test);
    if seqs.is_empty() {
        return Err(Error::invalid("test set has no sequence with at least two events"));
    }
    let mut hits = [0usize; 3];
    let (mut n, mut time_abs, mut dist_abs, mut dist_n, mut nll) = (0usize, 0.0, 0.0, 0usize, 0.0);
    for s in seqs {
        let preds = model.predictions(s)?;
        let deltas = compute_deltas(s)?;
        for (k, p) in preds.iter().enumerate() {
            let e = &s.events[k + 1];
            for (h, &kk) in hits.iter_mut().zip(&TOP_K) {
                if p.in_top_k(e.mark, kk) {
                    *h += 1;
                }
            }
            time_abs += (p.dt - deltas.dt[k + 1]).abs();
            if let (Some(pd), Some(d)) = (p.dd, deltas.dd_at(k + 1)) {
                dist_abs += (pd - d).abs();
                dist_n += 1;
            }
            n += 1;
        }
        for t in model.event_terms(s)? {
            nll += t.mark + t.time + t.dist.unwrap_or(0.0);
        }
    }
    let acc = TOP_K.iter().zip(hits).map(|(k, h)| (k.to_string(), h as f64 / n as f64)).collect();
    Ok(EvalMetrics {
        predictions: n,
        time_mae: time_abs / n as f64,
        dist_mae: (dist_n > 0).then(|| dist_abs / dist_n as f64),
        mark_accuracy_at_k: acc,
        nll_per_event: nll / n as f64,
    })
}

/// Next-event metrics of the observed process, with `nll_per_event`
/// replaced by the negative ELBO per observed event (`samples` draws per
/// sequence).
pub fn evaluate_imtpp(model: &ImtppModel, test: &Dataset, samples: usize, seed: u64) -> Result<EvalMetrics> {
    let mut m = evaluate(&model.p, test)?;
    let seqs: Vec<Sequence> = sorted(test).into_iter().cloned().collect();
    m.nll_per_event = -model.mean_elbo_per_event(&seqs, samples, seed)?;
    Ok(m)
}

/// Matching of imputed events to deleted ones.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ImputationScore {
    /// Sum of `|t_imputed - t_true|` over matched pairs.
    pub abs_error: f64,
    pub matched: usize,
    pub imputed: usize,
    pub deleted: usize,
    /// Sum over sequences of `|#imputed - #deleted|`.
    pub count_abs_error: usize,
}

impl ImputationScore {
    pub fn merge(&mut self, o: &ImputationScore) {
        self.abs_error += o.abs_error;
        self.matched += o.matched;
        self.imputed += o.imputed;
        self.deleted += o.deleted;
        self.count_abs_error += o.count_abs_error;
    }

    /// Mean absolute time error over matches; `None` without matches.
    pub fn matched_mae(&self) -> Option<f64> {
        (self.matched > 0).then(|| self.abs_error / self.matched as f64)
    }

    pub fn count_error(&self) -> f64 {
        self.count_abs_error as f64 / self.deleted.max(1) as f64
    }
}

/// Scores the events flagged `imputed` in `imputed` against the deleted
/// ground truth. Within each gap between consecutive observed events the
/// closest remaining (imputed, deleted) pair is matched first; each event
/// is matched at most once.
pub fn evaluate_imputation(imputed: &Sequence, deleted: &[Event]) -> ImputationScore {
    let observed: Vec<f64> = imputed.events.iter().filter(|e| !e.imputed).map(|e| e.time).collect();
    let gap_of = |t: f64| observed.partition_point(|&o| o < t);
    let n_gaps = observed.len() + 1;
    let mut imp: Vec<Vec<f64>> = vec![Vec::new(); n_gaps];
    let mut del: Vec<Vec<f64>> = vec![Vec::new(); n_gaps];
    for e in imputed.events.iter().filter(|e| e.imputed) {
        imp[gap_of(e.time)].push(e.time);
    }
    for e in deleted {
        del[gap_of(e.time)].push(e.time);
    }
    let mut score = ImputationScore {
        imputed: imp.iter().map(Vec::len).sum(),
        deleted: deleted.len(),
        ..Default::default()
    };
    score.count_abs_error = score.imputed.abs_diff(score.deleted);
    for (a, b) in imp.iter().zip(&del) {
        let mut pairs: Vec<(f64, usize, usize)> =
            a.iter().enumerate().flat_map(|(i, x)| b.iter().enumerate().map(move |(j, y)| ((x - y).abs(), i, j))).collect();
        pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
        let mut used_a = vec![false; a.len()];
        let mut used_b = vec![false; b.len()];
        for (d, i, j) in pairs {
            if !used_a[i] && !used_b[j] {
                used_a[i] = true;
                used_b[j] = true;
                score.abs_error += d;
                score.matched += 1;
            }
        }
    }
    score
}

/// Baseline imputation: a gap of length `L` receives
/// `floor(max(L / mean_gap - 1, 0))` events spaced uniformly inside it
/// (one event lands on the midpoint), each carrying the earlier event's
/// mark. `mean_gap` is the complete process's mean inter-arrival time.
pub fn uniform_imputation(seq: &Sequence, mean_gap: f64) -> Sequence {
    let mut events = Vec::with_capacity(2 * seq.len());
    for (k, e) in seq.events.iter().enumerate() {
        events.push(e.clone());
        let Some(next) = seq.events.get(k + 1) else { continue };
        let len = next.time - e.time;
        let count = (len / mean_gap - 1.0).max(0.0).floor() as usize;
        for j in 1..=count {
            let w = j as f64 / (count + 1) as f64;
            let t = e.time + w * len;
            if !(t > e.time && t < next.time) {
                continue;
            }
            let location = match (e.location, next.location) {
                (Some(a), Some(b)) => Some([a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])]),
                _ => None,
            };
            events.push(Event { mark: e.mark, time: t, location, imputed: true });
        }
    }
    Sequence { id: seq.id.clone(), events, region: seq.region.clone() }
}

/// Mean gap of the complete process estimated from thinned data: observed
/// gaps are longer by `1 / (1 - fraction)` on average.
pub fn complete_mean_gap(observed: &Dataset, fraction: f64) -> Option<f64> {
    mean_gap(observed).map(|g| g * (1.0 - fraction))
}

/// A test case for imputation: observed sequence plus deleted truth.
#[derive(Clone, Debug)]
pub struct Thinned {
    pub observed: Sequence,
    pub deleted: Vec<Event>,
}

/// Pools imputation scores of `impute` over all cases (in id order).
pub fn score_imputations<F>(cases: &[Thinned], mut impute: F) -> Result<ImputationScore>
where
    F: FnMut(&Sequence) -> Result<Sequence>,
{
    let mut order: Vec<&Thinned> = cases.iter().collect();
    order.sort_by(|a, b| a.observed.id.cmp(&b.observed.id));
    let mut total = ImputationScore::default();
    for c in order {
        let filled = impute(&c.observed)?;
        total.merge(&evaluate_imputation(&filled, &c.deleted));
    }
    Ok(total)
}

/// Per-step absolute time errors of multi-step forecasts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForecastMetrics {
    pub prefix_len: usize,
    pub horizon: usize,
    pub forecasts: usize,
    /// MAE of the absolute time of step `h`, `h = 1..=horizon`.
    pub model_mae_by_step: Vec<f64>,
    /// Same for `t_last + h * mean_gap`.
    pub naive_mae_by_step: Vec<f64>,
    pub naive_mean_gap: f64,
}

/// Mean inter-arrival time over all sequences.
pub fn mean_gap(ds: &Dataset) -> Option<f64> {
    let gaps: Vec<f64> = ds.sequences.iter().flat_map(|s| s.events.windows(2).map(|w| w[1].time - w[0].time)).collect();
    (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
}

/// Forecasts `horizon` events after the first `prefix_len` events of each
/// test sequence that is long enough, with `forecast(prefix, horizon)`.
pub fn evaluate_forecasts<F>(
    test: &Dataset,
    prefix_len: usize,
    horizon: usize,
    naive_gap: f64,
    mut forecast: F,
) -> Result<ForecastMetrics>
where
    F: FnMut(&Sequence) -> Result<Vec<Event>>,
{
    if prefix_len == 0 || horizon == 0 {
        return Err(Error::invalid("prefix length and horizon must be positive"));
    }
    let mut seqs: Vec<&Sequence> = test.sequences.iter().filter(|s| s.len() >= prefix_len + horizon).collect();
    seqs.sort_by(|a, b| a.id.cmp(&b.id));
    if seqs.is_empty() {
        return Err(Error::invalid(format!("no test sequence has {} events", prefix_len + horizon)));
    }
    let mut model = vec![0.0; horizon];
    let mut naive = vec![0.0; horizon];
    for s in &seqs {
        let prefix = s.prefix(prefix_len);
        let last = prefix.events[prefix_len - 1].time;
        let f = forecast(&prefix)?;
        if f.len() != horizon {
            return Err(Error::invalid(format!("forecast returned {} events, expected {horizon}", f.len())));
        }
        for h in 0..horizon {
            let truth = s.events[prefix_len + h].time;
            model[h] += (f[h].time - truth).abs();
            naive[h] += (last + (h + 1) as f64 * naive_gap - truth).abs();
        }
    }
    let n = seqs.len() as f64;
    Ok(ForecastMetrics {
        prefix_len,
        horizon,
        forecasts: seqs.len(),
        model_mae_by_step: model.into_iter().map(|x| x / n).collect(),
        naive_mae_by_step: naive.into_iter().map(|x| x / n).collect(),
        naive_mean_gap: naive_gap,
    })
}

/// Deterministic median/argmax rollout of a fully observed model.
pub fn median_forecast(model: &MtppModel, prefix: &Sequence, horizon: usize) -> Result<Vec<Event>> {
    model.forecast_with(prefix, horizon, &mut Noise::Zero, MarkChoice::Argmax)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImputationMetrics {
    pub matched_mae: Option<f64>,
    pub count_error: f64,
    pub imputed: usize,
    pub deleted: usize,
    pub baseline_matched_mae: Option<f64>,
    pub baseline_count_error: f64,
}

impl ImputationMetrics {
    pub fn new(model: &ImputationScore, baseline: &ImputationScore) -> Self {
        Self {
            matched_mae: model.matched_mae(),
            count_error: model.count_error(),
            imputed: model.imputed,
            deleted: model.deleted,
            baseline_matched_mae: baseline.matched_mae(),
            baseline_count_error: baseline.count_error(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HawkesMetrics {
    pub users: usize,
    pub sequences: usize,
    pub events: usize,
    pub horizon: f64,
    pub beta: f64,
    pub nll_per_event: f64,
    pub mu: Vec<f64>,
    /// Row-major `A`.
    pub a: Vec<Vec<f64>>,
    pub spectral_radius: f64,
    pub communities: Option<Vec<usize>>,
    pub community_agreement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransferMetrics {
    pub fine_tuned_time_nll: f64,
    pub scratch_time_nll: f64,
    pub fine_tuned_epochs_to_threshold: Option<usize>,
    pub scratch_epochs_to_threshold: Option<usize>,
}

/// Everything a task reports. Keys are always present; fields a task does
/// not produce are `null`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub task: String,
    pub seed: u64,
    /// Point estimate behind the MAE fields.
    pub point_estimate: String,
    pub sequences: usize,
    pub events: usize,
    pub predictions: Option<usize>,
    pub time_mae: Option<f64>,
    pub dist_mae: Option<f64>,
    pub mark_accuracy_at_k: Option<BTreeMap<String, f64>>,
    pub nll_per_event: Option<f64>,
    pub imputation: Option<ImputationMetrics>,
    pub elbo_final: Option<f64>,
    pub forecast: Option<ForecastMetrics>,
    pub transfer: Option<TransferMetrics>,
    pub hawkes: Option<HawkesMetrics>,
}

impl MetricsReport {
    pub fn new(task: &str, seed: u64) -> Self {
        Self {
            task: task.to_string(),
            seed,
            point_estimate: "median".into(),
            sequences: 0,
            events: 0,
            predictions: None,
            time_mae: None,
            dist_mae: None,
            mark_accuracy_at_k: None,
            nll_per_event: None,
            imputation: None,
            elbo_final: None,
            forecast: None,
            transfer: None,
            hawkes: None,
        }
    }

    pub fn with_eval(mut self, m: &EvalMetrics) -> Self {
        self.predictions = Some(m.predictions);
        self.time_mae = Some(m.time_mae);
        self.dist_mae = m.dist_mae;
        self.mark_accuracy_at_k = Some(m.mark_accuracy_at_k.clone());
        self.nll_per_event = Some(m.nll_per_event);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticConfig;
    use crate::encoder::EncoderConfig;
    use crate::mtpp::{train, TrainConfig};

    fn seq(times: &[f64]) -> Sequence {
        Sequence::new("s", times.iter().map(|&t| Event::new(0, t)).collect()).unwrap()
    }

    fn flagged(obs: &[f64], imp: &[f64]) -> Sequence {
        let mut ev: Vec<Event> = obs.iter().map(|&t| Event::new(0, t)).collect();
        ev.extend(imp.iter().map(|&t| Event { imputed: true, ..Event::new(0, t) }));
        ev.sort_by(|a, b| a.time.total_cmp(&b.time));
        Sequence { id: "s".into(), events: ev, region: None }
    }

    #[test]
    fn exact_imputation_scores_zero() {
        let del = vec![Event::new(0, 1.5), Event::new(0, 3.2), Event::new(0, 3.7)];
        let s = evaluate_imputation(&flagged(&[1.0, 2.0, 3.0, 4.0], &[1.5, 3.2, 3.7]), &del);
        assert_eq!(s.matched_mae(), Some(0.0));
        assert_eq!(s.count_error(), 0.0);
    }

    #[test]
    fn no_imputations() {
        let del: Vec<Event> = (0..5).map(|i| Event::new(0, 1.1 + i as f64)).collect();
        let s = evaluate_imputation(&seq(&[1.0, 7.0]), &del);
        assert_eq!(s.matched_mae(), None);
        assert_eq!(s.count_error(), 1.0);
    }

    #[test]
    fn matching_is_greedy_within_gaps() {
        // the imputed 2.9 sits in the first gap with truth 2.1; the truth
        // 3.1 is in the second gap and must not be matched across the boundary
        let s = evaluate_imputation(&flagged(&[1.0, 3.0, 5.0], &[2.9, 4.0, 4.2]), &[Event::new(0, 2.1), Event::new(0, 3.1)]);
        assert_eq!(s.matched, 2);
        let oracle = (2.9f64 - 2.1).abs() + (4.0f64 - 3.1).abs();
        assert!((s.abs_error - oracle).abs() < 1e-12);
        assert_eq!(s.count_abs_error, 1);
        assert_eq!(s.count_error(), 0.5);
    }

    #[test]
    fn uniform_baseline_counts_and_positions() {
        let obs = seq(&[0.0, 1.0, 3.0, 7.0]);
        let filled = uniform_imputation(&obs, 1.0);
        // gap lengths 1, 2, 4 -> floor(L - 1) = 0, 1, 3 events
        let imputed: Vec<f64> = filled.events.iter().filter(|e| e.imputed).map(|e| e.time).collect();
        assert_eq!(imputed, vec![2.0, 4.0, 5.0, 6.0]);
        assert!(filled.validate().is_ok());
    }

    #[test]
    fn uniform_baseline_is_positive_on_irregular_gaps() {
        let full = seq(&[0.0, 0.3, 2.0, 2.5, 6.0]);
        let obs = seq(&[0.0, 2.0, 6.0]);
        let del = vec![full.events[1].clone(), full.events[3].clone()];
        let filled = uniform_imputation(&obs, 1.0);
        let s = evaluate_imputation(&filled, &del);
        // gap (0, 2) gets 1.0, gap (2, 6) gets 3.0, 4.0, 5.0
        // oracle: |1.0 - 0.3| + |3.0 - 2.5|
        assert_eq!(s.matched, 2);
        assert!((s.matched_mae().unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn complete_gap_from_thinned_data() {
        let ds = Dataset::new(vec![seq(&[0.0, 2.0, 4.0])], vec!["a".into()]).unwrap();
        assert_eq!(complete_mean_gap(&ds, 0.5), Some(1.0));
    }

    fn fitted(marks: usize, sigma2: f64) -> (MtppModel, Dataset) {
        let ds = SyntheticConfig::lognormal(40, 20, marks, 0.0, sigma2).generate(3).unwrap();
        let mut m = MtppModel::for_dataset(&ds, EncoderConfig { d_emb: 4, d_in: 4, d_h: 8 }, 1).unwrap();
        train(&mut m, &ds, None, &TrainConfig { epochs: 3, ..TrainConfig::default() }).unwrap();
        (m, ds)
    }

    #[test]
    fn accuracies_are_nested() {
        let (m, ds) = fitted(12, 0.2);
        let r = evaluate(&m, &ds).unwrap();
        let a = &r.mark_accuracy_at_k;
        assert!(a["1"] <= a["5"] && a["5"] <= a["10"]);
        assert!(a.values().all(|x| (0.0..=1.0).contains(x)));
        assert_eq!(r.predictions, 40 * 19);
        assert!(r.time_mae > 0.0 && r.dist_mae.is_none());
    }

    #[test]
    fn constant_data_is_predicted_perfectly() {
        // single mark and an (almost) deterministic unit gap
        let ds = SyntheticConfig::lognormal(20, 15, 1, 0.0, 0.0).generate(1).unwrap();
        let mut m = MtppModel::for_dataset(&ds, EncoderConfig { d_emb: 2, d_in: 2, d_h: 4 }, 0).unwrap();
        m.make_heads_constant();
        crate::mtpp::set_head_bias(&mut m.store, &m.net.time_head, 0.0, 0.01);
        let r = evaluate(&m, &ds).unwrap();
        assert_eq!(r.mark_accuracy_at_k["1"], 1.0);
        assert!(r.time_mae < 1e-12, "{}", r.time_mae);
    }

    #[test]
    fn uniform_mark_model_hits_one_in_ten() {
        let ds = SyntheticConfig::lognormal(100, 101, 10, 0.0, 0.2).generate(5).unwrap();
        let mut m = MtppModel::for_dataset(&ds, EncoderConfig { d_emb: 2, d_in: 2, d_h: 4 }, 0).unwrap();
        for id in m.net.mark_head.ids() {
            m.store.value_mut(id).fill(0.0);
        }
        let r = evaluate(&m, &ds).unwrap();
        assert_eq!(r.predictions, 10_000);
        // binomial(10^4, 0.1) has standard deviation 0.003
        assert!((r.mark_accuracy_at_k["1"] - 0.1).abs() < 0.02);
        assert!((r.mark_accuracy_at_k["5"] - 0.5).abs() < 0.02);
        assert_eq!(r.mark_accuracy_at_k["10"], 1.0);
    }

    #[test]
    fn vocabulary_mismatch_is_an_error() {
        let (m, _) = fitted(3, 0.2);
        let other = SyntheticConfig::lognormal(2, 5, 4, 0.0, 0.2).generate(0).unwrap();
        assert!(matches!(evaluate(&m, &other), Err(Error::VocabMismatch(_))));
    }

    #[test]
    fn naive_forecast_oracle() {
        let ds = Dataset::new(vec![seq(&[0.0, 1.0, 2.0, 4.0, 5.0])], vec!["a".into()]).unwrap();
        let f = evaluate_forecasts(&ds, 2, 3, 1.0, |p| {
            let t = p.events.last().unwrap().time;
            Ok((1..=3).map(|h| Event::new(0, t + h as f64)).collect())
        })
        .unwrap();
        assert_eq!(f.model_mae_by_step, vec![0.0, 1.0, 1.0]);
        assert_eq!(f.naive_mae_by_step, f.model_mae_by_step);
    }

    #[test]
    fn report_keeps_absent_keys_as_null() {
        let r = MetricsReport::new("simulate", 1);
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for key in ["time_mae", "dist_mae", "mark_accuracy_at_k", "nll_per_event", "imputation", "elbo_final", "forecast"] {
            assert!(v.get(key).is_some_and(|x| x.is_null()), "{key}");
        }
    }
}
