//! The task runner behind the `ctes` binary.
//!
//! Every task writes `metrics.json` into the output directory; training
//! tasks add `curves.csv` and checkpoints. All randomness is derived from
//! the config's top-level seed.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::config::{DataSection, ExperimentConfig, Task};
use super::metrics::*;
use crate::data::{delete_events, parse_dataset, split_dataset, write_dataset, Dataset, Event, Format, Sequence};
use crate::heads::LogNormalParams;
use crate::hawkes::{self, assign_communities, fit_mle, label_agreement, HawkesParams};
use crate::imtpp::{train_imtpp, ImtppModel};
use crate::mtpp::{train, MarkChoice, MtppModel, TrainConfig, TrainReport};
use crate::rng::{derive_seed, Noise};
use crate::transfer::{epochs_to_threshold, fine_tune, mean_time_nll, train_from_scratch, train_source, TransferConfig};
use crate::{Error, Result};

// sub-seed tags
const DATA: u64 = 1;
const SPLIT: u64 = 2;
const DELETE: u64 = 3;
const MODEL: u64 = 4;
const TRAIN: u64 = 5;
const EVAL: u64 = 6;
const IMPUTE: u64 = 7;
const SOURCE: u64 = 8;
const TARGET: u64 = 9;
const HAWKES_SIM: u64 = 10;
const HAWKES_FIT: u64 = 11;
const COMMUNITY: u64 = 12;
const FINE_TUNE: u64 = 13;
const SCRATCH: u64 = 14;

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.into())
}

/// A trained model read back from disk.
#[derive(Clone, Debug)]
pub enum Checkpoint {
    Mtpp(MtppModel),
    Imtpp(ImtppModel),
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let (_, kind) = MtppModel::read_header(&mut r)?;
        match kind.as_str() {
            "mtpp" => Ok(Checkpoint::Mtpp(MtppModel::load(path)?)),
            "imtpp" => Ok(Checkpoint::Imtpp(ImtppModel::load(path)?)),
            other => Err(Error::invalid(format!("unknown checkpoint kind `{other}`"))),
        }
    }

    pub fn vocab(&self) -> &[String] {
        match self {
            Checkpoint::Mtpp(m) => &m.vocab,
            Checkpoint::Imtpp(m) => &m.p.vocab,
        }
    }
}

pub fn load_dataset(section: &DataSection, seed: u64) -> Result<Dataset> {
    match (&section.path, &section.synthetic) {
        (Some(p), None) => read_dataset(p),
        (None, Some(s)) => s.generate(seed),
        _ => Err(Error::Config("data needs exactly one of `path` and `synthetic`".into())),
    }
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = File::open(path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    parse_dataset(BufReader::new(f), Format::from_path(path))
}

pub fn write_dataset_file(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(ds, Format::from_path(path), &mut w)?;
    w.flush()?;
    Ok(())
}

/// Thins every sequence (sub-seed per position). With `fraction == 0` the
/// data is returned untouched and nothing is deleted.
pub fn thin(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Vec<Thinned>)> {
    let mut observed = Vec::with_capacity(ds.len());
    let mut cases = Vec::with_capacity(ds.len());
    for (i, s) in ds.sequences.iter().enumerate() {
        let (o, d) = if fraction > 0.0 { delete_events(s, fraction, derive_seed(seed, &[i as u64]))? } else { (s.clone(), Vec::new()) };
        observed.push(o.clone());
        cases.push(Thinned { observed: o, deleted: d });
    }
    Ok((ds.with_sequences(observed), cases))
}

/// Cases for already-thinned data and a file of deleted events.
fn cases_from_truth(observed: &Dataset, truth: &Path) -> Result<Vec<Thinned>> {
    let t = read_dataset(truth)?.remap_vocab(&observed.vocab)?;
    let mut by_id: HashMap<String, Vec<Event>> = t.sequences.into_iter().map(|s| (s.id, s.events)).collect();
    Ok(observed
        .sequences
        .iter()
        .map(|s| Thinned { observed: s.clone(), deleted: by_id.remove(&s.id).unwrap_or_default() })
        .collect())
}

fn in_set(cases: &[Thinned], ds: &Dataset) -> Vec<Thinned> {
    let ids: std::collections::HashSet<&str> = ds.sequences.iter().map(|s| s.id.as_str()).collect();
    cases.iter().filter(|c| ids.contains(c.observed.id.as_str())).cloned().collect()
}

fn write_curves(path: &Path, curves: &[(&str, &[f64])]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["epoch", "split", "value"]).map_err(csv_err)?;
    for (split, values) in curves {
        for (i, v) in values.iter().enumerate() {
            w.write_record([(i + 1).to_string(), split.to_string(), format!("{v}")]).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn train_curves(r: &TrainReport) -> Vec<(&'static str, &[f64])> {
    let mut c: Vec<(&str, &[f64])> = vec![("train", &r.train)];
    if !r.val.is_empty() {
        c.push(("val", &r.val));
    }
    c
}

fn counted(mut report: MetricsReport, ds: &Dataset) -> MetricsReport {
    report.sequences = ds.len();
    report.events = ds.num_events();
    report
}

fn ratios(s: &DataSection) -> (f64, f64, f64) {
    (s.split[0], s.split[1], s.split[2])
}

/// Runs `task` and writes its artifacts. Returns the report that was
/// written to `metrics.json`.
pub fn run(task: Task, cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.check_for(task)?;
    let out = cfg.out_dir(task);
    fs::create_dir_all(&out)?;
    let runner = Runner { cfg, out: &out };
    let report = match task {
        Task::Simulate => runner.simulate(),
        Task::SimulateHawkes => runner.simulate_hawkes(),
        Task::Fit => runner.fit(),
        Task::FitImtpp => runner.fit_imtpp(),
        Task::FitHawkes => runner.fit_hawkes(),
        Task::Transfer => runner.transfer(),
        Task::Impute => runner.impute(),
        Task::Forecast => runner.forecast(),
        Task::Evaluate => runner.evaluate(),
    }?;
    fs::write(out.join("metrics.json"), report.to_json()?)?;
    Ok(report)
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
}

impl Runner<'_> {
    fn seed(&self, tag: u64) -> u64 {
        derive_seed(self.cfg.seed, &[tag])
    }

    fn data(&self) -> &DataSection {
        self.cfg.data.as_ref().expect("checked by check_for")
    }

    fn report(&self, task: Task) -> MetricsReport {
        MetricsReport::new(task.name(), self.cfg.seed)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed(TRAIN), ..self.cfg.train.clone() }
    }

    /// Evaluation data for a trained model: loaded, re-indexed to the model
    /// vocabulary and thinned (or paired with a truth file).
    fn eval_data(&self, vocab: &[String]) -> Result<(Dataset, Vec<Thinned>)> {
        let d = self.data();
        let ds = load_dataset(d, self.seed(DATA))?.remap_vocab(vocab)?;
        match &d.truth {
            Some(t) => {
                let cases = cases_from_truth(&ds, t)?;
                Ok((ds, cases))
            }
            None => thin(&ds, d.deletion, self.seed(DELETE)),
        }
    }

    fn simulate(&self) -> Result<MetricsReport> {
        let d = self.data();
        let ds = load_dataset(d, self.seed(DATA))?;
        write_dataset_file(&self.out.join("events.csv"), &ds)?;
        if d.deletion > 0.0 {
            let (observed, cases) = thin(&ds, d.deletion, self.seed(DELETE))?;
            write_dataset_file(&self.out.join("observed.csv"), &observed)?;
            let deleted: Vec<Sequence> = cases
                .iter()
                .filter(|c| !c.deleted.is_empty())
                .map(|c| Sequence { events: c.deleted.clone(), ..c.observed.clone() })
                .collect();
            write_dataset_file(&self.out.join("deleted.csv"), &ds.with_sequences(deleted))?;
        }
        Ok(counted(self.report(Task::Simulate), &ds))
    }

    fn fit(&self) -> Result<MetricsReport> {
        let d = self.data();
        let ds = load_dataset(d, self.seed(DATA))?;
        let (observed, _) = thin(&ds, d.deletion, self.seed(DELETE))?;
        let (tr, va, te) = split_dataset(&observed, ratios(d), self.seed(SPLIT))?;
        let mut model = MtppModel::for_dataset(&tr, self.cfg.model.encoder(), self.seed(MODEL))?;
        let rep = train(&mut model, &tr, Some(&va), &self.train_config())?;
        model.save(&self.out.join("model.ckpt"))?;
        write_curves(&self.out.join("curves.csv"), &train_curves(&rep))?;
        let eval = evaluate(&model, &te)?;
        Ok(counted(self.report(Task::Fit), &te).with_eval(&eval))
    }

    fn imtpp_model(&self, train: &Dataset) -> Result<ImtppModel> {
        let s = &self.cfg.imtpp;
        let default = ImtppModel::default_prior(train)?;
        let prior = LogNormalParams::new(s.prior_mu.unwrap_or(default.mu), s.prior_sigma2.unwrap_or(default.sigma2));
        let mut m =
            ImtppModel::new(train.vocab.clone(), train.has_locations, self.cfg.model.encoder(), prior, self.seed(MODEL))?;
        if let Some(c) = s.max_count {
            if c == 0 {
                return Err(Error::Config("`imtpp.max_count` must be positive".into()));
            }
            m.max_count = c;
        }
        Ok(m)
    }

    /// Imputes every case once (in id order, one noise stream) and scores
    /// against the uniform baseline with gap `baseline_gap`.
    fn impute_cases(
        &self,
        model: &ImtppModel,
        cases: &[Thinned],
        baseline_gap: f64,
    ) -> Result<(Vec<Sequence>, ImputationMetrics)> {
        let spg = self.cfg.impute.samples_per_gap;
        let mut noise = Noise::seeded(self.seed(IMPUTE));
        let mut sorted: Vec<&Thinned> = cases.iter().collect();
        sorted.sort_by(|a, b| a.observed.id.cmp(&b.observed.id));
        let mut filled: HashMap<String, Sequence> = HashMap::new();
        for c in sorted {
            filled.insert(c.observed.id.clone(), model.impute_with(&c.observed, spg, &mut noise)?);
        }
        let score = score_imputations(cases, |s| Ok(filled[&s.id].clone()))?;
        let base = score_imputations(cases, |s| Ok(uniform_imputation(s, baseline_gap)))?;
        let ordered = cases.iter().map(|c| filled[&c.observed.id].clone()).collect();
        Ok((ordered, ImputationMetrics::new(&score, &base)))
    }

    fn fit_imtpp(&self) -> Result<MetricsReport> {
        let d = self.data();
        let ds = load_dataset(d, self.seed(DATA))?;
        let (observed, cases) = thin(&ds, d.deletion, self.seed(DELETE))?;
        let (tr, va, te) = split_dataset(&observed, ratios(d), self.seed(SPLIT))?;
        let mut model = self.imtpp_model(&tr)?;
        let rep = train_imtpp(&mut model, &tr, Some(&va), &self.train_config())?;
        model.save(&self.out.join("imtpp.ckpt"))?;
        write_curves(&self.out.join("curves.csv"), &train_curves(&rep))?;
        let eval = evaluate_imtpp(&model, &te, self.cfg.imtpp.eval_samples, self.seed(EVAL))?;
        let mut report = counted(self.report(Task::FitImtpp), &te).with_eval(&eval);
        report.elbo_final = rep.train.last().copied();
        let test_cases = in_set(&cases, &te);
        let gap = complete_mean_gap(&tr, d.deletion).ok_or_else(|| Error::invalid("training data has no gaps"))?;
        let (filled, imp) = self.impute_cases(&model, &test_cases, gap)?;
        write_dataset_file(&self.out.join("imputed.csv"), &te.with_sequences(filled))?;
        if d.deletion > 0.0 {
            report.imputation = Some(imp);
        }
        Ok(report)
    }

    fn impute(&self) -> Result<MetricsReport> {
        let model = match Checkpoint::load(self.cfg.model.checkpoint.as_ref().expect("checked"))? {
            Checkpoint::Imtpp(m) => m,
            Checkpoint::Mtpp(_) => return Err(Error::Config("`impute` needs an imtpp checkpoint".into())),
        };
        let (observed, cases) = self.eval_data(&model.p.vocab)?;
        let deleted: usize = cases.iter().map(|c| c.deleted.len()).sum();
        let total = deleted + observed.num_events();
        // thinning rate of the data, known from the config or the truth file
        let fraction = if self.data().deletion > 0.0 { self.data().deletion } else { deleted as f64 / total.max(1) as f64 };
        let gap = complete_mean_gap(&observed, fraction).ok_or_else(|| Error::invalid("data has no gaps"))?;
        let (filled, imp) = self.impute_cases(&model, &cases, gap)?;
        write_dataset_file(&self.out.join("imputed.csv"), &observed.with_sequences(filled))?;
        let mut report = counted(self.report(Task::Impute), &observed);
        if deleted > 0 {
            report.imputation = Some(imp);
        }
        Ok(report)
    }

    fn forecast(&self) -> Result<MetricsReport> {
        let ck = Checkpoint::load(self.cfg.model.checkpoint.as_ref().expect("checked"))?;
        let (observed, _) = self.eval_data(ck.vocab())?;
        let f = &self.cfg.forecast;
        let prefixes = observed.with_sequences(
            observed.sequences.iter().filter(|s| s.len() >= f.prefix_len + f.horizon).map(|s| s.prefix(f.prefix_len)).collect(),
        );
        let naive = mean_gap(&prefixes).ok_or_else(|| Error::invalid("no prefix has two events"))?;
        let mut rows: Vec<(String, Vec<Event>)> = Vec::new();
        let mut noise = Noise::seeded(self.seed(IMPUTE));
        let spg = self.cfg.impute.samples_per_gap;
        let metrics = evaluate_forecasts(&observed, f.prefix_len, f.horizon, naive, |prefix| {
            let ev = match &ck {
                Checkpoint::Mtpp(m) => median_forecast(m, prefix, f.horizon)?,
                Checkpoint::Imtpp(m) => {
                    m.forecast_with_missing_with(prefix, f.horizon, &mut noise, &mut Noise::Zero, MarkChoice::Argmax, spg)?
                }
            };
            rows.push((prefix.id.clone(), ev.clone()));
            Ok(ev)
        })?;
        let mut w = csv::Writer::from_path(self.out.join("forecasts.csv")).map_err(csv_err)?;
        w.write_record(["seq_id", "step", "time", "mark"]).map_err(csv_err)?;
        for (id, ev) in &rows {
            for (h, e) in ev.iter().enumerate() {
                w.write_record([id.clone(), (h + 1).to_string(), format!("{}", e.time), ck.vocab()[e.mark].clone()])
                    .map_err(csv_err)?;
            }
        }
        w.flush()?;
        let mut report = counted(self.report(Task::Forecast), &observed);
        report.forecast = Some(metrics);
        Ok(report)
    }

    fn evaluate(&self) -> Result<MetricsReport> {
        let ck = Checkpoint::load(self.cfg.model.checkpoint.as_ref().expect("checked"))?;
        let (observed, _) = self.eval_data(ck.vocab())?;
        let eval = match &ck {
            Checkpoint::Mtpp(m) => evaluate(m, &observed)?,
            Checkpoint::Imtpp(m) => evaluate_imtpp(m, &observed, self.cfg.imtpp.eval_samples, self.seed(EVAL))?,
        };
        Ok(counted(self.report(Task::Evaluate), &observed).with_eval(&eval))
    }

    fn transfer(&self) -> Result<MetricsReport> {
        let t = self.cfg.transfer.as_ref().expect("checked");
        let source = load_dataset(&t.source, self.seed(SOURCE))?;
        let target = load_dataset(&t.target, self.seed(TARGET))?;
        let (source, _) = thin(&source, t.source.deletion, derive_seed(self.seed(DELETE), &[SOURCE]))?;
        let (target, _) = thin(&target, t.target.deletion, derive_seed(self.seed(DELETE), &[TARGET]))?;
        let (tr, va, te) = split_dataset(&target, ratios(&t.target), self.seed(SPLIT))?;
        let enc = self.cfg.model.encoder();
        let base = self.train_config();
        let (src_model, src_rep) = train_source(&source, None, enc, &base, self.seed(MODEL))?;
        let tcfg = TransferConfig {
            lr_multiplier: t.lr_multiplier,
            freeze: t.freeze.clone(),
            target_epochs: t.target_epochs,
            seed: self.seed(FINE_TUNE),
        };
        let (ft, ft_rep) = fine_tune(&src_model, &tr, Some(&va), &base, &tcfg)?;
        let (sc, sc_rep) = train_from_scratch(&tr, Some(&va), enc, &base, t.target_epochs, self.seed(SCRATCH))?;
        src_model.save(&self.out.join("source.ckpt"))?;
        ft.save(&self.out.join("model.ckpt"))?;
        sc.save(&self.out.join("scratch.ckpt"))?;
        write_curves(
            &self.out.join("curves.csv"),
            &[
                ("source_train", &src_rep.train),
                ("fine_tune_train", &ft_rep.train),
                ("fine_tune_val", &ft_rep.val),
                ("scratch_train", &sc_rep.train),
                ("scratch_val", &sc_rep.val),
            ],
        )?;
        // threshold: the scratch model's final validation time-NLL
        let thr = sc_rep.val.last().copied().unwrap_or(f64::INFINITY);
        let metrics = TransferMetrics {
            fine_tuned_time_nll: mean_time_nll(&ft.net, &ft.store, &te.sequences)?,
            scratch_time_nll: mean_time_nll(&sc.net, &sc.store, &te.sequences)?,
            fine_tuned_epochs_to_threshold: epochs_to_threshold(&ft_rep.val, thr),
            scratch_epochs_to_threshold: epochs_to_threshold(&sc_rep.val, thr),
        };
        let eval = evaluate(&ft, &te)?;
        let mut report = counted(self.report(Task::Transfer), &te).with_eval(&eval);
        report.transfer = Some(metrics);
        Ok(report)
    }

    fn hawkes_data(&self, users: usize) -> Result<Vec<Sequence>> {
        let h = self.cfg.hawkes.as_ref().expect("checked");
        match &self.cfg.data {
            Some(d) => {
                let ds = load_dataset(d, self.seed(DATA))?.remap_vocab(&user_vocab(users))?;
                Ok(ds.sequences)
            }
            None => {
                let truth = h.truth.as_ref().expect("checked").params(h.beta)?;
                truth.simulate_many(h.sequences, h.horizon, self.seed(HAWKES_SIM))
            }
        }
    }

    fn simulate_hawkes(&self) -> Result<MetricsReport> {
        let h = self.cfg.hawkes.as_ref().expect("checked");
        let truth = h.truth.as_ref().expect("checked").params(h.beta)?;
        let seqs = truth.simulate_many(h.sequences, h.horizon, self.seed(HAWKES_SIM))?;
        let ds = Dataset { sequences: seqs.iter().filter(|s| !s.is_empty()).cloned().collect(), vocab: user_vocab(truth.users()), has_locations: false };
        write_dataset_file(&self.out.join("events.csv"), &ds)?;
        write_params(&self.out.join("params.txt"), &truth)?;
        let mut report = self.report(Task::SimulateHawkes);
        report.sequences = seqs.len();
        report.events = ds.num_events();
        report.hawkes = Some(hawkes_metrics(&truth, &seqs, h.horizon, None, None)?);
        Ok(report)
    }

    fn fit_hawkes(&self) -> Result<MetricsReport> {
        let h = self.cfg.hawkes.as_ref().expect("checked");
        let truth = h.truth.as_ref();
        let users = match (h.users, truth) {
            (Some(u), _) => u,
            (None, Some(t)) => t.params(h.beta)?.users(),
            (None, None) => return Err(Error::Config("`hawkes.users` is required".into())),
        };
        let seqs = self.hawkes_data(users)?;
        let (fitted, trace) = fit_mle(&seqs, users, h.horizon, &self.cfg.hawkes_fit(h.beta, self.seed(HAWKES_FIT)))?;
        write_params(&self.out.join("params.txt"), &fitted)?;
        write_curves(&self.out.join("curves.csv"), &[("train", &trace)])?;
        let (labels, agreement) = match h.communities {
            Some(k) => {
                let c = assign_communities(&fitted.a, k, self.seed(COMMUNITY))?;
                let agree = truth.and_then(|t| t.labels()).map(|l| label_agreement(&c.labels, &l, k));
                (Some(c.labels), agree)
            }
            None => (None, None),
        };
        let mut report = self.report(Task::FitHawkes);
        report.sequences = seqs.len();
        report.events = seqs.iter().map(Sequence::len).sum();
        report.nll_per_event = trace.last().copied();
        report.hawkes = Some(hawkes_metrics(&fitted, &seqs, h.horizon, labels, agreement)?);
        Ok(report)
    }
}

/// Mark names of Hawkes users: `u0 .. u{n-1}`.
pub fn user_vocab(users: usize) -> Vec<String> {
    (0..users).map(|i| format!("u{i}")).collect()
}

fn write_params(path: &Path, p: &HawkesParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    p.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

fn hawkes_metrics(
    p: &HawkesParams,
    seqs: &[Sequence],
    horizon: f64,
    communities: Option<Vec<usize>>,
    community_agreement: Option<f64>,
) -> Result<HawkesMetrics> {
    let events: usize = seqs.iter().map(Sequence::len).sum();
    let nll = hawkes::nll(p, seqs, horizon)?;
    Ok(HawkesMetrics {
        users: p.users(),
        sequences: seqs.len(),
        events,
        horizon,
        beta: p.beta,
        nll_per_event: nll / events.max(1) as f64,
        mu: p.mu.iter().copied().collect(),
        a: p.a.row_iter().map(|r| r.iter().copied().collect()).collect(),
        spectral_radius: p.spectral_radius(),
        communities,
        community_agreement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticConfig;

    fn small_config(dir: &Path) -> ExperimentConfig {
        let mut c = ExperimentConfig::parse(
            "seed = 3\n[model]\nd_emb = 4\nd_in = 4\nd_h = 6\n[train]\nepochs = 2\nbatch_size = 8\n",
        )
        .unwrap();
        c.out = Some(dir.to_path_buf());
        let mut s = SyntheticConfig::lognormal(20, 12, 3, 0.0, 0.3);
        s.gap_ar = 0.5;
        c.data = Some(DataSection { synthetic: Some(s), path: None, ..DataSection::from_path("x".into()) });
        c
    }

    #[test]
    fn fit_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let c = small_config(dir.path());
        let r = run(Task::Fit, &c).unwrap();
        assert_eq!(r.task, "fit");
        for f in ["metrics.json", "curves.csv", "model.ckpt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let curves = fs::read_to_string(dir.path().join("curves.csv")).unwrap();
        let lines: Vec<&str> = curves.lines().collect();
        assert_eq!(lines[0], "epoch,split,value");
        assert_eq!(lines.len(), 1 + 2 * 2);
        assert!(lines[1].starts_with("1,train,") && lines[2].starts_with("2,train,"));
    }

    #[test]
    fn same_seed_same_metrics() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run(Task::Fit, &small_config(a.path())).unwrap();
        run(Task::Fit, &small_config(b.path())).unwrap();
        let ra = fs::read(a.path().join("metrics.json")).unwrap();
        let rb = fs::read(b.path().join("metrics.json")).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn report_keys_are_stable_across_tasks() {
        let dir = tempfile::tempdir().unwrap();
        let c = small_config(dir.path());
        let fit: serde_json::Value = serde_json::from_str(&run(Task::Fit, &c).unwrap().to_json().unwrap()).unwrap();
        let sim: serde_json::Value =
            serde_json::from_str(&run(Task::Simulate, &c).unwrap().to_json().unwrap()).unwrap();
        let keys = |v: &serde_json::Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
        assert_eq!(keys(&fit), keys(&sim));
        assert!(sim["time_mae"].is_null());
    }

    #[test]
    fn thinning_with_zero_fraction_is_identity() {
        let ds = SyntheticConfig::lognormal(4, 6, 2, 0.0, 0.3).generate(1).unwrap();
        let (o, cases) = thin(&ds, 0.0, 9).unwrap();
        assert_eq!(o, ds);
        assert!(cases.iter().all(|c| c.deleted.is_empty()));
    }

    #[test]
    fn checkpoint_kind_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = SyntheticConfig::lognormal(4, 6, 2, 0.0, 0.3).generate(1).unwrap();
        let enc = crate::encoder::EncoderConfig { d_emb: 4, d_in: 4, d_h: 6 };
        let p = dir.path().join("m.ckpt");
        MtppModel::for_dataset(&ds, enc, 0).unwrap().save(&p).unwrap();
        assert!(matches!(Checkpoint::load(&p).unwrap(), Checkpoint::Mtpp(_)));
        ImtppModel::for_dataset(&ds, enc, 0).unwrap().save(&p).unwrap();
        assert!(matches!(Checkpoint::load(&p).unwrap(), Checkpoint::Imtpp(_)));
    }
}
