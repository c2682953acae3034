//! Deletes 30% of events at random, trains the missing-event model on what
//! is left and fills the gaps, compared against evenly spaced guesses.

use ctes::data::{delete_events, SyntheticConfig};
use ctes::encoder::EncoderConfig;
use ctes::harness::{complete_mean_gap, score_imputations, uniform_imputation, Thinned};
use ctes::imtpp::{train_imtpp, ImtppModel};
use ctes::mtpp::TrainConfig;
use ctes::rng::derive_seed;

fn main() -> ctes::Result<()> {
    let fraction = 0.3;
    let mut gen = SyntheticConfig::lognormal(60, 30, 4, 0.0, 0.0025);
    gen.gap_mu = [0.3f64, 0.6, 1.2, 2.4].iter().map(|g| g.ln()).collect();
    let full = gen.generate(1)?;

    let mut cases = Vec::new();
    for (i, s) in full.sequences.iter().enumerate() {
        let (observed, deleted) = delete_events(s, fraction, derive_seed(2, &[i as u64]))?;
        cases.push(Thinned { observed, deleted });
    }
    let (train_cases, test_cases) = cases.split_at(40);
    let train = full.with_sequences(train_cases.iter().map(|c| c.observed.clone()).collect());

    let enc = EncoderConfig { d_emb: 8, d_in: 8, d_h: 16 };
    let mut model = ImtppModel::for_dataset(&train, enc, 3)?;
    let cfg = TrainConfig { epochs: 20, batch_size: 8, seed: 4, ..Default::default() };
    let report = train_imtpp(&mut model, &train, None, &cfg)?;
    println!("ELBO per event: first epoch {:.3}, last {:.3}", report.train[0], report.train.last().unwrap());

    let gap = complete_mean_gap(&train, fraction).unwrap();
    let mut seed = 5;
    let imtpp = score_imputations(test_cases, |s| {
        seed += 1;
        model.impute(s, 5, seed)
    })?;
    let baseline = score_imputations(test_cases, |s| Ok(uniform_imputation(s, gap)))?;
    println!("{} deleted events in {} test sequences", imtpp.deleted, test_cases.len());
    println!(
        "model:    matched MAE {:.4}, imputed {}",
        imtpp.matched_mae().unwrap_or(f64::NAN),
        imtpp.imputed
    );
    println!(
        "baseline: matched MAE {:.4}, imputed {}",
        baseline.matched_mae().unwrap_or(f64::NAN),
        baseline.imputed
    );
    Ok(())
}
