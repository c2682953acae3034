//! Rolls a trained model forward five events and compares the per-step
//! error with a constant-rate guess.

use ctes::data::{split_dataset, SyntheticConfig};
use ctes::encoder::EncoderConfig;
use ctes::harness::{evaluate_forecasts, mean_gap, median_forecast};
use ctes::mtpp::{train, MtppModel, TrainConfig};

fn main() -> ctes::Result<()> {
    // gaps with an autoregressive log-residual: short follows short
    let mut gen = SyntheticConfig::lognormal(200, 30, 3, 0.0, 0.3);
    gen.gap_ar = 0.8;
    let ds = gen.generate(21)?;
    let (tr, va, te) = split_dataset(&ds, (0.7, 0.1, 0.2), 22)?;

    let mut model = MtppModel::for_dataset(&tr, EncoderConfig { d_emb: 8, d_in: 8, d_h: 16 }, 23)?;
    train(&mut model, &tr, Some(&va), &TrainConfig { epochs: 10, seed: 24, ..Default::default() })?;

    let naive = mean_gap(&tr).unwrap();
    let f = evaluate_forecasts(&te, 10, 5, naive, |prefix| median_forecast(&model, prefix, 5))?;
    println!("{} forecasts from 10-event prefixes", f.forecasts);
    println!("step  model MAE  naive MAE");
    for h in 0..f.horizon {
        println!("{:4}  {:9.4}  {:9.4}", h + 1, f.model_mae_by_step[h], f.naive_mae_by_step[h]);
    }
    Ok(())
}
