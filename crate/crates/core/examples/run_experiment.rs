//! Drives the experiment harness from a TOML config, as the `ctes` binary
//! does: fit a model, then evaluate its checkpoint on fresh data.

use ctes::harness::{run, ExperimentConfig, Task};

const FIT: &str = r#"
seed = 5

[data.synthetic]
sequences = 60
min_events = 20
max_events = 40
marks = 3
gap_mu = [0.0]
gap_sigma2 = 0.2
gap_ar = 0.5

[model]
d_emb = 8
d_in = 8
d_h = 16

[train]
epochs = 5
"#;

fn main() -> ctes::Result<()> {
    let dir = std::env::temp_dir().join("ctes-run-experiment");
    let mut cfg = ExperimentConfig::parse(FIT)?;
    cfg.out = Some(dir.join("fit"));
    let report = run(Task::Fit, &cfg)?;
    println!("fit: time MAE {:.4}, NLL/event {:.4}", report.time_mae.unwrap(), report.nll_per_event.unwrap());

    cfg.model.checkpoint = Some(dir.join("fit").join("model.ckpt"));
    cfg.out = Some(dir.join("forecast"));
    cfg.seed = 6;
    let report = run(Task::Forecast, &cfg)?;
    let f = report.forecast.as_ref().unwrap();
    println!("forecast step-1 MAE {:.4} (naive {:.4})", f.model_mae_by_step[0], f.naive_mae_by_step[0]);
    println!("artifacts in {}", dir.display());
    println!("{}", report.to_json()?);
    Ok(())
}
