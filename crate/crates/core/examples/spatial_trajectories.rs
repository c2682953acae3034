//! Trajectories with locations: the model scores time, distance and mark of
//! each step, and can be switched to time-only scoring.

use ctes::data::{split_dataset, SpatialConfig, SyntheticConfig};
use ctes::encoder::EncoderConfig;
use ctes::harness::evaluate;
use ctes::mtpp::{train, MtppModel, TrainConfig};

fn main() -> ctes::Result<()> {
    let mut gen = SyntheticConfig::lognormal(120, 30, 6, 0.0, 0.2);
    gen.spatial = Some(SpatialConfig { dist_mu: 0.5, dist_sigma2: 0.1 });
    let ds = gen.generate(31)?;
    let (tr, va, te) = split_dataset(&ds, (0.8, 0.1, 0.1), 32)?;

    let mut model = MtppModel::for_dataset(&tr, EncoderConfig { d_emb: 8, d_in: 8, d_h: 16 }, 33)?;
    train(&mut model, &tr, Some(&va), &TrainConfig { epochs: 10, seed: 34, ..Default::default() })?;

    let m = evaluate(&model, &te)?;
    println!("spatial:   time MAE {:.4}  distance MAE {:.4}  NLL/event {:.4}", m.time_mae, m.dist_mae.unwrap(), m.nll_per_event);

    let t = evaluate(&model.temporal_only_mode(), &te)?;
    println!("time only: time MAE {:.4}  distance MAE {:?}  NLL/event {:.4}", t.time_mae, t.dist_mae, t.nll_per_event);

    let seq = &te.sequences[0];
    let steps = model.forecast(&seq.prefix(10), 3, 35)?;
    for e in steps {
        let [x, y] = e.location.unwrap();
        println!("sampled step: t = {:.3}, mark {}, at ({x:.2}, {y:.2})", e.time, model.vocab[e.mark]);
    }
    Ok(())
}
