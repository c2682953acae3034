//! Trains on a data-rich source region and fine-tunes on a small target
//! region with a different mark vocabulary, against training from scratch.

use ctes::data::SyntheticConfig;
use ctes::encoder::EncoderConfig;
use ctes::mtpp::TrainConfig;
use ctes::transfer::{epochs_to_threshold, fine_tune, train_from_scratch, train_source, Component, TransferConfig};

fn region(sequences: usize, marks: usize, seed: u64) -> ctes::Result<ctes::data::Dataset> {
    let mut gen = SyntheticConfig::lognormal(sequences, 30, marks, 0.0, 0.3);
    gen.gap_ar = 0.8;
    gen.generate(seed)
}

fn main() -> ctes::Result<()> {
    let source = region(300, 5, 1)?;
    let target = region(30, 8, 2)?;
    let val = region(100, 8, 3)?;
    let enc = EncoderConfig { d_emb: 8, d_in: 8, d_h: 16 };
    let base = TrainConfig { epochs: 10, seed: 4, ..Default::default() };

    let (src, _) = train_source(&source, None, enc, &base, 5)?;
    let (_, scratch) = train_from_scratch(&target, Some(&val), enc, &base, 10, 6)?;
    let threshold = *scratch.val.last().unwrap();

    for freeze in [vec![], vec![Component::Encoder]] {
        let cfg = TransferConfig { freeze: freeze.clone(), target_epochs: 10, seed: 7, ..Default::default() };
        let (_, ft) = fine_tune(&src, &target, Some(&val), &base, &cfg)?;
        println!(
            "fine-tune (frozen: {freeze:?}): val time-NLL {:.4}, epochs to reach scratch's final value {:?}",
            ft.val.last().unwrap(),
            epochs_to_threshold(&ft.val, threshold)
        );
    }
    println!("from scratch: val time-NLL {threshold:.4}, epochs {:?}", epochs_to_threshold(&scratch.val, threshold));
    Ok(())
}
