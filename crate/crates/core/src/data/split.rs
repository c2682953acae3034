use rand::seq::SliceRandom;
use rand::Rng;

use super::{Dataset, Event, Sequence};
use crate::rng::rng;
use crate::{Error, Result};

/// Split sizes by largest remainder: floors first, leftovers to the
/// largest fractional parts (earlier split wins ties).
fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes = [0usize; 3];
    for i in 0..3 {
        sizes[i] = exact[i].floor() as usize;
    }
    let mut left = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    sizes
}

/// Partitions sequences into train/validation/test by a seeded shuffle.
pub fn split_dataset(ds: &Dataset, ratios: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let r = [ratios.0, ratios.1, ratios.2];
    if r.iter().any(|x| !(*x > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    if ds.len() < 3 {
        return Err(Error::invalid(format!("cannot split {} sequences three ways", ds.len())));
    }
    let sizes = split_sizes(ds.len(), r);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng(seed));
    let take = |range: std::ops::Range<usize>| {
        ds.with_sequences(order[range].iter().map(|&i| ds.sequences[i].clone()).collect())
    };
    let a = sizes[0];
    let b = a + sizes[1];
    Ok((take(0..a), take(a..b), take(b..ds.len())))
}

/// Drops each interior event independently with probability `fraction`.
/// The first and last events are always kept.
pub fn delete_events(seq: &Sequence, fraction: f64, seed: u64) -> Result<(Sequence, Vec<Event>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("deletion fraction {fraction} outside [0, 1)")));
    }
    let mut r = rng(seed);
    let n = seq.len();
    let mut kept = Vec::with_capacity(n);
    let mut deleted = Vec::new();
    for (i, e) in seq.events.iter().enumerate() {
        let interior = i > 0 && i + 1 < n;
        // always draw so the stream does not depend on `fraction == 0`
        let u: f64 = r.random();
        if interior && u < fraction {
            deleted.push(e.clone());
        } else {
            kept.push(e.clone());
        }
    }
    Ok((Sequence { id: seq.id.clone(), events: kept, region: seq.region.clone() }, deleted))
}
