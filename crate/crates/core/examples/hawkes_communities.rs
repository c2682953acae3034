//! Simulates a 30-user Hawkes process with three blocks of mutually
//! exciting users, fits the excitation matrix and clusters users by it.

use ctes::hawkes::{assign_communities, fit_mle, label_agreement, HawkesFitConfig, HawkesParams};
use nalgebra::DMatrix;

fn main() -> ctes::Result<()> {
    let truth: Vec<usize> = (0..30).map(|u| u / 10).collect();
    let a = DMatrix::from_fn(30, 30, |i, j| if truth[i] == truth[j] { 0.04 } else { 0.0025 });
    let params = HawkesParams::new(vec![0.1; 30], a, 1.0)?;
    println!("spectral radius {:.3}", params.spectral_radius());
    let rates = params.stationary_rates()?;
    println!("stationary rate per user {:.4}", rates[0]);

    let horizon = 200.0;
    let seqs = params.simulate_many(30, horizon, 1)?;
    let events: usize = seqs.iter().map(|s| s.len()).sum();
    println!("{events} events in {} sequences", seqs.len());

    let cfg = HawkesFitConfig { steps: 600, seed: 2, ..Default::default() };
    let (fit, trace) = fit_mle(&seqs, 30, horizon, &cfg)?;
    println!("NLL per event: {:.4} -> {:.4}", trace[0], trace.last().unwrap());

    let c = assign_communities(&fit.a, 3, 3)?;
    println!("labels {:?}", c.labels);
    println!("agreement with the blocks: {:.3}", label_agreement(&c.labels, &truth, 3));
    Ok(())
}
