//! Log-normal density, sampling and KL divergence, checked numerically.

use ctes::heads::{kl_lognormal, lognormal_logpdf, lognormal_point, lognormal_sample, LogNormalParams};
use ctes::rng::Noise;

fn main() -> ctes::Result<()> {
    let p = LogNormalParams::new(0.5, 0.25);
    let q = LogNormalParams::new(0.2, 0.4);

    // trapezoid rule in log-space: x = e^u, dx = e^u du
    let (lo, hi, n) = (-8.0f64, 8.0f64, 20_000);
    let h = (hi - lo) / n as f64;
    let mut mass = 0.0;
    for i in 0..=n {
        let u = lo + i as f64 * h;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        mass += w * (lognormal_logpdf(u.exp(), p)? + u).exp() * h;
    }
    println!("integral of the density: {mass:.6}");

    let mut noise = Noise::seeded(1);
    let draws: Vec<f64> = (0..200_000).map(|_| lognormal_sample(q, noise.normal())).collect();
    let mc_kl = draws.iter().map(|&x| lognormal_logpdf(x, q).unwrap() - lognormal_logpdf(x, p).unwrap()).sum::<f64>()
        / draws.len() as f64;
    println!("KL(q || p): closed form {:.5}, Monte Carlo {:.5}", kl_lognormal(q, p), mc_kl);

    let mut sorted = draws;
    sorted.sort_by(f64::total_cmp);
    println!("median: point estimate {:.4}, sample {:.4}", lognormal_point(q), sorted[sorted.len() / 2]);
    Ok(())
}
