use drscore::inversion::{invert_ci, CiConfig, CiOutcome};
use drscore::sim::{DgpConfig, DgpSampler, Experiment};
use rayon::prelude::*;

fn run(label: &str, ratio: f64, wpen: bool, reps: u64) {
    let cfg = DgpConfig::new(Experiment::One, 200, 200, 1.0, 2.0, 4242);
    let sampler = DgpSampler::new(cfg.clone()).unwrap();
    let results: Vec<(f64, bool, bool)> = (0..reps)
        .into_par_iter()
        .filter_map(|r| {
            let seed = drscore::seeding::derive(cfg.seed, drscore::seeding::salt::REPLICATION, r);
            let data = sampler.generate(seed);
            let ci_cfg = CiConfig {
                seed,
                lambda_min_ratio: ratio,
                weights_from_penalized: wpen,
                ..CiConfig::default()
            };
            match invert_ci(&data, &ci_cfg, None).ok()? {
                a => match &a.outcome {
                    CiOutcome::Interval(ci) => Some((ci.psi_hat, ci.contains(0.3), false)),
                    CiOutcome::Empty { psi_hat, .. } => Some((*psi_hat, false, true)),
                },
            }
        })
        .collect();
    let k = results.len() as f64;
    let mean = results.iter().map(|r| r.0).sum::<f64>() / k;
    let sd = (results.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt();
    let cov = results.iter().filter(|r| r.1).count() as f64 / k * 100.0;
    let empty = results.iter().filter(|r| r.2).count();
    println!(
        "{label}: ok {} bias10 {:.2} mcsd10 {:.2} cov {:.1} empties {}",
        results.len(), (mean - 0.3) * 10.0, sd * 10.0, cov, empty
    );
}

fn main() {
    let reps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(120);
    run("ratio 1e-3, refit weights   ", 1e-3, false, reps);
    run("ratio 1e-2, penalized weights", 1e-2, true, reps);
}
