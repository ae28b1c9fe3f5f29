//! The analytic mixture score: check it against finite differences of the
//! log density, then sample with it and compare against the exact CDF.
//!
//! cargo run --release --example oracle_score

use collapse_lab::mog::MogSpec;
use collapse_lab::rng::{normal_matrix, Seed};
use collapse_lab::samplers::{run_sampler, SamplerConfig};
use collapse_lab::schedule::NoiseSchedule;
use ndarray::Array1;

fn main() -> collapse_lab::error::Result<()> {
    let sched = NoiseSchedule::vp();
    let mog = MogSpec::symmetric_pair(10, 0.2)?;

    let mut rng = Seed(1).rng();
    let pts = normal_matrix(&mut rng, 5, 10);
    let h = 1e-5;
    for (i, x) in pts.outer_iter().enumerate() {
        let t = 0.05 + 0.2 * i as f64;
        let s = mog.score(&sched, x, t)?;
        let mut worst: f64 = 0.0;
        for k in 0..10 {
            let mut e = Array1::zeros(10);
            e[k] = h;
            let fd = (mog.log_density(&sched, (&x + &e).view(), t)? - mog.log_density(&sched, (&x - &e).view(), t)?)
                / (2.0 * h);
            worst = worst.max((fd - s[k]).abs() / s[k].abs().max(1e-12));
        }
        println!("t={t:.2}: max relative error of score vs finite differences {worst:.2e}");
    }

    let one_d = MogSpec::symmetric_pair(1, 0.2)?;
    for cfg in [SamplerConfig::ode().with_steps(500), SamplerConfig::sde()] {
        let (data, _) = run_sampler(&one_d, &sched, &cfg, 20_000, Seed(2), false)?;
        let mut xs: Vec<f64> = data.points.column(0).to_vec();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = one_d.marginal_cdf(&sched, x, 0.0, 0).unwrap();
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        println!("{} with {} steps: KS distance to the exact CDF {ks:.4}", cfg.kind.name(), cfg.steps());
    }
    Ok(())
}
