//! Every sampler on the exact score of the 10-d two-mode mixture, scored on
//! coordinate 0 by the KS distance to the true marginal CDF and by the share
//! of samples in each mode.
//!
//! cargo run --release --example compare_samplers

use std::time::Instant;

use collapse_lab::mog::MogSpec;
use collapse_lab::rng::Seed;
use collapse_lab::samplers::{run_sampler, SamplerConfig, SamplerKind};
use collapse_lab::schedule::NoiseSchedule;

fn main() -> collapse_lab::error::Result<()> {
    let sched = NoiseSchedule::vp();
    let mog = MogSpec::symmetric_pair(10, 0.2)?;
    let n = 10_000;
    println!("{:6} {:>6} {:>8} {:>10} {:>8}", "kind", "steps", "KS", "P(x > 0)", "seconds");
    for kind in [
        SamplerKind::Ode,
        SamplerKind::Sde,
        SamplerKind::Ddim,
        SamplerKind::Pc,
        SamplerKind::Ald,
        SamplerKind::Dpm2,
    ] {
        let cfg = SamplerConfig::new(kind);
        let start = Instant::now();
        let (data, _) = run_sampler(&mog, &sched, &cfg, n, Seed(5), false)?;
        let secs = start.elapsed().as_secs_f64();
        let mut xs = data.points.column(0).to_vec();
        xs.sort_by(f64::total_cmp);
        let mut ks: f64 = 0.0;
        for (i, &x) in xs.iter().enumerate() {
            let f = mog.marginal_cdf(&sched, x, 0.0, 0)?;
            ks = ks.max((f - i as f64 / n as f64).abs()).max((f - (i + 1) as f64 / n as f64).abs());
        }
        let right = xs.iter().filter(|&&x| x > 0.0).count() as f64 / n as f64;
        println!("{:6} {:>6} {ks:>8.4} {right:>10.3} {secs:>8.2}", kind.name(), cfg.steps());
    }
    Ok(())
}
