//! Diagnostics on a deliberately imperfect score: the exact mixture noise
//! prediction plus a smooth position-dependent error. Reports velocity MAE over time, the error covariance
//! along ODE and SDE paths, and how the 1-d density evolves under the ODE.
//!
//! cargo run --release --example diagnostics

use collapse_lab::diagnostics::{density_evolution, error_covariance, mean_covariance, velocity_mae};
use collapse_lab::error::Result;
use collapse_lab::mog::MogSpec;
use collapse_lab::rng::Seed;
use collapse_lab::samplers::{run_sampler, SamplerConfig, SamplerKind};
use collapse_lab::schedule::NoiseSchedule;
use collapse_lab::source::{score_from_eps, ScoreSource};
use ndarray::{Array2, ArrayView2};

/// Exact noise prediction plus `bias * sin(3 x)` on every coordinate.
struct Biased {
    inner: MogSpec,
    bias: f64,
}

impl ScoreSource for Biased {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn eps(&self, sched: &NoiseSchedule, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        Ok(self.inner.eps(sched, x, t)? + x.mapv(|v| self.bias * (3.0 * v).sin()))
    }

    fn score(&self, sched: &NoiseSchedule, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        score_from_eps(sched, t, self.eps(sched, x, t)?)
    }
}

fn main() -> Result<()> {
    let sched = NoiseSchedule::vp();
    let mog = MogSpec::symmetric_pair(2, 0.2)?;
    let model = Biased { inner: mog.clone(), bias: 0.1 };

    for t in [1.0, 0.5, 0.1] {
        println!("t={t:<4} velocity MAE {:.4}", velocity_mae(&model, &mog, &sched, t, 2000, Seed(1))?);
    }
    for kind in [SamplerKind::Ode, SamplerKind::Sde] {
        let rows = error_covariance(&model, &mog, &sched, 100, 1000, kind, Seed(2))?;
        let late = mean_covariance(&rows, 0.8, 1.0).unwrap_or(f64::NAN);
        println!("{}: mean error covariance for t in [0.8, 1) {late:.4}", kind.name());
    }

    let cfg = SamplerConfig::ode();
    let (_, traj) = run_sampler(&mog, &sched, &cfg, 5000, Seed(3), true)?;
    let evo = density_evolution(&traj.expect("recorded"), 0, 30, (-3.0, 3.0))?;
    for (i, t) in evo.times.iter().enumerate().step_by(25) {
        let peak = evo.density.row(i).iter().cloned().fold(0.0, f64::max);
        println!("t={t:.3} density peak {peak:.3}");
    }
    Ok(())
}
