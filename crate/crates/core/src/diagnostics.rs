//! Instrumentation for where a learned field goes wrong.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{param, Result};
use crate::mog::MogSpec;
use crate::rng::{normal_matrix, Seed};
use crate::samplers::{run_sampler, SamplerConfig, SamplerKind, Trajectory};
use crate::schedule::NoiseSchedule;
use crate::source::ScoreSource;

/// Test points from the marginal at `t`: `alpha_t x0 + sigma_t eps`, `x0` from the mixture.
pub fn marginal_points(oracle: &MogSpec, sched: &NoiseSchedule, t: f64, n: usize, seed: Seed) -> Result<Array2<f64>> {
    let (a, s) = sched.coeffs(t)?;
    let mut rng = seed.rng();
    let x0 = oracle.sample(n, &mut rng);
    let eps = normal_matrix(&mut rng, n, oracle.dim());
    Ok(x0 * a + eps * s)
}

/// Mean over points and coordinates of `|v_model - v_oracle|` at time `t`.
pub fn velocity_mae(
    model: &dyn ScoreSource,
    oracle: &MogSpec,
    sched: &NoiseSchedule,
    t: f64,
    n_points: usize,
    seed: Seed,
) -> Result<f64> {
    if n_points == 0 {
        return param("velocity MAE needs at least one point");
    }
    if model.dim() != oracle.dim() {
        return param(format!(
            "model is {}-d but oracle is {}-d",
            model.dim(),
            oracle.dim()
        ));
    }
    let x = marginal_points(oracle, sched, t, n_points, seed)?;
    let vm = model.velocity(sched, x.view(), t)?;
    let vo = ScoreSource::velocity(oracle, sched, x.view(), t)?;
    Ok((vm - vo).mapv(f64::abs).mean().unwrap())
}

/// One coordinate of the velocity field over an `(x, t)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    pub xs: Vec<f64>,
    pub ts: Vec<f64>,
    /// `values[[i, j]] = v(x_j, t_i)[dim]`.
    pub values: Array2<f64>,
}

impl VelocityGrid {
    /// Columns `x,t,v`, time-major.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,t,v")?;
        for (i, t) in self.ts.iter().enumerate() {
            for (j, x) in self.xs.iter().enumerate() {
                writeln!(w, "{x},{t},{}", self.values[[i, j]])?;
            }
        }
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
        .collect()
}

/// Sweep coordinate `dim` over `x_range` and time over `t_range`; the other
/// coordinates stay at one standard normal draw from `seed`.
pub fn velocity_grid(
    src: &dyn ScoreSource,
    sched: &NoiseSchedule,
    dim: usize,
    x_range: (f64, f64),
    t_range: (f64, f64),
    resolution: (usize, usize),
    seed: Seed,
) -> Result<VelocityGrid> {
    let d = src.dim();
    if dim >= d {
        return param(format!("dimension {dim} out of range for {d}-d source"));
    }
    let (nx, nt) = resolution;
    if nx < 2 || nt < 2 {
        return param(format!("grid resolution must be at least 2x2, got {nx}x{nt}"));
    }
    let xs = linspace(x_range.0, x_range.1, nx);
    let ts = linspace(t_range.0, t_range.1, nt);
    let base = normal_matrix(&mut seed.rng(), 1, d);
    let mut pts = Array2::zeros((nx, d));
    for (j, mut row) in pts.outer_iter_mut().enumerate() {
        row.assign(&base.row(0));
        row[dim] = xs[j];
    }
    let mut values = Array2::zeros((nt, nx));
    for (i, &t) in ts.iter().enumerate() {
        let v = src.velocity(sched, pts.view(), t)?;
        values.row_mut(i).assign(&v.column(dim));
    }
    Ok(VelocityGrid { xs, ts, values })
}

fn center(e: &Array2<f64>) -> Array2<f64> {
    let mean = e.mean_axis(Axis(0)).unwrap();
    e - &mean
}

/// Covariance between each step's velocity error and the error at the
/// start, along trajectories driven by `model`.
pub fn error_covariance(
    model: &dyn ScoreSource,
    oracle: &dyn ScoreSource,
    sched: &NoiseSchedule,
    steps: usize,
    n_chains: usize,
    kind: SamplerKind,
    seed: Seed,
) -> Result<Vec<(f64, f64)>> {
    if !matches!(kind, SamplerKind::Ode | SamplerKind::Sde) {
        return param(format!("error covariance runs ODE or SDE trajectories, not {}", kind.name()));
    }
    if n_chains == 0 {
        return param("error covariance needs at least one chain");
    }
    let cfg = SamplerConfig::new(kind).with_steps(steps);
    let (_, traj) = run_sampler(model, sched, &cfg, n_chains, seed, true)?;
    let traj = traj.expect("trajectory requested");
    error_covariance_along(model, oracle, sched, &traj)
}

/// [`error_covariance`] on a recorded trajectory.
pub fn error_covariance_along(
    model: &dyn ScoreSource,
    oracle: &dyn ScoreSource,
    sched: &NoiseSchedule,
    traj: &Trajectory,
) -> Result<Vec<(f64, f64)>> {
    if traj.is_empty() || traj.chains() == 0 {
        return param("error covariance needs a nonempty trajectory");
    }
    let err = |x: ArrayView2<f64>, t: f64| -> Result<Array2<f64>> {
        Ok(model.velocity(sched, x, t)? - oracle.velocity(sched, x, t)?)
    };
    let e1 = center(&err(traj.states[0].view(), traj.times[0])?);
    let denom = (traj.chains() * traj.dim()) as f64;
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(&t, x)| {
            let et = center(&err(x.view(), t)?);
            Ok((t, (&et * &e1).sum() / denom))
        })
        .collect()
}

/// Normalized histograms of one coordinate at each recorded time.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityEvolution {
    pub times: Vec<f64>,
    pub centers: Vec<f64>,
    pub width: f64,
    /// `density[[i, b]]` for time `i`, bin `b`.
    pub density: Array2<f64>,
}

impl DensityEvolution {
    /// Columns `t,bin_center,density`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,bin_center,density")?;
        for (i, t) in self.times.iter().enumerate() {
            for (b, c) in self.centers.iter().enumerate() {
                writeln!(w, "{t},{c},{}", self.density[[i, b]])?;
            }
        }
        Ok(())
    }
}

/// Rows integrate to 1 over the points that fall inside `range`; a time
/// with no point in range gets an all-zero row.
pub fn density_evolution(traj: &Trajectory, dim: usize, bins: usize, range: (f64, f64)) -> Result<DensityEvolution> {
    if traj.is_empty() || traj.chains() == 0 {
        return param("density evolution needs a nonempty trajectory");
    }
    if dim >= traj.dim() {
        return param(format!("dimension {dim} out of range for {}-d trajectory", traj.dim()));
    }
    if bins == 0 || !(range.0 < range.1) {
        return param(format!("need bins >= 1 and lo < hi, got {bins} bins on {range:?}"));
    }
    let width = (range.1 - range.0) / bins as f64;
    let centers = (0..bins).map(|b| range.0 + (b as f64 + 0.5) * width).collect();
    let mut density = Array2::zeros((traj.len(), bins));
    for (i, x) in traj.states.iter().enumerate() {
        let mut counts = Array1::<f64>::zeros(bins);
        let mut inside = 0usize;
        for &v in x.column(dim) {
            if v < range.0 || v > range.1 {
                continue;
            }
            let b = (((v - range.0) / width) as usize).min(bins - 1);
            counts[b] += 1.0;
            inside += 1;
        }
        if inside > 0 {
            counts /= inside as f64 * width;
        }
        density.row_mut(i).assign(&counts);
    }
    Ok(DensityEvolution {
        times: traj.times.clone(),
        centers,
        width,
        density,
    })
}

/// `mae.csv`: `key,mae` rows where `key` names the swept quantity.
pub fn write_mae_csv<W: Write>(key: &str, rows: &[(f64, f64)], mut w: W) -> Result<()> {
    writeln!(w, "{key},mae")?;
    for (k, m) in rows {
        writeln!(w, "{k},{m}")?;
    }
    Ok(())
}

/// `errcov.csv`: `t,c`.
pub fn write_errcov_csv<W: Write>(rows: &[(f64, f64)], mut w: W) -> Result<()> {
    writeln!(w, "t,c")?;
    for (t, c) in rows {
        writeln!(w, "{t},{c}")?;
    }
    Ok(())
}

/// Mean of `c(t)` over `lo <= t < hi`.
pub fn mean_covariance(rows: &[(f64, f64)], lo: f64, hi: f64) -> Option<f64> {
    let sel: Vec<f64> = rows
        .iter()
        .filter(|(t, _)| *t >= lo && *t < hi)
        .map(|&(_, c)| c)
        .collect();
    (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
}
