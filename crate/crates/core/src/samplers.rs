//! Reverse-time generation from any [`ScoreSource`].
//!
//! Step functions act on a batch: each row of `x` is one chain. Chains
//! draw their start point and all their noise from their own sub-stream
//! `seed.stream(chain)`, so a chain's path does not depend on how many
//! chains run, how they are blocked, or how many threads are used.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::{time_grid, Dataset};
use crate::error::{param, Error, Result};
use crate::rng::{normal, Rng, Seed};
use crate::schedule::NoiseSchedule;
use crate::scorenet::T_MIN;
use crate::source::ScoreSource;

/// Chains per block. Blocks are the unit of threading and bound peak memory.
pub const BLOCK: usize = 4096;

pub const DEFAULT_SNR: f64 = 0.16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ode,
    Sde,
    Ddim,
    Pc,
    Ald,
    Dpm2,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Ode => "ode",
            SamplerKind::Sde => "sde",
            SamplerKind::Ddim => "ddim",
            SamplerKind::Pc => "pc",
            SamplerKind::Ald => "ald",
            SamplerKind::Dpm2 => "dpm2",
        }
    }

    pub fn default_steps(self) -> usize {
        match self {
            SamplerKind::Sde => 1000,
            _ => 100,
        }
    }

    pub fn is_deterministic(self) -> bool {
        matches!(self, SamplerKind::Ode | SamplerKind::Ddim | SamplerKind::Dpm2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(rename = "sampler")]
    pub kind: SamplerKind,
    /// Grid steps; `None` picks the per-kind default.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// Corrector signal-to-noise ratio `r`.
    #[serde(default = "default_snr")]
    pub snr: f64,
    /// Corrector steps `M` after each predictor step.
    #[serde(default = "default_one")]
    pub corrector_steps: usize,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_steps_per_level")]
    pub steps_per_level: usize,
    #[serde(default = "default_base_step")]
    pub base_step: f64,
}

fn default_t_end() -> f64 {
    T_MIN
}
fn default_snr() -> f64 {
    DEFAULT_SNR
}
fn default_one() -> usize {
    1
}
fn default_levels() -> usize {
    100
}
fn default_steps_per_level() -> usize {
    10
}
fn default_base_step() -> f64 {
    2e-5
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind) -> Self {
        SamplerConfig {
            kind,
            steps: None,
            t_end: default_t_end(),
            snr: default_snr(),
            corrector_steps: 1,
            levels: default_levels(),
            steps_per_level: default_steps_per_level(),
            base_step: default_base_step(),
        }
    }

    pub fn ode() -> Self {
        Self::new(SamplerKind::Ode)
    }

    pub fn sde() -> Self {
        Self::new(SamplerKind::Sde)
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = Some(steps);
        self
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or_else(|| self.kind.default_steps())
    }

    /// Every problem with the config, as `key: reason` strings.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.steps == Some(0) {
            out.push("steps: must be at least 1".to_string());
        }
        if !(self.t_end > 0.0 && self.t_end < 1.0) {
            out.push(format!("t_end: must lie in (0, 1), got {}", self.t_end));
        }
        if self.kind == SamplerKind::Pc {
            if !(self.snr > 0.0 && self.snr.is_finite()) {
                out.push(format!("snr: must be positive, got {}", self.snr));
            }
            if self.corrector_steps == 0 {
                out.push("corrector_steps: must be at least 1".to_string());
            }
        }
        if self.kind == SamplerKind::Ald {
            if self.levels == 0 {
                out.push("levels: must be at least 1".to_string());
            }
            if !(self.base_step > 0.0 && self.base_step.is_finite()) {
                out.push(format!("base_step: must be positive, got {}", self.base_step));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

/// Execution knobs that do not change results.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub threads: usize,
    /// Keep every `stride`-th grid state (the first and last are always kept).
    pub stride: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            threads: 1,
            stride: 1,
        }
    }
}

/// States of all chains at a decreasing sequence of times.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Array2<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn chains(&self) -> usize {
        self.states.first().map_or(0, |s| s.nrows())
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.ncols())
    }

    /// Columns `chain,t,dim0,...`; one row per chain per kept time.
    pub fn write_csv<W: Write>(&self, mut w: W, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let d = self.dim();
        let mut header = String::from("chain,t");
        for j in 0..d {
            header.push_str(&format!(",dim{j}"));
        }
        writeln!(w, "{header}")?;
        let last = self.len().saturating_sub(1);
        for (k, (t, x)) in self.times.iter().zip(&self.states).enumerate() {
            if k % stride != 0 && k != last {
                continue;
            }
            for (c, row) in x.outer_iter().enumerate() {
                let mut line = format!("{c},{t}");
                for v in row {
                    line.push(',');
                    line.push_str(&v.to_string());
                }
                writeln!(w, "{line}")?;
            }
        }
        Ok(())
    }
}

fn check_step(t: f64, dt: f64) -> Result<()> {
    if !(dt >= 0.0) || t - dt < 0.0 {
        return param(format!("cannot step from t = {t} by dt = {dt}"));
    }
    Ok(())
}

/// Euler step of the probability-flow ODE backward in time.
pub fn ode_step(
    src: &dyn ScoreSource,
    sched: &NoiseSchedule,
    x: ArrayView2<f64>,
    t: f64,
    dt: f64,
) -> Result<Array2<f64>> {
    check_step(t, dt)?;
    if dt == 0.0 {
        return Ok(x.to_owned());
    }
    let v = src.velocity(sched, x, t)?;
    Ok(&x - &(v * dt))
}

/// Euler–Maruyama step of the reverse SDE with caller-supplied N(0, I) noise.
pub fn sde_step(
    src: &dyn ScoreSource,
    sched: &NoiseSchedule,
    x: ArrayView2<f64>,
    t: f64,
    dt: f64,
    noise: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    check_step(t, dt)?;
    if dt == 0.0 {
        return Ok(x.to_owned());
    }
    let k = sched.drift_coeff(t)?;
    let g2 = sched.diffusion_sq(t)?;
    let gs = g2.max(0.0).sqrt() * dt.sqrt();
    let mut out = src.score(sched, x, t)?;
    ndarray::Zip::from(&mut out)
        .and(&x)
        .and(&noise)
        .for_each(|o, &xv, &z| *o = xv - dt * (k * xv - g2 * *o) + gs * z);
    Ok(out)
}

/// DDIM step from `t` to `s` through the predicted clean point.
pub fn ddim_step(
    src: &dyn ScoreSource,
    sched: &NoiseSchedule,
    x: ArrayView2<f64>,
    t: f64,
    s: f64,
) -> Result<Array2<f64>> {
    if s > t {
        return param(format!("DDIM target s = {s} is after t = {t}"));
    }
    if s == t {
        return Ok(x.to_owned());
    }
    let (at, st) = sched.coeffs(t)?;
    let (as_, ss) = sched.coeffs(s)?;
    if at <= 0.0 {
        return Err(Error::Singularity(format!("alpha_t = 0 at t = {t}")));
    }
    let mut e = src.eps(sched, x, t)?;
    ndarray::Zip::from(&mut e)
        .and(&x)
        .for_each(|ev, &xv| *ev = as_ * (xv - st * *ev) / at + ss * *ev);
    Ok(e)
}

/// One Langevin correction with step `alpha_t (r |z| / |s|)^2`, per chain.
pub fn corrector_step(
    src: &dyn ScoreSource,
    sched: &NoiseSchedule,
    x: ArrayView2<f64>,
    t: f64,
    r: f64,
    noise: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let a = sched.alpha(t)?;
    let s = src.score(sched, x, t)?;
    let mut out = x.to_owned();
    for ((mut row, srow), zrow) in out.outer_iter_mut().zip(s.outer_iter()).zip(noise.outer_iter()) {
        let sn = srow.dot(&srow).sqrt();
        if sn == 0.0 {
            continue;
        }
        let zn = zrow.dot(&zrow).sqrt();
        let step = a * (r * zn / sn).powi(2);
        let amp = (2.0 * step).sqrt();
        for ((xv, &sv), &zv) in row.iter_mut().zip(srow.iter()).zip(zrow.iter()) {
            *xv += step * sv + amp * zv;
        }
    }
    Ok(out)
}

/// Second-order exponential integrator step in log-SNR with a midpoint
/// evaluation reached by a half DDIM step.
pub fn dpm2_step(
    src: &dyn ScoreSource,
    sched: &NoiseSchedule,
    x: ArrayView2<f64>,
    t: f64,
    s: f64,
) -> Result<Array2<f64>> {
    if s > t {
        return param(format!("DPM2 target s = {s} is after t = {t}"));
    }
    if s == t {
        return Ok(x.to_owned());
    }
    let (at, _) = sched.coeffs(t)?;
    let (as_, ss) = sched.coeffs(s)?;
    let (lt, ls) = (sched.lambda(t)?, sched.lambda(s)?);
    let h = ls - lt;
    let mid = sched.t_from_lambda(0.5 * (lt + ls), s, t)?;
    let (am, sm) = sched.coeffs(mid)?;

    let e_t = src.eps(sched, x, t)?;
    let c = sm * (0.5 * h).exp_m1();
    let mut u = x.mapv(|v| v * am / at);
    u.zip_mut_with(&e_t, |uv, &ev| *uv -= c * ev);
    let mut e_mid = src.eps(sched, u.view(), mid)?;
    let c = ss * h.exp_m1();
    ndarray::Zip::from(&mut e_mid)
        .and(&x)
        .for_each(|ev, &xv| *ev = as_ / at * xv - c * *ev);
    Ok(e_mid)
}

/// Per-chain streams for chains `first..first + n`.
fn chain_rngs(seed: Seed, first: usize, n: usize) -> Vec<Rng> {
    (first..first + n).map(|i| seed.stream(i as u64)).collect()
}

/// Row `i` drawn from `rngs[i]`.
fn chain_normals(rngs: &mut [Rng], d: usize) -> Array2<f64> {
    let mut z = Array2::zeros((rngs.len(), d));
    for (mut row, rng) in z.outer_iter_mut().zip(rngs.iter_mut()) {
        row.iter_mut().for_each(|v| *v = normal(rng));
    }
    z
}

/// Times at which a run of `cfg` evaluates the field, first to last.
pub fn sampler_grid(sched: &NoiseSchedule, cfg: &SamplerConfig) -> Result<Vec<f64>> {
    let t_max = sched.t_max();
    if cfg.kind == SamplerKind::Ald {
        if cfg.levels == 1 {
            return Ok(vec![cfg.t_end]);
        }
        return time_grid(cfg.levels - 1, cfg.t_end, t_max);
    }
    time_grid(cfg.steps(), cfg.t_end, t_max)
}

struct BlockOut {
    end: Array2<f64>,
    states: Vec<Array2<f64>>,
}

fn keep(k: usize, last: usize, stride: usize) -> bool {
    k.is_multiple_of(stride) || k == last
}

fn run_block(
    src: &dyn ScoreSource,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    grid: &[f64],
    mut rngs: Vec<Rng>,
    stride: Option<usize>,
) -> Result<BlockOut> {
    let d = src.dim();
    let mut x = chain_normals(&mut rngs, d);
    let mut states = Vec::new();

    if cfg.kind == SamplerKind::Ald {
        let (_, s_last) = sched.coeffs(*grid.last().unwrap())?;
        let last = grid.len() - 1;
        for (k, &t) in grid.iter().enumerate() {
            let (_, s) = sched.coeffs(t)?;
            let step = cfg.base_step * (s / s_last).powi(2);
            let amp = (2.0 * step).sqrt();
            for _ in 0..cfg.steps_per_level {
                let sc = src.score(sched, x.view(), t)?;
                let z = chain_normals(&mut rngs, d);
                ndarray::Zip::from(&mut x)
                    .and(&sc)
                    .and(&z)
                    .for_each(|xv, &sv, &zv| *xv += step * sv + amp * zv);
            }
            if let Some(st) = stride {
                if keep(k, last, st) {
                    states.push(x.clone());
                }
            }
        }
        return Ok(BlockOut { end: x, states });
    }

    let last = grid.len() - 1;
    if let Some(st) = stride {
        if keep(0, last, st) {
            states.push(x.clone());
        }
    }
    for k in 0..last {
        let (t, s) = (grid[k], grid[k + 1]);
        let dt = t - s;
        x = match cfg.kind {
            SamplerKind::Ode => ode_step(src, sched, x.view(), t, dt)?,
            SamplerKind::Sde => {
                let z = chain_normals(&mut rngs, d);
                sde_step(src, sched, x.view(), t, dt, z.view())?
            }
            SamplerKind::Ddim => ddim_step(src, sched, x.view(), t, s)?,
            SamplerKind::Dpm2 => dpm2_step(src, sched, x.view(), t, s)?,
            SamplerKind::Pc => {
                let mut y = ode_step(src, sched, x.view(), t, dt)?;
                for _ in 0..cfg.corrector_steps {
                    let z = chain_normals(&mut rngs, d);
                    y = corrector_step(src, sched, y.view(), s, cfg.snr, z.view())?;
                }
                y
            }
            SamplerKind::Ald => unreachable!(),
        };
        if let Some(st) = stride {
            if keep(k + 1, last, st) {
                states.push(x.clone());
            }
        }
    }
    Ok(BlockOut { end: x, states })
}

/// Draw `n` samples with the sampler `cfg`, optionally recording the path.
pub fn run_sampler(
    src: &dyn ScoreSource,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    n: usize,
    seed: Seed,
    record: bool,
) -> Result<(Dataset, Option<Trajectory>)> {
    run_sampler_with(src, sched, cfg, n, seed, record, RunOptions::default())
}

pub fn run_sampler_with(
    src: &dyn ScoreSource,
    sched: &NoiseSchedule,
    cfg: &SamplerConfig,
    n: usize,
    seed: Seed,
    record: bool,
    opts: RunOptions,
) -> Result<(Dataset, Option<Trajectory>)> {
    cfg.validate()?;
    let grid = sampler_grid(sched, cfg)?;
    let d = src.dim();
    let stride = record.then_some(opts.stride.max(1));
    let starts: Vec<usize> = (0..n).step_by(BLOCK).collect();

    let blocks: Vec<Result<BlockOut>> = if opts.threads <= 1 || starts.len() <= 1 {
        starts
            .iter()
            .map(|&b| {
                let rngs = chain_rngs(seed, b, BLOCK.min(n - b));
                run_block(src, sched, cfg, &grid, rngs, stride)
            })
            .collect()
    } else {
        let threads = opts.threads.min(starts.len());
        let mut slots: Vec<Option<Result<BlockOut>>> = (0..starts.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let chunks: Vec<_> = slots
                .chunks_mut(starts.len().div_ceil(threads))
                .enumerate()
                .map(|(ci, chunk)| {
                    let first = ci * starts.len().div_ceil(threads);
                    let grid = &grid;
                    let starts = &starts;
                    scope.spawn(move || {
                        for (j, slot) in chunk.iter_mut().enumerate() {
                            let b = starts[first + j];
                            let rngs = chain_rngs(seed, b, BLOCK.min(n - b));
                            *slot = Some(run_block(src, sched, cfg, grid, rngs, stride));
                        }
                    })
                })
                .collect();
            for c in chunks {
                c.join().expect("sampler worker panicked");
            }
        });
        slots.into_iter().map(|s| s.unwrap()).collect()
    };
    let blocks = blocks.into_iter().collect::<Result<Vec<_>>>()?;

    let ends: Vec<_> = blocks.iter().map(|b| b.end.view()).collect();
    let points = if ends.is_empty() {
        Array2::zeros((0, d))
    } else {
        ndarray::concatenate(Axis(0), &ends).expect("block widths agree")
    };

    let traj = stride.map(|st| {
        let last = grid.len() - 1;
        let times: Vec<f64> = grid
            .iter()
            .enumerate()
            .filter(|&(k, _)| keep(k, last, st))
            .map(|(_, &t)| t)
            .collect();
        let states = (0..times.len())
            .map(|k| {
                if blocks.is_empty() {
                    return Array2::zeros((0, d));
                }
                let parts: Vec<_> = blocks.iter().map(|b| b.states[k].view()).collect();
                ndarray::concatenate(Axis(0), &parts).expect("block widths agree")
            })
            .collect();
        Trajectory { times, states }
    });

    Ok((Dataset::new(points)?, traj))
}

/// Annealed Langevin dynamics from `N(0, I)` over `levels` noise levels.
pub fn ald_run(
    src: &dyn ScoreSource,
    sched: &NoiseSchedule,
    n: usize,
    levels: usize,
    steps_per_level: usize,
    base_step: f64,
    seed: Seed,
) -> Result<Dataset> {
    let cfg = SamplerConfig {
        levels,
        steps_per_level,
        base_step,
        ..SamplerConfig::new(SamplerKind::Ald)
    };
    Ok(run_sampler(src, sched, &cfg, n, seed, false)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::ZeroScore;
    use ndarray::array;

    #[test]
    fn config_defaults_and_json() {
        let c: SamplerConfig = serde_json::from_str(r#"{"sampler": "ode"}"#).unwrap();
        assert_eq!(c.steps(), 100);
        let c: SamplerConfig = serde_json::from_str(r#"{"sampler": "sde"}"#).unwrap();
        assert_eq!(c.steps(), 1000);
        let c: SamplerConfig = serde_json::from_str(r#"{"sampler": "pc"}"#).unwrap();
        assert_eq!((c.snr, c.corrector_steps), (0.16, 1));
        assert!(serde_json::from_str::<SamplerConfig>(r#"{"sampler": "euler"}"#).is_err());
    }

    #[test]
    fn config_problems_list_every_key() {
        let mut c = SamplerConfig::new(SamplerKind::Pc);
        c.steps = Some(0);
        c.snr = -1.0;
        c.corrector_steps = 0;
        let p = c.problems();
        assert_eq!(p.len(), 3);
        assert!(p[0].starts_with("steps") && p[1].starts_with("snr"));
    }

    #[test]
    fn zero_dt_is_identity() {
        let s = NoiseSchedule::vp();
        let x = array![[0.3, -1.0]];
        let src = ZeroScore(2);
        assert_eq!(ode_step(&src, &s, x.view(), 0.5, 0.0).unwrap(), x);
        assert_eq!(sde_step(&src, &s, x.view(), 0.5, 0.0, x.view()).unwrap(), x);
        assert_eq!(ddim_step(&src, &s, x.view(), 0.5, 0.5).unwrap(), x);
        assert_eq!(dpm2_step(&src, &s, x.view(), 0.5, 0.5).unwrap(), x);
    }

    #[test]
    fn empty_run() {
        let (d, tr) = run_sampler(&ZeroScore(3), &NoiseSchedule::vp(), &SamplerConfig::ode(), 0, Seed(1), true).unwrap();
        assert_eq!(d.points.dim(), (0, 3));
        assert_eq!(tr.unwrap().chains(), 0);
    }

    #[test]
    fn trajectory_csv_thinning() {
        let tr = Trajectory {
            times: vec![1.0, 0.5, 0.1],
            states: vec![array![[1.0], [2.0]], array![[3.0], [4.0]], array![[5.0], [6.0]]],
        };
        let mut buf = Vec::new();
        tr.write_csv(&mut buf, 2).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "chain,t,dim0\n0,1,1\n1,1,2\n0,0.1,5\n1,0.1,6\n");
    }
}
