//! Denoising score matching: minibatch loss and gradient, Adam, and the
//! training loops for one network or a low/high noise pair.

use std::io::Write;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::model::{NetGrads, ScoreModel, ScoreNet};
use crate::dataset::Dataset;
use crate::error::{param, Result};
use crate::rng::{normal_matrix, Seed};
use crate::schedule::NoiseSchedule;
use crate::source::ScoreSource;

/// Width of the high-noise-only training window `(1 - delta, 1)`.
pub const HIGH_NOISE_DELTA: f64 = 1e-6;
/// Default boundary between the low- and high-noise models.
pub const DEFAULT_T_SPLIT: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    /// Times are drawn uniformly from `[t_range[0], t_range[1]]`.
    pub t_range: [f64; 2],
    pub seed: Seed,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-3,
            batch_size: 2000,
            iterations: 10_000,
            t_range: [super::model::T_MIN, 1.0],
            seed: Seed(0),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Restrict training to the high-noise end `(1 - 1e-6, 1)`.
    pub fn high_noise_only(mut self) -> Self {
        self.t_range = [1.0 - HIGH_NOISE_DELTA, 1.0];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.t_range;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return param(format!("t_range must satisfy 0 <= lo < hi <= 1, got [{lo}, {hi}]"));
        }
        if !(self.lr > 0.0) {
            return param("learning rate must be positive");
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return param("batch size and iterations must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return param("Adam needs beta1, beta2 in [0, 1) and eps > 0");
        }
        Ok(())
    }
}

/// Adam moments, flattened in parameter order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(
    params: Vec<&mut [f64]>,
    grads: Vec<&[f64]>,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    let total: usize = params.iter().map(|p| p.len()).sum();
    let gtotal: usize = grads.iter().map(|g| g.len()).sum();
    if params.len() != grads.len() || total != gtotal || total != state.m.len() {
        return param(format!(
            "Adam shape mismatch: {total} params, {gtotal} grads, {} moments",
            state.m.len()
        ));
    }
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    let mut off = 0;
    for (p, g) in params.into_iter().zip(grads) {
        if p.len() != g.len() {
            return param("Adam buffer length mismatch");
        }
        let m = &mut state.m[off..off + p.len()];
        let v = &mut state.v[off..off + p.len()];
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
        off += p.len();
    }
    Ok(())
}

/// Draw the per-sample times and noise of one minibatch.
pub fn draw_noise(n: usize, d: usize, t_range: [f64; 2], seed: Seed) -> (Array1<f64>, Array2<f64>) {
    let mut rng = seed.rng();
    let [lo, hi] = t_range;
    let t = Array1::from_shape_simple_fn(n, || lo + (hi - lo) * rng.gen::<f64>());
    let eps = normal_matrix(&mut rng, n, d);
    (t, eps)
}

/// Minibatch loss `mean_b |net(alpha x0 + sigma eps, t) - eps|^2` and its exact gradient.
pub fn loss_and_grad(
    net: &ScoreNet,
    x0: ArrayView2<f64>,
    sched: &NoiseSchedule,
    t_range: [f64; 2],
    seed: Seed,
) -> Result<(f64, NetGrads)> {
    let n = x0.nrows();
    if n == 0 {
        return param("empty minibatch");
    }
    let (t, eps) = draw_noise(n, x0.ncols(), t_range, seed);
    let xt = perturb_rows(sched, x0, t.view(), &eps)?;
    let (cache, out) = net.forward_cached(xt.view(), t.view())?;
    let resid = out - &eps;
    let loss = resid.iter().map(|r| r * r).sum::<f64>() / n as f64;
    let grad_out = resid * (2.0 / n as f64);
    let mut grads = net.zero_grads();
    net.backward(cache, &grad_out, &mut grads);
    Ok((loss, grads))
}

/// Loss only, on the identical minibatch `loss_and_grad` would draw.
pub fn minibatch_loss(
    net: &ScoreNet,
    x0: ArrayView2<f64>,
    sched: &NoiseSchedule,
    t_range: [f64; 2],
    seed: Seed,
) -> Result<f64> {
    let n = x0.nrows();
    if n == 0 {
        return param("empty minibatch");
    }
    let (t, eps) = draw_noise(n, x0.ncols(), t_range, seed);
    let xt = perturb_rows(sched, x0, t.view(), &eps)?;
    let out = net.forward_batch(xt.view(), t.view())?;
    Ok((out - &eps).iter().map(|r| r * r).sum::<f64>() / n as f64)
}

fn perturb_rows(
    sched: &NoiseSchedule,
    x0: ArrayView2<f64>,
    t: ndarray::ArrayView1<f64>,
    eps: &Array2<f64>,
) -> Result<Array2<f64>> {
    let mut xt = x0.to_owned();
    for (i, mut row) in xt.rows_mut().into_iter().enumerate() {
        let (a, s) = sched.coeffs(t[i])?;
        let e = eps.row(i);
        row.zip_mut_with(&e, |x, &ev| *x = a * *x + s * ev);
    }
    Ok(xt)
}

/// A trained network, its per-iteration losses, and the optimizer state.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ScoreNet,
    pub losses: Vec<f64>,
    pub adam: AdamState,
}

/// Adam on minibatches drawn with replacement, one stream per iteration.
pub fn train(
    mut net: ScoreNet,
    data: &Dataset,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return param("training data is empty");
    }
    if cfg.batch_size > data.len() {
        return param(format!(
            "batch size {} exceeds dataset size {}",
            cfg.batch_size,
            data.len()
        ));
    }
    if data.dim() != net.dim() {
        return param(format!(
            "data dimension {} does not match network {}",
            data.dim(),
            net.dim()
        ));
    }
    let mut adam = AdamState::new(net.num_params());
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut idx = vec![0usize; cfg.batch_size];
    for it in 0..cfg.iterations {
        let step_seed = cfg.seed.derive(it as u64);
        let mut rng = step_seed.stream(1);
        idx.iter_mut()
            .for_each(|i| *i = rng.gen_range(0..data.len()));
        let batch = data.points.select(Axis(0), &idx);
        let (loss, grads) = loss_and_grad(&net, batch.view(), sched, cfg.t_range, step_seed)?;
        adam_step(
            net.slices_mut(),
            grads.slices(),
            &mut adam,
            cfg.lr,
            cfg.beta1,
            cfg.beta2,
            cfg.eps,
        )?;
        losses.push(loss);
    }
    Ok(TrainOutcome { net, losses, adam })
}

/// Train `low` on `[lo, t_split)` and `high` on `[t_split, hi]`.
///
/// `high` uses `cfg.seed` unchanged, so with `t_split == lo` it reproduces
/// single-network training exactly; `low` is then left untrained.
pub fn train_two_model(
    low: ScoreNet,
    high: ScoreNet,
    data: &Dataset,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    t_split: f64,
) -> Result<(ScoreModel, Vec<f64>, Vec<f64>)> {
    cfg.validate()?;
    let [lo, hi] = cfg.t_range;
    if !(lo <= t_split && t_split < hi) {
        return param(format!("t_split {t_split} must lie in [{lo}, {hi})"));
    }
    let high_cfg = TrainConfig {
        t_range: [t_split, hi],
        ..cfg.clone()
    };
    let high = train(high, data, sched, &high_cfg)?;
    let (low_net, low_losses) = if t_split > lo {
        let low_cfg = TrainConfig {
            t_range: [lo, t_split],
            seed: cfg.seed.derive(u64::MAX),
            ..cfg.clone()
        };
        let out = train(low, data, sched, &low_cfg)?;
        (out.net, out.losses)
    } else {
        (low, Vec::new())
    };
    Ok((
        ScoreModel::Split {
            low: low_net,
            high: high.net,
            t_split,
        },
        low_losses,
        high.losses,
    ))
}

/// Monte-Carlo estimate of the DSM loss at a fixed `t`, `n_mc` noise draws per point.
pub fn eval_dsm_at(
    src: &dyn ScoreSource,
    data: ArrayView2<f64>,
    sched: &NoiseSchedule,
    t: f64,
    n_mc: usize,
    seed: Seed,
) -> Result<f64> {
    if n_mc == 0 || data.nrows() == 0 {
        return param("need at least one data point and one noise draw");
    }
    let (a, s) = sched.coeffs(t)?;
    const CHUNK: usize = 4096;
    let mut total = 0.0;
    for rep in 0..n_mc {
        let mut rng = seed.stream(rep as u64);
        let eps = normal_matrix(&mut rng, data.nrows(), data.ncols());
        let mut start = 0;
        while start < data.nrows() {
            let end = (start + CHUNK).min(data.nrows());
            let e = eps.slice(s![start..end, ..]);
            let xt = &data.slice(s![start..end, ..]) * a + &e * s;
            let pred = src.eps(sched, xt.view(), t)?;
            total += (pred - e).iter().map(|r| r * r).sum::<f64>();
            start = end;
        }
    }
    Ok(total / (n_mc * data.nrows()) as f64)
}

/// CSV with header `iter,loss`.
pub fn write_loss_csv<W: Write>(losses: &[f64], mut w: W) -> Result<()> {
    writeln!(w, "iter,loss")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(w, "{i},{l}")?;
    }
    Ok(())
}
