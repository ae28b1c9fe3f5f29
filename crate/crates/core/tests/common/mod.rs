#![allow(dead_code)]

use collapse_lab::error::Result;
use collapse_lab::rng::{normal_matrix, Seed};
use collapse_lab::scorenet::{draw_noise, loss_and_grad, minibatch_loss, Activation, Architecture, Mlp, ScoreNet, SkipMode, T_MIN};
use collapse_lab::schedule::NoiseSchedule;
use collapse_lab::source::{score_from_eps, ScoreSource};
use ndarray::{Array2, ArrayView2};
use rand::Rng as _;

/// Two-sided KS distance between a sample and a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max)
}

/// Another source with its score multiplied by a constant.
pub struct Scaled<'a>(pub &'a dyn ScoreSource, pub f64);

impl ScoreSource for Scaled<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn score(&self, s: &NoiseSchedule, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        Ok(self.0.score(s, x, t)? * self.1)
    }
    fn eps(&self, s: &NoiseSchedule, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        Ok(self.0.eps(s, x, t)? * self.1)
    }
}

/// Predicts the same noise vector everywhere.
pub struct ConstEps(pub Vec<f64>);

impl ScoreSource for ConstEps {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn score(&self, s: &NoiseSchedule, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        score_from_eps(s, t, self.eps(s, x, t)?)
    }
    fn eps(&self, _: &NoiseSchedule, x: ArrayView2<f64>, _: f64) -> Result<Array2<f64>> {
        let mut e = Array2::zeros(x.raw_dim());
        for mut row in e.outer_iter_mut() {
            row.iter_mut().zip(&self.0).for_each(|(v, &c)| *v = c);
        }
        Ok(e)
    }
}

/// Closed-form probability-flow map of `N(m, v)` data from time `t` to `s`.
pub fn gaussian_flow(sched: &NoiseSchedule, m: f64, v: f64, x: f64, t: f64, s: f64) -> f64 {
    let (at, st) = sched.coeffs(t).unwrap();
    let (as_, ss) = sched.coeffs(s).unwrap();
    let z = (x - at * m) / (at * at * v + st * st).sqrt();
    as_ * m + (as_ * as_ * v + ss * ss).sqrt() * z
}

const FD_STEP: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Smallest |pre-activation| over all hidden units of `mlp` on `input`.
fn kink_margin(mlp: &Mlp, input: ArrayView2<f64>) -> f64 {
    let mut h = input.to_owned();
    let mut margin = f64::INFINITY;
    for (k, (w, b)) in mlp.weights.iter().zip(&mlp.biases).enumerate() {
        let z = h.dot(w) + b;
        if k + 1 == mlp.weights.len() {
            break;
        }
        margin = margin.min(z.iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
        h = z.mapv(|v| v.max(0.0));
    }
    margin
}

fn batch_inputs(x0: ArrayView2<f64>, sched: &NoiseSchedule, range: [f64; 2], seed: Seed) -> Array2<f64> {
    let (t, eps) = draw_noise(x0.nrows(), x0.ncols(), range, seed);
    let mut input = Array2::zeros((x0.nrows(), x0.ncols() + 1));
    for i in 0..x0.nrows() {
        let (a, s) = sched.coeffs(t[i]).unwrap();
        for j in 0..x0.ncols() {
            input[[i, j]] = a * x0[[i, j]] + s * eps[[i, j]];
        }
        input[[i, x0.ncols()]] = t[i];
    }
    input
}

/// Largest relative gap between the analytic DSM gradient and central
/// differences, over every parameter of a small random network.
pub fn max_gradient_error(depth: usize, act: Activation, skip: SkipMode) -> f64 {
    let sched = NoiseSchedule::vp();
    let d = 2;
    let arch = Architecture::new(vec![6; depth], act, skip);
    let net = ScoreNet::new(&arch, d, sched, Seed(depth as u64 + 100)).unwrap();
    let x0 = normal_matrix(&mut Seed(5).rng(), 8, d);
    let range = [T_MIN, 1.0];

    let seed = (0..500u64)
        .map(Seed)
        .find(|&s| act == Activation::Tanh || kink_margin(&net.inner, batch_inputs(x0.view(), &sched, range, s).view()) >= 1e-3)
        .expect("a minibatch away from ReLU kinks");

    let (_, grads) = loss_and_grad(&net, x0.view(), &sched, range, seed).unwrap();
    let analytic: Vec<f64> = grads.slices().concat();
    let mut probe = net.clone();
    let mut k = 0;
    let mut worst: f64 = 0.0;
    let n_slices = probe.slices().len();
    for si in 0..n_slices {
        let len = probe.slices()[si].len();
        for j in 0..len {
            let orig = probe.slices()[si][j];
            probe.slices_mut()[si][j] = orig + FD_STEP;
            let up = minibatch_loss(&probe, x0.view(), &sched, range, seed).unwrap();
            probe.slices_mut()[si][j] = orig - FD_STEP;
            let down = minibatch_loss(&probe, x0.view(), &sched, range, seed).unwrap();
            probe.slices_mut()[si][j] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k], fd));
            k += 1;
        }
    }
    assert_eq!(k, analytic.len());
    worst
}

/// `n` points uniform on the unit square.
pub fn uniform(n: usize, seed: u64) -> Array2<f64> {
    let mut rng = Seed(seed).rng();
    Array2::from_shape_simple_fn((n, 2), || rng.gen::<f64>())
}

/// Half the rows are 5 copies each of a few base points.
pub fn collapsed(n: usize, seed: u64) -> Array2<f64> {
    let mut x = uniform(n, seed);
    let base = n / 10;
    for k in 0..base {
        for c in 1..5 {
            let src = x.row(k).to_owned();
            x.row_mut(base + 4 * k + c - 1).assign(&src);
        }
    }
    x
}
