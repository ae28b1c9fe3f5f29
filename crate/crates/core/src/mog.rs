//! Closed-form Gaussian-mixture oracle.
//!
//! For `x_0 ~ sum_k w_k N(mu_k, v_k I)` the forward marginal stays a mixture,
//! `x_t ~ sum_k w_k N(alpha_t mu_k, (v_k alpha_t^2 + sigma_t^2) I)`, so its score,
//! velocity and density are available exactly at every `t`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::rng::{normal, Rng};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MogSpec {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<f64>,
}

impl MogSpec {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        let spec = MogSpec {
            weights,
            means,
            variances,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `0.5 N(-1, v I) + 0.5 N(+1, v I)` in `dim` dimensions.
    pub fn symmetric_pair(dim: usize, variance: f64) -> Result<Self> {
        MogSpec::new(
            vec![0.5, 0.5],
            vec![vec![-1.0; dim], vec![1.0; dim]],
            vec![variance, variance],
        )
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.weights.len();
        if k == 0 || self.means.len() != k || self.variances.len() != k {
            return param("mixture needs matching non-empty weights, means and variances");
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return param("mixture weights must be non-negative");
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return param(format!("mixture weights sum to {total}, expected 1"));
        }
        if self.variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return param("mixture variances must be positive");
        }
        let d = self.means[0].len();
        if d == 0 || self.means.iter().any(|m| m.len() != d) {
            return param("all mixture means must share one dimension >= 1");
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Draw `n` rows from the mixture at `t = 0`.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for mut row in out.rows_mut() {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut k = self.components() - 1;
            for (i, w) in self.weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = i;
                    break;
                }
            }
            let sd = self.variances[k].sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.means[k][j] + sd * normal(rng);
            }
        }
        out
    }

    /// Per-component marginal variances `v_k alpha^2 + sigma^2` at `t`.
    fn marginal_vars(&self, alpha: f64, sigma: f64) -> Vec<f64> {
        self.variances
            .iter()
            .map(|v| v * alpha * alpha + sigma * sigma)
            .collect()
    }

    /// Log component terms `log w_k + log N(x; alpha mu_k, var_k I)` for one point.
    fn log_terms(&self, x: ArrayView1<f64>, alpha: f64, vars: &[f64], out: &mut [f64]) {
        let d = x.len() as f64;
        for (k, slot) in out.iter_mut().enumerate() {
            let var = vars[k];
            let sq: f64 = x
                .iter()
                .zip(&self.means[k])
                .map(|(xi, mi)| (xi - alpha * mi).powi(2))
                .sum();
            *slot = self.weights[k].ln() - 0.5 * d * (2.0 * PI * var).ln() - 0.5 * sq / var;
        }
    }

    fn check_point(&self, x_dim: usize, t: f64) -> Result<()> {
        if x_dim != self.dim() {
            return param(format!(
                "point has dimension {x_dim}, mixture has {}",
                self.dim()
            ));
        }
        if !(0.0..=1.0).contains(&t) {
            return param(format!("time must lie in [0, 1], got {t}"));
        }
        Ok(())
    }

    /// `log p_t(x)` of the joint marginal density.
    pub fn log_density(&self, sched: &NoiseSchedule, x: ArrayView1<f64>, t: f64) -> Result<f64> {
        self.check_point(x.len(), t)?;
        let (alpha, sigma) = sched.coeffs(t)?;
        let vars = self.marginal_vars(alpha, sigma);
        let mut terms = vec![0.0; self.components()];
        self.log_terms(x, alpha, &vars, &mut terms);
        Ok(log_sum_exp(&terms))
    }

    /// Score `grad_x log p_t(x)` for every row of `x`.
    pub fn score_batch(
        &self,
        sched: &NoiseSchedule,
        x: ArrayView2<f64>,
        t: f64,
    ) -> Result<Array2<f64>> {
        self.check_point(x.ncols(), t)?;
        let (alpha, sigma) = sched.coeffs(t)?;
        let vars = self.marginal_vars(alpha, sigma);
        let mut out = Array2::zeros(x.raw_dim());
        let mut terms = vec![0.0; self.components()];
        Zip::from(out.rows_mut())
            .and(x.rows())
            .for_each(|mut s, xr| {
                self.log_terms(xr, alpha, &vars, &mut terms);
                let lse = log_sum_exp(&terms);
                for (k, lt) in terms.iter().enumerate() {
                    let r = (lt - lse).exp();
                    if r == 0.0 {
                        continue;
                    }
                    let c = r / vars[k];
                    for ((si, xi), mi) in s.iter_mut().zip(xr.iter()).zip(&self.means[k]) {
                        *si -= c * (xi - alpha * mi);
                    }
                }
            });
        Ok(out)
    }

    pub fn score(&self, sched: &NoiseSchedule, x: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        let row = x.insert_axis(ndarray::Axis(0));
        Ok(self.score_batch(sched, row, t)?.row(0).to_owned())
    }

    /// Probability-flow velocity `f(x, t) - g(t)^2 / 2 * score`.
    pub fn velocity(
        &self,
        sched: &NoiseSchedule,
        x: ArrayView1<f64>,
        t: f64,
    ) -> Result<Array1<f64>> {
        let s = self.score(sched, x, t)?;
        let (f, g) = sched.drift_diffusion(x, t)?;
        Ok(f - s * (0.5 * g * g))
    }

    /// Density of coordinate `dim` of `x_t` at `u`.
    pub fn marginal_pdf(&self, sched: &NoiseSchedule, u: f64, t: f64, dim: usize) -> Result<f64> {
        if dim >= self.dim() {
            return param(format!(
                "coordinate {dim} out of range for dimension {}",
                self.dim()
            ));
        }
        let (alpha, sigma) = sched.coeffs(t)?;
        let vars = self.marginal_vars(alpha, sigma);
        Ok(self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&vars)
            .map(|((w, m), v)| {
                let z = u - alpha * m[dim];
                w * (-0.5 * z * z / v).exp() / (2.0 * PI * v).sqrt()
            })
            .sum())
    }

    /// Distribution function of coordinate `dim` of `x_t` at `u`.
    pub fn marginal_cdf(&self, sched: &NoiseSchedule, u: f64, t: f64, dim: usize) -> Result<f64> {
        if dim >= self.dim() {
            return param(format!(
                "coordinate {dim} out of range for dimension {}",
                self.dim()
            ));
        }
        let (alpha, sigma) = sched.coeffs(t)?;
        let vars = self.marginal_vars(alpha, sigma);
        Ok(self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&vars)
            .map(|((w, m), v)| {
                let z = (u - alpha * m[dim]) / (2.0 * v).sqrt();
                w * 0.5 * libm::erfc(-z)
            })
            .sum())
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;
    use ndarray::array;

    fn sym1() -> MogSpec {
        MogSpec::symmetric_pair(1, 0.2).unwrap()
    }

    #[test]
    fn symmetric_score_vanishes_at_origin() {
        let s = NoiseSchedule::vp();
        for &t in &[0.0, 0.1, 0.5, 1.0] {
            let sc = sym1().score(&s, array![0.0].view(), t).unwrap();
            assert_eq!(sc[0], 0.0);
            let v = sym1().velocity(&s, array![0.0].view(), t).unwrap();
            assert_eq!(v[0], 0.0);
        }
    }

    #[test]
    fn single_component_is_gaussian_score() {
        let spec = MogSpec::new(vec![1.0], vec![vec![0.7, -0.3]], vec![0.5]).unwrap();
        let s = NoiseSchedule::vp();
        let x = array![0.2, 1.1];
        let t = 0.4;
        let (a, sg) = s.coeffs(t).unwrap();
        let v = 0.5 * a * a + sg * sg;
        let got = spec.score(&s, x.view(), t).unwrap();
        assert!((got[0] + (0.2 - a * 0.7) / v).abs() < 1e-15);
        assert!((got[1] + (1.1 + a * 0.3) / v).abs() < 1e-15);
    }

    #[test]
    fn score_is_odd_for_symmetric_mixture() {
        let s = NoiseSchedule::vp();
        let spec = MogSpec::symmetric_pair(3, 0.2).unwrap();
        let mut rng = Seed(4).rng();
        for _ in 0..50 {
            let x = Array1::from_shape_simple_fn(3, || 2.0 * normal(&mut rng));
            let t = rng.gen::<f64>();
            let p = spec.score(&s, x.view(), t).unwrap();
            let m = spec.score(&s, (-&x).view(), t).unwrap();
            assert_eq!(p, -m);
        }
    }

    #[test]
    fn far_apart_modes_do_not_underflow() {
        let spec = MogSpec::new(
            vec![0.5, 0.5],
            vec![vec![-500.0], vec![500.0]],
            vec![0.01, 0.01],
        )
        .unwrap();
        let sc = spec
            .score(&NoiseSchedule::vp(), array![3.0].view(), 0.0)
            .unwrap();
        assert!(sc[0].is_finite());
        assert!((sc[0] - 497.0 / 0.01).abs() < 1e-6);
    }

    #[test]
    fn marginal_pdf_hand_value() {
        let s = NoiseSchedule::vp();
        let t = 0.3;
        let (a, sg) = s.coeffs(t).unwrap();
        let v = 0.2 * a * a + sg * sg;
        let hand = 2.0 * 0.5 * (-(a * a) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
        let got = sym1().marginal_pdf(&s, 0.0, t, 0).unwrap();
        assert!((got - hand).abs() < 1e-15);
        assert!(sym1().marginal_pdf(&s, 0.0, t, 1).is_err());
    }

    #[test]
    fn marginal_pdf_normalizes() {
        let s = NoiseSchedule::vp();
        for &t in &[0.0, 0.2, 1.0] {
            // Composite Simpson on [-10, 10].
            let n = 20_000;
            let h = 20.0 / n as f64;
            let mut acc = 0.0;
            for i in 0..=n {
                let u = -10.0 + i as f64 * h;
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += w * sym1().marginal_pdf(&s, u, t, 0).unwrap();
            }
            assert!((acc * h / 3.0 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn vp_terminal_marginal_is_standard_normal() {
        let s = NoiseSchedule::vp();
        for i in 0..=80 {
            let u = -4.0 + 0.1 * i as f64;
            let p = sym1().marginal_pdf(&s, u, 1.0, 0).unwrap();
            let phi = (-0.5 * u * u).exp() / (2.0 * PI).sqrt();
            assert!((p - phi).abs() < 1e-3);
        }
    }

    #[test]
    fn cdf_matches_pdf_integral() {
        let s = NoiseSchedule::vp();
        let spec = sym1();
        let t = 0.2;
        let (lo, hi) = (-0.3, 0.9);
        let n = 2000;
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..n {
            acc += spec.marginal_pdf(&s, lo + (i as f64 + 0.5) * h, t, 0).unwrap() * h;
        }
        let diff = spec.marginal_cdf(&s, hi, t, 0).unwrap() - spec.marginal_cdf(&s, lo, t, 0).unwrap();
        assert!((acc - diff).abs() < 1e-7);
    }

    #[test]
    fn vp_terminal_score_is_near_minus_x() {
        let s = NoiseSchedule::vp();
        let spec = MogSpec::symmetric_pair(2, 0.2).unwrap();
        let mut rng = Seed(8).rng();
        for _ in 0..200 {
            let mut x = Array1::from_shape_simple_fn(2, || normal(&mut rng));
            let n = x.dot(&x).sqrt();
            if n > 3.0 {
                x *= 3.0 / n;
            }
            let sc = spec.score(&s, x.view(), 1.0).unwrap();
            let r = &sc + &x;
            assert!(r.dot(&r).sqrt() < 5e-2);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(MogSpec::new(vec![0.6, 0.6], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
        assert!(MogSpec::new(vec![1.0], vec![vec![0.0]], vec![0.0]).is_err());
        assert!(MogSpec::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0, 2.0]], vec![1.0, 1.0]).is_err());
    }
}
