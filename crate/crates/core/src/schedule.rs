//! Continuous-time noise schedules.
//!
//! A schedule fixes the forward marginal `x_t = alpha_t x_0 + sigma_t eps`.
//! Drift and diffusion are derived from `(alpha, sigma)` alone:
//! `f(x, t) = (alpha'/alpha) x` and `g^2 = 2 (sigma sigma' - (alpha'/alpha) sigma^2)`,
//! so every schedule goes through the same sampler code.

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng::{normal, Seed};

/// Latest start time for schedules whose `alpha` vanishes at `t = 1`.
pub const LINEAR_T_MAX: f64 = 1.0 - 1e-6;

fn default_beta_min() -> f64 {
    0.1
}
fn default_beta_max() -> f64 {
    20.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum NoiseSchedule {
    Vp {
        #[serde(default = "default_beta_min")]
        beta_min: f64,
        #[serde(default = "default_beta_max")]
        beta_max: f64,
    },
    Subvp {
        #[serde(default = "default_beta_min")]
        beta_min: f64,
        #[serde(default = "default_beta_max")]
        beta_max: f64,
    },
    Linear,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::vp()
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return param(format!("time must lie in [0, 1], got {t}"));
    }
    Ok(())
}

impl NoiseSchedule {
    pub fn vp() -> Self {
        NoiseSchedule::Vp {
            beta_min: default_beta_min(),
            beta_max: default_beta_max(),
        }
    }

    pub fn subvp() -> Self {
        NoiseSchedule::Subvp {
            beta_min: default_beta_min(),
            beta_max: default_beta_max(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSchedule::Vp { beta_min, beta_max }
            | NoiseSchedule::Subvp { beta_min, beta_max } => {
                if !(0.0 < beta_min && beta_min < beta_max && beta_max.is_finite()) {
                    return param(format!(
                        "schedule needs 0 < beta_min < beta_max, got ({beta_min}, {beta_max})"
                    ));
                }
                Ok(())
            }
            NoiseSchedule::Linear => Ok(()),
        }
    }

    /// Latest usable sampling start time.
    pub fn t_max(&self) -> f64 {
        match self {
            NoiseSchedule::Linear => LINEAR_T_MAX,
            _ => 1.0,
        }
    }

    /// `beta(t)` for the beta-driven schedules, `None` for Linear.
    pub fn beta(&self, t: f64) -> Option<f64> {
        match *self {
            NoiseSchedule::Vp { beta_min, beta_max }
            | NoiseSchedule::Subvp { beta_min, beta_max } => {
                Some(beta_min + t * (beta_max - beta_min))
            }
            NoiseSchedule::Linear => None,
        }
    }

    /// `int_0^t beta(s) ds`.
    fn beta_integral(beta_min: f64, beta_max: f64, t: f64) -> f64 {
        0.5 * t * t * (beta_max - beta_min) + t * beta_min
    }

    /// `(alpha_t, sigma_t)`.
    pub fn coeffs(&self, t: f64) -> Result<(f64, f64)> {
        check_t(t)?;
        Ok(self.coeffs_unchecked(t))
    }

    pub(crate) fn coeffs_unchecked(&self, t: f64) -> (f64, f64) {
        match *self {
            NoiseSchedule::Vp { beta_min, beta_max } => {
                let b = Self::beta_integral(beta_min, beta_max, t);
                ((-0.5 * b).exp(), (-(-b).exp_m1()).sqrt())
            }
            NoiseSchedule::Subvp { beta_min, beta_max } => {
                let b = Self::beta_integral(beta_min, beta_max, t);
                ((-0.5 * b).exp(), -(-b).exp_m1())
            }
            NoiseSchedule::Linear => (1.0 - t, t),
        }
    }

    pub fn alpha(&self, t: f64) -> Result<f64> {
        Ok(self.coeffs(t)?.0)
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        Ok(self.coeffs(t)?.1)
    }

    /// `d log(alpha_t) / dt`, the scalar drift coefficient.
    pub fn drift_coeff(&self, t: f64) -> Result<f64> {
        check_t(t)?;
        match *self {
            NoiseSchedule::Vp { .. } | NoiseSchedule::Subvp { .. } => {
                Ok(-0.5 * self.beta(t).expect("beta schedule"))
            }
            NoiseSchedule::Linear => {
                if t >= 1.0 {
                    return Err(Error::Singularity(
                        "linear schedule has alpha = 0 at t = 1".into(),
                    ));
                }
                Ok(-1.0 / (1.0 - t))
            }
        }
    }

    /// `sigma_t * d sigma_t / dt`.
    fn sigma_dsigma(&self, t: f64) -> f64 {
        match *self {
            NoiseSchedule::Vp { beta_min, beta_max } => {
                let b = Self::beta_integral(beta_min, beta_max, t);
                0.5 * self.beta(t).unwrap() * (-b).exp()
            }
            NoiseSchedule::Subvp { beta_min, beta_max } => {
                let b = Self::beta_integral(beta_min, beta_max, t);
                let sigma = -(-b).exp_m1();
                sigma * self.beta(t).unwrap() * (-b).exp()
            }
            NoiseSchedule::Linear => t,
        }
    }

    /// Squared diffusion coefficient `g(t)^2`.
    pub fn diffusion_sq(&self, t: f64) -> Result<f64> {
        let k = self.drift_coeff(t)?;
        let (_, sigma) = self.coeffs_unchecked(t);
        Ok(2.0 * (self.sigma_dsigma(t) - k * sigma * sigma))
    }

    /// Drift vector `f(x, t)` and diffusion scalar `g(t)`.
    pub fn drift_diffusion(&self, x: ArrayView1<f64>, t: f64) -> Result<(Array1<f64>, f64)> {
        let k = self.drift_coeff(t)?;
        let g2 = self.diffusion_sq(t)?;
        Ok((x.mapv(|v| k * v), g2.max(0.0).sqrt()))
    }

    /// Half log signal-to-noise ratio `log(alpha_t / sigma_t)`.
    pub fn lambda(&self, t: f64) -> Result<f64> {
        let (a, s) = self.coeffs(t)?;
        if a <= 0.0 || s <= 0.0 {
            return Err(Error::Singularity(format!(
                "log-SNR undefined at t = {t} (alpha = {a}, sigma = {s})"
            )));
        }
        Ok(a.ln() - s.ln())
    }

    /// Inverse of [`NoiseSchedule::lambda`] on `[lo, hi]` by bisection.
    /// `lambda` is strictly decreasing in `t` for every schedule here.
    pub fn t_from_lambda(&self, target: f64, lo: f64, hi: f64) -> Result<f64> {
        let (mut lo, mut hi) = (lo, hi);
        let l_lo = self.lambda(lo)?;
        let l_hi = self.lambda(hi)?;
        if !(target <= l_lo && target >= l_hi) {
            return param(format!(
                "log-SNR {target} outside [{l_hi}, {l_lo}] on [{lo}, {hi}]"
            ));
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.lambda(mid)? > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Forward perturbation `x_t = alpha_t x0 + sigma_t eps` with `eps ~ N(0, I)`.
    pub fn perturb(
        &self,
        x0: ArrayView1<f64>,
        t: f64,
        seed: Seed,
    ) -> Result<(Array1<f64>, Array1<f64>)> {
        let (a, s) = self.coeffs(t)?;
        let mut rng = seed.rng();
        let eps = Array1::from_shape_simple_fn(x0.len(), || normal(&mut rng));
        let xt = &x0 * a + &eps * s;
        Ok((xt, eps))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn vp_endpoints() {
        let s = NoiseSchedule::vp();
        assert_eq!(s.coeffs(0.0).unwrap(), (1.0, 0.0));
        let (a1, _) = s.coeffs(1.0).unwrap();
        assert!((a1 - (-5.025f64).exp()).abs() < 1e-9);
        assert!((a1 - 6.57e-3).abs() < 1e-5);
    }

    #[test]
    fn linear_quarter() {
        assert_eq!(NoiseSchedule::Linear.coeffs(0.25).unwrap(), (0.75, 0.25));
        let err = NoiseSchedule::Linear.drift_diffusion(array![1.0].view(), 1.0);
        assert!(matches!(err, Err(Error::Singularity(_))));
    }

    #[test]
    fn out_of_range_time() {
        assert!(matches!(NoiseSchedule::vp().coeffs(1.5), Err(Error::Param(_))));
        assert!(NoiseSchedule::vp().coeffs(-0.1).is_err());
    }

    #[test]
    fn vp_drift_at_zero() {
        let (f, g) = NoiseSchedule::vp()
            .drift_diffusion(array![1.0, -2.0].view(), 0.0)
            .unwrap();
        assert!((f[0] + 0.05).abs() < 1e-15 && (f[1] - 0.1).abs() < 1e-15);
        assert!((g - 0.1f64.sqrt()).abs() < 1e-15);
        let (f0, _) = NoiseSchedule::vp()
            .drift_diffusion(array![0.0, 0.0].view(), 0.7)
            .unwrap();
        assert_eq!(f0, array![0.0, 0.0]);
    }

    #[test]
    fn vp_invariants_on_grid() {
        let s = NoiseSchedule::vp();
        let mut prev = (2.0, -1.0);
        for k in 0..1000 {
            let t = k as f64 / 999.0;
            let (a, sg) = s.coeffs(t).unwrap();
            assert!((a * a + sg * sg - 1.0).abs() < 1e-12);
            assert!(a < prev.0 && sg > prev.1);
            prev = (a, sg);
            let g2 = s.diffusion_sq(t).unwrap();
            assert!((g2 - s.beta(t).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn diffusion_matches_finite_difference() {
        // g^2 = 2 (sigma sigma' - (alpha'/alpha) sigma^2) from numerically differentiated curves.
        for sched in [NoiseSchedule::vp(), NoiseSchedule::subvp(), NoiseSchedule::Linear] {
            for &t in &[0.05, 0.3, 0.5, 0.9] {
                let h = 1e-6;
                let (ap, sp) = sched.coeffs(t + h).unwrap();
                let (am, sm) = sched.coeffs(t - h).unwrap();
                let (a, s) = sched.coeffs(t).unwrap();
                let da = (ap - am) / (2.0 * h);
                let ds = (sp - sm) / (2.0 * h);
                let fd = 2.0 * (s * ds - da / a * s * s);
                let g2 = sched.diffusion_sq(t).unwrap();
                assert!(((g2 - fd) / g2).abs() < 1e-5, "{sched:?} t={t}: {g2} vs {fd}");
            }
        }
    }

    #[test]
    fn monotone_for_all_schedules() {
        for sched in [NoiseSchedule::subvp(), NoiseSchedule::Linear] {
            let mut prev = (2.0, -1.0);
            for k in 0..1000 {
                let t = k as f64 / 999.0;
                let (a, s) = sched.coeffs(t).unwrap();
                assert!(a < prev.0 && s > prev.1);
                prev = (a, s);
            }
        }
    }

    #[test]
    fn lambda_inverse() {
        let s = NoiseSchedule::vp();
        let t = s.t_from_lambda(s.lambda(0.37).unwrap(), 1e-3, 1.0).unwrap();
        assert!((t - 0.37).abs() < 1e-12);
    }

    #[test]
    fn perturb_moments_and_determinism() {
        let s = NoiseSchedule::vp();
        let x0 = array![1.0, -1.0];
        let (xt, _) = s.perturb(x0.view(), 0.0, Seed(3)).unwrap();
        assert_eq!(xt, x0);
        let a = s.perturb(x0.view(), 0.4, Seed(9)).unwrap();
        assert_eq!(a, s.perturb(x0.view(), 0.4, Seed(9)).unwrap());

        let n = 100_000;
        let (mut m, mut m2) = (0.0, 0.0);
        let a1 = s.alpha(1.0).unwrap();
        for i in 0..n {
            let (xt, _) = s.perturb(x0.view(), 1.0, Seed(i)).unwrap();
            m += xt[0];
            m2 += xt[0] * xt[0];
        }
        let mean = m / n as f64;
        let var = m2 / n as f64 - mean * mean;
        assert!((mean - a1).abs() < 0.02);
        assert!((var - 1.0).abs() < 0.02);
    }
}
