//! One contract for anything that can report a score.
//!
//! The three views are tied together by `eps = -sigma_t * score` and
//! `velocity = f(x, t) - g(t)^2 / 2 * score`. Implementors provide the
//! native view and derive the other; velocity has a default.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::mog::MogSpec;
use crate::schedule::NoiseSchedule;

pub trait ScoreSource: Send + Sync {
    fn dim(&self) -> usize;

    /// Score `grad log p_t` for each row of `x`.
    fn score(&self, sched: &NoiseSchedule, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>>;

    /// Noise prediction for each row of `x`.
    fn eps(&self, sched: &NoiseSchedule, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>>;

    /// Probability-flow velocity for each row of `x`.
    fn velocity(
        &self,
        sched: &NoiseSchedule,
        x: ArrayView2<f64>,
        t: f64,
    ) -> Result<Array2<f64>> {
        let score = self.score(sched, x, t)?;
        velocity_from_score(sched, x, t, score)
    }
}

pub fn velocity_from_score(
    sched: &NoiseSchedule,
    x: ArrayView2<f64>,
    t: f64,
    mut score: Array2<f64>,
) -> Result<Array2<f64>> {
    let k = sched.drift_coeff(t)?;
    let half_g2 = 0.5 * sched.diffusion_sq(t)?;
    score.zip_mut_with(&x, |s, &xv| *s = k * xv - half_g2 * *s);
    Ok(score)
}

pub fn score_from_eps(sched: &NoiseSchedule, t: f64, mut eps: Array2<f64>) -> Result<Array2<f64>> {
    let sigma = sched.sigma(t)?;
    if sigma <= 0.0 {
        return Err(Error::Singularity(format!("sigma_t = 0 at t = {t}")));
    }
    eps.mapv_inplace(|e| -e / sigma);
    Ok(eps)
}

impl ScoreSource for MogSpec {
    fn dim(&self) -> usize {
        MogSpec::dim(self)
    }

    fn score(&self, sched: &NoiseSchedule, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        self.score_batch(sched, x, t)
    }

    fn eps(&self, sched: &NoiseSchedule, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        let sigma = sched.sigma(t)?;
        let mut s = self.score_batch(sched, x, t)?;
        s.mapv_inplace(|v| -sigma * v);
        Ok(s)
    }
}

/// A source whose score is identically zero; its velocity is the bare drift.
#[derive(Debug, Clone, Copy)]
pub struct ZeroScore(pub usize);

impl ScoreSource for ZeroScore {
    fn dim(&self) -> usize {
        self.0
    }

    fn score(&self, _: &NoiseSchedule, x: ArrayView2<f64>, _: f64) -> Result<Array2<f64>> {
        Ok(Array2::zeros(x.raw_dim()))
    }

    fn eps(&self, _: &NoiseSchedule, x: ArrayView2<f64>, _: f64) -> Result<Array2<f64>> {
        Ok(Array2::zeros(x.raw_dim()))
    }
}
