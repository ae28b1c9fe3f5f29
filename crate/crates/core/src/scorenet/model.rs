//! The epsilon-predicting network, its skip wrapper, and the two-model split.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Cache, Mlp};
use crate::error::{param, Error, Result};
use crate::rng::Seed;
use crate::schedule::NoiseSchedule;
use crate::source::{score_from_eps, ScoreSource};

/// Smallest time at which a network's score is trusted.
pub const T_MIN: f64 = 1e-3;

/// Hidden widths of the learned skip coefficient nets.
pub const COEFF_HIDDEN: [usize; 2] = [30, 30];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipMode {
    #[default]
    None,
    /// `c1(t) x_t + c2(t) eps_net` with small learned nets for `c1`, `c2`.
    Learned,
    /// `sigma_t x_t + (1 - sigma_t) eps_net`.
    Fixed,
    /// `(1 - sigma_t) x_t + sigma_t eps_net`.
    FixedSwapped,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Skip {
    None,
    Learned { c1: Mlp, c2: Mlp },
    Fixed { swapped: bool },
}

impl Skip {
    pub fn mode(&self) -> SkipMode {
        match self {
            Skip::None => SkipMode::None,
            Skip::Learned { .. } => SkipMode::Learned,
            Skip::Fixed { swapped: false } => SkipMode::Fixed,
            Skip::Fixed { swapped: true } => SkipMode::FixedSwapped,
        }
    }
}

/// Network shape as it appears in configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default)]
    pub skip: SkipMode,
}

fn default_activation() -> Activation {
    Activation::Tanh
}

impl Architecture {
    pub fn new(hidden: Vec<usize>, activation: Activation, skip: SkipMode) -> Self {
        Architecture {
            hidden,
            activation,
            skip,
        }
    }

    /// Two hidden Tanh layers of `width`.
    pub fn two_layer_tanh(width: usize) -> Self {
        Architecture::new(vec![width, width], Activation::Tanh, SkipMode::None)
    }
}

/// Epsilon predictor over `[x_t, t]`, optionally wrapped by a skip connection.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet {
    pub inner: Mlp,
    pub skip: Skip,
    pub schedule: NoiseSchedule,
    pub t_min: f64,
}

/// Gradients shaped like a [`ScoreNet`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub inner: Mlp,
    pub coeffs: Option<(Mlp, Mlp)>,
}

impl NetGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.inner.slices();
        if let Some((a, b)) = &self.coeffs {
            out.extend(a.slices());
            out.extend(b.slices());
        }
        out
    }
}

pub struct NetCache {
    inner: Cache,
    eps_net: Array2<f64>,
    coeffs: Option<(Cache, Array2<f64>, Cache, Array2<f64>)>,
    /// Per-row (coefficient on x, coefficient on eps_net) for fixed skips.
    fixed: Option<Vec<(f64, f64)>>,
    x: Array2<f64>,
}

impl ScoreNet {
    pub fn new(arch: &Architecture, dim: usize, schedule: NoiseSchedule, seed: Seed) -> Result<Self> {
        if dim == 0 {
            return param("data dimension must be >= 1");
        }
        let mut widths = vec![dim + 1];
        widths.extend(&arch.hidden);
        widths.push(dim);
        let inner = Mlp::new(&widths, arch.activation, seed.derive(0))?;
        let coeff_widths = [1, COEFF_HIDDEN[0], COEFF_HIDDEN[1], 1];
        let skip = match arch.skip {
            SkipMode::None => Skip::None,
            SkipMode::Learned => Skip::Learned {
                c1: Mlp::new(&coeff_widths, Activation::Tanh, seed.derive(1))?,
                c2: Mlp::new(&coeff_widths, Activation::Tanh, seed.derive(2))?,
            },
            SkipMode::Fixed => Skip::Fixed { swapped: false },
            SkipMode::FixedSwapped => Skip::Fixed { swapped: true },
        };
        Ok(ScoreNet {
            inner,
            skip,
            schedule,
            t_min: T_MIN,
        })
    }

    pub fn dim(&self) -> usize {
        self.inner.output_dim()
    }

    pub fn architecture(&self) -> Architecture {
        let w = self.inner.widths();
        Architecture {
            hidden: w[1..w.len() - 1].to_vec(),
            activation: self.inner.activation,
            skip: self.skip.mode(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.inner.validate()?;
        if self.inner.input_dim() != self.inner.output_dim() + 1 {
            return param("inner network must map d + 1 inputs to d outputs");
        }
        if let Skip::Learned { c1, c2 } = &self.skip {
            for c in [c1, c2] {
                c.validate()?;
                if c.input_dim() != 1 || c.output_dim() != 1 {
                    return param("skip coefficient nets must map a scalar to a scalar");
                }
            }
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> NetGrads {
        NetGrads {
            inner: self.inner.zeros_like(),
            coeffs: match &self.skip {
                Skip::Learned { c1, c2 } => Some((c1.zeros_like(), c2.zeros_like())),
                _ => None,
            },
        }
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = self.inner.slices();
        if let Skip::Learned { c1, c2 } = &self.skip {
            out.extend(c1.slices());
            out.extend(c2.slices());
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.inner.slices_mut();
        if let Skip::Learned { c1, c2 } = &mut self.skip {
            out.extend(c1.slices_mut());
            out.extend(c2.slices_mut());
        }
        out
    }

    fn check_input(&self, x: ArrayView2<f64>, times: usize) -> Result<()> {
        if x.ncols() != self.dim() {
            return param(format!(
                "input has dimension {}, network expects {}",
                x.ncols(),
                self.dim()
            ));
        }
        if times != x.nrows() {
            return param(format!("{} rows but {} times", x.nrows(), times));
        }
        Ok(())
    }

    /// Noise prediction for each row `x[i]` at time `t[i]`.
    pub fn forward_batch(&self, x: ArrayView2<f64>, t: ArrayView1<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x, t)?.1)
    }

    pub fn forward(&self, x: ArrayView1<f64>, t: f64) -> Result<Array1<f64>> {
        let xb = x.insert_axis(Axis(0));
        let out = self.forward_batch(xb, ndarray::arr1(&[t]).view())?;
        Ok(out.row(0).to_owned())
    }

    /// Inner network output alone, before the skip wrapper.
    pub fn inner_eps(&self, x: ArrayView2<f64>, t: ArrayView1<f64>) -> Result<Array2<f64>> {
        self.check_input(x, t.len())?;
        let input = concatenate![Axis(1), x, t.insert_axis(Axis(1))];
        Ok(self.inner.forward(input.view()))
    }

    pub fn forward_cached(
        &self,
        x: ArrayView2<f64>,
        t: ArrayView1<f64>,
    ) -> Result<(NetCache, Array2<f64>)> {
        self.check_input(x, t.len())?;
        let tcol = t.insert_axis(Axis(1));
        let input = concatenate![Axis(1), x, tcol];
        let (inner_cache, eps_net) = self.inner.forward_cached(input.view());
        let mut cache = NetCache {
            inner: inner_cache,
            eps_net,
            coeffs: None,
            fixed: None,
            x: x.to_owned(),
        };
        let out = match &self.skip {
            Skip::None => cache.eps_net.clone(),
            Skip::Learned { c1, c2 } => {
                let (k1, v1) = c1.forward_cached(tcol);
                let (k2, v2) = c2.forward_cached(tcol);
                let out = &x * &v1 + &cache.eps_net * &v2;
                cache.coeffs = Some((k1, v1, k2, v2));
                out
            }
            Skip::Fixed { swapped } => {
                let mut pairs = Vec::with_capacity(t.len());
                for &ti in t.iter() {
                    let (_, sigma) = self.schedule.coeffs(ti)?;
                    pairs.push(if *swapped {
                        (1.0 - sigma, sigma)
                    } else {
                        (sigma, 1.0 - sigma)
                    });
                }
                let mut out = cache.eps_net.clone();
                Zip::from(out.rows_mut())
                    .and(x.rows())
                    .and(&pairs)
                    .for_each(|mut o, xr, &(cx, ce)| {
                        o.zip_mut_with(&xr, |ov, &xv| *ov = cx * xv + ce * *ov);
                    });
                cache.fixed = Some(pairs);
                out
            }
        };
        Ok((cache, out))
    }

    /// Backpropagate `grad_out = dL/d(output)` into parameter gradients.
    pub fn backward(&self, cache: NetCache, grad_out: &Array2<f64>, grads: &mut NetGrads) {
        let grad_eps = match (&self.skip, cache.coeffs, cache.fixed) {
            (Skip::Learned { c1, c2 }, Some((k1, _, k2, v2)), _) => {
                let g1 = (grad_out * &cache.x).sum_axis(Axis(1)).insert_axis(Axis(1));
                let g2 = (grad_out * &cache.eps_net)
                    .sum_axis(Axis(1))
                    .insert_axis(Axis(1));
                let (gc1, gc2) = grads.coeffs.as_mut().expect("learned skip grads");
                c1.backward(&k1, g1, gc1, false);
                c2.backward(&k2, g2, gc2, false);
                grad_out * &v2
            }
            (Skip::Fixed { .. }, _, Some(pairs)) => {
                let mut g = grad_out.clone();
                Zip::from(g.rows_mut()).and(&pairs).for_each(|mut r, &(_, ce)| {
                    r.mapv_inplace(|v| v * ce);
                });
                g
            }
            _ => grad_out.clone(),
        };
        self.inner.backward(&cache.inner, grad_eps, &mut grads.inner, false);
    }
}

/// A trained predictor: one network, or a low/high pair split at `t_split`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreModel {
    Single(ScoreNet),
    Split {
        low: ScoreNet,
        high: ScoreNet,
        t_split: f64,
    },
}

impl ScoreModel {
    /// The network that answers queries at time `t`.
    pub fn route(&self, t: f64) -> &ScoreNet {
        match self {
            ScoreModel::Single(n) => n,
            ScoreModel::Split { low, high, t_split } => {
                if t < *t_split {
                    low
                } else {
                    high
                }
            }
        }
    }

    pub fn nets(&self) -> Vec<&ScoreNet> {
        match self {
            ScoreModel::Single(n) => vec![n],
            ScoreModel::Split { low, high, .. } => vec![low, high],
        }
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.route(1.0).schedule
    }

    pub fn t_min(&self) -> f64 {
        self.route(1.0).t_min
    }

    /// Noise prediction for every row of `x` at a common time `t`.
    pub fn predict(&self, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        let times = Array1::from_elem(x.nrows(), t);
        self.route(t).forward_batch(x, times.view())
    }

    /// Noise prediction for rows at individual times.
    pub fn predict_rows(&self, x: ArrayView2<f64>, t: ArrayView1<f64>) -> Result<Array2<f64>> {
        match self {
            ScoreModel::Single(n) => n.forward_batch(x, t),
            ScoreModel::Split { .. } => {
                let mut out = Array2::zeros(x.raw_dim());
                for (i, &ti) in t.iter().enumerate() {
                    let row = self.predict(x.slice(s![i..i + 1, ..]), ti)?;
                    out.row_mut(i).assign(&row.row(0));
                }
                Ok(out)
            }
        }
    }
}

impl ScoreSource for ScoreModel {
    fn dim(&self) -> usize {
        self.route(1.0).dim()
    }

    fn score(&self, sched: &NoiseSchedule, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        if t < self.t_min() {
            return Err(Error::Singularity(format!(
                "model score requested at t = {t} below t_min = {}",
                self.t_min()
            )));
        }
        score_from_eps(sched, t, self.predict(x, t)?)
    }

    fn eps(&self, _sched: &NoiseSchedule, x: ArrayView2<f64>, t: f64) -> Result<Array2<f64>> {
        self.predict(x, t)
    }
}

/// Score implied by a model, `-eps_hat / sigma_t`.
pub fn model_score(
    model: &ScoreModel,
    sched: &NoiseSchedule,
    x: ArrayView1<f64>,
    t: f64,
) -> Result<Array1<f64>> {
    let s = ScoreSource::score(model, sched, x.insert_axis(Axis(0)), t)?;
    Ok(s.row(0).to_owned())
}
