//! Hermite-polynomial model of the see-saw effect.
//!
//! A one-dimensional learner `f(x, t) = theta_0 t + sum_{i<=p} theta_i He_i(x)` is fit
//! jointly to a low-noise target `tanh(x) - x` and the high-noise target `-x`.
//! Under `x ~ N(0, 1)` the joint optimum averages the two Hermite expansions, and
//! the two losses move in opposite directions as the degree `p` grows.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{param, Error, Result};

/// Quadrature nodes used for every Hermite coefficient.
pub const QUAD_NODES: usize = 200;
/// Highest expansion index kept in the tail of the low-noise loss.
pub const P_MAX: usize = 40;

/// Gauss–Hermite rule for the standard normal weight `phi(x)`.
#[derive(Debug, Clone)]
pub struct HermiteQuadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl HermiteQuadrature {
    /// `n`-point rule. Nodes are the eigenvalues of the Hermite Jacobi matrix,
    /// isolated by Sturm-count bisection and polished by Newton steps on the
    /// orthonormal physicists' recurrence; weights come from the same recurrence.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return param("quadrature needs at least two nodes");
        }
        let nf = n as f64;
        // Off-diagonal entries b_k^2 = k / 2 of the zero-diagonal Jacobi matrix.
        let count_below = |x: f64| -> usize {
            let mut count = 0;
            let mut d = -x;
            for k in 0..n {
                if k > 0 {
                    d = -x - (k as f64 / 2.0) / d;
                }
                if d == 0.0 {
                    d = -f64::EPSILON * (1.0 + x.abs());
                }
                if d < 0.0 {
                    count += 1;
                }
            }
            count
        };
        let bound = (2.0 * nf + 1.0).sqrt() + 1.0;
        let eval = |z: f64| -> (f64, f64) {
            let mut p1 = PI.powf(-0.25);
            let mut p2 = 0.0;
            for j in 1..=n {
                let jf = j as f64;
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            (p1, (2.0 * nf).sqrt() * p2)
        };
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for k in 0..n {
            // k-th smallest eigenvalue: count_below(lo) <= k < count_below(hi).
            let (mut lo, mut hi) = (-bound, bound);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if count_below(mid) > k {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let mut z = 0.5 * (lo + hi);
            for _ in 0..3 {
                let (p, dp) = eval(z);
                let step = p / dp;
                if step.is_finite() && (z - step) > lo - 1e-12 && (z - step) < hi + 1e-12 {
                    z -= step;
                }
            }
            let (_, dp) = eval(z);
            nodes.push(z * 2f64.sqrt());
            weights.push(2.0 / (dp * dp) / PI.sqrt());
        }
        Ok(HermiteQuadrature { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Highest Hermite index this rule integrates reliably against a smooth target.
    pub fn max_degree(&self) -> usize {
        self.nodes.len() / 5
    }

    /// `E[f(X)]` for `X ~ N(0, 1)`.
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(*x))
            .sum()
    }
}

/// All orthonormal probabilists' Hermite values `He_0(x) ..= He_n(x)`.
pub fn hermite_all(n: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(1.0);
    if n >= 1 {
        out.push(x);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
        out.push(next);
    }
    out
}

/// Orthonormal probabilists' Hermite polynomial `He_i(x)`.
pub fn hermite_eval(i: usize, x: f64) -> f64 {
    hermite_all(i, x)[i]
}

/// Score of the one-dimensional two-point target at time `t`:
/// `tanh(mu_t x) mu_t - x` with `mu_t = e^{-t}`.
pub fn target_score(t: f64, x: f64) -> f64 {
    let mu = (-t).exp();
    (mu * x).tanh() * mu - x
}

/// Hermite coefficients `alpha_1 ..= alpha_p` of [`target_score`] at `t`.
pub fn target_coeffs_with(quad: &HermiteQuadrature, t: f64, p: usize) -> Result<Vec<f64>> {
    if p == 0 {
        return param("expansion degree must be >= 1");
    }
    if !(t >= 0.0) {
        return param(format!("time must be >= 0, got {t}"));
    }
    if p > quad.max_degree() {
        return Err(Error::Config(vec![format!(
            "degree {p} exceeds what {} quadrature nodes resolve ({})",
            quad.len(),
            quad.max_degree()
        )]));
    }
    let mut acc = vec![0.0; p];
    for (x, w) in quad.nodes.iter().zip(&quad.weights) {
        let s = target_score(t, *x);
        let he = hermite_all(p, *x);
        for (a, h) in acc.iter_mut().zip(&he[1..]) {
            *a += w * s * h;
        }
    }
    Ok(acc)
}

pub fn target_coeffs(t: f64, p: usize) -> Result<Vec<f64>> {
    target_coeffs_with(&HermiteQuadrature::new(QUAD_NODES)?, t, p)
}

/// A fitted Hermite learner. The `t` coefficient is held at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteExpansion {
    /// `coeffs[i - 1]` multiplies `He_i`.
    pub coeffs: Vec<f64>,
    pub t_coeff: f64,
}

impl HermiteExpansion {
    pub fn eval(&self, x: f64, t: f64) -> f64 {
        let he = hermite_all(self.coeffs.len(), x);
        self.t_coeff * t + self.coeffs.iter().zip(&he[1..]).map(|(c, h)| c * h).sum::<f64>()
    }
}

/// Joint optimum over both regimes: the average of the two single-regime optima.
pub fn optimal_theta(p: usize) -> Result<HermiteExpansion> {
    let low = target_coeffs(0.0, p)?;
    let coeffs = low
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let high = if i == 0 { -1.0 } else { 0.0 };
            0.5 * (a + high)
        })
        .collect();
    Ok(HermiteExpansion {
        coeffs,
        t_coeff: 0.0,
    })
}

/// Losses of the joint optimum at degree `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeesawLosses {
    pub p: usize,
    /// Low-noise loss.
    pub ell1: f64,
    /// High-noise loss.
    pub ell2: f64,
}

/// Closed-form losses for `p = 1 ..= p_hi` from one set of coefficients.
pub fn seesaw_table(p_hi: usize) -> Result<Vec<SeesawLosses>> {
    if p_hi == 0 || p_hi > P_MAX {
        return param(format!("degree must lie in 1..={P_MAX}, got {p_hi}"));
    }
    let a = target_coeffs(0.0, P_MAX)?;
    Ok((1..=p_hi).map(|p| losses_from(&a, p)).collect())
}

fn losses_from(a: &[f64], p: usize) -> SeesawLosses {
    let head: f64 = a[..p].iter().map(|v| v * v).sum();
    let tail: f64 = a[p..].iter().map(|v| v * v).sum();
    let mid: f64 = a[1..p].iter().map(|v| v * v).sum();
    SeesawLosses {
        p,
        ell1: 0.25 * head + tail,
        ell2: 0.25 * (1.0 + a[0]).powi(2) + 0.25 * mid,
    }
}

pub fn seesaw_losses(p: usize) -> Result<(f64, f64)> {
    let row = *seesaw_table(p)?.last().expect("non-empty table");
    Ok((row.ell1, row.ell2))
}

/// CSV with header `p,ell1,ell2`.
pub fn write_seesaw_csv<W: Write>(rows: &[SeesawLosses], mut w: W) -> Result<()> {
    writeln!(w, "p,ell1,ell2")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.p, r.ell1, r.ell2)?;
    }
    Ok(())
}
