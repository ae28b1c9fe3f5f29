//! Neighbor-count tails and the Tail Index Difference.
//!
//! For a dataset and radius `eps`, every point gets the number of points
//! within `eps` of it (itself included). Over-concentrated samples produce
//! a heavier upper tail of these counts. The Hill statistic
//! `H = mean_k log(n_k / n_min)` summarizes the tail; the tail index is
//! `1 / H` under the default reciprocal convention, and
//! `TID = index(train) - index(sampled)` is positive when the sampled set
//! has the heavier tail.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{param, Error, Result};
use crate::rng::Seed;

pub const DEFAULT_SUBSET: usize = 2000;

/// How a Hill statistic becomes a tail index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TidConvention {
    /// `1 / H`, with `H = 0` mapped to `+inf`.
    #[default]
    Reciprocal,
    /// `H` itself.
    Raw,
}

/// Distance used for neighbor counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    /// Absolute difference in one coordinate.
    SingleDim(usize),
}

impl Metric {
    pub fn from_dim(dim: Option<usize>) -> Self {
        dim.map_or(Metric::Euclidean, Metric::SingleDim)
    }

    pub fn dim(self) -> Option<usize> {
        match self {
            Metric::Euclidean => None,
            Metric::SingleDim(d) => Some(d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TidOptions {
    #[serde(default = "default_subset")]
    pub subset: usize,
    #[serde(default = "default_seed")]
    pub seed: Seed,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default, rename = "tid_convention")]
    pub convention: TidConvention,
    /// Use only the `k` largest counts in the Hill statistic.
    #[serde(default)]
    pub top_k: Option<usize>,
}

fn default_subset() -> usize {
    DEFAULT_SUBSET
}
fn default_seed() -> Seed {
    Seed(0)
}

impl Default for TidOptions {
    fn default() -> Self {
        TidOptions {
            subset: DEFAULT_SUBSET,
            seed: Seed(0),
            dim: None,
            convention: TidConvention::Reciprocal,
            top_k: None,
        }
    }
}

impl TidOptions {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.subset == 0 {
            out.push("subset: must be at least 1".to_string());
        }
        if self.top_k == Some(0) {
            out.push("top_k: must be at least 1".to_string());
        }
        out
    }
}

/// `n_i = #{j : |x_i - x_j| <= eps}`, including `j = i`.
pub fn neighbor_counts(points: ArrayView2<f64>, eps: f64, dim: Option<usize>) -> Result<Vec<usize>> {
    let (n, d) = points.dim();
    if n == 0 {
        return param("neighbor counts need at least one point");
    }
    if !(eps > 0.0) {
        return param(format!("neighbor radius must be positive, got {eps}"));
    }
    if let Some(k) = dim {
        if k >= d {
            return param(format!("dimension {k} out of range for {d}-d data"));
        }
    }
    let eps2 = eps * eps;
    let rows: Vec<Vec<f64>> = match dim {
        Some(k) => points.column(k).iter().map(|&v| vec![v]).collect(),
        None => points.outer_iter().map(|r| r.to_vec()).collect(),
    };
    let mut counts = vec![1usize; n];
    for i in 0..n {
        let xi = &rows[i];
        for j in i + 1..n {
            let mut d2 = 0.0;
            for (a, b) in xi.iter().zip(&rows[j]) {
                let diff = a - b;
                d2 += diff * diff;
            }
            if d2 <= eps2 {
                counts[i] += 1;
                counts[j] += 1;
            }
        }
    }
    Ok(counts)
}

/// Mean log ratio of the descending counts to the smallest one considered.
pub fn hill_statistic(counts: &[usize], top_k: Option<usize>) -> Result<f64> {
    if counts.is_empty() {
        return param("Hill statistic needs at least one count");
    }
    if counts.contains(&0) {
        return param("neighbor counts must be at least 1");
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let k = top_k.unwrap_or(sorted.len()).clamp(1, sorted.len());
    let floor = (sorted[k - 1] as f64).ln();
    let sum: f64 = sorted[..k].iter().map(|&c| (c as f64).ln() - floor).sum();
    Ok(sum / k as f64)
}

pub fn tail_index(hill: f64, convention: TidConvention) -> f64 {
    match convention {
        TidConvention::Raw => hill,
        TidConvention::Reciprocal if hill == 0.0 => f64::INFINITY,
        TidConvention::Reciprocal => 1.0 / hill,
    }
}

/// `(x, P(X > x))` for each distinct count `x`, ascending in `x`.
pub fn tail_ccdf(counts: &[usize]) -> Result<Vec<(usize, f64)>> {
    if counts.is_empty() {
        return param("tail CCDF needs at least one count");
    }
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i];
        while i < sorted.len() && sorted[i] == x {
            i += 1;
        }
        out.push((x, (sorted.len() - i) as f64 / n));
    }
    Ok(out)
}

pub fn write_ccdf_csv<W: Write>(ccdf: &[(usize, f64)], mut w: W) -> Result<()> {
    writeln!(w, "count,ccdf")?;
    for (x, p) in ccdf {
        writeln!(w, "{x},{p}")?;
    }
    Ok(())
}

/// Rows `k = min(subset, n)` chosen without replacement from `seed`'s root stream.
pub fn draw_subset(points: ArrayView2<f64>, k: usize, seed: Seed) -> Array2<f64> {
    let n = points.nrows();
    if k >= n {
        return points.to_owned();
    }
    let mut rng = seed.rng();
    let mut idx = index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    points.select(ndarray::Axis(0), &idx)
}

fn difference(train: f64, sampled: f64) -> Result<f64> {
    if train.is_infinite() && sampled.is_infinite() {
        return Err(Error::DegenerateTail(
            "both neighbor-count distributions are constant".to_string(),
        ));
    }
    Ok(train - sampled)
}

/// Per-radius tail statistics for a pair of datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TidReport {
    pub epsilons: Vec<f64>,
    pub hill_train: Vec<f64>,
    pub hill_sampled: Vec<f64>,
    pub alpha_train: Vec<f64>,
    pub alpha_sampled: Vec<f64>,
    pub tid: Vec<f64>,
    pub subset: usize,
    pub metric: Metric,
    pub convention: TidConvention,
}

impl TidReport {
    /// Columns `epsilon,hill_train,hill_sampled,alpha_train,alpha_sampled,tid`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epsilon,hill_train,hill_sampled,alpha_train,alpha_sampled,tid")?;
        for i in 0..self.epsilons.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                self.epsilons[i],
                self.hill_train[i],
                self.hill_sampled[i],
                self.alpha_train[i],
                self.alpha_sampled[i],
                self.tid[i]
            )?;
        }
        Ok(())
    }
}

pub fn tid_report(
    train: &Dataset,
    sampled: &Dataset,
    epsilons: &[f64],
    opts: &TidOptions,
) -> Result<TidReport> {
    if train.dim() != sampled.dim() {
        return param(format!(
            "dimension mismatch: train is {}-d, sampled is {}-d",
            train.dim(),
            sampled.dim()
        ));
    }
    if train.is_empty() || sampled.is_empty() {
        return param("TID needs nonempty datasets");
    }
    if opts.subset == 0 {
        return param("TID subset must be at least 1");
    }
    let k = opts.subset.min(train.len()).min(sampled.len());
    let a = draw_subset(train.points.view(), k, opts.seed);
    let b = draw_subset(sampled.points.view(), k, opts.seed);
    let mut rep = TidReport {
        epsilons: epsilons.to_vec(),
        hill_train: Vec::new(),
        hill_sampled: Vec::new(),
        alpha_train: Vec::new(),
        alpha_sampled: Vec::new(),
        tid: Vec::new(),
        subset: k,
        metric: Metric::from_dim(opts.dim),
        convention: opts.convention,
    };
    for &eps in epsilons {
        let ht = hill_statistic(&neighbor_counts(a.view(), eps, opts.dim)?, opts.top_k)?;
        let hs = hill_statistic(&neighbor_counts(b.view(), eps, opts.dim)?, opts.top_k)?;
        if ht == 0.0 && hs == 0.0 {
            return Err(Error::DegenerateTail(format!(
                "all neighbor counts are equal in both datasets at eps = {eps}"
            )));
        }
        let (at, as_) = (tail_index(ht, opts.convention), tail_index(hs, opts.convention));
        rep.tid.push(difference(at, as_)?);
        rep.hill_train.push(ht);
        rep.hill_sampled.push(hs);
        rep.alpha_train.push(at);
        rep.alpha_sampled.push(as_);
    }
    Ok(rep)
}

/// `TID(train, sampled, eps)` with the default reciprocal convention.
pub fn tid(
    train: &Dataset,
    sampled: &Dataset,
    eps: f64,
    subset: usize,
    seed: Seed,
    dim: Option<usize>,
) -> Result<f64> {
    let opts = TidOptions {
        subset,
        seed,
        dim,
        ..TidOptions::default()
    };
    Ok(tid_report(train, sampled, &[eps], &opts)?.tid[0])
}
