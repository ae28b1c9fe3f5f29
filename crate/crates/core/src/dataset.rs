//! Synthetic datasets, their CSV form, and the shared sampling time grid.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::mog::MogSpec;
use crate::rng::{normal, Seed};

/// How the spread parameter of a mixture dataset is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spread {
    /// The number is a per-dimension variance.
    #[default]
    Variance,
    /// The number is a per-dimension standard deviation.
    Std,
}

impl Spread {
    fn variance(self, value: f64) -> f64 {
        match self {
            Spread::Variance => value,
            Spread::Std => value * value,
        }
    }
}

fn default_noise() -> f64 {
    0.1
}
fn default_mog2d_std() -> f64 {
    0.2
}
fn default_mog_spread() -> f64 {
    0.2
}
fn default_components() -> usize {
    6
}
fn default_radius() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Uniform points on the active cells of a 4x4 board of unit cells.
    /// A cell is active when `floor(x) + floor(y)` is even.
    Chessboard,
    /// One spiral arm: radius grows linearly 0 -> 2 while the angle goes 0 -> 4pi.
    Spiral {
        #[serde(default = "default_noise")]
        noise_std: f64,
    },
    /// Two interleaved unit-radius half circles centred at (0.5, 0.1) (lower
    /// half) and (-0.5, -0.1) (upper half).
    Semicircles {
        #[serde(default = "default_noise")]
        noise_std: f64,
    },
    /// Equal-weight isotropic components with means evenly spaced on a circle.
    #[serde(rename = "mog_2d")]
    Mog2d {
        #[serde(default = "default_components")]
        components: usize,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_mog2d_std")]
        std: f64,
    },
    /// `0.5 N(-1, s I) + 0.5 N(+1, s I)` in `dim` dimensions.
    MogNd {
        dim: usize,
        #[serde(default = "default_mog_spread")]
        spread: f64,
        #[serde(default)]
        spread_kind: Spread,
    },
    /// The one-dimensional case of [`DatasetSpec::MogNd`].
    #[serde(rename = "mog_1d")]
    Mog1d {
        #[serde(default = "default_mog_spread")]
        spread: f64,
        #[serde(default)]
        spread_kind: Spread,
    },
}

impl DatasetSpec {
    pub fn mog_nd(dim: usize) -> Self {
        DatasetSpec::MogNd {
            dim,
            spread: default_mog_spread(),
            spread_kind: Spread::Variance,
        }
    }

    pub fn mog_1d() -> Self {
        DatasetSpec::Mog1d {
            spread: default_mog_spread(),
            spread_kind: Spread::Variance,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DatasetSpec::MogNd { dim, .. } => *dim,
            DatasetSpec::Mog1d { .. } => 1,
            _ => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DatasetSpec::Chessboard => Ok(()),
            DatasetSpec::Spiral { noise_std } | DatasetSpec::Semicircles { noise_std } => {
                if !(noise_std >= 0.0 && noise_std.is_finite()) {
                    return param(format!("noise_std must be >= 0, got {noise_std}"));
                }
                Ok(())
            }
            DatasetSpec::Mog2d {
                components,
                radius,
                std,
            } => {
                if components == 0 {
                    return param("mog_2d needs at least one component");
                }
                if !(std > 0.0) || !radius.is_finite() {
                    return param(format!("mog_2d std must be > 0, got {std}"));
                }
                Ok(())
            }
            DatasetSpec::MogNd { dim, spread, .. } => {
                if dim == 0 {
                    return param("mog_nd dimension must be >= 1");
                }
                if !(spread > 0.0 && spread.is_finite()) {
                    return param(format!("mixture spread must be > 0, got {spread}"));
                }
                Ok(())
            }
            DatasetSpec::Mog1d { spread, .. } => {
                if !(spread > 0.0 && spread.is_finite()) {
                    return param(format!("mixture spread must be > 0, got {spread}"));
                }
                Ok(())
            }
        }
    }

    /// The analytic mixture behind this dataset, when it has one.
    pub fn mog_spec(&self) -> Option<MogSpec> {
        match *self {
            DatasetSpec::Mog2d {
                components,
                radius,
                std,
            } => {
                let means = (0..components)
                    .map(|k| {
                        let a = 2.0 * PI * k as f64 / components as f64;
                        vec![radius * a.cos(), radius * a.sin()]
                    })
                    .collect();
                MogSpec::new(
                    vec![1.0 / components as f64; components],
                    means,
                    vec![std * std; components],
                )
                .ok()
            }
            DatasetSpec::MogNd {
                dim,
                spread,
                spread_kind,
            } => MogSpec::symmetric_pair(dim, spread_kind.variance(spread)).ok(),
            DatasetSpec::Mog1d {
                spread,
                spread_kind,
            } => MogSpec::symmetric_pair(1, spread_kind.variance(spread)).ok(),
            _ => None,
        }
    }
}

/// An `N x d` sample matrix with optional provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Array2<f64>,
    pub spec: Option<DatasetSpec>,
    pub seed: Option<Seed>,
}

impl Dataset {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.ncols() == 0 {
            return param("dataset dimension must be >= 1");
        }
        if points.iter().any(|v| !v.is_finite()) {
            return param("dataset contains non-finite entries");
        }
        Ok(Dataset {
            points,
            spec: None,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            points: self.points.select(Axis(0), idx),
            spec: self.spec.clone(),
            seed: self.seed,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|j| format!("dim{j}")).collect();
        writeln!(w, "{}", header.join(","))?;
        for row in self.points.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Dataset> {
        let mut lines = BufReader::new(r).lines();
        let header = match lines.next() {
            Some(h) => h?,
            None => {
                return Err(Error::Load {
                    field: "header".into(),
                    msg: "empty file".into(),
                })
            }
        };
        let dim = header.split(',').count();
        let mut flat = Vec::new();
        let mut rows = 0;
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let before = flat.len();
            for cell in line.split(',') {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Load {
                    field: format!("row {}", lineno + 1),
                    msg: format!("not a number: {cell:?}"),
                })?;
                flat.push(v);
            }
            if flat.len() - before != dim {
                return Err(Error::Load {
                    field: format!("row {}", lineno + 1),
                    msg: format!("expected {dim} columns, got {}", flat.len() - before),
                });
            }
            rows += 1;
        }
        let points = Array2::from_shape_vec((rows, dim), flat).expect("shape checked per row");
        Dataset::new(points)
    }
}

/// Draw `n` samples of `spec` from `seed`.
pub fn gen_dataset(spec: &DatasetSpec, n: usize, seed: Seed) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = seed.rng();
    let d = spec.dim();
    let points = match *spec {
        DatasetSpec::Chessboard => {
            let cells: Vec<(f64, f64)> = (0..4)
                .flat_map(|i| (0..4).map(move |j| (i, j)))
                .filter(|(i, j)| (i + j) % 2 == 0)
                .map(|(i, j)| (i as f64, j as f64))
                .collect();
            let mut m = Array2::zeros((n, 2));
            for mut row in m.rows_mut() {
                let (cx, cy) = cells[rng.gen_range(0..cells.len())];
                row[0] = cx + rng.gen::<f64>();
                row[1] = cy + rng.gen::<f64>();
            }
            m
        }
        DatasetSpec::Spiral { noise_std } => {
            let mut m = Array2::zeros((n, 2));
            for mut row in m.rows_mut() {
                let angle = rng.gen::<f64>() * 4.0 * PI;
                let r = 2.0 * angle / (4.0 * PI);
                row[0] = r * angle.cos() + noise_std * normal(&mut rng);
                row[1] = r * angle.sin() + noise_std * normal(&mut rng);
            }
            m
        }
        DatasetSpec::Semicircles { noise_std } => {
            let mut m = Array2::zeros((n, 2));
            for mut row in m.rows_mut() {
                let angle = rng.gen::<f64>() * PI;
                let (cx, cy, a) = if rng.gen::<bool>() {
                    (0.5, 0.1, PI + angle)
                } else {
                    (-0.5, -0.1, angle)
                };
                row[0] = cx + a.cos() + noise_std * normal(&mut rng);
                row[1] = cy + a.sin() + noise_std * normal(&mut rng);
            }
            m
        }
        _ => {
            let mog = spec.mog_spec().expect("mixture variants have a MogSpec");
            mog.sample(n, &mut rng)
        }
    };
    debug_assert_eq!(points.ncols(), d);
    Ok(Dataset {
        points,
        spec: Some(spec.clone()),
        seed: Some(seed),
    })
}

/// `steps + 1` evenly spaced times descending from `t_max` to `t_min`.
pub fn time_grid(steps: usize, t_min: f64, t_max: f64) -> Result<Vec<f64>> {
    if steps == 0 {
        return param("time grid needs at least one step");
    }
    if !(t_min >= 0.0 && t_max <= 1.0 && t_min < t_max) {
        return param(format!(
            "time grid needs 0 <= t_min < t_max <= 1, got [{t_min}, {t_max}]"
        ));
    }
    let h = (t_max - t_min) / steps as f64;
    let mut grid: Vec<f64> = (0..steps).map(|k| t_max - k as f64 * h).collect();
    grid.push(t_min);
    Ok(grid)
}
