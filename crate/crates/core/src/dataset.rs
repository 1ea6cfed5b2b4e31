//! Datasets, the two-moons generator with label corruption, empirical
//! moments and the shrink-toward-the-mean data modification.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{domain, shape, MixregError, Result};

/// Empirical moments (divide-by-n).
#[derive(Debug, Clone, PartialEq)]
pub struct DataStats {
    pub x_mean: DVector<f64>,
    pub y_mean: DVector<f64>,
    pub sxx: DMatrix<f64>,
    pub sxy: DMatrix<f64>,
    pub syy: DMatrix<f64>,
}

impl DataStats {
    pub fn compute(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Self {
        let n = x.nrows() as f64;
        let x_mean = x.row_mean().transpose();
        let y_mean = y.row_mean().transpose();
        let mut xc = x.clone();
        let mut yc = y.clone();
        for mut r in xc.row_iter_mut() {
            r -= x_mean.transpose();
        }
        for mut r in yc.row_iter_mut() {
            r -= y_mean.transpose();
        }
        let sxx = xc.transpose() * &xc / n;
        let sxy = xc.transpose() * &yc / n;
        let syy = yc.transpose() * &yc / n;
        Self { x_mean, y_mean, sxx, sxy, syy }
    }

    pub fn syx(&self) -> DMatrix<f64> {
        self.sxy.transpose()
    }
}

/// Immutable collection of input rows `xᵢ ∈ ℝᵈ` and output rows `yᵢ ∈ ℝᶜ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
    stats: DataStats,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, outputs: DMatrix<f64>) -> Result<Self> {
        if inputs.nrows() != outputs.nrows() {
            return shape(format!(
                "{} input rows but {} output rows",
                inputs.nrows(),
                outputs.nrows()
            ));
        }
        if inputs.nrows() == 0 || inputs.ncols() == 0 || outputs.ncols() == 0 {
            return domain("dataset needs at least one row, one input and one output column");
        }
        if inputs.iter().chain(outputs.iter()).any(|v| !v.is_finite()) {
            return Err(MixregError::NonFinite("dataset entries must be finite".into()));
        }
        let stats = DataStats::compute(&inputs, &outputs);
        Ok(Self { inputs, outputs, stats })
    }

    /// Builds a classification dataset with one-hot outputs from integer labels.
    pub fn from_labels(inputs: DMatrix<f64>, labels: &[usize], classes: usize) -> Result<Self> {
        if labels.iter().any(|&l| l >= classes) {
            return domain(format!("labels must be < {classes}"));
        }
        let mut y = DMatrix::zeros(labels.len(), classes);
        for (i, &l) in labels.iter().enumerate() {
            y[(i, l)] = 1.0;
        }
        Self::new(inputs, y)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.ncols()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn outputs(&self) -> &DMatrix<f64> {
        &self.outputs
    }

    pub fn x(&self, i: usize) -> DVector<f64> {
        self.inputs.row(i).transpose()
    }

    pub fn y(&self, i: usize) -> DVector<f64> {
        self.outputs.row(i).transpose()
    }

    pub fn stats(&self) -> &DataStats {
        &self.stats
    }

    /// True when every output row is a one-hot vector.
    pub fn is_one_hot(&self) -> bool {
        self.outputs.row_iter().all(|r| {
            let ones = r.iter().filter(|&&v| v == 1.0).count();
            let zeros = r.iter().filter(|&&v| v == 0.0).count();
            ones == 1 && ones + zeros == r.len()
        })
    }

    /// True when every output row lies on the probability simplex.
    pub fn is_simplex(&self, tol: f64) -> bool {
        self.outputs
            .row_iter()
            .all(|r| r.iter().all(|&v| v >= -tol) && (r.sum() - 1.0).abs() <= tol)
    }

    /// Class index of every row (argmax of the output vector; for a single
    /// output column, `y ≥ 1/2` is class 1).
    pub fn labels(&self) -> Vec<usize> {
        self.outputs
            .row_iter()
            .map(|r| {
                if r.len() == 1 {
                    usize::from(r[0] >= 0.5)
                } else {
                    r.transpose().argmax().0
                }
            })
            .collect()
    }

    /// Scalar {0, 1} view of a two-class one-hot dataset (the second column),
    /// used with the logistic loss.
    pub fn to_binary_scalar(&self) -> Result<Dataset> {
        if self.output_dim() != 2 {
            return shape(format!("binary view needs c = 2 (got {})", self.output_dim()));
        }
        let y = self.outputs.columns(1, 1).into_owned();
        Dataset::new(self.inputs.clone(), y)
    }

    /// Rows at the given indices, in order.
    pub fn select(&self, idx: &[usize]) -> Result<Dataset> {
        if idx.iter().any(|&i| i >= self.len()) {
            return domain("row index out of range");
        }
        let x = DMatrix::from_fn(idx.len(), self.input_dim(), |r, c| self.inputs[(idx[r], c)]);
        let y = DMatrix::from_fn(idx.len(), self.output_dim(), |r, c| self.outputs[(idx[r], c)]);
        Dataset::new(x, y)
    }

    /// First `⌊n·fraction⌋` rows for training, the rest for testing.
    pub fn split(&self, train_fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return domain("train fraction must lie in [0, 1]");
        }
        let cut = (self.len() as f64 * train_fraction).floor() as usize;
        let train: Vec<usize> = (0..cut).collect();
        let test: Vec<usize> = (cut..self.len()).collect();
        Ok((self.select(&train)?, self.select(&test)?))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let d = headers.iter().filter(|h| h.starts_with('x')).count();
        let c = headers.iter().filter(|h| h.starts_with('y')).count();
        for (k, h) in headers.iter().enumerate() {
            let expect = if k < d { format!("x{k}") } else { format!("y{}", k - d) };
            if h != expect {
                return Err(MixregError::Parse(format!("unexpected column {h:?}, wanted {expect:?}")));
            }
        }
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != d + c {
                return Err(MixregError::Parse("ragged csv row".into()));
            }
            for (k, f) in rec.iter().enumerate() {
                let v: f64 = f.trim().parse().map_err(|_| MixregError::Parse(format!("bad number {f:?}")))?;
                if k < d {
                    xs.push(v)
                } else {
                    ys.push(v)
                }
            }
        }
        let n = xs.len() / d.max(1);
        Dataset::new(DMatrix::from_row_slice(n, d, &xs), DMatrix::from_row_slice(n, c, &ys))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.input_dim()).map(|k| format!("x{k}")).collect();
        header.extend((0..self.output_dim()).map(|k| format!("y{k}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let rec: Vec<String> = self
                .inputs
                .row(i)
                .iter()
                .chain(self.outputs.row(i).iter())
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Two interleaving half-circles with isotropic Gaussian noise.
///
/// Outer moon: `(cos t, sin t)`, inner moon: `(1 − cos t, 0.5 − sin t)` for
/// `t` evenly spaced on `[0, π]`; labels are one-hot in ℝ² and rows are shuffled.
pub fn make_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return domain(format!("two moons needs n >= 4 (got {n})"));
    }
    if !n.is_multiple_of(2) {
        return domain(format!("two moons needs an even n (got {n})"));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return domain(format!("noise must be a nonnegative number (got {noise})"));
    }
    let half = n / 2;
    let pi = std::f64::consts::PI;
    let mut points: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    for k in 0..half {
        let t = pi * k as f64 / (half - 1) as f64;
        points.push(([t.cos(), t.sin()], 0));
    }
    for k in 0..half {
        let t = pi * k as f64 / (half - 1) as f64;
        points.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    points.shuffle(&mut rng);
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).expect("finite noise");
        for (p, _) in points.iter_mut() {
            p[0] += normal.sample(&mut rng);
            p[1] += normal.sample(&mut rng);
        }
    }
    let x = DMatrix::from_fn(n, 2, |r, c| points[r].0[c]);
    let labels: Vec<usize> = points.iter().map(|p| p.1).collect();
    Dataset::from_labels(x, &labels, 2)
}

/// Swaps the one-hot vector of exactly `round(fraction · n)` rows.
pub fn flip_labels(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return domain(format!("flip fraction must lie in [0, 1] (got {fraction})"));
    }
    if ds.output_dim() != 2 || !ds.is_one_hot() {
        return domain("label flipping needs one-hot outputs with c = 2");
    }
    let count = (fraction * ds.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = ds.outputs().clone();
    for i in sample(&mut rng, ds.len(), count).iter() {
        y.swap((i, 0), (i, 1));
    }
    Dataset::new(ds.inputs().clone(), y)
}

/// `(x̄, ȳ, Σxx, Σxy, Σyy)` of a dataset.
pub fn stats(ds: &Dataset) -> &DataStats {
    ds.stats()
}

/// Training pairs shrunk toward their means: `x̃ᵢ = x̄ + θ̄(xᵢ − x̄)`,
/// `ỹᵢ = ȳ + θ̄(yᵢ − ȳ)`.
#[derive(Debug, Clone)]
pub struct ModifiedDataset {
    pub data: Dataset,
    pub theta_bar: f64,
    pub x_mean: DVector<f64>,
    pub y_mean: DVector<f64>,
}

impl ModifiedDataset {
    /// Inverts the shrinkage, `x = x̄ + (x̃ − x̄)/θ̄`.
    pub fn unshrink(&self) -> Result<Dataset> {
        let t = self.theta_bar;
        let x = shrink_rows(self.data.inputs(), &self.x_mean, 1.0 / t);
        let y = shrink_rows(self.data.outputs(), &self.y_mean, 1.0 / t);
        Dataset::new(x, y)
    }

    pub fn x(&self, i: usize) -> DVector<f64> {
        self.data.x(i)
    }

    pub fn y(&self, i: usize) -> DVector<f64> {
        self.data.y(i)
    }
}

fn shrink_rows(m: &DMatrix<f64>, mean: &DVector<f64>, factor: f64) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| mean[c] + factor * (m[(r, c)] - mean[c]))
}

pub fn modify(ds: &Dataset, theta_bar: f64) -> Result<ModifiedDataset> {
    if !(0.5..=1.0).contains(&theta_bar) {
        return domain(format!("theta_bar must lie in [1/2, 1] (got {theta_bar})"));
    }
    let s = ds.stats();
    let x = shrink_rows(ds.inputs(), &s.x_mean, theta_bar);
    let y = shrink_rows(ds.outputs(), &s.y_mean, theta_bar);
    Ok(ModifiedDataset {
        data: Dataset::new(x, y)?,
        theta_bar,
        x_mean: s.x_mean.clone(),
        y_mean: s.y_mean.clone(),
    })
}
