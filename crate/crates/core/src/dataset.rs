//! Regression datasets and the resampling/perturbation steps that produce
//! the training, validation and dithered sets from an original one.
//!
//! All sampling is driven by [`RngSeed`] through a ChaCha8 stream; Gaussian
//! draws use the ziggurat sampler of `rand_distr` (`StandardNormal`). Both
//! crates are pinned to exact versions so a seed reproduces across builds.

use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Train,
    Validation,
    Dithered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Independent sub-stream seed for the `k`-th consumer of a master seed.
    pub fn derive(self, k: u64) -> RngSeed {
        // splitmix64 finalizer
        let mut z = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k + 1));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

/// Immutable list of `(x, y)` pairs with scalar targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
    tag: Provenance,
}

impl Dataset {
    pub fn new(dim: usize, xs: Vec<f64>, ys: Vec<f64>, tag: Provenance) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be at least 1".into()));
        }
        if ys.is_empty() {
            return Err(Error::InvalidArgument("dataset must contain at least one point".into()));
        }
        if xs.len() != dim * ys.len() {
            return Err(Error::DimensionMismatch { what: "dataset inputs", expected: dim * ys.len(), got: xs.len() });
        }
        Ok(Dataset { dim, xs, ys, tag })
    }

    pub fn from_rows(rows: &[(Vec<f64>, f64)], tag: Provenance) -> Result<Self> {
        let dim = rows.first().map_or(0, |(x, _)| x.len());
        let mut xs = Vec::with_capacity(dim * rows.len());
        for (x, _) in rows {
            if x.len() != dim {
                return Err(Error::DimensionMismatch { what: "dataset row", expected: dim, got: x.len() });
            }
            xs.extend_from_slice(x);
        }
        Dataset::new(dim, xs, rows.iter().map(|(_, y)| *y).collect(), tag)
    }

    /// Dataset on which the linear model `θ·x` with squared loss has
    /// `J₀(θ) = ½‖θ − center‖²` exactly.
    ///
    /// Uses `p = center.len()` points `x_i = √(p/2)·e_i`, `y_i = √(p/2)·center_i`.
    pub fn quadratic_bowl(center: &[f64], tag: Provenance) -> Result<Self> {
        let p = center.len();
        let s = (p as f64 / 2.0).sqrt();
        let mut xs = vec![0.0; p * p];
        for i in 0..p {
            xs[i * p + i] = s;
        }
        Dataset::new(p, xs, center.iter().map(|c| s * c).collect(), tag)
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tag(&self) -> Provenance {
        self.tag
    }

    pub fn with_tag(mut self, tag: Provenance) -> Self {
        self.tag = tag;
        self
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn y(&self, i: usize) -> f64 {
        self.ys[i]
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.xs.chunks_exact(self.dim).zip(self.ys.iter().copied())
    }

    fn select(&self, indices: &[usize], tag: Provenance) -> Dataset {
        let mut xs = Vec::with_capacity(indices.len() * self.dim);
        let mut ys = Vec::with_capacity(indices.len());
        for &i in indices {
            xs.extend_from_slice(self.x(i));
            ys.push(self.ys[i]);
        }
        Dataset { dim: self.dim, xs, ys, tag }
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(io_err(path))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
        let header_len = reader.headers().map_err(|e| malformed(path, 1, e.to_string()))?.len();
        if header_len < 2 {
            return Err(malformed(path, 1, "header must name at least one input column and y".into()));
        }
        let dim = header_len - 1;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                malformed(path, line, e.to_string())
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != header_len {
                return Err(malformed(path, line, format!("expected {header_len} columns, found {}", record.len())));
            }
            for (col, field) in record.iter().enumerate() {
                let v: f64 =
                    field.parse().map_err(|_| malformed(path, line, format!("non-numeric value {field:?}")))?;
                if !v.is_finite() {
                    return Err(malformed(path, line, format!("non-finite value {field:?}")));
                }
                if col < dim {
                    xs.push(v);
                } else {
                    ys.push(v);
                }
            }
        }
        if ys.is_empty() {
            return Err(Error::EmptyDataset(path.to_path_buf()));
        }
        Dataset::new(dim, xs, ys, Provenance::Original)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        header.push("y".into());
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for (x, y) in self.iter() {
            let row: Vec<String> = x.iter().chain(std::iter::once(&y)).map(|v| format!("{v:?}")).collect();
            w.write_record(&row).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(io_err(path))
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} dataset (m = {}, d = {})", self.tag, self.len(), self.dim)
    }
}

fn malformed(path: &Path, line: u64, message: String) -> Error {
    Error::MalformedRow { path: path.to_path_buf(), line, message }
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source: std::io::Error::other(e.to_string()) }
}

/// Indices drawn by [`bootstrap`]; exposed for tests and provenance logs.
pub fn bootstrap_indices(src_len: usize, size: usize, replacement: bool, seed: RngSeed) -> Result<Vec<usize>> {
    if size == 0 {
        return Err(Error::InvalidArgument("bootstrap size must be positive".into()));
    }
    let mut rng = seed.rng();
    if replacement {
        Ok((0..size).map(|_| rng.random_range(0..src_len)).collect())
    } else {
        if size > src_len {
            return Err(Error::InvalidArgument(format!(
                "cannot draw {size} points without replacement from {src_len}"
            )));
        }
        Ok(index::sample(&mut rng, src_len, size).into_vec())
    }
}

/// Resamples `size` points from `src`, tagged as training data.
pub fn bootstrap(src: &Dataset, size: usize, replacement: bool, seed: RngSeed) -> Result<Dataset> {
    let idx = bootstrap_indices(src.len(), size, replacement, seed)?;
    Ok(src.select(&idx, Provenance::Train))
}

/// Splits one permutation of `src` into two disjoint resamples of sizes
/// `first` and `second`.
pub fn disjoint_split(src: &Dataset, first: usize, second: usize, seed: RngSeed) -> Result<(Dataset, Dataset)> {
    if first == 0 || second == 0 {
        return Err(Error::InvalidArgument("split sizes must be positive".into()));
    }
    if first + second > src.len() {
        return Err(Error::InvalidArgument(format!(
            "disjoint split of {first} + {second} points exceeds source size {}",
            src.len()
        )));
    }
    let idx = bootstrap_indices(src.len(), first + second, false, seed)?;
    Ok((src.select(&idx[..first], Provenance::Train), src.select(&idx[first..], Provenance::Validation)))
}

/// Noise standard deviation `c · max_i |y_i|`.
pub fn dither_sigma(src: &Dataset, level: f64) -> f64 {
    level * src.ys.iter().fold(0.0, |m: f64, y| m.max(y.abs()))
}

/// Adds i.i.d. `N(0, σ²)` noise to the targets, `σ = c · max_i |y_i|`.
pub fn dither(src: &Dataset, level: f64, seed: RngSeed) -> Result<Dataset> {
    if !(level >= 0.0) || !level.is_finite() {
        return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {level}")));
    }
    let sigma = dither_sigma(src, level);
    let mut rng = seed.rng();
    let ys = src
        .ys
        .iter()
        .map(|y| {
            let z: f64 = rng.sample(StandardNormal);
            y + sigma * z
        })
        .collect();
    Ok(Dataset { dim: src.dim, xs: src.xs.clone(), ys, tag: Provenance::Dithered })
}
