//! Synthetic least-squares data and the train/validation split.
//!
//! Draw order from a single generator seeded with `seed`:
//! 1. raw `X`, row-major, `n × p` draws from `U(0, 100)`;
//! 2. `theta`, `p` standard normals;
//! 3. `bias`, one standard normal;
//! 4. noise `ε`, `n` standard normals.
//!
//! `X` is then divided by its single largest entry, and
//! `y = X_norm · theta + bias + noise_scale · ε`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matvec, select, Matrix, Rng, Vector};

pub const DEFAULT_SEED: u64 = 100;
pub const DEFAULT_ROWS: usize = 1000;
pub const DEFAULT_FEATURES: usize = 5;
pub const DEFAULT_NOISE_SCALE: f64 = 0.1;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;

const RAW_LO: f64 = 0.0;
const RAW_HI: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub x_norm: Matrix,
    pub y: Vector,
    pub true_theta: Vector,
    pub true_bias: f64,
    pub noise_scale: f64,
    /// Largest raw entry of `X`, the normalization divisor.
    pub raw_max: f64,
}

/// Contents of the JSON sidecar written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub noise_scale: f64,
    pub true_theta: Vec<f64>,
    pub true_bias: f64,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.x_norm.rows()
    }

    pub fn features(&self) -> usize {
        self.x_norm.cols()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            seed: self.seed,
            n: self.rows(),
            p: self.features(),
            noise_scale: self.noise_scale,
            true_theta: self.true_theta.to_vec(),
            true_bias: self.true_bias,
        }
    }

    /// Rows of `x_norm` and `y` at `indices`.
    pub fn subset(&self, indices: &[usize]) -> Result<(Matrix, Vector)> {
        Ok((self.x_norm.select_rows(indices)?, select(&self.y, indices)?))
    }
}

/// Default-sized dataset (1000 × 5, noise 0.1).
pub fn generate_default(seed: u64) -> Dataset {
    generate(seed, DEFAULT_ROWS, DEFAULT_FEATURES, DEFAULT_NOISE_SCALE)
        .expect("default dataset parameters are valid")
}

pub fn generate(seed: u64, n: usize, p: usize, noise_scale: f64) -> Result<Dataset> {
    if n == 0 || p == 0 {
        return Err(Error::invalid(format!(
            "dataset needs n >= 1 and p >= 1, got n={n}, p={p}"
        )));
    }
    if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
        return Err(Error::invalid(format!(
            "noise_scale must be finite and >= 0, got {noise_scale}"
        )));
    }

    let mut rng = Rng::new(seed);
    let raw: Vec<f64> = (0..n * p)
        .map(|_| rng.uniform(RAW_LO, RAW_HI))
        .collect::<Result<_>>()?;
    let true_theta: Vector = (0..p).map(|_| rng.normal()).collect::<Vec<_>>().into();
    let true_bias = rng.normal();
    let noise: Vec<f64> = (0..n).map(|_| rng.normal()).collect();

    let raw_max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(raw_max > 0.0) {
        return Err(Error::invalid("all raw feature draws are zero"));
    }
    let x_norm = Matrix::from_row_major(n, p, raw.iter().map(|v| v / raw_max).collect())?;

    let signal = matvec(&x_norm, &true_theta)?;
    let y: Vector = signal
        .iter()
        .zip(&noise)
        .map(|(s, e)| s + true_bias + noise_scale * e)
        .collect::<Vec<_>>()
        .into();

    Ok(Dataset {
        seed,
        x_norm,
        y,
        true_theta,
        true_bias,
        noise_scale,
        raw_max,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl Split {
    pub fn train_len(&self) -> usize {
        self.train_indices.len()
    }
}

/// Fisher–Yates shuffle of `0..n` seeded by `seed`; the first
/// `floor(n · train_fraction)` entries train, the rest validate.
pub fn split(d: &Dataset, seed: u64, train_fraction: f64) -> Result<Split> {
    split_indices(d.rows(), seed, train_fraction)
}

pub fn split_indices(n: usize, seed: u64, train_fraction: f64) -> Result<Split> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n_train = (n as f64 * train_fraction).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::invalid(format!(
            "splitting {n} rows at {train_fraction} leaves an empty partition"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let val_indices = order.split_off(n_train);
    Ok(Split {
        train_indices: order,
        val_indices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_targets_are_exactly_linear() {
        let d = generate(3, 50, 4, 0.0).unwrap();
        let pred = matvec(&d.x_norm, &d.true_theta).unwrap();
        for (p, y) in pred.iter().zip(d.y.iter()) {
            assert_eq!(p + d.true_bias, *y);
        }
    }

    #[test]
    fn default_entries_normalized_with_unit_max() {
        let d = generate_default(DEFAULT_SEED);
        assert_eq!(d.rows(), 1000);
        assert_eq!(d.features(), 5);
        let xs = d.x_norm.as_slice();
        assert!(xs.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(xs.iter().copied().fold(f64::MIN, f64::max), 1.0);
    }

    #[test]
    fn raw_mean_near_fifty() {
        let d = generate_default(DEFAULT_SEED);
        let mean = d
            .x_norm
            .as_slice()
            .iter()
            .map(|v| v * d.raw_max)
            .sum::<f64>()
            / 5000.0;
        assert!((mean - 50.0).abs() < 1.0, "raw mean {mean}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(17, 100, 3, 0.1).unwrap();
        let b = generate(17, 100, 3, 0.1).unwrap();
        let bits = |d: &Dataset| -> Vec<u64> {
            d.x_norm
                .as_slice()
                .iter()
                .chain(d.y.iter())
                .chain(d.true_theta.iter())
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.true_bias.to_bits(), b.true_bias.to_bits());
        assert_ne!(bits(&a), bits(&generate(18, 100, 3, 0.1).unwrap()));
    }

    #[test]
    fn generate_rejects_empty_shapes() {
        assert!(generate(1, 0, 5, 0.1).is_err());
        assert!(generate(1, 10, 0, 0.1).is_err());
        assert!(generate(1, 10, 5, -0.1).is_err());
    }

    #[test]
    fn split_sizes() {
        let s = split_indices(1000, 1, 0.9).unwrap();
        assert_eq!((s.train_indices.len(), s.val_indices.len()), (900, 100));
        let s = split_indices(10, 1, 0.5).unwrap();
        assert_eq!((s.train_indices.len(), s.val_indices.len()), (5, 5));
        assert!(s.train_indices.iter().all(|i| !s.val_indices.contains(i)));
    }

    #[test]
    fn split_is_a_permutation_and_deterministic() {
        let s = split_indices(1000, 42, 0.9).unwrap();
        let mut all: Vec<usize> = s
            .train_indices
            .iter()
            .chain(&s.val_indices)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        assert_eq!(s, split_indices(1000, 42, 0.9).unwrap());
        assert_ne!(s, split_indices(1000, 43, 0.9).unwrap());
    }

    #[test]
    fn split_rejects_bad_fractions() {
        for f in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(split_indices(100, 1, f).is_err(), "fraction {f}");
        }
        assert!(split_indices(1, 1, 0.5).is_err());
    }
}
