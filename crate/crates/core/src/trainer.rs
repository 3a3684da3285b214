//! Batch sampling and the epoch loop.
//!
//! One epoch is one optimizer step on one sampled batch. After the step, the
//! full training loss (configured kind) and validation MSE are recorded.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{loss_gradient, model_loss, LinearModel, LossKind};
use crate::numerics::{Matrix, Rng, Vector};
use crate::optimizers::{Optimizer, OptimizerSpec};

pub const DEFAULT_EPOCHS: usize = 1000;
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BatchStrategy {
    /// Every training row, in split order.
    Full,
    /// `B` distinct rows sampled uniformly without replacement. `B = 1` is
    /// plain stochastic gradient descent.
    Size(usize),
}

impl BatchStrategy {
    /// Batch size for a training set of `n_train` rows.
    pub fn resolve(self, n_train: usize) -> Result<usize> {
        match self {
            BatchStrategy::Full => Ok(n_train),
            BatchStrategy::Size(0) => Err(Error::invalid("batch size must be >= 1")),
            BatchStrategy::Size(b) if b > n_train => Err(Error::invalid(format!(
                "batch size {b} exceeds training set of {n_train}"
            ))),
            BatchStrategy::Size(b) => Ok(b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunConfig {
    pub optimizer: OptimizerSpec,
    pub loss: LossKind,
    pub batch: BatchStrategy,
    pub epochs: usize,
    pub init_seed: u64,
    pub batch_seed: u64,
    pub divergence_threshold: f64,
}

impl RunConfig {
    pub fn new(optimizer: OptimizerSpec, batch: BatchStrategy) -> Self {
        RunConfig {
            optimizer,
            loss: LossKind::Mse,
            batch,
            epochs: DEFAULT_EPOCHS,
            init_seed: crate::dataset::DEFAULT_SEED,
            batch_seed: crate::dataset::DEFAULT_SEED,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        }
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_loss(mut self, loss: LossKind) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_seeds(mut self, init_seed: u64, batch_seed: u64) -> Self {
        self.init_seed = init_seed;
        self.batch_seed = batch_seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::invalid("divergence threshold must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<EpochRecord>,
    pub final_model: LinearModel,
    /// Number of example rows the loss gradient was evaluated on.
    pub gradient_rows: u64,
}

impl RunOutcome {
    pub fn diverged(&self) -> bool {
        self.records.last().is_some_and(|r| r.diverged)
    }

    pub fn final_val_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.val_loss)
    }
}

/// `theta` entries then bias, i.i.d. `U(-1/√p, 1/√p)`; the closed lower end
/// of the sampled interval is redrawn.
pub fn init_model(p: usize, seed: u64) -> Result<LinearModel> {
    if p == 0 {
        return Err(Error::invalid("model needs at least one feature"));
    }
    let bound = 1.0 / (p as f64).sqrt();
    let mut rng = Rng::new(seed);
    let mut draw = || loop {
        let v = rng.uniform(-bound, bound).expect("bound > 0");
        if v != -bound {
            return v;
        }
    };
    let theta: Vector = (0..p).map(|_| draw()).collect::<Vec<_>>().into();
    let bias = draw();
    Ok(LinearModel::new(theta, bias))
}

/// Indices of the next batch. The full batch returns `train_indices`
/// unchanged and consumes no randomness; otherwise a partial Fisher–Yates
/// shuffle picks `B` distinct entries.
pub fn sample_batch(
    strategy: BatchStrategy,
    train_indices: &[usize],
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let b = strategy.resolve(train_indices.len())?;
    if b == train_indices.len() && strategy == BatchStrategy::Full {
        return Ok(train_indices.to_vec());
    }
    let mut pool = train_indices.to_vec();
    let n = pool.len();
    for i in 0..b {
        let j = i + rng.below((n - i) as u64)? as usize;
        pool.swap(i, j);
    }
    pool.truncate(b);
    Ok(pool)
}

fn exceeds(v: f64, threshold: f64) -> bool {
    !v.is_finite() || v.abs() > threshold
}

pub fn run(config: &RunConfig, d: &Dataset, s: &Split) -> Result<RunOutcome> {
    config.validate()?;
    let (x_train, y_train) = d.subset(&s.train_indices)?;
    let (x_val, y_val) = d.subset(&s.val_indices)?;
    let n_train = x_train.rows();
    let b = config.batch.resolve(n_train)?;

    let mut model = init_model(d.features(), config.init_seed)?;
    let mut optimizer = Optimizer::new(config.optimizer, d.features())?;
    let mut batch_rng = Rng::new(config.batch_seed);
    let local: Vec<usize> = (0..n_train).collect();
    let threshold = config.divergence_threshold;

    let mut records = Vec::with_capacity(config.epochs);
    let mut gradient_rows = 0u64;

    for epoch in 1..=config.epochs {
        let rows = sample_batch(config.batch, &local, &mut batch_rng)?;
        let (x_batch, y_batch): (Matrix, Vector) = if rows.len() == n_train && rows == local {
            (x_train.clone(), y_train.clone())
        } else {
            (
                x_train.select_rows(&rows)?,
                crate::numerics::select(&y_train, &rows)?,
            )
        };

        let stepped = optimizer.step(&mut model, |at| {
            gradient_rows += b as u64;
            loss_gradient(config.loss, at, &x_batch, &y_batch)
        });
        let step_diverged = match stepped {
            Ok(()) => false,
            Err(Error::Divergence(_)) => true,
            Err(e) => return Err(e),
        };

        let train_loss = model_loss(config.loss, &model, &x_train, &y_train)?;
        let val_loss = model_loss(LossKind::Mse, &model, &x_val, &y_val)?;
        let diverged = step_diverged
            || exceeds(train_loss, threshold)
            || exceeds(val_loss, threshold)
            || exceeds(model.max_abs(), threshold);

        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            diverged,
        });
        if diverged {
            break;
        }
    }

    Ok(RunOutcome {
        records,
        final_model: model,
        gradient_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, generate_default, split, DEFAULT_SEED};
    use crate::model::closed_form;
    use crate::optimizers::{OptimizerKind, Variant};

    fn default_problem() -> (Dataset, Split) {
        let d = generate_default(DEFAULT_SEED);
        let s = split(&d, DEFAULT_SEED, 0.9).unwrap();
        (d, s)
    }

    #[test]
    fn init_model_bounds_and_determinism() {
        let m = init_model(5, 1).unwrap();
        let bound = 1.0 / 5f64.sqrt();
        assert!(bound < 0.4473 && bound > 0.4472);
        assert!(m
            .theta
            .iter()
            .chain([m.bias].iter())
            .all(|v| v.abs() < bound));
        assert_eq!(m, init_model(5, 1).unwrap());
        assert!(init_model(0, 1).is_err());
    }

    #[test]
    fn init_model_mean_near_zero() {
        let m = init_model(100_000, 3).unwrap();
        let mean = m.theta.iter().sum::<f64>() / 1e5;
        assert!(mean.abs() < 0.01, "{mean}");
    }

    #[test]
    fn full_batch_is_the_whole_list_in_order() {
        let idx: Vec<usize> = (10..40).collect();
        let mut rng = Rng::new(1);
        let before = rng.clone();
        assert_eq!(
            sample_batch(BatchStrategy::Full, &idx, &mut rng).unwrap(),
            idx
        );
        assert_eq!(rng, before);
    }

    #[test]
    fn minibatch_is_distinct_members() {
        let idx: Vec<usize> = (0..900).map(|i| i * 2).collect();
        let mut rng = Rng::new(2);
        for _ in 0..50 {
            let mut b = sample_batch(BatchStrategy::Size(32), &idx, &mut rng).unwrap();
            assert_eq!(b.len(), 32);
            assert!(b.iter().all(|i| i % 2 == 0 && *i < 1800));
            b.sort_unstable();
            b.dedup();
            assert_eq!(b.len(), 32);
        }
        assert!(sample_batch(BatchStrategy::Size(901), &idx, &mut rng).is_err());
        assert!(sample_batch(BatchStrategy::Size(0), &idx, &mut rng).is_err());
    }

    #[test]
    fn single_row_batches_are_uniform() {
        // Pearson chi-square over 10 buckets, 10^5 draws, 9 dof.
        // The 0.999 quantile of chi²(9) is 27.877.
        let idx: Vec<usize> = (0..10).collect();
        let mut rng = Rng::new(99);
        let mut counts = [0f64; 10];
        let n = 100_000;
        for _ in 0..n {
            counts[sample_batch(BatchStrategy::Size(1), &idx, &mut rng).unwrap()[0]] += 1.0;
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|c| (c - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 27.877, "chi2 = {chi2}");
    }

    #[test]
    fn zero_lr_never_moves() {
        let (d, s) = default_problem();
        let cfg = RunConfig::new(OptimizerSpec::sgd(0.0), BatchStrategy::Size(32)).with_epochs(5);
        let out = run(&cfg, &d, &s).unwrap();
        assert_eq!(out.records.len(), 5);
        assert!(out
            .records
            .windows(2)
            .all(|w| w[0].train_loss == w[1].train_loss && w[0].val_loss == w[1].val_loss));
        assert_eq!(out.final_model, init_model(5, cfg.init_seed).unwrap());
    }

    #[test]
    fn full_batch_sgd_train_loss_monotone() {
        let (d, s) = default_problem();
        let cfg = RunConfig::new(OptimizerSpec::sgd(0.1), BatchStrategy::Full).with_epochs(300);
        let out = run(&cfg, &d, &s).unwrap();
        assert!(out
            .records
            .windows(2)
            .all(|w| w[1].train_loss <= w[0].train_loss));
    }

    #[test]
    fn full_batch_sgd_approaches_oracle() {
        let (d, s) = default_problem();
        let cfg = RunConfig::new(OptimizerSpec::sgd(0.1), BatchStrategy::Full);
        let out = run(&cfg, &d, &s).unwrap();
        assert!(!out.diverged());
        let (xt, yt) = d.subset(&s.train_indices).unwrap();
        let (xv, yv) = d.subset(&s.val_indices).unwrap();
        let oracle = closed_form(&xt, &yt).unwrap();
        let oracle_val = model_loss(LossKind::Mse, &oracle, &xv, &yv).unwrap();
        assert!(out.final_val_loss().unwrap() <= 1.1 * oracle_val);
    }

    #[test]
    fn lr_one_full_batch_sgd_diverges() {
        let (d, s) = default_problem();
        let cfg = RunConfig::new(OptimizerSpec::sgd(1.0), BatchStrategy::Full);
        let out = run(&cfg, &d, &s).unwrap();
        assert!(out.diverged());
        assert!(out.records.len() < 1000);
        assert!(out.records[..out.records.len() - 1]
            .iter()
            .all(|r| !r.diverged));
    }

    #[test]
    fn gradient_rows_counted() {
        let (d, s) = default_problem();
        for (batch, b) in [
            (BatchStrategy::Size(1), 1),
            (BatchStrategy::Size(32), 32),
            (BatchStrategy::Full, 900),
        ] {
            let spec = OptimizerSpec::new(OptimizerKind::Nag)
                .with_variant(Variant::Classic)
                .with_lr(0.01);
            let out = run(&RunConfig::new(spec, batch).with_epochs(7), &d, &s).unwrap();
            assert_eq!(out.gradient_rows, 7 * b);
        }
    }

    #[test]
    fn run_is_deterministic_and_val_loss_repeatable() {
        let d = generate(5, 200, 3, 0.1).unwrap();
        let s = split(&d, 6, 0.9).unwrap();
        let cfg = RunConfig::new(
            OptimizerSpec::new(OptimizerKind::Adam).with_lr(0.01),
            BatchStrategy::Size(8),
        )
        .with_epochs(50);
        let a = run(&cfg, &d, &s).unwrap();
        let b = run(&cfg, &d, &s).unwrap();
        let bits = |o: &RunOutcome| -> Vec<(u64, u64)> {
            o.records
                .iter()
                .map(|r| (r.train_loss.to_bits(), r.val_loss.to_bits()))
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));

        let (xv, yv) = d.subset(&s.val_indices).unwrap();
        let v1 = model_loss(LossKind::Mse, &a.final_model, &xv, &yv).unwrap();
        let v2 = model_loss(LossKind::Mse, &a.final_model, &xv, &yv).unwrap();
        assert_eq!(v1.to_bits(), v2.to_bits());
        assert_eq!(v1.to_bits(), a.final_val_loss().unwrap().to_bits());
    }

    #[test]
    fn mae_training_records_mae_and_validates_with_mse() {
        let d = generate(5, 200, 3, 0.1).unwrap();
        let s = split(&d, 6, 0.9).unwrap();
        let cfg = RunConfig::new(OptimizerSpec::sgd(0.01), BatchStrategy::Full)
            .with_loss(LossKind::Mae)
            .with_epochs(1);
        let out = run(&cfg, &d, &s).unwrap();
        let (xt, yt) = d.subset(&s.train_indices).unwrap();
        let (xv, yv) = d.subset(&s.val_indices).unwrap();
        let r = out.records[0];
        assert_eq!(
            r.train_loss,
            model_loss(LossKind::Mae, &out.final_model, &xt, &yt).unwrap()
        );
        assert_eq!(
            r.val_loss,
            model_loss(LossKind::Mse, &out.final_model, &xv, &yv).unwrap()
        );
    }

    #[test]
    fn invalid_configs_rejected() {
        let (d, s) = default_problem();
        let cfg = RunConfig::new(OptimizerSpec::sgd(0.1), BatchStrategy::Full).with_epochs(0);
        assert!(run(&cfg, &d, &s).is_err());
        let cfg = RunConfig::new(OptimizerSpec::sgd(0.1), BatchStrategy::Size(1000));
        assert!(run(&cfg, &d, &s).is_err());
    }
}
