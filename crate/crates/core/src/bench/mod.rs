//! Experiment grid, result persistence, charts and the command line.

mod cli;
mod plot;
mod results;

pub use cli::{main_with_args, EXIT_DIVERGED, EXIT_GRADCHECK_FAILED, EXIT_OK, EXIT_USAGE};
pub use plot::{
    plot_curves, plot_rows, GroupBy, ADAM_VS_NESTEROV_CHART, ADAPTIVE_LR_CHART, CONSTANT_LR_CHART,
};
pub use results::{read_csv, write_csv, CsvRow, CSV_HEADER};

use std::fmt;

use rayon::prelude::*;

use crate::dataset::{self, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::LossKind;
use crate::numerics::splitmix64;
use crate::optimizers::{OptimizerKind, OptimizerSpec, Variant};
use crate::trainer::{self, BatchStrategy, RunConfig, RunOutcome, DEFAULT_DIVERGENCE_THRESHOLD};

pub const DEFAULT_LEARNING_RATES: [f64; 4] = [1.0, 0.1, 0.01, 0.001];
pub const DEFAULT_MOMENTA: [f64; 2] = [0.1, 0.9];
pub const DEFAULT_BATCHES: [BatchStrategy; 3] = [
    BatchStrategy::Size(1),
    BatchStrategy::Size(32),
    BatchStrategy::Full,
];

/// Seeds shared by every cell unless the corresponding `per_cell` flag asks
/// for a derived seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSeeds {
    pub init_seed: u64,
    pub batch_seed: u64,
    pub split_seed: u64,
    /// Derive a distinct init seed for every cell.
    pub init_per_cell: bool,
    /// Re-draw the train/validation split for every cell.
    pub split_per_cell: bool,
}

impl Default for GridSeeds {
    fn default() -> Self {
        GridSeeds {
            init_seed: dataset::DEFAULT_SEED,
            batch_seed: dataset::DEFAULT_SEED,
            split_seed: dataset::DEFAULT_SEED,
            init_per_cell: false,
            split_per_cell: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    /// Templates; `lr` and `momentum` are overwritten per cell.
    pub optimizers: Vec<OptimizerSpec>,
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<BatchStrategy>,
    /// Swept for Momentum and NAG only.
    pub momenta: Vec<f64>,
    pub epochs: usize,
    pub loss: LossKind,
    pub seeds: GridSeeds,
    pub divergence_threshold: f64,
    pub train_fraction: f64,
}

impl Default for Grid {
    fn default() -> Self {
        Grid::with_variant(Variant::Decoupled)
    }
}

impl Grid {
    /// The default sweep with Momentum and NAG in the given formulation.
    pub fn with_variant(variant: Variant) -> Self {
        Grid {
            optimizers: OptimizerKind::ALL
                .iter()
                .map(|&k| OptimizerSpec::new(k).with_variant(variant))
                .collect(),
            learning_rates: DEFAULT_LEARNING_RATES.to_vec(),
            batch_sizes: DEFAULT_BATCHES.to_vec(),
            momenta: DEFAULT_MOMENTA.to_vec(),
            epochs: trainer::DEFAULT_EPOCHS,
            loss: LossKind::Mse,
            seeds: GridSeeds::default(),
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            train_fraction: dataset::DEFAULT_TRAIN_FRACTION,
        }
    }

    /// Cartesian product of the axes, momenta only where they apply.
    /// Enumeration order: optimizer, learning rate, momentum, batch size.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for template in &self.optimizers {
            for &lr in &self.learning_rates {
                let momenta: Vec<Option<f64>> = if template.kind.uses_momentum() {
                    self.momenta.iter().copied().map(Some).collect()
                } else {
                    vec![None]
                };
                for momentum in momenta {
                    for &batch in &self.batch_sizes {
                        let mut spec = template.with_lr(lr);
                        if let Some(mu) = momentum {
                            spec = spec.with_momentum(mu);
                        }
                        cells.push(Cell {
                            index: cells.len(),
                            spec,
                            batch,
                        });
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    /// Position in [`Grid::cells`] enumeration; feeds per-cell seed derivation.
    pub index: usize,
    pub spec: OptimizerSpec,
    pub batch: BatchStrategy,
}

impl Cell {
    pub fn run_id(&self, n_train: usize) -> Result<RunId> {
        Ok(RunId::new(&self.spec, self.batch.resolve(n_train)?))
    }
}

/// Stable key `optimizer[-variant]/lr=<lr>[/mom=<μ>]/b=<B>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RunId(String);

impl RunId {
    pub fn new(spec: &OptimizerSpec, batch_size: usize) -> Self {
        let mut id = spec.kind.name().to_string();
        if spec.kind.uses_momentum() {
            id.push('-');
            id.push_str(spec.variant.name());
        }
        id.push_str(&format!("/lr={}", spec.lr));
        if spec.kind.uses_momentum() {
            id.push_str(&format!("/mom={}", spec.momentum));
        }
        id.push_str(&format!("/b={batch_size}"));
        RunId(id)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RunId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub id: RunId,
    pub cell: Cell,
    pub batch_size: usize,
    pub outcome: RunOutcome,
}

#[derive(Debug, Clone)]
pub struct GridResults {
    /// Sorted by run id.
    pub runs: Vec<CellResult>,
}

impl GridResults {
    pub fn get(&self, id: &str) -> Option<&CellResult> {
        self.runs
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.runs[i])
    }

    pub fn rows(&self) -> Vec<CsvRow> {
        self.runs
            .iter()
            .flat_map(|r| {
                let spec = r.cell.spec;
                let uses_momentum = spec.kind.uses_momentum();
                r.outcome.records.iter().map(move |rec| CsvRow {
                    run_id: r.id.to_string(),
                    optimizer: spec.kind,
                    variant: uses_momentum.then_some(spec.variant),
                    lr: spec.lr,
                    momentum: uses_momentum.then_some(spec.momentum),
                    batch_size: r.batch_size,
                    epoch: rec.epoch,
                    train_loss: rec.train_loss,
                    val_loss: rec.val_loss,
                    diverged: rec.diverged,
                })
            })
            .collect()
    }
}

fn derive_seed(base: u64, index: usize) -> u64 {
    let mut s = base ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    splitmix64(&mut s)
}

/// Runs every cell on a pool of `parallelism` worker threads. The result does
/// not depend on `parallelism`.
pub fn run_grid(grid: &Grid, d: &Dataset, s: &Split, parallelism: usize) -> Result<GridResults> {
    if parallelism == 0 {
        return Err(Error::invalid("parallelism must be >= 1"));
    }
    let cells = grid.cells();
    let n_train = s.train_len();

    let mut ids: Vec<RunId> = cells
        .iter()
        .map(|c| c.run_id(n_train))
        .collect::<Result<_>>()?;
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::invalid(format!(
            "grid yields duplicate run id {}",
            w[0]
        )));
    }

    let run_cell = |cell: &Cell| -> Result<CellResult> {
        let seeds = &grid.seeds;
        let init_seed = if seeds.init_per_cell {
            derive_seed(seeds.init_seed, cell.index)
        } else {
            seeds.init_seed
        };
        let own_split;
        let split = if seeds.split_per_cell {
            own_split = dataset::split(
                d,
                derive_seed(seeds.split_seed, cell.index),
                grid.train_fraction,
            )?;
            &own_split
        } else {
            s
        };
        let config = RunConfig {
            optimizer: cell.spec,
            loss: grid.loss,
            batch: cell.batch,
            epochs: grid.epochs,
            init_seed,
            batch_seed: seeds.batch_seed,
            divergence_threshold: grid.divergence_threshold,
        };
        let batch_size = cell.batch.resolve(split.train_len())?;
        Ok(CellResult {
            id: RunId::new(&cell.spec, batch_size),
            cell: *cell,
            batch_size,
            outcome: trainer::run(&config, d, split)?,
        })
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    let mut runs = pool.install(|| cells.par_iter().map(run_cell).collect::<Result<Vec<_>>>())?;
    runs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(GridResults { runs })
}
