//! `gradbench` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::{plot_curves, plot_rows, run_grid, write_csv, CsvRow, Grid, GridSeeds, GroupBy, RunId};
use crate::dataset::{self, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::{closed_form, gradient_check, model_loss, predict, LinearModel, LossKind};
use crate::numerics::Rng;
use crate::optimizers::{OptimizerKind, OptimizerSpec, Variant};
use crate::trainer::{self, sample_batch, BatchStrategy, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_GRADCHECK_FAILED: i32 = 3;

pub const RESULTS_FILE: &str = "results.csv";

#[derive(Debug, Parser)]
#[command(
    name = "gradbench",
    version,
    about = "Gradient-based optimizers on least-squares problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic dataset as CSV plus a JSON sidecar.
    Generate(GenerateArgs),
    /// Train a single configuration and print its loss curve.
    Run(RunArgs),
    /// Run the full experiment grid, write results.csv and charts.
    Grid(GridArgs),
    /// Render charts from a results CSV.
    Plot(PlotArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Fit the closed-form least-squares solution and report its losses.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Dataset generation seed.
    #[arg(long, default_value_t = dataset::DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = dataset::DEFAULT_ROWS)]
    n: usize,
    #[arg(long, default_value_t = dataset::DEFAULT_FEATURES)]
    p: usize,
    #[arg(long, default_value_t = dataset::DEFAULT_NOISE_SCALE)]
    noise: f64,
}

impl DataArgs {
    fn dataset(&self) -> Result<Dataset> {
        dataset::generate(self.seed, self.n, self.p, self.noise)
    }
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Train/validation shuffle seed.
    #[arg(long, default_value_t = dataset::DEFAULT_SEED)]
    split_seed: u64,
    #[arg(long, default_value_t = dataset::DEFAULT_TRAIN_FRACTION)]
    train_fraction: f64,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// CSV destination; the sidecar is written next to it with a .json extension.
    #[arg(long, default_value = "dataset.csv")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OptArg {
    Sgd,
    Momentum,
    Nag,
    Adagrad,
    Rmsprop,
    Adadelta,
    Adam,
}

impl From<OptArg> for OptimizerKind {
    fn from(o: OptArg) -> Self {
        match o {
            OptArg::Sgd => OptimizerKind::Sgd,
            OptArg::Momentum => OptimizerKind::Momentum,
            OptArg::Nag => OptimizerKind::Nag,
            OptArg::Adagrad => OptimizerKind::Adagrad,
            OptArg::Rmsprop => OptimizerKind::RmsProp,
            OptArg::Adadelta => OptimizerKind::Adadelta,
            OptArg::Adam => OptimizerKind::Adam,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Classic,
    Decoupled,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Classic => Variant::Classic,
            VariantArg::Decoupled => Variant::Decoupled,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    Mse,
    Mae,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Mse => LossKind::Mse,
            LossArg::Mae => LossKind::Mae,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GroupByArg {
    Optimizer,
    OptimizerBatch,
}

impl From<GroupByArg> for GroupBy {
    fn from(g: GroupByArg) -> Self {
        match g {
            GroupByArg::Optimizer => GroupBy::Optimizer,
            GroupByArg::OptimizerBatch => GroupBy::OptimizerAndBatch,
        }
    }
}

fn parse_batch(s: &str) -> std::result::Result<BatchStrategy, String> {
    if s.eq_ignore_ascii_case("full") {
        return Ok(BatchStrategy::Full);
    }
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!(
            "expected a positive batch size or 'full', got '{s}'"
        )),
        Ok(b) => Ok(BatchStrategy::Size(b)),
    }
}

#[derive(Debug, Args)]
struct OptimizerArgs {
    #[arg(long, value_enum, default_value = "sgd")]
    opt: OptArg,
    /// Momentum/NAG formulation.
    #[arg(long, value_enum, default_value = "decoupled")]
    variant: VariantArg,
    /// Learning rate (defaults depend on the optimizer).
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Squared-gradient running-average decay (RMSProp, Adadelta).
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
}

impl OptimizerArgs {
    fn spec(&self) -> OptimizerSpec {
        let mut spec = OptimizerSpec::new(self.opt.into()).with_variant(self.variant.into());
        if let Some(lr) = self.lr {
            spec.lr = lr;
        }
        if let Some(m) = self.momentum {
            spec.momentum = m;
        }
        if let Some(d) = self.decay {
            spec.decay = d;
        }
        if let Some(b) = self.beta1 {
            spec.beta1 = b;
        }
        if let Some(b) = self.beta2 {
            spec.beta2 = b;
        }
        if let Some(e) = self.eps {
            spec.eps = e;
        }
        spec
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    optimizer: OptimizerArgs,
    /// Batch size, or `full`.
    #[arg(long, default_value = "32", value_parser = parse_batch)]
    batch: BatchStrategy,
    #[arg(long, value_enum, default_value = "mse")]
    loss: LossArg,
    #[arg(long, default_value_t = trainer::DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = dataset::DEFAULT_SEED)]
    init_seed: u64,
    #[arg(long, default_value_t = dataset::DEFAULT_SEED)]
    batch_seed: u64,
    #[arg(long, default_value_t = trainer::DEFAULT_DIVERGENCE_THRESHOLD)]
    threshold: f64,
    /// Also write the run in results-CSV format.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = trainer::DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Output directory for results.csv and charts.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Momentum/NAG formulation used across the grid.
    #[arg(long, value_enum, default_value = "decoupled")]
    variant: VariantArg,
    #[arg(long, default_value_t = dataset::DEFAULT_SEED)]
    init_seed: u64,
    #[arg(long, default_value_t = dataset::DEFAULT_SEED)]
    batch_seed: u64,
    /// Give every cell its own derived init seed.
    #[arg(long)]
    vary_init: bool,
    /// Re-draw the train/validation split for every cell.
    #[arg(long)]
    resplit_per_cell: bool,
    #[arg(long, value_enum, default_value = "optimizer")]
    group_by: GroupByArg,
    /// Skip chart generation.
    #[arg(long)]
    no_plot: bool,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Results CSV produced by `grid` or `run --out`.
    #[arg(long)]
    csv: PathBuf,
    #[arg(long, default_value = "charts")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "optimizer")]
    group_by: GroupByArg,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "mse")]
    loss: LossArg,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-6)]
    h: f64,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Number of random (model, batch) points.
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value = "32", value_parser = parse_batch)]
    batch: BatchStrategy,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    split: SplitArgs,
}

/// Runs the CLI on `args` (program name first); returns the exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(rendered.as_bytes())
            } else {
                out.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        Command::Generate(a) => generate(a, out),
        Command::Run(a) => run(a, out),
        Command::Grid(a) => grid(a, out),
        Command::Plot(a) => {
            let files = plot_curves(&a.csv, &a.out, a.group_by.into())?;
            for f in files {
                say(out, format_args!("{}", f.display()))?;
            }
            Ok(EXIT_OK)
        }
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::Oracle(a) => oracle(a, out),
    }
}

fn say(out: &mut dyn Write, args: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{args}").map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn generate(a: GenerateArgs, out: &mut dyn Write) -> Result<i32> {
    let d = a.data.dataset()?;
    let mut csv = (1..=d.features())
        .map(|j| format!("x{j}"))
        .chain(std::iter::once("y".to_string()))
        .collect::<Vec<_>>()
        .join(",");
    csv.push('\n');
    for i in 0..d.rows() {
        for v in d.x_norm.row(i) {
            csv.push_str(&format!("{v:.16e},"));
        }
        csv.push_str(&format!("{:.16e}\n", d.y[i]));
    }
    write_file(&a.out, &csv)?;
    let sidecar = a.out.with_extension("json");
    write_file(&sidecar, &serde_json::to_string_pretty(&d.meta())?)?;
    say(
        out,
        format_args!("{}\n{}", a.out.display(), sidecar.display()),
    )?;
    Ok(EXIT_OK)
}

fn data_and_split(data: &DataArgs, split: &SplitArgs) -> Result<(Dataset, Split)> {
    let d = data.dataset()?;
    let s = dataset::split(&d, split.split_seed, split.train_fraction)?;
    Ok((d, s))
}

fn run(a: RunArgs, out: &mut dyn Write) -> Result<i32> {
    let (d, s) = data_and_split(&a.data, &a.split)?;
    let spec = a.optimizer.spec();
    let config = RunConfig {
        optimizer: spec,
        loss: a.loss.into(),
        batch: a.batch,
        epochs: a.epochs,
        init_seed: a.init_seed,
        batch_seed: a.batch_seed,
        divergence_threshold: a.threshold,
    };
    let outcome = trainer::run(&config, &d, &s)?;

    say(out, format_args!("epoch,train_loss,val_loss,diverged"))?;
    for r in &outcome.records {
        say(
            out,
            format_args!(
                "{},{:.16e},{:.16e},{}",
                r.epoch, r.train_loss, r.val_loss, r.diverged
            ),
        )?;
    }

    if let Some(path) = &a.out {
        let batch_size = a.batch.resolve(s.train_len())?;
        let id = RunId::new(&spec, batch_size);
        let uses_momentum = spec.kind.uses_momentum();
        let rows: Vec<CsvRow> = outcome
            .records
            .iter()
            .map(|r| CsvRow {
                run_id: id.to_string(),
                optimizer: spec.kind,
                variant: uses_momentum.then_some(spec.variant),
                lr: spec.lr,
                momentum: uses_momentum.then_some(spec.momentum),
                batch_size,
                epoch: r.epoch,
                train_loss: r.train_loss,
                val_loss: r.val_loss,
                diverged: r.diverged,
            })
            .collect();
        write_csv(&rows, path)?;
    }

    Ok(if outcome.diverged() {
        EXIT_DIVERGED
    } else {
        EXIT_OK
    })
}

fn grid(a: GridArgs, out: &mut dyn Write) -> Result<i32> {
    let (d, s) = data_and_split(&a.data, &a.split)?;
    let mut grid = Grid::with_variant(a.variant.into());
    grid.epochs = a.epochs;
    grid.train_fraction = a.split.train_fraction;
    grid.seeds = GridSeeds {
        init_seed: a.init_seed,
        batch_seed: a.batch_seed,
        split_seed: a.split.split_seed,
        init_per_cell: a.vary_init,
        split_per_cell: a.resplit_per_cell,
    };
    let results = run_grid(&grid, &d, &s, a.parallelism)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let csv_path = a.out.join(RESULTS_FILE);
    let rows = results.rows();
    write_csv(&rows, &csv_path)?;

    let diverged = results.runs.iter().filter(|r| r.outcome.diverged()).count();
    say(
        out,
        format_args!(
            "{} runs ({} diverged) -> {}",
            results.runs.len(),
            diverged,
            csv_path.display()
        ),
    )?;
    if !a.no_plot {
        let charts = plot_rows(&rows, &a.out, a.group_by.into())?;
        say(
            out,
            format_args!("{} charts -> {}", charts.len(), a.out.display()),
        )?;
    }
    Ok(EXIT_OK)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let d = a.data.dataset()?;
    let loss: LossKind = a.loss.into();
    let all: Vec<usize> = (0..d.rows()).collect();
    let mut rng = Rng::new(a.data.seed ^ 0x6772_6164_6368_6b00);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < a.points {
        let theta = (0..d.features()).map(|_| rng.normal()).collect::<Vec<_>>();
        let m = LinearModel::new(theta.into(), rng.normal());
        let rows = sample_batch(a.batch, &all, &mut rng)?;
        let (x, y) = d.subset(&rows)?;
        if loss == LossKind::Mae {
            // Stay clear of the |r| kink by a margin wider than the stencil.
            let pred = predict(&m, &x)?;
            let near_kink = pred
                .iter()
                .zip(y.iter())
                .any(|(p, t)| (p - t).abs() < 1e3 * a.h);
            if near_kink {
                continue;
            }
        }
        worst = worst.max(gradient_check(loss, &m, &x, &y, a.h)?);
        checked += 1;
    }
    say(
        out,
        format_args!(
            "max relative error: {worst:.3e} over {checked} points (tol {:e})",
            a.tol
        ),
    )?;
    Ok(if worst <= a.tol {
        EXIT_OK
    } else {
        EXIT_GRADCHECK_FAILED
    })
}

fn oracle(a: OracleArgs, out: &mut dyn Write) -> Result<i32> {
    let (d, s) = data_and_split(&a.data, &a.split)?;
    let (xt, yt) = d.subset(&s.train_indices)?;
    let (xv, yv) = d.subset(&s.val_indices)?;
    let m = closed_form(&xt, &yt)?;
    let train = model_loss(LossKind::Mse, &m, &xt, &yt)?;
    let val = model_loss(LossKind::Mse, &m, &xv, &yv)?;
    say(out, format_args!("val_mse {val:.16e}"))?;
    say(out, format_args!("train_mse {train:.16e}"))?;
    say(out, format_args!("theta {:?}", m.theta.as_slice()))?;
    say(out, format_args!("bias {:?}", m.bias))?;
    say(
        out,
        format_args!("true_theta {:?}", d.true_theta.as_slice()),
    )?;
    say(out, format_args!("true_bias {:?}", d.true_bias))?;
    Ok(EXIT_OK)
}
