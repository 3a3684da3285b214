//! Validation-MSE curves as SVG charts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use super::results::{read_csv, CsvRow};
use crate::error::{Error, Result};
use crate::optimizers::OptimizerKind;

pub const CONSTANT_LR_CHART: &str = "constant_lr.svg";
pub const ADAPTIVE_LR_CHART: &str = "adaptive_lr.svg";
pub const ADAM_VS_NESTEROV_CHART: &str = "adam_vs_nesterov.svg";

const SIZE: (u32, u32) = (1100, 720);
/// Upper clamp for the loss axis so exploding runs do not flatten the chart.
const Y_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupBy {
    /// `<optimizer>.svg`, one curve per (lr, momentum, batch) cell.
    #[default]
    Optimizer,
    /// `<optimizer>_b<B>.svg`, one chart per optimizer and batch size.
    OptimizerAndBatch,
}

struct Curve {
    label: String,
    optimizer: OptimizerKind,
    points: Vec<(f64, f64)>,
    diverged: bool,
    /// Epoch at which the run stopped.
    last_epoch: f64,
}

fn curves(rows: &[CsvRow]) -> Vec<Curve> {
    let mut by_run: BTreeMap<&str, Vec<&CsvRow>> = BTreeMap::new();
    for r in rows {
        by_run.entry(r.run_id.as_str()).or_default().push(r);
    }
    by_run
        .into_iter()
        .map(|(id, mut rs)| {
            rs.sort_by_key(|r| r.epoch);
            let points = rs
                .iter()
                .take_while(|r| r.val_loss.is_finite())
                .filter(|r| r.val_loss > 0.0)
                .map(|r| (r.epoch as f64, r.val_loss.min(Y_CAP)))
                .collect();
            let diverged = rs.iter().any(|r| r.diverged);
            let label = if diverged {
                format!("{id} (diverged)")
            } else {
                id.to_string()
            };
            Curve {
                label,
                optimizer: rs[0].optimizer,
                points,
                diverged,
                last_epoch: rs.last().map_or(0.0, |r| r.epoch as f64),
            }
        })
        .collect()
}

fn plot_err<E: std::fmt::Debug>(e: E) -> Error {
    Error::Plot(format!("{e:?}"))
}

/// How series get colors: one per curve, or one per optimizer.
#[derive(Clone, Copy)]
enum ColorMode {
    PerCurve,
    PerOptimizer,
}

/// File name, title and membership test of a multi-optimizer chart.
type FamilyChart = (&'static str, &'static str, fn(OptimizerKind) -> bool);

fn color_for(i: usize) -> RGBColor {
    let c = Palette99::pick(i).to_rgba();
    RGBColor(c.0, c.1, c.2)
}

fn draw_chart(path: &Path, title: &str, curves: &[&Curve], palette: ColorMode) -> Result<()> {
    let finite: Vec<f64> = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.1))
        .collect();
    let (mut y_lo, mut y_hi) = finite.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    });
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (1.0, 10.0);
    }
    if y_hi <= y_lo {
        y_hi = y_lo * 10.0;
    }
    let (y_lo, y_hi) = (y_lo / 1.5, y_hi * 1.5);
    let x_hi = curves.iter().map(|c| c.last_epoch).fold(1.0f64, f64::max);

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(80)
        .build_cartesian_2d(0.0..x_hi, (y_lo..y_hi).log_scale())
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("Epoch")
        .y_desc("Validation MSE")
        .y_label_formatter(&|v| format!("{v:.0e}"))
        .draw()
        .map_err(plot_err)?;

    let mut optimizer_colors: BTreeMap<OptimizerKind, usize> = BTreeMap::new();
    for (i, curve) in curves.iter().enumerate() {
        let (color, legend) = match palette {
            ColorMode::PerCurve => (color_for(i), Some(curve.label.clone())),
            ColorMode::PerOptimizer => {
                let next = optimizer_colors.len();
                let mut first = false;
                let idx = *optimizer_colors.entry(curve.optimizer).or_insert_with(|| {
                    first = true;
                    next
                });
                (
                    color_for(idx),
                    first.then(|| curve.optimizer.name().to_string()),
                )
            }
        };
        let series = chart
            .draw_series(LineSeries::new(
                curve.points.iter().copied(),
                color.stroke_width(1),
            ))
            .map_err(plot_err)?;
        if let Some(label) = legend {
            series.label(label).legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
            });
        }
        if curve.diverged {
            let at = curve
                .points
                .last()
                .copied()
                .unwrap_or((curve.last_epoch, y_hi / 1.5));
            chart
                .draw_series(std::iter::once(Cross::new(at, 6, color.stroke_width(2))))
                .map_err(plot_err)?;
        }
    }

    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::UpperRight)
        .label_font(("sans-serif", 11))
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Renders charts for already-loaded rows; returns the files written.
pub fn plot_rows(rows: &[CsvRow], out_dir: &Path, group_by: GroupBy) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let all = curves(rows);
    let mut written = Vec::new();

    let mut groups: BTreeMap<(OptimizerKind, Option<usize>), Vec<&Curve>> = BTreeMap::new();
    for (curve, row_batch) in all.iter().zip(batch_of_each(rows)) {
        let key = match group_by {
            GroupBy::Optimizer => (curve.optimizer, None),
            GroupBy::OptimizerAndBatch => (curve.optimizer, Some(row_batch)),
        };
        groups.entry(key).or_default().push(curve);
    }
    for ((kind, batch), group) in &groups {
        let (file, title) = match batch {
            None => (
                format!("{}.svg", kind.name()),
                format!("Validation MSE: {}", kind.name()),
            ),
            Some(b) => (
                format!("{}_b{b}.svg", kind.name()),
                format!("Validation MSE: {} (batch {b})", kind.name()),
            ),
        };
        let path = out_dir.join(file);
        draw_chart(&path, &title, group, ColorMode::PerCurve)?;
        written.push(path);
    }

    let present: Vec<OptimizerKind> = {
        let mut v: Vec<OptimizerKind> = all.iter().map(|c| c.optimizer).collect();
        v.dedup();
        v.sort();
        v.dedup();
        v
    };
    let family = |pred: &dyn Fn(OptimizerKind) -> bool| -> Vec<&Curve> {
        all.iter().filter(|c| pred(c.optimizer)).collect()
    };
    let combined: [FamilyChart; 3] = [
        (
            CONSTANT_LR_CHART,
            "Validation MSE across constant-LR optimizers",
            |k: OptimizerKind| k.is_constant_lr(),
        ),
        (
            ADAPTIVE_LR_CHART,
            "Validation MSE across adaptive-LR optimizers",
            |k: OptimizerKind| !k.is_constant_lr(),
        ),
        (
            ADAM_VS_NESTEROV_CHART,
            "Validation MSE: Adam vs Nesterov",
            |k: OptimizerKind| matches!(k, OptimizerKind::Adam | OptimizerKind::Nag),
        ),
    ];
    for (file, title, pred) in combined.iter() {
        let members = present.iter().filter(|&&k| pred(k)).count();
        // A family chart only adds information when it compares optimizers.
        if members >= 2 {
            let path = out_dir.join(file);
            draw_chart(&path, title, &family(pred), ColorMode::PerOptimizer)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Batch size of each run, in the same order as [`curves`].
fn batch_of_each(rows: &[CsvRow]) -> Vec<usize> {
    let mut by_run: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rows {
        by_run.entry(r.run_id.as_str()).or_insert(r.batch_size);
    }
    by_run.into_values().collect()
}

/// Reads a results CSV and renders its charts into `out_dir`.
pub fn plot_curves(csv_path: &Path, out_dir: &Path, group_by: GroupBy) -> Result<Vec<PathBuf>> {
    let rows = read_csv(csv_path)?;
    plot_rows(&rows, out_dir, group_by)
}
