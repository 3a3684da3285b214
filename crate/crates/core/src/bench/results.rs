use std::path::Path;

use crate::error::{Error, Result};
use crate::optimizers::{OptimizerKind, Variant};

pub const CSV_HEADER: [&str; 10] = [
    "run_id",
    "optimizer",
    "variant",
    "lr",
    "momentum",
    "batch_size",
    "epoch",
    "train_loss",
    "val_loss",
    "diverged",
];

/// One line of the results file. `variant` and `momentum` are empty for
/// optimizers without a velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub run_id: String,
    pub optimizer: OptimizerKind,
    pub variant: Option<Variant>,
    pub lr: f64,
    pub momentum: Option<f64>,
    pub batch_size: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub diverged: bool,
}

/// 17 significant digits, enough to round-trip any `f64`.
fn fmt_loss(v: f64) -> String {
    format!("{v:.16e}")
}

impl CsvRow {
    fn to_record(&self) -> [String; 10] {
        [
            self.run_id.clone(),
            self.optimizer.name().to_string(),
            self.variant
                .map(|v| v.name().to_string())
                .unwrap_or_default(),
            self.lr.to_string(),
            self.momentum.map(|m| m.to_string()).unwrap_or_default(),
            self.batch_size.to_string(),
            self.epoch.to_string(),
            fmt_loss(self.train_loss),
            fmt_loss(self.val_loss),
            self.diverged.to_string(),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> std::result::Result<Self, String> {
        if rec.len() != CSV_HEADER.len() {
            return Err(format!(
                "expected {} fields, found {}",
                CSV_HEADER.len(),
                rec.len()
            ));
        }
        fn num<T: std::str::FromStr>(field: &str, name: &str) -> std::result::Result<T, String> {
            field
                .parse()
                .map_err(|_| format!("bad {name} value '{field}'"))
        }
        let opt_field = |i: usize| Some(&rec[i]).filter(|s| !s.is_empty());
        Ok(CsvRow {
            run_id: rec[0].to_string(),
            optimizer: rec[1].parse().map_err(|e: Error| e.to_string())?,
            variant: opt_field(2)
                .map(|v| v.parse::<Variant>().map_err(|e| e.to_string()))
                .transpose()?,
            lr: num(&rec[3], "lr")?,
            momentum: opt_field(4).map(|m| num(m, "momentum")).transpose()?,
            batch_size: num(&rec[5], "batch_size")?,
            epoch: num(&rec[6], "epoch")?,
            train_loss: num(&rec[7], "train_loss")?,
            val_loss: num(&rec[8], "val_loss")?,
            diverged: num(&rec[9], "diverged")?,
        })
    }
}

/// Writes rows sorted by `(run_id, epoch)` under [`CSV_HEADER`].
pub fn write_csv(rows: &[CsvRow], path: &Path) -> Result<()> {
    let mut sorted: Vec<&CsvRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.run_id.cmp(&b.run_id).then(a.epoch.cmp(&b.epoch)));

    let to_err = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(to_err)?;
    w.write_record(CSV_HEADER).map_err(to_err)?;
    for row in sorted {
        w.write_record(row.to_record()).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => parse_err(1, format!("{other:?}")),
        })?;

    let header = r.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(parse_err(
            1,
            format!("unexpected header, want '{}'", CSV_HEADER.join(",")),
        ));
    }

    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push(CsvRow::from_record(&rec).map_err(|msg| parse_err(line, msg))?);
    }
    Ok(rows)
}
