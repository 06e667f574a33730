//! Metrics tables as CSV.
//!
//! Per-epoch columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | epoch | 1-based epoch index |
//! | lr | learning rate used during the epoch |
//! | train_loss | mean training loss over the epoch's batches |
//! | kd_part, cls_part | batch-mean of the two loss terms |
//! | train_acc, test_acc | end-of-epoch accuracy |
//! | mean_confidence | mean max-probability on the test split |
//! | sphere_confidence | same, on rescaled normalized logits (SKD only) |
//! | kd_loss_test .. radial_alignment | teacher-student diagnostics on the test split (students only) |
//!
//! Floats are written with Rust's shortest round-trip formatting; absent
//! values are empty cells.

use std::path::Path;

use skd_core::{EpochRow, RunRecord};

use crate::error::{CliError, Result};

pub const COLUMNS: [&str; 15] = [
    "epoch",
    "lr",
    "train_loss",
    "kd_part",
    "cls_part",
    "train_acc",
    "test_acc",
    "mean_confidence",
    "sphere_confidence",
    "kd_loss_test",
    "norm_mse",
    "normalized_mse",
    "confidence_gap",
    "agreement",
    "radial_alignment",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Table {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric view of a column; empty or unparsable cells become `None`.
    pub fn numbers(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let c = self.column(name)?;
        Some(self.rows.iter().map(|r| r[c].parse().ok()).collect())
    }

    pub fn from_record(record: &RunRecord) -> Table {
        let mut t = Table::new(COLUMNS);
        for row in &record.rows {
            t.push(epoch_cells(row));
        }
        t
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Table> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let header = rdr
            .headers()
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        let mut table = Table {
            header,
            rows: Vec::new(),
        };
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            table.rows.push(rec.iter().map(str::to_owned).collect());
        }
        Ok(table)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("cells are UTF-8")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| CliError::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    if let csv::ErrorKind::Io(_) = e.kind() {
        if let csv::ErrorKind::Io(io) = e.into_kind() {
            return CliError::io(path, io);
        }
        unreachable!()
    }
    CliError::csv(path, e)
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn epoch_cells(row: &EpochRow) -> Vec<String> {
    let d = row.diagnostics.as_ref();
    vec![
        row.epoch.to_string(),
        fmt_f64(row.lr),
        fmt_f64(row.train_loss),
        fmt_f64(row.kd_part),
        fmt_f64(row.cls_part),
        fmt_f64(row.train_acc),
        fmt_f64(row.test_acc),
        fmt_f64(row.mean_confidence),
        fmt_opt(row.sphere_confidence),
        fmt_opt(d.map(|d| d.kd_loss_on_test)),
        fmt_opt(d.map(|d| d.norm_mse)),
        fmt_opt(d.map(|d| d.normalized_mse)),
        fmt_opt(d.map(|d| d.confidence_gap)),
        fmt_opt(d.map(|d| d.agreement)),
        fmt_opt(d.map(|d| d.radial_alignment)),
    ]
}
