//! Merging metrics tables from several runs and charting them.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::chart::LineChart;
use crate::error::{CliError, Result};
use crate::run;
use crate::sweep::SUMMARY_FILE;
use crate::table::Table;

pub const REPORT_FILE: &str = "report.csv";
pub const RUN_ID: &str = "run_id";

/// Columns charted when present: the first column is the x axis.
const CHART_COLUMNS: [&str; 10] = [
    "train_loss",
    "test_acc",
    "mean_confidence",
    "kd_loss_test",
    "confidence_gap",
    "normalized_mse",
    "norm_mse",
    "student_test_acc",
    "kd_loss",
    "teacher_test_acc",
];

#[derive(Debug)]
pub struct Report {
    pub table: Table,
    pub charts: Vec<PathBuf>,
}

/// Resolves a run argument to a table: a CSV file, a run directory's
/// `metrics.csv`, or a sweep directory's `summary.csv`.
pub fn table_path(arg: &Path) -> PathBuf {
    if arg.is_dir() {
        let metrics = arg.join(run::METRICS_FILE);
        if metrics.exists() {
            return metrics;
        }
        return arg.join(SUMMARY_FILE);
    }
    arg.to_owned()
}

fn run_ids(args: &[PathBuf]) -> Vec<String> {
    let names: Vec<String> = args
        .iter()
        .map(|p| {
            let p = if p.is_dir() {
                p.as_path()
            } else {
                p.parent().unwrap_or(p)
            };
            p.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string())
        })
        .collect();
    let unique: BTreeSet<&String> = names.iter().collect();
    if unique.len() == names.len() {
        names
    } else {
        names.iter().enumerate().map(|(i, n)| format!("{i}:{n}")).collect()
    }
}

/// One input is echoed unchanged; several identical schemas are stacked
/// under a leading `run_id` column.
pub fn merge(tables: &[(String, Table)]) -> Result<Table> {
    let Some((_, first)) = tables.first() else {
        return Err(CliError::Usage("report needs at least one run".into()));
    };
    if tables.len() == 1 {
        return Ok(first.clone());
    }
    let mut offending = BTreeSet::new();
    for (_, t) in &tables[1..] {
        if t.header != first.header {
            let a: BTreeSet<&String> = first.header.iter().collect();
            let b: BTreeSet<&String> = t.header.iter().collect();
            let diff: Vec<&String> = a.symmetric_difference(&b).copied().collect();
            if diff.is_empty() {
                // Same names, different order.
                for (x, y) in first.header.iter().zip(&t.header) {
                    if x != y {
                        offending.insert(x.clone());
                        offending.insert(y.clone());
                    }
                }
            } else {
                offending.extend(diff.into_iter().cloned());
            }
        }
    }
    if !offending.is_empty() {
        return Err(CliError::Schema {
            columns: offending.into_iter().collect(),
        });
    }
    let mut merged = Table::new(std::iter::once(RUN_ID.to_owned()).chain(first.header.iter().cloned()));
    for (id, t) in tables {
        for row in &t.rows {
            merged.push(std::iter::once(id.clone()).chain(row.iter().cloned()).collect());
        }
    }
    Ok(merged)
}

/// Line charts of every known metric column against the table's first data
/// column (epoch, width, or τ). Series are keyed by run id and method.
pub fn charts(table: &Table) -> Vec<(String, LineChart)> {
    let offset = usize::from(table.column(RUN_ID) == Some(0));
    let Some(x_name) = table.header.get(offset).cloned() else {
        return Vec::new();
    };
    let Some(xs) = table.numbers(&x_name) else {
        return Vec::new();
    };
    let method = table.column("method");
    let series_key = |i: usize| {
        let mut key = Vec::new();
        if offset == 1 {
            key.push(table.rows[i][0].clone());
        }
        if let Some(c) = method {
            key.push(table.rows[i][c].clone());
        }
        if key.is_empty() {
            "run".to_owned()
        } else {
            key.join(" ")
        }
    };
    let log_x = x_name == "width" || x_name == "tau";
    let mut out = Vec::new();
    for name in CHART_COLUMNS {
        let Some(ys) = table.numbers(name) else { continue };
        if ys.iter().all(Option::is_none) {
            continue;
        }
        let mut chart = LineChart::new(format!("{name} vs {x_name}"), x_name.clone(), name).log_x(log_x);
        let mut keys: Vec<String> = Vec::new();
        for i in 0..table.rows.len() {
            let k = series_key(i);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        for k in keys {
            let pts = (0..table.rows.len())
                .filter(|&i| series_key(i) == k)
                .filter_map(|i| Some((xs[i]?, ys[i]?)))
                .collect();
            chart.add(k, pts);
        }
        out.push((format!("{name}_vs_{x_name}.svg"), chart));
    }
    out
}

pub fn report(args: &[PathBuf], out: &Path) -> Result<Report> {
    let ids = run_ids(args);
    let tables = args
        .iter()
        .zip(ids)
        .map(|(a, id)| Ok((id, Table::read(table_path(a))?)))
        .collect::<Result<Vec<_>>>()?;
    let table = merge(&tables)?;
    run::create_dir(out)?;
    table.write(out.join(REPORT_FILE))?;
    let mut written = Vec::new();
    for (file, chart) in charts(&table) {
        let path = out.join(file);
        chart.write(&path)?;
        written.push(path);
    }
    Ok(Report { table, charts: written })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(header: &[&str], rows: &[&[&str]]) -> Table {
        let mut t = Table::new(header.iter().copied());
        for r in rows {
            t.push(r.iter().map(|s| s.to_string()).collect());
        }
        t
    }

    #[test]
    fn single_table_echoed() {
        let a = t(&["epoch", "test_acc"], &[&["1", "0.5"]]);
        assert_eq!(merge(&[("a".into(), a.clone())]).unwrap(), a);
    }

    #[test]
    fn stacked_with_run_id() {
        let a = t(&["epoch", "test_acc"], &[&["1", "0.5"]]);
        let b = t(&["epoch", "test_acc"], &[&["1", "0.6"], &["2", "0.7"]]);
        let m = merge(&[("a".into(), a), ("b".into(), b)]).unwrap();
        assert_eq!(m.header, ["run_id", "epoch", "test_acc"]);
        assert_eq!(m.rows.len(), 3);
        assert_eq!(m.rows[2], ["b", "2", "0.7"]);
        let c = charts(&m);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].1.series.len(), 2);
    }

    #[test]
    fn schema_mismatch_names_columns() {
        let a = t(&["epoch", "test_acc", "lr"], &[]);
        let b = t(&["epoch", "train_acc", "lr"], &[]);
        let err = merge(&[("a".into(), a.clone()), ("b".into(), b)]).unwrap_err();
        match err {
            CliError::Schema { columns } => assert_eq!(columns, ["test_acc", "train_acc"]),
            e => panic!("{e}"),
        }
        let c = t(&["lr", "test_acc", "epoch"], &[]);
        let err = merge(&[("a".into(), a), ("c".into(), c)]).unwrap_err();
        assert!(err.to_string().contains("epoch"));
    }

    #[test]
    fn duplicate_names_get_indices() {
        let ids = run_ids(&["x/run/metrics.csv".into(), "y/run/metrics.csv".into()]);
        assert_eq!(ids, ["0:run", "1:run"]);
    }
}
