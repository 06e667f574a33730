//! Capacity and temperature sweeps. Every point reuses one dataset instance
//! and the seeds from the base config, so only the swept variable changes.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use skd_core::{Checkpoint, Dataset, Method, RunRecord};

use crate::chart::LineChart;
use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::run::{self, Manifest, RunOutput, TEACHER_CHECKPOINT};
use crate::table::{fmt_f64, Table};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const DEFAULT_WIDTHS: [usize; 5] = [16, 32, 64, 128, 256];
pub const DEFAULT_TAUS: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];
/// Methods compared by both sweeps.
pub const SWEEP_METHODS: [Method; 2] = [Method::Kd, Method::Skd];

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityRow {
    pub width: usize,
    pub method: Method,
    pub teacher_params: usize,
    pub teacher_train_acc: f64,
    pub teacher_test_acc: f64,
    pub student_train_acc: f64,
    pub student_test_acc: f64,
    pub kd_loss: f64,
    pub confidence_gap: f64,
    pub norm_mse: f64,
    pub normalized_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureRow {
    pub tau: f64,
    pub method: Method,
    pub student_test_acc: f64,
    pub kd_loss: f64,
    pub confidence_gap: f64,
    pub normalized_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureSummary {
    pub rows: Vec<TemperatureRow>,
    /// Population standard deviation of final test accuracy across τ, per method.
    pub accuracy_std: Vec<(Method, f64)>,
}

impl TemperatureSummary {
    pub fn std_of(&self, method: Method) -> Option<f64> {
        self.accuracy_std.iter().find(|(m, _)| *m == method).map(|(_, s)| *s)
    }
}

pub fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {jobs} workers: {e}")))
}

fn final_row(record: &RunRecord) -> Result<&skd_core::EpochRow> {
    record
        .last()
        .ok_or_else(|| CliError::Config("sweeps need sgd.epochs ≥ 1".into()))
}

fn population_std(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Trains one teacher per width (every hidden layer of the configured teacher
/// set to that width) and distills the configured student from each with KD
/// and SKD. Writes per-point run directories, `summary.csv`, and charts under
/// `out`.
pub fn sweep_capacity(
    cfg: &ExperimentConfig,
    data: &(Dataset, Dataset),
    widths: &[usize],
    jobs: usize,
    out: &Path,
) -> Result<Vec<CapacityRow>> {
    if widths.len() < 2 {
        return Err(CliError::Usage("capacity sweep needs at least 2 widths".into()));
    }
    if widths.contains(&0) {
        return Err(CliError::Usage("teacher widths must be at least 1".into()));
    }
    run::create_dir(out)?;
    let out = run::absolute(out)?;
    let depth = cfg.teacher.hidden.len().max(1);
    let pool = pool(jobs)?;

    let teachers: Vec<(usize, RunOutput)> = pool.install(|| {
        widths
            .par_iter()
            .map(|&w| {
                let mut c = cfg.clone();
                c.teacher.hidden = vec![w; depth];
                let t = run::teacher_run(&c, data, &out.join(format!("teacher-w{w}")))?;
                Ok((w, t))
            })
            .collect::<Result<_>>()
    })?;

    let points: Vec<(usize, Method)> = widths
        .iter()
        .flat_map(|&w| SWEEP_METHODS.iter().map(move |&m| (w, m)))
        .collect();
    let rows: Vec<CapacityRow> = pool.install(|| {
        points
            .par_iter()
            .map(|&(w, method)| {
                let (_, teacher) = teachers.iter().find(|(tw, _)| *tw == w).unwrap();
                let mut c = cfg.clone();
                c.teacher.hidden = vec![w; depth];
                c.loss.method = method;
                let dir = out.join(format!("{method}-w{w}"));
                let student = run::student_run(
                    &c,
                    data,
                    &teacher.checkpoint,
                    &teacher.dir.join(TEACHER_CHECKPOINT),
                    &dir,
                )?;
                capacity_row(w, method, teacher, &student.record)
            })
            .collect::<Result<_>>()
    })?;

    write_capacity_outputs(cfg, &rows, widths, &out)?;
    Ok(rows)
}

fn capacity_row(width: usize, method: Method, teacher: &RunOutput, student: &RunRecord) -> Result<CapacityRow> {
    let t = final_row(&teacher.record)?;
    let s = final_row(student)?;
    let d = s
        .diagnostics
        .as_ref()
        .expect("distilled runs always log teacher-student diagnostics");
    Ok(CapacityRow {
        width,
        method,
        teacher_params: teacher.checkpoint.model.param_count(),
        teacher_train_acc: t.train_acc,
        teacher_test_acc: t.test_acc,
        student_train_acc: s.train_acc,
        student_test_acc: s.test_acc,
        kd_loss: d.kd_loss_on_test,
        confidence_gap: d.confidence_gap,
        norm_mse: d.norm_mse,
        normalized_mse: d.normalized_mse,
    })
}

pub fn capacity_table(rows: &[CapacityRow]) -> Table {
    let mut t = Table::new([
        "width",
        "method",
        "teacher_params",
        "teacher_train_acc",
        "teacher_test_acc",
        "student_train_acc",
        "student_test_acc",
        "kd_loss",
        "confidence_gap",
        "norm_mse",
        "normalized_mse",
    ]);
    for r in rows {
        t.push(vec![
            r.width.to_string(),
            r.method.to_string(),
            r.teacher_params.to_string(),
            fmt_f64(r.teacher_train_acc),
            fmt_f64(r.teacher_test_acc),
            fmt_f64(r.student_train_acc),
            fmt_f64(r.student_test_acc),
            fmt_f64(r.kd_loss),
            fmt_f64(r.confidence_gap),
            fmt_f64(r.norm_mse),
            fmt_f64(r.normalized_mse),
        ]);
    }
    t
}

type RowGetter = fn(&CapacityRow) -> f64;

fn write_capacity_outputs(cfg: &ExperimentConfig, rows: &[CapacityRow], widths: &[usize], out: &Path) -> Result<()> {
    capacity_table(rows).write(out.join(SUMMARY_FILE))?;
    let metrics: [(&str, &str, RowGetter); 5] = [
        ("kd_loss", "final KD loss (test)", |r| r.kd_loss),
        ("confidence_gap", "confidence gap", |r| r.confidence_gap),
        ("norm_mse", "norm MSE", |r| r.norm_mse),
        ("normalized_mse", "normalized-logit MSE", |r| r.normalized_mse),
        ("student_test_acc", "student test accuracy", |r| r.student_test_acc),
    ];
    for (name, label, get) in metrics {
        let mut chart = LineChart::new(format!("{label} vs teacher width"), "teacher width", label).log_x(true);
        for m in SWEEP_METHODS {
            let pts = rows
                .iter()
                .filter(|r| r.method == m)
                .map(|r| (r.width as f64, get(r)))
                .collect();
            chart.add(m.to_string(), pts);
        }
        chart.write(out.join(format!("{name}_vs_width.svg")))?;
    }
    let mut manifest = Manifest::for_config("sweep-capacity", cfg);
    manifest.set(
        "teacher_widths",
        widths.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
    );
    manifest.set("student_hidden", format!("{:?}", cfg.student.hidden));
    manifest.write(out.join(run::MANIFEST_FILE))
}

/// Distills the configured student with KD and SKD at every τ from one
/// teacher. The teacher comes from `teacher` or is trained into `out/teacher`.
pub fn sweep_temperature(
    cfg: &ExperimentConfig,
    data: &(Dataset, Dataset),
    taus: &[f64],
    teacher: Option<(&Checkpoint, &Path)>,
    jobs: usize,
    out: &Path,
) -> Result<TemperatureSummary> {
    if taus.len() < 2 {
        return Err(CliError::Usage(
            "temperature sweep needs at least 2 temperatures".into(),
        ));
    }
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(CliError::Usage(format!("temperatures must be positive, got {t}")));
    }
    run::create_dir(out)?;
    let out = run::absolute(out)?;
    let pool = pool(jobs)?;

    let trained;
    let (teacher_ckpt, teacher_path): (&Checkpoint, PathBuf) = match teacher {
        Some((c, p)) => (c, p.to_owned()),
        None => {
            trained = run::teacher_run(cfg, data, &out.join("teacher"))?;
            (&trained.checkpoint, trained.dir.join(TEACHER_CHECKPOINT))
        }
    };

    let points: Vec<(f64, Method)> = SWEEP_METHODS
        .iter()
        .flat_map(|&m| taus.iter().map(move |&t| (t, m)))
        .collect();
    let rows: Vec<TemperatureRow> = pool.install(|| {
        points
            .par_iter()
            .map(|&(tau, method)| {
                let mut c = cfg.clone();
                c.loss.method = method;
                c.loss.tau = tau;
                let dir = out.join(format!("{method}-tau{tau}"));
                let s = run::student_run(&c, data, teacher_ckpt, &teacher_path, &dir)?;
                let last = final_row(&s.record)?;
                let d = last.diagnostics.as_ref().expect("distilled runs log diagnostics");
                Ok(TemperatureRow {
                    tau,
                    method,
                    student_test_acc: last.test_acc,
                    kd_loss: d.kd_loss_on_test,
                    confidence_gap: d.confidence_gap,
                    normalized_mse: d.normalized_mse,
                })
            })
            .collect::<Result<_>>()
    })?;

    let accuracy_std = SWEEP_METHODS
        .iter()
        .map(|&m| {
            let accs: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == m)
                .map(|r| r.student_test_acc)
                .collect();
            (m, population_std(&accs))
        })
        .collect();
    let summary = TemperatureSummary { rows, accuracy_std };

    temperature_table(&summary.rows).write(out.join(SUMMARY_FILE))?;
    let mut chart = LineChart::new("student accuracy vs temperature", "temperature τ", "test accuracy").log_x(true);
    for m in SWEEP_METHODS {
        let pts = summary
            .rows
            .iter()
            .filter(|r| r.method == m)
            .map(|r| (r.tau, r.student_test_acc))
            .collect();
        chart.add(m.to_string(), pts);
    }
    chart.write(out.join("accuracy_vs_tau.svg"))?;

    let mut manifest = Manifest::for_config("sweep-temperature", cfg);
    manifest.set("taus", taus.iter().map(|t| fmt_f64(*t)).collect::<Vec<_>>().join(","));
    manifest.set("teacher_checkpoint", teacher_path.display());
    for (m, s) in &summary.accuracy_std {
        manifest.set(&format!("{m}_accuracy_std"), fmt_f64(*s));
    }
    manifest.write(out.join(run::MANIFEST_FILE))?;
    Ok(summary)
}

pub fn temperature_table(rows: &[TemperatureRow]) -> Table {
    let mut t = Table::new([
        "tau",
        "method",
        "student_test_acc",
        "kd_loss",
        "confidence_gap",
        "normalized_mse",
    ]);
    for r in rows {
        t.push(vec![
            fmt_f64(r.tau),
            r.method.to_string(),
            fmt_f64(r.student_test_acc),
            fmt_f64(r.kd_loss),
            fmt_f64(r.confidence_gap),
            fmt_f64(r.normalized_mse),
        ]);
    }
    t
}
