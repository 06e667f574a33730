//! Subcommand bodies, callable without going through argument parsing.

use std::path::{Path, PathBuf};

use skd_core::{Checkpoint, Method};

use crate::config::{DistillSection, ExperimentConfig, DEFAULT_CONFIG};
use crate::error::{CliError, Result};
use crate::report::{self, Report};
use crate::run::{self, RunOutput};
use crate::sweep::{self, CapacityRow, TemperatureSummary};

pub fn init_config(path: &Path) -> Result<()> {
    if path.exists() {
        return Err(CliError::Usage(format!("{} already exists", path.display())));
    }
    std::fs::write(path, DEFAULT_CONFIG).map_err(|e| CliError::io(path, e))
}

pub fn train_teacher(config: &Path, out: Option<&Path>) -> Result<RunOutput> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = out
        .map(Path::to_owned)
        .unwrap_or_else(|| cfg.output_dir.join("teacher"));
    let data = cfg.load_data()?;
    run::teacher_run(&cfg, &data, &dir)
}

/// Flag overrides for `distill`; `None` keeps the config value.
#[derive(Debug, Clone, Default)]
pub struct DistillOverrides {
    pub method: Option<Method>,
    pub tau: Option<f64>,
    pub lambda: Option<f64>,
    pub teacher: Option<PathBuf>,
}

impl DistillOverrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(m) = self.method {
            cfg.loss.method = m;
        }
        if let Some(t) = self.tau {
            cfg.loss.tau = t;
        }
        if let Some(l) = self.lambda {
            cfg.loss.lambda = l;
        }
        if let Some(p) = &self.teacher {
            cfg.distill = Some(DistillSection {
                teacher_checkpoint: p.clone(),
            });
        }
        cfg.validate()
    }
}

pub fn distill(config: &Path, overrides: &DistillOverrides, out: Option<&Path>) -> Result<RunOutput> {
    let mut cfg = ExperimentConfig::load(config)?;
    overrides.apply(&mut cfg)?;
    let (teacher, teacher_path) = run::load_teacher(&cfg)?;
    if cfg.loss.method.needs_l_avg() && teacher.l_avg.is_none() {
        return Err(CliError::Usage(format!(
            "method {} requires the teacher's average logit norm (l_avg), but {} stores none",
            cfg.loss.method,
            teacher_path.display()
        )));
    }
    let dir = out
        .map(Path::to_owned)
        .unwrap_or_else(|| cfg.output_dir.join(format!("distill-{}", cfg.loss.method)));
    let data = cfg.load_data()?;
    run::student_run(&cfg, &data, &teacher, &teacher_path, &dir)
}

pub fn sweep_capacity(config: &Path, widths: &[usize], jobs: usize, out: Option<&Path>) -> Result<Vec<CapacityRow>> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = out
        .map(Path::to_owned)
        .unwrap_or_else(|| cfg.output_dir.join("capacity"));
    let data = cfg.load_data()?;
    sweep::sweep_capacity(&cfg, &data, widths, jobs, &dir)
}

pub fn sweep_temperature(
    config: &Path,
    taus: &[f64],
    teacher: Option<&Path>,
    jobs: usize,
    out: Option<&Path>,
) -> Result<TemperatureSummary> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = out
        .map(Path::to_owned)
        .unwrap_or_else(|| cfg.output_dir.join("temperature"));
    let data = cfg.load_data()?;
    let loaded = teacher.map(|p| Checkpoint::load(p).map(|c| (c, p))).transpose()?;
    sweep::sweep_temperature(&cfg, &data, taus, loaded.as_ref().map(|(c, p)| (c, *p)), jobs, &dir)
}

pub fn report(runs: &[PathBuf], out: &Path) -> Result<Report> {
    report::report(runs, out)
}
