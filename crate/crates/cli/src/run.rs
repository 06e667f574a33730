//! Run directories: config snapshot, checkpoint, metrics table, manifest.

use std::path::{Path, PathBuf};

use skd_core::rng::ALGORITHM;
use skd_core::training::{distill_student, train_teacher};
use skd_core::{Checkpoint, Dataset, RunRecord};

use crate::config::{DistillSection, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::table::{fmt_f64, Table};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TEACHER_CHECKPOINT: &str = "teacher.ckpt";
pub const STUDENT_CHECKPOINT: &str = "student.ckpt";

pub const L_AVG_POLICY: &str = "mean teacher logit norm over the training split after the final epoch";
pub const EPOCH_SEED_RULE: &str = "derive_seed(sgd_seed, epoch)";

/// Ordered `key=value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn for_config(command: &str, cfg: &ExperimentConfig) -> Manifest {
        let mut m = Manifest::default();
        m.set("tool", "skd");
        m.set("version", env!("CARGO_PKG_VERSION"));
        m.set("command", command);
        m.set("rng", ALGORITHM);
        for (name, seed) in cfg.seeds() {
            m.set(name, seed);
        }
        m.set("epoch_seed_rule", EPOCH_SEED_RULE);
        m.set("l_avg_policy", L_AVG_POLICY);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_owned(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Manifest {
        let mut m = Manifest::default();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                m.set(k, v);
            }
        }
        m
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Manifest> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(Manifest::parse(&text))
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub checkpoint: Checkpoint,
    pub record: RunRecord,
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Trains the configured teacher and writes its run directory.
pub fn teacher_run(cfg: &ExperimentConfig, data: &(Dataset, Dataset), dir: &Path) -> Result<RunOutput> {
    create_dir(dir)?;
    let (train, test) = data;
    cfg.save(dir.join(CONFIG_FILE))?;
    let (checkpoint, record) = train_teacher(cfg.teacher_config(train), train, test, &cfg.sgd_config())?;
    checkpoint.save(dir.join(TEACHER_CHECKPOINT))?;
    Table::from_record(&record).write(dir.join(METRICS_FILE))?;

    let mut manifest = Manifest::for_config("train-teacher", cfg);
    manifest.set("teacher_params", checkpoint.model.param_count());
    if let Some(l) = checkpoint.l_avg {
        manifest.set("l_avg", fmt_f64(l));
    }
    manifest.write(dir.join(MANIFEST_FILE))?;
    Ok(RunOutput {
        dir: dir.to_owned(),
        checkpoint,
        record,
    })
}

/// Distills the configured student from `teacher`. The snapshot records
/// `teacher_path` so the run can be re-executed from it alone.
pub fn student_run(
    cfg: &ExperimentConfig,
    data: &(Dataset, Dataset),
    teacher: &Checkpoint,
    teacher_path: &Path,
    dir: &Path,
) -> Result<RunOutput> {
    create_dir(dir)?;
    let (train, test) = data;
    let mut cfg = cfg.clone();
    cfg.distill = Some(DistillSection {
        teacher_checkpoint: absolute(teacher_path)?,
    });
    cfg.save(dir.join(CONFIG_FILE))?;
    let (checkpoint, record) = distill_student(
        cfg.student_config(train),
        teacher,
        train,
        test,
        &cfg.loss_config(),
        &cfg.sgd_config(),
    )?;
    checkpoint.save(dir.join(STUDENT_CHECKPOINT))?;
    Table::from_record(&record).write(dir.join(METRICS_FILE))?;

    let mut manifest = Manifest::for_config("distill", &cfg);
    manifest.set("method", cfg.loss.method);
    manifest.set("tau", fmt_f64(cfg.loss.tau));
    manifest.set("lambda", fmt_f64(cfg.loss.lambda));
    manifest.set("teacher_checkpoint", teacher_path.display());
    manifest.set("teacher_params", teacher.model.param_count());
    manifest.set("student_params", checkpoint.model.param_count());
    if let Some(l) = teacher.l_avg {
        manifest.set("l_avg", fmt_f64(l));
    }
    manifest.write(dir.join(MANIFEST_FILE))?;
    Ok(RunOutput {
        dir: dir.to_owned(),
        checkpoint,
        record,
    })
}

/// `teacher_checkpoint` from the config, loaded.
pub fn load_teacher(cfg: &ExperimentConfig) -> Result<(Checkpoint, PathBuf)> {
    let path = cfg
        .distill
        .as_ref()
        .map(|d| d.teacher_checkpoint.clone())
        .ok_or_else(|| {
            CliError::Usage("distill needs --teacher or [distill] teacher_checkpoint in the config".into())
        })?;
    let ckpt = Checkpoint::load(&path)?;
    Ok((ckpt, path))
}

pub fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| CliError::io(path, e))
}
