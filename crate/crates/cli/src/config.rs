//! Experiment configuration in TOML.
//!
//! ```toml
//! output_dir = "runs"
//!
//! [dataset]
//! kind = "synthetic"          # or "idx"
//! num_classes = 10
//! dim = 32
//! samples_per_class = 500
//! cluster_std = 1.0
//! inter_class_margin = 4.0
//! seed = 7
//! test_samples_per_class = 200
//!
//! [teacher]
//! hidden = [256, 256]
//! seed = 1
//!
//! [student]
//! hidden = [8, 8]
//! seed = 2
//!
//! [loss]
//! method = "kd"               # ce | kd | kdstar | skd | normmse
//! tau = 4.0
//! lambda = 0.9
//! eps = 1e-12
//!
//! [sgd]
//! lr = 0.05
//! momentum = 0.9
//! weight_decay = 0.0005
//! epochs = 60
//! batch_size = 64
//! seed = 3
//! schedule = [{ epoch = 30, multiplier = 0.1 }, { epoch = 45, multiplier = 0.1 }]
//!
//! [distill]                   # optional
//! teacher_checkpoint = "runs/teacher/teacher.ckpt"
//! ```
//!
//! An IDX dataset section instead carries `train_images`, `train_labels`,
//! `test_images`, `test_labels` and an optional `num_classes`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use skd_core::data::{gen_synthetic, gen_synthetic_test};
use skd_core::idx::load_idx;
use skd_core::{Dataset, LossConfig, Method, MlpConfig, SgdConfig, SyntheticSpec, NORM_EPS};

use crate::error::{CliError, Result};

pub const DEFAULT_CONFIG: &str = include_str!("../configs/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub teacher: ModelSection,
    pub student: ModelSection,
    pub loss: LossSection,
    pub sgd: SgdSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distill: Option<DistillSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetConfig {
    Synthetic {
        num_classes: usize,
        dim: usize,
        samples_per_class: usize,
        cluster_std: f64,
        inter_class_margin: f64,
        seed: u64,
        test_samples_per_class: usize,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        num_classes: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    #[serde(with = "method_name")]
    pub method: Method,
    pub tau: f64,
    pub lambda: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    NORM_EPS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub schedule: Vec<Step>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub epoch: usize,
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    pub teacher_checkpoint: PathBuf,
}

mod method_name {
    use serde::{Deserialize, Deserializer, Serializer};
    use skd_core::Method;

    pub fn serialize<S: Serializer>(m: &Method, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(m.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Method, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::parse(DEFAULT_CONFIG).expect("bundled default config parses")
    }
}

impl ExperimentConfig {
    /// Parses and validates. Errors carry the line/column or the offending
    /// section from the TOML parser.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        ExperimentConfig::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|e| CliError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if let DatasetConfig::Synthetic {
            test_samples_per_class, ..
        } = &self.dataset
        {
            if *test_samples_per_class == 0 {
                return Err(CliError::Config(
                    "dataset.test_samples_per_class must be at least 1".into(),
                ));
            }
            self.synthetic_spec().unwrap().validate()?;
        }
        for (name, section) in [("teacher", &self.teacher), ("student", &self.student)] {
            if section.hidden.contains(&0) {
                return Err(CliError::Config(format!("{name}.hidden widths must be at least 1")));
            }
        }
        let l = &self.loss;
        if !(l.tau > 0.0 && l.tau.is_finite()) {
            return Err(CliError::Config(format!("loss.tau must be positive, got {}", l.tau)));
        }
        if !(0.0..=1.0).contains(&l.lambda) {
            return Err(CliError::Config(format!(
                "loss.lambda must lie in [0, 1], got {}",
                l.lambda
            )));
        }
        if l.eps.is_nan() || l.eps <= 0.0 {
            return Err(CliError::Config(format!("loss.eps must be positive, got {}", l.eps)));
        }
        self.sgd_config()
            .validate()
            .map_err(|e| CliError::Config(format!("sgd: {e}")))
    }

    pub fn synthetic_spec(&self) -> Option<SyntheticSpec> {
        match &self.dataset {
            DatasetConfig::Synthetic {
                num_classes,
                dim,
                samples_per_class,
                cluster_std,
                inter_class_margin,
                seed,
                ..
            } => Some(SyntheticSpec {
                num_classes: *num_classes,
                dim: *dim,
                samples_per_class: *samples_per_class,
                cluster_std: *cluster_std,
                inter_class_margin: *inter_class_margin,
                seed: *seed,
            }),
            DatasetConfig::Idx { .. } => None,
        }
    }

    /// Train and test splits. Synthetic test data comes from a derived seed
    /// and shares the training class centers.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        match &self.dataset {
            DatasetConfig::Synthetic {
                test_samples_per_class, ..
            } => {
                let spec = self.synthetic_spec().unwrap();
                Ok((
                    gen_synthetic(&spec)?,
                    gen_synthetic_test(&spec, *test_samples_per_class)?,
                ))
            }
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                num_classes,
            } => {
                let train = load_idx(train_images, train_labels, *num_classes)?;
                let classes = num_classes.unwrap_or(train.num_classes);
                let test = load_idx(test_images, test_labels, Some(classes))?;
                Ok((train, test))
            }
        }
    }

    pub fn teacher_config(&self, data: &Dataset) -> MlpConfig {
        model_config(&self.teacher, data)
    }

    pub fn student_config(&self, data: &Dataset) -> MlpConfig {
        model_config(&self.student, data)
    }

    /// `l_avg` is filled from the teacher checkpoint at distillation time.
    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            method: self.loss.method,
            tau: self.loss.tau,
            lambda: self.loss.lambda,
            l_avg: None,
            eps: self.loss.eps,
        }
    }

    pub fn sgd_config(&self) -> SgdConfig {
        let s = &self.sgd;
        SgdConfig {
            lr: s.lr,
            momentum: s.momentum,
            weight_decay: s.weight_decay,
            epochs: s.epochs,
            batch_size: s.batch_size,
            schedule: s.schedule.iter().map(|st| (st.epoch, st.multiplier)).collect(),
            seed: s.seed,
        }
    }

    /// Every seed that influences a run, by name.
    pub fn seeds(&self) -> Vec<(&'static str, u64)> {
        let mut seeds = Vec::new();
        if let DatasetConfig::Synthetic { seed, .. } = &self.dataset {
            seeds.push(("dataset_seed", *seed));
        }
        seeds.push(("teacher_seed", self.teacher.seed));
        seeds.push(("student_seed", self.student.seed));
        seeds.push(("sgd_seed", self.sgd.seed));
        seeds
    }
}

fn model_config(section: &ModelSection, data: &Dataset) -> MlpConfig {
    MlpConfig {
        input_dim: data.dim(),
        hidden: section.hidden.clone(),
        num_classes: data.num_classes,
        seed: section.seed,
    }
}

impl SgdSection {
    /// Step decays of ×0.1 at 50% and 75% of `epochs`.
    pub fn with_epochs(epochs: usize) -> SgdSection {
        let base = SgdConfig::with_epochs(epochs);
        SgdSection {
            lr: base.lr,
            momentum: base.momentum,
            weight_decay: base.weight_decay,
            epochs,
            batch_size: base.batch_size,
            seed: base.seed,
            schedule: base
                .schedule
                .iter()
                .map(|&(epoch, multiplier)| Step { epoch, multiplier })
                .collect(),
        }
    }
}
