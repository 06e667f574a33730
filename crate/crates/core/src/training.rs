//! SGD training of teachers and distillation of students.
//!
//! One run is single-threaded and fully determined by its seeds: the model
//! seed fixes the initialization and `SgdConfig::seed` fixes the per-epoch
//! batch permutations (`derive_seed(seed, epoch)`).

use crate::checkpoint::Checkpoint;
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig, LossValue, Method};
use crate::metrics::{self, argmax_agreement, gap_report};
use crate::model::{Mlp, MlpConfig};
use crate::rng::derive_seed;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// `(epoch, multiplier)` steps, applied from that epoch onward.
    pub schedule: Vec<(usize, f64)>,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig::with_epochs(60)
    }
}

impl SgdConfig {
    /// lr 0.05, momentum 0.9, weight decay 5e-4, batch 64, and two ×0.1
    /// decays at 50% and 75% of the run (merged when they coincide).
    pub fn with_epochs(epochs: usize) -> Self {
        let mut schedule: Vec<(usize, f64)> = Vec::new();
        for step in [epochs / 2, epochs * 3 / 4] {
            match schedule.last_mut() {
                Some(last) if last.0 == step => last.1 *= 0.1,
                _ => schedule.push((step, 0.1)),
            }
        }
        SgdConfig {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs,
            batch_size: 64,
            schedule,
            seed: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Parameter(format!(
                "weight_decay must be ≥ 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        if self.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Parameter(format!(
                "schedule epochs must be strictly increasing: {:?}",
                self.schedule
            )));
        }
        if self.schedule.iter().any(|&(_, m)| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Parameter(format!(
                "schedule multipliers must be positive: {:?}",
                self.schedule
            )));
        }
        Ok(())
    }

    /// Base lr times every multiplier whose step epoch is ≤ `epoch` (0-based).
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .filter(|(step, _)| *step <= epoch)
            .fold(self.lr, |lr, (_, m)| lr * m)
    }
}

/// Teacher-student diagnostics on the held-out split.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub kd_loss_on_test: f64,
    pub norm_mse: f64,
    pub normalized_mse: f64,
    pub confidence_gap: f64,
    pub agreement: f64,
    /// Worst per-row cosine between ∂L/∂f^S and f^S on the training set.
    pub radial_alignment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    /// 1-based; row `k` describes the weights after `k` epochs.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub kd_part: f64,
    pub cls_part: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub mean_confidence: f64,
    /// Confidence of the normalized, `l_avg`-rescaled logits (SKD students).
    pub sphere_confidence: Option<f64>,
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<EpochRow>,
}

impl RunRecord {
    pub fn last(&self) -> Option<&EpochRow> {
        self.rows.last()
    }
}

/// Heavy-ball momentum with coupled L2 decay:
/// `v ← μ·v + (g + wd·w)`, `w ← w − lr·v`.
#[derive(Debug)]
struct Sgd {
    velocity: Vec<Tensor>,
}

impl Sgd {
    fn new(model: &Mlp) -> Self {
        Sgd {
            velocity: model.parameters().map(|p| Tensor::zeros(p.rows(), p.cols())).collect(),
        }
    }

    fn step(&mut self, model: &mut Mlp, grads: &[Tensor], lr: f64, cfg: &SgdConfig) {
        for ((w, g), v) in model.parameters_mut().zip(grads).zip(&mut self.velocity) {
            for ((wi, &gi), vi) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vi = cfg.momentum * *vi + (gi + cfg.weight_decay * *wi);
                *wi -= lr * *vi;
            }
        }
    }
}

/// Teacher logits precomputed once; the teacher is frozen.
struct TeacherView {
    train: Tensor,
    test: Tensor,
}

fn check_model_data(config: &MlpConfig, data: &Dataset, what: &str) -> Result<()> {
    if config.input_dim != data.dim() || config.num_classes != data.num_classes {
        return Err(Error::Dimension {
            op: if what == "teacher" {
                "teacher vs dataset"
            } else {
                "model vs dataset"
            },
            left: (config.input_dim, config.num_classes),
            right: (data.dim(), data.num_classes),
        });
    }
    Ok(())
}

fn evaluate_epoch(
    model: &Mlp,
    train: &Dataset,
    test: &Dataset,
    teacher: Option<&TeacherView>,
    loss_config: &LossConfig,
) -> Result<(LossValue, EpochRow)> {
    let train_logits = model.forward(&train.features)?;
    let train_labels = train.one_hot();
    let loss = losses::evaluate(&train_logits, teacher.map(|t| &t.train), &train_labels, loss_config)?;
    let test_logits = model.forward(&test.features)?;
    let test_stats = metrics::confidence(&test_logits, Some(&test.labels))?;

    let sphere_confidence = match (loss_config.method, loss_config.l_avg) {
        (Method::Skd, Some(l_avg)) => {
            let rescaled = test_logits.normalize_rows(loss_config.eps).scale(l_avg);
            Some(metrics::confidence(&rescaled, None)?.mean_confidence)
        }
        _ => None,
    };

    let diagnostics = match teacher {
        Some(t) => {
            let gap = gap_report(&t.test, &test_logits, loss_config.tau, loss_config.eps)?;
            let mut tape = Tape::new();
            let s = tape.leaf(train_logits.clone());
            let l = losses::distillation_loss(&mut tape, s, Some(&t.train), &train_labels, loss_config)?;
            let g = tape.backward(l.total)?.wrt(s);
            Some(Diagnostics {
                kd_loss_on_test: gap.kd_loss,
                norm_mse: gap.norm_mse,
                normalized_mse: gap.normalized_mse,
                confidence_gap: gap.confidence_gap,
                agreement: argmax_agreement(&t.test, &test_logits)?,
                radial_alignment: metrics::radial_alignment(&g, &train_logits)?,
            })
        }
        None => None,
    };

    let row = EpochRow {
        epoch: 0,
        lr: 0.0,
        train_loss: loss.total,
        kd_part: loss.kd_part,
        cls_part: loss.cls_part,
        train_acc: metrics::accuracy(&train_logits, &train.labels),
        test_acc: test_stats.accuracy.unwrap_or(0.0),
        mean_confidence: test_stats.mean_confidence,
        sphere_confidence,
        diagnostics,
    };
    Ok((loss, row))
}

fn fit(
    model: &mut Mlp,
    train: &Dataset,
    test: &Dataset,
    teacher: Option<&TeacherView>,
    loss_config: &LossConfig,
    sgd: &SgdConfig,
) -> Result<(RunRecord, f64)> {
    let mut opt = Sgd::new(model);
    let mut record = RunRecord::default();
    let mut final_train_acc = None;

    for epoch in 0..sgd.epochs {
        let lr = sgd.lr_at_epoch(epoch);
        for batch in batches(train, sgd.batch_size, derive_seed(sgd.seed, epoch as u64))? {
            let teacher_logits = teacher.map(|t| t.train.gather_rows(&batch.indices));
            let mut tape = Tape::new();
            let params = model.register(&mut tape);
            let x = tape.constant(batch.features);
            let logits = model.forward_on(&mut tape, &params, x)?;
            let loss =
                losses::distillation_loss(&mut tape, logits, teacher_logits.as_ref(), &batch.labels, loss_config)?;
            let value = tape.scalar(loss.total)?;
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    loss: value,
                });
            }
            let grads = tape.backward(loss.total)?;
            let flat: Vec<Tensor> = params
                .0
                .iter()
                .flat_map(|&(w, b)| [grads.wrt(w), grads.wrt(b)])
                .collect();
            opt.step(model, &flat, lr, sgd);
        }

        let (loss, mut row) = evaluate_epoch(model, train, test, teacher, loss_config)?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                loss: loss.total,
            });
        }
        row.epoch = epoch + 1;
        row.lr = lr;
        final_train_acc = Some(row.train_acc);
        record.rows.push(row);
    }

    let train_acc = match final_train_acc {
        Some(a) => a,
        None => metrics::accuracy(&model.forward(&train.features)?, &train.labels),
    };
    Ok((record, train_acc))
}

/// Mean per-sample logit norm of `teacher` over `dataset`.
pub fn compute_avg_teacher_norm(teacher: &Mlp, dataset: &Dataset) -> Result<f64> {
    let norms = teacher.forward(&dataset.features)?.row_norms();
    Ok(norms.sum() / norms.len() as f64)
}

/// Trains with cross-entropy only, then stores the teacher's `l_avg` over the
/// training set in the checkpoint.
pub fn train_teacher(
    config: MlpConfig,
    train: &Dataset,
    test: &Dataset,
    sgd: &SgdConfig,
) -> Result<(Checkpoint, RunRecord)> {
    sgd.validate()?;
    check_model_data(&config, train, "teacher")?;
    check_model_data(&config, test, "teacher")?;
    let mut model = Mlp::init(config)?;
    let ce = LossConfig {
        method: Method::Ce,
        ..LossConfig::default()
    };
    let (record, train_accuracy) = fit(&mut model, train, test, None, &ce, sgd)?;
    let l_avg = compute_avg_teacher_norm(&model, train)?;
    let ckpt = Checkpoint {
        model,
        l_avg: Some(l_avg),
        epochs: sgd.epochs,
        train_accuracy,
    };
    Ok((ckpt, record))
}

/// Trains a student against a frozen teacher with the configured method.
/// For methods that need it, `l_avg` is taken from the teacher checkpoint.
pub fn distill_student(
    student_config: MlpConfig,
    teacher: &Checkpoint,
    train: &Dataset,
    test: &Dataset,
    loss_config: &LossConfig,
    sgd: &SgdConfig,
) -> Result<(Checkpoint, RunRecord)> {
    sgd.validate()?;
    let mut loss_config = loss_config.clone();
    loss_config.l_avg = teacher.l_avg;
    if loss_config.method.needs_l_avg() && teacher.l_avg.is_none() {
        return Err(Error::Parameter(format!(
            "method {} requires l_avg in the teacher checkpoint, which has none",
            loss_config.method
        )));
    }
    loss_config.validate()?;
    check_model_data(teacher.model.config(), train, "teacher")?;
    check_model_data(&student_config, train, "student")?;
    check_model_data(&student_config, test, "student")?;

    let view = TeacherView {
        train: teacher.model.forward(&train.features)?,
        test: teacher.model.forward(&test.features)?,
    };
    let mut model = Mlp::init(student_config)?;
    let (record, train_accuracy) = fit(&mut model, train, test, Some(&view), &loss_config, sgd)?;
    let ckpt = Checkpoint {
        model,
        l_avg: None,
        epochs: sgd.epochs,
        train_accuracy,
    };
    Ok((ckpt, record))
}
