//! Distillation objectives.
//!
//! All cross-entropies are the nonnegative `−Σ_i q_i log p_i`, averaged over
//! the batch. Every method reports a distillation part and a supervised part
//! and combines them as `λ·kd_part + (1−λ)·cls_part`; plain cross-entropy
//! training reports `kd_part = 0` with an effective weight of zero.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{check_tau, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Cross-entropy on labels only.
    Ce,
    /// Hinton distillation on raw logits.
    Kd,
    /// KD against teacher logits normalized and rescaled to `l_avg`; student raw.
    KdStar,
    /// Spherical KD: both sides normalized and rescaled to `l_avg`.
    Skd,
    /// Squared difference of teacher and student logit norms.
    NormMse,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ce, Method::Kd, Method::KdStar, Method::Skd, Method::NormMse];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ce => "ce",
            Method::Kd => "kd",
            Method::KdStar => "kdstar",
            Method::Skd => "skd",
            Method::NormMse => "normmse",
        }
    }

    pub fn needs_teacher(self) -> bool {
        self != Method::Ce
    }

    pub fn needs_l_avg(self) -> bool {
        matches!(self, Method::KdStar | Method::Skd)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parameter(format!("unknown method {s:?} (expected ce|kd|kdstar|skd|normmse)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub method: Method,
    pub tau: f64,
    pub lambda: f64,
    pub l_avg: Option<f64>,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            method: Method::Kd,
            tau: 4.0,
            lambda: 0.9,
            l_avg: None,
            eps: crate::NORM_EPS,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Parameter(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Parameter(format!("eps must be positive, got {}", self.eps)));
        }
        if self.method.needs_l_avg() {
            match self.l_avg {
                Some(l) if l > 0.0 && l.is_finite() => {}
                Some(l) => {
                    return Err(Error::Parameter(format!(
                        "method {} requires l_avg > 0, got {l}",
                        self.method
                    )))
                }
                None => {
                    return Err(Error::Parameter(format!(
                        "method {} requires the teacher's l_avg, which is absent",
                        self.method
                    )))
                }
            }
        }
        Ok(())
    }

    fn required_l_avg(&self) -> Result<f64> {
        self.validate()?;
        self.l_avg
            .ok_or_else(|| Error::Parameter(format!("method {} requires l_avg", self.method)))
    }
}

/// Tape handles of a loss and its two parts.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub kd_part: Var,
    pub cls_part: Var,
    /// Effective weight on `kd_part` (0 for plain cross-entropy).
    pub lambda: f64,
}

impl LossVars {
    pub fn value(&self, tape: &Tape) -> Result<LossValue> {
        Ok(LossValue {
            total: tape.scalar(self.total)?,
            kd_part: tape.scalar(self.kd_part)?,
            cls_part: tape.scalar(self.cls_part)?,
            lambda: self.lambda,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub kd_part: f64,
    pub cls_part: f64,
    pub lambda: f64,
}

impl LossValue {
    /// `total − (λ·kd_part + (1−λ)·cls_part)`.
    pub fn decomposition_residual(&self) -> f64 {
        self.total - (self.lambda * self.kd_part + (1.0 - self.lambda) * self.cls_part)
    }
}

/// Batch mean of `−Σ_i target_i · log softmax(logits/τ)_i`. The target is a constant.
pub fn cross_entropy(tape: &mut Tape, logits: Var, target: &Tensor, tau: f64) -> Result<Var> {
    let shape = tape.value(logits).shape();
    if shape != target.shape() {
        return Err(Error::Dimension {
            op: "cross_entropy",
            left: shape,
            right: target.shape(),
        });
    }
    let log_p = tape.log_softmax_tempered(logits, tau)?;
    let t = tape.constant(target.clone());
    let prod = tape.mul(t, log_p)?;
    let s = tape.sum(prod);
    Ok(tape.scale(s, -1.0 / shape.0 as f64))
}

fn check_one_hot(labels: &Tensor) -> Result<()> {
    for (i, row) in labels.iter_rows().take(labels.rows()).enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Contract(format!("label row {i} is not one-hot: {row:?}")));
        }
    }
    Ok(())
}

/// Supervised cross-entropy at temperature 1 against one-hot labels.
pub fn cls_loss(tape: &mut Tape, logits: Var, labels: &Tensor) -> Result<Var> {
    check_one_hot(labels)?;
    cross_entropy(tape, logits, labels, 1.0)
}

/// Cross-entropy from the teacher's tempered distribution to the student's.
/// No gradient reaches the teacher.
pub fn kd_loss(tape: &mut Tape, student: Var, teacher_logits: &Tensor, tau: f64) -> Result<Var> {
    let target = teacher_logits.softmax_rows(tau)?;
    cross_entropy(tape, student, &target, tau)
}

fn weigh(tape: &mut Tape, kd: Var, cls: Var, lambda: f64) -> Result<LossVars> {
    let a = tape.scale(kd, lambda);
    let b = tape.scale(cls, 1.0 - lambda);
    let total = tape.add(a, b)?;
    Ok(LossVars {
        total,
        kd_part: kd,
        cls_part: cls,
        lambda,
    })
}

fn check_pair(tape: &Tape, student: Var, teacher: &Tensor, labels: &Tensor) -> Result<()> {
    let s = tape.value(student).shape();
    for (other, op) in [(teacher.shape(), "teacher logits"), (labels.shape(), "labels")] {
        if other != s {
            return Err(Error::Dimension {
                op,
                left: s,
                right: other,
            });
        }
    }
    Ok(())
}

/// Hinton KD: `λ·kd_loss(τ) + (1−λ)·cls_loss`.
pub fn combined_loss(
    tape: &mut Tape,
    student: Var,
    teacher_logits: &Tensor,
    labels: &Tensor,
    config: &LossConfig,
) -> Result<LossVars> {
    config.validate()?;
    check_pair(tape, student, teacher_logits, labels)?;
    let kd = kd_loss(tape, student, teacher_logits, config.tau)?;
    let cls = cls_loss(tape, student, labels)?;
    weigh(tape, kd, cls, config.lambda)
}

/// `kd_part` is the batch mean of `(l^S − l^T)²` over logit norms.
pub fn norm_mse_loss(
    tape: &mut Tape,
    student: Var,
    teacher_logits: &Tensor,
    labels: &Tensor,
    lambda: f64,
) -> Result<LossVars> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Parameter(format!("lambda must lie in [0, 1], got {lambda}")));
    }
    check_pair(tape, student, teacher_logits, labels)?;
    let ls = tape.row_l2_norm(student);
    let lt = tape.constant(teacher_logits.row_norms());
    let diff = tape.sub(ls, lt)?;
    let sq = tape.square(diff);
    let kd = tape.mean(sq);
    let cls = cls_loss(tape, student, labels)?;
    weigh(tape, kd, cls, lambda)
}

/// Teacher logits projected onto the sphere of radius `l_avg`.
pub fn kdstar_target(teacher_logits: &Tensor, l_avg: f64, eps: f64) -> Result<Tensor> {
    if !(l_avg > 0.0 && l_avg.is_finite()) {
        return Err(Error::Parameter(format!("l_avg must be positive, got {l_avg}")));
    }
    Ok(teacher_logits.normalize_rows(eps).scale(l_avg))
}

/// KD against [`kdstar_target`]; the student keeps its raw logits.
pub fn kdstar_loss(
    tape: &mut Tape,
    student: Var,
    teacher_logits: &Tensor,
    labels: &Tensor,
    config: &LossConfig,
) -> Result<LossVars> {
    let l_avg = config.required_l_avg()?;
    check_pair(tape, student, teacher_logits, labels)?;
    let target = kdstar_target(teacher_logits, l_avg, config.eps)?;
    let kd = kd_loss(tape, student, &target, config.tau)?;
    let cls = cls_loss(tape, student, labels)?;
    weigh(tape, kd, cls, config.lambda)
}

/// Spherical KD. Both logit sets are normalized and rescaled to `l_avg`; the
/// distillation term compares them at temperature τ and the supervised term
/// uses the rescaled student logits at temperature 1.
pub fn skd_loss(
    tape: &mut Tape,
    student: Var,
    teacher_logits: &Tensor,
    labels: &Tensor,
    config: &LossConfig,
) -> Result<LossVars> {
    let l_avg = config.required_l_avg()?;
    check_pair(tape, student, teacher_logits, labels)?;
    let unit = tape.normalize_rows(student, config.eps)?;
    let sphere = tape.scale(unit, l_avg);
    let target = kdstar_target(teacher_logits, l_avg, config.eps)?;
    let kd = kd_loss(tape, sphere, &target, config.tau)?;
    let cls = cls_loss(tape, sphere, labels)?;
    weigh(tape, kd, cls, config.lambda)
}

/// Dispatches on `config.method`. The teacher is ignored for [`Method::Ce`].
pub fn distillation_loss(
    tape: &mut Tape,
    student: Var,
    teacher_logits: Option<&Tensor>,
    labels: &Tensor,
    config: &LossConfig,
) -> Result<LossVars> {
    config.validate()?;
    if config.method == Method::Ce {
        let cls = cls_loss(tape, student, labels)?;
        let kd = tape.constant(Tensor::scalar(0.0));
        return Ok(LossVars {
            total: cls,
            kd_part: kd,
            cls_part: cls,
            lambda: 0.0,
        });
    }
    let teacher =
        teacher_logits.ok_or_else(|| Error::Contract(format!("method {} needs teacher logits", config.method)))?;
    match config.method {
        Method::Kd => combined_loss(tape, student, teacher, labels, config),
        Method::KdStar => kdstar_loss(tape, student, teacher, labels, config),
        Method::Skd => skd_loss(tape, student, teacher, labels, config),
        Method::NormMse => norm_mse_loss(tape, student, teacher, labels, config.lambda),
        Method::Ce => unreachable!(),
    }
}

/// Evaluates a loss on plain tensors.
pub fn evaluate(
    student_logits: &Tensor,
    teacher_logits: Option<&Tensor>,
    labels: &Tensor,
    config: &LossConfig,
) -> Result<LossValue> {
    let mut tape = Tape::new();
    let s = tape.constant(student_logits.clone());
    distillation_loss(&mut tape, s, teacher_logits, labels, config)?.value(&tape)
}

/// Evaluates the raw-logit KD loss on plain tensors.
pub fn kd_loss_value(student_logits: &Tensor, teacher_logits: &Tensor, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let s = tape.constant(student_logits.clone());
    let l = kd_loss(&mut tape, s, teacher_logits, tau)?;
    tape.scalar(l)
}

/// Gradient of `‖l^S f̂^S − l^T f̂^T‖²` with respect to the student direction
/// f̂^S, holding the student norm l^S fixed: `2·l^S·(l^S·f̂^S − l^T·f̂^T)`.
///
/// Exposes how the student norm scales the direction update under logit
/// matching. Not used for training.
pub fn norm_interference_gradient(
    student_norm: f64,
    student_dir: &[f64],
    teacher_norm: f64,
    teacher_dir: &[f64],
) -> Result<Vec<f64>> {
    if student_dir.len() != teacher_dir.len() {
        return Err(Error::Dimension {
            op: "norm_interference_gradient",
            left: (1, student_dir.len()),
            right: (1, teacher_dir.len()),
        });
    }
    for (name, dir) in [("student", student_dir), ("teacher", teacher_dir)] {
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Contract(format!("{name} direction has norm {n}, expected 1")));
        }
    }
    Ok(student_dir
        .iter()
        .zip(teacher_dir)
        .map(|(s, t)| 2.0 * student_norm * (student_norm * s - teacher_norm * t))
        .collect())
}
