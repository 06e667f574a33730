//! Confidence and teacher-student logit diagnostics.

use crate::error::{Error, Result};
use crate::losses::kd_loss_value;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceStats {
    /// Mean over samples of the largest softmax probability at temperature 1.
    pub mean_confidence: f64,
    /// Fraction of argmax predictions matching the labels, when given.
    pub accuracy: Option<f64>,
    pub per_sample: Vec<f64>,
}

pub fn confidence(logits: &Tensor, labels: Option<&[usize]>) -> Result<ConfidenceStats> {
    if let Some(l) = labels {
        if l.len() != logits.rows() {
            return Err(Error::Dimension {
                op: "confidence",
                left: logits.shape(),
                right: (l.len(), 1),
            });
        }
    }
    let probs = logits.softmax_rows(1.0)?;
    let per_sample: Vec<f64> = probs
        .iter_rows()
        .take(probs.rows())
        .map(|r| r.iter().fold(0.0f64, |m, &v| m.max(v)))
        .collect();
    let mean_confidence = per_sample.iter().sum::<f64>() / per_sample.len().max(1) as f64;
    let accuracy = labels.map(|l| accuracy(logits, l));
    Ok(ConfidenceStats {
        mean_confidence,
        accuracy,
        per_sample,
    })
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let hits = logits.argmax_rows().iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    /// Teacher mean confidence minus student mean confidence.
    pub confidence_gap: f64,
    pub kd_loss: f64,
    /// Mean of `(l^T − l^S)²` over rows.
    pub norm_mse: f64,
    /// Mean of `‖f̂^T − f̂^S‖²` over rows.
    pub normalized_mse: f64,
    pub teacher_confidence: f64,
    pub student_confidence: f64,
}

pub fn gap_report(teacher_logits: &Tensor, student_logits: &Tensor, tau: f64, eps: f64) -> Result<GapReport> {
    teacher_logits.expect_same_shape(student_logits, "gap_report")?;
    let kd_loss = kd_loss_value(student_logits, teacher_logits, tau)?;
    let m = teacher_logits.rows() as f64;
    let norm_mse = teacher_logits
        .row_norms()
        .data()
        .iter()
        .zip(student_logits.row_norms().data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / m;
    let normalized_mse = teacher_logits
        .normalize_rows(eps)
        .sub(&student_logits.normalize_rows(eps))?
        .data()
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        / m;
    let teacher_confidence = confidence(teacher_logits, None)?.mean_confidence;
    let student_confidence = confidence(student_logits, None)?.mean_confidence;
    Ok(GapReport {
        confidence_gap: teacher_confidence - student_confidence,
        kd_loss,
        norm_mse,
        normalized_mse,
        teacher_confidence,
        student_confidence,
    })
}

/// Fraction of rows where teacher and student argmax agree (ties → lowest index).
pub fn argmax_agreement(teacher_logits: &Tensor, student_logits: &Tensor) -> Result<f64> {
    teacher_logits.expect_same_shape(student_logits, "argmax_agreement")?;
    let same = teacher_logits
        .argmax_rows()
        .iter()
        .zip(student_logits.argmax_rows())
        .filter(|(a, b)| **a == *b)
        .count();
    Ok(same as f64 / teacher_logits.rows().max(1) as f64)
}

/// Largest per-row `|⟨g, f⟩| / (‖g‖·‖f‖)`; rows with a zero factor count as 0.
pub fn radial_alignment(grad: &Tensor, logits: &Tensor) -> Result<f64> {
    grad.expect_same_shape(logits, "radial_alignment")?;
    let mut worst = 0.0f64;
    for (g, f) in grad.iter_rows().zip(logits.iter_rows()).take(grad.rows()) {
        let dot: f64 = g.iter().zip(f).map(|(a, b)| a * b).sum();
        let scale = g.iter().map(|v| v * v).sum::<f64>().sqrt() * f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if scale > 0.0 {
            worst = worst.max(dot.abs() / scale);
        }
    }
    Ok(worst)
}
