//! Supervised, margin and distillation losses, and the per-sample combined
//! criterion that ties students and teachers together.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{log_softmax, softmax};

/// A loss value with its gradient w.r.t. the scored logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::Label { label, classes });
    }
    Ok(())
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<LossGrad> {
    check_label(label, logits.len())?;
    let ls = log_softmax(logits, 1.0);
    let mut grad: Vec<f64> = ls.iter().map(|l| l.exp()).collect();
    grad[label] -= 1.0;
    Ok(LossGrad { value: -ls[label], grad })
}

/// Crammer–Singer hinge `max(0, 1 + max_{c≠y} s_c − s_y)`. Ties for the
/// strongest violator go to the lowest class index.
pub fn multiclass_hinge(scores: &[f64], label: usize) -> Result<LossGrad> {
    check_label(label, scores.len())?;
    if scores.len() < 2 {
        return Err(Error::Config("hinge needs at least two classes".into()));
    }
    let mut rival = usize::MAX;
    for (c, &s) in scores.iter().enumerate() {
        if c != label && (rival == usize::MAX || s > scores[rival]) {
            rival = c;
        }
    }
    let margin = 1.0 + scores[rival] - scores[label];
    let mut grad = vec![0.0; scores.len()];
    if margin > 0.0 {
        grad[rival] = 1.0;
        grad[label] = -1.0;
        Ok(LossGrad { value: margin, grad })
    } else {
        Ok(LossGrad { value: 0.0, grad })
    }
}

/// Distillation loss with its gradients on both sides.
#[derive(Clone, Debug, PartialEq)]
pub struct KdGrad {
    pub value: f64,
    pub student_grad: Vec<f64>,
    /// Only used when the teacher is not detached.
    pub teacher_grad: Vec<f64>,
}

/// `T² · H(softmax(t/T), softmax(s/T))`.
pub fn kd_cross_entropy(student: &[f64], teacher: &[f64], temperature: f64) -> Result<KdGrad> {
    if student.len() != teacher.len() {
        return Err(Error::Shape {
            op: "kd",
            left: (1, student.len()),
            right: (1, teacher.len()),
        });
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let t = temperature;
    let pt = softmax(teacher, t);
    let ls = log_softmax(student, t);
    let cross: f64 = pt.iter().zip(&ls).map(|(p, l)| p * l).sum();
    let student_grad = pt.iter().zip(&ls).map(|(p, l)| t * (l.exp() - p)).collect();
    let teacher_grad = pt.iter().zip(&ls).map(|(p, l)| -t * p * (l - cross)).collect();
    Ok(KdGrad {
        value: -t * t * cross,
        student_grad,
        teacher_grad,
    })
}

/// How distillation terms from other datasets are weighted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    /// `|D_j| / Σ|D_k|` for the target model `j`.
    #[default]
    AsPrinted,
    /// `|D_i| / Σ|D_k|` for the sample's home dataset `i`.
    BySource,
}

/// Weight of the distillation term of model `j` for a sample from dataset
/// `home`. A home outside `sizes` (an unlabeled pool) counts as foreign to
/// every model.
pub fn dataset_weight(home: usize, model: usize, sizes: &[usize], scheme: WeightScheme) -> f64 {
    if home == model {
        return 1.0;
    }
    let total: usize = sizes.iter().sum();
    let num = match scheme {
        WeightScheme::BySource if home < sizes.len() => sizes[home],
        _ => sizes[model],
    };
    num as f64 / total as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub temperature: f64,
    pub k: f64,
    /// `|D_j|`; filled from the store when left empty.
    pub dataset_sizes: Vec<usize>,
    pub weighting: WeightScheme,
    pub detach_teacher: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.4,
            temperature: 1.0,
            k: 10.0,
            dataset_sizes: Vec::new(),
            weighting: WeightScheme::AsPrinted,
            detach_teacher: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value ≥ 0, got {v}")));
            }
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.k > 0.0) {
            return Err(Error::Config(format!("k must be positive, got {}", self.k)));
        }
        if self.dataset_sizes.contains(&0) {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Which distillation terms a sample contributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KdScope {
    Off,
    /// Only the home model's teacher into its student.
    Home,
    /// Every teacher into its student.
    All,
}

/// Per-sample loss value, its 3n task components and logit gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedLoss {
    pub value: f64,
    /// Unweighted student classification loss, per model (only home is set).
    pub student_cls: Vec<f64>,
    pub teacher_cls: Vec<f64>,
    /// `w_ij · L_kd(M_j, E_j)` per model `j`, before the γ factor.
    pub kd: Vec<f64>,
    pub student_grads: Vec<Option<Vec<f64>>>,
    pub teacher_grads: Vec<Option<Vec<f64>>>,
    /// Set when the sample had nothing to contribute (unlabeled, no KD).
    pub skipped: bool,
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64], scale: f64) {
    let acc = slot.get_or_insert_with(|| vec![0.0; g.len()]);
    for (a, v) in acc.iter_mut().zip(g) {
        *a += scale * v;
    }
}

/// Combined loss for one sample whose home dataset is `home`.
///
/// With a label, the home student's cross-entropy and the home teacher's
/// hinge are included. Distillation terms follow `kd`.
pub fn combined_loss(
    home: usize,
    label: Option<usize>,
    student_logits: &[&[f64]],
    teacher_logits: &[&[f64]],
    weights: &LossWeights,
    kd: KdScope,
) -> Result<CombinedLoss> {
    let n = student_logits.len();
    if teacher_logits.len() != n {
        return Err(Error::Shape {
            op: "combined loss",
            left: (n, 0),
            right: (teacher_logits.len(), 0),
        });
    }
    let mut out = CombinedLoss {
        value: 0.0,
        student_cls: vec![0.0; n],
        teacher_cls: vec![0.0; n],
        kd: vec![0.0; n],
        student_grads: vec![None; n],
        teacher_grads: vec![None; n],
        skipped: false,
    };

    if let Some(y) = label {
        if home >= n {
            return Err(Error::Config(format!("labeled sample with pool home {home}")));
        }
        let ce = cross_entropy(student_logits[home], y)?;
        let hinge = multiclass_hinge(teacher_logits[home], y)?;
        out.value += weights.alpha * ce.value + weights.beta * hinge.value;
        out.student_cls[home] = ce.value;
        out.teacher_cls[home] = hinge.value;
        accumulate(&mut out.student_grads[home], &ce.grad, weights.alpha);
        accumulate(&mut out.teacher_grads[home], &hinge.grad, weights.beta);
    }

    let targets: Vec<usize> = match kd {
        KdScope::Off => vec![],
        KdScope::Home if home < n => vec![home],
        KdScope::Home => vec![],
        KdScope::All => (0..n).collect(),
    };
    if label.is_none() && targets.is_empty() {
        out.skipped = true;
        return Ok(out);
    }
    for j in targets {
        let w = dataset_weight(home, j, &weights.dataset_sizes, weights.weighting);
        let term = kd_cross_entropy(student_logits[j], teacher_logits[j], weights.temperature)?;
        out.kd[j] = w * term.value;
        out.value += weights.gamma * w * term.value;
        accumulate(&mut out.student_grads[j], &term.student_grad, weights.gamma * w);
        if !weights.detach_teacher {
            accumulate(&mut out.teacher_grads[j], &term.teacher_grad, weights.gamma * w);
        }
    }
    Ok(out)
}
