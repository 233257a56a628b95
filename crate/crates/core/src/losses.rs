//! Loss functions: cross-entropy classification, low-level map
//! distillation, dilated boundary supervision, the LwF-style distillation
//! baseline, and the combined objective, together with analytic gradients
//! for everything the training loop differentiates.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::maps::{BinaryMap, SaliencyMap};

/// Count of dilated-boundary losses evaluated against an empty mask. Empty
/// masks contribute zero loss rather than an error (a blank teacher map must
/// not poison a batch); this counter keeps the event visible.
static EMPTY_BOUNDARY_REGIONS: AtomicU64 = AtomicU64::new(0);

pub fn empty_boundary_region_count() -> u64 {
    EMPTY_BOUNDARY_REGIONS.load(Ordering::Relaxed)
}

pub fn reset_empty_boundary_region_count() {
    EMPTY_BOUNDARY_REGIONS.store(0, Ordering::Relaxed);
}

/// `-log softmax(logits)[label]`, computed with the log-sum-exp trick.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

/// Gradient of [`cross_entropy`] w.r.t. the logits: `softmax - onehot`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let probs = softmax(logits);
    Ok(probs
        .into_iter()
        .enumerate()
        .map(|(i, p)| if i == label { p - 1.0 } else { p })
        .collect())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_plane_dims(a: &SaliencyMap, b: &SaliencyMap) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::invalid(format!(
            "plane dims {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Low-level distillation: per plane the root-mean-square error
/// `||student - teacher||_2 / sqrt(N)`, averaged over the saliency and
/// boundary planes.
pub fn low_level_loss(
    student: (&SaliencyMap, &SaliencyMap),
    teacher: (&SaliencyMap, &SaliencyMap),
) -> Result<f64> {
    check_plane_dims(student.0, teacher.0)?;
    check_plane_dims(student.1, teacher.1)?;
    Ok(0.5 * (plane_rms(student.0, teacher.0) + plane_rms(student.1, teacher.1)))
}

fn plane_rms(a: &SaliencyMap, b: &SaliencyMap) -> f64 {
    let n = a.pixel_count() as f64;
    let ss: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    (ss / n).sqrt()
}

/// Mean absolute error over both planes; reported alongside the RMS loss in
/// diagnostics.
pub fn low_level_mae(
    student: (&SaliencyMap, &SaliencyMap),
    teacher: (&SaliencyMap, &SaliencyMap),
) -> Result<f64> {
    check_plane_dims(student.0, teacher.0)?;
    check_plane_dims(student.1, teacher.1)?;
    let mae = |a: &SaliencyMap, b: &SaliencyMap| -> f64 {
        a.values().iter().zip(b.values()).map(|(&x, &y)| (x - y).abs()).sum::<f64>()
            / a.pixel_count() as f64
    };
    Ok(0.5 * (mae(student.0, teacher.0) + mae(student.1, teacher.1)))
}

/// [`low_level_loss`] plus its gradient w.r.t. every student pixel
/// (saliency-plane grads first, then boundary-plane grads).
pub fn low_level_loss_grad(
    student: (&SaliencyMap, &SaliencyMap),
    teacher: (&SaliencyMap, &SaliencyMap),
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_plane_dims(student.0, teacher.0)?;
    check_plane_dims(student.1, teacher.1)?;
    let grad_plane = |s: &SaliencyMap, t: &SaliencyMap| -> (f64, Vec<f64>) {
        let n = s.pixel_count() as f64;
        let rms = plane_rms(s, t);
        if rms == 0.0 {
            return (0.0, vec![0.0; s.pixel_count()]);
        }
        // d rms / d s_i = (s_i - t_i) / (N * rms); the 0.5 plane average is
        // applied by the caller below.
        let grads = s
            .values()
            .iter()
            .zip(t.values())
            .map(|(&x, &y)| 0.5 * (x - y) / (n * rms))
            .collect();
        (rms, grads)
    };
    let (rms_sal, g_sal) = grad_plane(student.0, teacher.0);
    let (rms_bnd, g_bnd) = grad_plane(student.1, teacher.1);
    Ok((0.5 * (rms_sal + rms_bnd), g_sal, g_bnd))
}

/// Dilated boundary supervision: masked mean of `-log(1 - S)` over pixels
/// where the dilated boundary is set. An empty mask yields 0 and bumps the
/// diagnostic counter.
pub fn dbs_loss(student_sal: &SaliencyMap, dilated_boundary: &BinaryMap) -> Result<f64> {
    dbs_loss_grad(student_sal, dilated_boundary).map(|(loss, _)| loss)
}

/// [`dbs_loss`] plus its gradient w.r.t. every student pixel:
/// `B_j / ((1 - S_j) * sum(B))` inside the mask, 0 outside.
pub fn dbs_loss_grad(
    student_sal: &SaliencyMap,
    dilated_boundary: &BinaryMap,
) -> Result<(f64, Vec<f64>)> {
    if student_sal.height() != dilated_boundary.height()
        || student_sal.width() != dilated_boundary.width()
    {
        return Err(Error::invalid(format!(
            "student map {}x{} vs boundary {}x{}",
            student_sal.height(),
            student_sal.width(),
            dilated_boundary.height(),
            dilated_boundary.width()
        )));
    }
    let mask_total = dilated_boundary.count_ones() as f64;
    if mask_total == 0.0 {
        EMPTY_BOUNDARY_REGIONS.fetch_add(1, Ordering::Relaxed);
        return Ok((0.0, vec![0.0; student_sal.pixel_count()]));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0f64; student_sal.pixel_count()];
    for (i, (&s, &b)) in student_sal.values().iter().zip(dilated_boundary.values()).enumerate() {
        if b == 0 {
            continue;
        }
        if s >= 1.0 {
            return Err(Error::invalid(
                "student saliency reaches 1 inside the boundary mask; normalize with an \
                 epsilon clamp first",
            ));
        }
        loss -= (1.0 - s).ln();
        grad[i] = 1.0 / ((1.0 - s) * mask_total);
    }
    Ok((loss / mask_total, grad))
}

/// Temperature-softened cross-entropy between an old model's logits and the
/// current model's logits restricted to the old classes.
pub fn lwf_distill(old_logits: &[f64], new_logits: &[f64], temperature: f64) -> Result<f64> {
    lwf_distill_grad(old_logits, new_logits, temperature).map(|(loss, _)| loss)
}

/// [`lwf_distill`] plus the gradient w.r.t. the new logits:
/// `(softmax(new/T) - softmax(old/T)) / T`.
pub fn lwf_distill_grad(
    old_logits: &[f64],
    new_logits: &[f64],
    temperature: f64,
) -> Result<(f64, Vec<f64>)> {
    if old_logits.len() != new_logits.len() {
        return Err(Error::invalid(format!(
            "old/new logit shapes differ: {} vs {}",
            old_logits.len(),
            new_logits.len()
        )));
    }
    if old_logits.is_empty() {
        return Err(Error::invalid("distillation needs at least one class"));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
    }
    let soft = |logits: &[f64]| -> Vec<f64> {
        let scaled: Vec<f64> = logits.iter().map(|&l| l / temperature).collect();
        softmax(&scaled)
    };
    let p_old = soft(old_logits);
    let p_new = soft(new_logits);
    let loss: f64 = p_old
        .iter()
        .zip(&p_new)
        .map(|(&po, &pn)| -po * pn.max(1e-300).ln())
        .sum();
    let grad = p_new
        .iter()
        .zip(&p_old)
        .map(|(&pn, &po)| (pn - po) / temperature)
        .collect();
    Ok((loss, grad))
}

/// Weights for the auxiliary loss terms; the classification and method
/// terms enter unweighted.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossCoefficients {
    pub lambda_lm: f64,
    pub lambda_dbs: f64,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        Self { lambda_lm: 1.0, lambda_dbs: 1.0 }
    }
}

/// One batch's loss terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub method: f64,
    pub lm: f64,
    pub dbs: f64,
    pub total: f64,
}

/// Combine the parts into the full objective:
/// `total = ce + method + lambda_lm * lm + lambda_dbs * dbs`.
/// The `dbs` part is expected to already be the mean over stage losses.
pub fn total_loss(
    ce: f64,
    method: f64,
    lm: f64,
    dbs: f64,
    coefficients: LossCoefficients,
) -> Result<LossBreakdown> {
    for (name, v) in [("ce", ce), ("method", method), ("lm", lm), ("dbs", dbs)] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite {name} loss: {v}")));
        }
    }
    let total = ce + method + coefficients.lambda_lm * lm + coefficients.lambda_dbs * dbs;
    if !total.is_finite() {
        return Err(Error::Numerical(format!("non-finite total loss: {total}")));
    }
    Ok(LossBreakdown { ce, method, lm, dbs, total })
}

/// Inputs a method plugin sees for one batch. Logit rows are samples;
/// `snapshot_logits` are the frozen previous-task model's outputs over the
/// old classes, supplied by the engine when the plugin asks for them.
pub struct MethodBatch<'a> {
    pub logits: &'a Array2<f64>,
    pub labels: &'a [usize],
    pub old_class_count: usize,
    pub snapshot_logits: Option<&'a Array2<f64>>,
}

/// Pluggable forgetting-mitigation loss. Implementations must return a
/// finite, nonnegative loss together with its gradient w.r.t. the current
/// logits (zeros where the loss does not depend on them).
pub trait MethodLossPlugin {
    fn name(&self) -> &str;
    /// Called when a task begins, before the first batch.
    fn begin_task(&mut self, task_idx: usize, old_class_count: usize);
    /// Whether the engine should run the frozen snapshot on each batch.
    fn needs_snapshot_logits(&self) -> bool {
        false
    }
    /// Mean loss over the batch plus gradient w.r.t. `batch.logits`.
    fn evaluate(&self, batch: &MethodBatch<'_>) -> Result<(f64, Array2<f64>)>;
}

/// Plain sequential fine-tuning: no forgetting mitigation at all.
#[derive(Debug, Default)]
pub struct FinetunePlugin;

impl MethodLossPlugin for FinetunePlugin {
    fn name(&self) -> &str {
        "finetune"
    }

    fn begin_task(&mut self, _task_idx: usize, _old_class_count: usize) {}

    fn evaluate(&self, batch: &MethodBatch<'_>) -> Result<(f64, Array2<f64>)> {
        Ok((0.0, Array2::zeros(batch.logits.raw_dim())))
    }
}

/// LwF-style distillation over the old-class logits against the frozen
/// previous-task model.
#[derive(Debug)]
pub struct LwfPlugin {
    pub temperature: f64,
    pub weight: f64,
    active: bool,
}

impl LwfPlugin {
    pub fn new(temperature: f64, weight: f64) -> Self {
        Self { temperature, weight, active: false }
    }
}

impl MethodLossPlugin for LwfPlugin {
    fn name(&self) -> &str {
        "lwf"
    }

    fn begin_task(&mut self, _task_idx: usize, old_class_count: usize) {
        self.active = old_class_count > 0;
    }

    fn needs_snapshot_logits(&self) -> bool {
        self.active
    }

    fn evaluate(&self, batch: &MethodBatch<'_>) -> Result<(f64, Array2<f64>)> {
        let mut grad = Array2::zeros(batch.logits.raw_dim());
        if !self.active || batch.old_class_count == 0 {
            return Ok((0.0, grad));
        }
        let snapshot = batch.snapshot_logits.ok_or_else(|| {
            Error::invalid("lwf plugin requires snapshot logits for the old classes")
        })?;
        let n = batch.logits.nrows();
        let old = batch.old_class_count;
        let mut loss = 0.0;
        for i in 0..n {
            let new_row: Vec<f64> = batch.logits.row(i).iter().take(old).cloned().collect();
            let old_row: Vec<f64> = snapshot.row(i).to_vec();
            let (l, g) = lwf_distill_grad(&old_row, &new_row, self.temperature)?;
            loss += l;
            for (j, gj) in g.into_iter().enumerate() {
                grad[[i, j]] = self.weight * gj / n as f64;
            }
        }
        let mean = self.weight * loss / n as f64;
        if !mean.is_finite() || mean < 0.0 {
            return Err(Error::Numerical(format!("method loss must be finite nonnegative: {mean}")));
        }
        Ok((mean, grad))
    }
}
