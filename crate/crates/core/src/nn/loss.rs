use super::NnError;
use crate::tensor::Tensor;

fn log_softmax_row(row: &[f64], scale: f64, out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v / scale));
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = v / scale - max;
        sum += o.exp();
    }
    let lse = sum.ln();
    for o in out.iter_mut() {
        *o -= lse;
    }
}

fn rowwise(logits: &Tensor, scale: f64, exp: bool) -> Tensor {
    let c = logits.row_len();
    let mut out = logits.clone();
    for (r, chunk) in out.data_mut().chunks_mut(c).enumerate() {
        log_softmax_row(logits.row(r), scale, chunk);
        if exp {
            chunk.iter_mut().for_each(|v| *v = v.exp());
        }
    }
    out
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    rowwise(logits, 1.0, true)
}

pub fn log_softmax_rows(logits: &Tensor) -> Tensor {
    rowwise(logits, 1.0, false)
}

/// Row-wise softmax of `logits / t`.
pub fn softmax_temperature(logits: &Tensor, t: f64) -> Result<Tensor, NnError> {
    if t.is_nan() || t <= 0.0 {
        return Err(NnError::InvalidTemperature(t));
    }
    Ok(rowwise(logits, t, true))
}

fn check_labels(logits: &Tensor, labels: &[usize]) -> Result<(), NnError> {
    if labels.len() != logits.rows() {
        return Err(NnError::LabelCount(labels.len(), logits.rows()));
    }
    let classes = logits.row_len();
    match labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        Some((index, &label)) => Err(NnError::LabelOutOfRange {
            index,
            label,
            classes,
        }),
        None => Ok(()),
    }
}

/// Mean negative log-likelihood of the true class and its logit gradient
/// `(softmax − onehot) / batch`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NnError> {
    check_labels(logits, labels)?;
    let n = logits.rows() as f64;
    let c = logits.row_len();
    let logp = log_softmax_rows(logits);
    let mut loss = 0.0;
    let mut grad = logp.clone();
    for (r, (&y, g)) in labels.iter().zip(grad.data_mut().chunks_mut(c)).enumerate() {
        loss -= logp.row(r)[y];
        for (j, v) in g.iter_mut().enumerate() {
            let onehot = if j == y { 1.0 } else { 0.0 };
            *v = (v.exp() - onehot) / n;
        }
    }
    Ok((loss / n, grad))
}

/// `λ·CE(student, labels) + (1−λ)·T²·KL(softmax_T(teacher) ‖ softmax_T(student))`,
/// averaged over the batch, with its gradient w.r.t. the student logits.
pub fn kd_composite_loss(
    student: &Tensor,
    teacher: &Tensor,
    labels: &[usize],
    t: f64,
    lambda: f64,
) -> Result<(f64, Tensor), NnError> {
    if student.shape() != teacher.shape() {
        return Err(NnError::LogitShape {
            left: student.shape().to_vec(),
            right: teacher.shape().to_vec(),
        });
    }
    if t.is_nan() || t <= 0.0 {
        return Err(NnError::InvalidTemperature(t));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(NnError::InvalidLambda(lambda));
    }
    let (ce, ce_grad) = cross_entropy(student, labels)?;
    let n = student.rows() as f64;
    let log_p = rowwise(student, t, false);
    let log_q = rowwise(teacher, t, false);
    let mut kl = 0.0;
    let mut grad = ce_grad;
    for ((g, lp), lq) in grad
        .data_mut()
        .iter_mut()
        .zip(log_p.data())
        .zip(log_q.data())
    {
        let q = lq.exp();
        kl += q * (lq - lp);
        // d/ds of T²·KL is T·(p − q)
        let kd = t * (lp.exp() - q) / n;
        *g = lambda * *g + (1.0 - lambda) * kd;
    }
    let loss = lambda * ce + (1.0 - lambda) * (t * t * kl / n);
    Ok((loss, grad))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict_classes(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows()).map(|r| argmax(logits.row(r))).collect()
}
