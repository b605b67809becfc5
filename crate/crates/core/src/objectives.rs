//! Training losses: class-prior importance weights, the weighted
//! classification loss and the per-class covariance alignment loss.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// `(count_y + smoothing) / (n + smoothing * n_classes)`.
pub fn estimate_class_priors(ds: &LabeledDataset, smoothing: f64) -> Vec<f64> {
    let counts = ds.class_counts();
    let denom = ds.len() as f64 + smoothing * counts.len() as f64;
    counts.iter().map(|&c| (c as f64 + smoothing) / denom).collect()
}

/// `w_y = next[y] / current[y]`.
pub fn importance_weights(current: &[f64], next: &[f64]) -> Result<Vec<f64>> {
    if current.len() != next.len() {
        return Err(Error::dim("importance_weights", format!("{} vs {} classes", current.len(), next.len())));
    }
    if current.iter().chain(next).any(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::param("class priors must be positive"));
    }
    Ok(current.iter().zip(next).map(|(c, n)| n / c).collect())
}

/// Per-transition class weights `w^t_y` for `t = 1..T-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeightTable {
    pub w: Vec<Vec<f64>>,
}

impl ClassWeightTable {
    /// Weights between consecutive entries of `priors` (one per domain).
    pub fn from_priors(priors: &[Vec<f64>]) -> Result<Self> {
        let w = priors
            .windows(2)
            .map(|p| importance_weights(&p[0], &p[1]))
            .collect::<Result<_>>()?;
        Ok(Self { w })
    }

    /// Weights of transition `t` (1-based).
    pub fn step(&self, t: usize) -> &[f64] {
        &self.w[t - 1]
    }
}

fn check_labels(op: &'static str, labels: &[usize], n_classes: usize, rows: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::dim(op, format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(y) = labels.iter().find(|&&y| y >= n_classes) {
        return Err(Error::param(format!("label {y} out of range for {n_classes} classes")));
    }
    Ok(())
}

/// Per-sample cross-entropy as an `n x 1` column: logistic loss for a single
/// logit column (binary), softmax cross-entropy otherwise.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = g.value(logits).as_2d();
    if c == 1 {
        check_labels("cross_entropy", labels, 2, n)?;
        let targets: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
        g.bce_with_logits(logits, &targets)
    } else {
        check_labels("cross_entropy", labels, c, n)?;
        let lp = g.log_softmax(logits, 1)?;
        let picked = g.pick(lp, labels)?;
        g.scale(picked, -1.0)
    }
}

/// `sum_i w_i CE_i / sum_i w_i` with per-sample weights.
pub fn weighted_mean_ce(g: &mut Graph, logits: Var, labels: &[usize], sample_w: &[f64]) -> Result<Var> {
    if sample_w.len() != labels.len() {
        return Err(Error::dim("weighted_mean_ce", "one weight per sample is required"));
    }
    if sample_w.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
        return Err(Error::param("sample weights must be positive"));
    }
    let ce = cross_entropy(g, logits, labels)?;
    let total: f64 = sample_w.iter().sum();
    let wc = g.constant(Tensor::column(sample_w));
    let weighted = g.mul(ce, wc)?;
    let s = g.reduce_sum(weighted)?;
    g.scale(s, 1.0 / total)
}

/// Classification loss of one transition: the class-weighted mean CE of
/// `h_t(Trans(z_{<=t}))` on domain `t` plus the plain mean CE of
/// `h_t(Enc(x_{t+1}))` on domain `t + 1`.
pub fn weighted_cls_loss(
    g: &mut Graph,
    logits_f: Var,
    labels_t: &[usize],
    class_w: &[f64],
    logits_g: Var,
    labels_next: &[usize],
) -> Result<Var> {
    let n_classes = class_w.len();
    check_labels("weighted_cls_loss", labels_t, n_classes, g.value(logits_f).rows())?;
    let sample_w: Vec<f64> = labels_t.iter().map(|&y| class_w[y]).collect();
    let first = weighted_mean_ce(g, logits_f, labels_t, &sample_w)?;
    let ce = cross_entropy(g, logits_g, labels_next)?;
    let second = g.reduce_mean(ce)?;
    g.add(first, second)
}

/// Weighted covariance of the rows of `z` (`n x d`):
/// `sum_i w_i (z_i - mu)(z_i - mu)^T / (W - sum_i w_i^2 / W)` with the
/// weighted mean `mu` and `W = sum_i w_i`. Unit weights give the unbiased
/// sample covariance.
pub fn weighted_covariance(g: &mut Graph, z: Var, w: &[f64]) -> Result<Var> {
    let (n, _) = g.value(z).as_2d();
    if w.len() != n || n < 2 {
        return Err(Error::dim("weighted_covariance", format!("{} weights for {n} rows (need >= 2)", w.len())));
    }
    let total: f64 = w.iter().sum();
    let denom = total - w.iter().map(|v| v * v).sum::<f64>() / total;
    if !(denom > 0.0) {
        return Err(Error::param("weighted covariance needs two positively weighted rows"));
    }
    let wc = g.constant(Tensor::column(w));
    let wz = g.mul_col(z, wc)?;
    let sum = g.sum_axis(wz, 0)?;
    let mean = g.scale(sum, 1.0 / total)?;
    let mean_rows = g.gather_rows(mean, &vec![0; n])?;
    let centered = g.sub(z, mean_rows)?;
    let wcent = g.mul_col(centered, wc)?;
    let wt = g.transpose(wcent)?;
    let scatter = g.matmul(wt, centered)?;
    g.scale(scatter, 1.0 / denom)
}

/// Covariance alignment loss of one transition together with the number of
/// classes skipped for having fewer than two samples on either side.
#[derive(Debug, Clone, Copy)]
pub struct InvLoss {
    pub loss: Var,
    pub skipped: usize,
}

/// `sum_y ||C^y_t - C^y_{t+1}||_F^2 / (4 d^2)` over classes with at least two
/// samples on both sides. The domain-`t` side uses weighted statistics with
/// per-sample weights `sample_w_t`.
pub fn coral_inv_loss(
    g: &mut Graph,
    zhat_t: Var,
    labels_t: &[usize],
    sample_w_t: &[f64],
    z_next: Var,
    labels_next: &[usize],
    n_classes: usize,
) -> Result<InvLoss> {
    let (n, d) = g.value(zhat_t).as_2d();
    let (m, d2) = g.value(z_next).as_2d();
    if d != d2 {
        return Err(Error::dim("coral_inv_loss", format!("widths {d} and {d2}")));
    }
    check_labels("coral_inv_loss", labels_t, n_classes, n)?;
    check_labels("coral_inv_loss", labels_next, n_classes, m)?;
    if sample_w_t.len() != n {
        return Err(Error::dim("coral_inv_loss", "one weight per domain-t sample is required"));
    }
    let mut terms = Vec::new();
    let mut skipped = 0;
    for y in 0..n_classes {
        let a: Vec<usize> = (0..n).filter(|&i| labels_t[i] == y).collect();
        let b: Vec<usize> = (0..m).filter(|&i| labels_next[i] == y).collect();
        if a.len() < 2 || b.len() < 2 {
            skipped += 1;
            continue;
        }
        let za = g.gather_rows(zhat_t, &a)?;
        let wa: Vec<f64> = a.iter().map(|&i| sample_w_t[i]).collect();
        let ca = weighted_covariance(g, za, &wa)?;
        let zb = g.gather_rows(z_next, &b)?;
        let cb = weighted_covariance(g, zb, &vec![1.0; b.len()])?;
        let diff = g.sub(ca, cb)?;
        let sq = g.frobenius_norm_squared(diff)?;
        terms.push(g.scale(sq, 1.0 / (4.0 * (d * d) as f64))?);
    }
    let loss = match terms.split_first() {
        None => g.constant(Tensor::scalar(0.0)),
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = g.add(acc, t)?;
            }
            acc
        }
    };
    Ok(InvLoss { loss, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub t: usize,
    pub l_cls: f64,
    pub l_inv: f64,
    pub skipped_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cls: f64,
    pub l_inv: f64,
    pub total: f64,
    pub per_step: Vec<StepLoss>,
}

/// `total = sum_t (L_cls^t + alpha L_inv^t)`.
pub fn total_objective(per_step: Vec<StepLoss>, alpha: f64) -> Result<LossBreakdown> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::param(format!("alpha must be nonnegative, got {alpha}")));
    }
    let l_cls = per_step.iter().map(|s| s.l_cls).sum();
    let l_inv = per_step.iter().map(|s| s.l_inv).sum();
    let total = per_step.iter().map(|s| s.l_cls + alpha * s.l_inv).sum();
    Ok(LossBreakdown {
        l_cls,
        l_inv,
        total,
        per_step,
    })
}
