use itertools::Itertools;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Accuracy and macro-F1 under the label permutation that maximizes
/// accuracy (exhaustive search, so at most 8 classes).
pub fn hungarian_match_accuracy(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<(f64, f64)> {
    if num_classes == 0 || num_classes > 8 {
        return Err(Error::Parameter(format!(
            "exhaustive matching supports 1..=8 classes, got {num_classes}"
        )));
    }
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::structural("predictions and labels must be nonempty and equally long"));
    }
    if let Some(bad) = pred.iter().chain(truth).find(|&&c| c >= num_classes) {
        return Err(Error::Parameter(format!("label {bad} out of range")));
    }
    let mut counts = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p][t] += 1;
    }
    // Strict improvement keeps the first permutation in lexicographic order.
    let mut best: Option<(usize, Vec<usize>)> = None;
    for perm in (0..num_classes).permutations(num_classes) {
        let hits: usize = (0..num_classes).map(|p| counts[p][perm[p]]).sum();
        if best.as_ref().is_none_or(|(h, _)| hits > *h) {
            best = Some((hits, perm));
        }
    }
    let (hits, perm) = best.expect("at least one permutation");
    let top1 = hits as f64 / pred.len() as f64;
    let mapped: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
    let mut f1s = Vec::new();
    for c in 0..num_classes {
        let tp = mapped.iter().zip(truth).filter(|(p, t)| **p == c && **t == c).count();
        let fp = mapped.iter().zip(truth).filter(|(p, t)| **p == c && **t != c).count();
        let fnn = mapped.iter().zip(truth).filter(|(p, t)| **p != c && **t == c).count();
        if tp + fp + fnn > 0 {
            f1s.push(2.0 * tp as f64 / (2 * tp + fp + fnn) as f64);
        }
    }
    Ok((top1, f1s.iter().sum::<f64>() / f1s.len() as f64))
}

/// `|A and B| / |A or B|` of two binary masks; 1 when both are empty.
pub fn iou(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "iou",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if a.value().iter().chain(b.value()).any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::domain("iou", "masks must be binary"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (x, y) in a.value().iter().zip(b.value()) {
        inter += (*x == 1.0 && *y == 1.0) as usize;
        union += (*x == 1.0 || *y == 1.0) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Differentiable `sum(p t) / sum(p + t - p t)` for occupancies in `[0, 1]`.
pub fn soft_iou(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    let inter = pred.mul(target)?.sum();
    let union = pred.add(target)?.sum().sub(&inter)?;
    if union.item() <= 0.0 {
        return Ok(Tensor::scalar(1.0));
    }
    inter.div(&union)
}
