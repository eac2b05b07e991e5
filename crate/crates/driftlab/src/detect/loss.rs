//! Detection loss: mean cross-entropy over non-ignored anchors plus mean
//! smooth-L1 over positive anchors, each head independently maskable.
//!
//! The math is generic over the float type so the identical code path can
//! be instantiated at f64 for finite-difference verification while
//! production runs at f32.

use num_traits::Float;

use super::AnchorAssignment;
use crate::error::{Error, Result};

/// Loss value, per-head components, and gradients w.r.t. the raw model
/// outputs (logits and regression offsets), laid out row-major per anchor.
#[derive(Debug, Clone)]
pub struct DetectionLoss<F> {
    pub total: F,
    pub classification: F,
    pub regression: F,
    pub d_cls: Vec<F>,
    pub d_reg: Vec<F>,
}

/// `cls_logits` is `n_anchors x (C+1)` row-major, `reg_preds` is
/// `n_anchors x 4` row-major. Disabled heads contribute exactly zero loss
/// and zero gradient.
pub fn detection_loss<F: Float>(
    cls_logits: &[F],
    reg_preds: &[F],
    targets: &[AnchorAssignment],
    num_categories: usize,
    use_classification: bool,
    use_regression: bool,
) -> Result<DetectionLoss<F>> {
    let n_anchors = targets.len();
    let c1 = num_categories + 1;
    if cls_logits.len() != n_anchors * c1 || reg_preds.len() != n_anchors * 4 {
        return Err(Error::Validation(format!(
            "loss inputs do not match {n_anchors} anchors x {num_categories}+1 categories"
        )));
    }

    let zero = F::zero();
    let mut d_cls = vec![zero; cls_logits.len()];
    let mut d_reg = vec![zero; reg_preds.len()];
    let mut cls_loss = zero;
    let mut reg_loss = zero;

    if use_classification {
        let n_scored = targets
            .iter()
            .filter(|t| !matches!(t, AnchorAssignment::Ignore))
            .count();
        if n_scored > 0 {
            let inv = F::one() / F::from(n_scored).unwrap();
            for (ai, t) in targets.iter().enumerate() {
                let target_cat = match t {
                    AnchorAssignment::Positive { category, .. } => *category as usize,
                    AnchorAssignment::Negative => 0,
                    AnchorAssignment::Ignore => continue,
                };
                let row = &cls_logits[ai * c1..(ai + 1) * c1];
                // log-softmax, numerically shifted
                let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
                let mut sum = zero;
                for &v in row {
                    sum = sum + (v - max).exp();
                }
                let log_z = sum.ln() + max;
                cls_loss = cls_loss + (log_z - row[target_cat]) * inv;
                for c in 0..c1 {
                    let p = (row[c] - log_z).exp();
                    let y = if c == target_cat { F::one() } else { zero };
                    d_cls[ai * c1 + c] = (p - y) * inv;
                }
            }
        }
    }

    if use_regression {
        let n_pos = targets
            .iter()
            .filter(|t| matches!(t, AnchorAssignment::Positive { .. }))
            .count();
        if n_pos > 0 {
            let inv = F::one() / F::from(n_pos).unwrap();
            for (ai, t) in targets.iter().enumerate() {
                let AnchorAssignment::Positive { reg, .. } = t else {
                    continue;
                };
                for j in 0..4 {
                    let d = reg_preds[ai * 4 + j] - F::from(reg[j]).unwrap();
                    let (l, g) = smooth_l1(d);
                    reg_loss = reg_loss + l * inv;
                    d_reg[ai * 4 + j] = g * inv;
                }
            }
        }
    }

    let total = cls_loss + reg_loss;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite detection loss over {n_anchors} anchors (cls {}, reg {})",
            cls_loss.to_f64().unwrap_or(f64::NAN),
            reg_loss.to_f64().unwrap_or(f64::NAN),
        )));
    }
    Ok(DetectionLoss {
        total,
        classification: cls_loss,
        regression: reg_loss,
        d_cls,
        d_reg,
    })
}

/// Huber loss with unit transition: value and derivative.
fn smooth_l1<F: Float>(d: F) -> (F, F) {
    let one = F::one();
    let half = F::from(0.5).unwrap();
    if d.abs() < one {
        (half * d * d, d)
    } else {
        (d.abs() - half, d.signum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_near_zero_loss() {
        // Saturated logits act as one-hot predictions.
        let targets = vec![
            AnchorAssignment::Positive {
                category: 2,
                reg: [0.1, -0.2, 0.05, 0.0],
            },
            AnchorAssignment::Negative,
        ];
        let cls = vec![
            0.0, 0.0, 40.0, 0.0, // anchor 0 -> category 2
            40.0, 0.0, 0.0, 0.0, // anchor 1 -> background
        ];
        let reg = vec![0.1, -0.2, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0];
        let out = detection_loss::<f64>(&cls, &reg, &targets, 3, true, true).unwrap();
        assert!(out.total.abs() < 1e-9, "loss {}", out.total);
    }

    #[test]
    fn uniform_binary_foreground_is_ln2() {
        // One foreground anchor, two classes (background + one category),
        // logits equal => p = 0.5.
        let targets = vec![AnchorAssignment::Positive {
            category: 1,
            reg: [0.0; 4],
        }];
        let cls = vec![0.0f64, 0.0];
        let reg = vec![0.0f64; 4];
        let out = detection_loss(&cls, &reg, &targets, 1, true, false).unwrap();
        assert!((out.total - (2.0f64).ln()).abs() < 1e-12);
        assert!(out.regression == 0.0);
        assert!(out.d_reg.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn disabled_components_are_exactly_zero() {
        let targets = vec![AnchorAssignment::Positive {
            category: 1,
            reg: [0.3; 4],
        }];
        let cls = vec![0.5f64, -0.2];
        let reg = vec![1.0f64, 2.0, 3.0, 4.0];
        let off = detection_loss(&cls, &reg, &targets, 1, false, false).unwrap();
        assert_eq!(off.total, 0.0);
        assert!(off.d_cls.iter().all(|&g| g == 0.0));
        assert!(off.d_reg.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn mask_linearity() {
        let targets = vec![
            AnchorAssignment::Positive {
                category: 2,
                reg: [0.5, -1.5, 0.2, 0.0],
            },
            AnchorAssignment::Negative,
            AnchorAssignment::Ignore,
        ];
        let cls: Vec<f64> = (0..12).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let reg: Vec<f64> = (0..12).map(|i| (i as f64) * 0.1 - 0.4).collect();
        let both = detection_loss(&cls, &reg, &targets, 3, true, true).unwrap();
        let c = detection_loss(&cls, &reg, &targets, 3, true, false).unwrap();
        let r = detection_loss(&cls, &reg, &targets, 3, false, true).unwrap();
        assert!((both.total - (c.total + r.total)).abs() < 1e-6);
    }

    #[test]
    fn ignored_anchors_get_no_gradient() {
        let targets = vec![AnchorAssignment::Ignore, AnchorAssignment::Negative];
        let cls = vec![0.3f64, 0.1, -0.2, 0.9, 0.0, 0.0, 0.0, 0.0];
        let reg = vec![0.0f64; 8];
        let out = detection_loss(&cls, &reg, &targets, 3, true, true).unwrap();
        assert!(out.d_cls[..4].iter().all(|&g| g == 0.0));
        assert!(out.d_cls[4..].iter().any(|&g| g != 0.0));
    }

    /// Central finite differences on the f64 instantiation.
    #[test]
    fn gradients_match_finite_differences_two_anchor_toy() {
        let targets = vec![
            AnchorAssignment::Positive {
                category: 1,
                reg: [0.2, -0.1, 0.3, 0.6],
            },
            AnchorAssignment::Negative,
        ];
        let cls: Vec<f64> = vec![0.4, -0.3, 0.8, 0.1, -0.5, 0.2];
        let reg: Vec<f64> = vec![0.5, -1.4, 2.0, 0.1, 0.0, 0.3, -0.2, 0.9];
        let f = |cls: &[f64], reg: &[f64]| {
            detection_loss(cls, reg, &targets, 2, true, true)
                .unwrap()
                .total
        };
        let out = detection_loss(&cls, &reg, &targets, 2, true, true).unwrap();
        let eps = 1e-4;
        let mut max_rel = 0.0f64;
        for i in 0..cls.len() {
            let mut p = cls.clone();
            p[i] += eps;
            let mut m = cls.clone();
            m[i] -= eps;
            let num = (f(&p, &reg) - f(&m, &reg)) / (2.0 * eps);
            let rel = (num - out.d_cls[i]).abs() / num.abs().max(out.d_cls[i].abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
        for i in 0..reg.len() {
            let mut p = reg.clone();
            p[i] += eps;
            let mut m = reg.clone();
            m[i] -= eps;
            let num = (f(&cls, &p) - f(&cls, &m)) / (2.0 * eps);
            let rel = (num - out.d_reg[i]).abs() / num.abs().max(out.d_reg[i].abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-3, "max relative error {max_rel}");
    }
}
