//! A toy single-stage anchor-based detector with per-origin, per-head
//! loss masking.
//!
//! One backbone maps an image to a stride-16 grid; a classification head
//! scores C+1 categories (index 0 = background) per anchor and a
//! regression head predicts center/size offsets. Assignment, loss and
//! decoding follow the standard anchor protocol.

mod loss;
mod net;
mod train;

pub use loss::{detection_loss, DetectionLoss};
pub use net::DetectorNet;
pub use train::{continue_training, train_detector, BatchSource, DetectorHyperparams, LabeledOnlyStream, TrainExample};

use ndarray::Array3;

use crate::data::BoundingBox;
use crate::error::{Error, Result};
use crate::pseudo::sharpen;

/// Anchor grid configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    pub stride: usize,
    /// Box side lengths.
    pub scales: Vec<f32>,
    /// Width/height ratios.
    pub aspect_ratios: Vec<f32>,
    pub iou_positive: f64,
    pub iou_negative: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            stride: 16,
            scales: vec![16.0, 22.0, 30.0, 42.0],
            aspect_ratios: vec![1.0],
            iou_positive: 0.5,
            iou_negative: 0.3,
        }
    }
}

impl AnchorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iou_negative >= self.iou_positive {
            return Err(Error::Config(format!(
                "iou_negative {} must be below iou_positive {}",
                self.iou_negative, self.iou_positive
            )));
        }
        if self.scales.is_empty() || self.scales.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("scales must be positive".into()));
        }
        if self.aspect_ratios.is_empty() || self.aspect_ratios.iter().any(|&r| r <= 0.0) {
            return Err(Error::Config("aspect ratios must be positive".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be positive".into()));
        }
        Ok(())
    }

    /// Anchors per grid cell.
    pub fn per_cell(&self) -> usize {
        self.scales.len() * self.aspect_ratios.len()
    }
}

/// A prior box: center plus extent. May extend past image borders;
/// clipping is deferred to inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

impl Anchor {
    pub fn corners(&self) -> (f32, f32, f32, f32) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn iou(&self, b: &BoundingBox) -> f64 {
        let (x0, y0, x1, y1) = self.corners();
        let ix = f64::from(x1.min(b.x_max)) - f64::from(x0.max(b.x_min));
        let iy = f64::from(y1.min(b.y_max)) - f64::from(y0.max(b.y_min));
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        let area_a = f64::from(self.w) * f64::from(self.h);
        inter / (area_a + f64::from(b.area()) - inter)
    }
}

/// One anchor per (cell, scale, ratio), cell-major in row order:
/// `index = (gy*gw + gx) * per_cell + scale_index * |ratios| + ratio_index`.
pub fn generate_anchors(config: &AnchorConfig, image_size: (usize, usize)) -> Vec<Anchor> {
    let (h, w) = image_size;
    let (gh, gw) = (h / config.stride, w / config.stride);
    let mut anchors = Vec::with_capacity(gh * gw * config.per_cell());
    for gy in 0..gh {
        for gx in 0..gw {
            let cx = (gx as f32 + 0.5) * config.stride as f32;
            let cy = (gy as f32 + 0.5) * config.stride as f32;
            for &s in &config.scales {
                for &r in &config.aspect_ratios {
                    let rs = r.sqrt();
                    anchors.push(Anchor {
                        cx,
                        cy,
                        w: s * rs,
                        h: s / rs,
                    });
                }
            }
        }
    }
    anchors
}

/// Per-anchor training target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorAssignment {
    Positive { category: u32, reg: [f32; 4] },
    Negative,
    Ignore,
}

/// Standard assignment: positive at IoU >= `iou_positive` or as the
/// highest-IoU anchor of some ground-truth box, negative below
/// `iou_negative`, ignored in between. Empty ground truth makes every
/// anchor negative.
pub fn assign_targets(
    anchors: &[Anchor],
    gt_boxes: &[BoundingBox],
    config: &AnchorConfig,
) -> Vec<AnchorAssignment> {
    if gt_boxes.is_empty() {
        return vec![AnchorAssignment::Negative; anchors.len()];
    }
    // Best GT per anchor.
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(anchors.len());
    for a in anchors {
        let mut bi = 0usize;
        let mut bv = -1.0f64;
        for (gi, g) in gt_boxes.iter().enumerate() {
            let v = a.iou(g);
            if v > bv {
                bv = v;
                bi = gi;
            }
        }
        best.push((bi, bv));
    }
    // Rescue: the argmax anchor of each GT is positive for it.
    let mut rescued: Vec<Option<usize>> = vec![None; anchors.len()];
    for (gi, g) in gt_boxes.iter().enumerate() {
        let mut ai_best = 0usize;
        let mut v_best = -1.0f64;
        for (ai, a) in anchors.iter().enumerate() {
            let v = a.iou(g);
            if v > v_best {
                v_best = v;
                ai_best = ai;
            }
        }
        match rescued[ai_best] {
            Some(prev) if anchors[ai_best].iou(&gt_boxes[prev]) >= v_best => {}
            _ => rescued[ai_best] = Some(gi),
        }
    }

    anchors
        .iter()
        .enumerate()
        .map(|(ai, a)| {
            let (bi, bv) = best[ai];
            let gi = if let Some(gi) = rescued[ai] {
                Some(gi)
            } else if bv >= config.iou_positive {
                Some(bi)
            } else {
                None
            };
            match gi {
                Some(gi) => {
                    let g = &gt_boxes[gi];
                    let (gcx, gcy) = g.center();
                    let reg = [
                        (gcx - a.cx) / a.w,
                        (gcy - a.cy) / a.h,
                        (g.width() / a.w).ln(),
                        (g.height() / a.h).ln(),
                    ];
                    AnchorAssignment::Positive {
                        category: g.category,
                        reg,
                    }
                }
                None if bv < config.iou_negative => AnchorAssignment::Negative,
                None => AnchorAssignment::Ignore,
            }
        })
        .collect()
}

/// Which loss heads train on which origin of supervision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadMask {
    pub classification: bool,
    pub regression: bool,
}

impl HeadMask {
    pub fn both() -> Self {
        HeadMask {
            classification: true,
            regression: true,
        }
    }

    pub fn classification_only() -> Self {
        HeadMask {
            classification: true,
            regression: false,
        }
    }

    pub fn regression_only() -> Self {
        HeadMask {
            classification: false,
            regression: true,
        }
    }
}

/// Binary masks on classification and regression loss, per supervision
/// origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossMask {
    pub source: HeadMask,
    pub target: HeadMask,
}

impl LossMask {
    pub fn new(source: HeadMask, target: HeadMask) -> Result<Self> {
        if !(source.classification || source.regression || target.classification || target.regression)
        {
            return Err(Error::Validation(
                "loss mask disables every head for every origin".into(),
            ));
        }
        Ok(LossMask { source, target })
    }

    pub fn full() -> Self {
        LossMask {
            source: HeadMask::both(),
            target: HeadMask::both(),
        }
    }

    pub fn for_origin(&self, origin: Origin) -> HeadMask {
        match origin {
            Origin::SourceLike => self.source,
            Origin::Target => self.target,
        }
    }
}

/// Supervision origin of a training image: ground-truth labeled
/// (source or intermediate) versus pseudo-labeled target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    SourceLike,
    Target,
}

/// A trained detector: backbone plus heads plus its anchor protocol.
#[derive(Debug, Clone)]
pub struct DetectorModel {
    pub net: DetectorNet,
    pub anchor_config: AnchorConfig,
    pub num_categories: usize,
}

impl DetectorModel {
    /// Raw per-anchor outputs for one image: (logits rows [n_anchors x C+1],
    /// regression rows [n_anchors x 4]).
    pub fn forward_rows(
        &self,
        pixels: &Array3<f32>,
    ) -> (ndarray::Array2<f32>, ndarray::Array2<f32>) {
        let x = crate::nn::to_nchw(&[pixels]);
        let (cls_map, reg_map, _) = self.net.forward(&x);
        let a = self.anchor_config.per_cell();
        let rows = net::flatten_maps(&cls_map, &reg_map, a, self.num_categories);
        rows.into_iter().next().expect("one image in, one row set out")
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let join = |v: &[f32]| {
            v.iter()
                .map(f32::to_string)
                .collect::<Vec<_>>()
                .join(",")
        };
        let meta = [
            ("kind", "detector".to_string()),
            ("num_categories", self.num_categories.to_string()),
            ("stride", self.anchor_config.stride.to_string()),
            ("scales", join(&self.anchor_config.scales)),
            ("aspect_ratios", join(&self.anchor_config.aspect_ratios)),
            ("iou_positive", self.anchor_config.iou_positive.to_string()),
            ("iou_negative", self.anchor_config.iou_negative.to_string()),
        ];
        crate::checkpoint::save_checkpoint(path, &meta, &self.net.params())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        use rand::SeedableRng;
        let ckpt = crate::checkpoint::load_checkpoint(path)?;
        if ckpt.kind() != Some("detector") {
            return Err(Error::Validation(format!(
                "checkpoint {} is not a detector",
                path.display()
            )));
        }
        let parse_list = |s: &str| -> Result<Vec<f32>> {
            s.split(',')
                .map(|t| {
                    t.parse::<f32>()
                        .map_err(|_| Error::Validation(format!("bad float {t:?} in checkpoint")))
                })
                .collect()
        };
        let anchor_config = AnchorConfig {
            stride: ckpt.meta_parse("stride")?,
            scales: parse_list(
                ckpt.meta
                    .get("scales")
                    .ok_or_else(|| Error::Validation("missing scales".into()))?,
            )?,
            aspect_ratios: parse_list(
                ckpt.meta
                    .get("aspect_ratios")
                    .ok_or_else(|| Error::Validation("missing aspect_ratios".into()))?,
            )?,
            iou_positive: ckpt.meta_parse("iou_positive")?,
            iou_negative: ckpt.meta_parse("iou_negative")?,
        };
        let num_categories: usize = ckpt.meta_parse("num_categories")?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut net = DetectorNet::new(&mut rng, num_categories, anchor_config.per_cell());
        crate::checkpoint::restore_params(&ckpt, &mut net.params_mut())?;
        Ok(DetectorModel {
            net,
            anchor_config,
            num_categories,
        })
    }
}

/// Decode, filter and suppress raw detector outputs into scored boxes.
///
/// A box survives only if its best foreground probability strictly
/// exceeds `score_floor`; survivors then pass per-category greedy NMS.
pub fn infer(
    model: &DetectorModel,
    pixels: &Array3<f32>,
    score_floor: f64,
    nms_iou: f64,
) -> Result<Vec<BoundingBox>> {
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    let anchors = generate_anchors(&model.anchor_config, (h, w));
    let (cls_rows, reg_rows) = model.forward_rows(pixels);
    debug_assert_eq!(cls_rows.nrows(), anchors.len());

    let probs = crate::nn::softmax_rows(&cls_rows);
    let mut candidates: Vec<BoundingBox> = Vec::new();
    for (ai, anchor) in anchors.iter().enumerate() {
        let row: Vec<f64> = probs.row(ai).iter().map(|&v| f64::from(v)).collect();
        let category = sharpen(&row, score_floor)?;
        if category == 0 {
            continue;
        }
        // Admit on the f32 representation that will be stored, so the
        // strict score > floor invariant survives serialization exactly.
        let score = row[category as usize] as f32;
        if f64::from(score) <= score_floor {
            continue;
        }
        let t = reg_rows.row(ai);
        let cx = anchor.cx + t[0] * anchor.w;
        let cy = anchor.cy + t[1] * anchor.h;
        let bw = anchor.w * t[2].clamp(-6.0, 4.0).exp();
        let bh = anchor.h * t[3].clamp(-6.0, 4.0).exp();
        let x_min = (cx - bw / 2.0).clamp(0.0, w as f32);
        let x_max = (cx + bw / 2.0).clamp(0.0, w as f32);
        let y_min = (cy - bh / 2.0).clamp(0.0, h as f32);
        let y_max = (cy + bh / 2.0).clamp(0.0, h as f32);
        if x_min >= x_max || y_min >= y_max {
            continue;
        }
        candidates.push(BoundingBox {
            category,
            x_min,
            y_min,
            x_max,
            y_max,
            score: Some(score),
        });
    }
    Ok(nms_per_category(candidates, nms_iou))
}

/// Greedy non-maximum suppression within each category: a box is dropped
/// when it overlaps an already-kept box of its category above `nms_iou`.
pub fn nms_per_category(mut boxes: Vec<BoundingBox>, nms_iou: f64) -> Vec<BoundingBox> {
    boxes.sort_by(|a, b| {
        b.score
            .unwrap_or(0.0)
            .partial_cmp(&a.score.unwrap_or(0.0))
            .unwrap()
    });
    let mut kept: Vec<BoundingBox> = Vec::new();
    for b in boxes {
        let suppressed = kept
            .iter()
            .any(|k| k.category == b.category && crate::eval::iou(k, &b) > nms_iou);
        if !suppressed {
            kept.push(b);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_count_arithmetic() {
        let cfg = AnchorConfig {
            stride: 16,
            scales: vec![12.0, 24.0],
            aspect_ratios: vec![1.0],
            ..AnchorConfig::default()
        };
        let anchors = generate_anchors(&cfg, (128, 128));
        assert_eq!(anchors.len(), 8 * 8 * 2);
    }

    #[test]
    fn single_centered_anchor() {
        let cfg = AnchorConfig {
            stride: 64,
            scales: vec![32.0],
            aspect_ratios: vec![1.0],
            ..AnchorConfig::default()
        };
        let anchors = generate_anchors(&cfg, (64, 64));
        assert_eq!(anchors.len(), 1);
        assert_eq!(anchors[0].cx, 32.0);
        assert_eq!(anchors[0].cy, 32.0);
    }

    #[test]
    fn anchors_may_cross_borders() {
        let cfg = AnchorConfig::default();
        let anchors = generate_anchors(&cfg, (128, 128));
        assert!(anchors.iter().any(|a| a.corners().0 < 0.0));
    }

    #[test]
    fn assignment_identity_positive() {
        let cfg = AnchorConfig::default();
        let anchors = vec![Anchor {
            cx: 20.0,
            cy: 20.0,
            w: 16.0,
            h: 16.0,
        }];
        let gt = vec![BoundingBox::new(2, 12.0, 12.0, 28.0, 28.0)];
        let t = assign_targets(&anchors, &gt, &cfg);
        match t[0] {
            AnchorAssignment::Positive { category, reg } => {
                assert_eq!(category, 2);
                for v in reg {
                    assert!(v.abs() < 1e-6);
                }
            }
            other => panic!("expected positive, got {other:?}"),
        }
    }

    #[test]
    fn assignment_disjoint_negative_when_other_anchor_matches() {
        let cfg = AnchorConfig::default();
        let anchors = vec![
            Anchor {
                cx: 20.0,
                cy: 20.0,
                w: 16.0,
                h: 16.0,
            },
            Anchor {
                cx: 100.0,
                cy: 100.0,
                w: 16.0,
                h: 16.0,
            },
        ];
        let gt = vec![BoundingBox::new(1, 12.0, 12.0, 28.0, 28.0)];
        let t = assign_targets(&anchors, &gt, &cfg);
        assert!(matches!(t[0], AnchorAssignment::Positive { .. }));
        assert_eq!(t[1], AnchorAssignment::Negative);
    }

    #[test]
    fn assignment_midband_ignored() {
        let cfg = AnchorConfig::default();
        // IoU 16x16 anchor vs 16x16 box shifted 4px right: inter 12*16=192,
        // union 2*256-192=320 -> 0.6 positive. Shift 8px: inter 128, union
        // 384 -> 1/3, in (0.3, 0.5) -> ignored (second anchor is argmax).
        let anchors = vec![
            Anchor {
                cx: 20.0,
                cy: 20.0,
                w: 16.0,
                h: 16.0,
            },
            Anchor {
                cx: 28.0,
                cy: 20.0,
                w: 16.0,
                h: 16.0,
            },
        ];
        let gt = vec![BoundingBox::new(1, 20.0, 12.0, 36.0, 28.0)];
        let t = assign_targets(&anchors, &gt, &cfg);
        assert_eq!(
            t[0],
            AnchorAssignment::Ignore,
            "IoU 1/3 sits between the thresholds"
        );
        assert!(matches!(t[1], AnchorAssignment::Positive { .. }));
    }

    #[test]
    fn empty_gt_all_negative() {
        let cfg = AnchorConfig::default();
        let anchors = generate_anchors(&cfg, (64, 64));
        let t = assign_targets(&anchors, &[], &cfg);
        assert!(t.iter().all(|a| *a == AnchorAssignment::Negative));
    }

    #[test]
    fn mask_requires_one_enabled_head() {
        let off = HeadMask {
            classification: false,
            regression: false,
        };
        assert!(LossMask::new(off, off).is_err());
        assert!(LossMask::new(off, HeadMask::classification_only()).is_ok());
    }

    #[test]
    fn nms_keeps_higher_score() {
        let a = BoundingBox::new(1, 0.0, 0.0, 10.0, 10.0).with_score(0.9);
        let b = BoundingBox::new(1, 0.0, 0.0, 10.0, 10.0).with_score(0.8);
        let kept = nms_per_category(vec![b, a], 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, Some(0.9));
    }

    #[test]
    fn nms_cross_category_untouched() {
        let a = BoundingBox::new(1, 0.0, 0.0, 10.0, 10.0).with_score(0.9);
        let b = BoundingBox::new(2, 0.0, 0.0, 10.0, 10.0).with_score(0.8);
        assert_eq!(nms_per_category(vec![a, b], 0.5).len(), 2);
    }
}
