//! Exact detection metrics: IoU, greedy matching, AP/mAP at a single IoU
//! threshold, plus pseudo-label quality and object-density analyses.
//!
//! AP uses all-point interpolation: the precision envelope is made
//! monotonically non-increasing from the right and integrated exactly, so
//! results are checkable against brute-force enumeration with no tolerance.

use std::collections::HashMap;

use crate::data::{BoundingBox, DatasetManifest};
use crate::error::{Error, Result};

/// Intersection-over-union of two boxes; 0 when disjoint.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = f64::from(a.x_max.min(b.x_max)) - f64::from(a.x_min.max(b.x_min));
    let iy = f64::from(a.y_max.min(b.y_max)) - f64::from(a.y_min.max(b.y_min));
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = f64::from(a.area()) + f64::from(b.area()) - inter;
    inter / union
}

/// Predictions and ground truth for one image.
#[derive(Debug, Clone, Default)]
pub struct EvalPair {
    pub predictions: Vec<BoundingBox>,
    pub ground_truth: Vec<BoundingBox>,
}

/// Greedy matching for one image and one category.
///
/// Predictions are processed in descending score order (stable on ties);
/// each matches the unmatched ground-truth box of the same category with
/// highest IoU >= `iou_threshold`. Returns `(prediction index, is_tp)` in
/// the processing order.
pub fn match_detections(
    predictions: &[BoundingBox],
    gt_boxes: &[BoundingBox],
    iou_threshold: f64,
    category: u32,
) -> Vec<(usize, bool)> {
    let mut order: Vec<usize> = (0..predictions.len())
        .filter(|&i| predictions[i].category == category)
        .collect();
    order.sort_by(|&a, &b| {
        let sa = predictions[a].score.unwrap_or(0.0);
        let sb = predictions[b].score.unwrap_or(0.0);
        sb.partial_cmp(&sa).unwrap()
    });

    let gts: Vec<usize> = (0..gt_boxes.len())
        .filter(|&i| gt_boxes[i].category == category)
        .collect();
    let mut taken = vec![false; gt_boxes.len()];
    let mut flags = Vec::with_capacity(order.len());
    for &pi in &order {
        let mut best: Option<(usize, f64)> = None;
        for &gi in &gts {
            if taken[gi] {
                continue;
            }
            let v = iou(&predictions[pi], &gt_boxes[gi]);
            if v >= iou_threshold && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, _)) => {
                taken[gi] = true;
                flags.push((pi, true));
            }
            None => flags.push((pi, false)),
        }
    }
    flags
}

/// Average precision for one category over a set of images, or `None` when
/// the category has no ground-truth boxes.
pub fn average_precision(images: &[EvalPair], category: u32, iou_threshold: f64) -> Option<f64> {
    let n_gt: usize = images
        .iter()
        .map(|p| {
            p.ground_truth
                .iter()
                .filter(|b| b.category == category)
                .count()
        })
        .sum();
    if n_gt == 0 {
        return None;
    }

    // Pool (score, tp) across images, then rank globally.
    let mut dets: Vec<(f32, bool)> = Vec::new();
    for pair in images {
        for (pi, tp) in match_detections(
            &pair.predictions,
            &pair.ground_truth,
            iou_threshold,
            category,
        ) {
            dets.push((pair.predictions[pi].score.unwrap_or(0.0), tp));
        }
    }
    dets.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    Some(ap_from_flags(&dets.iter().map(|d| d.1).collect::<Vec<_>>(), n_gt))
}

/// Area under the precision-recall curve given ranked TP/FP flags.
///
/// The envelope precision at rank k is max over precisions at ranks >= k;
/// each true positive contributes envelope / n_gt of area.
pub fn ap_from_flags(flags: &[bool], n_gt: usize) -> f64 {
    assert!(n_gt > 0);
    let n = flags.len();
    let mut precision = vec![0.0f64; n];
    let mut tp = 0usize;
    for k in 0..n {
        if flags[k] {
            tp += 1;
        }
        precision[k] = tp as f64 / (k + 1) as f64;
    }
    // Monotone non-increasing envelope from the right.
    let mut envelope = precision.clone();
    for k in (0..n.saturating_sub(1)).rev() {
        if envelope[k + 1] > envelope[k] {
            envelope[k] = envelope[k + 1];
        }
    }
    let mut ap = 0.0f64;
    for k in 0..n {
        if flags[k] {
            ap += envelope[k] / n_gt as f64;
        }
    }
    ap
}

/// Per-category AP at a single IoU threshold plus aggregate counts.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub categories: Vec<String>,
    /// Indexed by category - 1; `None` when the category has no GT boxes.
    pub per_category_ap: Vec<Option<f64>>,
    pub map: f64,
    pub image_count: usize,
    pub gt_count: usize,
    pub prediction_count: usize,
    pub quality: Option<QualityBlock>,
    pub density: Option<DensityBlock>,
}

impl EvalReport {
    pub fn ap_of(&self, category: u32) -> Option<f64> {
        self.per_category_ap
            .get(category as usize - 1)
            .copied()
            .flatten()
    }

    /// One CSV row set: header plus a line per category and a mAP line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,category,value\n");
        for (i, ap) in self.per_category_ap.iter().enumerate() {
            if let Some(v) = ap {
                out.push_str(&format!("ap,{},{v}\n", self.categories[i]));
            }
        }
        out.push_str(&format!("map,all,{}\n", self.map));
        out.push_str(&format!("images,all,{}\n", self.image_count));
        out.push_str(&format!("gt_boxes,all,{}\n", self.gt_count));
        out.push_str(&format!("predictions,all,{}\n", self.prediction_count));
        if let Some(q) = &self.quality {
            out.push_str(&format!("gt_coverage,all,{}\n", q.coverage));
        }
        if let Some(d) = &self.density {
            out.push_str(&format!("density_mean,all,{}\n", d.mean));
        }
        out
    }
}

/// Evaluate predictions against ground truth; mAP averages the categories
/// that have at least one GT box.
pub fn evaluate_detections(
    pairs: &[EvalPair],
    categories: &[String],
    iou_threshold: f64,
) -> Result<EvalReport> {
    let mut per_category_ap = Vec::with_capacity(categories.len());
    for c in 1..=categories.len() as u32 {
        per_category_ap.push(average_precision(pairs, c, iou_threshold));
    }
    let present: Vec<f64> = per_category_ap.iter().filter_map(|a| *a).collect();
    if present.is_empty() {
        return Err(Error::UndefinedMetric(
            "no category has any ground-truth box; mAP undefined".into(),
        ));
    }
    let map = present.iter().sum::<f64>() / present.len() as f64;
    Ok(EvalReport {
        iou_threshold,
        categories: categories.to_vec(),
        per_category_ap,
        map,
        image_count: pairs.len(),
        gt_count: pairs.iter().map(|p| p.ground_truth.len()).sum(),
        prediction_count: pairs.iter().map(|p| p.predictions.len()).sum(),
        quality: None,
        density: None,
    })
}

/// IoU-confidence histogram and GT coverage for a pseudo-label set held
/// against sealed ground truth. Analysis mode only.
#[derive(Debug, Clone)]
pub struct QualityBlock {
    /// `hist[conf_bin][iou_bin]`, 10x10 bins on [0,1]^2.
    pub hist: [[u32; 10]; 10],
    /// Fraction of GT boxes overlapped by some pseudo box at IoU > 0.5.
    pub coverage: f64,
    pub pseudo_box_count: usize,
    pub gt_box_count: usize,
}

fn bin10(v: f64) -> usize {
    ((v * 10.0).floor() as usize).min(9)
}

/// Compare per-image pseudo boxes with per-image GT boxes (matched by
/// image id). IoU here is geometric, category-agnostic.
pub fn quality_report(
    pseudo: &[(String, Vec<BoundingBox>)],
    sealed_gt: &[(String, Vec<BoundingBox>)],
) -> Result<QualityBlock> {
    let gt_by_id: HashMap<&str, &Vec<BoundingBox>> =
        sealed_gt.iter().map(|(id, b)| (id.as_str(), b)).collect();
    if pseudo.len() != sealed_gt.len() {
        return Err(Error::Validation(format!(
            "pseudo set has {} images but sealed GT has {}",
            pseudo.len(),
            sealed_gt.len()
        )));
    }

    let mut hist = [[0u32; 10]; 10];
    let mut covered = 0usize;
    let mut gt_total = 0usize;
    let mut pseudo_total = 0usize;

    for (id, pboxes) in pseudo {
        let gts = gt_by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Validation(format!("image id {id} missing from sealed GT")))?;
        pseudo_total += pboxes.len();
        gt_total += gts.len();
        for pb in pboxes.iter() {
            let max_iou = gts.iter().map(|g| iou(pb, g)).fold(0.0f64, f64::max);
            let conf = f64::from(pb.score.unwrap_or(0.0));
            hist[bin10(conf)][bin10(max_iou)] += 1;
        }
        for g in gts.iter() {
            let max_iou = pboxes.iter().map(|pb| iou(pb, g)).fold(0.0f64, f64::max);
            if max_iou > 0.5 {
                covered += 1;
            }
        }
    }

    let coverage = if gt_total == 0 {
        0.0
    } else {
        covered as f64 / gt_total as f64
    };
    Ok(QualityBlock {
        hist,
        coverage,
        pseudo_box_count: pseudo_total,
        gt_box_count: gt_total,
    })
}

/// Per-image object-count histogram and its mean.
#[derive(Debug, Clone)]
pub struct DensityBlock {
    /// `histogram[n]` = number of images with exactly n boxes.
    pub histogram: Vec<u32>,
    pub mean: f64,
}

pub fn density_of_counts(counts: &[usize]) -> DensityBlock {
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut histogram = vec![0u32; max + 1];
    for &c in counts {
        histogram[c] += 1;
    }
    let mean = if counts.is_empty() {
        0.0
    } else {
        counts.iter().sum::<usize>() as f64 / counts.len() as f64
    };
    DensityBlock { histogram, mean }
}

/// Count boxes per image across a labeled manifest.
pub fn density_histogram(manifest: &DatasetManifest) -> Result<DensityBlock> {
    let per_image = crate::data::load_boxes(manifest)?;
    let counts: Vec<usize> = per_image.iter().map(|(_, b)| b.len()).collect();
    Ok(density_of_counts(&counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(cat: u32, x0: f32, y0: f32, x1: f32, y1: f32) -> BoundingBox {
        BoundingBox::new(cat, x0, y0, x1, y1)
    }

    #[test]
    fn iou_identity_disjoint_analytic() {
        let a = bx(1, 0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        let b = bx(1, 20.0, 20.0, 30.0, 30.0);
        assert_eq!(iou(&a, &b), 0.0);
        let c = bx(1, 5.0, 5.0, 15.0, 15.0);
        let v = iou(&a, &c);
        assert!((v - 1.0 / 7.0).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn iou_symmetric_scale_invariant() {
        let a = bx(1, 1.0, 2.0, 4.0, 8.0);
        let b = bx(1, 2.0, 3.0, 6.0, 7.0);
        assert_eq!(iou(&a, &b), iou(&b, &a));
        let k = 3.0;
        let ak = bx(1, 1.0 * k, 2.0 * k, 4.0 * k, 8.0 * k);
        let bk = bx(1, 2.0 * k, 3.0 * k, 6.0 * k, 7.0 * k);
        assert!((iou(&a, &b) - iou(&ak, &bk)).abs() < 1e-12);
    }

    #[test]
    fn matching_single_use_gt() {
        let gt = vec![bx(1, 0.0, 0.0, 10.0, 10.0)];
        let preds = vec![
            bx(1, 0.0, 0.0, 10.0, 10.0).with_score(0.9),
            bx(1, 0.0, 0.0, 10.0, 10.0).with_score(0.8),
        ];
        let flags = match_detections(&preds, &gt, 0.5, 1);
        assert_eq!(flags, vec![(0, true), (1, false)]);
    }

    #[test]
    fn matching_exact_prediction() {
        let gt = vec![bx(2, 3.0, 4.0, 9.0, 12.0)];
        let preds = vec![bx(2, 3.0, 4.0, 9.0, 12.0).with_score(0.7)];
        assert_eq!(match_detections(&preds, &gt, 0.5, 2), vec![(0, true)]);
    }

    #[test]
    fn ap_single_tp_is_one() {
        let pairs = vec![EvalPair {
            predictions: vec![bx(1, 0.0, 0.0, 10.0, 10.0).with_score(0.9)],
            ground_truth: vec![bx(1, 0.0, 0.0, 10.0, 10.0)],
        }];
        assert_eq!(average_precision(&pairs, 1, 0.5), Some(1.0));
    }

    #[test]
    fn ap_fp_then_tp_is_half() {
        // Higher-scored FP, then a TP on the single GT.
        let pairs = vec![EvalPair {
            predictions: vec![
                bx(1, 50.0, 50.0, 60.0, 60.0).with_score(0.9),
                bx(1, 0.0, 0.0, 10.0, 10.0).with_score(0.8),
            ],
            ground_truth: vec![bx(1, 0.0, 0.0, 10.0, 10.0)],
        }];
        assert_eq!(average_precision(&pairs, 1, 0.5), Some(0.5));
    }

    #[test]
    fn map_excludes_absent_categories() {
        let cats = vec!["a".to_string(), "b".to_string()];
        let pairs = vec![EvalPair {
            predictions: vec![bx(1, 0.0, 0.0, 10.0, 10.0).with_score(0.9)],
            ground_truth: vec![bx(1, 0.0, 0.0, 10.0, 10.0)],
        }];
        let report = evaluate_detections(&pairs, &cats, 0.5).unwrap();
        assert_eq!(report.per_category_ap[0], Some(1.0));
        assert_eq!(report.per_category_ap[1], None);
        assert_eq!(report.map, 1.0);
    }

    #[test]
    fn map_undefined_without_any_gt() {
        let cats = vec!["a".to_string()];
        let pairs = vec![EvalPair::default()];
        assert!(matches!(
            evaluate_detections(&pairs, &cats, 0.5),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn quality_identical_sets() {
        let boxes = vec![bx(1, 0.0, 0.0, 10.0, 10.0).with_score(1.0)];
        let pseudo = vec![("i0".to_string(), boxes.clone())];
        let gt = vec![("i0".to_string(), vec![bx(1, 0.0, 0.0, 10.0, 10.0)])];
        let q = quality_report(&pseudo, &gt).unwrap();
        assert_eq!(q.coverage, 1.0);
        assert_eq!(q.hist[9][9], 1);
    }

    #[test]
    fn quality_empty_pseudo() {
        let pseudo = vec![("i0".to_string(), vec![])];
        let gt = vec![("i0".to_string(), vec![bx(1, 0.0, 0.0, 10.0, 10.0)])];
        let q = quality_report(&pseudo, &gt).unwrap();
        assert_eq!(q.coverage, 0.0);
    }

    #[test]
    fn quality_two_of_three_covered() {
        let gt = vec![(
            "i0".to_string(),
            vec![
                bx(1, 0.0, 0.0, 10.0, 10.0),
                bx(1, 20.0, 20.0, 30.0, 30.0),
                bx(1, 40.0, 40.0, 50.0, 50.0),
            ],
        )];
        let pseudo = vec![(
            "i0".to_string(),
            vec![
                bx(1, 0.0, 0.0, 10.0, 9.0).with_score(0.9),
                bx(1, 20.0, 20.0, 30.0, 29.0).with_score(0.8),
            ],
        )];
        let q = quality_report(&pseudo, &gt).unwrap();
        assert!((q.coverage - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn coverage_monotone_in_pseudo_boxes() {
        let gt = vec![(
            "i0".to_string(),
            vec![bx(1, 0.0, 0.0, 10.0, 10.0), bx(1, 20.0, 20.0, 30.0, 30.0)],
        )];
        let small = vec![(
            "i0".to_string(),
            vec![bx(1, 0.0, 0.0, 10.0, 10.0).with_score(0.9)],
        )];
        let mut larger = small.clone();
        larger[0]
            .1
            .push(bx(1, 20.0, 20.0, 30.0, 30.0).with_score(0.6));
        let a = quality_report(&small, &gt).unwrap().coverage;
        let b = quality_report(&larger, &gt).unwrap().coverage;
        assert!(b >= a);
    }

    #[test]
    fn density_counts() {
        let d = density_of_counts(&[0, 0, 0]);
        assert_eq!(d.histogram, vec![3]);
        assert_eq!(d.mean, 0.0);

        let d = density_of_counts(&[1, 3, 2, 2]);
        assert_eq!(d.histogram, vec![0, 1, 2, 1]);
        assert_eq!(d.histogram.iter().sum::<u32>(), 4);
        assert!((d.mean - 2.0).abs() < 1e-12);
    }
}
