//! Confidence-based hard pseudo labeling on the target domain, plus
//! versioned pseudo-label set management with single-writer, strictly
//! increasing rounds.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::{
    load_annotations, AnnotatedImage, BoundingBox, DatasetManifest, DomainTag, LabelKind,
    ManifestEntry, Split,
};
use crate::detect::{infer, DetectorModel};
use crate::error::{Error, Result};

/// Collapse a predicted probability vector over C+1 categories (index 0 =
/// background) to a hard category.
///
/// Let m be the best foreground probability: the result is its category
/// when m strictly exceeds `conf`, background otherwise. Foreground ties
/// break toward the lowest index.
pub fn sharpen(probabilities: &[f64], conf: f64) -> Result<u32> {
    let sum: f64 = probabilities.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!(
            "probability vector sums to {sum}, expected 1 within 1e-6"
        )));
    }
    if probabilities.len() < 2 {
        return Err(Error::Validation(
            "probability vector needs background plus at least one category".into(),
        ));
    }
    let mut best_idx = 1usize;
    let mut best = probabilities[1];
    for (i, &p) in probabilities.iter().enumerate().skip(2) {
        if p > best {
            best = p;
            best_idx = i;
        }
    }
    if best > conf {
        Ok(best_idx as u32)
    } else {
        Ok(0)
    }
}

/// A versioned pseudo-label set: provenance plus per-image hard-labeled
/// boxes, every box retaining the score that admitted it.
#[derive(Debug, Clone)]
pub struct PseudoLabelSet {
    pub round: u32,
    pub annotator_id: String,
    pub confidence_threshold: f64,
    pub images: Vec<(String, Vec<BoundingBox>)>,
}

impl PseudoLabelSet {
    pub fn validate(&self) -> Result<()> {
        for (id, boxes) in &self.images {
            for b in boxes {
                b.validate()?;
                match b.score {
                    Some(s) if f64::from(s) > self.confidence_threshold => {}
                    Some(s) => {
                        return Err(Error::Validation(format!(
                            "image {id}: pseudo box score {s} not strictly above threshold {}",
                            self.confidence_threshold
                        )))
                    }
                    None => {
                        return Err(Error::Validation(format!(
                            "image {id}: pseudo box without score"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn box_count(&self) -> usize {
        self.images.iter().map(|(_, b)| b.len()).sum()
    }
}

/// Run the detector over an unlabeled target manifest and keep only
/// predictions whose confidence strictly exceeds `conf`.
///
/// `infer` applies the same sharpening semantics with `score_floor =
/// conf`, so one threshold governs filtering and hard labeling.
pub fn annotate(
    model: &DetectorModel,
    target_images: &DatasetManifest,
    conf: f64,
    nms_iou: f64,
    round: u32,
    annotator_id: &str,
) -> Result<PseudoLabelSet> {
    if target_images.domain_tag != DomainTag::Target {
        return Err(Error::Validation(format!(
            "pseudo labeling expects a target manifest, got {}",
            target_images.domain_tag
        )));
    }
    let images = load_annotations(target_images)?;
    if let Some(img) = images.iter().find(|img| !img.boxes.is_empty()) {
        return Err(Error::Validation(format!(
            "image {} carries boxes; pseudo labeling consumes the unlabeled view only",
            img.image_id
        )));
    }
    annotate_images(model, &images, conf, nms_iou, round, annotator_id)
}

/// In-memory variant of [`annotate`]; images must be unlabeled target
/// frames.
pub fn annotate_images(
    model: &DetectorModel,
    images: &[AnnotatedImage],
    conf: f64,
    nms_iou: f64,
    round: u32,
    annotator_id: &str,
) -> Result<PseudoLabelSet> {
    let stride = model.anchor_config.stride;
    let per_image: Vec<(String, Vec<BoundingBox>)> = images
        .par_iter()
        .map(|img| {
            let (h, w) = (img.height(), img.width());
            if h % stride != 0 || w % stride != 0 {
                return Err(Error::Validation(format!(
                    "image {} is {h}x{w}, incompatible with model stride {stride}",
                    img.image_id
                )));
            }
            let boxes = infer(model, &img.pixels, conf, nms_iou)?;
            Ok((img.image_id.clone(), boxes))
        })
        .collect::<Result<Vec<_>>>()?;

    let set = PseudoLabelSet {
        round,
        annotator_id: annotator_id.to_string(),
        confidence_threshold: conf,
        images: per_image,
    };
    set.validate()?;
    Ok(set)
}

const SET_HEADER: &str = "driftlab-pseudoset v1";

/// Directory of pseudo-label rounds with a single-writer contract:
/// `round_<r>` directories only ever appear with strictly increasing r.
#[derive(Debug, Clone)]
pub struct PseudoStore {
    root: PathBuf,
}

impl PseudoStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        PseudoStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn rounds(&self) -> Vec<u32> {
        let mut out = Vec::new();
        if let Ok(entries) = fs::read_dir(&self.root) {
            for e in entries.flatten() {
                if let Some(name) = e.file_name().to_str() {
                    if let Some(r) = name.strip_prefix("round_") {
                        if let Ok(r) = r.parse::<u32>() {
                            out.push(r);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn round_dir(&self, round: u32) -> PathBuf {
        self.root.join(format!("round_{round}"))
    }

    /// Persist a set in the standard annotation format plus a set-level
    /// header. Image files are shared with the unlabeled target manifest.
    pub fn write_set(
        &self,
        set: &PseudoLabelSet,
        target_manifest: &DatasetManifest,
    ) -> Result<DatasetManifest> {
        set.validate()?;
        if let Some(&latest) = self.rounds().last() {
            if latest >= set.round {
                return Err(Error::Validation(format!(
                    "pseudo round {} may only be replaced by a later round, store already holds {latest}",
                    set.round
                )));
            }
        }
        let dir = self.round_dir(set.round);
        fs::create_dir_all(dir.join("annotations"))
            .map_err(|e| Error::io(dir.join("annotations"), e))?;

        let entry_by_id: std::collections::HashMap<&str, &ManifestEntry> = target_manifest
            .entries
            .iter()
            .map(|e| (e.id.as_str(), e))
            .collect();
        let sizes = crate::data::annotation_sizes(target_manifest)?;

        let mut entries = Vec::with_capacity(set.images.len());
        for (id, boxes) in &set.images {
            let src_entry = entry_by_id.get(id.as_str()).ok_or_else(|| {
                Error::Validation(format!("pseudo set names image {id} absent from manifest"))
            })?;
            let &(w, h) = sizes.get(id).ok_or_else(|| {
                Error::Validation(format!("no recorded size for image {id}"))
            })?;
            let abs_image = target_manifest.root.join(&src_entry.image_path);
            let ann_rel = PathBuf::from("annotations").join(format!("{id}.txt"));
            crate::data::write_annotation_parts(
                &dir.join(&ann_rel),
                id,
                w,
                h,
                LabelKind::Pseudo { round: set.round },
                boxes,
            )?;
            entries.push(ManifestEntry {
                id: id.clone(),
                image_path: relative_from(&abs_image, &dir),
                annotation_path: ann_rel,
            });
        }

        let manifest = DatasetManifest {
            name: format!("pseudo_round_{}", set.round),
            split: Split::Train,
            domain_tag: DomainTag::Target,
            categories: target_manifest.categories.clone(),
            entries,
            root: dir.clone(),
        };
        manifest.save()?;

        let header = format!(
            "{SET_HEADER}\nround {}\nannotator {}\nconf {}\n",
            set.round, set.annotator_id, set.confidence_threshold
        );
        fs::write(dir.join("set.txt"), header).map_err(|e| Error::io(dir.join("set.txt"), e))?;
        Ok(manifest)
    }

    /// Read a round back: provenance header plus per-image boxes, in
    /// manifest order.
    pub fn read_set(&self, round: u32) -> Result<(PseudoLabelSet, DatasetManifest)> {
        let dir = self.round_dir(round);
        let manifest = DatasetManifest::load(dir.join("manifest.txt"))?;
        let header_path = dir.join("set.txt");
        let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let mut hround = None;
        let mut annotator = None;
        let mut conf = None;
        for (ln, line) in text.lines().enumerate() {
            if ln == 0 {
                if line != SET_HEADER {
                    return Err(Error::parse(&header_path, 1, format!("bad header {line:?}")));
                }
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("round") => {
                    hround = Some(parts.next().and_then(|t| t.parse::<u32>().ok()).ok_or_else(
                        || Error::parse(&header_path, ln + 1, "bad round".to_string()),
                    )?)
                }
                Some("annotator") => annotator = parts.next().map(str::to_string),
                Some("conf") => {
                    conf = Some(parts.next().and_then(|t| t.parse::<f64>().ok()).ok_or_else(
                        || Error::parse(&header_path, ln + 1, "bad conf".to_string()),
                    )?)
                }
                Some(other) => {
                    return Err(Error::parse(
                        &header_path,
                        ln + 1,
                        format!("unknown key {other:?}"),
                    ))
                }
                None => {}
            }
        }
        let images = crate::data::load_boxes(&manifest)?;
        let set = PseudoLabelSet {
            round: hround
                .ok_or_else(|| Error::parse(&header_path, 0, "missing round".to_string()))?,
            annotator_id: annotator
                .ok_or_else(|| Error::parse(&header_path, 0, "missing annotator".to_string()))?,
            confidence_threshold: conf
                .ok_or_else(|| Error::parse(&header_path, 0, "missing conf".to_string()))?,
            images,
        };
        set.validate()?;
        Ok((set, manifest))
    }
}

/// Express `target` relative to `base` when both share a prefix;
/// falls back to the absolute path.
fn relative_from(target: &Path, base: &Path) -> PathBuf {
    let t: Vec<_> = target.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = t.iter().zip(b.iter()).take_while(|(a, c)| a == c).count();
    if common == 0 {
        return target.to_path_buf();
    }
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for comp in &t[common..] {
        out.push(comp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sharpen_argmax_above_threshold() {
        assert_eq!(sharpen(&[0.03, 0.05, 0.92], 0.6).unwrap(), 2);
    }

    #[test]
    fn sharpen_below_threshold_is_background() {
        assert_eq!(sharpen(&[0.25, 0.40, 0.35], 0.6).unwrap(), 0);
    }

    #[test]
    fn sharpen_strict_inequality_at_equality() {
        assert_eq!(sharpen(&[0.3, 0.7], 0.7).unwrap(), 0);
    }

    #[test]
    fn sharpen_tie_breaks_to_lowest_index() {
        assert_eq!(sharpen(&[0.2, 0.4, 0.4], 0.3).unwrap(), 1);
    }

    #[test]
    fn sharpen_rejects_non_simplex() {
        assert!(sharpen(&[0.5, 0.6], 0.5).is_err());
    }

    #[test]
    fn sharpen_one_hot_idempotent() {
        for conf in [0.1, 0.5, 0.9] {
            assert_eq!(sharpen(&[0.0, 0.0, 1.0], conf).unwrap(), 2);
        }
    }

    #[test]
    fn store_rounds_strictly_increase() {
        let dir = tempfile::tempdir().unwrap();
        let bench_dir = dir.path().join("bench");
        let imgs = vec![AnnotatedImage {
            image_id: "t_0".into(),
            pixels: ndarray::Array3::from_elem((16, 16, 3), 0.4),
            domain_tag: DomainTag::Target,
            boxes: vec![],
            label_kind: LabelKind::GroundTruth,
        }];
        let manifest = crate::data::save_annotations(
            &imgs,
            &bench_dir,
            "target_train",
            Split::Train,
            &crate::synth::DomainSpec::category_names(),
        )
        .unwrap();

        let store = PseudoStore::new(dir.path().join("pseudo"));
        let set0 = PseudoLabelSet {
            round: 0,
            annotator_id: "a0".into(),
            confidence_threshold: 0.6,
            images: vec![(
                "t_0".into(),
                vec![BoundingBox::new(1, 1.0, 1.0, 5.0, 5.0).with_score(0.9)],
            )],
        };
        store.write_set(&set0, &manifest).unwrap();
        assert_eq!(store.rounds(), vec![0]);

        // Same round again: rejected.
        assert!(store.write_set(&set0, &manifest).is_err());

        let mut set1 = set0.clone();
        set1.round = 1;
        set1.confidence_threshold = 0.8;
        store.write_set(&set1, &manifest).unwrap();
        assert_eq!(store.rounds(), vec![0, 1]);

        let (read, m) = store.read_set(1).unwrap();
        assert_eq!(read.round, 1);
        assert_eq!(read.annotator_id, "a0");
        assert_eq!(read.confidence_threshold, 0.8);
        assert_eq!(read.images[0].1[0].score, Some(0.9));
        // The pseudo manifest resolves to the shared target image files.
        let loaded = load_annotations(&m).unwrap();
        assert_eq!(loaded[0].label_kind, LabelKind::Pseudo { round: 1 });
    }

    #[test]
    fn set_rejects_scores_at_threshold() {
        let set = PseudoLabelSet {
            round: 0,
            annotator_id: "a".into(),
            confidence_threshold: 0.5,
            images: vec![(
                "x".into(),
                vec![BoundingBox::new(1, 0.0, 0.0, 2.0, 2.0).with_score(0.5)],
            )],
        };
        assert!(set.validate().is_err());
    }
}
