//! Shared domain types, annotation semantics, and on-disk persistence.
//!
//! A dataset on disk is a directory with `images/*.png` (8-bit RGB),
//! `annotations/*.txt` (one structured-text record per image) and a
//! `manifest.txt` listing split, domain tag, category names and the
//! per-image file pairs. The text formats are flat and diffable so golden
//! files stay reviewable.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Category index for a box. Background is the implicit category 0 and is
/// never materialized as a box.
pub type CategoryId = u32;

/// One detection or annotation: category, pixel rectangle, optional
/// confidence. Coordinates are continuous corner coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub category: CategoryId,
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
    /// Confidence in [0,1]; absent for ground truth.
    pub score: Option<f32>,
}

impl BoundingBox {
    pub fn new(category: CategoryId, x_min: f32, y_min: f32, x_max: f32, y_max: f32) -> Self {
        BoundingBox {
            category,
            x_min,
            y_min,
            x_max,
            y_max,
            score: None,
        }
    }

    pub fn with_score(mut self, score: f32) -> Self {
        self.score = Some(score);
        self
    }

    pub fn width(&self) -> f32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f32 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f32, f32) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.category == 0 {
            return Err(Error::Validation(
                "box category 0 is reserved for background and never stored".into(),
            ));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(Error::Validation(format!(
                "degenerate box: [{}, {}, {}, {}]",
                self.x_min, self.y_min, self.x_max, self.y_max
            )));
        }
        if let Some(s) = self.score {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::Validation(format!("score {s} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Which domain an image belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainTag {
    Source,
    Intermediate,
    Target,
}

impl DomainTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Source => "source",
            DomainTag::Intermediate => "intermediate",
            DomainTag::Target => "target",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "source" => Some(DomainTag::Source),
            "intermediate" => Some(DomainTag::Intermediate),
            "target" => Some(DomainTag::Target),
            _ => None,
        }
    }
}

impl fmt::Display for DomainTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Provenance of an annotation set: ground truth, or pseudo labels from
/// self-training round `round`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    GroundTruth,
    Pseudo { round: u32 },
}

impl LabelKind {
    pub fn is_pseudo(self) -> bool {
        matches!(self, LabelKind::Pseudo { .. })
    }
}

/// Train or validation split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            _ => None,
        }
    }
}

/// Image pixels plus an annotation set.
///
/// `pixels` is H×W×3 with values in [0,1].
#[derive(Debug, Clone)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub pixels: Array3<f32>,
    pub domain_tag: DomainTag,
    pub boxes: Vec<BoundingBox>,
    pub label_kind: LabelKind,
}

impl AnnotatedImage {
    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.image_id;
        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(Error::Validation(format!(
                "image id {id:?} is not filesystem-safe"
            )));
        }
        if self.pixels.shape()[2] != 3 {
            return Err(Error::Validation(format!(
                "image {id}: expected 3 channels, got {}",
                self.pixels.shape()[2]
            )));
        }
        let (w, h) = (self.width() as f32, self.height() as f32);
        for b in &self.boxes {
            b.validate()
                .map_err(|e| Error::Validation(format!("image {id}: {e}")))?;
            if b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > w || b.y_max > h {
                return Err(Error::Validation(format!(
                    "image {id}: box [{}, {}, {}, {}] outside [0,{w}]x[0,{h}]",
                    b.x_min, b.y_min, b.x_max, b.y_max
                )));
            }
        }
        if self.label_kind.is_pseudo() {
            if self.domain_tag != DomainTag::Target {
                return Err(Error::Validation(format!(
                    "image {id}: pseudo labels on non-target domain {}",
                    self.domain_tag
                )));
            }
            if let Some(b) = self.boxes.iter().find(|b| b.score.is_none()) {
                return Err(Error::Validation(format!(
                    "image {id}: pseudo box of category {} has no score",
                    b.category
                )));
            }
        }
        Ok(())
    }
}

/// One manifest entry: image id plus file pair, paths relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub annotation_path: PathBuf,
}

/// Dataset listing: split, domain tag, category names (indexed from 1) and
/// per-image file pairs.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub name: String,
    pub split: Split,
    pub domain_tag: DomainTag,
    pub categories: Vec<String>,
    pub entries: Vec<ManifestEntry>,
    /// Directory the manifest lives in; entry paths are relative to it.
    pub root: PathBuf,
}

const MANIFEST_HEADER: &str = "driftlab-manifest v1";
const ANNOTATION_HEADER: &str = "driftlab-annotation v1";

impl DatasetManifest {
    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.txt")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn category_count(&self) -> usize {
        self.categories.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.id) {
                return Err(Error::Validation(format!(
                    "duplicate image id {} in manifest {}",
                    e.id, self.name
                )));
            }
        }
        if self.categories.is_empty() {
            return Err(Error::Validation(format!(
                "manifest {} has no categories",
                self.name
            )));
        }
        for c in &self.categories {
            if c.is_empty() || c.contains(char::is_whitespace) {
                return Err(Error::Validation(format!("bad category name {c:?}")));
            }
        }
        Ok(())
    }

    pub fn save(&self) -> Result<()> {
        self.validate()?;
        let path = self.manifest_path();
        let mut out = String::new();
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        out.push_str(&format!("name {}\n", self.name));
        out.push_str(&format!("split {}\n", self.split.as_str()));
        out.push_str(&format!("domain {}\n", self.domain_tag));
        out.push_str(&format!("categories {}\n", self.categories.join(" ")));
        for e in &self.entries {
            out.push_str(&format!(
                "image {} {} {}\n",
                e.id,
                e.image_path.display(),
                e.annotation_path.display()
            ));
        }
        write_atomic(&path, out.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));

        let mut lines = text.lines().enumerate();
        let perr = |line: usize, msg: String| Error::parse(path, line + 1, msg);

        let (_, header) = lines
            .next()
            .ok_or_else(|| perr(0, "empty manifest".into()))?;
        if header != MANIFEST_HEADER {
            return Err(perr(0, format!("bad header {header:?}")));
        }

        let mut name = None;
        let mut split = None;
        let mut domain = None;
        let mut categories = None;
        let mut entries = Vec::new();

        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap();
            match key {
                "name" => {
                    name = Some(
                        parts
                            .next()
                            .ok_or_else(|| perr(ln, "missing name value".into()))?
                            .to_string(),
                    )
                }
                "split" => {
                    let v = parts
                        .next()
                        .ok_or_else(|| perr(ln, "missing split value".into()))?;
                    split = Some(
                        Split::parse(v).ok_or_else(|| perr(ln, format!("bad split {v:?}")))?,
                    );
                }
                "domain" => {
                    let v = parts
                        .next()
                        .ok_or_else(|| perr(ln, "missing domain value".into()))?;
                    domain = Some(
                        DomainTag::parse(v)
                            .ok_or_else(|| perr(ln, format!("bad domain {v:?}")))?,
                    );
                }
                "categories" => {
                    categories = Some(parts.map(str::to_string).collect::<Vec<_>>());
                }
                "image" => {
                    let id = parts
                        .next()
                        .ok_or_else(|| perr(ln, "image line missing id".into()))?;
                    let img = parts
                        .next()
                        .ok_or_else(|| perr(ln, "image line missing image path".into()))?;
                    let ann = parts
                        .next()
                        .ok_or_else(|| perr(ln, "image line missing annotation path".into()))?;
                    entries.push(ManifestEntry {
                        id: id.to_string(),
                        image_path: PathBuf::from(img),
                        annotation_path: PathBuf::from(ann),
                    });
                }
                other => return Err(perr(ln, format!("unknown manifest key {other:?}"))),
            }
        }

        let manifest = DatasetManifest {
            name: name.ok_or_else(|| perr(0, "manifest missing name".into()))?,
            split: split.ok_or_else(|| perr(0, "manifest missing split".into()))?,
            domain_tag: domain.ok_or_else(|| perr(0, "manifest missing domain".into()))?,
            categories: categories.ok_or_else(|| perr(0, "manifest missing categories".into()))?,
            entries,
            root,
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Persist a set of annotated images under `directory` in the standard
/// layout and return the written manifest.
///
/// All images must share one domain tag; round-trips are lossless up to
/// float-to-text serialization, which in Rust reproduces every `f32`
/// exactly.
pub fn save_annotations(
    images: &[AnnotatedImage],
    directory: impl AsRef<Path>,
    name: &str,
    split: Split,
    categories: &[String],
) -> Result<DatasetManifest> {
    let dir = directory.as_ref();
    let domain_tag = match images.first() {
        Some(img) => img.domain_tag,
        None => {
            return Err(Error::Validation(format!(
                "refusing to save empty dataset {name}"
            )))
        }
    };
    for img in images {
        img.validate()?;
        if img.domain_tag != domain_tag {
            return Err(Error::Validation(format!(
                "image {}: mixed domain tags in one dataset ({} vs {})",
                img.image_id, img.domain_tag, domain_tag
            )));
        }
        for b in &img.boxes {
            if b.category as usize > categories.len() {
                return Err(Error::Validation(format!(
                    "image {}: category {} exceeds {} named categories",
                    img.image_id,
                    b.category,
                    categories.len()
                )));
            }
        }
    }

    fs::create_dir_all(dir.join("images")).map_err(|e| Error::io(dir.join("images"), e))?;
    fs::create_dir_all(dir.join("annotations"))
        .map_err(|e| Error::io(dir.join("annotations"), e))?;

    let entries = images
        .par_iter()
        .map(|img| {
            let image_rel = PathBuf::from("images").join(format!("{}.png", img.image_id));
            let ann_rel = PathBuf::from("annotations").join(format!("{}.txt", img.image_id));
            save_png(&dir.join(&image_rel), &img.pixels)?;
            write_annotation(&dir.join(&ann_rel), img)?;
            Ok(ManifestEntry {
                id: img.image_id.clone(),
                image_path: image_rel,
                annotation_path: ann_rel,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest {
        name: name.to_string(),
        split,
        domain_tag,
        categories: categories.to_vec(),
        entries,
        root: dir.to_path_buf(),
    };
    manifest.save()?;
    Ok(manifest)
}

/// Load every image listed in the manifest, in manifest order, with all
/// type invariants re-validated.
pub fn load_annotations(manifest: &DatasetManifest) -> Result<Vec<AnnotatedImage>> {
    manifest.validate()?;
    manifest
        .entries
        .par_iter()
        .map(|entry| load_entry(manifest, entry))
        .collect()
}

fn load_entry(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<AnnotatedImage> {
    let img_path = manifest.root.join(&entry.image_path);
    let ann_path = manifest.root.join(&entry.annotation_path);
    let pixels = load_png(&img_path)?;
    let record = read_annotation(&ann_path)?;
    if record.id != entry.id {
        return Err(Error::Validation(format!(
            "annotation {} names image {} but manifest entry is {}",
            ann_path.display(),
            record.id,
            entry.id
        )));
    }
    if record.width != pixels.shape()[1] || record.height != pixels.shape()[0] {
        return Err(Error::Validation(format!(
            "image {}: annotation size {}x{} does not match png {}x{}",
            entry.id,
            record.width,
            record.height,
            pixels.shape()[1],
            pixels.shape()[0]
        )));
    }
    let img = AnnotatedImage {
        image_id: record.id,
        pixels,
        domain_tag: manifest.domain_tag,
        boxes: record.boxes,
        label_kind: record.label_kind,
    };
    img.validate()?;
    Ok(img)
}

/// Load only the annotation records (boxes and label kinds) of a manifest,
/// skipping pixel decode. Used by metric and histogram passes.
pub fn load_boxes(manifest: &DatasetManifest) -> Result<Vec<(String, Vec<BoundingBox>)>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let rec = read_annotation(&manifest.root.join(&e.annotation_path))?;
            Ok((rec.id, rec.boxes))
        })
        .collect()
}

struct AnnotationRecord {
    id: String,
    width: usize,
    height: usize,
    label_kind: LabelKind,
    boxes: Vec<BoundingBox>,
}

/// Write just the annotation record for an image (no PNG). Used for views
/// that share image files with another dataset directory.
pub fn write_annotation_record(path: &Path, img: &AnnotatedImage) -> Result<()> {
    write_annotation(path, img)
}

/// Annotation record from parts, for writers that hold no pixel data.
pub fn write_annotation_parts(
    path: &Path,
    image_id: &str,
    width: usize,
    height: usize,
    label_kind: LabelKind,
    boxes: &[BoundingBox],
) -> Result<()> {
    let mut out = String::new();
    out.push_str(ANNOTATION_HEADER);
    out.push('\n');
    out.push_str(&format!("image {image_id}\n"));
    out.push_str(&format!("size {width} {height}\n"));
    match label_kind {
        LabelKind::GroundTruth => out.push_str("labels ground_truth\n"),
        LabelKind::Pseudo { round } => out.push_str(&format!("labels pseudo {round}\n")),
    }
    for b in boxes {
        match b.score {
            Some(s) => out.push_str(&format!(
                "box {} {} {} {} {} {}\n",
                b.category, b.x_min, b.y_min, b.x_max, b.y_max, s
            )),
            None => out.push_str(&format!(
                "box {} {} {} {} {}\n",
                b.category, b.x_min, b.y_min, b.x_max, b.y_max
            )),
        }
    }
    write_atomic(path, out.as_bytes())
}

/// Image sizes recorded in a manifest's annotation files, keyed by id.
pub fn annotation_sizes(
    manifest: &DatasetManifest,
) -> Result<std::collections::HashMap<String, (usize, usize)>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            let rec = read_annotation(&manifest.root.join(&e.annotation_path))?;
            Ok((rec.id, (rec.width, rec.height)))
        })
        .collect()
}

fn write_annotation(path: &Path, img: &AnnotatedImage) -> Result<()> {
    let mut out = String::new();
    out.push_str(ANNOTATION_HEADER);
    out.push('\n');
    out.push_str(&format!("image {}\n", img.image_id));
    out.push_str(&format!("size {} {}\n", img.width(), img.height()));
    match img.label_kind {
        LabelKind::GroundTruth => out.push_str("labels ground_truth\n"),
        LabelKind::Pseudo { round } => out.push_str(&format!("labels pseudo {round}\n")),
    }
    for b in &img.boxes {
        match b.score {
            Some(s) => out.push_str(&format!(
                "box {} {} {} {} {} {}\n",
                b.category, b.x_min, b.y_min, b.x_max, b.y_max, s
            )),
            None => out.push_str(&format!(
                "box {} {} {} {} {}\n",
                b.category, b.x_min, b.y_min, b.x_max, b.y_max
            )),
        }
    }
    write_atomic(path, out.as_bytes())
}

fn read_annotation(path: &Path) -> Result<AnnotationRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::parse(path, line + 1, msg);

    let mut id = None;
    let mut size = None;
    let mut label_kind = None;
    let mut boxes = Vec::new();

    for (ln, line) in text.lines().enumerate() {
        if ln == 0 {
            if line != ANNOTATION_HEADER {
                return Err(perr(ln, format!("bad header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next().unwrap() {
            "image" => {
                id = Some(
                    parts
                        .next()
                        .ok_or_else(|| perr(ln, "missing image id".into()))?
                        .to_string(),
                )
            }
            "size" => {
                let w: usize = parse_field(parts.next(), path, ln, "width")?;
                let h: usize = parse_field(parts.next(), path, ln, "height")?;
                size = Some((w, h));
            }
            "labels" => {
                let kind = parts
                    .next()
                    .ok_or_else(|| perr(ln, "missing label kind".into()))?;
                label_kind = Some(match kind {
                    "ground_truth" => LabelKind::GroundTruth,
                    "pseudo" => {
                        let round: u32 = parse_field(parts.next(), path, ln, "round")?;
                        LabelKind::Pseudo { round }
                    }
                    other => return Err(perr(ln, format!("unknown label kind {other:?}"))),
                });
            }
            "box" => {
                let category: u32 = parse_field(parts.next(), path, ln, "category")?;
                let x_min: f32 = parse_field(parts.next(), path, ln, "x_min")?;
                let y_min: f32 = parse_field(parts.next(), path, ln, "y_min")?;
                let x_max: f32 = parse_field(parts.next(), path, ln, "x_max")?;
                let y_max: f32 = parse_field(parts.next(), path, ln, "y_max")?;
                let score = match parts.next() {
                    Some(tok) => Some(tok.parse::<f32>().map_err(|_| {
                        perr(ln, format!("field score: bad float {tok:?}"))
                    })?),
                    None => None,
                };
                let b = BoundingBox {
                    category,
                    x_min,
                    y_min,
                    x_max,
                    y_max,
                    score,
                };
                b.validate()?;
                boxes.push(b);
            }
            other => return Err(perr(ln, format!("unknown annotation key {other:?}"))),
        }
    }

    let (width, height) = size.ok_or_else(|| perr(0, "annotation missing size".into()))?;
    Ok(AnnotationRecord {
        id: id.ok_or_else(|| perr(0, "annotation missing image id".into()))?,
        width,
        height,
        label_kind: label_kind.ok_or_else(|| perr(0, "annotation missing labels line".into()))?,
        boxes,
    })
}

fn parse_field<T: std::str::FromStr>(
    tok: Option<&str>,
    path: &Path,
    line: usize,
    field: &str,
) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(path, line + 1, format!("missing field {field}")))?;
    tok.parse::<T>()
        .map_err(|_| Error::parse(path, line + 1, format!("field {field}: bad value {tok:?}")))
}

/// Save H×W×3 pixels in [0,1] as an 8-bit RGB PNG.
pub fn save_png(path: &Path, pixels: &Array3<f32>) -> Result<()> {
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    let mut buf = Vec::with_capacity(h * w * 3);
    for row in 0..h {
        for col in 0..w {
            for ch in 0..3 {
                buf.push(quantize(pixels[[row, col, ch]]));
            }
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, buf)
        .expect("buffer sized from shape");
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

/// Load an 8-bit RGB PNG into H×W×3 floats in [0,1].
pub fn load_png(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut pixels = Array3::zeros((h, w, 3));
    for (x, y, p) in img.enumerate_pixels() {
        for ch in 0..3 {
            pixels[[y as usize, x as usize, ch]] = p.0[ch] as f32 / 255.0;
        }
    }
    Ok(pixels)
}

/// Quantize a [0,1] float to the 8-bit grid. Generation quantizes pixels
/// before annotation so in-memory and reloaded pipelines see identical data.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, v: f32) -> Array3<f32> {
        Array3::from_elem((h, w, 3), v)
    }

    fn cats() -> Vec<String> {
        vec!["circle".into(), "square".into(), "triangle".into()]
    }

    #[test]
    fn save_load_empty_boxes() {
        let dir = tempfile::tempdir().unwrap();
        let img = AnnotatedImage {
            image_id: "img_0".into(),
            pixels: gray(16, 16, 0.5),
            domain_tag: DomainTag::Source,
            boxes: vec![],
            label_kind: LabelKind::GroundTruth,
        };
        let m = save_annotations(&[img], dir.path(), "tiny", Split::Train, &cats()).unwrap();
        assert_eq!(m.len(), 1);
        let loaded = load_annotations(&m).unwrap();
        assert_eq!(loaded.len(), 1);
        assert!(loaded[0].boxes.is_empty());
    }

    #[test]
    fn pseudo_round_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let mk = |i: usize| AnnotatedImage {
            image_id: format!("t_{i}"),
            pixels: gray(8, 8, 0.3),
            domain_tag: DomainTag::Target,
            boxes: vec![BoundingBox::new(2, 1.0, 1.0, 5.0, 6.5).with_score(0.75)],
            label_kind: LabelKind::Pseudo { round: 1 },
        };
        let imgs = vec![mk(0), mk(1)];
        let m = save_annotations(&imgs, dir.path(), "ps", Split::Train, &cats()).unwrap();
        let loaded = load_annotations(&m).unwrap();
        for img in &loaded {
            assert_eq!(img.label_kind, LabelKind::Pseudo { round: 1 });
            assert_eq!(img.boxes[0].score, Some(0.75));
        }
    }

    #[test]
    fn degenerate_box_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = AnnotatedImage {
            image_id: "bad".into(),
            pixels: gray(8, 8, 0.3),
            domain_tag: DomainTag::Source,
            boxes: vec![BoundingBox::new(1, 3.0, 1.0, 3.0, 6.0)],
            label_kind: LabelKind::GroundTruth,
        };
        let err = save_annotations(&[img], dir.path(), "bad", Split::Train, &cats()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad"), "error should name the image id: {msg}");
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let img = AnnotatedImage {
            image_id: "gone".into(),
            pixels: gray(8, 8, 0.3),
            domain_tag: DomainTag::Source,
            boxes: vec![],
            label_kind: LabelKind::GroundTruth,
        };
        let m = save_annotations(&[img], dir.path(), "io", Split::Train, &cats()).unwrap();
        fs::remove_file(dir.path().join("images/gone.png")).unwrap();
        match load_annotations(&m) {
            Err(Error::Io { .. }) => {}
            other => panic!("expected io error, got {other:?}"),
        }
    }

    #[test]
    fn category_zero_rejected_on_parse() {
        let dir = tempfile::tempdir().unwrap();
        let img = AnnotatedImage {
            image_id: "z".into(),
            pixels: gray(8, 8, 0.3),
            domain_tag: DomainTag::Source,
            boxes: vec![BoundingBox::new(1, 0.0, 0.0, 4.0, 4.0)],
            label_kind: LabelKind::GroundTruth,
        };
        let m = save_annotations(&[img], dir.path(), "zc", Split::Train, &cats()).unwrap();
        let ann = dir.path().join("annotations/z.txt");
        let doctored = fs::read_to_string(&ann)
            .unwrap()
            .replace("box 1", "box 0");
        fs::write(&ann, doctored).unwrap();
        assert!(load_annotations(&m).is_err());
    }

    #[test]
    fn pseudo_on_source_rejected() {
        let img = AnnotatedImage {
            image_id: "x".into(),
            pixels: gray(8, 8, 0.3),
            domain_tag: DomainTag::Source,
            boxes: vec![],
            label_kind: LabelKind::Pseudo { round: 0 },
        };
        assert!(img.validate().is_err());
    }
}
