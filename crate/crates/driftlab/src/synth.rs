//! Synthetic paired-domain benchmark generation.
//!
//! Two domains share a scene grammar (filled shapes on a plain canvas with
//! exact bounding boxes) but differ in style parameters (brightness,
//! contrast, noise, fog) and in content distribution (object density per
//! image). The target train split is emitted in two views: an unlabeled
//! view consumed by the training pipeline and a sealed ground-truth view
//! consumed only by analysis tooling.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    self, save_annotations, AnnotatedImage, BoundingBox, DatasetManifest, DomainTag, LabelKind,
    ManifestEntry, Split,
};
use crate::error::{Error, Result};
use crate::eval::iou;

pub const CATEGORY_NAMES: [&str; 3] = ["circle", "square", "triangle"];

/// Per-category fill intensity, drawn before style effects; the canvas
/// background sits at [`BACKGROUND_INTENSITY`].
pub const CATEGORY_FILL: [f32; 3] = [0.05, 0.35, 0.65];
pub const BACKGROUND_INTENSITY: f32 = 0.95;

/// Appearance parameters of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleParams {
    pub brightness_offset: f32,
    pub contrast_scale: f32,
    pub noise_sigma: f32,
    pub fog_alpha: f32,
    /// Spatial frequency of the fog field: lattice cells across the
    /// shorter image side.
    pub texture_frequency: f32,
}

impl StyleParams {
    pub fn identity() -> Self {
        StyleParams {
            brightness_offset: 0.0,
            contrast_scale: 1.0,
            noise_sigma: 0.0,
            fog_alpha: 0.0,
            texture_frequency: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-0.5..=0.5).contains(&self.brightness_offset) {
            return Err(Error::Config(format!(
                "brightness_offset {} outside [-0.5, 0.5]",
                self.brightness_offset
            )));
        }
        if !(self.contrast_scale > 0.0 && self.contrast_scale <= 2.0) {
            return Err(Error::Config(format!(
                "contrast_scale {} outside (0, 2]",
                self.contrast_scale
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.fog_alpha) {
            return Err(Error::Config(format!(
                "fog_alpha {} outside [0, 1]",
                self.fog_alpha
            )));
        }
        if self.texture_frequency <= 0.0 {
            return Err(Error::Config("texture_frequency must be > 0".into()));
        }
        Ok(())
    }
}

/// Content-distribution parameters of a domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentParams {
    /// Mean of the truncated Poisson object count.
    pub object_count_mean: f64,
    /// Hard cap on objects per image.
    pub object_count_cap: u32,
    /// Log-uniform size range in pixels (box side).
    pub size_min: f32,
    pub size_max: f32,
    /// Probability of each category, indexed from category 1.
    pub category_mixture: Vec<f64>,
}

/// Style plus content plus geometry: everything defining one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub style: StyleParams,
    pub content: ContentParams,
    pub image_height: usize,
    pub image_width: usize,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        self.style.validate()?;
        let c = &self.content;
        let mix_sum: f64 = c.category_mixture.iter().sum();
        if (mix_sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "category_mixture sums to {mix_sum}, expected 1"
            )));
        }
        if c.category_mixture.len() != CATEGORY_NAMES.len() {
            return Err(Error::Config(format!(
                "category_mixture has {} entries, expected {}",
                c.category_mixture.len(),
                CATEGORY_NAMES.len()
            )));
        }
        if c.category_mixture.iter().any(|&p| p < 0.0) {
            return Err(Error::Config("category_mixture has negative mass".into()));
        }
        if c.size_min < 4.0 {
            return Err(Error::Config(format!(
                "size_min {} below 4 pixels",
                c.size_min
            )));
        }
        let side_cap = self.image_height.min(self.image_width) as f32 / 2.0;
        if c.size_max > side_cap {
            return Err(Error::Config(format!(
                "size_max {} above min(H,W)/2 = {side_cap}",
                c.size_max
            )));
        }
        if c.size_min > c.size_max {
            return Err(Error::Config("size_min > size_max".into()));
        }
        if c.object_count_mean <= 0.0 {
            return Err(Error::Config("object_count_mean must be > 0".into()));
        }
        if c.object_count_mean > c.object_count_cap as f64 {
            return Err(Error::Config(format!(
                "object_count_mean {} exceeds cap {}",
                c.object_count_mean, c.object_count_cap
            )));
        }
        Ok(())
    }

    /// Bright, clean, sparse domain.
    pub fn default_source() -> Self {
        DomainSpec {
            style: StyleParams {
                brightness_offset: 0.03,
                contrast_scale: 1.05,
                noise_sigma: 0.01,
                fog_alpha: 0.0,
                texture_frequency: 4.0,
            },
            content: ContentParams {
                object_count_mean: 3.0,
                object_count_cap: 8,
                size_min: 16.0,
                size_max: 44.0,
                category_mixture: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            },
            image_height: 128,
            image_width: 128,
        }
    }

    /// Dark, noisy, foggy, dense domain.
    pub fn default_target() -> Self {
        DomainSpec {
            style: StyleParams {
                brightness_offset: -0.18,
                contrast_scale: 0.7,
                noise_sigma: 0.05,
                fog_alpha: 0.3,
                texture_frequency: 4.0,
            },
            content: ContentParams {
                object_count_mean: 6.0,
                object_count_cap: 10,
                size_min: 16.0,
                size_max: 44.0,
                category_mixture: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            },
            image_height: 128,
            image_width: 128,
        }
    }

    pub fn category_names() -> Vec<String> {
        CATEGORY_NAMES.iter().map(|s| s.to_string()).collect()
    }
}

/// Deterministic per-image seed derivation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneSeed {
    pub dataset_seed: u64,
    pub image_index: u64,
}

impl SceneSeed {
    pub fn new(dataset_seed: u64, image_index: u64) -> Self {
        SceneSeed {
            dataset_seed,
            image_index,
        }
    }

    /// Stable mix of (dataset_seed, image_index); identical inputs always
    /// yield an identical stream.
    pub fn derive(self) -> u64 {
        let mut x = self
            .dataset_seed
            .wrapping_add(self.image_index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        x = splitmix64(x);
        splitmix64(x ^ self.image_index)
    }
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Poisson(mean) conditioned on `k <= cap`: normalized pmf over 0..=cap.
pub fn truncated_poisson_pmf(mean: f64, cap: u32) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(cap as usize + 1);
    let mut term = (-mean).exp();
    if term == 0.0 {
        // For large means the unnormalized terms underflow; shift into a
        // stable regime by working with ratios from the mode. Caps here
        // are small, so a simple log-space walk suffices.
        let mut logs = Vec::with_capacity(cap as usize + 1);
        let mut lt = -mean;
        logs.push(lt);
        for k in 1..=cap {
            lt += mean.ln() - (k as f64).ln();
            logs.push(lt);
        }
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        pmf = logs.iter().map(|l| (l - m).exp()).collect();
    } else {
        pmf.push(term);
        for k in 1..=cap {
            term *= mean / k as f64;
            pmf.push(term);
        }
    }
    let total: f64 = pmf.iter().sum();
    for p in &mut pmf {
        *p /= total;
    }
    pmf
}

fn sample_from_pmf(pmf: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, p) in pmf.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    pmf.len() - 1
}

const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

/// Pairwise-IoU cap between generated ground-truth boxes; keeps greedy
/// matching unambiguous in oracle tests.
pub const GT_IOU_CAP: f64 = 0.7;

/// Generate one annotated scene. Identical `(spec, seed)` always produces
/// an identical image and annotation; pixels are already quantized to the
/// 8-bit grid so in-memory and reloaded pipelines agree exactly.
pub fn sample_scene(
    spec: &DomainSpec,
    seed: SceneSeed,
    domain_tag: DomainTag,
    image_id: &str,
) -> Result<AnnotatedImage> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.derive());
    let (h, w) = (spec.image_height, spec.image_width);

    let pmf = truncated_poisson_pmf(spec.content.object_count_mean, spec.content.object_count_cap);
    let n = sample_from_pmf(&pmf, &mut rng);

    let mut boxes: Vec<BoundingBox> = Vec::with_capacity(n);
    let mut shapes: Vec<(u32, f32, f32, f32)> = Vec::with_capacity(n); // (cat, cx, cy, size)
    for _ in 0..n {
        let cat = sample_from_pmf(&spec.content.category_mixture, &mut rng) as u32 + 1;
        let s = (rng.gen_range(spec.content.size_min.ln()..=spec.content.size_max.ln())).exp();
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cx = rng.gen_range(s / 2.0..=w as f32 - s / 2.0);
            let cy = rng.gen_range(s / 2.0..=h as f32 - s / 2.0);
            let candidate = BoundingBox::new(cat, cx - s / 2.0, cy - s / 2.0, cx + s / 2.0, cy + s / 2.0);
            if boxes.iter().all(|b| iou(b, &candidate) <= GT_IOU_CAP) {
                boxes.push(candidate);
                shapes.push((cat, cx, cy, s));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place shape {} of {n} within {MAX_PLACEMENT_ATTEMPTS} attempts; spec too dense",
                shapes.len() + 1
            )));
        }
    }

    let mut canvas = Array3::from_elem((h, w, 3), BACKGROUND_INTENSITY);
    for &(cat, cx, cy, s) in &shapes {
        draw_shape(&mut canvas, cat, cx, cy, s);
    }

    let styled = apply_style(&canvas, &spec.style, &mut rng);
    let pixels = styled.mapv(|v| data::quantize(v) as f32 / 255.0);

    let img = AnnotatedImage {
        image_id: image_id.to_string(),
        pixels,
        domain_tag,
        boxes,
        label_kind: LabelKind::GroundTruth,
    };
    img.validate()?;
    Ok(img)
}

fn draw_shape(canvas: &mut Array3<f32>, category: u32, cx: f32, cy: f32, size: f32) {
    let fill = CATEGORY_FILL[(category - 1) as usize];
    let (h, w) = (canvas.shape()[0], canvas.shape()[1]);
    let r = size / 2.0;
    let x0 = (cx - r).floor().max(0.0) as usize;
    let x1 = ((cx + r).ceil() as usize).min(w);
    let y0 = (cy - r).floor().max(0.0) as usize;
    let y1 = ((cy + r).ceil() as usize).min(h);
    for py in y0..y1 {
        for px in x0..x1 {
            let (x, y) = (px as f32 + 0.5, py as f32 + 0.5);
            let inside = match category {
                1 => {
                    let (dx, dy) = (x - cx, y - cy);
                    dx * dx + dy * dy <= r * r
                }
                2 => (x - cx).abs() <= r && (y - cy).abs() <= r,
                3 => {
                    // Isoceles triangle: apex at the top of the box, base
                    // along the bottom, so the analytic box stays tight.
                    let fy = (y - (cy - r)) / size; // 0 at apex row, 1 at base
                    if !(0.0..=1.0).contains(&fy) {
                        false
                    } else {
                        (x - cx).abs() <= r * fy
                    }
                }
                _ => false,
            };
            if inside {
                for ch in 0..3 {
                    canvas[[py, px, ch]] = fill;
                }
            }
        }
    }
}

/// Apply style effects. Geometry is untouched:
/// `out = clip(contrast*(p-0.5)+0.5 + brightness + fog_alpha*(fog-p) + noise, 0, 1)`
/// written in a form that is bit-exact identity for identity parameters.
pub fn apply_style(pixels: &Array3<f32>, style: &StyleParams, rng: &mut impl Rng) -> Array3<f32> {
    let (h, w) = (pixels.shape()[0], pixels.shape()[1]);
    let fog = if style.fog_alpha != 0.0 {
        Some(fog_field(h, w, style.texture_frequency, rng))
    } else {
        None
    };
    let noise: Option<Vec<f32>> = if style.noise_sigma != 0.0 {
        let normal = Normal::new(0.0f32, style.noise_sigma).expect("validated sigma");
        Some((0..h * w).map(|_| normal.sample(rng)).collect())
    } else {
        None
    };

    let mut out = pixels.clone();
    for y in 0..h {
        for x in 0..w {
            let dn = noise.as_ref().map_or(0.0, |n| n[y * w + x]);
            let df = fog.as_ref().map_or(0.0, |f| f[[y, x]]);
            for ch in 0..3 {
                let p = pixels[[y, x, ch]];
                let mut v = p
                    + (style.contrast_scale - 1.0) * (p - 0.5)
                    + style.brightness_offset
                    + style.fog_alpha * (df - p)
                    + dn;
                v = v.clamp(0.0, 1.0);
                out[[y, x, ch]] = v;
            }
        }
    }
    out
}

/// Smooth low-frequency field in [0,1]: a random lattice, bilinearly
/// interpolated.
fn fog_field(h: usize, w: usize, frequency: f32, rng: &mut impl Rng) -> ndarray::Array2<f32> {
    let spacing = h.min(w) as f32 / frequency;
    let gh = (h as f32 / spacing).ceil() as usize + 1;
    let gw = (w as f32 / spacing).ceil() as usize + 1;
    let lattice: Vec<f32> = (0..gh * gw).map(|_| rng.gen::<f32>()).collect();
    let mut field = ndarray::Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let fy = y as f32 / spacing;
            let fx = x as f32 / spacing;
            let (iy, ix) = (fy.floor() as usize, fx.floor() as usize);
            let (ty, tx) = (fy - iy as f32, fx - ix as f32);
            let (iy1, ix1) = ((iy + 1).min(gh - 1), (ix + 1).min(gw - 1));
            let v00 = lattice[iy * gw + ix];
            let v01 = lattice[iy * gw + ix1];
            let v10 = lattice[iy1 * gw + ix];
            let v11 = lattice[iy1 * gw + ix1];
            field[[y, x]] = v00 * (1.0 - ty) * (1.0 - tx)
                + v01 * (1.0 - ty) * tx
                + v10 * ty * (1.0 - tx)
                + v11 * ty * tx;
        }
    }
    field
}

/// The on-disk result of [`build_benchmark`].
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub root: PathBuf,
    pub source_train: DatasetManifest,
    /// Unlabeled view: every record has zero boxes.
    pub target_train: DatasetManifest,
    /// Sealed ground-truth view of the same images; read only by analysis
    /// tooling, never by the training pipeline.
    pub target_train_sealed: DatasetManifest,
    pub target_val: DatasetManifest,
}

pub const SEALED_DIR: &str = "target_train_sealed";

impl Benchmark {
    /// Reopen a benchmark directory written by [`build_benchmark`].
    /// The sealed view is optional: analyses degrade gracefully when it
    /// has been deleted.
    pub fn open(root: impl AsRef<Path>) -> Result<(Self, bool)> {
        let root = root.as_ref().to_path_buf();
        let source_train = DatasetManifest::load(root.join("source_train/manifest.txt"))?;
        let target_train = DatasetManifest::load(root.join("target_train/manifest.txt"))?;
        let target_val = DatasetManifest::load(root.join("target_val/manifest.txt"))?;
        let sealed_path = root.join(SEALED_DIR).join("manifest.txt");
        let (sealed, have_sealed) = if sealed_path.exists() {
            (DatasetManifest::load(&sealed_path)?, true)
        } else {
            (target_train.clone(), false)
        };
        Ok((
            Benchmark {
                root,
                source_train,
                target_train,
                target_train_sealed: sealed,
                target_val,
            },
            have_sealed,
        ))
    }
}

/// Generate the full source/target benchmark under `out_dir`.
///
/// Regeneration from the same `dataset_seed` is byte-identical. Image
/// seeds derive from a global index so per-image work can run in any
/// order or in parallel without changing the output.
pub fn build_benchmark(
    source_spec: &DomainSpec,
    target_spec: &DomainSpec,
    sizes: (usize, usize, usize),
    dataset_seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Benchmark> {
    source_spec.validate()?;
    target_spec.validate()?;
    if source_spec.style == target_spec.style {
        log::warn!("source and target styles are identical: no style gap");
    }
    if source_spec.content == target_spec.content {
        log::warn!("source and target content parameters are identical: no content gap");
    }

    let (n_src, n_tgt, n_val) = sizes;
    let root = out_dir.as_ref().to_path_buf();
    let cats = DomainSpec::category_names();

    let gen_set = |spec: &DomainSpec,
                   tag: DomainTag,
                   prefix: &str,
                   base_index: usize,
                   count: usize|
     -> Result<Vec<AnnotatedImage>> {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let id = format!("{prefix}_{i:05}");
                sample_scene(
                    spec,
                    SceneSeed::new(dataset_seed, (base_index + i) as u64),
                    tag,
                    &id,
                )
            })
            .collect()
    };

    let source_imgs = gen_set(source_spec, DomainTag::Source, "src_train", 0, n_src)?;
    let source_train = save_annotations(
        &source_imgs,
        root.join("source_train"),
        "source_train",
        Split::Train,
        &cats,
    )?;
    drop(source_imgs);

    let target_imgs = gen_set(target_spec, DomainTag::Target, "tgt_train", n_src, n_tgt)?;
    // Unlabeled view: boxes stripped.
    let stripped: Vec<AnnotatedImage> = target_imgs
        .iter()
        .map(|img| AnnotatedImage {
            boxes: Vec::new(),
            ..img.clone()
        })
        .collect();
    let target_train = save_annotations(
        &stripped,
        root.join("target_train"),
        "target_train",
        Split::Train,
        &cats,
    )?;
    drop(stripped);
    let target_train_sealed = save_sealed_view(&target_imgs, &root, &cats)?;
    drop(target_imgs);

    let val_imgs = gen_set(
        target_spec,
        DomainTag::Target,
        "tgt_val",
        n_src + n_tgt,
        n_val,
    )?;
    let target_val = save_annotations(
        &val_imgs,
        root.join("target_val"),
        "target_val",
        Split::Val,
        &cats,
    )?;

    Ok(Benchmark {
        root,
        source_train,
        target_train,
        target_train_sealed,
        target_val,
    })
}

/// Sealed GT view shares the unlabeled view's PNG files: annotations and
/// manifest only, with image paths reaching into `../target_train/images`.
fn save_sealed_view(
    images: &[AnnotatedImage],
    root: &Path,
    categories: &[String],
) -> Result<DatasetManifest> {
    let dir = root.join(SEALED_DIR);
    fs::create_dir_all(dir.join("annotations"))
        .map_err(|e| Error::io(dir.join("annotations"), e))?;
    let entries = images
        .iter()
        .map(|img| {
            img.validate()?;
            let ann_rel = PathBuf::from("annotations").join(format!("{}.txt", img.image_id));
            write_annotation_only(&dir.join(&ann_rel), img)?;
            Ok(ManifestEntry {
                id: img.image_id.clone(),
                image_path: PathBuf::from("../target_train/images")
                    .join(format!("{}.png", img.image_id)),
                annotation_path: ann_rel,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        name: "target_train_sealed".into(),
        split: Split::Train,
        domain_tag: DomainTag::Target,
        categories: categories.to_vec(),
        entries,
        root: dir,
    };
    manifest.save()?;
    Ok(manifest)
}

fn write_annotation_only(path: &Path, img: &AnnotatedImage) -> Result<()> {
    data::write_annotation_record(path, img)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec(mean: f64) -> DomainSpec {
        DomainSpec {
            style: StyleParams::identity(),
            content: ContentParams {
                object_count_mean: mean,
                object_count_cap: 8,
                size_min: 4.0,
                size_max: 10.0,
                category_mixture: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            },
            image_height: 48,
            image_width: 48,
        }
    }

    #[test]
    fn degenerate_density_yields_empty_images() {
        let spec = tiny_spec(1e-9);
        for i in 0..20 {
            let img = sample_scene(&spec, SceneSeed::new(7, i), DomainTag::Source, "t").unwrap();
            assert!(img.boxes.is_empty());
        }
    }

    #[test]
    fn same_seed_identical_output() {
        let spec = DomainSpec::default_target();
        let a = sample_scene(&spec, SceneSeed::new(3, 11), DomainTag::Target, "x").unwrap();
        let b = sample_scene(&spec, SceneSeed::new(3, 11), DomainTag::Target, "x").unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.boxes, b.boxes);
        let c = sample_scene(&spec, SceneSeed::new(3, 12), DomainTag::Target, "x").unwrap();
        assert!(c.pixels != a.pixels || c.boxes != a.boxes);
    }

    #[test]
    fn truncated_poisson_empirical_mean_matches_oracle() {
        // Oracle: direct numeric evaluation of the truncated Poisson mean.
        let (mean, cap) = (3.0, 8u32);
        let pmf = truncated_poisson_pmf(mean, cap);
        let oracle: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        assert!((oracle - mean).abs() < 0.1, "truncation barely moves mean 3 under cap 8");

        let spec = tiny_spec(mean);
        let total: usize = (0..10_000)
            .map(|i| {
                sample_scene(&spec, SceneSeed::new(42, i), DomainTag::Source, "t")
                    .unwrap()
                    .boxes
                    .len()
            })
            .sum();
        let empirical = total as f64 / 10_000.0;
        assert!(
            (empirical - oracle).abs() <= 0.1,
            "empirical {empirical} vs oracle {oracle}"
        );
    }

    #[test]
    fn gt_boxes_respect_iou_cap() {
        let spec = DomainSpec::default_target();
        for i in 0..50 {
            let img = sample_scene(&spec, SceneSeed::new(9, i), DomainTag::Target, "t").unwrap();
            for a in 0..img.boxes.len() {
                for b in (a + 1)..img.boxes.len() {
                    assert!(iou(&img.boxes[a], &img.boxes[b]) <= GT_IOU_CAP + 1e-9);
                }
            }
        }
    }

    #[test]
    fn identity_style_is_exact() {
        let spec = tiny_spec(2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pixels = Array3::from_shape_fn((32, 32, 3), |_| rng.gen::<f32>());
        let out = apply_style(&pixels, &StyleParams::identity(), &mut rng);
        assert_eq!(out, pixels);
        drop(spec);
    }

    #[test]
    fn brightness_shift_analytic() {
        let pixels = Array3::from_elem((16, 16, 3), 0.5f32);
        let style = StyleParams {
            brightness_offset: 0.2,
            ..StyleParams::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = apply_style(&pixels, &style, &mut rng);
        for v in out.iter() {
            assert!((v - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn noise_sigma_empirical() {
        // Oracle: sample statistics over >= 1e5 pixels, pre-clipping regime.
        let pixels = Array3::from_elem((200, 200, 3), 0.5f32);
        let style = StyleParams {
            noise_sigma: 0.05,
            ..StyleParams::identity()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = apply_style(&pixels, &style, &mut rng);
        // One noise draw per pixel position, shared across channels.
        let vals: Vec<f32> = out.slice(ndarray::s![.., .., 0]).iter().copied().collect();
        let n = vals.len() as f64;
        let mean: f64 = vals.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var: f64 = vals.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!(n >= 1e5 * 0.4, "enough samples");
        assert!(
            (std - 0.05).abs() <= 0.005,
            "std {std} not within 10% of 0.05"
        );
    }

    #[test]
    fn style_changes_pixels_not_geometry() {
        let spec = DomainSpec::default_source();
        let seed = SceneSeed::new(5, 0);
        let styled = sample_scene(&spec, seed, DomainTag::Source, "t").unwrap();
        let mut plain_spec = spec.clone();
        plain_spec.style = StyleParams::identity();
        let plain = sample_scene(&plain_spec, seed, DomainTag::Source, "t").unwrap();
        assert_eq!(styled.boxes, plain.boxes);
    }

    #[test]
    fn benchmark_cardinality_and_stripping() {
        let dir = tempfile::tempdir().unwrap();
        let mut src = DomainSpec::default_source();
        let mut tgt = DomainSpec::default_target();
        src.image_height = 64;
        src.image_width = 64;
        src.content.size_max = 28.0;
        tgt.image_height = 64;
        tgt.image_width = 64;
        tgt.content.size_max = 28.0;
        let bench = build_benchmark(&src, &tgt, (12, 10, 5), 77, dir.path()).unwrap();
        assert_eq!(bench.source_train.len(), 12);
        assert_eq!(bench.target_train.len(), 10);
        assert_eq!(bench.target_train_sealed.len(), 10);
        assert_eq!(bench.target_val.len(), 5);

        for (_, boxes) in crate::data::load_boxes(&bench.target_train).unwrap() {
            assert!(boxes.is_empty(), "unlabeled view must carry zero boxes");
        }
        let sealed = crate::data::load_boxes(&bench.target_train_sealed).unwrap();
        assert!(sealed.iter().any(|(_, b)| !b.is_empty()));

        // Sealed view shares the unlabeled view's images.
        let imgs = crate::data::load_annotations(&bench.target_train_sealed).unwrap();
        assert_eq!(imgs.len(), 10);
    }

    #[test]
    fn density_gap_between_default_specs() {
        // Oracle: object-count histograms over generated sets.
        let src = DomainSpec::default_source();
        let tgt = DomainSpec::default_target();
        let count = |spec: &DomainSpec, base: u64| -> f64 {
            let total: usize = (0..500)
                .map(|i| {
                    sample_scene(spec, SceneSeed::new(13, base + i), DomainTag::Source, "t")
                        .unwrap()
                        .boxes
                        .len()
                })
                .sum();
            total as f64 / 500.0
        };
        let sm = count(&src, 0);
        let tm = count(&tgt, 10_000);
        assert!(
            tm - sm >= 1.0,
            "content gap must separate means by >= 1 object: src {sm}, tgt {tm}"
        );
    }
}
