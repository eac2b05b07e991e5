//! Patch-restricted cyclic style translation.
//!
//! Two fully-convolutional generators map between domains; two patch
//! discriminators judge realism under a least-squares adversarial
//! objective; an L1 cycle constraint ties the pair together. The
//! receptive-field restriction is realized purely through the training
//! crop size: models train on random p x p crops and run on full frames.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{load_annotations, AnnotatedImage, DatasetManifest, DomainTag, Split};
use crate::error::{Error, Result};
use crate::nn::{l1_loss, mse_const, zero_grads, Adam, Conv2d, LeakyRelu, Param, Tanh01, Upsample2x, T4};
use crate::synth::splitmix64;

pub const ALLOWED_PATCH_SIZES: [usize; 3] = [32, 64, 128];

/// Spatial granularity the generators up/downsample by; inputs pad to a
/// multiple of this and outputs crop back.
const GRID: usize = 8;

const ACT_SLOPE: f32 = 0.2;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TranslatorHyperparams {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub cycle_weight: f32,
}

impl Default for TranslatorHyperparams {
    fn default() -> Self {
        TranslatorHyperparams {
            epochs: 20,
            batch: 4,
            lr: 2e-4,
            cycle_weight: 10.0,
        }
    }
}

/// Encoder-decoder generator: three stride-2 stages, two residual blocks,
/// three nearest-upsample stages, tanh-bounded output in (0,1).
#[derive(Debug, Clone)]
pub struct Generator {
    d1: Conv2d,
    d2: Conv2d,
    d3: Conv2d,
    r1a: Conv2d,
    r1b: Conv2d,
    r2a: Conv2d,
    r2b: Conv2d,
    u1: Conv2d,
    u2: Conv2d,
    u3: Conv2d,
    out: Conv2d,
    act: LeakyRelu,
    head: Tanh01,
    up: Upsample2x,
}

pub struct GenCache {
    xc: T4,
    p1: T4,
    y1: T4,
    p2: T4,
    y2: T4,
    p3: T4,
    y3: T4,
    r1p: T4,
    r1y: T4,
    h1: T4,
    r2p: T4,
    r2y: T4,
    s1: T4,
    p4: T4,
    s2: T4,
    p5: T4,
    s3: T4,
    p6: T4,
    y6: T4,
    yo: T4,
}

impl Generator {
    pub fn new(rng: &mut impl Rng, name: &str) -> Self {
        Generator {
            d1: Conv2d::new(rng, &format!("{name}.d1"), 3, 16, 3, 2),
            d2: Conv2d::new(rng, &format!("{name}.d2"), 16, 32, 3, 2),
            d3: Conv2d::new(rng, &format!("{name}.d3"), 32, 48, 3, 2),
            r1a: Conv2d::new(rng, &format!("{name}.r1a"), 48, 48, 3, 1),
            r1b: Conv2d::new(rng, &format!("{name}.r1b"), 48, 48, 3, 1),
            r2a: Conv2d::new(rng, &format!("{name}.r2a"), 48, 48, 3, 1),
            r2b: Conv2d::new(rng, &format!("{name}.r2b"), 48, 48, 3, 1),
            u1: Conv2d::new(rng, &format!("{name}.u1"), 48, 32, 3, 1),
            u2: Conv2d::new(rng, &format!("{name}.u2"), 32, 16, 3, 1),
            u3: Conv2d::new(rng, &format!("{name}.u3"), 16, 12, 3, 1),
            out: Conv2d::new(rng, &format!("{name}.out"), 12, 3, 3, 1),
            act: LeakyRelu::new(ACT_SLOPE),
            head: Tanh01,
            up: Upsample2x,
        }
    }

    /// Input must have spatial dims divisible by [`GRID`]; see
    /// [`translate_full`] for arbitrary sizes.
    pub fn forward(&self, x: &T4) -> (T4, GenCache) {
        let xc = x.mapv(|v| 2.0 * (v - 0.5));
        let p1 = self.d1.forward(&xc);
        let y1 = self.act.forward(&p1);
        let p2 = self.d2.forward(&y1);
        let y2 = self.act.forward(&p2);
        let p3 = self.d3.forward(&y2);
        let y3 = self.act.forward(&p3);

        let r1p = self.r1a.forward(&y3);
        let r1y = self.act.forward(&r1p);
        let h1 = &y3 + &self.r1b.forward(&r1y);
        let r2p = self.r2a.forward(&h1);
        let r2y = self.act.forward(&r2p);
        let h2 = &h1 + &self.r2b.forward(&r2y);

        let s1 = self.up.forward(&h2);
        let p4 = self.u1.forward(&s1);
        let y4 = self.act.forward(&p4);
        let s2 = self.up.forward(&y4);
        let p5 = self.u2.forward(&s2);
        let y5 = self.act.forward(&p5);
        let s3 = self.up.forward(&y5);
        let p6 = self.u3.forward(&s3);
        let y6 = self.act.forward(&p6);
        let p7 = self.out.forward(&y6);
        let yo = self.head.forward(&p7);

        let cache = GenCache {
            xc,
            p1,
            y1,
            p2,
            y2,
            p3,
            y3,
            r1p,
            r1y,
            h1,
            r2p,
            r2y,
            s1,
            p4,
            s2,
            p5,
            s3,
            p6,
            y6,
            yo: yo.clone(),
        };
        (yo, cache)
    }

    /// Accumulates parameter gradients; returns dL/d(input image).
    pub fn backward(&mut self, cache: &GenCache, dy: &T4) -> T4 {
        let dp7 = self.head.backward(&cache.yo, dy);
        let dy6 = self.out.backward(&cache.y6, &dp7);
        let dp6 = self.act.backward(&cache.p6, &dy6);
        let ds3 = self.u3.backward(&cache.s3, &dp6);
        let dy5 = self.up.backward(&ds3);
        let dp5 = self.act.backward(&cache.p5, &dy5);
        let ds2 = self.u2.backward(&cache.s2, &dp5);
        let dy4 = self.up.backward(&ds2);
        let dp4 = self.act.backward(&cache.p4, &dy4);
        let ds1 = self.u1.backward(&cache.s1, &dp4);
        let dh2 = self.up.backward(&ds1);

        // h2 = h1 + r2b(act(r2a(h1)))
        let dr2y = self.r2b.backward(&cache.r2y, &dh2);
        let dr2p = self.act.backward(&cache.r2p, &dr2y);
        let mut dh1 = self.r2a.backward(&cache.h1, &dr2p);
        dh1 += &dh2;
        // h1 = y3 + r1b(act(r1a(y3)))
        let dr1y = self.r1b.backward(&cache.r1y, &dh1);
        let dr1p = self.act.backward(&cache.r1p, &dr1y);
        let mut dy3 = self.r1a.backward(&cache.y3, &dr1p);
        dy3 += &dh1;

        let dp3 = self.act.backward(&cache.p3, &dy3);
        let dy2 = self.d3.backward(&cache.y2, &dp3);
        let dp2 = self.act.backward(&cache.p2, &dy2);
        let dy1 = self.d2.backward(&cache.y1, &dp2);
        let dp1 = self.act.backward(&cache.p1, &dy1);
        let dxc = self.d1.backward(&cache.xc, &dp1);
        dxc.mapv(|v| 2.0 * v)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for c in [
            &mut self.d1,
            &mut self.d2,
            &mut self.d3,
            &mut self.r1a,
            &mut self.r1b,
            &mut self.r2a,
            &mut self.r2b,
            &mut self.u1,
            &mut self.u2,
            &mut self.u3,
            &mut self.out,
        ] {
            v.extend(c.params_mut());
        }
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for c in [
            &self.d1, &self.d2, &self.d3, &self.r1a, &self.r1b, &self.r2a, &self.r2b, &self.u1,
            &self.u2, &self.u3, &self.out,
        ] {
            v.extend(c.params());
        }
        v
    }
}

/// Three-layer patch classifier emitting a logit map; each logit judges a
/// local receptive field of roughly 29 pixels.
#[derive(Debug, Clone)]
pub struct Discriminator {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
    act: LeakyRelu,
}

pub struct DiscCache {
    xc: T4,
    p1: T4,
    y1: T4,
    p2: T4,
    y2: T4,
}

impl Discriminator {
    pub fn new(rng: &mut impl Rng, name: &str) -> Self {
        Discriminator {
            c1: Conv2d::new(rng, &format!("{name}.c1"), 3, 16, 5, 2),
            c2: Conv2d::new(rng, &format!("{name}.c2"), 16, 32, 5, 2),
            c3: Conv2d::new(rng, &format!("{name}.c3"), 32, 1, 5, 1),
            act: LeakyRelu::new(ACT_SLOPE),
        }
    }

    pub fn forward(&self, x: &T4) -> (T4, DiscCache) {
        let xc = x.mapv(|v| 2.0 * (v - 0.5));
        let p1 = self.c1.forward(&xc);
        let y1 = self.act.forward(&p1);
        let p2 = self.c2.forward(&y1);
        let y2 = self.act.forward(&p2);
        let logits = self.c3.forward(&y2);
        (
            logits,
            DiscCache {
                xc,
                p1,
                y1,
                p2,
                y2,
            },
        )
    }

    pub fn backward(&mut self, cache: &DiscCache, dy: &T4) -> T4 {
        let dy2 = self.c3.backward(&cache.y2, dy);
        let dp2 = self.act.backward(&cache.p2, &dy2);
        let dy1 = self.c2.backward(&cache.y1, &dp2);
        let dp1 = self.act.backward(&cache.p1, &dy1);
        let dxc = self.c1.backward(&cache.xc, &dp1);
        dxc.mapv(|v| 2.0 * v)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        for c in [&mut self.c1, &mut self.c2, &mut self.c3] {
            v.extend(c.params_mut());
        }
        v
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        for c in [&self.c1, &self.c2, &self.c3] {
            v.extend(c.params());
        }
        v
    }
}

/// The trained translation pair plus its training-time patch restriction.
#[derive(Debug, Clone)]
pub struct TranslatorModel {
    pub g_s2t: Generator,
    pub g_t2s: Generator,
    pub d_s: Discriminator,
    pub d_t: Discriminator,
    pub patch_size: usize,
    pub hyperparams: TranslatorHyperparams,
}

impl TranslatorModel {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let hp = &self.hyperparams;
        let meta = [
            ("kind", "translator".to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("epochs", hp.epochs.to_string()),
            ("batch", hp.batch.to_string()),
            ("lr", hp.lr.to_string()),
            ("cycle_weight", hp.cycle_weight.to_string()),
        ];
        let mut params = self.g_s2t.params();
        params.extend(self.g_t2s.params());
        params.extend(self.d_s.params());
        params.extend(self.d_t.params());
        crate::checkpoint::save_checkpoint(path, &meta, &params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let ckpt = crate::checkpoint::load_checkpoint(path)?;
        if ckpt.kind() != Some("translator") {
            return Err(Error::Validation(format!(
                "checkpoint {} is not a translator",
                path.display()
            )));
        }
        let hp = TranslatorHyperparams {
            epochs: ckpt.meta_parse("epochs")?,
            batch: ckpt.meta_parse("batch")?,
            lr: ckpt.meta_parse("lr")?,
            cycle_weight: ckpt.meta_parse("cycle_weight")?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = TranslatorModel {
            g_s2t: Generator::new(&mut rng, "g_s2t"),
            g_t2s: Generator::new(&mut rng, "g_t2s"),
            d_s: Discriminator::new(&mut rng, "d_s"),
            d_t: Discriminator::new(&mut rng, "d_t"),
            patch_size: ckpt.meta_parse("patch_size")?,
            hyperparams: hp,
        };
        let mut params = model.g_s2t.params_mut();
        params.extend(model.g_t2s.params_mut());
        params.extend(model.d_s.params_mut());
        params.extend(model.d_t.params_mut());
        crate::checkpoint::restore_params(&ckpt, &mut params)?;
        drop(params);
        Ok(model)
    }
}

/// Per-epoch mean loss components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub g_adv_s2t: f32,
    pub g_adv_t2s: f32,
    pub d_source: f32,
    pub d_target: f32,
    pub cycle: f32,
}

impl EpochLosses {
    pub fn is_finite(&self) -> bool {
        self.g_adv_s2t.is_finite()
            && self.g_adv_t2s.is_finite()
            && self.d_source.is_finite()
            && self.d_target.is_finite()
            && self.cycle.is_finite()
    }
}

/// Train the cyclic pair on random p x p crops.
pub fn train_translator(
    source_images: &[Array3<f32>],
    target_images: &[Array3<f32>],
    patch_size: usize,
    hp: &TranslatorHyperparams,
    seed: u64,
) -> Result<(TranslatorModel, Vec<EpochLosses>)> {
    if source_images.is_empty() || target_images.is_empty() {
        return Err(Error::Config("both image pools must be non-empty".into()));
    }
    if !ALLOWED_PATCH_SIZES.contains(&patch_size) {
        return Err(Error::Config(format!(
            "patch size {patch_size} not in {ALLOWED_PATCH_SIZES:?}"
        )));
    }
    for img in source_images.iter().chain(target_images) {
        let side = img.shape()[0].min(img.shape()[1]);
        if side < patch_size {
            return Err(Error::Config(format!(
                "patch size {patch_size} exceeds an image side {side}"
            )));
        }
    }
    if hp.epochs == 0 || hp.batch == 0 {
        return Err(Error::Config("epochs and batch must be >= 1".into()));
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x7a15_11fe));
    let mut model = TranslatorModel {
        g_s2t: Generator::new(&mut init_rng, "g_s2t"),
        g_t2s: Generator::new(&mut init_rng, "g_t2s"),
        d_s: Discriminator::new(&mut init_rng, "d_s"),
        d_t: Discriminator::new(&mut init_rng, "d_t"),
        patch_size,
        hyperparams: hp.clone(),
    };
    let mut crop_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xc407_0ff5));
    let mut g_opt = Adam::with_betas(hp.lr, 0.5, 0.999);
    let mut d_opt = Adam::with_betas(hp.lr, 0.5, 0.999);

    let steps = source_images.len().div_ceil(hp.batch);
    let mut history = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        let mut acc = EpochLosses {
            g_adv_s2t: 0.0,
            g_adv_t2s: 0.0,
            d_source: 0.0,
            d_target: 0.0,
            cycle: 0.0,
        };
        for _ in 0..steps {
            let x = sample_crops(source_images, patch_size, hp.batch, &mut crop_rng);
            let y = sample_crops(target_images, patch_size, hp.batch, &mut crop_rng);

            // Generator phase.
            let (fake_t, c_s2t) = model.g_s2t.forward(&x);
            let (fake_s, c_t2s) = model.g_t2s.forward(&y);
            let (cyc_s, c_cyc_s) = model.g_t2s.forward(&fake_t);
            let (cyc_t, c_cyc_t) = model.g_s2t.forward(&fake_s);

            zero_grads(&mut model.g_s2t.params_mut());
            zero_grads(&mut model.g_t2s.params_mut());

            let (adv_s2t, d_fake_t_logits) = {
                let (logits, dcache) = model.d_t.forward(&fake_t);
                let (l, dl) = mse_const(&logits, 1.0);
                (l, model.d_t.backward(&dcache, &dl))
            };
            let (adv_t2s, d_fake_s_logits) = {
                let (logits, dcache) = model.d_s.forward(&fake_s);
                let (l, dl) = mse_const(&logits, 1.0);
                (l, model.d_s.backward(&dcache, &dl))
            };

            let (cyc_loss_s, d_cyc_s) = l1_loss(&cyc_s, &x);
            let (cyc_loss_t, d_cyc_t) = l1_loss(&cyc_t, &y);
            let cycle = cyc_loss_s + cyc_loss_t;

            // Backprop cycle branches through the inner generators.
            let w = hp.cycle_weight;
            let d_fake_t_cyc = model
                .g_t2s
                .backward(&c_cyc_s, &d_cyc_s.mapv(|v| v * w));
            let d_fake_s_cyc = model
                .g_s2t
                .backward(&c_cyc_t, &d_cyc_t.mapv(|v| v * w));
            let d_fake_t = &d_fake_t_cyc + &d_fake_t_logits;
            let d_fake_s = &d_fake_s_cyc + &d_fake_s_logits;
            model.g_s2t.backward(&c_s2t, &d_fake_t);
            model.g_t2s.backward(&c_t2s, &d_fake_s);

            let mut g_params = model.g_s2t.params_mut();
            g_params.extend(model.g_t2s.params_mut());
            g_opt.step(&mut g_params);
            drop(g_params);

            // Discriminator phase (fakes held fixed).
            zero_grads(&mut model.d_s.params_mut());
            zero_grads(&mut model.d_t.params_mut());
            let d_t_loss = disc_step(&mut model.d_t, &y, &fake_t);
            let d_s_loss = disc_step(&mut model.d_s, &x, &fake_s);
            let mut d_params = model.d_s.params_mut();
            d_params.extend(model.d_t.params_mut());
            d_opt.step(&mut d_params);
            drop(d_params);

            acc.g_adv_s2t += adv_s2t;
            acc.g_adv_t2s += adv_t2s;
            acc.d_source += d_s_loss;
            acc.d_target += d_t_loss;
            acc.cycle += cycle;
        }
        let inv = 1.0 / steps as f32;
        let losses = EpochLosses {
            g_adv_s2t: acc.g_adv_s2t * inv,
            g_adv_t2s: acc.g_adv_t2s * inv,
            d_source: acc.d_source * inv,
            d_target: acc.d_target * inv,
            cycle: acc.cycle * inv,
        };
        if !losses.is_finite() {
            return Err(Error::Diverged {
                epoch,
                msg: format!("translator losses {losses:?}"),
            });
        }
        history.push(losses);
    }
    Ok((model, history))
}

/// Least-squares update for one discriminator: real toward 1, fake toward
/// 0, halved as usual.
fn disc_step(disc: &mut Discriminator, real: &T4, fake: &T4) -> f32 {
    let (logits_r, cache_r) = disc.forward(real);
    let (l_r, dl_r) = mse_const(&logits_r, 1.0);
    disc.backward(&cache_r, &dl_r.mapv(|v| 0.5 * v));
    let (logits_f, cache_f) = disc.forward(fake);
    let (l_f, dl_f) = mse_const(&logits_f, 0.0);
    disc.backward(&cache_f, &dl_f.mapv(|v| 0.5 * v));
    0.5 * (l_r + l_f)
}

fn sample_crops(
    images: &[Array3<f32>],
    p: usize,
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> T4 {
    let mut out = T4::zeros((batch, 3, p, p));
    for b in 0..batch {
        let img = &images[rng.gen_range(0..images.len())];
        let (h, w) = (img.shape()[0], img.shape()[1]);
        let oy = rng.gen_range(0..=h - p);
        let ox = rng.gen_range(0..=w - p);
        for yy in 0..p {
            for xx in 0..p {
                for c in 0..3 {
                    out[[b, c, yy, xx]] = img[[oy + yy, ox + xx, c]];
                }
            }
        }
    }
    out
}

/// Translate a full frame of any size >= the training patch: pad with
/// edge replication to the generator grid, run, crop back, clip to [0,1].
pub fn translate_full(model: &TranslatorModel, image: &Array3<f32>) -> Array3<f32> {
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let ph = h.div_ceil(GRID) * GRID;
    let pw = w.div_ceil(GRID) * GRID;
    let mut padded = Array3::zeros((ph, pw, 3));
    for y in 0..ph {
        for x in 0..pw {
            let sy = y.min(h - 1);
            let sx = x.min(w - 1);
            for c in 0..3 {
                padded[[y, x, c]] = image[[sy, sx, c]];
            }
        }
    }
    let xb = crate::nn::to_nchw(&[&padded]);
    let (yb, _) = model.g_s2t.forward(&xb);
    let full = crate::nn::to_hwc(&yb);
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out[[y, x, c]] = full[[y, x, c]].clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Structural similarity of the two images' gradient-magnitude maps:
/// 1.0 exactly when the edge maps coincide, clamped to [0,1].
pub fn content_preservation(original: &Array3<f32>, translated: &Array3<f32>) -> Result<f64> {
    if original.shape() != translated.shape() {
        return Err(Error::Validation(format!(
            "shape mismatch: {:?} vs {:?}",
            original.shape(),
            translated.shape()
        )));
    }
    let ea = edge_map(original);
    let eb = edge_map(translated);
    Ok(ssim(&ea, &eb).clamp(0.0, 1.0))
}

/// Sobel gradient magnitude of the channel-mean image, normalized to [0,1].
fn edge_map(img: &Array3<f32>) -> Array2<f64> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let mut gray = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            gray[[y, x]] =
                f64::from(img[[y, x, 0]] + img[[y, x, 1]] + img[[y, x, 2]]) / 3.0;
        }
    }
    let mut mag = Array2::<f64>::zeros((h, w));
    let at = |y: isize, x: isize| -> f64 {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        gray[[yy, xx]]
    };
    // Max Sobel response on a unit-range image is 4*sqrt(2).
    let norm = 4.0 * 2.0f64.sqrt();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y, x - 1)
                - at(y + 1, x - 1);
            let gy = at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y - 1, x)
                - at(y - 1, x + 1);
            mag[[y as usize, x as usize]] = (gx * gx + gy * gy).sqrt() / norm;
        }
    }
    mag
}

/// Mean SSIM over uniform 8x8 windows with the standard (K1, K2) constants
/// and unit dynamic range.
fn ssim(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let (h, w) = a.dim();
    let win = 8usize.min(h).min(w);
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let n = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=(h - win) {
        for x0 in 0..=(w - win) {
            let mut sa = 0.0;
            let mut sb = 0.0;
            let mut saa = 0.0;
            let mut sbb = 0.0;
            let mut sab = 0.0;
            for dy in 0..win {
                for dx in 0..win {
                    let va = a[[y0 + dy, x0 + dx]];
                    let vb = b[[y0 + dy, x0 + dx]];
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let ma = sa / n;
            let mb = sb / n;
            let va = (saa / n - ma * ma).max(0.0);
            let vb = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            total += s;
            count += 1;
        }
    }
    total / count as f64
}

/// Translate every image of the labeled source train set; annotations are
/// copied verbatim and retagged as the intermediate domain.
pub fn build_intermediate_domain(
    model: &TranslatorModel,
    source_manifest: &DatasetManifest,
    out_dir: impl AsRef<std::path::Path>,
) -> Result<DatasetManifest> {
    if source_manifest.domain_tag != DomainTag::Source {
        return Err(Error::Validation(format!(
            "intermediate domain builds from the source train set, got {}",
            source_manifest.domain_tag
        )));
    }
    let images = load_annotations(source_manifest)?;
    let translated: Vec<AnnotatedImage> = images
        .par_iter()
        .map(|img| AnnotatedImage {
            image_id: img.image_id.clone(),
            pixels: translate_full(model, &img.pixels),
            domain_tag: DomainTag::Intermediate,
            boxes: img.boxes.clone(),
            label_kind: img.label_kind,
        })
        .collect();
    crate::data::save_annotations(
        &translated,
        out_dir,
        "intermediate_train",
        Split::Train,
        &source_manifest.categories,
    )
}
