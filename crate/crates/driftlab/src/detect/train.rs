//! Detector training: per-batch loss is the sum of per-origin detection
//! losses honoring the loss mask, optimized by momentum gradient descent
//! with a single step decay. Training is a pure function of
//! (data, seed, hyperparameters).

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::{flatten_maps, unflatten_grads};
use super::{
    assign_targets, detection_loss, generate_anchors, AnchorAssignment, AnchorConfig,
    DetectorModel, DetectorNet, LossMask, Origin,
};
use crate::error::{Error, Result};
use crate::nn::{zero_grads, Adam, T4};
use crate::synth::splitmix64;

/// One training image with its supervision and origin tag.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub pixels: Array3<f32>,
    pub boxes: Vec<crate::data::BoundingBox>,
    pub origin: Origin,
}

/// Yields batches as (origin, pool index) pairs; the labeled pool and the
/// pseudo-labeled target pool are indexed separately.
pub trait BatchSource {
    fn next_batch(&mut self) -> Vec<(Origin, usize)>;
    fn batches_per_epoch(&self) -> usize;
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DetectorHyperparams {
    pub epochs: usize,
    pub lr: f32,
    pub weight_decay: f32,
    /// Horizontal-flip augmentation; the scene grammar is mirror
    /// symmetric, so flips are distribution-preserving.
    pub augment_flip: bool,
}

impl Default for DetectorHyperparams {
    fn default() -> Self {
        DetectorHyperparams {
            epochs: 60,
            lr: 2e-3,
            weight_decay: 1e-4,
            augment_flip: true,
        }
    }
}

const DIVERGENCE_CEILING: f32 = 1e4;

/// Train a fresh detector over the given pools.
///
/// `labeled` backs `Origin::SourceLike` indices and `target` backs
/// `Origin::Target` indices in the stream. Returns the model plus the
/// per-epoch mean batch loss.
pub fn train_detector(
    labeled: &[TrainExample],
    target: &[TrainExample],
    stream: &mut dyn BatchSource,
    mask: LossMask,
    hp: &DetectorHyperparams,
    anchor_config: &AnchorConfig,
    num_categories: usize,
    seed: u64,
) -> Result<(DetectorModel, Vec<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xdec0_de00));
    let mut model = DetectorModel {
        net: DetectorNet::new(&mut rng, num_categories, anchor_config.per_cell()),
        anchor_config: anchor_config.clone(),
        num_categories,
    };
    let history = continue_training(&mut model, labeled, target, stream, mask, hp, seed)?;
    Ok((model, history))
}

/// Keep training an existing model in place (the fine-tune path).
pub fn continue_training(
    model: &mut DetectorModel,
    labeled: &[TrainExample],
    target: &[TrainExample],
    stream: &mut dyn BatchSource,
    mask: LossMask,
    hp: &DetectorHyperparams,
    seed: u64,
) -> Result<Vec<f32>> {
    let anchor_config = model.anchor_config.clone();
    let num_categories = model.num_categories;
    anchor_config.validate()?;
    if hp.epochs == 0 {
        return Err(Error::Config("epochs must be >= 1".into()));
    }

    let prep = |pool: &[TrainExample]| -> Result<Vec<Vec<AnchorAssignment>>> {
        pool.iter()
            .map(|ex| {
                let (h, w) = (ex.pixels.shape()[0], ex.pixels.shape()[1]);
                if h % anchor_config.stride != 0 || w % anchor_config.stride != 0 {
                    return Err(Error::Config(format!(
                        "image {h}x{w} not divisible by stride {}",
                        anchor_config.stride
                    )));
                }
                let anchors = generate_anchors(&anchor_config, (h, w));
                Ok(assign_targets(&anchors, &ex.boxes, &anchor_config))
            })
            .collect()
    };
    let labeled_targets = prep(labeled)?;
    let target_targets = prep(target)?;

    let per_cell = anchor_config.per_cell();
    let net = &mut model.net;
    let mut opt = Adam::new(hp.lr);
    opt.weight_decay = hp.weight_decay;
    let mut flip_rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0xf11b));
    let mut anchors_by_size: std::collections::HashMap<(usize, usize), Vec<super::Anchor>> =
        std::collections::HashMap::new();
    let decay_epoch = (hp.epochs * 2) / 3;

    let steps = stream.batches_per_epoch();
    if steps == 0 {
        return Err(Error::Config("batch stream yields no batches".into()));
    }
    let c1 = num_categories + 1;
    let mut history = Vec::with_capacity(hp.epochs);

    for epoch in 0..hp.epochs {
        if epoch == decay_epoch && epoch > 0 {
            opt.lr *= 0.1;
        }
        let mut epoch_loss = 0.0f32;
        for _ in 0..steps {
            let batch = stream.next_batch();
            let items: Vec<(&TrainExample, &[AnchorAssignment], Origin)> = batch
                .iter()
                .map(|&(origin, idx)| match origin {
                    Origin::SourceLike => (&labeled[idx], labeled_targets[idx].as_slice(), origin),
                    Origin::Target => (&target[idx], target_targets[idx].as_slice(), origin),
                })
                .collect();

            let (h0, w0) = {
                let p = &items[0].0.pixels;
                (p.shape()[0], p.shape()[1])
            };
            if items
                .iter()
                .any(|(ex, _, _)| ex.pixels.shape()[0] != h0 || ex.pixels.shape()[1] != w0)
            {
                return Err(Error::Config("batch mixes image sizes".into()));
            }

            let flips: Vec<bool> = items
                .iter()
                .map(|_| hp.augment_flip && rand::Rng::gen_bool(&mut flip_rng, 0.5))
                .collect();
            let x = batch_tensor(&items, &flips, h0, w0);
            let flipped_targets: Vec<Option<Vec<AnchorAssignment>>> = items
                .iter()
                .zip(&flips)
                .map(|((ex, _, _), &f)| {
                    if !f {
                        return None;
                    }
                    let anchors = anchors_by_size
                        .entry((h0, w0))
                        .or_insert_with(|| generate_anchors(&anchor_config, (h0, w0)));
                    let boxes: Vec<crate::data::BoundingBox> = ex
                        .boxes
                        .iter()
                        .map(|b| crate::data::BoundingBox {
                            x_min: w0 as f32 - b.x_max,
                            x_max: w0 as f32 - b.x_min,
                            ..b.clone()
                        })
                        .collect();
                    Some(assign_targets(anchors, &boxes, &anchor_config))
                })
                .collect();
            let (cls_map, reg_map, cache) = net.forward(&x);
            let (_, _, gh, gw) = cls_map.dim();
            let rows = flatten_maps(&cls_map, &reg_map, per_cell, num_categories);
            let n_anchor_rows = gh * gw * per_cell;

            // Per-origin pooled loss (Eq-style sum of the two terms).
            let mut d_rows: Vec<(Vec<f32>, Vec<f32>)> = items
                .iter()
                .map(|_| (vec![0.0; n_anchor_rows * c1], vec![0.0; n_anchor_rows * 4]))
                .collect();
            let mut batch_loss = 0.0f32;
            for origin in [Origin::SourceLike, Origin::Target] {
                let members: Vec<usize> = items
                    .iter()
                    .enumerate()
                    .filter(|(_, (_, _, o))| *o == origin)
                    .map(|(i, _)| i)
                    .collect();
                if members.is_empty() {
                    continue;
                }
                let mut cls_cat: Vec<f32> =
                    Vec::with_capacity(members.len() * n_anchor_rows * c1);
                let mut reg_cat: Vec<f32> = Vec::with_capacity(members.len() * n_anchor_rows * 4);
                let mut tgt_cat: Vec<AnchorAssignment> =
                    Vec::with_capacity(members.len() * n_anchor_rows);
                for &mi in &members {
                    cls_cat.extend_from_slice(rows[mi].0.as_slice().expect("contiguous"));
                    reg_cat.extend_from_slice(rows[mi].1.as_slice().expect("contiguous"));
                    match &flipped_targets[mi] {
                        Some(t) => tgt_cat.extend_from_slice(t),
                        None => tgt_cat.extend_from_slice(items[mi].1),
                    }
                }
                let head = mask.for_origin(origin);
                let out = detection_loss::<f32>(
                    &cls_cat,
                    &reg_cat,
                    &tgt_cat,
                    num_categories,
                    head.classification,
                    head.regression,
                )
                .map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!(
                        "{msg} (epoch {epoch}, origin {origin:?}, {} images)",
                        members.len()
                    )),
                    other => other,
                })?;
                batch_loss += out.total;
                for (slot, &mi) in members.iter().enumerate() {
                    let c_chunk = &out.d_cls[slot * n_anchor_rows * c1..(slot + 1) * n_anchor_rows * c1];
                    let r_chunk = &out.d_reg[slot * n_anchor_rows * 4..(slot + 1) * n_anchor_rows * 4];
                    d_rows[mi].0.copy_from_slice(c_chunk);
                    d_rows[mi].1.copy_from_slice(r_chunk);
                }
            }

            if !batch_loss.is_finite() || batch_loss > DIVERGENCE_CEILING {
                return Err(Error::Diverged {
                    epoch,
                    msg: format!("batch loss {batch_loss}"),
                });
            }

            let (d_cls_map, d_reg_map) =
                unflatten_grads(&d_rows, gh, gw, per_cell, num_categories);
            zero_grads(&mut net.params_mut());
            net.backward(&cache, &d_cls_map, &d_reg_map);
            opt.step(&mut net.params_mut());
            epoch_loss += batch_loss;
        }
        history.push(epoch_loss / steps as f32);
    }

    Ok(history)
}

/// Assemble the batch tensor, mirroring flipped items horizontally.
fn batch_tensor(
    items: &[(&TrainExample, &[AnchorAssignment], Origin)],
    flips: &[bool],
    h: usize,
    w: usize,
) -> T4 {
    let mut x = T4::zeros((items.len(), 3, h, w));
    for (ni, ((ex, _, _), &flip)) in items.iter().zip(flips).enumerate() {
        for y in 0..h {
            for xx in 0..w {
                let sx = if flip { w - 1 - xx } else { xx };
                for c in 0..3 {
                    x[[ni, c, y, xx]] = ex.pixels[[y, sx, c]];
                }
            }
        }
    }
    x
}

/// Source-only stream: full labeled pool, shuffled per epoch, fixed batch
/// size. Handy for baseline and oracle arms that have no target quota.
pub struct LabeledOnlyStream {
    order: Vec<usize>,
    cursor: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl LabeledOnlyStream {
    pub fn new(pool_len: usize, batch: usize, seed: u64) -> Result<Self> {
        if pool_len == 0 {
            return Err(Error::Config("labeled pool is empty".into()));
        }
        if batch == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        let mut s = LabeledOnlyStream {
            order: (0..pool_len).collect(),
            cursor: 0,
            batch,
            rng: ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x0bad_5eed)),
        };
        s.reshuffle();
        Ok(s)
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom;
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }
}

impl BatchSource for LabeledOnlyStream {
    fn next_batch(&mut self) -> Vec<(Origin, usize)> {
        let mut out = Vec::with_capacity(self.batch);
        for _ in 0..self.batch {
            if self.cursor >= self.order.len() {
                self.reshuffle();
            }
            out.push((Origin::SourceLike, self.order[self.cursor]));
            self.cursor += 1;
        }
        out
    }

    fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch)
    }
}
