//! The self-training orchestrator: imbalanced mini-batch sampling,
//! progressive confidence scheduling, source-vs-intermediate combination,
//! and the multi-round annotate/train/re-annotate loop.
//!
//! No target ground truth is read anywhere in this module; per-round
//! evaluation consumes the separate target validation split, and coverage
//! analysis is attempted only when the sealed view is present.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{load_annotations, AnnotatedImage, DatasetManifest};
use crate::detect::{
    infer, train_detector, AnchorConfig, BatchSource, DetectorHyperparams, DetectorModel,
    LabeledOnlyStream, LossMask, Origin, TrainExample,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_detections, quality_report, EvalPair, EvalReport};
use crate::pseudo::{annotate, PseudoLabelSet, PseudoStore};
use crate::synth::{splitmix64, Benchmark};

/// Score floor used when producing detections for metric evaluation; low
/// enough to populate the full precision-recall curve.
pub const EVAL_SCORE_FLOOR: f64 = 0.05;

/// Per-batch composition: `source` ground-truth-labeled images and
/// `target` pseudo-labeled images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingPlan {
    source: usize,
    target: usize,
}

impl SamplingPlan {
    /// Default mode: imbalance toward labeled data is mandatory (s > t).
    pub fn strict(source: usize, target: usize) -> Result<Self> {
        if source <= target {
            return Err(Error::Config(format!(
                "sampling plan {source}:{target} rejected: labeled quota must exceed target quota"
            )));
        }
        Ok(SamplingPlan { source, target })
    }

    /// Ablation mode: any split with at least one draw per batch.
    pub fn ablation(source: usize, target: usize) -> Result<Self> {
        if source + target == 0 {
            return Err(Error::Config("empty batch plan".into()));
        }
        Ok(SamplingPlan { source, target })
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn batch_size(&self) -> usize {
        self.source + self.target
    }
}

/// Per-round pseudo-labeling thresholds; non-decreasing by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSchedule {
    thresholds: Vec<f64>,
}

impl ConfidenceSchedule {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::Config("confidence schedule is empty".into()));
        }
        for &t in &thresholds {
            if !(0.0 < t && t < 1.0) {
                return Err(Error::Config(format!("threshold {t} outside (0,1)")));
            }
        }
        if thresholds.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(
                "confidence schedule must be non-decreasing".into(),
            ));
        }
        Ok(ConfidenceSchedule { thresholds })
    }

    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    /// Threshold used for the annotation pass indexed by `i` (0 = the
    /// initial annotator). Clamps to the final entry so the last round's
    /// re-annotation stays defined.
    pub fn threshold(&self, i: usize) -> f64 {
        self.thresholds[i.min(self.thresholds.len() - 1)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.thresholds
    }
}

/// Which labeled pool joins the target pool during self-training rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combination {
    Source,
    Intermediate,
}

impl Combination {
    pub fn as_str(self) -> &'static str {
        match self {
            Combination::Source => "source",
            Combination::Intermediate => "intermediate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "source" => Some(Combination::Source),
            "intermediate" => Some(Combination::Intermediate),
            _ => None,
        }
    }
}

/// Fixed-ratio interleaving of two pools. Every batch holds exactly
/// `plan.source()` labeled and `plan.target()` pseudo-labeled draws;
/// each pool is an independently reshuffled cycle.
pub struct MixedStream {
    plan: SamplingPlan,
    labeled: PoolCycle,
    target: PoolCycle,
    pub labeled_draws: u64,
    pub target_draws: u64,
}

struct PoolCycle {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl PoolCycle {
    fn new(len: usize, seed: u64) -> Self {
        let mut c = PoolCycle {
            order: (0..len).collect(),
            cursor: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        if len > 0 {
            c.reshuffle();
        }
        c
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next(&mut self) -> usize {
        if self.cursor >= self.order.len() {
            self.reshuffle();
        }
        let v = self.order[self.cursor];
        self.cursor += 1;
        v
    }
}

/// Build the Eq-ratio batch stream over pool sizes.
pub fn make_batch_stream(
    labeled_len: usize,
    target_len: usize,
    plan: SamplingPlan,
    seed: u64,
) -> Result<MixedStream> {
    if plan.source() > 0 && labeled_len == 0 {
        return Err(Error::Config(
            "plan draws labeled images but the labeled pool is empty".into(),
        ));
    }
    if plan.target() > 0 && target_len == 0 {
        return Err(Error::Config(
            "plan draws target images but the pseudo pool is empty".into(),
        ));
    }
    Ok(MixedStream {
        plan,
        labeled: PoolCycle::new(labeled_len, splitmix64(seed ^ 0x5eed_0001)),
        target: PoolCycle::new(target_len, splitmix64(seed ^ 0x5eed_0002)),
        labeled_draws: 0,
        target_draws: 0,
    })
}

impl BatchSource for MixedStream {
    fn next_batch(&mut self) -> Vec<(Origin, usize)> {
        let mut out = Vec::with_capacity(self.plan.batch_size());
        for _ in 0..self.plan.source() {
            out.push((Origin::SourceLike, self.labeled.next()));
            self.labeled_draws += 1;
        }
        for _ in 0..self.plan.target() {
            out.push((Origin::Target, self.target.next()));
            self.target_draws += 1;
        }
        out
    }

    /// Epoch length is combined-pool images over batch size, so arms with
    /// different ratios train for equal step counts. Each pool still
    /// cycles through all of its images before reshuffling, so over one
    /// full cycle of the larger pool every image is visited.
    fn batches_per_epoch(&self) -> usize {
        let mut active = 0usize;
        if self.plan.source() > 0 {
            active += self.labeled.order.len();
        }
        if self.plan.target() > 0 {
            active += self.target.order.len();
        }
        active.div_ceil(self.plan.batch_size()).max(1)
    }
}

impl MixedStream {
    /// Batches needed for one full pass of the slower-cycling pool; after
    /// this many batches every image of both pools has been drawn.
    pub fn batches_per_larger_pool_cycle(&self) -> usize {
        let mut cycle = 0usize;
        if self.plan.source() > 0 {
            cycle = cycle.max(self.labeled.order.len().div_ceil(self.plan.source()));
        }
        if self.plan.target() > 0 {
            cycle = cycle.max(self.target.order.len().div_ceil(self.plan.target()));
        }
        cycle
    }
}

/// Full configuration of one self-training run.
#[derive(Debug, Clone)]
pub struct SelfTrainConfig {
    pub rounds: usize,
    pub schedule: ConfidenceSchedule,
    pub plan: SamplingPlan,
    pub combination: Combination,
    pub mask: LossMask,
    pub detector: DetectorHyperparams,
    pub anchor_config: AnchorConfig,
    pub nms_iou: f64,
    pub seed: u64,
    /// Train each round from scratch (default) or continue from the
    /// previous round's weights.
    pub fine_tune: bool,
    /// Stop once validation mAP drops for two consecutive rounds.
    pub early_stop: bool,
    /// Ablation: train the initial annotator on raw source instead of the
    /// intermediate domain (the self-training-only arm).
    pub init_on_source: bool,
}

impl SelfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schedule.len() < self.rounds.max(1) {
            return Err(Error::Config(format!(
                "schedule length {} below round count {}",
                self.schedule.len(),
                self.rounds
            )));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::Config(format!("nms_iou {} outside [0,1]", self.nms_iou)));
        }
        self.anchor_config.validate()
    }
}

impl Default for SelfTrainConfig {
    fn default() -> Self {
        SelfTrainConfig {
            rounds: 3,
            schedule: ConfidenceSchedule::new(vec![0.6, 0.8, 0.9]).expect("static schedule"),
            plan: SamplingPlan::strict(3, 1).expect("static plan"),
            combination: Combination::Source,
            mask: LossMask::full(),
            detector: DetectorHyperparams::default(),
            anchor_config: AnchorConfig::default(),
            nms_iou: 0.5,
            seed: 0,
            fine_tune: false,
            early_stop: true,
            init_on_source: false,
        }
    }
}

/// One history row of a run.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: u32,
    pub conf: f64,
    pub report: EvalReport,
    pub coverage: Option<f64>,
    pub pseudo_box_count: usize,
    pub mean_pseudo_score: f64,
    pub checkpoint: PathBuf,
}

/// Run a detector over images and score it against their ground truth.
pub fn evaluate_model(
    model: &DetectorModel,
    images: &[AnnotatedImage],
    categories: &[String],
    nms_iou: f64,
) -> Result<EvalReport> {
    use rayon::prelude::*;
    let pairs: Vec<EvalPair> = images
        .par_iter()
        .map(|img| {
            let predictions = infer(model, &img.pixels, EVAL_SCORE_FLOOR, nms_iou)?;
            Ok(EvalPair {
                predictions,
                ground_truth: img.boxes.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_detections(&pairs, categories, 0.5)
}

/// Loaded state for one self-training run.
pub struct SelfTrainer {
    pub config: SelfTrainConfig,
    pub out_dir: PathBuf,
    benchmark: Benchmark,
    labeled_pool: Vec<TrainExample>,
    init_pool: Vec<TrainExample>,
    target_pool_images: Vec<AnnotatedImage>,
    val_images: Vec<AnnotatedImage>,
    sealed_gt: Option<Vec<(String, Vec<crate::data::BoundingBox>)>>,
    store: PseudoStore,
    categories: Vec<String>,
}

impl SelfTrainer {
    /// `intermediate_manifest` is required unless the run both initializes
    /// on source and combines source (the self-training-only ablation).
    pub fn new(
        config: SelfTrainConfig,
        benchmark_root: impl AsRef<Path>,
        intermediate_manifest: Option<&DatasetManifest>,
        out_dir: impl AsRef<Path>,
    ) -> Result<Self> {
        config.validate()?;
        let (benchmark, have_sealed) = Benchmark::open(benchmark_root)?;
        let out_dir = out_dir.as_ref().to_path_buf();
        fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

        let source_images = load_annotations(&benchmark.source_train)?;
        let categories = benchmark.source_train.categories.clone();

        let to_examples = |imgs: &[AnnotatedImage]| -> Vec<TrainExample> {
            imgs.iter()
                .map(|img| TrainExample {
                    pixels: img.pixels.clone(),
                    boxes: img.boxes.clone(),
                    origin: Origin::SourceLike,
                })
                .collect()
        };

        let intermediate_images = match intermediate_manifest {
            Some(m) => Some(load_annotations(m)?),
            None => None,
        };

        let needs_intermediate = !config.init_on_source
            || config.combination == Combination::Intermediate;
        if needs_intermediate && intermediate_images.is_none() {
            return Err(Error::Config(
                "this configuration trains on the intermediate domain but none was supplied"
                    .into(),
            ));
        }

        let labeled_pool = match config.combination {
            Combination::Source => to_examples(&source_images),
            Combination::Intermediate => {
                to_examples(intermediate_images.as_ref().expect("validated above"))
            }
        };
        let init_pool = if config.init_on_source {
            to_examples(&source_images)
        } else {
            to_examples(intermediate_images.as_ref().expect("validated above"))
        };

        let target_pool_images = load_annotations(&benchmark.target_train)?;
        let val_images = load_annotations(&benchmark.target_val)?;
        let sealed_gt = if have_sealed {
            Some(crate::data::load_boxes(&benchmark.target_train_sealed)?)
        } else {
            None
        };

        Ok(SelfTrainer {
            store: PseudoStore::new(out_dir.join("pseudo")),
            config,
            out_dir,
            benchmark,
            labeled_pool,
            init_pool,
            target_pool_images,
            val_images,
            sealed_gt,
            categories,
        })
    }

    pub fn benchmark(&self) -> &Benchmark {
        &self.benchmark
    }

    pub fn categories(&self) -> &[String] {
        &self.categories
    }

    /// Train the initial annotator on its labeled pool only and produce
    /// the round-0 pseudo-label set at the first schedule threshold.
    /// Executed exactly once per run.
    pub fn initialize_annotator(&self) -> Result<(DetectorModel, PseudoLabelSet)> {
        let cfg = &self.config;
        let mut stream = LabeledOnlyStream::new(
            self.init_pool.len(),
            cfg.plan.batch_size(),
            splitmix64(cfg.seed ^ 0x1217_0001),
        )?;
        let (model, _history) = train_detector(
            &self.init_pool,
            &[],
            &mut stream,
            LossMask::full(),
            &cfg.detector,
            &cfg.anchor_config,
            self.categories.len(),
            splitmix64(cfg.seed ^ 0x1217_0002),
        )?;
        let conf = cfg.schedule.threshold(0);
        let set = annotate(
            &model,
            &self.benchmark.target_train,
            conf,
            cfg.nms_iou,
            0,
            &format!("annotator_seed{}_round0", cfg.seed),
        )?;
        Ok((model, set))
    }

    /// Target pool with the given pseudo boxes attached.
    fn pseudo_examples(&self, set: &PseudoLabelSet) -> Result<Vec<TrainExample>> {
        let by_id: std::collections::HashMap<&str, &Vec<crate::data::BoundingBox>> =
            set.images.iter().map(|(id, b)| (id.as_str(), b)).collect();
        self.target_pool_images
            .iter()
            .map(|img| {
                let boxes = by_id.get(img.image_id.as_str()).ok_or_else(|| {
                    Error::Validation(format!(
                        "pseudo set is missing image {}",
                        img.image_id
                    ))
                })?;
                Ok(TrainExample {
                    pixels: img.pixels.clone(),
                    boxes: (*boxes).clone(),
                    origin: Origin::Target,
                })
            })
            .collect()
    }

    /// One self-training round: train a detector on labeled + pseudo(r)
    /// under the sampling plan, then re-annotate at the next threshold and
    /// evaluate on the validation split.
    pub fn run_round(
        &self,
        pseudo: &PseudoLabelSet,
        previous: Option<&DetectorModel>,
    ) -> Result<(DetectorModel, PseudoLabelSet, EvalReport)> {
        let cfg = &self.config;
        let round = pseudo.round;
        let target_pool = self.pseudo_examples(pseudo)?;
        let mut stream = make_batch_stream(
            self.labeled_pool.len(),
            target_pool.len(),
            cfg.plan,
            splitmix64(cfg.seed ^ (0x2000_0000 + round as u64)),
        )?;
        let model = match (cfg.fine_tune, previous) {
            (true, Some(prev)) => {
                let mut model = prev.clone();
                crate::detect::continue_training(
                    &mut model,
                    &self.labeled_pool,
                    &target_pool,
                    &mut stream,
                    cfg.mask,
                    &cfg.detector,
                    splitmix64(cfg.seed ^ (0x3000_0000 + round as u64)),
                )?;
                model
            }
            _ => {
                let (model, _hist) = train_detector(
                    &self.labeled_pool,
                    &target_pool,
                    &mut stream,
                    cfg.mask,
                    &cfg.detector,
                    &cfg.anchor_config,
                    self.categories.len(),
                    splitmix64(cfg.seed ^ (0x3000_0000 + round as u64)),
                )?;
                model
            }
        };

        let next_round = round + 1;
        let conf = cfg.schedule.threshold(next_round as usize);
        let new_set = annotate(
            &model,
            &self.benchmark.target_train,
            conf,
            cfg.nms_iou,
            next_round,
            &format!("annotator_seed{}_round{next_round}", cfg.seed),
        )?;
        let report = evaluate_model(&model, &self.val_images, &self.categories, cfg.nms_iou)?;
        Ok((model, new_set, report))
    }

    /// Execute the full loop: initialization plus up to `rounds` rounds,
    /// early-stopped when validation mAP drops twice in a row. History is
    /// persisted incrementally; `history.csv` holds one row per record.
    pub fn run(&mut self) -> Result<Vec<RoundRecord>> {
        let cfg = self.config.clone();
        let mut records: Vec<RoundRecord> = Vec::new();

        let (init_model, set0) = self.initialize_annotator()?;
        self.store.write_set(&set0, &self.benchmark.target_train)?;
        let init_report =
            evaluate_model(&init_model, &self.val_images, &self.categories, cfg.nms_iou)?;
        let ckpt0 = self.out_dir.join("checkpoints/round_0.ckpt");
        init_model.save(&ckpt0)?;
        records.push(self.record(0, cfg.schedule.threshold(0), init_report, &set0, ckpt0)?);
        self.write_history(&records)?;
        self.write_quality_plots(&set0, 0)?;

        let mut current_set = set0;
        let mut current_model = init_model;
        let mut drops = 0usize;
        let mut best_map = records[0].report.map;

        for r in 0..cfg.rounds {
            let (model, new_set, report) =
                self.run_round(&current_set, Some(&current_model))?;
            self.store
                .write_set(&new_set, &self.benchmark.target_train)?;
            let ckpt = self
                .out_dir
                .join(format!("checkpoints/round_{}.ckpt", r + 1));
            model.save(&ckpt)?;
            let map = report.map;
            records.push(self.record(
                (r + 1) as u32,
                new_set.confidence_threshold,
                report,
                &new_set,
                ckpt,
            )?);
            self.write_history(&records)?;
            self.write_quality_plots(&new_set, (r + 1) as u32)?;

            if map < best_map {
                drops += 1;
            } else {
                best_map = map;
                drops = 0;
            }
            current_set = new_set;
            current_model = model;
            if cfg.early_stop && drops >= 2 {
                log::info!("early stop after round {}: mAP dropped twice", r + 1);
                break;
            }
        }
        self.write_confidence_trace(&records)?;
        Ok(records)
    }

    fn record(
        &self,
        round: u32,
        conf: f64,
        report: EvalReport,
        set: &PseudoLabelSet,
        checkpoint: PathBuf,
    ) -> Result<RoundRecord> {
        let coverage = match &self.sealed_gt {
            Some(gt) => Some(quality_report(&set.images, gt)?.coverage),
            None => None,
        };
        let n = set.box_count();
        let mean_score = if n == 0 {
            0.0
        } else {
            set.images
                .iter()
                .flat_map(|(_, b)| b.iter())
                .map(|b| f64::from(b.score.unwrap_or(0.0)))
                .sum::<f64>()
                / n as f64
        };
        Ok(RoundRecord {
            round,
            conf,
            report,
            coverage,
            pseudo_box_count: n,
            mean_pseudo_score: mean_score,
            checkpoint,
        })
    }

    fn write_history(&self, records: &[RoundRecord]) -> Result<()> {
        let path = self.out_dir.join("history.csv");
        let mut out = String::from("round,conf,map");
        for c in &self.categories {
            out.push_str(&format!(",ap_{c}"));
        }
        out.push_str(",coverage,pseudo_boxes,mean_pseudo_score\n");
        for r in records {
            out.push_str(&format!("{},{},{}", r.round, r.conf, r.report.map));
            for ap in &r.report.per_category_ap {
                match ap {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            match r.coverage {
                Some(c) => out.push_str(&format!(",{c}")),
                None => out.push(','),
            }
            out.push_str(&format!(",{},{}\n", r.pseudo_box_count, r.mean_pseudo_score));
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))
    }

    fn write_quality_plots(&self, set: &PseudoLabelSet, round: u32) -> Result<()> {
        if let Some(gt) = &self.sealed_gt {
            let q = quality_report(&set.images, gt)?;
            crate::plot::heatmap10(
                &q.hist,
                &self.out_dir.join(format!("iou_conf_round_{round}.png")),
            )?;
        }
        Ok(())
    }

    fn write_confidence_trace(&self, records: &[RoundRecord]) -> Result<()> {
        if records.len() < 2 {
            return Ok(());
        }
        let pts: Vec<(f64, f64)> = records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                (
                    i as f64 / (records.len() - 1).max(1) as f64,
                    r.mean_pseudo_score,
                )
            })
            .collect();
        crate::plot::line_chart(&[pts], &self.out_dir.join("confidence_trace.png"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_plan_rejects_balanced_or_inverted() {
        assert!(SamplingPlan::strict(3, 1).is_ok());
        assert!(SamplingPlan::strict(2, 2).is_err());
        assert!(SamplingPlan::strict(1, 3).is_err());
        assert!(SamplingPlan::strict(4, 0).is_ok());
        assert!(SamplingPlan::ablation(0, 4).is_ok());
    }

    #[test]
    fn schedule_validation() {
        assert!(ConfidenceSchedule::new(vec![0.6, 0.8, 0.9]).is_ok());
        assert!(ConfidenceSchedule::new(vec![0.6, 0.5]).is_err());
        assert!(ConfidenceSchedule::new(vec![0.0]).is_err());
        assert!(ConfidenceSchedule::new(vec![1.0]).is_err());
        let s = ConfidenceSchedule::new(vec![0.6, 0.8]).unwrap();
        assert_eq!(s.threshold(0), 0.6);
        assert_eq!(s.threshold(1), 0.8);
        assert_eq!(s.threshold(5), 0.8, "clamped to final entry");
    }

    #[test]
    fn stream_exact_quotas() {
        let plan = SamplingPlan::strict(3, 1).unwrap();
        let mut stream = make_batch_stream(10, 7, plan, 42).unwrap();
        for _ in 0..100 {
            let batch = stream.next_batch();
            assert_eq!(batch.len(), 4);
            assert_eq!(
                batch
                    .iter()
                    .filter(|(o, _)| *o == Origin::SourceLike)
                    .count(),
                3
            );
        }
        assert_eq!(stream.labeled_draws, 300);
        assert_eq!(stream.target_draws, 100);
    }

    #[test]
    fn stream_target_only_plan() {
        let plan = SamplingPlan::ablation(0, 4).unwrap();
        let mut stream = make_batch_stream(0, 9, plan, 1).unwrap();
        let batch = stream.next_batch();
        assert!(batch.iter().all(|(o, _)| *o == Origin::Target));
    }

    #[test]
    fn stream_rejects_empty_quota_pool() {
        let plan = SamplingPlan::strict(3, 1).unwrap();
        assert!(make_batch_stream(10, 0, plan, 0).is_err());
    }

    #[test]
    fn stream_visits_every_image_per_larger_pool_cycle() {
        let plan = SamplingPlan::strict(2, 1).unwrap();
        let mut stream = make_batch_stream(8, 3, plan, 5).unwrap();
        let mut seen_l = vec![false; 8];
        let mut seen_t = vec![false; 3];
        for _ in 0..stream.batches_per_larger_pool_cycle() {
            for (o, i) in stream.next_batch() {
                match o {
                    Origin::SourceLike => seen_l[i] = true,
                    Origin::Target => seen_t[i] = true,
                }
            }
        }
        assert!(seen_l.iter().all(|&s| s));
        assert!(seen_t.iter().all(|&s| s));
    }

    #[test]
    fn scaled_plan_preserves_ratio() {
        let plan = SamplingPlan::strict(6, 2).unwrap();
        assert_eq!(plan.batch_size(), 8);
        let mut stream = make_batch_stream(12, 6, plan, 9).unwrap();
        for _ in 0..50 {
            stream.next_batch();
        }
        assert_eq!(stream.labeled_draws, 300);
        assert_eq!(stream.target_draws, 100);
    }
}
