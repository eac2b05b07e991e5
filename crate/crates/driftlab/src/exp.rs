//! Config-driven ablation experiments with multi-seed aggregation: the
//! five-arm factorial (baseline / self-train / domain-transfer / both /
//! oracle), the translator patch-size sweep, the sampling-ratio sweep and
//! the loss-masking matrix. Every table regenerates bit-identically from
//! (config, seeds); arms write only into their own subdirectories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_annotations, AnnotatedImage, DatasetManifest};
use crate::detect::{
    train_detector, AnchorConfig, DetectorHyperparams, DetectorModel, HeadMask,
    LabeledOnlyStream, LossMask, Origin, TrainExample,
};
use crate::error::{Error, Result};
use crate::eval::{density_of_counts, EvalReport};
use crate::pseudo::{annotate, PseudoLabelSet};
use crate::selftrain::{
    evaluate_model, make_batch_stream, Combination, ConfidenceSchedule, SamplingPlan,
    SelfTrainConfig, SelfTrainer,
};
use crate::synth::{build_benchmark, sample_scene, splitmix64, Benchmark, DomainSpec, SceneSeed};
use crate::translate::{
    build_intermediate_domain, content_preservation, train_translator, translate_full,
    TranslatorHyperparams, TranslatorModel,
};

/// One experiment definition; a structured-text (TOML) file deserializes
/// into this.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    /// Repeat seeds; each seeds both benchmark generation and training.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub source_spec: DomainSpec,
    pub target_spec: DomainSpec,
    pub n_source_train: usize,
    pub n_target_train: usize,
    pub n_target_val: usize,
    /// Translator crop restriction for arms that train one translator.
    pub patch_size: usize,
    /// Self-training rounds for the ST arms.
    pub rounds: usize,
    pub plan_source: usize,
    pub plan_target: usize,
    pub schedule: Vec<f64>,
    pub combination: String,
    pub translator: TranslatorHyperparams,
    pub detector: DetectorHyperparams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs/experiment"),
            source_spec: DomainSpec::default_source(),
            target_spec: DomainSpec::default_target(),
            n_source_train: 48,
            n_target_train: 48,
            n_target_val: 24,
            patch_size: 32,
            rounds: 1,
            plan_source: 3,
            plan_target: 1,
            schedule: vec![0.6, 0.8, 0.9],
            combination: "source".into(),
            translator: TranslatorHyperparams {
                epochs: 12,
                ..Default::default()
            },
            detector: DetectorHyperparams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds list is empty".into()));
        }
        self.source_spec.validate()?;
        self.target_spec.validate()?;
        Combination::parse(&self.combination)
            .ok_or_else(|| Error::Config(format!("bad combination {:?}", self.combination)))?;
        ConfidenceSchedule::new(self.schedule.clone())?;
        Ok(())
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn combination(&self) -> Combination {
        Combination::parse(&self.combination).expect("validated")
    }

    fn plan(&self) -> Result<SamplingPlan> {
        SamplingPlan::strict(self.plan_source, self.plan_target)
    }

    fn selftrain_config(&self, seed: u64) -> Result<SelfTrainConfig> {
        Ok(SelfTrainConfig {
            rounds: self.rounds,
            schedule: ConfidenceSchedule::new(self.schedule.clone())?,
            plan: self.plan()?,
            combination: self.combination(),
            mask: LossMask::full(),
            detector: self.detector.clone(),
            anchor_config: AnchorConfig::default(),
            nms_iou: 0.5,
            seed,
            fine_tune: false,
            early_stop: false,
            init_on_source: false,
        })
    }
}

/// One (arm, seed) measurement.
#[derive(Debug, Clone)]
pub struct ArmResult {
    pub arm: String,
    pub seed: u64,
    pub report: EvalReport,
    /// Extra per-arm scalar (content preservation, draw ratio, ...).
    pub aux: Option<f64>,
}

/// Results of one experiment: rows in arm-major, seed-minor order.
#[derive(Debug, Clone)]
pub struct ExperimentTable {
    pub experiment: String,
    pub rows: Vec<ArmResult>,
}

impl ExperimentTable {
    pub fn map_of(&self, arm: &str, seed: u64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.arm == arm && r.seed == seed)
            .map(|r| r.report.map)
    }

    pub fn aux_of(&self, arm: &str, seed: u64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.arm == arm && r.seed == seed)
            .and_then(|r| r.aux)
    }

    pub fn mean_map(&self, arm: &str) -> f64 {
        let maps: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.arm == arm)
            .map(|r| r.report.map)
            .collect();
        maps.iter().sum::<f64>() / maps.len().max(1) as f64
    }

    pub fn arms(&self) -> Vec<String> {
        let mut arms = Vec::new();
        for r in &self.rows {
            if !arms.contains(&r.arm) {
                arms.push(r.arm.clone());
            }
        }
        arms
    }

    /// Tidy CSV: one row per (arm, seed).
    pub fn to_csv(&self, categories: &[String]) -> String {
        let mut out = String::from("arm,seed,map");
        for c in categories {
            out.push_str(&format!(",ap_{c}"));
        }
        out.push_str(",aux\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}", r.arm, r.seed, r.report.map));
            for ap in &r.report.per_category_ap {
                match ap {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            match r.aux {
                Some(v) => out.push_str(&format!(",{v}\n")),
                None => out.push_str(",\n"),
            }
        }
        out
    }

    /// Wide layout mirroring the adaptation tables: one row per arm, one
    /// column per seed, plus the mean.
    pub fn to_summary_csv(&self, seeds: &[u64]) -> String {
        let mut out = String::from("arm");
        for s in seeds {
            out.push_str(&format!(",map_seed{s}"));
        }
        out.push_str(",mean\n");
        for arm in self.arms() {
            out.push_str(&arm);
            for &s in seeds {
                match self.map_of(&arm, s) {
                    Some(v) => out.push_str(&format!(",{v}")),
                    None => out.push(','),
                }
            }
            out.push_str(&format!(",{}\n", self.mean_map(&arm)));
        }
        out
    }
}

/// Per-seed working set shared by an experiment's arms: the generated
/// benchmark plus loaded pools. Benchmark generation is an input step,
/// not an arm artifact.
struct SeedContext {
    seed: u64,
    bench: Benchmark,
    bench_dir: PathBuf,
    categories: Vec<String>,
    source_images: Vec<AnnotatedImage>,
    target_train_images: Vec<AnnotatedImage>,
    val_images: Vec<AnnotatedImage>,
}

impl SeedContext {
    fn build(cfg: &ExperimentConfig, seed: u64, exp_dir: &Path) -> Result<Self> {
        let bench_dir = exp_dir.join(format!("seed_{seed}/benchmark"));
        let bench = build_benchmark(
            &cfg.source_spec,
            &cfg.target_spec,
            (cfg.n_source_train, cfg.n_target_train, cfg.n_target_val),
            seed,
            &bench_dir,
        )?;
        let source_images = load_annotations(&bench.source_train)?;
        let target_train_images = load_annotations(&bench.target_train)?;
        let val_images = load_annotations(&bench.target_val)?;
        Ok(SeedContext {
            seed,
            categories: bench.source_train.categories.clone(),
            bench,
            bench_dir,
            source_images,
            target_train_images,
            val_images,
        })
    }

    fn arm_dir(&self, exp_dir: &Path, arm: &str) -> PathBuf {
        exp_dir.join(format!("seed_{}/{arm}", self.seed))
    }

    fn source_examples(&self) -> Vec<TrainExample> {
        self.source_images
            .iter()
            .map(|img| TrainExample {
                pixels: img.pixels.clone(),
                boxes: img.boxes.clone(),
                origin: Origin::SourceLike,
            })
            .collect()
    }

    fn target_pixels(&self) -> Vec<ndarray::Array3<f32>> {
        self.target_train_images
            .iter()
            .map(|i| i.pixels.clone())
            .collect()
    }

    fn source_pixels(&self) -> Vec<ndarray::Array3<f32>> {
        self.source_images.iter().map(|i| i.pixels.clone()).collect()
    }

    /// Train a detector on one labeled pool and score it on target val.
    fn labeled_only_arm(
        &self,
        cfg: &ExperimentConfig,
        pool: &[TrainExample],
        seed_salt: u64,
    ) -> Result<(DetectorModel, EvalReport)> {
        let mut stream = LabeledOnlyStream::new(
            pool.len(),
            cfg.plan_source + cfg.plan_target,
            splitmix64(self.seed ^ seed_salt),
        )?;
        let (model, _) = train_detector(
            pool,
            &[],
            &mut stream,
            LossMask::full(),
            &cfg.detector,
            &AnchorConfig::default(),
            self.categories.len(),
            splitmix64(self.seed ^ seed_salt ^ 0xa1),
        )?;
        let report = evaluate_model(&model, &self.val_images, &self.categories, 0.5)?;
        Ok((model, report))
    }

    fn train_translator_arm(
        &self,
        cfg: &ExperimentConfig,
        patch: usize,
        arm_dir: &Path,
    ) -> Result<(TranslatorModel, DatasetManifest)> {
        let (model, _hist) = train_translator(
            &self.source_pixels(),
            &self.target_pixels(),
            patch,
            &cfg.translator,
            splitmix64(self.seed ^ 0x7a_0001),
        )?;
        model.save(&arm_dir.join("translator.ckpt"))?;
        let inter =
            build_intermediate_domain(&model, &self.bench.source_train, arm_dir.join("intermediate"))?;
        Ok((model, inter))
    }
}

fn write_table(
    table: &ExperimentTable,
    categories: &[String],
    seeds: &[u64],
    exp_dir: &Path,
    stem: &str,
) -> Result<()> {
    let csv_path = exp_dir.join(format!("{stem}.csv"));
    fs::write(&csv_path, table.to_csv(categories)).map_err(|e| Error::io(&csv_path, e))?;
    let sum_path = exp_dir.join(format!("{stem}_summary.csv"));
    fs::write(&sum_path, table.to_summary_csv(seeds)).map_err(|e| Error::io(&sum_path, e))?;
    Ok(())
}

/// The five-arm factorial: source-only baseline, self-training without
/// domain transfer, domain transfer alone, the full pipeline, and the
/// sealed-GT oracle (analysis arm).
pub fn run_factorial(cfg: &ExperimentConfig) -> Result<ExperimentTable> {
    cfg.validate()?;
    let exp_dir = cfg.out_dir.join("factorial");
    let mut rows = Vec::new();
    let mut categories = Vec::new();

    for &seed in &cfg.seeds {
        let ctx = SeedContext::build(cfg, seed, &exp_dir)?;
        categories = ctx.categories.clone();
        log::info!("factorial seed {seed}: benchmark at {}", ctx.bench_dir.display());

        // Density analysis artifacts (content-gap view of the benchmark).
        let src_counts: Vec<usize> = ctx.source_images.iter().map(|i| i.boxes.len()).collect();
        let sealed = crate::data::load_boxes(&ctx.bench.target_train_sealed)?;
        let tgt_counts: Vec<usize> = sealed.iter().map(|(_, b)| b.len()).collect();
        let d_src = density_of_counts(&src_counts);
        let d_tgt = density_of_counts(&tgt_counts);
        let seed_dir = exp_dir.join(format!("seed_{seed}"));
        crate::plot::bar_chart(
            &d_src.histogram.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            &seed_dir.join("density_source.png"),
        )?;
        crate::plot::bar_chart(
            &d_tgt.histogram.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            &seed_dir.join("density_target.png"),
        )?;

        // Arm: baseline (source only; target train never read).
        let (model, report) = ctx.labeled_only_arm(cfg, &ctx.source_examples(), 0xba5e)?;
        model.save(&ctx.arm_dir(&exp_dir, "baseline").join("detector.ckpt"))?;
        rows.push(ArmResult {
            arm: "baseline".into(),
            seed,
            report,
            aux: None,
        });

        // Arm: self-training without domain transfer.
        {
            let mut st_cfg = cfg.selftrain_config(seed)?;
            st_cfg.init_on_source = true;
            st_cfg.combination = Combination::Source;
            let mut trainer = SelfTrainer::new(
                st_cfg,
                &ctx.bench_dir,
                None,
                ctx.arm_dir(&exp_dir, "st"),
            )?;
            let records = trainer.run()?;
            let last = records.last().expect("at least the init record");
            rows.push(ArmResult {
                arm: "st".into(),
                seed,
                report: last.report.clone(),
                aux: None,
            });
        }

        // Arm: domain transfer only.
        {
            let arm_dir = ctx.arm_dir(&exp_dir, "dt");
            let (_translator, inter) = ctx.train_translator_arm(cfg, cfg.patch_size, &arm_dir)?;
            let inter_images = load_annotations(&inter)?;
            let pool: Vec<TrainExample> = inter_images
                .iter()
                .map(|img| TrainExample {
                    pixels: img.pixels.clone(),
                    boxes: img.boxes.clone(),
                    origin: Origin::SourceLike,
                })
                .collect();
            let (model, report) = ctx.labeled_only_arm(cfg, &pool, 0xd7)?;
            model.save(&arm_dir.join("detector.ckpt"))?;
            rows.push(ArmResult {
                arm: "dt".into(),
                seed,
                report,
                aux: None,
            });
        }

        // Arm: domain transfer + self-training (the full pipeline).
        {
            let arm_dir = ctx.arm_dir(&exp_dir, "dt_st");
            let (_translator, inter) = ctx.train_translator_arm(cfg, cfg.patch_size, &arm_dir)?;
            let st_cfg = cfg.selftrain_config(seed)?;
            let mut trainer = SelfTrainer::new(st_cfg, &ctx.bench_dir, Some(&inter), &arm_dir)?;
            let records = trainer.run()?;
            let last = records.last().expect("at least the init record");
            rows.push(ArmResult {
                arm: "dt_st".into(),
                seed,
                report: last.report.clone(),
                aux: None,
            });
        }

        // Arm: oracle (trains on sealed target GT; analysis only).
        {
            let sealed_images = load_annotations(&ctx.bench.target_train_sealed)?;
            let pool: Vec<TrainExample> = sealed_images
                .iter()
                .map(|img| TrainExample {
                    pixels: img.pixels.clone(),
                    boxes: img.boxes.clone(),
                    origin: Origin::SourceLike,
                })
                .collect();
            let (model, report) = ctx.labeled_only_arm(cfg, &pool, 0x0a_c1e)?;
            model.save(&ctx.arm_dir(&exp_dir, "oracle").join("detector.ckpt"))?;
            rows.push(ArmResult {
                arm: "oracle".into(),
                seed,
                report,
                aux: None,
            });
        }
    }

    let table = ExperimentTable {
        experiment: "factorial".into(),
        rows,
    };
    write_table(&table, &categories, &cfg.seeds, &exp_dir, "factorial")?;
    Ok(table)
}

/// Patch-size sweep: per patch p, a fresh translator, its content
/// preservation on held-out source frames (aux column), and the mAP of a
/// detector trained on that intermediate domain. The `none` arm is the
/// non-adapted baseline.
pub fn run_patch_sweep(cfg: &ExperimentConfig) -> Result<ExperimentTable> {
    cfg.validate()?;
    let exp_dir = cfg.out_dir.join("patch_sweep");
    let mut rows = Vec::new();
    let mut categories = Vec::new();

    for &seed in &cfg.seeds {
        let ctx = SeedContext::build(cfg, seed, &exp_dir)?;
        categories = ctx.categories.clone();

        let (model, report) = ctx.labeled_only_arm(cfg, &ctx.source_examples(), 0xba5e)?;
        model.save(&ctx.arm_dir(&exp_dir, "none").join("detector.ckpt"))?;
        rows.push(ArmResult {
            arm: "none".into(),
            seed,
            report,
            aux: None,
        });

        // Held-out source frames for the preservation metric, disjoint
        // from every benchmark index.
        let holdout: Vec<AnnotatedImage> = (0..8)
            .map(|i| {
                sample_scene(
                    &cfg.source_spec,
                    SceneSeed::new(seed, 1_000_000 + i),
                    crate::data::DomainTag::Source,
                    &format!("holdout_{i}"),
                )
            })
            .collect::<Result<Vec<_>>>()?;

        for &p in &crate::translate::ALLOWED_PATCH_SIZES {
            let arm = format!("p{p}");
            let arm_dir = ctx.arm_dir(&exp_dir, &arm);
            let (translator, inter) = ctx.train_translator_arm(cfg, p, &arm_dir)?;

            let cp: f64 = holdout
                .iter()
                .map(|img| {
                    let t = translate_full(&translator, &img.pixels);
                    content_preservation(&img.pixels, &t)
                })
                .collect::<Result<Vec<_>>>()?
                .iter()
                .sum::<f64>()
                / holdout.len() as f64;

            let inter_images = load_annotations(&inter)?;
            let pool: Vec<TrainExample> = inter_images
                .iter()
                .map(|img| TrainExample {
                    pixels: img.pixels.clone(),
                    boxes: img.boxes.clone(),
                    origin: Origin::SourceLike,
                })
                .collect();
            let (model, report) = ctx.labeled_only_arm(cfg, &pool, 0xd7 ^ p as u64)?;
            model.save(&arm_dir.join("detector.ckpt"))?;
            rows.push(ArmResult {
                arm,
                seed,
                report,
                aux: Some(cp),
            });
        }
    }

    let table = ExperimentTable {
        experiment: "patch_sweep".into(),
        rows,
    };
    write_table(&table, &categories, &cfg.seeds, &exp_dir, "patch_sweep")?;

    let mut cp_means = Vec::new();
    for &p in &crate::translate::ALLOWED_PATCH_SIZES {
        let arm = format!("p{p}");
        let vals: Vec<f64> = cfg
            .seeds
            .iter()
            .filter_map(|&s| table.aux_of(&arm, s))
            .collect();
        cp_means.push(vals.iter().sum::<f64>() / vals.len().max(1) as f64);
    }
    crate::plot::bar_chart(&cp_means, &exp_dir.join("content_preservation.png"))?;
    Ok(table)
}

/// Prerequisite chain shared by the sampling sweep and the mask matrix:
/// one translator, one intermediate-domain annotator, one round-0 pseudo
/// set per seed.
struct FirstRoundInputs {
    source_pool: Vec<TrainExample>,
    target_pool: Vec<TrainExample>,
    pseudo: PseudoLabelSet,
}

impl FirstRoundInputs {
    fn build(
        cfg: &ExperimentConfig,
        ctx: &SeedContext,
        seed_dir: &Path,
    ) -> Result<FirstRoundInputs> {
        let (_translator, inter) = ctx.train_translator_arm(cfg, cfg.patch_size, seed_dir)?;
        let inter_images = load_annotations(&inter)?;
        let inter_pool: Vec<TrainExample> = inter_images
            .iter()
            .map(|img| TrainExample {
                pixels: img.pixels.clone(),
                boxes: img.boxes.clone(),
                origin: Origin::SourceLike,
            })
            .collect();
        let mut stream = LabeledOnlyStream::new(
            inter_pool.len(),
            cfg.plan_source + cfg.plan_target,
            splitmix64(ctx.seed ^ 0x11),
        )?;
        let (annotator, _) = train_detector(
            &inter_pool,
            &[],
            &mut stream,
            LossMask::full(),
            &cfg.detector,
            &AnchorConfig::default(),
            ctx.categories.len(),
            splitmix64(ctx.seed ^ 0x12),
        )?;
        annotator.save(&seed_dir.join("annotator.ckpt"))?;
        let schedule = ConfidenceSchedule::new(cfg.schedule.clone())?;
        let pseudo = annotate(
            &annotator,
            &ctx.bench.target_train,
            schedule.threshold(0),
            0.5,
            0,
            &format!("annotator_seed{}", ctx.seed),
        )?;

        let by_id: std::collections::HashMap<&str, &Vec<crate::data::BoundingBox>> =
            pseudo.images.iter().map(|(id, b)| (id.as_str(), b)).collect();
        let target_pool: Vec<TrainExample> = ctx
            .target_train_images
            .iter()
            .map(|img| TrainExample {
                pixels: img.pixels.clone(),
                boxes: (*by_id.get(img.image_id.as_str()).expect("annotated")).clone(),
                origin: Origin::Target,
            })
            .collect();

        Ok(FirstRoundInputs {
            source_pool: ctx.source_examples(),
            target_pool,
            pseudo,
        })
    }
}

/// First-round mAP across sampling ratios 0:4, 1:3, 2:2, 3:1. The aux
/// column records the realized labeled:target draw ratio.
pub fn run_sampling_sweep(cfg: &ExperimentConfig) -> Result<ExperimentTable> {
    cfg.validate()?;
    let exp_dir = cfg.out_dir.join("sampling_sweep");
    let mut rows = Vec::new();
    let mut categories = Vec::new();
    let plans: [(usize, usize); 4] = [(0, 4), (1, 3), (2, 2), (3, 1)];

    for &seed in &cfg.seeds {
        let ctx = SeedContext::build(cfg, seed, &exp_dir)?;
        categories = ctx.categories.clone();
        let seed_dir = exp_dir.join(format!("seed_{seed}/shared"));
        let inputs = FirstRoundInputs::build(cfg, &ctx, &seed_dir)?;

        for (s, t) in plans {
            let arm = format!("{s}to{t}");
            let plan = SamplingPlan::ablation(s, t)?;
            let mut stream = make_batch_stream(
                inputs.source_pool.len(),
                inputs.target_pool.len(),
                plan,
                splitmix64(seed ^ ((s * 16 + t) as u64) ^ 0x5a),
            )?;
            let (model, _) = train_detector(
                &inputs.source_pool,
                &inputs.target_pool,
                &mut stream,
                LossMask::full(),
                &cfg.detector,
                &AnchorConfig::default(),
                ctx.categories.len(),
                splitmix64(seed ^ ((s * 16 + t) as u64) ^ 0x5b),
            )?;
            // Realized ratio from the stream's own counters.
            let ratio = if stream.target_draws == 0 {
                f64::INFINITY
            } else {
                stream.labeled_draws as f64 / stream.target_draws as f64
            };
            if t > 0 {
                let expect = s as f64 / t as f64;
                if (ratio - expect).abs() > 1e-12 {
                    return Err(Error::Validation(format!(
                        "stream ratio {ratio} deviates from plan {s}:{t}"
                    )));
                }
            }
            let report = evaluate_model(&model, &ctx.val_images, &ctx.categories, 0.5)?;
            model.save(&ctx.arm_dir(&exp_dir, &arm).join("detector.ckpt"))?;
            rows.push(ArmResult {
                arm,
                seed,
                report,
                aux: Some(ratio),
            });
        }
    }

    let table = ExperimentTable {
        experiment: "sampling_sweep".into(),
        rows,
    };
    write_table(&table, &categories, &cfg.seeds, &exp_dir, "sampling_sweep")?;

    let means: Vec<f64> = plans
        .iter()
        .map(|(s, t)| table.mean_map(&format!("{s}to{t}")))
        .collect();
    crate::plot::bar_chart(&means, &exp_dir.join("sampling_map.png"))?;
    Ok(table)
}

/// Loss-mask matrix over supervision origins: target-pseudo heads swept
/// with source fixed, source heads swept with target fixed, plus the
/// pseudo-only arm.
pub fn run_mask_matrix(cfg: &ExperimentConfig) -> Result<ExperimentTable> {
    cfg.validate()?;
    let exp_dir = cfg.out_dir.join("mask_matrix");
    let mut rows = Vec::new();
    let mut categories = Vec::new();

    let arms: Vec<(&str, Option<LossMask>)> = vec![
        ("pseudo_only", None),
        (
            "tgt_reg_only",
            Some(LossMask::new(HeadMask::both(), HeadMask::regression_only())?),
        ),
        (
            "tgt_cls_only",
            Some(LossMask::new(HeadMask::both(), HeadMask::classification_only())?),
        ),
        (
            "src_reg_only",
            Some(LossMask::new(HeadMask::regression_only(), HeadMask::both())?),
        ),
        (
            "src_cls_only",
            Some(LossMask::new(HeadMask::classification_only(), HeadMask::both())?),
        ),
        ("both", Some(LossMask::full())),
    ];

    for &seed in &cfg.seeds {
        let ctx = SeedContext::build(cfg, seed, &exp_dir)?;
        categories = ctx.categories.clone();
        let seed_dir = exp_dir.join(format!("seed_{seed}/shared"));
        let inputs = FirstRoundInputs::build(cfg, &ctx, &seed_dir)?;

        for (arm, mask) in &arms {
            let (plan, mask, labeled): (SamplingPlan, LossMask, &[TrainExample]) = match mask {
                None => (
                    SamplingPlan::ablation(0, cfg.plan_source + cfg.plan_target)?,
                    LossMask::new(HeadMask::both(), HeadMask::both())?,
                    &[],
                ),
                Some(m) => (cfg.plan()?, *m, &inputs.source_pool),
            };
            let mut stream = make_batch_stream(
                labeled.len(),
                inputs.target_pool.len(),
                plan,
                splitmix64(seed ^ 0x3a ^ arm.len() as u64),
            )?;
            let (model, _) = train_detector(
                labeled,
                &inputs.target_pool,
                &mut stream,
                mask,
                &cfg.detector,
                &AnchorConfig::default(),
                ctx.categories.len(),
                splitmix64(seed ^ 0x3b ^ (arm.len() as u64) << 3),
            )?;
            let report = evaluate_model(&model, &ctx.val_images, &ctx.categories, 0.5)?;
            model.save(&ctx.arm_dir(&exp_dir, arm).join("detector.ckpt"))?;
            rows.push(ArmResult {
                arm: arm.to_string(),
                seed,
                report,
                aux: Some(inputs.pseudo.box_count() as f64),
            });
        }
    }

    let table = ExperimentTable {
        experiment: "mask_matrix".into(),
        rows,
    };
    write_table(&table, &categories, &cfg.seeds, &exp_dir, "mask_matrix")?;

    let means: Vec<f64> = table.arms().iter().map(|a| table.mean_map(a)).collect();
    crate::plot::bar_chart(&means, &exp_dir.join("mask_map.png"))?;
    Ok(table)
}
