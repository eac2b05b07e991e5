//! Ignored-by-default wall-clock probes for sizing experiment configs.
//! Run with: cargo test -p driftlab --test perf_probe -- --ignored --nocapture

use std::time::Instant;

use driftlab::detect::{
    train_detector, AnchorConfig, BatchSource, DetectorHyperparams, LabeledOnlyStream, LossMask,
    Origin, TrainExample,
};
use driftlab::synth::{sample_scene, DomainSpec, SceneSeed};
use driftlab::translate::{train_translator, TranslatorHyperparams};

fn scenes(n: usize, spec: &DomainSpec, base: u64) -> Vec<driftlab::data::AnnotatedImage> {
    (0..n)
        .map(|i| {
            sample_scene(
                spec,
                SceneSeed::new(99, base + i as u64),
                driftlab::data::DomainTag::Source,
                &format!("p_{i}"),
            )
            .unwrap()
        })
        .collect()
}

#[test]
#[ignore]
fn timing_detector_training() {
    let spec = DomainSpec::default_source();
    let imgs = scenes(48, &spec, 0);
    let pool: Vec<TrainExample> = imgs
        .iter()
        .map(|img| TrainExample {
            pixels: img.pixels.clone(),
            boxes: img.boxes.clone(),
            origin: Origin::SourceLike,
        })
        .collect();
    let mut stream = LabeledOnlyStream::new(pool.len(), 4, 0).unwrap();
    let hp = DetectorHyperparams {
        epochs: 2,
        ..Default::default()
    };
    let t0 = Instant::now();
    let (_, hist) = train_detector(
        &pool,
        &[],
        &mut stream,
        LossMask::full(),
        &hp,
        &AnchorConfig::default(),
        3,
        7,
    )
    .unwrap();
    let dt = t0.elapsed();
    let steps = 2 * stream.batches_per_epoch();
    println!(
        "detector: {steps} steps of batch 4 in {:.2?} ({:.0} ms/step), losses {hist:?}",
        dt,
        dt.as_secs_f64() * 1000.0 / steps as f64
    );
}

#[test]
#[ignore]
fn timing_translator_training() {
    let src_spec = DomainSpec::default_source();
    let tgt_spec = DomainSpec::default_target();
    let src: Vec<_> = scenes(16, &src_spec, 0).into_iter().map(|i| i.pixels).collect();
    let tgt: Vec<_> = scenes(16, &tgt_spec, 100).into_iter().map(|i| i.pixels).collect();
    for p in [32usize, 64, 128] {
        let hp = TranslatorHyperparams {
            epochs: 1,
            batch: 4,
            ..Default::default()
        };
        let t0 = Instant::now();
        let (_, hist) = train_translator(&src, &tgt, p, &hp, 0).unwrap();
        let dt = t0.elapsed();
        let steps = 16usize.div_ceil(4);
        println!(
            "translator p={p}: {steps} steps in {:.2?} ({:.0} ms/step), cycle {:.3}",
            dt,
            dt.as_secs_f64() * 1000.0 / steps as f64,
            hist[0].cycle
        );
    }
}

#[test]
#[ignore]
fn timing_inference() {
    let spec = DomainSpec::default_source();
    let imgs = scenes(8, &spec, 0);
    let pool: Vec<TrainExample> = imgs
        .iter()
        .map(|img| TrainExample {
            pixels: img.pixels.clone(),
            boxes: img.boxes.clone(),
            origin: Origin::SourceLike,
        })
        .collect();
    let mut stream = LabeledOnlyStream::new(pool.len(), 4, 0).unwrap();
    let hp = DetectorHyperparams {
        epochs: 1,
        ..Default::default()
    };
    let (model, _) = train_detector(
        &pool,
        &[],
        &mut stream,
        LossMask::full(),
        &hp,
        &AnchorConfig::default(),
        3,
        7,
    )
    .unwrap();
    let t0 = Instant::now();
    let mut total = 0usize;
    for img in &imgs {
        total += driftlab::detect::infer(&model, &img.pixels, 0.05, 0.5)
            .unwrap()
            .len();
    }
    println!(
        "inference: 8 frames in {:.2?} ({} boxes)",
        t0.elapsed(),
        total
    );
}

#[test]
#[ignore]
fn probe_factorial_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = driftlab::exp::ExperimentConfig {
        seeds: vec![0],
        out_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    let t0 = Instant::now();
    let table = driftlab::exp::run_factorial(&cfg).unwrap();
    println!("factorial in {:.1?}", t0.elapsed());
    for arm in ["baseline", "st", "dt", "dt_st", "oracle"] {
        println!("  {arm}: mAP {:.3}", table.map_of(arm, 0).unwrap());
    }
}

#[test]
#[ignore]
fn probe_detector_fit() {
    let spec = DomainSpec::default_source();
    let imgs = scenes(48, &spec, 0);
    let pool: Vec<TrainExample> = imgs
        .iter()
        .map(|img| TrainExample {
            pixels: img.pixels.clone(),
            boxes: img.boxes.clone(),
            origin: Origin::SourceLike,
        })
        .collect();
    for (epochs, lr) in [(30usize, 0.002f32), (40, 0.002), (60, 0.002)] {
        let mut stream = LabeledOnlyStream::new(pool.len(), 4, 0).unwrap();
        let hp = DetectorHyperparams { epochs, lr, ..Default::default() };
        let t0 = Instant::now();
        let r = train_detector(
            &pool, &[], &mut stream, LossMask::full(), &hp,
            &AnchorConfig::default(), 3, 7,
        );
        match r {
            Ok((model, hist)) => {
                let report = driftlab::selftrain::evaluate_model(
                    &model, &imgs, &driftlab::synth::DomainSpec::category_names(), 0.5,
                ).unwrap();
                println!(
                    "epochs {epochs} lr {lr}: train mAP {:.3}, loss first {:.3} last {:.3} ({:.0?})",
                    report.map, hist[0], hist[hist.len()-1], t0.elapsed()
                );
            }
            Err(e) => println!("epochs {epochs} lr {lr}: FAILED {e}"),
        }
    }
}

#[test]
#[ignore]
fn probe_predictions() {
    let spec = DomainSpec::default_source();
    let imgs = scenes(48, &spec, 0);
    let pool: Vec<TrainExample> = imgs
        .iter()
        .map(|img| TrainExample {
            pixels: img.pixels.clone(),
            boxes: img.boxes.clone(),
            origin: Origin::SourceLike,
        })
        .collect();
    let mut stream = LabeledOnlyStream::new(pool.len(), 4, 0).unwrap();
    let hp = DetectorHyperparams { epochs: 30, lr: 0.002, ..Default::default() };
    let (model, _) = train_detector(
        &pool, &[], &mut stream, LossMask::full(), &hp,
        &AnchorConfig::default(), 3, 7,
    ).unwrap();
    let cats = DomainSpec::category_names();
    let report = driftlab::selftrain::evaluate_model(&model, &imgs, &cats, 0.5).unwrap();
    println!("train mAP {:.3}, per-cat {:?}", report.map, report.per_category_ap);
    println!("gt {} preds {}", report.gt_count, report.prediction_count);
    for img in imgs.iter().take(3) {
        println!("--- {} ---", img.image_id);
        for b in &img.boxes {
            println!("  GT  cat {} [{:.0},{:.0},{:.0},{:.0}] size {:.0}", b.category, b.x_min, b.y_min, b.x_max, b.y_max, b.width());
        }
        let mut preds = driftlab::detect::infer(&model, &img.pixels, 0.05, 0.5).unwrap();
        preds.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        for b in preds.iter().take(8) {
            println!("  PR  cat {} [{:.0},{:.0},{:.0},{:.0}] score {:.2}", b.category, b.x_min, b.y_min, b.x_max, b.y_max, b.score.unwrap());
        }
    }
}

#[test]
#[ignore]
fn probe_domain_transfer() {
    use driftlab::translate::*;
    let dir = tempfile::tempdir().unwrap();
    let src_spec = DomainSpec::default_source();
    let tgt_spec = DomainSpec::default_target();
    let bench = driftlab::synth::build_benchmark(&src_spec, &tgt_spec, (48, 48, 24), 0, dir.path()).unwrap();
    let src_imgs = driftlab::data::load_annotations(&bench.source_train).unwrap();
    let tgt_imgs = driftlab::data::load_annotations(&bench.target_train).unwrap();
    let val_imgs = driftlab::data::load_annotations(&bench.target_val).unwrap();
    let cats = DomainSpec::category_names();

    let mean_px = |imgs: &[driftlab::data::AnnotatedImage]| -> f32 {
        imgs.iter().map(|i| i.pixels.mean().unwrap()).sum::<f32>() / imgs.len() as f32
    };
    println!("mean brightness: src {:.3} tgt {:.3}", mean_px(&src_imgs), mean_px(&tgt_imgs));

    let hp = TranslatorHyperparams { epochs: 12, batch: 4, ..Default::default() };
    let sp: Vec<_> = src_imgs.iter().map(|i| i.pixels.clone()).collect();
    let tp: Vec<_> = tgt_imgs.iter().map(|i| i.pixels.clone()).collect();
    let t0 = Instant::now();
    let (model, hist) = train_translator(&sp, &tp, 32, &hp, 0).unwrap();
    println!("translator 12ep in {:.0?}; cycle first {:.3} last {:.3}", t0.elapsed(), hist[0].cycle, hist.last().unwrap().cycle);

    let translated: Vec<_> = src_imgs.iter().map(|i| translate_full(&model, &i.pixels)).collect();
    let tmean = translated.iter().map(|p| p.mean().unwrap()).sum::<f32>() / translated.len() as f32;
    println!("translated mean {:.3} (target {:.3})", tmean, mean_px(&tgt_imgs));
    let cp: f64 = src_imgs.iter().zip(&translated).map(|(a, b)| content_preservation(&a.pixels, b).unwrap()).sum::<f64>() / 48.0;
    println!("content preservation {:.3}", cp);

    // detector arms
    let mk_pool = |imgs: &[driftlab::data::AnnotatedImage]| -> Vec<TrainExample> {
        imgs.iter().map(|img| TrainExample { pixels: img.pixels.clone(), boxes: img.boxes.clone(), origin: Origin::SourceLike }).collect()
    };
    let hp_det = DetectorHyperparams::default();
    let train_eval = |pool: &Vec<TrainExample>, seed: u64| -> f64 {
        let mut stream = LabeledOnlyStream::new(pool.len(), 4, seed).unwrap();
        let (m, _) = train_detector(pool, &[], &mut stream, LossMask::full(), &hp_det, &AnchorConfig::default(), 3, seed).unwrap();
        driftlab::selftrain::evaluate_model(&m, &val_imgs, &cats, 0.5).unwrap().map
    };
    let t0 = Instant::now();
    let baseline = train_eval(&mk_pool(&src_imgs), 1);
    println!("baseline (source-only) target-val mAP {:.3} ({:.0?})", baseline, t0.elapsed());

    let inter_imgs: Vec<driftlab::data::AnnotatedImage> = src_imgs.iter().zip(&translated).map(|(img, t)| driftlab::data::AnnotatedImage {
        image_id: img.image_id.clone(), pixels: t.clone(), domain_tag: driftlab::data::DomainTag::Intermediate,
        boxes: img.boxes.clone(), label_kind: img.label_kind,
    }).collect();
    let dt = train_eval(&mk_pool(&inter_imgs), 1);
    println!("dt (intermediate) target-val mAP {:.3}", dt);

    let sealed_imgs = driftlab::data::load_annotations(&bench.target_train_sealed).unwrap();
    let oracle = train_eval(&mk_pool(&sealed_imgs), 1);
    println!("oracle target-val mAP {:.3}", oracle);
}

#[test]
#[ignore]
fn probe_generalization() {
    let dir = tempfile::tempdir().unwrap();
    let src_spec = DomainSpec::default_source();
    let tgt_spec = DomainSpec::default_target();
    let bench = driftlab::synth::build_benchmark(&src_spec, &tgt_spec, (48, 48, 24), 0, dir.path()).unwrap();
    let cats = DomainSpec::category_names();
    let hp_det = DetectorHyperparams::default();
    let mk_pool = |imgs: &[driftlab::data::AnnotatedImage]| -> Vec<TrainExample> {
        imgs.iter().map(|img| TrainExample { pixels: img.pixels.clone(), boxes: img.boxes.clone(), origin: Origin::SourceLike }).collect()
    };

    // Source domain: train vs fresh-val generalization.
    let src_imgs = driftlab::data::load_annotations(&bench.source_train).unwrap();
    let src_holdout: Vec<_> = (0..24).map(|i| driftlab::synth::sample_scene(&src_spec, driftlab::synth::SceneSeed::new(0, 5_000_000 + i), driftlab::data::DomainTag::Source, &format!("h_{i}")).unwrap()).collect();
    let pool = mk_pool(&src_imgs);
    let mut stream = LabeledOnlyStream::new(pool.len(), 4, 1).unwrap();
    let (m, _) = train_detector(&pool, &[], &mut stream, LossMask::full(), &hp_det, &AnchorConfig::default(), 3, 1).unwrap();
    let tr = driftlab::selftrain::evaluate_model(&m, &src_imgs, &cats, 0.5).unwrap().map;
    let va = driftlab::selftrain::evaluate_model(&m, &src_holdout, &cats, 0.5).unwrap().map;
    println!("source: train mAP {tr:.3}, holdout mAP {va:.3}");

    // Target domain oracle: train vs val.
    let sealed_imgs = driftlab::data::load_annotations(&bench.target_train_sealed).unwrap();
    let val_imgs = driftlab::data::load_annotations(&bench.target_val).unwrap();
    let pool = mk_pool(&sealed_imgs);
    let mut stream = LabeledOnlyStream::new(pool.len(), 4, 1).unwrap();
    let (m, hist) = train_detector(&pool, &[], &mut stream, LossMask::full(), &hp_det, &AnchorConfig::default(), 3, 1).unwrap();
    let tr = driftlab::selftrain::evaluate_model(&m, &sealed_imgs, &cats, 0.5).unwrap().map;
    let va = driftlab::selftrain::evaluate_model(&m, &val_imgs, &cats, 0.5).unwrap().map;
    println!("target oracle: train mAP {tr:.3}, val mAP {va:.3}, loss last {:.4}", hist.last().unwrap());
}

#[test]
#[ignore]
fn probe_oracle_vs_data() {
    let tgt_spec = DomainSpec::default_target();
    let cats = DomainSpec::category_names();
    let val: Vec<_> = (0..32).map(|i| driftlab::synth::sample_scene(&tgt_spec, driftlab::synth::SceneSeed::new(7, 9_000_000 + i), driftlab::data::DomainTag::Target, &format!("v_{i}")).unwrap()).collect();
    for (n, epochs) in [(48usize, 40usize), (96, 40), (96, 60), (144, 40)] {
        let imgs: Vec<_> = (0..n).map(|i| driftlab::synth::sample_scene(&tgt_spec, driftlab::synth::SceneSeed::new(7, i as u64), driftlab::data::DomainTag::Target, &format!("t_{i}")).unwrap()).collect();
        let pool: Vec<TrainExample> = imgs.iter().map(|img| TrainExample { pixels: img.pixels.clone(), boxes: img.boxes.clone(), origin: Origin::SourceLike }).collect();
        let mut stream = LabeledOnlyStream::new(pool.len(), 4, 1).unwrap();
        let hp = DetectorHyperparams { epochs, ..Default::default() };
        let t0 = Instant::now();
        let (m, _) = train_detector(&pool, &[], &mut stream, LossMask::full(), &hp, &AnchorConfig::default(), 3, 1).unwrap();
        let tr = driftlab::selftrain::evaluate_model(&m, &imgs, &cats, 0.5).unwrap().map;
        let va = driftlab::selftrain::evaluate_model(&m, &val, &cats, 0.5).unwrap().map;
        println!("n={n} epochs={epochs}: train {tr:.3} val {va:.3} ({:.0?})", t0.elapsed());
    }
}

#[test]
#[ignore]
fn probe_translator_quality() {
    use driftlab::translate::*;
    let src_spec = DomainSpec::default_source();
    let tgt_spec = DomainSpec::default_target();
    let n = 144;
    let src: Vec<_> = (0..n).map(|i| driftlab::synth::sample_scene(&src_spec, driftlab::synth::SceneSeed::new(3, i), driftlab::data::DomainTag::Source, &format!("s_{i}")).unwrap()).collect();
    let tgt: Vec<_> = (0..n).map(|i| driftlab::synth::sample_scene(&tgt_spec, driftlab::synth::SceneSeed::new(3, 10_000 + i), driftlab::data::DomainTag::Target, &format!("t_{i}")).unwrap()).collect();
    let tgt_val: Vec<_> = (0..40).map(|i| driftlab::synth::sample_scene(&tgt_spec, driftlab::synth::SceneSeed::new(3, 20_000 + i), driftlab::data::DomainTag::Target, &format!("v_{i}")).unwrap()).collect();
    let sp: Vec<_> = src.iter().map(|i| i.pixels.clone()).collect();
    let tp: Vec<_> = tgt.iter().map(|i| i.pixels.clone()).collect();
    let tgt_mean: f32 = tp.iter().map(|p| p.mean().unwrap()).sum::<f32>() / n as f32;
    let cats = DomainSpec::category_names();

    for epochs in [12usize, 20] {
        let hp = TranslatorHyperparams { epochs, batch: 4, ..Default::default() };
        let t0 = Instant::now();
        let (model, hist) = train_translator(&sp, &tp, 32, &hp, 0).unwrap();
        let translated: Vec<_> = src.iter().map(|i| translate_full(&model, &i.pixels)).collect();
        let tmean = translated.iter().map(|p| p.mean().unwrap()).sum::<f32>() / n as f32;
        let cp: f64 = src.iter().zip(&translated).map(|(a, b)| content_preservation(&a.pixels, b).unwrap()).sum::<f64>() / n as f64;
        println!("epochs {epochs}: translated mean {tmean:.3} (target {tgt_mean:.3}), cp {cp:.3}, cycle {:.3}->{:.3} ({:.0?})",
            hist[0].cycle, hist.last().unwrap().cycle, t0.elapsed());

        let inter: Vec<driftlab::data::AnnotatedImage> = src.iter().zip(&translated).map(|(img, t)| driftlab::data::AnnotatedImage {
            image_id: img.image_id.clone(), pixels: t.clone(), domain_tag: driftlab::data::DomainTag::Intermediate,
            boxes: img.boxes.clone(), label_kind: img.label_kind,
        }).collect();
        let pool: Vec<TrainExample> = inter.iter().map(|img| TrainExample { pixels: img.pixels.clone(), boxes: img.boxes.clone(), origin: Origin::SourceLike }).collect();
        let mut stream = LabeledOnlyStream::new(pool.len(), 4, 1).unwrap();
        let hp_det = DetectorHyperparams { epochs: 40, ..Default::default() };
        let (m, _) = train_detector(&pool, &[], &mut stream, LossMask::full(), &hp_det, &AnchorConfig::default(), 3, 1).unwrap();
        let dt = driftlab::selftrain::evaluate_model(&m, &tgt_val, &cats, 0.5).unwrap().map;
        println!("  -> DT val mAP {dt:.3}");
    }
}
