mod common;

use std::path::Path;

use hydrodcm::config::{Ablation, ExperimentConfig, Mode};
use hydrodcm::data::{generate_world, write_world_csv, ReservoirRecord, Role, SERIES_HEADER};
use hydrodcm::harness;
use hydrodcm::losses::{total_value, LossWeights, Phase};
use hydrodcm::model::{ModelBundle, Pass};
use hydrodcm::tensor::rng::Rng;
use hydrodcm::tensor::trace_reads;
use hydrodcm::train::{evaluate, run_single, train_run, Dataset, Trainer, EPOCHS_HEADER};

use common::tiny_config;

fn world(cfg: &ExperimentConfig) -> Vec<ReservoirRecord> {
    generate_world(&cfg.world).unwrap()
}

#[test]
fn eval_of_checkpoint_reproduces_logged_nse() {
    let cfg = tiny_config(Mode::HydroDcm);
    let run = tempfile::tempdir().unwrap();
    run_single(&cfg, &world(&cfg), cfg.seed, Some(run.path())).unwrap();
    let ckpt = run.path().join("checkpoint.hdcm");

    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let a = harness::eval(&cfg, &ckpt, Some(first.path())).unwrap();
    let b = harness::eval(&cfg, &ckpt, Some(second.path())).unwrap();
    assert_eq!(a, b);

    let logged = std::fs::read(run.path().join("nse.csv")).unwrap();
    assert_eq!(std::fs::read(first.path().join("nse.csv")).unwrap(), logged);
    assert_eq!(std::fs::read(second.path().join("nse.csv")).unwrap(), logged);
}

#[test]
fn inference_reads_only_encoder_adapter_and_head() {
    let cfg = tiny_config(Mode::HydroDcm);
    let records = world(&cfg);
    let run = train_run(&cfg, &records, 0).unwrap();
    let (_, reads) = trace_reads(|| evaluate(&run.best, &run.dataset, &run.dataset.sets.test, &cfg));
    for (name, p) in run.best.named_parameters() {
        let used = reads.contains(&p.id());
        let inference = name.starts_with("encoder.") || name.starts_with("adapter.") || name.starts_with("head.");
        assert_eq!(used, inference, "{name} read during inference: {used}");
    }
}

/// Permutes the metadata rows of a written world across reservoirs.
fn shuffled_metadata_csv(dir: &Path, records: &[ReservoirRecord]) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut shuffled = records.to_vec();
    let n = shuffled.len();
    for i in 0..n {
        shuffled[i].metadata = records[(i + 1) % n].metadata;
    }
    let (series, metadata) = (dir.join("series.csv"), dir.join("metadata.csv"));
    write_world_csv(&shuffled, &series, &metadata).unwrap();
    (series, metadata)
}

#[test]
fn shuffled_metadata_changes_hydrodcm_but_not_base() {
    for (mode, should_change) in [(Mode::HydroDcm, true), (Mode::Base, false), (Mode::Dann, false)] {
        let mut cfg = tiny_config(mode);
        cfg.train.epochs = 4;
        let records = world(&cfg);
        let run = tempfile::tempdir().unwrap();
        run_single(&cfg, &records, cfg.seed, Some(run.path())).unwrap();
        let ckpt = run.path().join("checkpoint.hdcm");
        let clean = harness::eval(&cfg, &ckpt, None).unwrap();

        let data = tempfile::tempdir().unwrap();
        let mut probe = cfg.clone();
        probe.csv = Some(shuffled_metadata_csv(data.path(), &records));
        let shuffled = harness::eval(&probe, &ckpt, None).unwrap();
        assert_eq!(clean != shuffled, should_change, "{mode}");
    }
}

fn parse_row(line: &str) -> Vec<String> {
    line.split(',').map(str::to_string).collect()
}

#[test]
fn logged_totals_match_weighted_components() {
    for mode in [Mode::HydroDcm, Mode::Dann] {
        let cfg = tiny_config(mode);
        let dir = tempfile::tempdir().unwrap();
        run_single(&cfg, &world(&cfg), 0, Some(dir.path())).unwrap();
        let text = std::fs::read_to_string(dir.path().join("epochs.csv")).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(EPOCHS_HEADER));
        let w: LossWeights = cfg.effective_weights();
        let mut rows = 0;
        for line in lines {
            let f = parse_row(line);
            let phase = match f[1].as_str() {
                "warmup" => Phase::Warmup,
                "adversarial" => Phase::Adversarial,
                other => panic!("unknown phase {other}"),
            };
            let num = |i: usize| f[i].parse::<f64>().unwrap();
            for base in [3, 7] {
                let expected = total_value(num(base), num(base + 1), num(base + 2), &w, phase);
                assert!((expected - num(base + 3)).abs() <= 1e-9, "{mode}: {line}");
            }
            rows += 1;
        }
        assert_eq!(rows, cfg.train.epochs);
    }
}

#[test]
fn discriminator_is_untouched_during_warmup() {
    let mut cfg = tiny_config(Mode::HydroDcm);
    cfg.train.warmup_epochs = 2;
    let records = world(&cfg);
    let ds = Dataset::build(&records, &cfg, 0, None).unwrap();
    let bundle = ModelBundle::init(cfg.dims, 0, None);
    let before: Vec<Vec<f64>> = [&bundle.discriminator.hidden, &bundle.discriminator.out]
        .iter()
        .flat_map(|l| [l.weight.to_vec(), l.bias.to_vec()])
        .collect();
    let mut trainer = Trainer::new(&cfg, &ds, bundle, 0);
    for epoch in 0..2 {
        trainer.train_epoch(epoch).unwrap();
        let d = &trainer.bundle.discriminator;
        for p in [&d.hidden.weight, &d.hidden.bias, &d.out.weight, &d.out.bias] {
            assert!(p.grad().map_or(true, |g| g.iter().all(|&v| v == 0.0)), "epoch {epoch}");
        }
    }
    let d = &trainer.bundle.discriminator;
    let after: Vec<Vec<f64>> = [&d.hidden, &d.out].iter().flat_map(|l| [l.weight.to_vec(), l.bias.to_vec()]).collect();
    assert_eq!(before, after);

    trainer.train_epoch(2).unwrap();
    let d = &trainer.bundle.discriminator;
    assert!(d.out.weight.grad().unwrap().iter().any(|&g| g != 0.0), "adversarial phase trains the discriminator");
}

#[test]
fn overfits_ten_windows() {
    let mut cfg = tiny_config(Mode::HydroDcm);
    cfg.train.dropout = 0.0;
    cfg.train.batch_size = 10;
    cfg.train.learning_rate = 1e-2;
    let records = world(&cfg);
    let mut ds = Dataset::build(&records, &cfg, 0, None).unwrap();
    ds.sets.train.truncate(10);
    let mut trainer = Trainer::new(&cfg, &ds, ModelBundle::init(cfg.dims, 0, None), 0);
    let first = trainer.train_epoch(0).unwrap().sup;
    let mut last = first;
    for epoch in 1..200 {
        last = trainer.train_epoch(epoch).unwrap().sup;
    }
    assert!(last < 0.1 * first, "supervised loss {first} -> {last}");
}

#[test]
fn dann_classifies_every_source_reservoir() {
    let cfg = ExperimentConfig { mode: Mode::Dann, ..ExperimentConfig::default() };
    let records = world(&cfg);
    let ds = Dataset::build(&records, &cfg, 0, None).unwrap();
    let sources = records.iter().filter(|r| r.role == Role::Source).count();
    assert_eq!(sources, 27);
    assert_eq!(ds.num_domains, 27);
    let bundle = ModelBundle::init(cfg.dims, 0, Some(ds.num_domains));
    let cls = bundle.domain_classifier.as_ref().unwrap();
    assert_eq!(cls.weight.shape(), &[cfg.dims.hidden, 27]);

    let tiny = tiny_config(Mode::Dann);
    let run = train_run(&tiny, &world(&tiny), 0).unwrap();
    assert_eq!(run.best.domain_classifier.unwrap().weight.shape()[1], 4);
}

#[test]
fn eval_rejects_version_mismatch() {
    let cfg = tiny_config(Mode::Base);
    let dir = tempfile::tempdir().unwrap();
    run_single(&cfg, &world(&cfg), 0, Some(dir.path())).unwrap();
    let path = dir.path().join("checkpoint.hdcm");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[4] = bytes[4].wrapping_add(1);
    std::fs::write(&path, bytes).unwrap();
    let err = harness::eval(&cfg, &path, None).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");
}

#[test]
fn spatial_shuffle_only_changes_metadata() {
    let mut cfg = tiny_config(Mode::HydroDcm);
    let records = world(&cfg);
    let clean = Dataset::build(&records, &cfg, 3, None).unwrap();
    cfg.ablation = Ablation::SpatialShuffle;
    let probed = Dataset::build(&records, &cfg, 3, None).unwrap();
    assert_eq!(clean.sets, probed.sets);
    for (a, b) in clean.prepared.iter().zip(&probed.prepared) {
        assert_eq!(a.features, b.features);
    }
    assert!(clean.prepared.iter().zip(&probed.prepared).any(|(a, b)| a.metadata != b.metadata));
}

#[test]
fn forecasts_ignore_the_dropout_stream_at_inference() {
    let cfg = tiny_config(Mode::HydroDcm);
    let records = world(&cfg);
    let ds = Dataset::build(&records, &cfg, 0, None).unwrap();
    let bundle = ModelBundle::init(cfg.dims, 0, None);
    let batch = ds.batch(&ds.sets.test[..8], &cfg.dims);
    let a = bundle.forecast(&batch.x, &batch.s, true, &mut Pass::eval(&mut Rng::new(1))).unwrap().to_vec();
    let b = bundle.forecast(&batch.x, &batch.s, true, &mut Pass::eval(&mut Rng::new(2))).unwrap().to_vec();
    assert_eq!(a, b);
}

#[test]
fn series_header_is_stable() {
    assert_eq!(SERIES_HEADER.join(","), "reservoir_id,date,precip_mm,temp_c,inflow_cms");
}
