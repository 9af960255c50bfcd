use one2one::datasets::{
    augment_pair_with_offset, generate_synthetic, load_paired_dataset, write_paired_dataset, AugmentConfig, PairedDataset,
    PairedSample, Split, SyntheticTask, SyntheticTaskSpec, Texture,
};
use one2one::metrics::{
    evaluate, self_inverse_score, AnalyticInvolution, ConstantOutput, Identity, LabelLookup, Metric, ReportMetadata,
};
use one2one::models::{load_checkpoint, save_checkpoint, Checkpoint, Direction, DiscriminatorSpec, TrainMode};
use one2one::sensitivity::{run_sensitivity, sensitivity_summary, SensitivityConfig, SensitivityModels};
use one2one::training::{generator_from_checkpoint, train, TrainConfig};
use one2one::ImageTensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn spec(task: SyntheticTask, n: usize, seed: u64, split: Split) -> SyntheticTaskSpec {
    SyntheticTaskSpec {
        task,
        image_size: 16,
        n_samples: n,
        seed,
        texture: Texture::SmoothedNoise,
        generator_depth: 4,
        split,
    }
}

fn negation(n: usize, seed: u64) -> PairedDataset {
    generate_synthetic(&spec(SyntheticTask::BiasedNegation, n, seed, Split::Val)).unwrap()
}

fn tiny_config(mode: TrainMode) -> TrainConfig {
    let mut cfg = TrainConfig::desk(mode, 1);
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.log_every = 1;
    cfg.generator.depth = 4;
    cfg.generator.base_filters = 4;
    cfg.generator.max_filters = 16;
    cfg.discriminator = DiscriminatorSpec {
        in_channels: 2,
        filter_schedule: vec![2, 4],
    };
    cfg.augment.load_size = 18;
    cfg.augment.crop_size = 16;
    cfg
}

#[test]
fn synthetic_dataset_survives_an_8_bit_png_round_trip() {
    let ds = generate_synthetic(&spec(SyntheticTask::GammaSwap, 5, 3, Split::Train)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_paired_dataset(dir.path(), &ds).unwrap();
    assert_eq!(files.len(), 10);
    let back = load_paired_dataset(dir.path(), Split::Train, 1).unwrap();
    assert_eq!(back.ids(), ds.ids());
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        for (u, v) in a.x.data().iter().chain(a.y.data()).zip(b.x.data().iter().chain(b.y.data())) {
            assert!((u - v).abs() <= 1.0 / 255.0 + 1e-6, "{u} vs {v}");
        }
    }
}

#[test]
fn analytic_involution_is_perfect_in_both_directions() {
    let ds = negation(6, 1);
    for dir in [Direction::A, Direction::B] {
        let r = evaluate(&AnalyticInvolution, &ds, dir, ReportMetadata::default()).unwrap();
        assert!(r.aggregates.l1.mean < 1e-6, "{}", r.aggregates.l1.mean);
        assert!((r.aggregates.ssim.mean - 1.0).abs() < 1e-6);
    }
    assert!(self_inverse_score(&AnalyticInvolution, &ds).unwrap() < 1e-6);
    assert!(self_inverse_score(&Identity, &ds).unwrap() < 1e-12);
}

#[test]
fn constant_output_scores_match_brute_force() {
    let ds = negation(4, 2);
    let r = evaluate(&ConstantOutput(0.0), &ds, Direction::A, ReportMetadata::default()).unwrap();
    let brute = ds
        .samples
        .iter()
        .map(|s| s.y.data().iter().map(|v| ((*v as f64 + 1.0) / 2.0 - 0.5).abs()).sum::<f64>() / s.y.len() as f64)
        .sum::<f64>()
        / ds.len() as f64;
    assert!((r.aggregates.l1.mean - brute).abs() < 1e-9);
}

#[test]
fn exact_inverse_perturbation_leaves_every_metric_unchanged() {
    let ds = negation(5, 4);
    let cfg = SensitivityConfig::new(Direction::A, Metric::ALL.to_vec());
    let perturber = LabelLookup::new(&ds, Direction::B);
    let models = SensitivityModels {
        pix2pix_a: &AnalyticInvolution,
        pix2pix_b: &perturber,
        one2one: &AnalyticInvolution,
    };
    let out = run_sensitivity(&cfg, &models, &ds, ReportMetadata::default()).unwrap();
    for report in [&out.pix2pix, &out.one2one] {
        assert_eq!(report.per_sample.len(), ds.len() * Metric::ALL.len());
        assert!(report.per_sample.iter().all(|r| r.d_e.abs() < 1e-9));
    }
    let table = sensitivity_summary(&[&out.pix2pix, &out.one2one]);
    assert!(table.to_csv().contains("n/a"));
}

#[test]
fn trained_checkpoint_round_trips_through_disk() {
    let train_set = generate_synthetic(&spec(SyntheticTask::BiasedNegation, 8, 0, Split::Train)).unwrap();
    let cfg = tiny_config(TrainMode::One2One);
    let ckpt = train(&cfg, &train_set, None).unwrap();
    assert_eq!(ckpt.step, cfg.steps_per_epoch(train_set.len()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let back: Checkpoint = load_checkpoint(&path).unwrap();
    assert_eq!(back.to_bytes().unwrap(), ckpt.to_bytes().unwrap());

    let val = negation(3, 9);
    let g1 = generator_from_checkpoint(&ckpt).unwrap();
    let g2 = generator_from_checkpoint(&back).unwrap();
    let x = &val.samples[0].x;
    assert_eq!(g1.infer(x).unwrap().data(), g2.infer(x).unwrap().data());
}

fn marker_sample(size: usize, idx: usize) -> PairedSample {
    let mut x = ImageTensor::full([1, 1, size, size], -1.0);
    let mut y = ImageTensor::full([1, 1, size, size], -1.0);
    x.data_mut()[idx] = 1.0;
    y.data_mut()[idx] = 1.0;
    PairedSample::new("m", x, y).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn jitter_crops_both_images_at_one_offset(seed in any::<u64>(), idx in 0usize..256, slack in 0usize..6) {
        let sample = marker_sample(16, idx);
        let cfg = AugmentConfig { load_size: 16 + slack, crop_size: 16, enabled: true };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (out, (top, left)) = augment_pair_with_offset(&sample, &cfg, &mut rng).unwrap();
        prop_assert!(top <= slack && left <= slack);
        prop_assert_eq!(out.x.data(), out.y.data());
        prop_assert_eq!(out.x.shape(), [1, 1, 16, 16]);
    }

    #[test]
    fn self_inverse_score_is_symmetric_under_domain_swap(seed in 0u64..1000, c in -1.0f32..1.0) {
        let ds = negation(3, seed);
        let a = self_inverse_score(&ConstantOutput(c), &ds).unwrap();
        let b = self_inverse_score(&ConstantOutput(c), &ds.swapped()).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a >= 0.0);
    }
}
