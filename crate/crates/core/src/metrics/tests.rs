use proptest::prelude::*;

use super::reference::{reference_pair, reference_set};
use super::*;
use crate::datasets::{generate_synthetic, Split, SyntheticTask, SyntheticTaskSpec, Texture};

fn plane(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Tensor<f64> {
    Tensor::from_fn([1, 1, h, w], |[_, _, i, j]| f(i, j))
}

fn negation_set(n: usize) -> PairedDataset {
    generate_synthetic(&SyntheticTaskSpec {
        task: SyntheticTask::BiasedNegation,
        image_size: 16,
        n_samples: n,
        seed: 9,
        texture: Texture::SmoothedNoise,
        generator_depth: 4,
        split: Split::Val,
    })
    .unwrap()
}

#[test]
fn psnr_closed_forms() {
    let a = plane(4, 4, |_, _| 0.0);
    let b = plane(4, 4, |_, _| 0.5);
    assert!((psnr(&a, &b, 1.0).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
    assert!((psnr(&a, &b, 1.0).unwrap() - 6.0206).abs() < 1e-4);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
    assert!(psnr(&a, &plane(4, 5, |_, _| 0.0), 1.0).is_err());
    assert!(psnr(&a, &b, 0.0).is_err());
}

#[test]
fn ssim_constant_fields_have_luminance_term_only() {
    let p = SsimParams::default();
    let a = plane(16, 16, |_, _| 0.2);
    let b = plane(16, 16, |_, _| 0.8);
    let c1 = 1e-4;
    let want = (2.0 * 0.2 * 0.8 + c1) / (0.2f64 * 0.2 + 0.8 * 0.8 + c1);
    let got = ssim(&a, &b, &p).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    assert!((got - 0.470666).abs() < 1e-4);
    assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn ssim_rejects_small_images_and_bad_windows() {
    let a = plane(10, 16, |_, _| 0.2);
    assert!(matches!(ssim(&a, &a, &SsimParams::default()), Err(Error::Metric(_))));
    let even = SsimParams {
        window: 4,
        ..SsimParams::default()
    };
    assert!(ssim(&plane(16, 16, |_, _| 0.1), &plane(16, 16, |_, _| 0.1), &even).is_err());
}

#[test]
fn ssim_window_sum_matches_direct_sum() {
    // One 11x11 window: the valid map has a single entry, so SSIM equals the
    // closed form on Gaussian-weighted moments computed directly.
    let a = plane(11, 11, |i, j| ((i * 7 + j * 3) % 10) as f64 / 10.0);
    let b = plane(11, 11, |i, j| ((i * 2 + j * 5 + 1) % 9) as f64 / 9.0);
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let gs: f64 = g.iter().sum();
    let wt = |i: usize, j: usize| g[i] * g[j] / (gs * gs);
    let (mut ux, mut uy, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..11 {
        for j in 0..11 {
            let (p, q, w) = (a.get([0, 0, i, j]), b.get([0, 0, i, j]), wt(i, j));
            ux += w * p;
            uy += w * q;
            xx += w * p * p;
            yy += w * q * q;
            xy += w * p * q;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let want = ((2.0 * ux * uy + c1) * (2.0 * (xy - ux * uy) + c2))
        / ((ux * ux + uy * uy + c1) * (xx - ux * ux + yy - uy * uy + c2));
    assert!((ssim(&a, &b, &SsimParams::default()).unwrap() - want).abs() < 1e-12);
}

#[test]
fn matches_reference_implementation_on_generated_pairs() {
    let set = reference_set().unwrap();
    assert_eq!(set.pairs.len(), 100);
    let p = SsimParams::default();
    for row in &set.pairs {
        let (a, b) = reference_pair(row.index);
        assert_eq!(a.shape(), [1, row.channels, row.height, row.width]);
        assert!((l1(&a, &b).unwrap() - row.l1).abs() < 1e-12, "l1 pair {}", row.index);
        assert!((psnr(&a, &b, 1.0).unwrap() - row.psnr).abs() < 1e-6, "psnr pair {}", row.index);
        assert!((ssim(&a, &b, &p).unwrap() - row.ssim).abs() < 1e-4, "ssim pair {}", row.index);
    }
}

#[test]
fn metric_names_round_trip() {
    for m in Metric::ALL {
        assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
    }
    assert!("fcn".parse::<Metric>().is_err());
}

#[test]
fn evaluate_identity_on_identical_pairs() {
    let ds = negation_set(3);
    let same = PairedDataset::new(
        ds.samples
            .iter()
            .map(|s| PairedSample::new(s.id.clone(), s.x.clone(), s.x.clone()).unwrap())
            .collect(),
        Split::Val,
        ("x".into(), "x".into()),
    )
    .unwrap();
    let r = evaluate(&Identity, &same, Direction::A, ReportMetadata::default()).unwrap();
    assert_eq!(r.aggregates.l1.mean, 0.0);
    assert!((r.aggregates.ssim.mean - 1.0).abs() < 1e-12);
    assert_eq!(r.aggregates.psnr.mean, PSNR_CAP_DB);
}

#[test]
fn evaluate_label_lookup_is_exact_in_both_directions() {
    let ds = negation_set(4);
    for dir in [Direction::A, Direction::B] {
        let r = evaluate(&LabelLookup::new(&ds, dir), &ds, dir, ReportMetadata::default()).unwrap();
        assert_eq!(r.direction, dir.label());
        assert_eq!(r.ids(), ds.ids());
        assert!(r.per_sample.iter().all(|m| m.l1 == 0.0 && m.psnr == PSNR_CAP_DB));
    }
}

#[test]
fn aggregates_equal_brute_force_means() {
    let ds = negation_set(5);
    let r = evaluate(&ConstantOutput(0.25), &ds, Direction::B, ReportMetadata::default()).unwrap();
    let n = r.per_sample.len() as f64;
    let mut mean = 0.0;
    for m in &r.per_sample {
        mean += m.psnr;
    }
    mean /= n;
    assert!((r.aggregates.psnr.mean - mean).abs() < 1e-12);
    let var = r.per_sample.iter().map(|m| (m.l1 - r.aggregates.l1.mean).powi(2)).sum::<f64>() / n;
    assert!((r.aggregates.l1.std - var.sqrt()).abs() < 1e-12);
    // Constant output: L1 is the mean distance of the label to 0.625 in [0, 1].
    for (m, s) in r.per_sample.iter().zip(&ds.samples) {
        let want = s.x.data().iter().map(|&v| ((f64::from(v) + 1.0) / 2.0 - 0.625).abs()).sum::<f64>() / s.x.len() as f64;
        assert!((m.l1 - want).abs() < 1e-12);
    }
}

#[test]
fn evaluate_rejects_empty_dataset() {
    let empty = PairedDataset::new(vec![], Split::Val, ("a".into(), "b".into())).unwrap();
    assert!(evaluate(&Identity, &empty, Direction::A, ReportMetadata::default()).is_err());
    assert!(self_inverse_score(&Identity, &empty).is_err());
}

#[test]
fn report_files_round_trip() {
    let ds = negation_set(2);
    let meta = ReportMetadata {
        checkpoint_id: Some("abc".into()),
        dataset_hash: Some("def".into()),
        model: Some("stub".into()),
        metrics: MetricParams::default(),
    };
    let r = evaluate(&ConstantOutput(0.0), &ds, Direction::A, meta).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let [json, csv] = r.write(dir.path(), "eval_A2B").unwrap();
    let back = MetricReport::from_json(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(back, r);
    let csv = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "id,l1,psnr,ssim");
    assert_eq!(lines.len(), 3);
    let first: Vec<f64> = lines[1].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(first, vec![r.per_sample[0].l1, r.per_sample[0].psnr, r.per_sample[0].ssim]);
}

#[test]
fn self_inverse_score_oracles() {
    let ds = negation_set(4);
    assert_eq!(self_inverse_score(&AnalyticInvolution, &ds).unwrap(), 0.0);
    assert_eq!(self_inverse_score(&Identity, &ds).unwrap(), 0.0);
    let c = 0.1f32;
    let got = self_inverse_score(&ConstantOutput(c), &ds).unwrap();
    let mut want = 0.0;
    for s in &ds.samples {
        for v in [&s.x, &s.y] {
            want += v.data().iter().map(|&p| (f64::from(c) - f64::from(p)).abs() / 2.0).sum::<f64>() / v.len() as f64;
        }
    }
    want /= 2.0 * ds.len() as f64;
    assert!(got > 0.0);
    assert!((got - want).abs() < 1e-12);
    let swapped = self_inverse_score(&ConstantOutput(c), &ds.swapped()).unwrap();
    assert!((got - swapped).abs() < 1e-15);
}

fn image_pair(max: usize) -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>)> {
    (1usize..=3, 11usize..=max, 11usize..=max).prop_flat_map(|(c, h, w)| {
        let n = c * h * w;
        (
            proptest::collection::vec(0.0f64..=1.0, n),
            proptest::collection::vec(0.0f64..=1.0, n),
        )
            .prop_map(move |(a, b)| {
                (
                    Tensor::from_vec([1, c, h, w], a).unwrap(),
                    Tensor::from_vec([1, c, h, w], b).unwrap(),
                )
            })
    })
}

fn reversed_channels(t: &Tensor<f64>) -> Tensor<f64> {
    let c = t.channels();
    Tensor::from_fn(t.shape(), |[n, k, i, j]| t.get([n, c - 1 - k, i, j]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metrics_are_symmetric_and_bounded((a, b) in image_pair(16)) {
        let p = SsimParams::default();
        let s = ssim(&a, &b, &p).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!((s - ssim(&b, &a, &p).unwrap()).abs() < 1e-12);
        prop_assert!((psnr(&a, &b, 1.0).unwrap() - psnr(&b, &a, 1.0).unwrap()).abs() < 1e-12);
        prop_assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-9);
        prop_assert!(s < 1.0 - 1e-9 || a == b);
    }

    #[test]
    fn metrics_ignore_consistent_channel_relabeling((a, b) in image_pair(14)) {
        let p = SsimParams::default();
        let (ra, rb) = (reversed_channels(&a), reversed_channels(&b));
        prop_assert!((ssim(&a, &b, &p).unwrap() - ssim(&ra, &rb, &p).unwrap()).abs() < 1e-12);
        prop_assert!((psnr(&a, &b, 1.0).unwrap() - psnr(&ra, &rb, 1.0).unwrap()).abs() < 1e-9);
        prop_assert!((l1(&a, &b).unwrap() - l1(&ra, &rb).unwrap()).abs() < 1e-12);
    }
}
