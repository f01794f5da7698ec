//! Dataset, mask, and metric behavior: bucket landing, SSIM oracle
//! agreement, and property-based invariants.

use medfe_core::mask::{gen_irregular_mask, hole_ratio, is_binary, RatioBucket};
use medfe_core::metrics::{psnr, ssim, Metrics, PSNR_CAP_DB, SSIM_WINDOW};
use medfe_core::oracle::ssim_naive;
use medfe_core::rng::SeedRng;
use medfe_core::synth::synth_sample;
use medfe_core::tensor::{Shape, Tensor};
use proptest::prelude::*;

#[test]
fn mask_buckets_hold_over_many_seeds() {
    // reduced Monte-Carlo here; the acceptance suite runs the full sweep
    for bucket in RatioBucket::ALL {
        let (lo, hi) = bucket.bounds();
        for seed in 0..60u64 {
            let m = gen_irregular_mask(64, 64, bucket, seed).unwrap();
            let r = hole_ratio(&m);
            assert!(
                (lo.max(0.001)..hi).contains(&r),
                "bucket {} seed {seed}: {r}",
                bucket.label()
            );
            assert!(is_binary(&m));
        }
    }
}

#[test]
fn metrics_identity_and_offset_examples() {
    let mut rng = SeedRng::new(77);
    let a = rng.uniform_tensor(Shape::nchw(1, 3, 16, 16), 0.0, 1.0);
    let m = Metrics {
        psnr: psnr(&a, &a).unwrap(),
        ssim: ssim(&a, &a).unwrap(),
    };
    assert_eq!(m.psnr, PSNR_CAP_DB);
    assert!((m.ssim - 1.0).abs() < 1e-12);

    let b = a.map(|v| v + 0.1);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn ssim_matches_direct_loop_oracle() {
    let mut rng = SeedRng::new(78);
    for seed in 0..5u64 {
        let mut r = SeedRng::new(seed * 31 + 5);
        let a = r.uniform_tensor(Shape::nchw(1, 3, 12, 10), 0.0, 1.0);
        let noise = rng.uniform(0.01, 0.2);
        let b = Tensor::from_fn(a.shape(), |i| (a.data()[i] + r.normal() * noise).clamp(0.0, 1.0));
        let fast = ssim(&a, &b).unwrap();
        let slow = ssim_naive(&a, &b, SSIM_WINDOW).unwrap();
        assert!((fast - slow).abs() <= 1e-8, "{fast} vs {slow}");
    }
}

#[test]
fn ssim_rejects_mismatched_or_tiny_inputs() {
    let a = Tensor::zeros(Shape::nchw(1, 1, 8, 8));
    let b = Tensor::zeros(Shape::nchw(1, 1, 8, 9));
    assert!(ssim(&a, &b).is_err());
    let tiny = Tensor::zeros(Shape::nchw(1, 1, 4, 4));
    assert!(ssim(&tiny, &tiny).is_err());
}

#[test]
fn synthetic_corpus_generates_quickly() {
    // 512 samples at 64×64 in under 10 seconds
    let start = std::time::Instant::now();
    let mut checksum = 0.0f64;
    for seed in 0..512u64 {
        let s = synth_sample(seed, (64, 64));
        checksum += s.image.data()[0];
    }
    let dt = start.elapsed().as_secs_f64();
    assert!(dt < 10.0, "corpus took {dt:.1}s (checksum {checksum})");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ssim_stays_in_range(seed in 0u64..1000) {
        let mut rng = SeedRng::new(seed);
        let a = rng.uniform_tensor(Shape::nchw(1, 1, 9, 9), 0.0, 1.0);
        let b = rng.uniform_tensor(Shape::nchw(1, 1, 9, 9), 0.0, 1.0);
        let v = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&v));
    }

    #[test]
    fn irregular_masks_are_deterministic(seed in 0u64..500, bucket_idx in 0usize..5) {
        let bucket = RatioBucket::ALL[bucket_idx];
        let a = gen_irregular_mask(32, 32, bucket, seed).unwrap();
        let b = gen_irregular_mask(32, 32, bucket, seed).unwrap();
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn synth_values_stay_in_unit_range(seed in 0u64..200) {
        let s = synth_sample(seed, (16, 16));
        prop_assert!(s.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        prop_assert!(s.structure.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
