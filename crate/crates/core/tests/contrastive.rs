mod common;

use ascend_core::{supcon_loss, supcon_loss_with_grad, ContrastiveConfig, LabelSet, MaskMode};
use common::{random_batch, supcon_oracle};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(tau: f64, theta: f64, beta: f64, mode: MaskMode) -> ContrastiveConfig {
    ContrastiveConfig {
        temperature: tau,
        threshold: theta,
        soft_width: beta,
        mode,
        ..Default::default()
    }
}

fn unit(deg: f64) -> Vec<f64> {
    let r = deg.to_radians();
    vec![r.cos(), r.sin()]
}

fn labels(ids: &[usize]) -> Vec<LabelSet> {
    ids.iter().map(|&i| LabelSet::single(i)).collect()
}

#[test]
fn three_vectors_in_the_plane() {
    let z = vec![unit(0.0), unit(30.0), unit(120.0)];
    let y = labels(&[0, 0, 1]);
    let c = cfg(0.5, 0.7, 0.05, MaskMode::Hard);
    let oracle = supcon_oracle(&z, &y, 0.5, 0.7, 0.05, MaskMode::Hard);
    assert!((oracle - 0.225_957_123_008_958_98).abs() < 1e-12);
    assert!((supcon_loss(&z, &y, &c).unwrap() - oracle).abs() < 1e-10);
}

#[test]
fn pair_conventions() {
    let same = vec![unit(0.0), unit(10.0)];
    let c = cfg(0.1, 0.7, 0.05, MaskMode::Hard);
    assert!(supcon_loss(&same, &labels(&[0, 0]), &c).unwrap().abs() < 1e-12);
    assert_eq!(supcon_loss(&same, &labels(&[0, 1]), &c).unwrap(), 0.0);
    assert!(supcon_loss(&same[..1], &labels(&[0]), &c).is_err());
}

#[test]
fn matches_oracle_on_random_batches() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..400 {
        let b = rng.gen_range(2..=6);
        let d = rng.gen_range(1..=8);
        let classes = rng.gen_range(1..=3);
        let (z, y) = random_batch(&mut rng, b, d, classes);
        let tau = rng.gen_range(0.05..1.0);
        let theta = rng.gen_range(-0.9..0.9);
        let beta = rng.gen_range(0.01..0.5);
        for mode in [MaskMode::Hard, MaskMode::Soft] {
            let got = supcon_loss(&z, &y, &cfg(tau, theta, beta, mode)).unwrap();
            let want = supcon_oracle(&z, &y, tau, theta, beta, mode);
            assert!(
                (got - want).abs() < 1e-10,
                "case {case} {mode:?}: {got} vs {want}"
            );
        }
    }
}

#[test]
fn hard_threshold_at_one_removes_every_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let (mut z, y) = random_batch(&mut rng, 6, 4, 2);
        z[1] = z[0].clone();
        let out = supcon_loss_with_grad(&z, &y, &cfg(0.07, 1.0, 0.05, MaskMode::Hard)).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_z.data.iter().all(|&g| g == 0.0));
    }
}

#[test]
fn soft_converges_to_hard_as_width_shrinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let (z, y) = random_batch(&mut rng, 5, 3, 2);
        let theta = rng.gen_range(-0.5..0.5);
        let hard = supcon_loss(&z, &y, &cfg(0.3, theta, 1.0, MaskMode::Hard)).unwrap();
        let soft = supcon_loss(&z, &y, &cfg(0.3, theta, 1e-9, MaskMode::Soft)).unwrap();
        assert!((hard - soft).abs() < 1e-6, "{hard} vs {soft}");
    }
}

fn batch_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (2usize..=6, 1usize..=8).prop_flat_map(|(b, d)| {
        (
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), b),
            prop::collection::vec(0usize..3, b),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn loss_is_nonnegative((z, y) in batch_strategy(), theta in -1.0f64..1.0, soft in any::<bool>()) {
        let mode = if soft { MaskMode::Soft } else { MaskMode::Hard };
        prop_assert!(supcon_loss(&z, &labels(&y), &cfg(0.1, theta, 0.05, mode)).unwrap() >= 0.0);
    }

    #[test]
    fn invariant_to_rescaling((z, y) in batch_strategy(), scales in prop::collection::vec(0.01f64..100.0, 6)) {
        let c = cfg(0.2, 0.3, 0.05, MaskMode::Hard);
        let scaled: Vec<Vec<f64>> = z.iter().zip(&scales).map(|(v, s)| v.iter().map(|x| x * s).collect()).collect();
        let base = supcon_loss(&z, &labels(&y), &c).unwrap();
        prop_assert!((base - supcon_loss(&scaled, &labels(&y), &c).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn invariant_to_batch_order((z, y) in batch_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..z.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let zp: Vec<_> = order.iter().map(|&i| z[i].clone()).collect();
        let yp: Vec<_> = order.iter().map(|&i| y[i]).collect();
        for mode in [MaskMode::Hard, MaskMode::Soft] {
            let c = cfg(0.5, 0.2, 0.1, mode);
            let a = supcon_loss(&z, &labels(&y), &c).unwrap();
            let b = supcon_loss(&zp, &labels(&yp), &c).unwrap();
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn hard_loss_does_not_increase_with_threshold((z, y) in batch_strategy()) {
        let mut prev = f64::INFINITY;
        for k in 0..=20 {
            let theta = -1.0 + 0.1 * k as f64;
            let l = supcon_loss(&z, &labels(&y), &cfg(0.3, theta, 0.05, MaskMode::Hard)).unwrap();
            prop_assert!(l <= prev + 1e-12, "theta {}: {} > {}", theta, l, prev);
            prev = l;
        }
    }
}
