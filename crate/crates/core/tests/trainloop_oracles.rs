use charseg::model::{build_fcn, write_checkpoint, ArchitectureSpec};
use charseg::raster::BinaryImage;
use charseg::segment::Segment;
use charseg::synth::{intervals_to_mask, Sample};
use charseg::trainloop::{batch_accuracies, train, update_loss_weights, weighted_bce, LossWeights, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Algorithm 1 written out on a plain (α, β) pair.
fn simulate(mut a: f64, acc: &[(f64, f64)], cap: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(pos, neg) in acc {
        let b = 1.0 - a;
        if pos < neg {
            a += if b < cap { b } else { cap };
        } else {
            a -= if a < cap { a } else { cap };
        }
        a = a.clamp(0.0, 1.0);
        out.push((a, 1.0 - a));
    }
    out
}

#[test]
fn weight_update_examples() {
    let w = update_loss_weights(LossWeights::new(0.9).unwrap(), 0.4, 0.99, 0.001);
    assert!((w.alpha() - 0.901).abs() < 1e-12 && (w.beta() - 0.099).abs() < 1e-12);
    let w = update_loss_weights(LossWeights::new(0.9995).unwrap(), 0.1, 0.2, 0.001);
    assert_eq!((w.alpha(), w.beta()), (1.0, 0.0));
    let w = update_loss_weights(LossWeights::new(0.5).unwrap(), 0.7, 0.7, 0.001);
    assert!((w.alpha() - 0.499).abs() < 1e-12 && (w.beta() - 0.501).abs() < 1e-12);
}

#[test]
fn weight_trajectory_matches_simulation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let acc: Vec<(f64, f64)> = (0..10_000)
        .map(|_| {
            // mix of ties and strict orderings
            let a = (rng.random_range(0..20) as f64) / 19.0;
            let b = if rng.random_bool(0.1) { a } else { rng.random::<f64>() };
            (a, b)
        })
        .collect();
    let expect = simulate(0.9, &acc, 0.001);
    let mut w = LossWeights::initial();
    for (i, &(p, n)) in acc.iter().enumerate() {
        w = update_loss_weights(w, p, n, 0.001);
        assert_eq!((w.alpha(), w.beta()), expect[i], "step {i}");
        assert_eq!(w.alpha() + w.beta(), 1.0);
    }
}

#[test]
fn bce_examples() {
    let w = LossWeights::new(0.7).unwrap();
    let (loss, _) = weighted_bce(&[1.0 - 1e-12, 1e-12, 1.0 - 1e-12], &[1, 0, 1], 1, w).unwrap();
    assert!(loss.abs() <= 3e-10);

    let q = [1u8, 0, 0, 1, 0];
    let (loss, _) = weighted_bce(&[0.5f64; 5], &q, 1, w).unwrap();
    let expect = (0.7 * 2.0 + 0.3 * 3.0) * std::f64::consts::LN_2;
    assert!((loss - expect).abs() < 1e-12);

    assert!(matches!(
        weighted_bce(&[0.5f64; 3], &q, 1, w),
        Err(charseg::Error::Shape(_))
    ));
}

#[test]
fn balanced_weights_halve_plain_bce() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p: Vec<f64> = (0..40).map(|_| rng.random_range(0.01..0.99)).collect();
    let q: Vec<u8> = (0..40).map(|_| rng.random_bool(0.4) as u8).collect();
    let plain: f64 = p
        .iter()
        .zip(&q)
        .map(|(&p, &q)| if q == 1 { -p.ln() } else { -(1.0 - p).ln() })
        .sum::<f64>()
        / 2.0;
    let (loss, _) = weighted_bce(&p, &q, 2, LossWeights::new(0.5).unwrap()).unwrap();
    assert!((loss - plain / 2.0).abs() < 1e-12);
}

#[test]
fn accuracies_count_strictly() {
    assert_eq!(batch_accuracies(&[0.9f64, 0.1, 0.8], &[1, 0, 1]), (1.0, 1.0));
    assert_eq!(batch_accuracies(&[0.5f64; 4], &[1, 0, 1, 0]), (0.0, 0.0));
    assert_eq!(batch_accuracies(&[0.2f64, 0.3], &[0, 0]), (1.0, 1.0));

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p: Vec<f64> = (0..200).map(|_| rng.random()).collect();
    let q: Vec<u8> = (0..200).map(|_| rng.random_bool(0.2) as u8).collect();
    let pos: Vec<usize> = (0..200).filter(|&i| q[i] == 1).collect();
    let neg: Vec<usize> = (0..200).filter(|&i| q[i] == 0).collect();
    let ap = pos.iter().filter(|&&i| p[i] > 0.5).count() as f64 / pos.len() as f64;
    let an = neg.iter().filter(|&&i| p[i] < 0.5).count() as f64 / neg.len() as f64;
    assert_eq!(batch_accuracies(&p, &q), (ap, an));
}

#[test]
fn full_scale_defaults() {
    let c = TrainConfig::full_scale(0);
    assert_eq!(
        (c.batch_size, c.iterations, c.lr_drops.clone()),
        (8, 50_000, vec![20_000, 40_000])
    );
    assert_eq!(
        (c.learning_rate, c.momentum, c.alpha0, c.delta_cap),
        (1e-4, 0.9, 0.9, 0.001)
    );
    assert_eq!(c.lr_at(19_999), 1e-4);
    assert!((c.lr_at(20_000) - 1e-5).abs() < 1e-20);
    assert!((c.lr_at(45_000) - 1e-6).abs() < 1e-20);
}

fn tiny_dataset(count: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut image = BinaryImage::blank(4, 32);
            let l = rng.random_range(2..12);
            let r = l + rng.random_range(3..10);
            for y in 0..4 {
                for x in l..=r {
                    image.set(y, x, true);
                }
            }
            let intervals = vec![Segment::new(l, r)];
            let mask = intervals_to_mask(&intervals, 32).unwrap();
            Sample {
                image,
                intervals,
                mask,
                glyph_ids: vec![0],
            }
        })
        .collect()
}

#[test]
fn zero_iterations_return_initial_model() {
    let spec = ArchitectureSpec::tiny();
    let model = build_fcn::<f32>(&spec, 3).unwrap();
    let init = model.clone();
    let cfg = TrainConfig {
        iterations: 0,
        lr_drops: vec![],
        ..TrainConfig::desk_scale(1)
    };
    let (ckpt, log) = train(model, &tiny_dataset(4, 0), &cfg).unwrap();
    assert!(log.is_empty());
    assert_eq!(ckpt.model.params(), init.params());
}

#[test]
fn seeded_runs_are_bit_identical() {
    let spec = ArchitectureSpec::tiny();
    let data = tiny_dataset(12, 1);
    let cfg = TrainConfig {
        iterations: 30,
        lr_drops: vec![10, 20],
        batch_size: 4,
        learning_rate: 1e-2,
        ..TrainConfig::desk_scale(9)
    };
    let run = || {
        let (ckpt, log) = train(build_fcn::<f32>(&spec, 9).unwrap(), &data, &cfg).unwrap();
        (write_checkpoint(&ckpt), log.to_csv())
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(la.lines().count(), 31);
    assert!(la.starts_with("iteration,loss,acc_pos,acc_neg,alpha,lr"));
}

#[test]
fn width_mismatch_is_config_error() {
    let model = build_fcn::<f32>(&ArchitectureSpec::tiny(), 0).unwrap();
    let mut data = tiny_dataset(2, 0);
    data[1].image = BinaryImage::blank(4, 64);
    assert!(matches!(
        train(model, &data, &TrainConfig::desk_scale(0)),
        Err(charseg::Error::Config(_))
    ));
}

proptest! {
    #[test]
    fn weights_stay_complementary(a0 in 0.0f64..=1.0, steps in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..200)) {
        let mut w = LossWeights::new(a0).unwrap();
        for (p, n) in steps {
            let before = w.alpha();
            w = update_loss_weights(w, p, n, 0.001);
            prop_assert!((0.0..=1.0).contains(&w.alpha()) && (0.0..=1.0).contains(&w.beta()));
            prop_assert_eq!(w.alpha() + w.beta(), 1.0);
            if p < n {
                prop_assert!(w.alpha() >= before);
            }
        }
    }

    #[test]
    fn loss_is_nonnegative(ps in prop::collection::vec(0.0f64..=1.0, 1..64), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<u8> = ps.iter().map(|_| rng.random_bool(0.5) as u8).collect();
        let (loss, grad) = weighted_bce(&ps, &q, 1, LossWeights::initial()).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
        prop_assert!(grad.iter().all(|g| g.is_finite()));
    }
}
