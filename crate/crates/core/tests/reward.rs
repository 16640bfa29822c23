use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use uifeedback::reward::{
    batch_loss_and_grad, combine, score, topk_indices, train, LossForm, PromptEmbeddingSet, RewardHead, SyntheticGroup,
    SyntheticPool, TrainerConfig, TrainingPair,
};

fn gaussian(rng: &mut ChaCha8Rng, d: usize, sigma: f64) -> Vec<f64> {
    (0..d).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn axis(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

fn add(a: &[f64], b: &[f64], s: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

/// Chosen near `+u`, rejected near `-u`, text along an orthogonal axis.
fn separable(d: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<TrainingPair> {
    let (u, t) = (axis(d, 0), axis(d, 1));
    let sigma = 0.5 / (d as f64).sqrt();
    (0..n)
        .map(|_| TrainingPair {
            chosen: add(&gaussian(rng, d, sigma), &u, 1.0),
            rejected: add(&gaussian(rng, d, sigma), &u, -1.0),
            text: add(&gaussian(rng, d, 0.1 * sigma), &t, 1.0),
        })
        .collect()
}

fn synthetic(d: usize, groups: usize, rng: &mut ChaCha8Rng) -> Vec<SyntheticGroup> {
    let t = axis(d, 1);
    let sigma = 0.5 / (d as f64).sqrt();
    (0..groups)
        .map(|_| SyntheticGroup {
            text: t.clone(),
            candidates: (0..8)
                .map(|_| {
                    let a: f64 = rng.random_range(-1.0..1.0);
                    add(&gaussian(rng, d, sigma), &t, a)
                })
                .collect(),
        })
        .collect()
}

fn accuracy(head: &RewardHead, pairs: &[TrainingPair]) -> f64 {
    let ok = pairs
        .iter()
        .filter(|p| score(&p.chosen, &p.text, head).unwrap() > score(&p.rejected, &p.text, head).unwrap())
        .count();
    ok as f64 / pairs.len() as f64
}

#[test]
fn learns_separable_preferences() {
    let d = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let train_pairs = separable(d, 300, &mut rng);
    let held_out = separable(d, 100, &mut rng);
    let head = RewardHead::identity(d, 100.0);
    let pool = SyntheticPool::new(synthetic(d, 20, &mut rng), &head).unwrap();
    let before = accuracy(&head, &held_out);
    let out = train(&head, &train_pairs, &pool, &TrainerConfig::default()).unwrap();
    let after = accuracy(&out.head, &held_out);
    assert!(after >= 0.95, "accuracy {before} -> {after}");
    assert_eq!(out.trace.len(), 100);
    assert_eq!(out.head.trained_steps, 100);
    let frac: f64 = out.trace.iter().map(|r| r.synthetic_fraction).sum::<f64>() / 100.0;
    assert!((frac - 0.5).abs() < 0.05, "synthetic fraction {frac}");
}

#[test]
fn printed_loss_form_learns_the_reverse() {
    let d = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pairs = separable(d, 200, &mut rng);
    let head = RewardHead::identity(d, 100.0);
    let empty = SyntheticPool::new(vec![], &head).unwrap();
    let cfg = TrainerConfig {
        aug_prob: 0.0,
        loss_form: LossForm::AsPrinted,
        ..TrainerConfig::default()
    };
    let out = train(&head, &pairs, &empty, &cfg).unwrap();
    assert!(accuracy(&out.head, &pairs) < 0.05);
}

#[test]
fn training_is_deterministic_per_seed() {
    let d = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs = separable(d, 50, &mut rng);
    let head = RewardHead::identity(d, 100.0);
    let pool = SyntheticPool::new(synthetic(d, 5, &mut rng), &head).unwrap();
    let cfg = TrainerConfig {
        max_steps: 20,
        rng_seed: 77,
        ..TrainerConfig::default()
    };
    let a = train(&head, &pairs, &pool, &cfg).unwrap();
    let b = train(&head, &pairs, &pool, &cfg).unwrap();
    assert_eq!(a.head.to_json().unwrap(), b.head.to_json().unwrap());
    assert_eq!(a.trace_csv().unwrap(), b.trace_csv().unwrap());
    assert!(a.trace_csv().unwrap().starts_with("step,mean_loss,synthetic_fraction\n0,"));
    let c = train(&head, &pairs, &pool, &TrainerConfig { rng_seed: 78, ..cfg }).unwrap();
    assert_ne!(a.head.weights, c.head.weights);
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut head = RewardHead::identity(d, 100.0);
    for w in head.weights.iter_mut() {
        *w += 0.3 * rng.sample::<f64, _>(StandardNormal);
    }
    // Rejected close to the text, chosen far from it: the hinge is active.
    let t = gaussian(&mut rng, d, 1.0);
    let pair = TrainingPair {
        chosen: gaussian(&mut rng, d, 1.0),
        rejected: add(&t, &gaussian(&mut rng, d, 0.1), 1.0),
        text: t,
    };
    let batch = [pair];
    let (loss, grad) = batch_loss_and_grad(&head, &batch, 0.01, LossForm::Corrected).unwrap();
    assert!(loss > 1.0, "hinge should be active, loss {loss}");
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..d * d {
        let mut plus = head.clone();
        plus.weights[i] += h;
        let mut minus = head.clone();
        minus.weights[i] -= h;
        let lp = batch_loss_and_grad(&plus, &batch, 0.01, LossForm::Corrected).unwrap().0;
        let lm = batch_loss_and_grad(&minus, &batch, 0.01, LossForm::Corrected).unwrap().0;
        let numeric = (lp - lm) / (2.0 * h);
        let rel = (numeric - grad[i]).abs() / numeric.abs().max(grad[i].abs()).max(1e-3);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-5, "worst relative error {worst}");
}

#[test]
fn overflowing_scale_is_reported() {
    let d = 4;
    let mut head = RewardHead::identity(d, f64::MAX);
    head.weights[0] = 2.0;
    let pair = TrainingPair {
        chosen: vec![-1.0, 0.0, 0.0, 0.0],
        rejected: vec![1.0, 0.0, 0.0, 0.0],
        text: vec![1.0, 0.0, 0.0, 0.0],
    };
    let empty = SyntheticPool::new(vec![], &RewardHead::identity(d, 1.0)).unwrap();
    let cfg = TrainerConfig {
        aug_prob: 0.0,
        ..TrainerConfig::default()
    };
    assert!(matches!(
        train(&head, &[pair], &empty, &cfg),
        Err(uifeedback::Error::NonFiniteLoss { step: 0 })
    ));
}

proptest! {
    #[test]
    fn combine_is_elementwise(v in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0), 1..32)) {
        let p = PromptEmbeddingSet {
            v_pos: v.iter().map(|t| t.0).collect(),
            v_neg: v.iter().map(|t| t.1).collect(),
            v_empty: v.iter().map(|t| t.2).collect(),
        };
        let got = combine(&p).unwrap();
        for (g, (a, b, c)) in got.iter().zip(&v) {
            prop_assert!((g - (a - 0.5 * (0.9 * b + 0.1 * c))).abs() < 1e-12);
        }
    }

    #[test]
    fn topk_matches_stable_sort(scores in proptest::collection::vec(0u8..6, 0..40), k in 1usize..12) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let mut oracle: Vec<usize> = (0..scores.len()).collect();
        // Stable sort keeps lower indices first among equal scores.
        oracle.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
        oracle.truncate(k);
        prop_assert_eq!(topk_indices(&scores, k), oracle);
    }

    #[test]
    fn score_ignores_input_scale(x in proptest::collection::vec(-1.0f64..1.0, 6), c in 0.01f64..100.0) {
        prop_assume!(x.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let head = RewardHead::identity(6, 100.0);
        let t = [0.3, -0.2, 0.9, 0.0, 0.1, 0.5];
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let a = score(&x, &t, &head).unwrap();
        let b = score(&scaled, &t, &head).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!(a.abs() <= 100.0 + 1e-9);
    }
}
