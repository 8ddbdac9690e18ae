mod common;

use ewc::recognition::{
    argmax_low, relabeled_accuracy, synthetic_stream, ContextBelief, DirichletPixelModel,
    Observation, Recognizer, RecognizerConfig, SwitchSchedule,
};
use ewc::tasks::make_permutation;
use proptest::prelude::*;

fn obs_strategy(pixels: usize, levels: usize) -> impl Strategy<Value = Observation> {
    prop::collection::vec(0..levels as u8, pixels).prop_map(move |s| Observation::new(s, levels).unwrap())
}

fn stream_strategy() -> impl Strategy<Value = (usize, usize, Vec<Observation>)> {
    (1usize..=12, 2usize..=4, 1usize..=5).prop_flat_map(|(pixels, levels, window)| {
        (
            Just(window),
            Just(levels),
            prop::collection::vec(obs_strategy(pixels, levels), 1..60),
        )
    })
}

fn mass(b: &ContextBelief) -> f64 {
    b.weights().iter().sum()
}

proptest! {
    #[test]
    fn fmn_invariants_hold_on_arbitrary_streams((window, levels, stream) in stream_strategy()) {
        let pixels = stream[0].len();
        let mut b = ContextBelief::new(pixels, levels, 1.0, SwitchSchedule::InverseTime).unwrap();
        for chunk in stream.chunks(window) {
            let before: Vec<DirichletPixelModel> = b.models().to_vec();
            for o in chunk {
                b.observe(o).unwrap();
                prop_assert!((mass(&b) - 1.0).abs() <= 1e-12);
            }
            let selected = b.window_commit().unwrap();
            prop_assert!((mass(&b) - 1.0).abs() <= 1e-12);
            let grown = b.models().len() - before.len();
            prop_assert!(grown <= 1);
            prop_assert_eq!(grown == 1, selected == before.len() - 1);
            for (i, (now, old)) in b.models().iter().zip(&before).enumerate() {
                if i != selected {
                    let a: Vec<u64> = now.counts().iter().map(|v| v.to_bits()).collect();
                    let c: Vec<u64> = old.counts().iter().map(|v| v.to_bits()).collect();
                    prop_assert_eq!(a, c);
                }
                prop_assert!(now.counts().iter().all(|&c| c >= now.prior_strength()));
            }
            let holdout = b.models().last().unwrap();
            prop_assert_eq!(holdout.evidence(), 0.0);
        }
    }

    #[test]
    fn argmax_ignores_constant_shifts(w in prop::collection::vec(-50.0f64..0.0, 1..10), shift in -100.0f64..100.0) {
        let shifted: Vec<f64> = w.iter().map(|v| v + shift).collect();
        prop_assert_eq!(argmax_low(&w), argmax_low(&shifted));
    }

    #[test]
    fn predictive_is_normalized_per_pixel(counts in prop::collection::vec(0u32..20, 3), symbol in 0u8..3) {
        let mut m = DirichletPixelModel::uniform(1, 3, 1.0).unwrap();
        for (s, &k) in counts.iter().enumerate() {
            for _ in 0..k {
                m.observe(&Observation::new(vec![s as u8], 3).unwrap()).unwrap();
            }
        }
        let total: f64 = (0..3u8)
            .map(|s| m.predictive_log_prob(&Observation::new(vec![s], 3).unwrap()).unwrap().exp())
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        let lp = m.predictive_log_prob(&Observation::new(vec![symbol], 3).unwrap()).unwrap();
        let expected = ((1 + counts[symbol as usize]) as f64 / (3 + counts.iter().sum::<u32>()) as f64).ln();
        prop_assert!((lp - expected).abs() < 1e-12);
    }
}

#[test]
fn uniform_models_keep_the_transition_ordering() {
    let models = vec![DirichletPixelModel::uniform(5, 2, 1.0).unwrap(); 3];
    let w = [0.5f64, 0.3, 0.2];
    let mut b = ContextBelief::with_models(models, w.iter().map(|v| v.ln()).collect(), SwitchSchedule::InverseTime, 4)
        .unwrap();
    b.belief_step(&Observation::new(vec![0, 1, 1, 0, 1], 2).unwrap()).unwrap();
    // Transition alone, alpha = 1/4 split over the 3 other contexts (hold-out included).
    let prior = [0.5, 0.3, 0.2, 0.0];
    let a = 0.25;
    let mixed: Vec<f64> = (0..4)
        .map(|c| (0..4).map(|k| prior[k] * if k == c { 1.0 - a } else { a / 3.0 }).sum())
        .collect();
    let got = b.weights();
    for c in 0..4 {
        assert!((got[c] - mixed[c]).abs() < 1e-12, "{got:?} vs {mixed:?}");
    }
}

#[test]
fn switch_matrix_approaches_identity() {
    let models = vec![DirichletPixelModel::uniform(2, 2, 1.0).unwrap(); 2];
    let mut b = ContextBelief::with_models(models, vec![0.0, f64::NEG_INFINITY], SwitchSchedule::InverseTime, 1_000_000)
        .unwrap();
    b.belief_step(&Observation::new(vec![0, 1], 2).unwrap()).unwrap();
    assert!(b.weights()[0] > 1.0 - 1e-5);
}

fn permuted_run(schedule: &[usize], seed: u64) -> (usize, f64) {
    let base = common::mnist_test();
    let perms: Vec<_> = (0..3).map(|k| make_permutation(784, seed * 10 + k).unwrap()).collect();
    let stream = synthetic_stream(&base, &perms, schedule, 200, seed).unwrap();
    let cfg = RecognizerConfig {
        downscale: 1,
        ..RecognizerConfig::default()
    };
    let trace = Recognizer::new(cfg).unwrap().run(stream.iter()).unwrap();
    let kept: Vec<_> = trace.points.iter().filter(|p| p.t % 200 >= 50).collect();
    let truth: Vec<usize> = kept.iter().map(|p| p.true_context.unwrap()).collect();
    let inferred: Vec<usize> = kept.iter().map(|p| p.inferred_context).collect();
    (trace.spawned_contexts, relabeled_accuracy(&truth, &inferred))
}

#[test]
fn distinct_tasks_get_distinct_contexts() {
    for seed in 0..3 {
        let (contexts, acc) = permuted_run(&[0, 1, 2], seed);
        assert_eq!(contexts, 3);
        assert!(acc >= 0.95, "seed {seed}: {acc}");
    }
}

#[test]
fn revisits_reuse_existing_contexts() {
    let (contexts, acc) = permuted_run(&[0, 1, 0, 2, 1], 4);
    assert_eq!(contexts, 3);
    assert!(acc >= 0.95);
}

#[test]
fn a_single_task_yields_one_context() {
    let (contexts, _) = permuted_run(&[1, 1], 6);
    assert_eq!(contexts, 1);
}
