mod common;

use common::toy_task_data;
use ewc::consolidation::{PenaltySet, QuadraticPenalty};
use ewc::tasks::{Dataset, PermutedTask, TaskData};
use ewc::trainer::{
    evaluate, run_sequence, run_sequence_with, train_task, EarlyStopConfig, Regime, TrainConfig,
};
use ewc::{init_params, DropoutConfig, Error, NetworkSpec, ParamVector};
use ndarray::Array2;

fn tasks(n: usize) -> Vec<PermutedTask> {
    toy_task_data(4, 4, 21).permuted_tasks(n, 5).unwrap()
}

fn spec() -> NetworkSpec {
    NetworkSpec::mlp(16, &[24], 4)
}

fn cfg(regime: Regime) -> TrainConfig {
    let mut c = TrainConfig::new(regime);
    c.learning_rate = 0.05;
    c.batch_size = 16;
    c.epochs_per_task = 4;
    c.seed = 7;
    c
}

fn trajectory(spec: &NetworkSpec, tasks: &[PermutedTask], cfg: &TrainConfig) -> Vec<ParamVector> {
    let mut out = Vec::new();
    run_sequence_with(spec, tasks, cfg, |s| {
        out.push(s.params.clone());
        Ok(())
    })
    .unwrap();
    out
}

fn bits(p: &ParamVector) -> Vec<u64> {
    p.values().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn reruns_are_bit_identical() {
    let t = tasks(3);
    for regime in [Regime::Sgd, Regime::ewc(5.0), Regime::dropout(), Regime::L2 { coefficient: 0.5 }] {
        let c = cfg(regime);
        let a = run_sequence(&spec(), &t, &c).unwrap();
        let b = run_sequence(&spec(), &t, &c).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        let pa = trajectory(&spec(), &t, &c);
        let pb = trajectory(&spec(), &t, &c);
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(bits(x), bits(y));
        }
    }
}

#[test]
fn zero_lambda_ewc_follows_the_sgd_trajectory_exactly() {
    let t = tasks(3);
    let sgd = trajectory(&spec(), &t, &cfg(Regime::Sgd));
    let ewc0 = trajectory(&spec(), &t, &cfg(Regime::ewc(0.0)));
    for (a, b) in sgd.iter().zip(&ewc0) {
        assert_eq!(bits(a), bits(b));
    }
    let a = run_sequence(&spec(), &t, &cfg(Regime::Sgd)).unwrap();
    let b = run_sequence(&spec(), &t, &cfg(Regime::ewc(0.0))).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn single_task_never_applies_a_penalty() {
    let t = tasks(1);
    let sgd = trajectory(&spec(), &t, &cfg(Regime::Sgd));
    for regime in [Regime::ewc(1e3), Regime::L2 { coefficient: 10.0 }] {
        let other = trajectory(&spec(), &t, &cfg(regime));
        assert_eq!(bits(&sgd[0]), bits(&other[0]));
    }
}

#[test]
fn l2_displacement_shrinks_with_coefficient() {
    let t = tasks(2);
    let displacement = |coefficient: f64| {
        let p = trajectory(&spec(), &t, &cfg(Regime::L2 { coefficient }));
        p[1].distance(&p[0])
    };
    let small = displacement(1e-3);
    let mid = displacement(1.0);
    let large = displacement(15.0);
    assert!(small > mid && mid > large, "{small} {mid} {large}");
}

#[test]
fn ewc_pins_important_weights_as_lambda_grows() {
    let t = tasks(2);
    let c = cfg(Regime::ewc(1.0));
    let mut anchor = None;
    run_sequence_with(&spec(), &t[..1], &c, |s| {
        anchor = Some((s.params.clone(), s.fisher.unwrap().clone()));
        Ok(())
    })
    .unwrap();
    let (theta_a, fisher) = anchor.unwrap();
    // Strengths relative to the stiffest direction, up to the SGD stability edge.
    let stiff = c.learning_rate * fisher.max();
    let moved: Vec<f64> = [1e-3, 1e-1, 1.0]
        .iter()
        .map(|k| {
            let mut params = Vec::new();
            run_sequence_with(&spec(), &t, &cfg(Regime::ewc(k / stiff)), |s| {
                params.push(s.params.clone());
                Ok(())
            })
            .unwrap();
            assert_eq!(bits(&params[0]), bits(&theta_a));
            params[1]
                .values()
                .iter()
                .zip(theta_a.values())
                .zip(fisher.values())
                .map(|((a, b), f)| f * (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    assert!(moved[0] > moved[1] && moved[1] > moved[2], "{moved:?}");
}

#[test]
fn untrained_nets_score_near_chance() {
    let data = common::mnist_test();
    let spec = NetworkSpec::mlp(784, &[100], 10);
    for seed in 0..20 {
        let params = init_params(&spec, seed).unwrap();
        let acc = evaluate(&spec, &params, &data, None).unwrap();
        assert!((0.05..=0.20).contains(&acc), "seed {seed}: {acc}");
    }
}

#[test]
fn constant_logits_score_all_or_nothing() {
    let spec = NetworkSpec::mlp(2, &[], 3);
    let mut params = ParamVector::zeros(spec.block_map());
    let bias = params.blocks().layers()[0].bias.clone();
    params.values_mut()[bias.start + 1] = 1.0;
    let x = Array2::from_elem((5, 2), 0.5);
    let hit = Dataset::new(x.clone(), vec![1; 5], "ones").unwrap();
    let miss = Dataset::new(x, vec![2; 5], "twos").unwrap();
    let before = params.clone();
    assert_eq!(evaluate(&spec, &params, &hit, None).unwrap(), 1.0);
    assert_eq!(evaluate(&spec, &params, &miss, None).unwrap(), 0.0);
    assert_eq!(params, before);
}

#[test]
fn penalties_are_rejected_outside_penalized_regimes() {
    let t = tasks(1);
    let spec = spec();
    let p0 = init_params(&spec, 1).unwrap();
    let mut set = PenaltySet::new();
    set.push(QuadraticPenalty::uniform(&p0, 1.0).unwrap()).unwrap();
    let err = train_task(&spec, p0, &t[0], 0, &cfg(Regime::Sgd), &set, &[]).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn early_stopping_restores_the_best_check() {
    let t = tasks(2);
    let mut c = cfg(Regime::Dropout {
        dropout: DropoutConfig::default(),
        early_stop: EarlyStopConfig {
            patience: 1,
            cadence_epochs: 1,
        },
    });
    c.learning_rate = 0.5;
    c.epochs_per_task = 30;
    let report = run_sequence(&spec(), &t, &c).unwrap();
    for s in &report.segments {
        let h = &s.history;
        let best = h
            .valid_error
            .iter()
            .enumerate()
            .fold(0, |b, (i, &e)| if e < h.valid_error[b] { i } else { b });
        assert_eq!(h.restored_check, Some(best));
        assert_eq!(h.valid_error.len(), h.epochs_run);
        if h.stopped_early {
            assert!(h.epochs_run < 30);
        }
    }
}

#[test]
fn training_loss_stays_finite_for_every_regime() {
    let t = tasks(3);
    for regime in [Regime::Sgd, Regime::ewc(10.0), Regime::dropout(), Regime::L2 { coefficient: 1.0 }] {
        let r = run_sequence(&spec(), &t, &cfg(regime)).unwrap();
        for s in &r.segments {
            assert!(s.history.train_loss.iter().all(|l| l.is_finite()));
            assert_eq!(s.test_accuracy.len(), 3);
        }
    }
}

#[test]
fn sgd_learns_the_toy_tasks() {
    let t = tasks(1);
    let mut c = cfg(Regime::Sgd);
    c.epochs_per_task = 10;
    let r = run_sequence(&spec(), &t, &c).unwrap();
    assert!(r.accuracy(0, 0) > 0.9, "{}", r.accuracy(0, 0));
}

#[test]
fn task_conditioned_sequences_use_one_context_per_task() {
    let t = tasks(2);
    let spec = spec().with_task_contexts(1);
    assert!(run_sequence(&spec, &t, &cfg(Regime::Sgd)).is_err());
    let spec = NetworkSpec::mlp(16, &[24], 4).with_task_contexts(2);
    let r = run_sequence(&spec, &t, &cfg(Regime::ewc(1.0))).unwrap();
    assert_eq!(r.segments.len(), 2);
}

#[test]
fn toy_data_shape() {
    let d: TaskData = toy_task_data(4, 4, 1);
    let t = d.permuted_tasks(1, 0).unwrap();
    assert_eq!(t[0].classes(), 4);
}
