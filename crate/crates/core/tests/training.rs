use durm::data::{gen_blobs, train_test_split};
use durm::model::Checkpoint;
use durm::trainer::{evaluate, train, TrainConfig};
use proptest::prelude::*;

#[test]
fn linear_model_separates_wide_blobs() {
    let d = gen_blobs(0, 3, 100, 2, 10.0, 0.5).unwrap();
    let cfg = TrainConfig {
        hidden: vec![],
        epochs: 30,
        ..TrainConfig::default()
    };
    let r = train(&d, None, &cfg).unwrap();
    assert_eq!(r.final_params.layers().len(), 1);
    let acc = evaluate(&r.final_params, &d, &r.head).unwrap().accuracy;
    assert!(acc >= 0.99, "{acc}");
}

#[test]
fn durm_matches_erm_accuracy_on_reference_blobs() {
    let d = gen_blobs(7, 3, 300, 2, 5.0, 1.0).unwrap();
    let s = train_test_split(&d, 1.0 / 3.0, 7, true).unwrap();
    let run = |num_dummy| {
        let cfg = TrainConfig {
            num_dummy,
            seed: 7,
            ..TrainConfig::default()
        };
        let r = train(&s.train, Some(&s.test), &cfg).unwrap();
        evaluate(&r.final_params, &s.test, &r.head).unwrap()
    };
    let (erm, durm) = (run(0), run(2));
    assert!((erm.accuracy - durm.accuracy).abs() <= 0.02, "{} vs {}", erm.accuracy, durm.accuracy);
    assert_eq!(durm.dummy_predictions, 0);
}

#[test]
fn reruns_are_bit_identical() {
    let d = gen_blobs(1, 3, 50, 2, 5.0, 1.0).unwrap();
    for num_dummy in [0, 2] {
        let cfg = TrainConfig {
            num_dummy,
            epochs: 15,
            seed: 4,
            ..TrainConfig::default()
        };
        let a = train(&d, None, &cfg).unwrap();
        let b = train(&d, None, &cfg).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.history, b.history);
    }
}

#[test]
fn checkpoint_of_trained_model_predicts_identically() {
    let d = gen_blobs(2, 3, 40, 2, 5.0, 1.0).unwrap();
    let cfg = TrainConfig {
        num_dummy: 3,
        epochs: 10,
        ..TrainConfig::default()
    };
    let r = train(&d, None, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    Checkpoint::from_params(&r.final_params, Some(r.head)).save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.head, Some(r.head));
    let p = back.to_params().unwrap();
    assert_eq!(p, r.final_params);
    assert_eq!(
        evaluate(&p, &d, &r.head).unwrap(),
        evaluate(&r.final_params, &d, &r.head).unwrap()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn trace_invariants(seed in 0u64..1000, num_dummy in 0usize..4, batch in 1usize..40, epochs in 1usize..6) {
        let d = gen_blobs(seed, 3, 20, 2, 4.0, 1.0).unwrap();
        let cfg = TrainConfig { num_dummy, batch_size: batch, epochs, seed, hidden: vec![6], ..TrainConfig::default() };
        let r = train(&d, None, &cfg).unwrap();
        prop_assert_eq!(r.model_distance[0], 0.0);
        prop_assert_eq!(r.model_distance.len(), epochs + 1);
        let cum = r.trace.cumulative_grad_norm();
        prop_assert!(cum.windows(2).all(|w| w[1] >= w[0]));
        for f in &r.trace.dummy_fraction {
            prop_assert_eq!(f.len(), num_dummy);
            if num_dummy > 0 {
                prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        for e in &r.trace.epochs {
            prop_assert_eq!(e.samples, d.len());
            prop_assert!(e.variance.iter().all(|v| *v >= 0.0));
        }
    }
}
