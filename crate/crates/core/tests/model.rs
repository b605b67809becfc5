use std::sync::Arc;

use airl_core::model::{devectorize_classifier, vectorize_classifier, AirlConfig, AirlState, ClassifierVec};
use airl_core::rng;
use airl_core::tensor::{Graph, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::seeded(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn small() -> AirlConfig {
    AirlConfig { repr_dim: 6, lstm_hidden: 5, classifier_hidden: 4, ..AirlConfig::new(2, 2) }
}

/// `Trans(z_{<=t})` in inference mode for the last block of `blocks`.
fn attend_last(state: &AirlState, blocks: &[Tensor]) -> Tensor {
    let mut g = Graph::new();
    let vars = state.bind_frozen(&mut g);
    let seq: Vec<_> = blocks.iter().map(|b| g.constant(b.clone())).collect();
    let out = state.attend(&mut g, &vars, &seq, None).unwrap();
    g.value(out).clone()
}

/// All `Trans(z_{<=t})` for `t = 1..=upto` over stacked blocks.
fn attend_all(state: &AirlState, blocks: &[Tensor], upto: usize) -> Vec<Tensor> {
    let mut g = Graph::new();
    let vars = state.bind_frozen(&mut g);
    let seq: Vec<_> = blocks.iter().map(|b| g.constant(b.clone())).collect();
    let stacked = g.concat(&seq, 0).unwrap();
    let n = blocks[0].rows();
    let out = state.attend_sequence(&mut g, &vars, stacked, n, upto, None).unwrap();
    out.iter().map(|&v| g.value(v).clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attention_is_causal(seed in 0u64..1000, n in 1usize..5) {
        let state = AirlState::new(small(), seed).unwrap();
        let d = state.config.repr_dim;
        let past: Vec<Tensor> = (0..3).map(|i| random(&[n, d], seed * 10 + i)).collect();
        let alone = attend_last(&state, &past);
        let mut longer = past.clone();
        longer.push(random(&[n, d], seed * 10 + 7));
        longer.push(random(&[n, d], seed * 10 + 8));
        let all = attend_all(&state, &longer, 5);
        prop_assert!(alone.max_abs_diff(&all[2]).unwrap() <= 1e-12);
    }

    #[test]
    fn same_step_with_different_history_differs(seed in 0u64..1000) {
        let state = AirlState::new(small(), seed).unwrap();
        let d = state.config.repr_dim;
        let current = random(&[3, d], seed + 1);
        let a = attend_last(&state, &[random(&[3, d], seed + 2), current.clone()]);
        let b = attend_last(&state, &[random(&[3, d], seed + 3), current]);
        prop_assert!(a.max_abs_diff(&b).unwrap() > 1e-9);
    }

    #[test]
    fn encoder_rows_are_independent(seed in 0u64..1000, n in 2usize..6, row in 0usize..6) {
        let state = AirlState::new(small(), seed).unwrap();
        let x = random(&[n, 2], seed + 5);
        let mut y = x.clone();
        let row = row % n;
        y.data_mut()[row * 2] += 3.0;
        let (zx, zy) = (state.represent(&x).unwrap(), state.represent(&y).unwrap());
        for r in (0..n).filter(|&r| r != row) {
            prop_assert_eq!(zx.row_slice(r), zy.row_slice(r));
        }
    }

    #[test]
    fn vectorize_is_a_bijection(flat in prop::collection::vec(-10.0f64..10.0, 1089)) {
        let cfg = AirlConfig::new(2, 2);
        let v = ClassifierVec { flat };
        let h = devectorize_classifier(&v, &cfg).unwrap();
        prop_assert_eq!(&vectorize_classifier(&h), &v);
        let again = devectorize_classifier(&vectorize_classifier(&h), &cfg).unwrap();
        prop_assert_eq!(again, h);
    }

    #[test]
    fn lstm_roll_forward_is_prefix_consistent(seed in 0u64..1000) {
        let state = AirlState::new(small(), seed).unwrap();
        let seq = state.classifiers(4).unwrap();
        let mut g = Graph::new();
        let vars = state.bind_frozen(&mut g);
        let hist: Vec<_> = seq.iter().map(|h| g.constant(h.as_row())).collect();
        for t in 1..4 {
            let next = state.generate_classifier(&mut g, &vars, &hist[..t]).unwrap();
            prop_assert_eq!(g.value(next).data(), seq[t].flat.as_slice());
        }
        let shorter = state.classifiers(3).unwrap();
        prop_assert_eq!(&shorter[..], &seq[..3]);
    }
}

#[test]
fn classifier_lengths_for_binary_and_ten_classes() {
    assert_eq!(AirlConfig::new(2, 2).classifier_len(), 32 * 32 + 32 + 32 + 1);
    assert_eq!(AirlConfig::new(2, 10).classifier_len(), 32 * 32 + 32 + 32 * 10 + 10);
    let h = ClassifierVec { flat: vec![0.0; 1088] };
    assert!(devectorize_classifier(&h, &AirlConfig::new(2, 2)).is_err());
}

#[test]
fn logit_width_follows_class_count() {
    for (classes, width) in [(2, 1), (10, 10)] {
        let state = AirlState::new(AirlConfig::new(2, classes), 0).unwrap();
        let h = state.classifiers(1).unwrap().remove(0);
        let logits = state.logits(&h, &random(&[7, 2], 1)).unwrap();
        assert_eq!(logits.shape(), &[7, width]);
    }
}

#[test]
fn inference_is_deterministic_across_threads() {
    let state = Arc::new(AirlState::new(AirlConfig::new(2, 2), 9).unwrap());
    let x = Arc::new(random(&[50, 2], 3));
    let run = |s: &AirlState, x: &Tensor| {
        let hs = s.classifiers(5).unwrap();
        let logits = s.logits(&hs[4], x).unwrap();
        let blocks = vec![s.represent(x).unwrap(); 3];
        (logits, attend_last(s, &blocks))
    };
    let here = run(&state, &x);
    let handles: Vec<_> = (0..3)
        .map(|_| {
            let (s, x) = (Arc::clone(&state), Arc::clone(&x));
            std::thread::spawn(move || run(&s, &x))
        })
        .collect();
    for h in handles {
        assert_eq!(h.join().unwrap(), here);
    }
}
