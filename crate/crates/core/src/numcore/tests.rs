use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::check_op_suite;
use super::*;

fn m(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn op_examples() {
    let mut t = Tape::new();
    let a = t.constant(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
    let i = t.constant(Tensor::eye(2));
    let p = t.matmul(a, i).unwrap();
    assert_eq!(t.value(p), t.value(a));

    let z = t.constant(m(&[&[0.0, 0.0]]));
    let s = t.softmax(z, Axis::Cols);
    assert_eq!(t.value(s).data(), &[0.5, 0.5]);

    let l = t.constant(m(&[&[2f64.ln(), 0.0]]));
    let s = t.softmax(l, Axis::Cols);
    assert!((t.value(s).get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
    assert!((t.value(s).get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn shape_errors_name_op_and_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(2, 3));
    let b = t.constant(Tensor::zeros(2, 3));
    let err = t.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    let c = t.constant(Tensor::zeros(3, 2));
    assert!(t.add(a, c).is_err());
}

#[test]
fn kl_closed_form_examples() {
    let mut t = Tape::new();
    let mu = t.constant(Tensor::zeros(3, 4));
    let sd = t.constant(Tensor::ones(3, 4));
    let kl = t.gaussian_kl(mu, sd).unwrap();
    assert_eq!(t.value(kl).item(), 0.0);

    let mu = t.constant(Tensor::scalar(1.0));
    let sd = t.constant(Tensor::scalar(1.0));
    let kl = t.gaussian_kl(mu, sd).unwrap();
    assert_eq!(t.value(kl).item(), 0.5);

    let bad = t.constant(Tensor::scalar(0.0));
    assert!(matches!(t.gaussian_kl(mu, bad), Err(NumError::Domain { .. })));
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::new();
    let w = store
        .add("w", Tensor::randn(3, 2, &mut ChaCha8Rng::seed_from_u64(1)))
        .unwrap();
    let mut t = Tape::new();
    let wv = t.param(&store, w);
    let off = t.constant(Tensor::ones(3, 2));
    let loss = t.sum(wv);
    let grads = t.backward(loss).unwrap();
    assert_eq!(grads.get(wv).unwrap(), &Tensor::ones(3, 2));
    assert!(grads.get(off).is_none());

    // repeated reverse passes accumulate into the store
    t.backward_into(loss, &mut store).unwrap();
    t.backward_into(loss, &mut store).unwrap();
    assert_eq!(store.grad(w), &Tensor::full(3, 2, 2.0));

    let wide = t.constant(Tensor::zeros(1, 2));
    assert!(matches!(t.backward(wide), Err(NumError::Usage(_))));
}

#[test]
fn inference_tape_matches_recording_tape_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::randn(4, 3, &mut rng);
    let w = Tensor::randn(3, 3, &mut rng);
    let run = |mut t: Tape| {
        let xv = t.leaf(x.clone(), true);
        let wv = t.leaf(w.clone(), true);
        let h = t.matmul(xv, wv).unwrap();
        let h = t.tanh(h);
        let s = t.softmax(h, Axis::Cols);
        let c = t.cosine_similarity(s, s).unwrap();
        t.value(c).clone()
    };
    assert_eq!(run(Tape::new()), run(Tape::inference()));
}

#[test]
fn reparam_sampling() {
    let mut t = Tape::new();
    let mu = t.leaf(m(&[&[1.5, -2.0]]), true);
    let tiny = t.leaf(Tensor::full(1, 2, 1e-300), true);
    let s = reparam_sample(&mut t, mu, tiny, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(t.value(s), t.value(mu));

    let sd = t.leaf(Tensor::full(1, 2, 0.7), true);
    let a = reparam_sample(&mut t, mu, sd, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = reparam_sample(&mut t, mu, sd, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(t.value(a), t.value(b));

    // gradient flows to mu (identity) and sigma (the drawn noise)
    let loss = t.sum(a);
    let g = t.backward(loss).unwrap();
    assert_eq!(g.get(mu).unwrap(), &Tensor::ones(1, 2));
    assert!(g.get(sd).is_some());
}

#[test]
fn reparam_sample_mean_within_three_standard_errors() {
    let n = 100_000;
    let mu = 0.8;
    let sigma = 1.7;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut t = Tape::inference();
    let mv = t.constant(Tensor::full(n, 1, mu));
    let sv = t.constant(Tensor::full(n, 1, sigma));
    let s = reparam_sample(&mut t, mv, sv, &mut rng).unwrap();
    let mean = t.value(s).sum() / n as f64;
    let se = sigma / (n as f64).sqrt();
    assert!((mean - mu).abs() < 3.0 * se, "mean {mean}");
}

#[test]
fn every_op_passes_finite_difference_check_over_five_seeds() {
    for seed in 0..5u64 {
        for row in check_op_suite(seed).unwrap() {
            assert!(row.max_rel_error < 1e-4, "seed {seed}: {row:?}");
        }
    }
}

#[test]
fn non_recorded_tensor_has_no_gradient() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::ones(2, 2));
    let b = t.leaf(Tensor::ones(2, 2), true);
    let c = t.mul(a, b).unwrap();
    let loss = t.sum(c);
    let g = t.backward(loss).unwrap();
    assert!(g.get(a).is_none());
    assert!(g.get(b).is_some());
}

proptest! {
    #[test]
    fn softmax_is_positive_and_normalised(data in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut t = Tape::inference();
        let x = t.constant(Tensor::new(3, 4, data).unwrap());
        for axis in [Axis::Rows, Axis::Cols] {
            let s = t.softmax(x, axis);
            let v = t.value(s);
            prop_assert!(v.data().iter().all(|&p| p > 0.0));
            let sums = t.sum_axis(s, axis);
            for &total in t.value(sums).data() {
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn kl_is_nonnegative(
        mu in prop::collection::vec(-3.0f64..3.0, 6),
        sd in prop::collection::vec(0.05f64..4.0, 6),
    ) {
        let mut t = Tape::inference();
        let m = t.constant(Tensor::new(2, 3, mu).unwrap());
        let s = t.constant(Tensor::new(2, 3, sd).unwrap());
        let kl = t.gaussian_kl(m, s).unwrap();
        prop_assert!(t.value(kl).item() >= 0.0);
    }

    #[test]
    fn kl_zero_only_at_prior(mu in -1e-3f64..1e-3, sd in 0.999f64..1.001) {
        let mut t = Tape::inference();
        let m = t.constant(Tensor::scalar(mu));
        let s = t.constant(Tensor::scalar(sd));
        let kl_var = t.gaussian_kl(m, s).unwrap();
        let kl = t.value(kl_var).item();
        if mu == 0.0 && sd == 1.0 {
            prop_assert_eq!(kl, 0.0);
        } else {
            prop_assert!(kl > 0.0);
        }
    }
}
