use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::params::{load_checkpoint, save_checkpoint, AdamWConfig, Init, ParamStore};
use crate::matrix::Matrix;

fn store_with(seed: u64, shapes: &[(&str, usize, usize)]) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for &(name, r, c) in shapes {
        store.register(name, r, c, Init::UniformFanIn, &mut rng);
    }
    store
}

#[test]
fn forward_basics() {
    let tape = Tape::new();
    let x = tape.constant(Matrix::from_rows(&[vec![1.0, -2.0], vec![0.0, 3.0]]));
    assert_eq!(tape.value(tape.relu(x)).data(), &[1.0, 0.0, 0.0, 3.0]);
    assert_eq!(tape.value(tape.tanh(tape.scale(x, 0.0))).data(), &[0.0; 4]);
    let s = tape.sum_all(x);
    assert_eq!(tape.scalar(s), 2.0);
    let t = tape.transpose(x);
    assert_eq!(tape.value(t).data(), &[1.0, 0.0, -2.0, 3.0]);
}

#[test]
fn row_softmax_of_zero_row_is_uniform() {
    let tape = Tape::new();
    for width in [2usize, 4, 7] {
        let x = tape.constant(Matrix::zeros(1, width));
        let y = tape.value(tape.row_softmax(x));
        for j in 0..width {
            assert!((y.get(0, j) - 1.0 / width as f64).abs() < 1e-15);
        }
    }
}

#[test]
fn matmul_identity_and_grad() {
    let tape = Tape::new();
    let mut store = store_with(0, &[("a", 3, 2)]);
    store.set_value("a", Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]));
    let a = tape.param(&store, "a");
    let i3 = tape.constant(Matrix::eye(3));
    let prod = tape.matmul(i3, a);
    assert_eq!(tape.value(prod), *store.value("a"));

    // d sum(I * A) / dA = ones.
    let loss = tape.sum_all(prod);
    tape.backward(loss);
    assert_eq!(tape.param_grad(&store, "a"), Matrix::filled(3, 2, 1.0));
}

#[test]
fn grad_of_sum_matmul_is_ones_times_b_transpose() {
    let tape = Tape::new();
    let mut store = store_with(0, &[("a", 2, 3)]);
    store.set_value("a", Matrix::filled(2, 3, 0.5));
    let b = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
    let a = tape.param(&store, "a");
    let bt = tape.constant(b.clone());
    let loss = tape.sum_all(tape.matmul(a, bt));
    tape.backward(loss);
    let expected = Matrix::filled(2, 2, 1.0).matmul(&b.transpose());
    assert_eq!(tape.param_grad(&store, "a"), expected);
}

#[test]
fn grad_of_sum_w_is_ones_and_tanh_at_zero() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    store.register("w", 2, 2, Init::Zeros, &mut rng);

    let tape = Tape::new();
    let w = tape.param(&store, "w");
    let loss = tape.sum_all(w);
    tape.backward(loss);
    assert_eq!(tape.param_grad(&store, "w"), Matrix::filled(2, 2, 1.0));

    // tanh'(0) = 1.
    let tape = Tape::new();
    let w = tape.param(&store, "w");
    let loss = tape.sum_all(tape.tanh(w));
    tape.backward(loss);
    assert_eq!(tape.param_grad(&store, "w"), Matrix::filled(2, 2, 1.0));
}

#[test]
#[should_panic(expected = "matmul shape mismatch")]
fn matmul_rejects_bad_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Matrix::zeros(2, 3));
    let b = tape.constant(Matrix::zeros(2, 3));
    let _ = tape.matmul(a, b);
}

#[test]
#[should_panic(expected = "backward called twice")]
fn backward_twice_rejected() {
    let tape = Tape::new();
    let x = tape.constant(Matrix::zeros(1, 1));
    let s = tape.sum_all(x);
    tape.backward(s);
    tape.backward(s);
}

#[test]
fn reset_clears_tape_and_grads() {
    let mut store = store_with(3, &[("w", 2, 2)]);
    let tape = Tape::new();
    let w = tape.param(&store, "w");
    let loss = tape.sum_all(w);
    tape.backward(loss);
    tape.collect_grads(&mut store);
    assert!(!store.grads_are_zero());
    store.zero_grads();
    assert!(store.grads_are_zero());
    tape.reset();
    assert!(tape.is_empty());
    // The tape records again after a reset.
    let w = tape.param(&store, "w");
    let loss = tape.sum_all(w);
    tape.backward(loss);
}

#[test]
fn unreachable_param_grad_is_zero() {
    let mut store = store_with(4, &[("used", 2, 2), ("unused", 2, 2)]);
    let tape = Tape::new();
    let u = tape.param(&store, "used");
    let _staged_but_disconnected = tape.param(&store, "unused");
    let loss = tape.sum_all(u);
    tape.backward(loss);
    tape.collect_grads(&mut store);
    assert_eq!(*store.grad_of("unused"), Matrix::zeros(2, 2));
    assert_eq!(*store.grad_of("used"), Matrix::filled(2, 2, 1.0));
}

#[test]
fn dropout_determinism_and_scaling() {
    let tape = Tape::new();
    let x = tape.constant(Matrix::filled(8, 8, 1.0));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = tape.value(tape.dropout(x, 0.5, &mut rng));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let b = tape.value(tape.dropout(x, 0.5, &mut rng));
    assert_eq!(a, b);
    assert!(a.data().iter().all(|&v| v == 0.0 || v == 2.0));
}

#[test]
fn forward_and_grads_bit_identical_across_runs() {
    let run = || {
        let mut store = store_with(9, &[("w", 4, 4), ("u", 4, 4)]);
        let tape = Tape::new();
        let w = tape.param(&store, "w");
        let u = tape.param(&store, "u");
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let h = tape.dropout(tape.tanh(tape.matmul(w, u)), 0.3, &mut rng);
        let loss = tape.sum_all(tape.hadamard(h, h));
        tape.backward(loss);
        tape.collect_grads(&mut store);
        (
            tape.scalar(loss),
            store.grad_of("w").clone(),
            store.grad_of("u").clone(),
        )
    };
    let (l1, gw1, gu1) = run();
    let (l2, gw2, gu2) = run();
    assert!(l1.to_bits() == l2.to_bits());
    assert_eq!(gw1, gw2);
    assert_eq!(gu1, gu2);
}

#[test]
fn adamw_hand_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    // Zero grad, zero decay: parameter untouched.
    let mut store = ParamStore::new();
    store.register("p", 1, 1, Init::Constant(0.7), &mut rng);
    store.adamw_step(&AdamWConfig {
        lr: 0.01,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    assert_eq!(store.value("p").get(0, 0), 0.7);

    // Unit grad on fresh moments: bias correction makes the step -lr.
    let mut store = ParamStore::new();
    store.register("p", 1, 1, Init::Constant(0.7), &mut rng);
    store.accumulate_grad("p", &Matrix::filled(1, 1, 1.0));
    store.adamw_step(&AdamWConfig {
        lr: 0.01,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    assert!((store.value("p").get(0, 0) - (0.7 - 0.01)).abs() < 1e-9);
    assert!(store.grads_are_zero(), "adamw must clear gradients");

    // Zero grad with decay: decoupled shrink by (1 - lr * wd).
    let mut store = ParamStore::new();
    store.register("p", 1, 1, Init::Constant(2.0), &mut rng);
    store.adamw_step(&AdamWConfig {
        lr: 0.01,
        weight_decay: 3e-3,
        ..AdamWConfig::default()
    });
    assert!((store.value("p").get(0, 0) - 2.0 * (1.0 - 0.01 * 3e-3)).abs() < 1e-15);
}

/// Every differentiable op passes a finite-difference check on random
/// 3x4-scale inputs across 10 seeds.
#[test]
fn gradcheck_all_ops() {
    type Case = (&'static str, fn(&Tape, &ParamStore) -> Tensor2);
    let cases: &[Case] = &[
        ("matmul", |t, s| {
            t.sum_all(t.matmul(t.param(s, "w34"), t.param(s, "w43")))
        }),
        ("transpose", |t, s| {
            t.sum_all(t.matmul(t.transpose(t.param(s, "w34")), t.param(s, "w35")))
        }),
        ("add_sub", |t, s| {
            let a = t.param(s, "w34");
            let b = t.param(s, "v34");
            t.sum_all(t.sub(t.add(a, b), t.hadamard(a, b)))
        }),
        ("hadamard", |t, s| {
            t.sum_all(t.hadamard(t.param(s, "w34"), t.param(s, "v34")))
        }),
        ("div", |t, s| {
            let denom = t.add_scalar(t.sigmoid(t.param(s, "v34")), 0.5);
            t.sum_all(t.div(t.param(s, "w34"), denom))
        }),
        ("scale_add_scalar", |t, s| {
            t.sum_all(t.add_scalar(t.scale(t.param(s, "w34"), -1.7), 0.3))
        }),
        ("concat_cols", |t, s| {
            let c = t.concat_cols(&[t.param(s, "w34"), t.param(s, "v34")]);
            t.sum_all(t.hadamard(c, t.constant(weights(3, 8))))
        }),
        ("concat_rows", |t, s| {
            let c = t.concat_rows(&[t.param(s, "w34"), t.param(s, "v34")]);
            t.sum_all(t.hadamard(c, t.constant(weights(6, 4))))
        }),
        ("gather_rows", |t, s| {
            let g = t.gather_rows(t.param(s, "w34"), &[2, 0, 2, 1]);
            t.sum_all(t.hadamard(g, t.constant(weights(4, 4))))
        }),
        ("scatter_add_rows", |t, s| {
            let sc = t.scatter_add_rows(t.param(s, "w34"), &[1, 4, 1], 5);
            t.sum_all(t.hadamard(sc, t.constant(weights(5, 4))))
        }),
        ("scale_rows", |t, s| {
            t.sum_all(t.scale_rows(t.param(s, "w34"), t.param(s, "col31")))
        }),
        ("add_row_vec", |t, s| {
            let out = t.add_row_vec(t.param(s, "w34"), t.param(s, "row14"));
            t.sum_all(t.hadamard(out, t.constant(weights(3, 4))))
        }),
        ("tanh", |t, s| t.sum_all(t.tanh(t.param(s, "w34")))),
        ("relu", |t, s| t.sum_all(t.relu(t.param(s, "w34")))),
        ("sigmoid", |t, s| t.sum_all(t.sigmoid(t.param(s, "w34")))),
        ("exp", |t, s| t.sum_all(t.exp(t.param(s, "w34")))),
        ("ln", |t, s| {
            t.sum_all(t.ln(t.add_scalar(t.sigmoid(t.param(s, "w34")), 0.5)))
        }),
        ("row_softmax", |t, s| {
            let sm = t.row_softmax(t.param(s, "w34"));
            t.sum_all(t.hadamard(sm, t.constant(weights(3, 4))))
        }),
        ("row_log_softmax", |t, s| {
            let sm = t.row_log_softmax(t.param(s, "w34"));
            t.sum_all(t.hadamard(sm, t.constant(weights(3, 4))))
        }),
        ("row_l2_normalize", |t, s| {
            let nm = t.row_l2_normalize(t.param(s, "w34"));
            t.sum_all(t.hadamard(nm, t.constant(weights(3, 4))))
        }),
        ("dropout_frozen_mask", |t, s| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            t.sum_all(t.dropout(t.param(s, "w34"), 0.4, &mut rng))
        }),
        ("reductions", |t, s| {
            let w = t.param(s, "w34");
            let a = t.sum_all(t.scale_rows(t.row_sums(w), t.param(s, "col31")));
            let b = t.sum_all(t.hadamard(t.col_sums(w), t.param(s, "row14")));
            let c = t.sum_all(t.hadamard(t.col_means(w), t.param(s, "row14")));
            t.add(t.add(a, b), c)
        }),
    ];

    for seed in 0..10u64 {
        let mut store = store_with(
            seed,
            &[
                ("w34", 3, 4),
                ("v34", 3, 4),
                ("w43", 4, 3),
                ("w35", 3, 5),
                ("col31", 3, 1),
                ("row14", 1, 4),
            ],
        );
        for (name, f) in cases {
            let err = gradcheck(&mut store, f, 1e-5);
            assert!(err < 1e-4, "op {name} seed {seed}: max rel err {err}");
        }
    }
}

fn weights(r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |i, j| 0.3 + 0.15 * i as f64 - 0.07 * j as f64)
}

#[test]
fn gradcheck_random_composites() {
    for seed in 0..10u64 {
        let mut store = store_with(100 + seed, &[("w", 3, 4), ("u", 4, 4), ("v", 4, 2)]);
        let err = gradcheck(
            &mut store,
            |t, s| {
                let w = t.param(s, "w");
                let u = t.param(s, "u");
                let v = t.param(s, "v");
                let h = t.tanh(t.matmul(w, u));
                let h = t.row_l2_normalize(h);
                let z = t.sigmoid(t.matmul(h, v));
                t.sum_all(t.hadamard(z, t.constant(weights(3, 2))))
            },
            1e-5,
        );
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("checkpoint");
    let store = store_with(8, &[("enc.w", 4, 3), ("head.b", 1, 3)]);
    save_checkpoint(&store, &prefix, "cfg-hash-123").unwrap();
    let (loaded, manifest) = load_checkpoint(&prefix).unwrap();
    assert_eq!(manifest.config_hash, "cfg-hash-123");
    assert_eq!(manifest.names, vec!["enc.w".to_string(), "head.b".to_string()]);
    for name in ["enc.w", "head.b"] {
        assert_eq!(loaded.value(name), store.value(name));
    }
}

#[test]
fn checkpoint_detects_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("checkpoint");
    let store = store_with(8, &[("w", 2, 2)]);
    save_checkpoint(&store, &prefix, "h").unwrap();
    // Truncate the blob; loading must fail cleanly.
    let bin = prefix.with_extension("bin");
    let bytes = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &bytes[..bytes.len() - 9]).unwrap();
    assert!(load_checkpoint(&prefix).is_err());
}
