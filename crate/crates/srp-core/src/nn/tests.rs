use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{self, Tensor};
use super::{dropout_mask, Params, Tape};

/// Central finite differences over every element of every parameter.
fn finite_diff(
    params: &mut Params,
    loss_fn: &mut dyn FnMut(&Params) -> f64,
    eps: f64,
) -> Vec<Tensor> {
    let ids: Vec<_> = params.ids().collect();
    let mut out = Vec::new();
    for id in ids {
        let (rows, cols) = params.value(id).shape();
        let mut g = Tensor::zeros(rows, cols);
        for i in 0..rows * cols {
            let orig = params.value(id).data[i];
            params.value_mut(id).data[i] = orig + eps;
            let up = loss_fn(params);
            params.value_mut(id).data[i] = orig - eps;
            let down = loss_fn(params);
            params.value_mut(id).data[i] = orig;
            g.data[i] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    out
}

fn assert_grads_match(params: &Params, fd: &[Tensor], tol: f64) {
    for (i, id) in params.ids().enumerate() {
        for (x, y) in params.grad(id).data.iter().zip(&fd[i].data) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            assert!(
                (x - y).abs() / denom < tol,
                "gradient mismatch in {}: analytic {x} vs finite-diff {y}",
                params.name(id)
            );
        }
    }
}

fn random_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

#[test]
fn stack_rows_concatenates_vertically() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0]]);
    let b = Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]);
    let s = tensor::stack_rows(&a, &b);
    assert_eq!(s.shape(), (3, 2));
    assert_eq!(s.data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn stack_rows_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut params = Params::new();
    let top = params.glorot_uniform("top", 1, 3, &mut rng);
    let bottom = params.glorot_uniform("bottom", 2, 3, &mut rng);
    let x = random_tensor(2, 3, &mut rng);

    let run = |p: &Params| {
        let mut tape = Tape::new();
        let t = tape.param(p, top);
        let b = tape.param(p, bottom);
        let stacked = tape.stack_rows(t, b);
        let xid = tape.constant(x.clone());
        let y = tape.matmul(xid, stacked);
        let loss = tape.mse(y, Tensor::zeros(2, 3));
        (tape, loss)
    };
    let (tape, loss) = run(&params);
    tape.backward(loss, &mut params);
    let fd = finite_diff(
        &mut params,
        &mut |p| {
            let (tape, loss) = run(p);
            tape.value(loss).item()
        },
        1e-5,
    );
    assert_grads_match(&params, &fd, 1e-4);
}

#[test]
fn elementwise_op_examples() {
    let t = Tensor::from_vec(1, 2, vec![-1.0, 2.0]);
    assert_eq!(tensor::relu(&t).data, vec![0.0, 2.0]);

    let s = tensor::softmax_rows(&Tensor::from_vec(1, 2, vec![0.0, 0.0]));
    assert_eq!(s.data, vec![0.5, 0.5]);

    // Max subtraction keeps huge logits finite.
    let s = tensor::softmax_rows(&Tensor::from_vec(1, 2, vec![1000.0, 1001.0]));
    assert!(s.data.iter().all(|v| v.is_finite()));
    assert!((s.data[0] + s.data[1] - 1.0).abs() < 1e-12);

    let sig = tensor::sigmoid(&Tensor::from_vec(1, 3, vec![0.0, 700.0, -700.0]));
    assert_eq!(sig.data[0], 0.5);
    assert!(sig.data[1] > 0.999 && sig.data[2] < 1e-10);
    assert!(sig.data.iter().all(|v| v.is_finite()));
}

#[test]
fn structural_op_examples() {
    let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
    assert_eq!(tensor::gather_rows(&a, &[2, 0, 2]).data, vec![5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);

    // Group 0 averages rows 0 and 1, group 1 takes row 2, group 2 is empty.
    let m = tensor::segment_mean(&a, &[0, 0, 1], 3);
    assert_eq!(m.data, vec![2.0, 3.0, 5.0, 6.0, 0.0, 0.0]);

    assert_eq!(tensor::mean_rows(&a).data, vec![3.0, 4.0]);
    assert_eq!(tensor::broadcast_row(&Tensor::from_vec(1, 2, vec![7.0, 8.0]), 2).data, vec![7.0, 8.0, 7.0, 8.0]);

    let b = Tensor::from_rows(&[vec![9.0], vec![10.0], vec![11.0]]);
    assert_eq!(tensor::concat_cols(&a, &b).row(1), &[3.0, 4.0, 10.0]);

    // Bias broadcast.
    let biased = tensor::add(&a, &Tensor::from_vec(1, 2, vec![10.0, 20.0]));
    assert_eq!(biased.row(2), &[15.0, 26.0]);
}

#[test]
fn bce_closed_form_example() {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::from_vec(1, 1, vec![0.5]));
    let loss = tape.bce(p, &[1.0]);
    assert!((tape.value(loss).item() - 2.0f64.ln()).abs() < 1e-12);
}

#[test]
fn bce_clamps_instead_of_overflowing() {
    let mut tape = Tape::new();
    let p = tape.constant(Tensor::from_vec(2, 1, vec![0.0, 1.0]));
    let loss = tape.bce(p, &[1.0, 0.0]);
    let v = tape.value(loss).item();
    assert!(v.is_finite());
    // Both rows hit the clamp; 1 - (1 - 1e-12) re-rounds, hence the loose
    // tolerance.
    assert!((v - (-1e-12f64.ln())).abs() < 1e-4);
}

#[test]
fn linear_gradient_example() {
    let mut params = Params::new();
    let w = params.add("w", Tensor::scalar(5.0));
    let mut tape = Tape::new();
    let wn = tape.param(&params, w);
    let xn = tape.constant(Tensor::scalar(3.0));
    let loss = tape.matmul(wn, xn);
    tape.backward(loss, &mut params);
    assert_eq!(params.grad(w).item(), 3.0);
}

#[test]
fn dead_relu_has_zero_gradient() {
    let mut params = Params::new();
    let w = params.add("w", Tensor::scalar(-2.0));
    let mut tape = Tape::new();
    let wn = tape.param(&params, w);
    let loss = tape.relu(wn);
    tape.backward(loss, &mut params);
    assert_eq!(params.grad(w).item(), 0.0);
}

#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = Params::new();
    let w1 = params.glorot_uniform("w1", 5, 4, &mut rng);
    let b1 = params.zeros("b1", 1, 4);
    let w2 = params.glorot_uniform("w2", 4, 3, &mut rng);
    let b2 = params.zeros("b2", 1, 3);
    let x = random_tensor(6, 5, &mut rng);
    let labels = [0usize, 1, 2, 0, 1, 2];

    let forward = |tape: &mut Tape, params: &Params| {
        let xn = tape.constant(x.clone());
        let (w1n, b1n) = (tape.param(params, w1), tape.param(params, b1));
        let (w2n, b2n) = (tape.param(params, w2), tape.param(params, b2));
        let h = tape.linear(xn, w1n, b1n);
        let h = tape.relu(h);
        let z = tape.linear(h, w2n, b2n);
        tape.softmax_cross_entropy(z, &labels)
    };

    let mut tape = Tape::new();
    let loss = forward(&mut tape, &params);
    tape.backward(loss, &mut params);

    let fd = finite_diff(
        &mut params,
        &mut |p| {
            let mut t = Tape::new();
            let l = forward(&mut t, p);
            t.value(l).item()
        },
        1e-5,
    );
    assert_grads_match(&params, &fd, 1e-4);
}

#[test]
fn sigmoid_bce_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut params = Params::new();
    let w = params.glorot_uniform("w", 3, 1, &mut rng);
    let b = params.zeros("b", 1, 1);
    let x = random_tensor(5, 3, &mut rng);
    let y = [1.0, 0.0, 1.0, 1.0, 0.0];

    let forward = |tape: &mut Tape, params: &Params| {
        let xn = tape.constant(x.clone());
        let (wn, bn) = (tape.param(params, w), tape.param(params, b));
        let z = tape.linear(xn, wn, bn);
        let p = tape.sigmoid(z);
        tape.bce(p, &y)
    };
    let mut tape = Tape::new();
    let loss = forward(&mut tape, &params);
    tape.backward(loss, &mut params);
    let fd = finite_diff(
        &mut params,
        &mut |p| {
            let mut t = Tape::new();
            let l = forward(&mut t, p);
            t.value(l).item()
        },
        1e-5,
    );
    assert_grads_match(&params, &fd, 1e-4);
}

#[test]
fn bce_on_logits_agrees_with_sigmoid_then_bce() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let z = random_tensor(7, 1, &mut rng);
    let y: Vec<f64> = (0..7).map(|i| (i % 2) as f64).collect();

    let mut t1 = Tape::new();
    let zn = t1.constant(z.clone());
    let pn = t1.sigmoid(zn);
    let l1 = t1.bce(pn, &y);

    let mut t2 = Tape::new();
    let zn2 = t2.constant(z.clone());
    let l2 = t2.bce_logits(zn2, &y);
    assert!((t1.value(l1).item() - t2.value(l2).item()).abs() < 1e-12);

    // And the fused path passes its own finite-difference check.
    let mut params = Params::new();
    let w = params.add("w", z);
    let mut tape = Tape::new();
    let wn = tape.param(&params, w);
    let loss = tape.bce_logits(wn, &y);
    tape.backward(loss, &mut params);
    let fd = finite_diff(
        &mut params,
        &mut |p| {
            let mut t = Tape::new();
            let wn = t.param(p, p.id_of("w").unwrap());
            let l = t.bce_logits(wn, &y);
            t.value(l).item()
        },
        1e-5,
    );
    assert_grads_match(&params, &fd, 1e-4);
}

#[test]
fn unfused_softmax_cross_entropy_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut params = Params::new();
    params.add("logits", random_tensor(4, 3, &mut rng));
    let labels = [2usize, 0, 1, 1];

    let forward = |tape: &mut Tape, params: &Params| {
        let wn = tape.param(params, params.id_of("logits").unwrap());
        let p = tape.softmax(wn);
        tape.cross_entropy(p, &labels)
    };
    let mut tape = Tape::new();
    let loss = forward(&mut tape, &params);
    tape.backward(loss, &mut params);
    let fd = finite_diff(
        &mut params,
        &mut |p| {
            let mut t = Tape::new();
            let l = forward(&mut t, p);
            t.value(l).item()
        },
        1e-5,
    );
    assert_grads_match(&params, &fd, 1e-4);
}

#[test]
fn graph_op_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut params = Params::new();
    let h = params.glorot_uniform("h", 6, 3, &mut rng);
    let c = params.glorot_uniform("c", 1, 3, &mut rng);
    let idx = [0usize, 2, 2, 4, 5, 1, 3];
    let seg = [0usize, 0, 1, 3, 3, 0, 1]; // group 2 stays empty
    let mask = Tensor::from_vec(4, 3, (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.25 }).collect());
    let targets = Tensor::from_vec(1, 6, vec![0.3, -0.2, 0.5, 0.0, 0.1, -0.4]);

    let forward = |tape: &mut Tape, params: &Params| {
        let hn = tape.param(params, h);
        let cn = tape.param(params, c);
        let gathered = tape.gather_rows(hn, &idx);
        let pooled = tape.segment_mean(gathered, &seg, 4);
        let bias = tape.broadcast_row(cn, 4);
        let summed = tape.add(pooled, bias);
        let dropped = tape.mul_const(summed, mask.clone());
        let scaled = tape.scale(dropped, 1.7);
        let both = tape.concat(scaled, pooled);
        let avg = tape.mean_rows(both);
        tape.mse(avg, targets.clone())
    };
    let mut tape = Tape::new();
    let loss = forward(&mut tape, &params);
    tape.backward(loss, &mut params);
    let fd = finite_diff(
        &mut params,
        &mut |p| {
            let mut t = Tape::new();
            let l = forward(&mut t, p);
            t.value(l).item()
        },
        1e-5,
    );
    assert_grads_match(&params, &fd, 1e-4);
}

#[test]
fn adam_leaves_parameters_alone_without_gradient() {
    let mut params = Params::new();
    let w = params.add("w", Tensor::from_vec(1, 2, vec![1.5, -2.5]));
    for _ in 0..5 {
        params.adam_step(0.1);
    }
    assert_eq!(params.value(w).data, vec![1.5, -2.5]);
}

#[test]
fn adam_step_magnitude_approaches_the_learning_rate() {
    let mut params = Params::new();
    let w = params.add("w", Tensor::scalar(0.0));
    let lr = 0.01;
    let mut last = 0.0;
    let mut delta = 0.0;
    for _ in 0..200 {
        params.accumulate_grad(w, &Tensor::scalar(3.0));
        params.adam_step(lr);
        let now = params.value(w).item();
        delta = last - now;
        last = now;
    }
    // With a constant gradient, bias-corrected Adam normalizes the step to
    // lr * g / |g|.
    assert!((delta - lr).abs() < 1e-3 * lr, "step was {delta}");
    assert_eq!(params.grad(w).item(), 0.0, "gradients are zeroed after the step");
}

fn tiny_training_run(seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Params::new();
    let w1 = params.glorot_uniform("w1", 3, 4, &mut rng);
    let b1 = params.zeros("b1", 1, 4);
    let w2 = params.glorot_uniform("w2", 4, 1, &mut rng);
    let b2 = params.zeros("b2", 1, 1);
    let x = random_tensor(6, 3, &mut rng);
    let y = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
    for _ in 0..10 {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let (w1n, b1n) = (tape.param(&params, w1), tape.param(&params, b1));
        let (w2n, b2n) = (tape.param(&params, w2), tape.param(&params, b2));
        let h = tape.linear(xn, w1n, b1n);
        let h = tape.relu(h);
        let z = tape.linear(h, w2n, b2n);
        let loss = tape.bce_logits(z, &y);
        tape.backward(loss, &mut params);
        params.adam_step(0.003);
    }
    params
        .ids()
        .flat_map(|id| params.value(id).data.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}

#[test]
fn training_is_bitwise_deterministic_for_a_fixed_seed() {
    assert_eq!(tiny_training_run(9), tiny_training_run(9));
    assert_ne!(tiny_training_run(9), tiny_training_run(10));
}

#[test]
fn checkpoint_roundtrip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut params = Params::new();
    params.glorot_uniform("layer0/weight", 4, 3, &mut rng);
    params.zeros("layer0/bias", 1, 3);
    params.glorot_uniform("head", 3, 1, &mut rng);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    params.save(&path).unwrap();
    let loaded = Params::load(&path).unwrap();

    assert_eq!(loaded.len(), params.len());
    for (a, b) in params.ids().zip(loaded.ids()) {
        assert_eq!(params.name(a), loaded.name(b));
        assert_eq!(params.value(a).shape(), loaded.value(b).shape());
        let bits: Vec<u64> = params.value(a).data.iter().map(|v| v.to_bits()).collect();
        let loaded_bits: Vec<u64> = loaded.value(b).data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, loaded_bits);
    }
}

#[test]
fn snapshot_restore_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut params = Params::new();
    let w = params.glorot_uniform("w", 2, 2, &mut rng);
    let best = params.snapshot();
    params.value_mut(w).data[0] += 1.0;
    params.restore(&best);
    assert_eq!(params.value(w).data, best[0].data);
}

#[test]
#[should_panic(expected = "scalar loss")]
fn backward_rejects_non_scalar_loss() {
    let mut params = Params::new();
    let w = params.add("w", Tensor::zeros(2, 2));
    let mut tape = Tape::new();
    let wn = tape.param(&params, w);
    let out = tape.relu(wn);
    tape.backward(out, &mut params);
}

#[test]
#[should_panic(expected = "matmul shape mismatch")]
fn matmul_rejects_incompatible_shapes() {
    tensor::matmul(&Tensor::zeros(2, 3), &Tensor::zeros(2, 3));
}

#[test]
fn glorot_respects_the_fan_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut params = Params::new();
    let w = params.glorot_uniform("w", 30, 50, &mut rng);
    let bound = (6.0f64 / 80.0).sqrt();
    let data = &params.value(w).data;
    assert!(data.iter().all(|v| v.abs() < bound));
    assert!(data.iter().any(|v| (v - data[0]).abs() > 1e-12));
}

#[test]
fn dropout_mask_is_inverted_scaled() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let none = dropout_mask(3, 3, 0.0, &mut rng);
    assert!(none.data.iter().all(|&v| v == 1.0));
    let half = dropout_mask(50, 20, 0.5, &mut rng);
    assert!(half.data.iter().all(|&v| v == 0.0 || v == 2.0));
    let mean = half.data.iter().sum::<f64>() / half.data.len().max(1) as f64;
    assert!((mean - 1.0).abs() < 0.15);
}

#[test]
fn forward_replay_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let x = random_tensor(4, 4, &mut rng);
    let w = random_tensor(4, 2, &mut rng);
    let run = || {
        let mut tape = Tape::new();
        let xn = tape.constant(x.clone());
        let wn = tape.constant(w.clone());
        let h = tape.matmul(xn, wn);
        let s = tape.softmax(h);
        tape.value(s).data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn losses_are_nonnegative(
        probs in prop::collection::vec(0.0..=1.0f64, 1..20),
        flags in prop::collection::vec(any::<bool>(), 1..20),
    ) {
        let n = probs.len().min(flags.len());
        let y: Vec<f64> = flags[..n].iter().map(|&b| b as u8 as f64).collect();
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::from_vec(n, 1, probs[..n].to_vec()));
        let loss = tape.bce(p, &y);
        prop_assert!(tape.value(loss).item() >= 0.0);
    }

    #[test]
    fn softmax_rows_always_sum_to_one(
        rows in prop::collection::vec(prop::collection::vec(-50.0..50.0f64, 4), 1..8),
    ) {
        let t = Tensor::from_rows(&rows);
        let s = tensor::softmax_rows(&t);
        for r in 0..s.rows {
            let sum: f64 = s.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(s.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn cross_entropy_is_nonnegative(
        logits in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 3), 1..8),
        label in 0usize..3,
    ) {
        let t = Tensor::from_rows(&logits);
        let labels = vec![label; t.rows];
        let mut tape = Tape::new();
        let z = tape.constant(t);
        let p = tape.softmax(z);
        let loss = tape.cross_entropy(p, &labels);
        prop_assert!(tape.value(loss).item() >= 0.0);
    }
}
