//! Independent oracles frozen before the implementations: explicit per-sample
//! gradient loops, running means, and direct statistics. The implementations
//! must match these, not the other way around.

use lifelong::data::LabeledBatch;
use lifelong::gradcheck::fd_params;
use lifelong::importance::{
    add_penalty_grads, ewc_importance, mas_importance, neuron_importance, penalty_value,
    AccumRule, Importance, NeuronMode,
};
use lifelong::matrix::Matrix;
use lifelong::nn::{build_network, Activation, GradientSet, Loss, Network, ParamBlock, ParamMap, Seeds};

fn test_net(seed: u64) -> Network {
    build_network(&[3, 4, 3], Activation::Sigmoid, &[3], seed).unwrap()
}

fn test_batch(n: usize, d: usize) -> LabeledBatch {
    LabeledBatch::new(
        Matrix::from_fn(n, d, |i, j| ((i * d + j) as f64 * 0.831 + 0.2).sin()),
        (0..n).map(|i| i % 3).collect(),
    )
}

/// Oracle: per-sample loop. For each sample alone, backprop the seeded
/// objective, flatten, fold, then average. Exercises a one-row batch path,
/// fully independent of the batched |D|^T|H| factorization.
fn per_sample_importance(
    net: &Network,
    head: usize,
    batch: &LabeledBatch,
    seed_for: impl Fn(&Matrix, usize) -> Matrix,
    square: bool,
) -> Vec<f64> {
    let count = net.param_count();
    let mut acc = vec![0.0; count];
    for i in 0..batch.len() {
        let x = batch.inputs.gather_rows(&[i]);
        let trace = net.forward_trunk(&x);
        let logits = net.head_logits(head, trace.features()).unwrap();
        let dlogits = seed_for(&logits, batch.labels[i]);
        let grads = net
            .backprop(&trace, &Seeds { head_dlogits: vec![(head, dlogits)], post_extra: vec![] })
            .unwrap();
        let flat = net.flatten_grads(&grads);
        for (a, g) in acc.iter_mut().zip(flat) {
            *a += if square { g * g } else { g.abs() };
        }
    }
    for a in &mut acc {
        *a /= batch.len() as f64;
    }
    acc
}

fn flatten_map(net: &Network, map: &ParamMap) -> Vec<f64> {
    // same order as Network::flatten_grads
    let grads = GradientSet { trunk: map.trunk.clone(), heads: map.heads.clone(), trunk_pre: vec![] };
    net.flatten_grads(&grads)
}

#[test]
fn ewc_matches_per_sample_explicit_loop() {
    let net = test_net(31);
    let batch = test_batch(7, 3);
    let fast = ewc_importance(&net, 0, &batch, Some(0)).unwrap();
    let oracle = per_sample_importance(
        &net,
        0,
        &batch,
        |logits, y| {
            let mut d = lifelong::nn::softmax_rows(logits);
            let v = d.get(0, y);
            d.set(0, y, v - 1.0);
            d
        },
        true,
    );
    let flat = flatten_map(&net, &fast);
    for (i, (&a, &b)) in flat.iter().zip(&oracle).enumerate() {
        assert!((a - b).abs() < 1e-12, "param {i}: batched {a} vs oracle {b}");
    }
}

#[test]
fn mas_matches_per_sample_explicit_loop() {
    let net = test_net(32);
    let batch = test_batch(6, 3);
    let fast = mas_importance(&net, 0, &batch.inputs, Some(0)).unwrap();
    let oracle = per_sample_importance(&net, 0, &batch, |logits, _| logits.map(|v| 2.0 * v), false);
    let flat = flatten_map(&net, &fast);
    for (i, (&a, &b)) in flat.iter().zip(&oracle).enumerate() {
        assert!((a - b).abs() < 1e-12, "param {i}: batched {a} vs oracle {b}");
    }
}

#[test]
fn mas_per_sample_gradient_is_the_true_function_derivative() {
    // For one sample, |d||f||^2/dtheta| from backprop must match central
    // finite differences of ||f(x)||^2 itself.
    let mut net = test_net(33);
    let x = Matrix::from_rows(&[&[0.3, -0.8, 0.5]]);
    let trace = net.forward_trunk(&x);
    let logits = net.head_logits(0, trace.features()).unwrap();
    let grads = net
        .backprop(
            &trace,
            &Seeds { head_dlogits: vec![(0, logits.map(|v| 2.0 * v))], post_extra: vec![] },
        )
        .unwrap();
    let flat = net.flatten_grads(&grads);
    let err = fd_params(
        &mut net,
        |n| {
            let (lg, _) = n.forward(0, &x).unwrap();
            lg.data().iter().map(|v| v * v).sum()
        },
        &flat,
        1e-5,
    );
    assert!(err < 1e-6, "max rel err {err}");
}

#[test]
fn neuron_importance_matches_finite_differences_on_pre_activations() {
    // Perturb one pre-activation via its bias with everything else fixed:
    // d(loss)/d(bias_j) == d(loss)/d(out_j) because out_j = w.x + b_j.
    // Averaged |.| over single-sample batches gives alpha_j.
    let net = build_network(&[2, 3], Activation::Sigmoid, &[2], 12).unwrap();
    let batch = LabeledBatch::new(
        Matrix::from_rows(&[&[0.4, -0.7], &[-0.2, 0.9]]),
        vec![0, 1],
    );
    let alpha = neuron_importance(&net, 0, &batch, NeuronMode::LossGrad).unwrap();

    let eps = 1e-6;
    for j in 0..3 {
        let mut fd_sum = 0.0;
        for i in 0..batch.len() {
            let x = batch.inputs.gather_rows(&[i]);
            let y = vec![batch.labels[i]];
            let mut plus = net.clone();
            plus.trunk[0].b[j] += eps;
            let mut minus = net.clone();
            minus.trunk[0].b[j] -= eps;
            let (lp, _) = plus.forward(0, &x).unwrap();
            let (lm, _) = minus.forward(0, &x).unwrap();
            let vp = Loss::SoftmaxXent.eval(&lp, &y).unwrap().0;
            let vm = Loss::SoftmaxXent.eval(&lm, &y).unwrap().0;
            fd_sum += ((vp - vm) / (2.0 * eps)).abs();
        }
        let fd_alpha = fd_sum / batch.len() as f64;
        assert!(
            (fd_alpha - alpha[0][j]).abs() < 1e-6,
            "neuron {j}: fd {fd_alpha} vs analytic {}",
            alpha[0][j]
        );
    }
}

#[test]
fn cma_matches_running_mean_oracle() {
    let net = build_network(&[2, 2], Activation::Relu, &[2], 77).unwrap();
    let mut acc = Importance::zeros(&net, None);
    let mut history: Vec<Vec<f64>> = Vec::new();
    for k in 0..6 {
        let x = Matrix::from_fn(4, 2, |i, j| ((i * 2 + j + k) as f64 * 0.57).cos());
        let omega = mas_importance(&net, 0, &x, None).unwrap();
        history.push(flatten_map(&net, &omega));
        acc.accumulate(&omega, AccumRule::Cma).unwrap();

        // oracle: arithmetic mean of everything seen so far
        let mean: Vec<f64> = (0..history[0].len())
            .map(|i| history.iter().map(|h| h[i]).sum::<f64>() / history.len() as f64)
            .collect();
        let flat = flatten_map(&net, &acc.map);
        for (i, (&a, &m)) in flat.iter().zip(&mean).enumerate() {
            assert!((a - m).abs() < 1e-12, "step {k} param {i}: cma {a} vs mean {m}");
        }
    }
}

#[test]
fn penalty_gradient_matches_finite_differences() {
    let mut net = test_net(41);
    let anchor = net.snapshot(Some(0));
    // synthetic positive omega, then move theta away from the anchor
    let omega_map = {
        let mut m = ParamMap::zeros_like(&net, Some(0));
        let mut c = 0.1;
        for b in m.trunk.iter_mut().chain(m.heads.iter_mut().flatten()) {
            for v in b.w.data_mut() {
                *v = c;
                c = (c + 0.37) % 1.9;
            }
            for v in &mut b.b {
                *v = c;
                c = (c + 0.53) % 1.7;
            }
        }
        m
    };
    for i in 0..net.param_count() {
        let v = net.get_param(i);
        net.set_param(i, v + 0.05 * ((i as f64).sin()));
    }
    let lambda = 3.0;
    let mut grads = GradientSet {
        trunk: net.trunk.iter().map(ParamBlock::zeros_like).collect(),
        heads: net.heads.iter().map(|h| Some(ParamBlock::zeros_like(h))).collect(),
        trunk_pre: vec![],
    };
    add_penalty_grads(&mut grads, &net, &omega_map, &anchor, lambda);
    let flat = net.flatten_grads(&grads);
    let err = fd_params(&mut net, |n| penalty_value(n, &omega_map, &anchor, lambda), &flat, 1e-5);
    assert!(err < 1e-6, "max rel err {err}");
}

#[test]
fn penalty_invariant_under_consistent_permutation() {
    // Permuting (theta, theta*, omega) together must not change the value.
    // Realized by relabeling two parameters: swap their roles everywhere.
    let mut net = build_network(&[2, 2], Activation::Relu, &[2], 5).unwrap();
    let anchor = net.snapshot(None);
    let mut omega = ParamMap::zeros_like(&net, None);
    omega.trunk[0].w.set(0, 0, 2.0);
    omega.trunk[0].w.set(0, 1, 5.0);
    net.trunk[0].w.set(0, 0, anchor.trunk[0].w.get(0, 0) + 1.0);
    net.trunk[0].w.set(0, 1, anchor.trunk[0].w.get(0, 1) - 2.0);
    let v1 = penalty_value(&net, &omega, &anchor, 1.0);

    // swap the two coordinates consistently in all three structures
    let mut net2 = net.clone();
    let mut anchor2 = anchor.clone();
    let mut omega2 = omega.clone();
    let swap = |m: &mut Matrix| {
        let (a, b) = (m.get(0, 0), m.get(0, 1));
        m.set(0, 0, b);
        m.set(0, 1, a);
    };
    swap(&mut net2.trunk[0].w);
    swap(&mut anchor2.trunk[0].w);
    swap(&mut omega2.trunk[0].w);
    let v2 = penalty_value(&net2, &omega2, &anchor2, 1.0);
    assert!((v1 - v2).abs() < 1e-15);
}

// ----- pair-sum oracles for the representation regularizers -----
//
// Literal double loops over pairs, evaluated per sample then averaged. Slow
// and obviously correct; the production code must agree to 1e-12.

fn oracle_pair_sum(h: &Matrix, weight: impl Fn(usize, usize) -> f64) -> f64 {
    let mut total = 0.0;
    for n in 0..h.rows() {
        let row = h.row(n);
        for j in 0..h.cols() {
            for k in (j + 1)..h.cols() {
                total += weight(j, k) * row[j] * row[k];
            }
        }
    }
    total / h.rows() as f64
}

fn oracle_pair_grad(h: &Matrix, weight: impl Fn(usize, usize) -> f64) -> Matrix {
    let n = h.rows() as f64;
    Matrix::from_fn(h.rows(), h.cols(), |r, j| {
        let row = h.row(r);
        let mut g = 0.0;
        for k in 0..h.cols() {
            if k != j {
                g += weight(j.min(k), j.max(k)) * row[k];
            }
        }
        g / n
    })
}

fn oracle_decov(h: &Matrix) -> f64 {
    let n = h.rows() as f64;
    let d = h.cols();
    let mut mu = vec![0.0; d];
    for r in 0..h.rows() {
        for (m, &v) in mu.iter_mut().zip(h.row(r)) {
            *m += v / n;
        }
    }
    let mut value = 0.0;
    for j in 0..d {
        for k in 0..d {
            if j == k {
                continue;
            }
            let mut c = 0.0;
            for r in 0..h.rows() {
                c += (h.get(r, j) - mu[j]) * (h.get(r, k) - mu[k]);
            }
            c /= n;
            value += c * c;
        }
    }
    value
}

fn random_h(rows: usize, cols: usize, seed: u64) -> Matrix {
    // deterministic pseudo-random activations, mixed sign
    Matrix::from_fn(rows, cols, |i, j| {
        let x = (seed as f64 + 1.0) * ((i * cols + j) as f64 * 0.7391 + 0.13);
        (x.sin() * 2.3).fract()
    })
}

fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b}");
}

#[test]
fn sni_family_matches_double_loop_oracle() {
    use lifelong::regularizers::{gaussian_weight, slnid, sni};
    for (rows, cols, seed) in [(1, 3, 1), (4, 5, 2), (8, 16, 3), (7, 11, 4)] {
        let h = random_h(rows, cols, seed);
        let alpha: Vec<f64> = (0..cols).map(|j| 0.05 + 0.13 * (j as f64 * 1.7).sin().abs()).collect();
        let sigma = cols as f64 / 6.0;

        let (v, g) = sni(&h);
        let vo = oracle_pair_sum(&h, |_, _| 1.0);
        assert_close(v, vo, 1e-12, "sni value");
        let go = oracle_pair_grad(&h, |_, _| 1.0);
        for (&a, &b) in g.data().iter().zip(go.data()) {
            assert_close(a, b, 1e-12, "sni grad");
        }

        let w_slni = |j: usize, k: usize| gaussian_weight(j, k, sigma);
        let (v, g) = lifelong::regularizers::slni(&h, sigma);
        assert_close(v, oracle_pair_sum(&h, w_slni), 1e-12, "slni value");
        let go = oracle_pair_grad(&h, w_slni);
        for (&a, &b) in g.data().iter().zip(go.data()) {
            assert_close(a, b, 1e-12, "slni grad");
        }

        let al = alpha.clone();
        let w_snid = move |j: usize, k: usize| (-(al[j] + al[k])).exp();
        let (v, g) = lifelong::regularizers::snid(&h, &alpha).unwrap();
        assert_close(v, oracle_pair_sum(&h, &w_snid), 1e-12, "snid value");
        let go = oracle_pair_grad(&h, &w_snid);
        for (&a, &b) in g.data().iter().zip(go.data()) {
            assert_close(a, b, 1e-12, "snid grad");
        }

        let al = alpha.clone();
        let w_slnid =
            move |j: usize, k: usize| gaussian_weight(j, k, sigma) * (-(al[j] + al[k])).exp();
        let (v, g) = slnid(&h, &alpha, sigma).unwrap();
        assert_close(v, oracle_pair_sum(&h, &w_slnid), 1e-12, "slnid value");
        let go = oracle_pair_grad(&h, &w_slnid);
        for (&a, &b) in g.data().iter().zip(go.data()) {
            assert_close(a, b, 1e-12, "slnid grad");
        }
    }
}

#[test]
fn decov_matches_explicit_covariance_oracle() {
    for (rows, cols, seed) in [(2, 2, 7), (5, 4, 8), (8, 16, 9)] {
        let h = random_h(rows, cols, seed);
        let (v, _) = lifelong::regularizers::decov(&h);
        assert_close(v, oracle_decov(&h), 1e-12, "decov value");
    }
}

#[test]
fn distill_loss_matches_direct_formula() {
    // teacher probs (0.6, 0.4), student probs (0.7, 0.3), temperature 2:
    // soften by square-rooting and renormalizing, then cross-entropy,
    // everything written out by hand below
    use lifelong::distill::distill_loss;
    let teacher = Matrix::from_rows(&[&[0.6f64.ln(), 0.4f64.ln()]]);
    let student = Matrix::from_rows(&[&[0.7f64.ln(), 0.3f64.ln()]]);
    let (v, _) = distill_loss(&student, &teacher, 2.0).unwrap();

    let (t0, t1) = (0.6f64.sqrt(), 0.4f64.sqrt());
    let (s0, s1) = (0.7f64.sqrt(), 0.3f64.sqrt());
    let z_star = [t0 / (t0 + t1), t1 / (t0 + t1)];
    let z_hat = [s0 / (s0 + s1), s1 / (s0 + s1)];
    let direct = -(z_star[0] * z_hat[0].ln() + z_star[1] * z_hat[1].ln());
    assert!((v - direct).abs() < 1e-12, "{v} vs {direct}");
}

#[test]
fn distill_batch_mean_matches_per_row_average() {
    use lifelong::distill::distill_loss;
    let teacher = Matrix::from_rows(&[&[1.0, -0.5, 0.2], &[0.3, 0.3, -1.0]]);
    let student = Matrix::from_rows(&[&[0.2, 0.1, -0.4], &[1.5, -0.2, 0.0]]);
    let (v, _) = distill_loss(&student, &teacher, 2.0).unwrap();
    let mut acc = 0.0;
    for r in 0..2 {
        let t = Matrix::from_rows(&[teacher.row(r)]);
        let s = Matrix::from_rows(&[student.row(r)]);
        acc += distill_loss(&s, &t, 2.0).unwrap().0;
    }
    assert!((v - acc / 2.0).abs() < 1e-12);
}

#[test]
fn window_stats_match_independent_statistics_oracle() {
    use lifelong::online::{window_stats, LossWindow};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for trial in 0..50 {
        let n = 1 + (trial % 9);
        let mut w = LossWindow::new(n);
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            let v: f64 = rng.gen::<f64>() * 3.0;
            vals.push(v);
            w.push(v);
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let (mu, sigma) = window_stats(&w).unwrap();
        assert_close(mu, mean, 1e-12, "window mean");
        assert_close(sigma, var.sqrt(), 1e-12, "window sigma");
    }
}
