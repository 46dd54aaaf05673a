//! Central finite-difference oracles. Every differentiable objective in the
//! repo is checked against these, both in tests and via the `gradcheck` CLI.

use crate::matrix::Matrix;
use crate::nn::Loss;
use crate::regularizers;
use crate::nn::Network;

/// |fd - analytic| / max(1, |fd|, |analytic|), maximized over coordinates.
/// The unit floor keeps noise on near-zero gradients from dominating.
fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1.0)
}

/// Central differences over every trainable parameter of the network.
/// `analytic` must be flattened in get_param/set_param order.
pub fn fd_params(
    net: &mut Network,
    mut value: impl FnMut(&Network) -> f64,
    analytic: &[f64],
    eps: f64,
) -> f64 {
    let count = net.param_count();
    assert_eq!(analytic.len(), count, "analytic gradient length mismatch");
    let mut worst = 0.0f64;
    for i in 0..count {
        let orig = net.get_param(i);
        net.set_param(i, orig + eps);
        let plus = value(net);
        net.set_param(i, orig - eps);
        let minus = value(net);
        net.set_param(i, orig);
        let fd = (plus - minus) / (2.0 * eps);
        worst = worst.max(rel_err(fd, analytic[i]));
    }
    worst
}

/// Central differences over every entry of an activation matrix.
pub fn fd_matrix(
    h: &Matrix,
    mut value: impl FnMut(&Matrix) -> f64,
    analytic: &Matrix,
    eps: f64,
) -> f64 {
    assert_eq!((h.rows(), h.cols()), (analytic.rows(), analytic.cols()));
    let mut probe = h.clone();
    let mut worst = 0.0f64;
    for r in 0..h.rows() {
        for c in 0..h.cols() {
            let orig = probe.get(r, c);
            probe.set(r, c, orig + eps);
            let plus = value(&probe);
            probe.set(r, c, orig - eps);
            let minus = value(&probe);
            probe.set(r, c, orig);
            let fd = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(fd, analytic.get(r, c)));
        }
    }
    worst
}

pub struct CheckReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// The full named suite behind `lifelong gradcheck`. Small nets only; the
/// whole sweep stays under a second. Closed-form activation regularizers are
/// held to 1e-6, everything routed through a network to 1e-4.
pub fn run_all() -> Vec<CheckReport> {
    let mut out = Vec::new();
    out.push(check_data_loss("softmax-xent", Loss::SoftmaxXent));
    out.push(check_data_loss("mse", Loss::Mse));
    out.push(check_penalty());
    out.push(check_activation_reg("sni", |h| regularizers::sni(h)));
    out.push(check_activation_reg("slni", |h| regularizers::slni(h, 1.8)));
    out.push(check_activation_reg("snid", |h| {
        let alpha: Vec<f64> = (0..h.cols()).map(|j| 0.15 * j as f64).collect();
        regularizers::snid(h, &alpha).unwrap()
    }));
    out.push(check_activation_reg("slnid", |h| {
        let alpha: Vec<f64> = (0..h.cols()).map(|j| 0.15 * j as f64).collect();
        regularizers::slnid(h, &alpha, 1.8).unwrap()
    }));
    out.push(check_activation_reg("decov", |h| regularizers::decov(h)));
    out.push(check_activation_reg("l1-rep", |h| regularizers::l1_rep(h)));
    out.push(check_distill());
    out.push(check_ebll());
    out
}

const NET_TOL: f64 = 1e-4;
const CLOSED_FORM_TOL: f64 = 1e-6;
const EPS: f64 = 1e-5;

fn tiny_net(heads: &[usize], seed: u64) -> Network {
    // 2-3-h: at most 2*3+3 + 2*(3*2+2) = 25 parameters
    crate::nn::build_network(&[2, 3], crate::nn::Activation::Sigmoid, heads, seed).unwrap()
}

fn probe_inputs(n: usize, d: usize) -> Matrix {
    Matrix::from_fn(n, d, |r, c| ((r * d + c) as f64 * 0.83).sin())
}

fn check_data_loss(name: &'static str, loss: Loss) -> CheckReport {
    let net = tiny_net(&[2], 41);
    let x = probe_inputs(6, 2);
    let y = vec![0, 1, 1, 0, 1, 0];
    let (_, grads) = crate::nn::loss_and_backward(&net, 0, &x, &y, loss, vec![]).unwrap();
    let flat = net.flatten_grads(&grads);
    let mut probe = net.clone();
    let err = fd_params(
        &mut probe,
        |n| crate::nn::loss_and_backward(n, 0, &x, &y, loss, vec![]).unwrap().0,
        &flat,
        EPS,
    );
    CheckReport { name, max_rel_err: err, tolerance: NET_TOL }
}

fn check_penalty() -> CheckReport {
    use crate::importance::{add_penalty_grads, penalty_value, Importance};
    let net = tiny_net(&[2], 43);
    // anchor from a differently seeded twin, omega from a third, made positive
    let anchor = tiny_net(&[2], 44).snapshot(Some(0));
    let mut omega = tiny_net(&[2], 45).snapshot(Some(0));
    for b in omega.trunk.iter_mut().chain(omega.heads.iter_mut().flatten()) {
        for v in b.w.data_mut() {
            *v = v.abs();
        }
        for v in &mut b.b {
            *v = v.abs();
        }
    }
    let lambda = 3.0;
    let zeros = Importance::zeros(&net, Some(0)).map;
    let mut grads =
        crate::nn::GradientSet { trunk: zeros.trunk, heads: zeros.heads, trunk_pre: vec![] };
    add_penalty_grads(&mut grads, &net, &omega, &anchor, lambda);
    let flat = net.flatten_grads(&grads);
    let mut probe = net.clone();
    let err = fd_params(&mut probe, |n| penalty_value(n, &omega, &anchor, lambda), &flat, EPS);
    CheckReport { name: "importance-penalty", max_rel_err: err, tolerance: CLOSED_FORM_TOL }
}

fn check_activation_reg(
    name: &'static str,
    reg: impl Fn(&Matrix) -> (f64, Matrix),
) -> CheckReport {
    // strictly positive entries, clear of the L1 kink at zero
    let h = Matrix::from_fn(6, 10, |r, c| 0.25 + 0.6 * ((r * 10 + c) as f64 * 0.59).sin().abs());
    let (_, grad) = reg(&h);
    let err = fd_matrix(&h, |m| reg(m).0, &grad, EPS);
    CheckReport { name, max_rel_err: err, tolerance: CLOSED_FORM_TOL }
}

fn check_distill() -> CheckReport {
    use crate::distill::distill_loss;
    use crate::nn::Seeds;
    let net = tiny_net(&[3], 47);
    let x = probe_inputs(5, 2);
    let teacher = Matrix::from_fn(5, 3, |i, j| ((i + 2 * j) as f64 * 0.71).sin());
    let tau = 2.0;
    let (logits, trace) = net.forward(0, &x).unwrap();
    let (_, dlogits) = distill_loss(&logits, &teacher, tau).unwrap();
    let grads = net
        .backprop(&trace, &Seeds { head_dlogits: vec![(0, dlogits)], post_extra: vec![] })
        .unwrap();
    let flat = net.flatten_grads(&grads);
    let mut probe = net.clone();
    let err = fd_params(
        &mut probe,
        |n| {
            let (l, _) = n.forward(0, &x).unwrap();
            distill_loss(&l, &teacher, tau).unwrap().0
        },
        &flat,
        EPS,
    );
    CheckReport { name: "distill", max_rel_err: err, tolerance: NET_TOL }
}

fn check_ebll() -> CheckReport {
    use crate::data::LabeledBatch;
    use crate::distill::{ebll_loss, record, train_autoencoder, OldTaskCtx};
    let net = tiny_net(&[2, 2], 49);
    let batch = LabeledBatch::new(probe_inputs(6, 2), vec![0, 1, 0, 1, 1, 0]);
    let rows: Vec<usize> = (0..batch.len()).collect();
    let ae = train_autoencoder(&net, 0, &batch, 2, 1e-3, 3, 0.05).unwrap();
    let recs = record(&net, &[0], std::slice::from_ref(&ae), &batch.inputs).unwrap();

    // nudge the net after recording so every term contributes
    let mut net = net;
    for i in 0..net.param_count() {
        let v = net.get_param(i);
        net.set_param(i, v + 0.07 * ((i as f64) * 0.9).sin());
    }
    let ctx = [OldTaskCtx { record: &recs[0], autoencoder: Some(&ae), alpha: 0.8 }];
    let (_, grads) = ebll_loss(&net, 1, &batch, &rows, &ctx, 2.0).unwrap();
    let flat = net.flatten_grads(&grads);
    let mut probe = net.clone();
    let err = fd_params(
        &mut probe,
        |n| {
            let ctx = [OldTaskCtx { record: &recs[0], autoencoder: Some(&ae), alpha: 0.8 }];
            ebll_loss(n, 1, &batch, &rows, &ctx, 2.0).unwrap().0
        },
        &flat,
        EPS,
    );
    CheckReport { name: "ebll-composite", max_rel_err: err, tolerance: NET_TOL }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn the_full_suite_passes() {
        let reports = run_all();
        assert_eq!(reports.len(), 11);
        for r in &reports {
            assert!(r.passed(), "{}: rel err {} over tolerance {}", r.name, r.max_rel_err, r.tolerance);
        }
    }
}
