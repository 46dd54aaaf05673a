//! Dense feed-forward substrate: deterministic init, forward traces,
//! reverse-mode gradients for parameters and hidden pre-activations, plain SGD.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    // Derivative expressed in terms of the post-activation value.
    // ReLU subgradient at 0 is taken as 0.
    #[inline]
    pub fn dpost(self, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if post > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Tanh => 1.0 - post * post,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DenseLayer {
    /// out×in
    pub w: Matrix,
    pub b: Vec<f64>,
    pub act: Activation,
}

impl DenseLayer {
    fn glorot(out_dim: usize, in_dim: usize, act: Activation, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = Matrix::from_fn(out_dim, in_dim, |_, _| rng.gen_range(-a..=a));
        DenseLayer { w, b: vec![0.0; out_dim], act }
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    /// Returns (pre, post) for a batch of rows.
    pub fn forward(&self, x: &Matrix) -> (Matrix, Matrix) {
        let mut pre = x.matmul_bt(&self.w);
        for r in 0..pre.rows() {
            for (v, &b) in pre.row_mut(r).iter_mut().zip(&self.b) {
                *v += b;
            }
        }
        let post = pre.map(|v| self.act.apply(v));
        (pre, post)
    }
}

/// Shared trunk plus one linear (logit) head per task. Head ids are positional.
#[derive(Clone, Debug)]
pub struct Network {
    pub trunk: Vec<DenseLayer>,
    pub heads: Vec<DenseLayer>,
    pub seed: u64,
}

/// layer_dims = [input, hidden...]; every head maps the last trunk width to its class count.
pub fn build_network(
    layer_dims: &[usize],
    act: Activation,
    head_dims: &[usize],
    seed: u64,
) -> Result<Network> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidArg("need an input dim and at least one hidden layer".into()));
    }
    if head_dims.is_empty() {
        return Err(Error::InvalidArg("need at least one head".into()));
    }
    if layer_dims.iter().chain(head_dims).any(|&d| d == 0) {
        return Err(Error::InvalidArg("zero-width layer".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trunk = layer_dims
        .windows(2)
        .map(|w| DenseLayer::glorot(w[1], w[0], act, &mut rng))
        .collect();
    let feat = *layer_dims.last().unwrap();
    let heads = head_dims
        .iter()
        .map(|&c| DenseLayer::glorot(c, feat, Activation::Identity, &mut rng))
        .collect();
    Ok(Network { trunk, heads, seed })
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub input: Matrix,
    pub pre: Vec<Matrix>,
    pub post: Vec<Matrix>,
}

impl ForwardTrace {
    /// Trunk output fed to the heads.
    pub fn features(&self) -> &Matrix {
        self.post.last().unwrap_or(&self.input)
    }

    /// Input of trunk layer l.
    pub fn layer_input(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.input
        } else {
            &self.post[l - 1]
        }
    }
}

/// One weight-matrix-plus-bias block; doubles as a gradient, an importance map
/// and a parameter snapshot since they are all shape-congruent with a layer.
#[derive(Clone, Debug)]
pub struct ParamBlock {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl ParamBlock {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        ParamBlock { w: Matrix::zeros(layer.w.rows(), layer.w.cols()), b: vec![0.0; layer.b.len()] }
    }

    pub fn from_layer(layer: &DenseLayer) -> Self {
        ParamBlock { w: layer.w.clone(), b: layer.b.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.b.iter().all(|v| v.is_finite())
    }
}

/// Per-parameter map over the trunk and (optionally) some heads.
/// Used for Ω, θ* and any other parameter-shaped quantity.
#[derive(Clone, Debug)]
pub struct ParamMap {
    pub trunk: Vec<ParamBlock>,
    pub heads: Vec<Option<ParamBlock>>,
}

impl ParamMap {
    pub fn zeros_like(net: &Network, cover_head: Option<usize>) -> Self {
        ParamMap {
            trunk: net.trunk.iter().map(ParamBlock::zeros_like).collect(),
            heads: net
                .heads
                .iter()
                .enumerate()
                .map(|(i, h)| if cover_head == Some(i) { Some(ParamBlock::zeros_like(h)) } else { None })
                .collect(),
        }
    }

    pub fn same_shape(&self, other: &ParamMap) -> bool {
        self.trunk.len() == other.trunk.len()
            && self.heads.len() == other.heads.len()
            && self
                .trunk
                .iter()
                .zip(&other.trunk)
                .all(|(a, b)| a.w.rows() == b.w.rows() && a.w.cols() == b.w.cols())
            && self.heads.iter().zip(&other.heads).all(|(a, b)| a.is_some() == b.is_some())
    }
}

/// Gradients of one objective: parameter blocks mirroring the network, plus the
/// per-sample pre-activation gradient of every trunk layer (rows = samples).
#[derive(Clone, Debug)]
pub struct GradientSet {
    pub trunk: Vec<ParamBlock>,
    pub heads: Vec<Option<ParamBlock>>,
    /// d(objective)/d(pre-activation) per trunk layer, N×width.
    pub trunk_pre: Vec<Matrix>,
}

impl GradientSet {
    pub fn is_finite(&self) -> bool {
        self.trunk.iter().all(|b| b.is_finite())
            && self.heads.iter().flatten().all(|b| b.is_finite())
    }

    /// self += other, merging head coverage.
    pub fn add_assign(&mut self, other: &GradientSet) {
        assert_eq!(self.trunk.len(), other.trunk.len());
        for (a, b) in self.trunk.iter_mut().zip(&other.trunk) {
            a.w.add_assign(&b.w);
            for (x, &y) in a.b.iter_mut().zip(&b.b) {
                *x += y;
            }
        }
        for (a, b) in self.heads.iter_mut().zip(&other.heads) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => {
                    a.w.add_assign(&b.w);
                    for (x, &y) in a.b.iter_mut().zip(&b.b) {
                        *x += y;
                    }
                }
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }
}

/// Seeds for reverse mode: d(objective)/d(logits) per head, plus optional
/// d(objective)/d(post-activation) additions per trunk layer (representation
/// regularizers and code penalties enter here).
#[derive(Default)]
pub struct Seeds {
    pub head_dlogits: Vec<(usize, Matrix)>,
    pub post_extra: Vec<(usize, Matrix)>,
}

impl Network {
    pub fn input_dim(&self) -> usize {
        self.trunk[0].in_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.trunk.last().unwrap().out_dim()
    }

    pub fn head(&self, id: usize) -> Result<&DenseLayer> {
        self.heads.get(id).ok_or(Error::UnknownHead(id))
    }

    pub fn forward_trunk(&self, x: &Matrix) -> ForwardTrace {
        assert_eq!(x.cols(), self.input_dim(), "input width mismatch");
        let mut pre = Vec::with_capacity(self.trunk.len());
        let mut post = Vec::with_capacity(self.trunk.len());
        let mut cur = x;
        for layer in &self.trunk {
            let (p, h) = layer.forward(cur);
            pre.push(p);
            post.push(h);
            cur = post.last().unwrap();
        }
        ForwardTrace { input: x.clone(), pre, post }
    }

    pub fn head_logits(&self, head: usize, features: &Matrix) -> Result<Matrix> {
        let h = self.head(head)?;
        let mut logits = features.matmul_bt(&h.w);
        for r in 0..logits.rows() {
            for (v, &b) in logits.row_mut(r).iter_mut().zip(&h.b) {
                *v += b;
            }
        }
        Ok(logits)
    }

    pub fn forward(&self, head: usize, x: &Matrix) -> Result<(Matrix, ForwardTrace)> {
        let trace = self.forward_trunk(x);
        let logits = self.head_logits(head, trace.features())?;
        Ok((logits, trace))
    }

    /// Exact reverse mode for any objective expressed through the seeds.
    /// Rows of `trunk_pre` are per-sample gradients because samples never
    /// interact inside the network itself.
    pub fn backprop(&self, trace: &ForwardTrace, seeds: &Seeds) -> Result<GradientSet> {
        let n = trace.input.rows();
        let last = self.trunk.len() - 1;
        let mut head_grads: Vec<Option<ParamBlock>> = vec![None; self.heads.len()];
        let mut dpost = Matrix::zeros(n, self.trunk[last].out_dim());

        for (id, dlogits) in &seeds.head_dlogits {
            let h = self.head(*id)?;
            assert_eq!(dlogits.rows(), n);
            assert_eq!(dlogits.cols(), h.out_dim());
            let features = trace.features();
            head_grads[*id] = Some(ParamBlock {
                w: dlogits.matmul_at(features),
                b: dlogits.col_sums(),
            });
            dpost.add_assign(&dlogits.matmul(&h.w));
        }

        let mut trunk_grads = vec![ParamBlock::zeros_like(&self.trunk[0]); 0];
        trunk_grads.reserve(self.trunk.len());
        let mut trunk_pre = vec![Matrix::zeros(0, 0); self.trunk.len()];

        for l in (0..=last).rev() {
            for (at, extra) in &seeds.post_extra {
                if *at == l {
                    dpost.add_assign(extra);
                }
            }
            let layer = &self.trunk[l];
            let mut dpre = dpost;
            for r in 0..n {
                for (g, &h) in dpre.row_mut(r).iter_mut().zip(trace.post[l].row(r)) {
                    *g *= layer.act.dpost(h);
                }
            }
            let x = trace.layer_input(l);
            trunk_grads.push(ParamBlock { w: dpre.matmul_at(x), b: dpre.col_sums() });
            if l > 0 {
                dpost = dpre.matmul(&layer.w);
            } else {
                dpost = Matrix::zeros(0, 0);
            }
            trunk_pre[l] = dpre;
        }
        trunk_grads.reverse();

        Ok(GradientSet { trunk: trunk_grads, heads: head_grads, trunk_pre })
    }

    /// θ ← θ − lr·g over the trunk and every head the gradient covers.
    pub fn sgd_step(&mut self, grads: &GradientSet, lr: f64) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::InvalidArg("lr must be positive".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients"));
        }
        for (layer, g) in self.trunk.iter_mut().zip(&grads.trunk) {
            layer.w.scaled_add_assign(&g.w, -lr);
            for (b, &gb) in layer.b.iter_mut().zip(&g.b) {
                *b -= lr * gb;
            }
        }
        for (head, g) in self.heads.iter_mut().zip(&grads.heads) {
            if let Some(g) = g {
                head.w.scaled_add_assign(&g.w, -lr);
                for (b, &gb) in head.b.iter_mut().zip(&g.b) {
                    *b -= lr * gb;
                }
            }
        }
        Ok(())
    }

    /// Copies current parameter values; θ* for the consolidation penalty.
    pub fn snapshot(&self, cover_head: Option<usize>) -> ParamMap {
        ParamMap {
            trunk: self.trunk.iter().map(ParamBlock::from_layer).collect(),
            heads: self
                .heads
                .iter()
                .enumerate()
                .map(|(i, h)| if cover_head == Some(i) { Some(ParamBlock::from_layer(h)) } else { None })
                .collect(),
        }
    }

    // Flat parameter indexing (trunk layers then heads, weights row-major then
    // bias) so finite-difference oracles can sweep every coordinate.
    pub fn param_count(&self) -> usize {
        self.trunk
            .iter()
            .chain(&self.heads)
            .map(|l| l.w.rows() * l.w.cols() + l.b.len())
            .sum()
    }

    fn locate(&self, mut idx: usize) -> (bool, usize, usize) {
        for (i, l) in self.trunk.iter().enumerate() {
            let sz = l.w.rows() * l.w.cols() + l.b.len();
            if idx < sz {
                return (true, i, idx);
            }
            idx -= sz;
        }
        for (i, l) in self.heads.iter().enumerate() {
            let sz = l.w.rows() * l.w.cols() + l.b.len();
            if idx < sz {
                return (false, i, idx);
            }
            idx -= sz;
        }
        panic!("parameter index out of range");
    }

    pub fn get_param(&self, idx: usize) -> f64 {
        let (is_trunk, l, off) = self.locate(idx);
        let layer = if is_trunk { &self.trunk[l] } else { &self.heads[l] };
        let wlen = layer.w.rows() * layer.w.cols();
        if off < wlen {
            layer.w.data()[off]
        } else {
            layer.b[off - wlen]
        }
    }

    pub fn set_param(&mut self, idx: usize, v: f64) {
        let (is_trunk, l, off) = self.locate(idx);
        let layer = if is_trunk { &mut self.trunk[l] } else { &mut self.heads[l] };
        let wlen = layer.w.rows() * layer.w.cols();
        if off < wlen {
            layer.w.data_mut()[off] = v;
        } else {
            layer.b[off - wlen] = v;
        }
    }

    /// Flattens a GradientSet in the same order as get_param/set_param.
    /// Heads without gradients contribute zeros.
    pub fn flatten_grads(&self, grads: &GradientSet) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for g in &grads.trunk {
            out.extend_from_slice(g.w.data());
            out.extend_from_slice(&g.b);
        }
        for (head, g) in self.heads.iter().zip(&grads.heads) {
            match g {
                Some(g) => {
                    out.extend_from_slice(g.w.data());
                    out.extend_from_slice(&g.b);
                }
                None => out.extend(std::iter::repeat(0.0).take(head.w.rows() * head.w.cols() + head.b.len())),
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    SoftmaxXent,
    Mse,
}

/// Numerically stable softmax over each row.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

impl Loss {
    /// Mean loss over the batch and d(mean loss)/d(logits).
    pub fn eval(&self, logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
        let per = self.per_sample(logits, targets)?;
        let n = logits.rows() as f64;
        let value = per.iter().sum::<f64>() / n;
        let mut dlogits = self.dlogits_per_sample(logits, targets)?;
        dlogits.scale_assign(1.0 / n);
        Ok((value, dlogits))
    }

    /// Per-sample losses (no batch reduction); the hard buffer ranks with these.
    pub fn per_sample(&self, logits: &Matrix, targets: &[usize]) -> Result<Vec<f64>> {
        self.check(logits, targets)?;
        match self {
            Loss::SoftmaxXent => {
                let p = softmax_rows(logits);
                Ok(targets
                    .iter()
                    .enumerate()
                    .map(|(n, &t)| -p.get(n, t).max(1e-300).ln())
                    .collect())
            }
            Loss::Mse => Ok(targets
                .iter()
                .enumerate()
                .map(|(n, &t)| {
                    logits
                        .row(n)
                        .iter()
                        .enumerate()
                        .map(|(c, &v)| {
                            let d = v - if c == t { 1.0 } else { 0.0 };
                            0.5 * d * d
                        })
                        .sum()
                })
                .collect()),
        }
    }

    /// d(per-sample loss)/d(logits), one row per sample (no 1/N).
    pub fn dlogits_per_sample(&self, logits: &Matrix, targets: &[usize]) -> Result<Matrix> {
        self.check(logits, targets)?;
        match self {
            Loss::SoftmaxXent => {
                let mut d = softmax_rows(logits);
                for (n, &t) in targets.iter().enumerate() {
                    let v = d.get(n, t);
                    d.set(n, t, v - 1.0);
                }
                Ok(d)
            }
            Loss::Mse => {
                let mut d = logits.clone();
                for (n, &t) in targets.iter().enumerate() {
                    let v = d.get(n, t);
                    d.set(n, t, v - 1.0);
                }
                Ok(d)
            }
        }
    }

    fn check(&self, logits: &Matrix, targets: &[usize]) -> Result<()> {
        if targets.len() != logits.rows() {
            return Err(Error::Shape(format!(
                "{} targets for {} logit rows",
                targets.len(),
                logits.rows()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= logits.cols()) {
            return Err(Error::InvalidArg(format!(
                "target class {bad} out of range for {} logits",
                logits.cols()
            )));
        }
        Ok(())
    }
}

/// Mean data loss plus exact gradients, with optional per-layer activation
/// gradient additions (representation regularizers plug in there).
pub fn loss_and_backward(
    net: &Network,
    head: usize,
    inputs: &Matrix,
    targets: &[usize],
    loss: Loss,
    post_extra: Vec<(usize, Matrix)>,
) -> Result<(f64, GradientSet)> {
    let (logits, trace) = net.forward(head, inputs)?;
    let (value, dlogits) = loss.eval(&logits, targets)?;
    let seeds = Seeds { head_dlogits: vec![(head, dlogits)], post_extra };
    let grads = net.backprop(&trace, &seeds)?;
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_net(seed: u64) -> Network {
        build_network(&[3, 4], Activation::Relu, &[2], seed).unwrap()
    }

    #[test]
    fn same_seed_same_network() {
        let a = build_network(&[4, 10, 10], Activation::Relu, &[2], 7).unwrap();
        let b = build_network(&[4, 10, 10], Activation::Relu, &[2], 7).unwrap();
        for (la, lb) in a.trunk.iter().zip(&b.trunk) {
            assert_eq!(la.w.data(), lb.w.data());
            assert_eq!(la.b, lb.b);
        }
        for (ha, hb) in a.heads.iter().zip(&b.heads) {
            assert_eq!(ha.w.data(), hb.w.data());
        }
        let c = build_network(&[4, 10, 10], Activation::Relu, &[2], 8).unwrap();
        assert_ne!(a.trunk[0].w.data(), c.trunk[0].w.data());
    }

    #[test]
    fn no_hidden_structure_is_rejected() {
        assert!(build_network(&[4], Activation::Relu, &[2], 0).is_err());
    }

    #[test]
    fn zero_network_gives_zero_logits() {
        let mut net = tiny_net(1);
        for l in net.trunk.iter_mut().chain(net.heads.iter_mut()) {
            l.w.scale_assign(0.0);
        }
        let x = Matrix::from_rows(&[&[1.0, -2.0, 3.0]]);
        let (logits, _) = net.forward(0, &x).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let mut net = build_network(&[3, 3], Activation::Identity, &[3], 0).unwrap();
        net.trunk[0].w = Matrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 });
        net.trunk[0].b = vec![0.0; 3];
        net.heads[0].w = Matrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.0 });
        net.heads[0].b = vec![0.0; 3];
        let x = Matrix::from_rows(&[&[0.5, -1.5, 2.0]]);
        let (logits, _) = net.forward(0, &x).unwrap();
        assert_eq!(logits.data(), x.data());
    }

    #[test]
    fn forward_is_pure() {
        let net = tiny_net(3);
        let x = Matrix::from_fn(3, 3, |i, j| (i as f64 - j as f64) * 0.7);
        let (a, _) = net.forward(0, &x).unwrap();
        let (b, _) = net.forward(0, &x).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.rows(), 3);
        assert_eq!(a.cols(), 2);
    }

    #[test]
    fn unknown_head_errors() {
        let net = tiny_net(0);
        let x = Matrix::zeros(1, 3);
        assert!(net.forward(5, &x).is_err());
    }

    #[test]
    fn uniform_logits_softmax_loss_is_ln_c() {
        let logits = Matrix::zeros(4, 2);
        let (v, _) = Loss::SoftmaxXent.eval(&logits, &[0, 1, 0, 1]).unwrap();
        assert!((v - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn mse_at_target_is_zero_with_zero_grads() {
        let logits = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let (v, d) = Loss::Mse.eval(&logits, &[0, 1]).unwrap();
        assert_eq!(v, 0.0);
        assert!(d.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn target_out_of_range_errors() {
        let logits = Matrix::zeros(1, 2);
        assert!(Loss::SoftmaxXent.eval(&logits, &[2]).is_err());
    }

    #[test]
    fn sgd_arithmetic() {
        let mut net = tiny_net(2);
        net.trunk[0].w.set(0, 0, 1.0);
        let mut grads = GradientSet {
            trunk: net.trunk.iter().map(ParamBlock::zeros_like).collect(),
            heads: vec![None],
            trunk_pre: vec![],
        };
        grads.trunk[0].w.set(0, 0, 2.0);
        net.sgd_step(&grads, 0.1).unwrap();
        assert!((net.trunk[0].w.get(0, 0) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_non_finite() {
        let mut net = tiny_net(2);
        let mut grads = GradientSet {
            trunk: net.trunk.iter().map(ParamBlock::zeros_like).collect(),
            heads: vec![None],
            trunk_pre: vec![],
        };
        grads.trunk[0].w.set(0, 0, f64::NAN);
        assert!(net.sgd_step(&grads, 0.1).is_err());
    }

    #[test]
    fn two_steps_differ_from_one_summed_step_on_nonlinear_net() {
        let x = Matrix::from_rows(&[&[0.4, -0.2, 0.9], &[-0.5, 0.3, 0.1]]);
        let y = [0usize, 1];

        let mut net_two = tiny_net(5);
        let (_, g1) = loss_and_backward(&net_two, 0, &x, &y, Loss::SoftmaxXent, vec![]).unwrap();
        net_two.sgd_step(&g1, 0.5).unwrap();
        let (_, g2) = loss_and_backward(&net_two, 0, &x, &y, Loss::SoftmaxXent, vec![]).unwrap();
        net_two.sgd_step(&g2, 0.5).unwrap();

        // Both gradients taken at the unchanged starting point: summing them
        // into one step must NOT reproduce the two-step trajectory, because
        // the second real step used a gradient at moved parameters.
        let mut net_one = tiny_net(5);
        let (_, g1b) = loss_and_backward(&net_one, 0, &x, &y, Loss::SoftmaxXent, vec![]).unwrap();
        let mut summed = g1b.clone();
        summed.add_assign(&g1b);
        net_one.sgd_step(&summed, 0.5).unwrap();

        let diff: f64 = net_two.trunk[0]
            .w
            .data()
            .iter()
            .zip(net_one.trunk[0].w.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-9, "nonlinearity must make the orders differ");
    }

    #[test]
    fn param_indexing_round_trips() {
        let mut net = tiny_net(9);
        let n = net.param_count();
        assert_eq!(n, 3 * 4 + 4 + 4 * 2 + 2);
        for i in 0..n {
            let v = net.get_param(i);
            net.set_param(i, v + 1.0);
            assert_eq!(net.get_param(i), v + 1.0);
            net.set_param(i, v);
        }
    }
}
