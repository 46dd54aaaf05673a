//! Parameter-importance estimators and the quadratic consolidation penalty.
//!
//! For a dense layer the per-sample parameter gradient factorizes as
//! outer(dpre_n, input_n), so MAS means of |grad| and Fisher means of grad^2
//! reduce to |D|ᵀ|H|/N and (D∘D)ᵀ(H∘H)/N with D the per-sample pre-activation
//! gradients one batched backprop already yields. No per-sample loops.

use crate::data::LabeledBatch;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{softmax_rows, GradientSet, Network, ParamBlock, ParamMap, Seeds};

const ESTIMATE_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccumRule {
    Cma,
    Decay,
}

/// Ω plus its update count (the cma divisor).
#[derive(Clone, Debug)]
pub struct Importance {
    pub map: ParamMap,
    pub update_count: u64,
}

impl Importance {
    pub fn zeros(net: &Network, cover_head: Option<usize>) -> Self {
        Importance { map: ParamMap::zeros_like(net, cover_head), update_count: 0 }
    }

    pub fn is_fresh(&self) -> bool {
        self.update_count == 0
    }

    /// cma: acc ← (acc·k + new)/(k+1); decay: acc ← (acc + new)/2.
    pub fn accumulate(&mut self, new: &ParamMap, rule: AccumRule) -> Result<()> {
        if !self.map.same_shape(new) {
            return Err(Error::Shape("importance accumulation shape mismatch".into()));
        }
        let (wa, wb) = match rule {
            AccumRule::Cma => {
                let k = self.update_count as f64;
                (k / (k + 1.0), 1.0 / (k + 1.0))
            }
            AccumRule::Decay => (0.5, 0.5),
        };
        let blend = |acc: &mut ParamBlock, new: &ParamBlock| {
            acc.w.scale_assign(wa);
            acc.w.scaled_add_assign(&new.w, wb);
            for (a, &n) in acc.b.iter_mut().zip(&new.b) {
                *a = wa * *a + wb * n;
            }
        };
        for (acc, n) in self.map.trunk.iter_mut().zip(&new.trunk) {
            blend(acc, n);
        }
        for (acc, n) in self.map.heads.iter_mut().zip(&new.heads) {
            if let (Some(acc), Some(n)) = (acc.as_mut(), n.as_ref()) {
                blend(acc, n);
            }
        }
        self.update_count += 1;
        Ok(())
    }
}

// Shared chunked accumulator: seeds per-sample head gradients, runs backprop,
// folds |·| or (·)² sums of the factorized per-parameter gradients.
fn estimate_map(
    net: &Network,
    head: usize,
    inputs: &Matrix,
    cover_head: Option<usize>,
    mut seed_fn: impl FnMut(&Matrix, &[usize]) -> Matrix,
    labels: Option<&[usize]>,
    square: bool,
) -> Result<ParamMap> {
    let n = inputs.rows();
    if n == 0 {
        return Err(Error::InvalidArg("importance estimation needs samples".into()));
    }
    net.head(head)?;
    let mut sums = ParamMap::zeros_like(net, cover_head);
    let fold = |m: &Matrix| -> Matrix {
        if square {
            m.map(|v| v * v)
        } else {
            m.map(f64::abs)
        }
    };

    let mut start = 0;
    while start < n {
        let end = (start + ESTIMATE_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let x = inputs.gather_rows(&idx);
        let y: Vec<usize> = labels.map(|l| idx.iter().map(|&i| l[i]).collect()).unwrap_or_default();
        let trace = net.forward_trunk(&x);
        let logits = net.head_logits(head, trace.features())?;
        let dlogits = seed_fn(&logits, &y);
        let grads: GradientSet =
            net.backprop(&trace, &Seeds { head_dlogits: vec![(head, dlogits.clone())], post_extra: vec![] })?;

        for (l, block) in sums.trunk.iter_mut().enumerate() {
            let d = fold(&grads.trunk_pre[l]);
            let h = fold(trace.layer_input(l));
            block.w.add_assign(&d.matmul_at(&h));
            for (b, s) in block.b.iter_mut().zip(d.col_sums()) {
                *b += s;
            }
        }
        if let Some(hid) = cover_head {
            if hid == head {
                let block = sums.heads[hid].as_mut().unwrap();
                let d = fold(&dlogits);
                let h = fold(trace.features());
                block.w.add_assign(&d.matmul_at(&h));
                for (b, s) in block.b.iter_mut().zip(d.col_sums()) {
                    *b += s;
                }
            }
        }
        start = end;
    }

    let scale = 1.0 / n as f64;
    for block in sums.trunk.iter_mut().chain(sums.heads.iter_mut().flatten()) {
        block.w.scale_assign(scale);
        for b in &mut block.b {
            *b *= scale;
        }
    }
    Ok(sums)
}

/// Ω_ij = (1/N) Σ_n |∂‖f(x_n)‖₂² / ∂θ_ij|; labels not needed.
pub fn mas_importance(
    net: &Network,
    head: usize,
    inputs: &Matrix,
    cover_head: Option<usize>,
) -> Result<ParamMap> {
    estimate_map(net, head, inputs, cover_head, |logits, _| logits.map(|v| 2.0 * v), None, false)
}

/// Diagonal empirical Fisher: Ω_ij = (1/N) Σ_n (∂log p(y_n|x_n)/∂θ_ij)².
pub fn ewc_importance(
    net: &Network,
    head: usize,
    batch: &LabeledBatch,
    cover_head: Option<usize>,
) -> Result<ParamMap> {
    estimate_map(
        net,
        head,
        &batch.inputs,
        cover_head,
        |logits, y| {
            // d(-log p)/dlogits per sample
            let mut d = softmax_rows(logits);
            for (n, &t) in y.iter().enumerate() {
                let v = d.get(n, t);
                d.set(n, t, v - 1.0);
            }
            d
        },
        Some(&batch.labels),
        true,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeuronMode {
    LossGrad,
    FunctionGrad,
}

/// α_j = (1/N) Σ_n |∂obj/∂out_j| over pre-activation outputs, per trunk layer.
pub fn neuron_importance(
    net: &Network,
    head: usize,
    batch: &LabeledBatch,
    mode: NeuronMode,
) -> Result<Vec<Vec<f64>>> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::InvalidArg("neuron importance needs samples".into()));
    }
    net.head(head)?;
    let mut sums: Vec<Vec<f64>> = net.trunk.iter().map(|l| vec![0.0; l.out_dim()]).collect();
    let mut start = 0;
    while start < n {
        let end = (start + ESTIMATE_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let x = batch.inputs.gather_rows(&idx);
        let trace = net.forward_trunk(&x);
        let logits = net.head_logits(head, trace.features())?;
        let dlogits = match mode {
            NeuronMode::FunctionGrad => logits.map(|v| 2.0 * v),
            NeuronMode::LossGrad => {
                let y: Vec<usize> = idx.iter().map(|&i| batch.labels[i]).collect();
                let mut d = softmax_rows(&logits);
                for (r, &t) in y.iter().enumerate() {
                    let v = d.get(r, t);
                    d.set(r, t, v - 1.0);
                }
                d
            }
        };
        let grads = net.backprop(&trace, &Seeds { head_dlogits: vec![(head, dlogits)], post_extra: vec![] })?;
        for (l, layer_sums) in sums.iter_mut().enumerate() {
            let d = &grads.trunk_pre[l];
            for r in 0..d.rows() {
                for (s, &g) in layer_sums.iter_mut().zip(d.row(r)) {
                    *s += g.abs();
                }
            }
        }
        start = end;
    }
    for layer in &mut sums {
        for v in layer.iter_mut() {
            *v /= n as f64;
        }
    }
    Ok(sums)
}

/// λ Σ Ω_ij (θ_ij − θ*_ij)² over every block Ω covers.
pub fn penalty_value(net: &Network, omega: &ParamMap, anchor: &ParamMap, lambda: f64) -> f64 {
    let mut total = 0.0;
    let block = |layer_w: &Matrix, layer_b: &[f64], om: &ParamBlock, an: &ParamBlock| -> f64 {
        let mut s = 0.0;
        for ((&th, &o), &a) in layer_w.data().iter().zip(om.w.data()).zip(an.w.data()) {
            let d = th - a;
            s += o * d * d;
        }
        for ((&th, &o), &a) in layer_b.iter().zip(&om.b).zip(&an.b) {
            let d = th - a;
            s += o * d * d;
        }
        s
    };
    for ((layer, om), an) in net.trunk.iter().zip(&omega.trunk).zip(&anchor.trunk) {
        total += block(&layer.w, &layer.b, om, an);
    }
    for ((layer, om), an) in net.heads.iter().zip(&omega.heads).zip(&anchor.heads) {
        if let (Some(om), Some(an)) = (om, an) {
            total += block(&layer.w, &layer.b, om, an);
        }
    }
    lambda * total
}

/// Adds 2λΩ(θ−θ*) locally to an existing gradient set (no backprop involved).
pub fn add_penalty_grads(
    grads: &mut GradientSet,
    net: &Network,
    omega: &ParamMap,
    anchor: &ParamMap,
    lambda: f64,
) {
    if lambda == 0.0 {
        return;
    }
    let two_lambda = 2.0 * lambda;
    for ((g, layer), (om, an)) in grads
        .trunk
        .iter_mut()
        .zip(&net.trunk)
        .zip(omega.trunk.iter().zip(&anchor.trunk))
    {
        for ((gv, &th), (&o, &a)) in g
            .w
            .data_mut()
            .iter_mut()
            .zip(layer.w.data())
            .zip(om.w.data().iter().zip(an.w.data()))
        {
            *gv += two_lambda * o * (th - a);
        }
        for ((gb, &th), (&o, &a)) in g.b.iter_mut().zip(&layer.b).zip(om.b.iter().zip(&an.b)) {
            *gb += two_lambda * o * (th - a);
        }
    }
    for ((g, layer), (om, an)) in grads
        .heads
        .iter_mut()
        .zip(&net.heads)
        .zip(omega.heads.iter().zip(&anchor.heads))
    {
        if let (Some(om), Some(an)) = (om, an) {
            let g = g.get_or_insert_with(|| ParamBlock::zeros_like(layer));
            for ((gv, &th), (&o, &a)) in g
                .w
                .data_mut()
                .iter_mut()
                .zip(layer.w.data())
                .zip(om.w.data().iter().zip(an.w.data()))
            {
                *gv += two_lambda * o * (th - a);
            }
            for ((gb, &th), (&o, &a)) in g.b.iter_mut().zip(&layer.b).zip(om.b.iter().zip(&an.b)) {
                *gb += two_lambda * o * (th - a);
            }
        }
    }
}
