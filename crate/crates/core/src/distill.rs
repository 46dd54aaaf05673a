//! Knowledge distillation and the encoder-based composite objective.
//!
//! Old-task outputs are recorded once on the incoming task's inputs before
//! any update, then treated as fixed targets. The code penalty keeps each
//! old task's autoencoder code of the current features near the code those
//! features produced under the frozen model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{softmax_rows, Activation, GradientSet, Loss, Network, Seeds};
use crate::data::LabeledBatch;
use crate::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    Lwf,
    Ebll,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub mode: DistillMode,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Code-penalty weight, applied to every old task.
    #[serde(default)]
    pub alpha: f64,
    /// Reconstruction weight inside the autoencoder loss.
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_code_size")]
    pub code_size: usize,
    #[serde(default = "default_ae_epochs")]
    pub ae_epochs: usize,
    #[serde(default = "default_ae_lr")]
    pub ae_lr: f64,
}

fn default_temperature() -> f64 {
    2.0
}

// The reconstruction term competes with a cross-entropy on ~100-dim codes,
// not ImageNet-scale ones, so the classic 1e-6 underweights it badly here.
fn default_beta() -> f64 {
    1e-3
}

fn default_code_size() -> usize {
    32
}

fn default_ae_epochs() -> usize {
    30
}

fn default_ae_lr() -> f64 {
    0.01
}

impl DistillConfig {
    pub fn new(mode: DistillMode) -> Self {
        DistillConfig {
            mode,
            temperature: default_temperature(),
            alpha: 0.0,
            beta: default_beta(),
            code_size: default_code_size(),
            ae_epochs: default_ae_epochs(),
            ae_lr: default_ae_lr(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("alpha and beta must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Temperature-softened probabilities: softmax of logits/τ, identical to
/// renormalizing softmax outputs raised to 1/τ.
pub fn soften(logits: &Matrix, tau: f64) -> Result<Matrix> {
    if tau <= 0.0 {
        return Err(Error::InvalidArg(format!("temperature {tau} must be positive")));
    }
    let mut scaled = logits.clone();
    scaled.scale_assign(1.0 / tau);
    Ok(softmax_rows(&scaled))
}

/// Soft-label cross-entropy between softened student and teacher outputs,
/// averaged over the batch. Returns the loss and its gradient with respect
/// to the raw student logits: (ẑ − z*) / (Nτ).
pub fn distill_loss(
    student_logits: &Matrix,
    teacher_logits: &Matrix,
    tau: f64,
) -> Result<(f64, Matrix)> {
    if student_logits.rows() != teacher_logits.rows()
        || student_logits.cols() != teacher_logits.cols()
    {
        return Err(Error::Shape(format!(
            "student {}x{} vs teacher {}x{}",
            student_logits.rows(),
            student_logits.cols(),
            teacher_logits.rows(),
            teacher_logits.cols()
        )));
    }
    let z_star = soften(teacher_logits, tau)?;
    let z_hat = soften(student_logits, tau)?;
    let n = student_logits.rows() as f64;

    let mut value = 0.0;
    for r in 0..student_logits.rows() {
        // log ẑ via a stable log-sum-exp on the scaled logits
        let row = student_logits.row(r);
        let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b / tau));
        let lse = m + row.iter().map(|&l| (l / tau - m).exp()).sum::<f64>().ln();
        for (&t, &l) in z_star.row(r).iter().zip(row) {
            value -= t * (l / tau - lse);
        }
    }

    let mut grad = z_hat;
    for r in 0..grad.rows() {
        for (g, &t) in grad.row_mut(r).iter_mut().zip(z_star.row(r)) {
            *g = (*g - t) / (n * tau);
        }
    }
    Ok((value / n, grad))
}

/// Undercomplete autoencoder over the feature space: r(f) = W_dec σ(W_enc f),
/// no biases.
#[derive(Clone, Debug)]
pub struct Autoencoder {
    /// code × feat
    pub w_enc: Matrix,
    /// feat × code
    pub w_dec: Matrix,
}

impl Autoencoder {
    pub fn new(code: usize, feat: usize, seed: u64) -> Result<Self> {
        if code >= feat {
            return Err(Error::InvalidArg(format!(
                "code size {code} must be smaller than feature size {feat}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
        };
        Ok(Autoencoder { w_enc: glorot(code, feat), w_dec: glorot(feat, code) })
    }

    pub fn code_size(&self) -> usize {
        self.w_enc.rows()
    }

    /// σ(W_enc F) for a batch of feature rows.
    pub fn encode(&self, features: &Matrix) -> Matrix {
        let mut u = features.matmul_bt(&self.w_enc);
        for v in u.data_mut() {
            *v = Activation::Sigmoid.apply(*v);
        }
        u
    }

    pub fn reconstruct(&self, features: &Matrix) -> Matrix {
        self.encode(features).matmul_bt(&self.w_dec)
    }

    pub fn is_finite(&self) -> bool {
        self.w_enc.is_finite() && self.w_dec.is_finite()
    }
}

const AE_BATCH: usize = 100;

/// Mean of β‖r(f)−f‖₂ + xent(head(r(f)), y) over the given rows. The
/// reconstruction distance is the plain ℓ2 norm, not its square.
pub fn autoencoder_loss(
    ae: &Autoencoder,
    net: &Network,
    head: usize,
    features: &Matrix,
    labels: &[usize],
    beta: f64,
) -> Result<f64> {
    let r = ae.reconstruct(features);
    let logits = net.head_logits(head, &r)?;
    let ce = Loss::SoftmaxXent.per_sample(&logits, labels)?;
    let n = features.rows() as f64;
    let mut total = 0.0;
    for row in 0..features.rows() {
        let dist: f64 = r
            .row(row)
            .iter()
            .zip(features.row(row))
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        total += beta * dist + ce[row];
    }
    Ok(total / n)
}

/// Trains an autoencoder on the frozen model's features by plain SGD.
/// Objective per sample: β‖r(F*(x)) − F*(x)‖₂ + xent(O*(r(F*(x))), y).
pub fn train_autoencoder(
    net: &Network,
    head: usize,
    data: &LabeledBatch,
    code_size: usize,
    beta: f64,
    epochs: usize,
    lr: f64,
) -> Result<Autoencoder> {
    let features = net.forward_trunk(&data.inputs).features().clone();
    let feat = features.cols();
    let seed = derive_seed(net.seed, &[0xAE, head as u64]);
    let mut ae = Autoencoder::new(code_size, feat, seed)?;
    let head_w = &net
        .heads
        .get(head)
        .ok_or(Error::UnknownHead(head))?
        .w;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for chunk in order.chunks(AE_BATCH.min(order.len().max(1))) {
            let f = features.gather_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let n = f.rows() as f64;

            let codes = ae.encode(&f);
            let r = codes.matmul_bt(&ae.w_dec);
            let logits = net.head_logits(head, &r)?;

            // d(mean loss)/dr: classifier term through the frozen head plus
            // the unsquared reconstruction distance (unit vector toward r)
            let dlogits = Loss::SoftmaxXent.eval(&logits, &labels)?.1;
            let mut dr = dlogits.matmul(head_w);
            for row in 0..f.rows() {
                let dist: f64 = r
                    .row(row)
                    .iter()
                    .zip(f.row(row))
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if dist > 0.0 {
                    let scale = beta / (n * dist);
                    for (d, (&rv, &fv)) in
                        dr.row_mut(row).iter_mut().zip(r.row(row).iter().zip(f.row(row)))
                    {
                        *d += scale * (rv - fv);
                    }
                }
            }

            let dw_dec = dr.matmul_at(&codes); // feat × code
            let mut dcodes = dr.matmul(&ae.w_dec); // n × code
            for (d, &s) in dcodes.data_mut().iter_mut().zip(codes.data()) {
                *d *= s * (1.0 - s);
            }
            let dw_enc = dcodes.matmul_at(&f); // code × feat

            ae.w_dec.scaled_add_assign(&dw_dec, -lr);
            ae.w_enc.scaled_add_assign(&dw_enc, -lr);
            if !ae.is_finite() {
                return Err(Error::NonFinite("autoencoder weights"));
            }
        }
    }
    Ok(ae)
}

/// Fixed targets for one old task, captured on the new task's inputs before
/// the first update.
#[derive(Clone, Debug)]
pub struct TaskRecord {
    pub task_id: usize,
    /// Old head's raw logits under the frozen model (softened at loss time).
    pub targets: Matrix,
    /// σ(W_enc,t F*(X_new)); absent when no autoencoder exists (LwF).
    pub codes: Option<Matrix>,
}

/// Old-head logits on the new inputs, codes omitted.
pub fn record_targets(
    net: &Network,
    old_heads: &[usize],
    inputs: &Matrix,
) -> Result<Vec<TaskRecord>> {
    let features = net.forward_trunk(inputs).features().clone();
    old_heads
        .iter()
        .map(|&t| {
            Ok(TaskRecord { task_id: t, targets: net.head_logits(t, &features)?, codes: None })
        })
        .collect()
}

/// Old-head logits plus autoencoder codes on the new inputs; one autoencoder
/// per old head, in order.
pub fn record(
    net: &Network,
    old_heads: &[usize],
    autoencoders: &[Autoencoder],
    inputs: &Matrix,
) -> Result<Vec<TaskRecord>> {
    if autoencoders.len() != old_heads.len() {
        return Err(Error::InvalidArg(format!(
            "{} autoencoders for {} old tasks",
            autoencoders.len(),
            old_heads.len()
        )));
    }
    let features = net.forward_trunk(inputs).features().clone();
    old_heads
        .iter()
        .zip(autoencoders)
        .map(|(&t, ae)| {
            Ok(TaskRecord {
                task_id: t,
                targets: net.head_logits(t, &features)?,
                codes: Some(ae.encode(&features)),
            })
        })
        .collect()
}

/// (α/2)·mean‖σ(W_enc f) − c*‖² over feature rows, plus its gradient on the
/// features. The autoencoder itself receives no gradient.
pub fn code_penalty(
    ae: &Autoencoder,
    features: &Matrix,
    recorded: &Matrix,
    alpha: f64,
) -> (f64, Matrix) {
    let n = features.rows() as f64;
    let codes = ae.encode(features);
    let mut diff = codes.clone();
    diff.scaled_add_assign(recorded, -1.0);
    let sq: f64 = diff.data().iter().map(|v| v * v).sum();
    let value = alpha / 2.0 * sq / n;

    // through the sigmoid, then back onto the features
    let mut dcodes = diff;
    for (d, &s) in dcodes.data_mut().iter_mut().zip(codes.data()) {
        *d *= alpha / n * s * (1.0 - s);
    }
    (value, dcodes.matmul(&ae.w_enc))
}

/// One old task's slice of the composite objective.
pub struct OldTaskCtx<'a> {
    pub record: &'a TaskRecord,
    /// Required whenever alpha > 0.
    pub autoencoder: Option<&'a Autoencoder>,
    pub alpha: f64,
}

/// Composite objective: new-task loss + distillation toward every recorded
/// old head + code penalties. `rows` maps batch rows into the record
/// matrices. Gradients cover the trunk and all involved heads; autoencoders
/// receive none.
pub fn ebll_loss(
    net: &Network,
    new_head: usize,
    batch: &LabeledBatch,
    rows: &[usize],
    old: &[OldTaskCtx],
    tau: f64,
) -> Result<(f64, GradientSet)> {
    if rows.len() != batch.len() {
        return Err(Error::Shape(format!(
            "{} record rows for a batch of {}",
            rows.len(),
            batch.len()
        )));
    }
    let trace = net.forward_trunk(&batch.inputs);
    let features = trace.features();
    let last = trace.post.len() - 1;

    let new_logits = net.head_logits(new_head, features)?;
    let (mut value, d_new) = Loss::SoftmaxXent.eval(&new_logits, &batch.labels)?;
    let mut head_dlogits = vec![(new_head, d_new)];
    let mut d_feat: Option<Matrix> = None;

    for ctx in old {
        let rec = ctx.record;
        let targets = rec.targets.gather_rows(rows);
        let logits = net.head_logits(rec.task_id, features)?;
        let (dv, dl) = distill_loss(&logits, &targets, tau)?;
        value += dv;
        head_dlogits.push((rec.task_id, dl));

        if ctx.alpha == 0.0 {
            continue;
        }
        let ae = ctx.autoencoder.ok_or_else(|| {
            Error::InvalidArg(format!("task {} has a code penalty but no autoencoder", rec.task_id))
        })?;
        let recorded = rec
            .codes
            .as_ref()
            .ok_or_else(|| {
                Error::InvalidArg(format!("task {} record holds no codes", rec.task_id))
            })?
            .gather_rows(rows);

        let (cv, df) = code_penalty(ae, features, &recorded, ctx.alpha);
        value += cv;
        match &mut d_feat {
            Some(acc) => acc.add_assign(&df),
            None => d_feat = Some(df),
        }
    }

    let post_extra = match d_feat {
        Some(df) => vec![(last, df)],
        None => vec![],
    };
    let grads = net.backprop(&trace, &Seeds { head_dlogits, post_extra })?;
    Ok((value, grads))
}
