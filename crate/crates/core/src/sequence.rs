//! Task-incremental training: one task at a time, each consolidated into the
//! network before the next arrives. All configured terms join a single
//! objective per batch, so every step is one forward and one backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::data::{LabeledBatch, TaskDataset};
use crate::derive_seed;
use crate::distill::{
    code_penalty, distill_loss, record, record_targets, train_autoencoder, Autoencoder,
    DistillConfig, DistillMode, TaskRecord,
};
use crate::error::{Error, Result};
use crate::importance::{
    add_penalty_grads, ewc_importance, mas_importance, neuron_importance, penalty_value,
    AccumRule, Importance, NeuronMode,
};
use crate::matrix::Matrix;
use crate::nn::{Loss, Network, ParamMap, Seeds};
use crate::regularizers::{activation_penalty, RegConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceKind {
    None,
    Mas,
    Ewc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    #[serde(default = "default_importance")]
    pub importance: ImportanceKind,
    /// Weight of the quadratic consolidation penalty.
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub rep_reg: Option<RegConfig>,
    #[serde(default)]
    pub distill: Option<DistillConfig>,
    /// All tasks share head 0 instead of one head per task.
    #[serde(default)]
    pub shared_head: bool,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_importance() -> ImportanceKind {
    ImportanceKind::None
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if let Some(reg) = &self.rep_reg {
            if reg.lambda < 0.0 || reg.sigma_scale <= 0.0 {
                return Err(Error::Config(
                    "rep_reg lambda must be nonnegative and sigma_scale positive".into(),
                ));
            }
            if !reg.kind.acts_on_activations() {
                // parameter norms ride the same dispatch slot
            }
        }
        if let Some(d) = &self.distill {
            d.validate()?;
        }
        Ok(())
    }

    fn head_for(&self, task: &TaskDataset) -> usize {
        if self.shared_head {
            0
        } else {
            task.task_id
        }
    }

    fn cover_head(&self) -> Option<usize> {
        if self.shared_head {
            Some(0)
        } else {
            None
        }
    }

    fn neuron_mode(&self) -> NeuronMode {
        match self.importance {
            ImportanceKind::Ewc => NeuronMode::LossGrad,
            _ => NeuronMode::FunctionGrad,
        }
    }
}

/// Accuracy of task t's test set after finishing training stage s, for
/// every s ≥ t that has been evaluated.
#[derive(Clone, Debug)]
pub struct MetricsMatrix {
    acc: Vec<Vec<Option<f64>>>,
}

impl MetricsMatrix {
    pub fn new(tasks: usize) -> Self {
        MetricsMatrix { acc: vec![vec![None; tasks]; tasks] }
    }

    pub fn tasks(&self) -> usize {
        self.acc.len()
    }

    pub fn set(&mut self, task: usize, stage: usize, accuracy: f64) {
        assert!(stage >= task, "accuracy of task {task} before its own stage {stage}");
        assert!((0.0..=1.0).contains(&accuracy));
        self.acc[task][stage] = Some(accuracy);
    }

    pub fn get(&self, task: usize, stage: usize) -> Option<f64> {
        self.acc[task][stage]
    }

    /// Mean final-stage accuracy over all tasks; None until every task has a
    /// final-stage entry.
    pub fn avg_accuracy(&self) -> Option<f64> {
        let last = self.acc.len() - 1;
        let mut total = 0.0;
        for row in &self.acc {
            total += row[last]?;
        }
        Some(total / self.acc.len() as f64)
    }

    /// A[t][t] − A[t][last] for every task before the final one. The final
    /// task's forgetting is identically zero, so it is omitted. Entries are
    /// None when A[t][t] was never measured (joint training).
    pub fn forgetting(&self) -> Vec<Option<f64>> {
        let last = self.acc.len() - 1;
        (0..last)
            .map(|t| match (self.acc[t][t], self.acc[t][last]) {
                (Some(own), Some(fin)) => Some(own - fin),
                _ => None,
            })
            .collect()
    }

    /// No entry above the diagonal.
    pub fn is_lower_triangular(&self) -> bool {
        self.acc
            .iter()
            .enumerate()
            .all(|(t, row)| row.iter().take(t).all(|v| v.is_none()))
    }
}

/// Argmax-logit accuracy on a test set.
pub fn evaluate(net: &Network, head: usize, test: &LabeledBatch) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArg("empty test set".into()));
    }
    const CHUNK: usize = 1024;
    let mut correct = 0usize;
    let mut start = 0;
    while start < test.len() {
        let end = (start + CHUNK).min(test.len());
        let idx: Vec<usize> = (start..end).collect();
        let x = test.inputs.gather_rows(&idx);
        let logits = net.head_logits(head, net.forward_trunk(&x).features())?;
        for (r, &label) in idx.iter().map(|&i| &test.labels[i]).enumerate() {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / test.len() as f64)
}

// Knowledge carried across task boundaries.
struct Consolidated {
    omega: Importance,
    anchor: Option<ParamMap>,
    /// Per trunk layer, running max over tasks.
    alpha: Vec<Vec<f64>>,
    autoencoders: Vec<Autoencoder>,
}

const SHUFFLE_TAG: u64 = 0x5e9;

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    order
}

/// Runs the task list in order, consolidating at each boundary per the
/// configured method, and returns the accuracy matrix.
pub fn run_sequence(
    tasks: &[TaskDataset],
    net: &mut Network,
    method: &MethodConfig,
) -> Result<MetricsMatrix> {
    method.validate()?;
    if tasks.is_empty() {
        return Err(Error::InvalidArg("no tasks".into()));
    }
    for task in tasks {
        let head = method.head_for(task);
        let dims = net.head(head)?.out_dim();
        if dims != task.num_classes {
            return Err(Error::Shape(format!(
                "task {} has {} classes but head {head} outputs {dims}",
                task.task_id, task.num_classes
            )));
        }
        if task.train.is_empty() || task.test.is_empty() {
            return Err(Error::InvalidArg(format!("task {} has empty data", task.task_id)));
        }
    }

    let mut metrics = MetricsMatrix::new(tasks.len());
    let mut state = Consolidated {
        omega: Importance::zeros(net, method.cover_head()),
        anchor: None,
        alpha: net.trunk.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        autoencoders: Vec::new(),
    };

    for (stage, task) in tasks.iter().enumerate() {
        let head = method.head_for(task);

        // fixed targets for all old tasks, captured before the first update
        let records: Vec<TaskRecord> = match &method.distill {
            Some(cfg) if stage > 0 => {
                let old: Vec<usize> =
                    tasks[..stage].iter().map(|t| method.head_for(t)).collect();
                match cfg.mode {
                    DistillMode::Lwf => record_targets(net, &old, &task.train.inputs)?,
                    DistillMode::Ebll => {
                        record(net, &old, &state.autoencoders, &task.train.inputs)?
                    }
                }
            }
            _ => Vec::new(),
        };

        for epoch in 0..method.epochs {
            let order = shuffled(
                task.train.len(),
                derive_seed(method.seed, &[SHUFFLE_TAG, stage as u64, epoch as u64]),
            );
            for rows in order.chunks(method.batch_size) {
                let batch = task.train.gather(rows);
                train_step(net, head, &batch, rows, method, &records, &state)?;
            }
        }

        consolidate(net, task, head, method, &mut state)?;

        for (t, seen) in tasks.iter().take(stage + 1).enumerate() {
            metrics.set(t, stage, evaluate(net, method.head_for(seen), &seen.test)?);
        }
    }
    Ok(metrics)
}

// One SGD step on the full objective. Returns the objective value before the
// step for callers that trace it.
fn train_step(
    net: &mut Network,
    head: usize,
    batch: &LabeledBatch,
    rows: &[usize],
    method: &MethodConfig,
    records: &[TaskRecord],
    state: &Consolidated,
) -> Result<f64> {
    let trace = net.forward_trunk(&batch.inputs);
    let last = trace.post.len() - 1;
    let logits = net.head_logits(head, trace.features())?;
    let (mut value, d_data) = Loss::SoftmaxXent.eval(&logits, &batch.labels)?;
    let mut head_dlogits = vec![(head, d_data)];
    let mut post_extra: Vec<(usize, Matrix)> = Vec::new();

    if let Some(reg) = &method.rep_reg {
        if reg.kind.acts_on_activations() {
            for (l, h) in trace.post.iter().enumerate() {
                let alpha =
                    if reg.kind.uses_neuron_importance() { Some(state.alpha[l].as_slice()) } else { None };
                let (v, mut dh) = activation_penalty(reg, h, alpha)?;
                value += reg.lambda * v;
                dh.scale_assign(reg.lambda);
                post_extra.push((l, dh));
            }
        }
    }

    if let Some(cfg) = &method.distill {
        for (i, rec) in records.iter().enumerate() {
            let targets = rec.targets.gather_rows(rows);
            let old_logits = net.head_logits(rec.task_id, trace.features())?;
            let (dv, dl) = distill_loss(&old_logits, &targets, cfg.temperature)?;
            value += dv;
            head_dlogits.push((rec.task_id, dl));

            if cfg.mode == DistillMode::Ebll && cfg.alpha > 0.0 {
                let recorded = rec
                    .codes
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArg("record holds no codes".into()))?
                    .gather_rows(rows);
                let (cv, df) =
                    code_penalty(&state.autoencoders[i], trace.features(), &recorded, cfg.alpha);
                value += cv;
                post_extra.push((last, df));
            }
        }
    }

    let mut grads = net.backprop(&trace, &Seeds { head_dlogits, post_extra })?;

    if let Some(reg) = &method.rep_reg {
        if !reg.kind.acts_on_activations() {
            let (v, pg) = match reg.kind {
                crate::regularizers::RegKind::L1Param => crate::regularizers::l1_param(net, head),
                crate::regularizers::RegKind::L2Wd => crate::regularizers::l2_wd(net, head),
                _ => unreachable!(),
            };
            value += reg.lambda * v;
            let mut pg_scaled = pg;
            scale_grads(&mut pg_scaled, reg.lambda);
            grads.add_assign(&pg_scaled);
        }
    }

    if let Some(anchor) = &state.anchor {
        value += penalty_value(net, &state.omega.map, anchor, method.lambda);
        add_penalty_grads(&mut grads, net, &state.omega.map, anchor, method.lambda);
    }

    net.sgd_step(&grads, method.lr)?;
    Ok(value)
}

fn scale_grads(grads: &mut crate::nn::GradientSet, s: f64) {
    for block in grads.trunk.iter_mut().chain(grads.heads.iter_mut().flatten()) {
        block.w.scale_assign(s);
        for b in &mut block.b {
            *b *= s;
        }
    }
}

fn consolidate(
    net: &Network,
    task: &TaskDataset,
    head: usize,
    method: &MethodConfig,
    state: &mut Consolidated,
) -> Result<()> {
    match method.importance {
        ImportanceKind::Mas => {
            let map = mas_importance(net, head, &task.train.inputs, method.cover_head())?;
            state.omega.accumulate(&map, AccumRule::Cma)?;
            state.anchor = Some(net.snapshot(method.cover_head()));
        }
        ImportanceKind::Ewc => {
            let map = ewc_importance(net, head, &task.train, method.cover_head())?;
            state.omega.accumulate(&map, AccumRule::Cma)?;
            state.anchor = Some(net.snapshot(method.cover_head()));
        }
        ImportanceKind::None => {}
    }

    if method.rep_reg.as_ref().is_some_and(|r| r.kind.uses_neuron_importance()) {
        let fresh = neuron_importance(net, head, &task.train, method.neuron_mode())?;
        for (acc, new) in state.alpha.iter_mut().zip(&fresh) {
            for (a, &n) in acc.iter_mut().zip(new) {
                *a = a.max(n);
            }
        }
    }

    if let Some(cfg) = &method.distill {
        if cfg.mode == DistillMode::Ebll {
            state.autoencoders.push(train_autoencoder(
                net,
                head,
                &task.train,
                cfg.code_size,
                cfg.beta,
                cfg.ae_epochs,
                cfg.ae_lr,
            )?);
        }
    }
    Ok(())
}

/// Upper-bound baseline: plain supervised training on the shuffled union of
/// all tasks, batches grouped per task head. Only epochs, lr, batch_size and
/// seed are read from the config; only the final-stage metrics column is
/// filled.
pub fn joint_train(
    tasks: &[TaskDataset],
    net: &mut Network,
    method: &MethodConfig,
) -> Result<MetricsMatrix> {
    method.validate()?;
    if tasks.is_empty() {
        return Err(Error::InvalidArg("no tasks".into()));
    }
    let union: Vec<(usize, usize)> = tasks
        .iter()
        .enumerate()
        .flat_map(|(t, task)| (0..task.train.len()).map(move |r| (t, r)))
        .collect();

    for epoch in 0..method.epochs {
        let order = shuffled(
            union.len(),
            derive_seed(method.seed, &[SHUFFLE_TAG, 0, epoch as u64]),
        );
        for chunk in order.chunks(method.batch_size) {
            let mut by_task: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &o in chunk {
                let (t, r) = union[o];
                by_task.entry(t).or_default().push(r);
            }
            let mut grads: Option<crate::nn::GradientSet> = None;
            for (t, rows) in by_task {
                let head = method.head_for(&tasks[t]);
                let sub = tasks[t].train.gather(&rows);
                let trace = net.forward_trunk(&sub.inputs);
                let logits = net.head_logits(head, trace.features())?;
                let (_, mut d) = Loss::SoftmaxXent.eval(&logits, &sub.labels)?;
                d.scale_assign(rows.len() as f64 / chunk.len() as f64);
                let g = net.backprop(
                    &trace,
                    &Seeds { head_dlogits: vec![(head, d)], post_extra: vec![] },
                )?;
                match &mut grads {
                    Some(acc) => acc.add_assign(&g),
                    None => grads = Some(g),
                }
            }
            net.sgd_step(&grads.expect("nonempty chunk"), method.lr)?;
        }
    }

    let mut metrics = MetricsMatrix::new(tasks.len());
    let last = tasks.len() - 1;
    for (t, task) in tasks.iter().enumerate() {
        metrics.set(t, last, evaluate(net, method.head_for(task), &task.test)?);
    }
    Ok(metrics)
}
