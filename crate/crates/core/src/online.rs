//! Task-free online learning. No boundaries are given: the learner watches a
//! window of its own loss, consolidates importance weights when the loss
//! plateaus, and re-arms detection when the loss climbs past the last
//! plateau's level. A small buffer of the hardest samples seen is replayed
//! at every step.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::data::{LabeledBatch, Stream};
use crate::error::{Error, Result};
use crate::importance::{
    add_penalty_grads, ewc_importance, mas_importance, AccumRule, Importance,
};
use crate::matrix::Matrix;
use crate::nn::{loss_and_backward, Loss, Network, ParamMap};
use crate::sequence::{evaluate, ImportanceKind};

/// Ring of the most recent first-step loss values.
#[derive(Clone, Debug)]
pub struct LossWindow {
    cap: usize,
    items: VecDeque<f64>,
}

impl LossWindow {
    pub fn new(cap: usize) -> Self {
        assert!(cap >= 1, "window needs room for at least one value");
        LossWindow { cap, items: VecDeque::with_capacity(cap) }
    }

    pub fn push(&mut self, loss: f64) {
        assert!(loss.is_finite() && loss >= 0.0, "loss {loss} out of domain");
        if self.items.len() == self.cap {
            self.items.pop_front();
        }
        self.items.push_back(loss);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.cap
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}

/// Arithmetic mean and population standard deviation.
pub fn window_stats(w: &LossWindow) -> Result<(f64, f64)> {
    if w.is_empty() {
        return Err(Error::InvalidArg("empty loss window".into()));
    }
    let n = w.items.len() as f64;
    let mean = w.items.iter().sum::<f64>() / n;
    let var = w.items.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Plateau search flag plus the statistics of the last accepted plateau.
#[derive(Clone, Debug)]
pub struct PlateauState {
    pub armed: bool,
    pub mu_old: f64,
    pub sigma_old: f64,
}

impl PlateauState {
    // Search starts armed so the first stable region consolidates.
    pub fn new() -> Self {
        PlateauState { armed: true, mu_old: 0.0, sigma_old: 0.0 }
    }
}

impl Default for PlateauState {
    fn default() -> Self {
        Self::new()
    }
}

/// Armed, window full, and both statistics under their thresholds.
pub fn plateau_detected(
    w: &LossWindow,
    delta_mu: f64,
    delta_sigma: f64,
    state: &PlateauState,
) -> bool {
    if !state.armed || !w.is_full() {
        return false;
    }
    let (mu, sigma) = window_stats(w).expect("full window");
    mu < delta_mu && sigma < delta_sigma
}

/// Window mean above the last plateau's mean plus one standard deviation.
pub fn peak_detected(w: &LossWindow, state: &PlateauState) -> bool {
    match window_stats(w) {
        Ok((mu, _)) => mu > state.mu_old + state.sigma_old,
        Err(_) => false,
    }
}

struct BufferItem {
    input: Vec<f64>,
    label: usize,
    loss: f64,
    seq: u64,
}

/// Fixed-capacity store of the highest-loss samples seen so far.
pub struct HardBuffer {
    capacity: usize,
    items: Vec<BufferItem>,
    next_seq: u64,
}

impl HardBuffer {
    pub fn new(capacity: usize) -> Self {
        HardBuffer { capacity, items: Vec::new(), next_seq: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn losses(&self) -> Vec<f64> {
        self.items.iter().map(|i| i.loss).collect()
    }

    /// Residents and labels as one batch, oldest first; None when empty.
    pub fn batch(&self) -> Option<LabeledBatch> {
        if self.items.is_empty() {
            return None;
        }
        let cols = self.items[0].input.len();
        let inputs = Matrix::from_fn(self.items.len(), cols, |r, c| self.items[r].input[c]);
        let labels = self.items.iter().map(|i| i.label).collect();
        Some(LabeledBatch::new(inputs, labels))
    }

    /// Folds a new batch in: every loss (residents included) is recomputed
    /// under the current parameters, then the highest-loss samples are kept.
    /// Equal losses favor the newer sample.
    pub fn update(&mut self, new_batch: &LabeledBatch, net: &Network, head: usize) -> Result<()> {
        for r in 0..new_batch.len() {
            self.items.push(BufferItem {
                input: new_batch.inputs.row(r).to_vec(),
                label: new_batch.labels[r],
                loss: 0.0,
                seq: self.next_seq,
            });
            self.next_seq += 1;
        }
        if self.capacity == 0 {
            self.items.clear();
            return Ok(());
        }
        if self.items.is_empty() {
            return Ok(());
        }

        let cols = self.items[0].input.len();
        let inputs = Matrix::from_fn(self.items.len(), cols, |r, c| self.items[r].input[c]);
        let labels: Vec<usize> = self.items.iter().map(|i| i.label).collect();
        let logits = net.head_logits(head, net.forward_trunk(&inputs).features())?;
        let losses = Loss::SoftmaxXent.per_sample(&logits, &labels)?;
        for (item, &l) in self.items.iter_mut().zip(&losses) {
            if !l.is_finite() {
                return Err(Error::NonFinite("buffer sample loss"));
            }
            item.loss = l;
        }

        self.items.sort_by(|a, b| {
            b.loss.total_cmp(&a.loss).then_with(|| b.seq.cmp(&a.seq))
        });
        self.items.truncate(self.capacity);
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnlineConfig {
    /// No Ω machinery at all when set to `none`.
    #[serde(default = "default_online_importance")]
    pub importance: ImportanceKind,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Gradient steps per arrival.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_capacity")]
    pub buffer_capacity: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_delta_mu")]
    pub delta_mu: f64,
    #[serde(default = "default_delta_sigma")]
    pub delta_sigma: f64,
    /// Evaluate the test sets every this many arrivals.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_online_importance() -> ImportanceKind {
    ImportanceKind::Mas
}
fn default_lambda() -> f64 {
    100.0
}
fn default_lr() -> f64 {
    1e-4
}
fn default_steps() -> usize {
    2
}
fn default_capacity() -> usize {
    100
}
fn default_window() -> usize {
    5
}
fn default_delta_mu() -> f64 {
    0.3
}
fn default_delta_sigma() -> f64 {
    0.1
}
fn default_eval_every() -> usize {
    50
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        if self.delta_mu <= 0.0 || self.delta_sigma <= 0.0 {
            return Err(Error::Config("plateau thresholds must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything the stream learner carries between arrivals.
pub struct OnlineLearner {
    pub buffer: HardBuffer,
    pub window: LossWindow,
    pub plateau: PlateauState,
    pub omega: Importance,
    pub anchor: ParamMap,
    pub omega_updates: u64,
    head: usize,
}

pub struct StepReport {
    /// Combined recent+buffer mean data loss pushed into the window.
    pub window_push: f64,
    pub plateau_fired: bool,
    pub peak_fired: bool,
}

impl OnlineLearner {
    pub fn new(net: &Network, head: usize, cfg: &OnlineConfig) -> Self {
        OnlineLearner {
            buffer: HardBuffer::new(cfg.buffer_capacity),
            window: LossWindow::new(cfg.window),
            plateau: PlateauState::new(),
            omega: Importance::zeros(net, Some(head)),
            anchor: net.snapshot(Some(head)),
            omega_updates: 0,
            head,
        }
    }
}

/// One arrival: S gradient steps on the recent batch, the buffer, and the
/// consolidation penalty; then plateau/peak handling; then the buffer update.
pub fn online_step(
    learner: &mut OnlineLearner,
    net: &mut Network,
    recent: &LabeledBatch,
    cfg: &OnlineConfig,
) -> Result<StepReport> {
    if recent.is_empty() {
        return Err(Error::InvalidArg("empty arrival".into()));
    }
    let head = learner.head;
    let use_omega = cfg.importance != ImportanceKind::None;
    let buffer_batch = learner.buffer.batch();
    let mut window_push = 0.0;

    for s in 0..cfg.steps {
        let (loss_recent, mut grads) = loss_and_backward(
            net,
            head,
            &recent.inputs,
            &recent.labels,
            Loss::SoftmaxXent,
            vec![],
        )?;
        let mut combined = loss_recent;
        if let Some(buf) = &buffer_batch {
            let (loss_buf, g) =
                loss_and_backward(net, head, &buf.inputs, &buf.labels, Loss::SoftmaxXent, vec![])?;
            grads.add_assign(&g);
            let (nr, nb) = (recent.len() as f64, buf.len() as f64);
            combined = (nr * loss_recent + nb * loss_buf) / (nr + nb);
        }
        if s == 0 {
            learner.window.push(combined);
            window_push = combined;
        }
        if use_omega {
            add_penalty_grads(&mut grads, net, &learner.omega.map, &learner.anchor, cfg.lambda);
        }
        net.sgd_step(&grads, cfg.lr)?;
    }

    let mut plateau_fired = false;
    let mut peak_fired = false;
    if use_omega {
        if plateau_detected(&learner.window, cfg.delta_mu, cfg.delta_sigma, &learner.plateau) {
            plateau_fired = true;
            // importance comes from the hard buffer; a still-empty buffer
            // falls back to the samples at hand
            let est;
            let source = match &buffer_batch {
                Some(buf) => buf,
                None => {
                    est = recent.clone();
                    &est
                }
            };
            let map = match cfg.importance {
                ImportanceKind::Mas => mas_importance(net, head, &source.inputs, Some(head))?,
                ImportanceKind::Ewc => ewc_importance(net, head, source, Some(head))?,
                ImportanceKind::None => unreachable!(),
            };
            learner.omega.accumulate(&map, AccumRule::Cma)?;
            learner.anchor = net.snapshot(Some(head));
            learner.omega_updates += 1;
            let (mu, sigma) = window_stats(&learner.window)?;
            learner.plateau.mu_old = mu;
            learner.plateau.sigma_old = sigma;
            learner.window.clear();
            learner.plateau.armed = false;
        }
        if peak_detected(&learner.window, &learner.plateau) {
            peak_fired = true;
            learner.plateau.armed = true;
        }
    }

    learner.buffer.update(recent, net, head)?;
    Ok(StepReport { window_push, plateau_fired, peak_fired })
}

/// One evaluation of one held-out phase test set.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    /// Arrivals consumed so far.
    pub step: usize,
    pub phase: usize,
    pub accuracy: f64,
    /// Window push of the arrival that triggered this evaluation.
    pub loss_mean: f64,
    pub omega_updates: u64,
}

/// Feeds the stream through the learner, evaluating every phase test set
/// every `eval_every` arrivals and at the end.
pub fn run_stream(
    stream: &Stream,
    tests: &[LabeledBatch],
    net: &mut Network,
    head: usize,
    cfg: &OnlineConfig,
) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    let mut learner = OnlineLearner::new(net, head, cfg);
    let mut trace = Vec::new();
    let total = stream.arrivals.len();
    for (i, (batch, _)) in stream.arrivals.iter().enumerate() {
        let report = online_step(&mut learner, net, batch, cfg)?;
        let step = i + 1;
        if step % cfg.eval_every == 0 || step == total {
            for (p, test) in tests.iter().enumerate() {
                trace.push(TraceRow {
                    step,
                    phase: p,
                    accuracy: evaluate(net, head, test)?,
                    loss_mean: report.window_push,
                    omega_updates: learner.omega_updates,
                });
            }
        }
    }
    Ok(trace)
}
