//! Reconstruction pre-training, classification fine-tuning and evaluation.
//!
//! Timesteps are always visited in chronological order and the GRU state
//! starts from zero at the beginning of every epoch and of every evaluation
//! pass. Evaluation runs the whole chronology, so test timesteps continue
//! the hidden-state chain left by the last train timestep.

mod run_log;
mod metrics;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape, Tensor};
use crate::batching::{batch_graph, BatchingConfig, TimestepBatches};
use crate::error::{Error, Result};
use crate::graph::{GraphSnapshot, GraphView, SplitConfig, Standardizer, TemporalGraph, TimestepRange};
use crate::model::{AdamState, Checkpoint, DynBerg, ForwardCtx};

pub use run_log::{epoch_window_csv, epoch_window_table, render_epoch_window_table, LogRecord, RunLog};
pub use metrics::{
    aggregate_csv, aggregate_seeds, render_aggregate, shutdown_windows, AggregateRow, Confusion, MeanStd,
    MetricsReport, TimestepMetrics, Window, WindowMetrics,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bptt {
    /// The hidden state crosses timesteps as a value; one optimizer step per
    /// timestep.
    #[default]
    Detached,
    /// One graph over the whole chronology; one optimizer step per epoch.
    Full,
}

impl std::str::FromStr for Bptt {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "detached" => Ok(Bptt::Detached),
            "full" => Ok(Bptt::Full),
            _ => Err(Error::contract(format!("bptt must be detached or full, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// `[illicit, licit]`.
    pub class_weights: [f64; 2],
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub bptt: Bptt,
    pub ablation_no_gru: bool,
    pub eval_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub shutdown_boundary: usize,
    /// Evaluation windows; empty means the defaults for the test range.
    pub windows: Vec<Window>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 200,
            lr: 1e-3,
            seed: 0,
            class_weights: [0.7, 0.3],
            pretrain_epochs: 50,
            pretrain_lr: 1e-3,
            bptt: Bptt::Detached,
            ablation_no_gru: false,
            eval_every: 20,
            beta1: adam.beta1,
            beta2: adam.beta2,
            adam_eps: adam.eps,
            shutdown_boundary: 43,
            windows: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.lr > 0.0 && self.pretrain_lr > 0.0, "learning rates must be positive"),
            (self.class_weights.iter().all(|&w| w > 0.0), "class weights must be positive"),
            (self.eval_every >= 1, "eval_every must be >= 1"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::contract(msg));
            }
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn windows_for(&self, test: TimestepRange) -> Vec<Window> {
        if self.windows.is_empty() {
            Window::defaults(test, self.shutdown_boundary)
        } else {
            self.windows.clone()
        }
    }
}

/// A standardized graph, its subgraph batches and its split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: TemporalGraph,
    pub batches: Vec<TimestepBatches>,
    pub split: SplitConfig,
}

impl Dataset {
    pub fn new(graph: TemporalGraph, batches: Vec<TimestepBatches>, split: SplitConfig) -> Result<Self> {
        split.validate(graph.num_timesteps())?;
        if batches.len() != graph.num_timesteps()
            || batches
                .iter()
                .zip(graph.snapshots())
                .any(|(b, s)| b.timestep != s.timestep || b.batches.len() != s.num_nodes())
        {
            return Err(Error::Invariant("batches do not match the graph".into()));
        }
        Ok(Self { graph, batches, split })
    }

    /// Z-scores features with statistics of the train view, then batches
    /// every snapshot.
    pub fn prepare(raw: &TemporalGraph, split: SplitConfig, batching: &BatchingConfig, standardize: bool) -> Result<Self> {
        split.validate(raw.num_timesteps())?;
        let graph = if standardize {
            Standardizer::fit(&GraphView::new(raw, split.train)?)?.apply(raw)
        } else {
            raw.clone()
        };
        let batches = batch_graph(&graph, batching)?;
        Self::new(graph, batches, split)
    }

    pub fn k(&self) -> Option<usize> {
        self.batches
            .iter()
            .flat_map(|t| t.batches.first())
            .next()
            .map(|b| b.size() - 1)
    }

    fn step(&self, p: usize) -> (&GraphSnapshot, &TimestepBatches) {
        (&self.graph.snapshots()[p - 1], &self.batches[p - 1])
    }

    fn last_step(&self) -> usize {
        self.split.train.end.max(self.split.test.end)
    }
}

/// Seed for the dropout masks of one forward pass.
fn pass_seed(seed: u64, phase: u64, epoch: usize, timestep: usize) -> u64 {
    // splitmix64 finalizer over the packed coordinates
    let mut z = seed
        ^ phase.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ (epoch as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
        ^ (timestep as u64).wrapping_mul(0x94d0_49bb_1331_11eb);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const PHASE_PRETRAIN: u64 = 1;
const PHASE_FINETUNE: u64 = 2;

/// Indices, class targets and weights of the labeled nodes of a snapshot.
fn labeled(snapshot: &GraphSnapshot, class_weights: [f64; 2]) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let mut idx = Vec::new();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    for (i, l) in snapshot.labels.iter().enumerate() {
        if let Some(c) = l.class_index() {
            idx.push(i);
            targets.push(c);
            weights.push(class_weights[c]);
        }
    }
    (idx, targets, weights)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Reconstruction loss over all train nodes before the first update.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean per-timestep training loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Reconstruction loss `l₁` over every node of the train timesteps, in
/// evaluation mode.
pub fn reconstruction_l1(model: &DynBerg, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for p in data.split.train.iter() {
        let (snap, tb) = data.step(p);
        let mut tape = Tape::inference();
        let l = reconstruction_pass(model, &mut tape, snap, tb, &mut ForwardCtx::eval())?;
        total += tape.scalar_value(l) * snap.num_nodes() as f64;
        count += snap.num_nodes();
    }
    if count == 0 {
        return Err(Error::contract("empty train view"));
    }
    Ok(total / count as f64)
}

fn reconstruction_pass(
    model: &DynBerg,
    tape: &mut Tape,
    snap: &GraphSnapshot,
    tb: &TimestepBatches,
    ctx: &mut ForwardCtx,
) -> Result<crate::autodiff::Var> {
    let zs = tb
        .batches
        .iter()
        .map(|b| Ok(model.encode_batch(tape, snap, b, ctx)?.z))
        .collect::<Result<Vec<_>>>()?;
    let z = tape.concat_rows(&zs)?;
    let x_hat = model.reconstruct(tape, z)?;
    let x = tape.constant_matrix(snap.num_nodes(), snap.feature_dim(), snap.features.data().to_vec())?;
    DynBerg::reconstruction_loss(tape, x, x_hat)
}

/// Minimizes the reconstruction loss over all train nodes, labeled or not.
/// Only the embedding, transformer layers and reconstruction head change.
pub fn pretrain(model: &mut DynBerg, data: &Dataset, cfg: &TrainConfig) -> Result<PretrainReport> {
    cfg.validate()?;
    if data.split.train.iter().all(|p| data.step(p).0.num_nodes() == 0) {
        return Err(Error::contract("empty train view"));
    }
    let initial_loss = reconstruction_l1(model, data)?;
    let mut adam = Adam::new(cfg.adam(cfg.pretrain_lr), model.store(), model.encoder_param_ids())?;
    let mut epoch_losses = Vec::with_capacity(cfg.pretrain_epochs);
    for epoch in 1..=cfg.pretrain_epochs {
        let mut sum = 0.0;
        let mut steps = 0usize;
        for p in data.split.train.iter() {
            let (snap, tb) = data.step(p);
            if snap.num_nodes() == 0 {
                continue;
            }
            let mut ctx = ForwardCtx::train(pass_seed(cfg.seed, PHASE_PRETRAIN, epoch, p));
            let mut tape = Tape::new();
            let loss = reconstruction_pass(model, &mut tape, snap, tb, &mut ctx)?;
            sum += tape.scalar_value(loss);
            steps += 1;
            tape.backward(loss, model.store_mut())?;
            adam.step(model.store_mut())?;
        }
        let mean = sum / steps as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric(format!("pretrain loss diverged at epoch {epoch}")));
        }
        log::debug!("pretrain epoch {epoch}: l1 {mean:.6}");
        epoch_losses.push(mean);
    }
    model.store_mut().clear_grads();
    let final_loss = if cfg.pretrain_epochs == 0 {
        initial_loss
    } else {
        reconstruction_l1(model, data)?
    };
    Ok(PretrainReport {
        initial_loss,
        final_loss,
        epoch_losses,
    })
}

/// Train and test metrics from one evaluation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub train: MetricsReport,
    pub test: MetricsReport,
    /// Hidden state after the last timestep.
    pub final_hidden: Vec<f64>,
}

/// Runs `steps` in order from hidden state `hs`, scoring labeled nodes.
/// Returns the report and the final hidden state.
pub fn evaluate_view(
    model: &DynBerg,
    data: &Dataset,
    steps: TimestepRange,
    hs: &[f64],
    class_weights: [f64; 2],
    windows: &[Window],
) -> Result<(MetricsReport, Vec<f64>)> {
    let mut hs = hs.to_vec();
    let mut per = Vec::new();
    let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
    for p in steps.iter() {
        let (snap, tb) = data.step(p);
        let (m, next, ls, ws) = eval_step(model, snap, tb, &hs, class_weights)?;
        hs = next;
        loss_sum += ls;
        weight_sum += ws;
        per.push(m);
    }
    Ok((MetricsReport::new(per, loss_sum, weight_sum, windows), hs))
}

fn eval_step(
    model: &DynBerg,
    snap: &GraphSnapshot,
    tb: &TimestepBatches,
    hs: &[f64],
    class_weights: [f64; 2],
) -> Result<(TimestepMetrics, Vec<f64>, f64, f64)> {
    let mut tape = Tape::inference();
    let hs_var = tape.constant(&Tensor::new(vec![1, hs.len()], hs.to_vec())?);
    let out = model.forward_timestep(&mut tape, snap, &tb.batches, hs_var, &mut ForwardCtx::eval(), true)?;
    let logits = tape.value(out.logits).to_vec();
    let (idx, targets, weights) = labeled(snap, class_weights);
    let mut confusion = Confusion::default();
    for (&i, &t) in idx.iter().zip(&targets) {
        confusion.record(t == 0, logits[2 * i] > logits[2 * i + 1]);
    }
    let (mut ls, mut ws) = (0.0, 0.0);
    if !idx.is_empty() {
        let sel = tape.select_rows(out.logits, &idx)?;
        let ce = tape.softmax_cross_entropy(sel, &targets, &weights)?;
        ws = weights.iter().sum();
        ls = tape.scalar_value(ce) * ws;
    }
    let m = TimestepMetrics {
        timestep: snap.timestep,
        confusion,
        illicit_f1: confusion.illicit_f1(),
        micro_f1: confusion.micro_f1(),
        loss: (ws > 0.0).then(|| ls / ws),
    };
    Ok((m, tape.value(out.hs).to_vec(), ls, ws))
}

/// Evaluation over the whole chronology from `HS_0 = 0`; train and test
/// timesteps are reported separately.
pub fn evaluate(model: &DynBerg, data: &Dataset, cfg: &TrainConfig) -> Result<Evaluation> {
    let first = data.split.train.start.min(data.split.test.start);
    let hs0 = vec![0.0; model.config().d_h];
    let all = TimestepRange::new(first, data.last_step())?;
    let (report, final_hidden) = evaluate_view(model, data, all, &hs0, cfg.class_weights, &[])?;
    let pick = |range: TimestepRange, windows: &[Window]| {
        let per: Vec<TimestepMetrics> = report
            .per_timestep
            .iter()
            .filter(|t| range.contains(t.timestep))
            .cloned()
            .collect();
        let ws: f64 = per.iter().filter(|t| t.loss.is_some()).map(|t| weight_of(data, t.timestep, cfg)).sum();
        let ls: f64 = per
            .iter()
            .filter_map(|t| t.loss.map(|l| l * weight_of(data, t.timestep, cfg)))
            .sum();
        MetricsReport::new(per, ls, ws, windows)
    };
    Ok(Evaluation {
        train: pick(data.split.train, &[]),
        test: pick(data.split.test, &cfg.windows_for(data.split.test)),
        final_hidden,
    })
}

fn weight_of(data: &Dataset, p: usize, cfg: &TrainConfig) -> f64 {
    labeled(data.step(p).0, cfg.class_weights).2.iter().sum()
}

/// Resumable fine-tuning state.
pub struct FineTuner<'d> {
    data: &'d Dataset,
    cfg: TrainConfig,
    model: DynBerg,
    adam: Adam,
    epoch: usize,
    log: RunLog,
    train_losses: Vec<f64>,
    last_eval: Option<Evaluation>,
}

impl<'d> FineTuner<'d> {
    pub fn new(mut model: DynBerg, data: &'d Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if data.split.train.iter().all(|p| data.step(p).0.labels.iter().all(|l| !l.is_labeled())) {
            return Err(Error::contract("no labeled nodes in the train view"));
        }
        if cfg.ablation_no_gru {
            model.set_ablation();
        }
        model.store_mut().clear_grads();
        let adam = Adam::new(cfg.adam(cfg.lr), model.store(), model.classifier_param_ids())?;
        Ok(Self {
            data,
            log: RunLog::new(cfg.seed),
            cfg,
            model,
            adam,
            epoch: 0,
            train_losses: Vec::new(),
            last_eval: None,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn model(&self) -> &DynBerg {
        &self.model
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Mean training loss of every completed epoch.
    pub fn train_losses(&self) -> &[f64] {
        &self.train_losses
    }

    pub fn last_evaluation(&self) -> Option<&Evaluation> {
        self.last_eval.as_ref()
    }

    /// One pass over the train timesteps; evaluates and logs on
    /// `eval_every` multiples and on the final epoch.
    pub fn run_epoch(&mut self) -> Result<f64> {
        self.epoch += 1;
        let loss = match self.cfg.bptt {
            Bptt::Detached => self.epoch_detached()?,
            Bptt::Full => self.epoch_full()?,
        };
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {}", self.epoch)));
        }
        self.train_losses.push(loss);
        log::debug!("epoch {}: train loss {loss:.6}", self.epoch);
        if self.epoch.is_multiple_of(self.cfg.eval_every) || self.epoch == self.cfg.epochs {
            self.evaluate_and_log(loss)?;
        }
        Ok(loss)
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self) -> Result<()> {
        while self.epoch < self.cfg.epochs {
            self.run_epoch()?;
        }
        Ok(())
    }

    fn timestep_loss(
        &self,
        tape: &mut Tape,
        snap: &GraphSnapshot,
        logits: crate::autodiff::Var,
    ) -> Result<Option<crate::autodiff::Var>> {
        let (idx, targets, weights) = labeled(snap, self.cfg.class_weights);
        if idx.is_empty() {
            return Ok(None);
        }
        let sel = tape.select_rows(logits, &idx)?;
        Ok(Some(tape.softmax_cross_entropy(sel, &targets, &weights)?))
    }

    fn epoch_detached(&mut self) -> Result<f64> {
        let mut hs = vec![0.0; self.model.config().d_h];
        let (mut sum, mut n) = (0.0, 0usize);
        for p in self.data.split.train.iter() {
            let (snap, tb) = self.data.step(p);
            let mut tape = Tape::new();
            let hs_var = tape.constant(&Tensor::new(vec![1, hs.len()], hs.clone())?);
            let mut ctx = ForwardCtx::train(pass_seed(self.cfg.seed, PHASE_FINETUNE, self.epoch, p));
            let out = self.model.forward_timestep(&mut tape, snap, &tb.batches, hs_var, &mut ctx, true)?;
            if let Some(loss) = self.timestep_loss(&mut tape, snap, out.logits)? {
                sum += tape.scalar_value(loss);
                n += 1;
                tape.backward(loss, self.model.store_mut())?;
                self.adam.step(self.model.store_mut())?;
            }
            hs = tape.value(out.hs).to_vec();
        }
        Ok(sum / n.max(1) as f64)
    }

    fn epoch_full(&mut self) -> Result<f64> {
        let mut tape = Tape::new();
        let mut hs = self.model.initial_hidden(&mut tape);
        let mut losses = Vec::new();
        for p in self.data.split.train.iter() {
            let (snap, tb) = self.data.step(p);
            let mut ctx = ForwardCtx::train(pass_seed(self.cfg.seed, PHASE_FINETUNE, self.epoch, p));
            let out = self.model.forward_timestep(&mut tape, snap, &tb.batches, hs, &mut ctx, true)?;
            hs = out.hs;
            if let Some(l) = self.timestep_loss(&mut tape, snap, out.logits)? {
                losses.push(l);
            }
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = tape.add(total, l)?;
        }
        let mean = tape.scale(total, 1.0 / losses.len() as f64);
        let value = tape.scalar_value(mean);
        tape.backward(mean, self.model.store_mut())?;
        self.adam.step(self.model.store_mut())?;
        Ok(value)
    }

    fn evaluate_and_log(&mut self, train_loss: f64) -> Result<()> {
        let ev = evaluate(&self.model, self.data, &self.cfg)?;
        let e = self.epoch;
        self.log.push(LogRecord {
            epoch: e,
            split: "train".into(),
            timestep: None,
            loss: Some(train_loss),
            illicit_f1: Some(ev.train.illicit_f1),
            micro_f1: Some(ev.train.micro_f1),
        });
        self.log.push(LogRecord {
            epoch: e,
            split: "test".into(),
            timestep: None,
            loss: ev.test.loss,
            illicit_f1: Some(ev.test.illicit_f1),
            micro_f1: Some(ev.test.micro_f1),
        });
        for t in &ev.test.per_timestep {
            self.log.push(LogRecord {
                epoch: e,
                split: "test".into(),
                timestep: Some(t.timestep),
                loss: t.loss,
                illicit_f1: Some(t.illicit_f1),
                micro_f1: Some(t.micro_f1),
            });
        }
        log::info!(
            "epoch {e}: train loss {train_loss:.4}, train illicit F1 {:.4}, test illicit F1 {:.4}",
            ev.train.illicit_f1,
            ev.test.illicit_f1
        );
        self.last_eval = Some(ev);
        Ok(())
    }

    /// Everything needed to continue this run exactly.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::from_model(&self.model, self.cfg.seed, self.epoch);
        c.optimizers
            .push(("finetune".into(), AdamState::capture(&self.adam, self.model.store())));
        c.meta = serde_json::json!({
            "train": self.cfg,
            "log": self.log,
            "train_losses": self.train_losses,
        });
        c
    }

    /// Rebuilds a tuner from [`FineTuner::checkpoint`] output.
    pub fn resume(data: &'d Dataset, cfg: TrainConfig, ckpt: &Checkpoint) -> Result<Self> {
        let mut model = DynBerg::new(ckpt.model.clone(), cfg.seed)?;
        model.load_params(ckpt)?;
        let mut t = Self::new(model, data, cfg)?;
        let state = ckpt
            .optimizer("finetune")
            .ok_or_else(|| Error::Checkpoint("no fine-tuning optimizer state".into()))?;
        state.restore_into(&mut t.adam, t.model.store())?;
        let meta = |key: &str| {
            ckpt.meta
                .get(key)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint meta lacks {key}")))
        };
        let bad = |e: serde_json::Error| Error::Checkpoint(format!("checkpoint meta: {e}"));
        t.log = serde_json::from_value(meta("log")?).map_err(bad)?;
        t.train_losses = serde_json::from_value(meta("train_losses")?).map_err(bad)?;
        t.epoch = ckpt.epoch;
        Ok(t)
    }

    pub fn finish(self) -> (DynBerg, RunLog) {
        (self.model, self.log)
    }
}

/// Fine-tunes for `cfg.epochs` epochs.
pub fn finetune(model: DynBerg, data: &Dataset, cfg: &TrainConfig) -> Result<(DynBerg, RunLog)> {
    let started = std::time::Instant::now();
    let mut t = FineTuner::new(model, data, cfg.clone())?;
    t.run()?;
    let (model, mut log) = t.finish();
    log.wall_seconds = started.elapsed().as_secs_f64();
    Ok((model, log))
}
