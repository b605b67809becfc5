//! Training over the source part of a domain sequence: the full method, its
//! ablations, and the ERM / last-domain / fine-tuning baselines.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{split, DomainSequence, LabeledDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::model::{AirlConfig, AirlState, ClassifierVec};
use crate::objectives::{
    coral_inv_loss, cross_entropy, estimate_class_priors, total_objective, weighted_cls_loss, ClassWeightTable,
    LossBreakdown, StepLoss,
};
use crate::rng;
use crate::tensor::{Adam, AdamConfig, Graph, ParamSet, RunningStats, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Samples drawn from every active domain per optimization step.
    pub batch_per_domain: usize,
    pub epochs: usize,
    /// Steps per epoch; by default enough for one pass over the largest training split.
    pub steps_per_epoch: Option<usize>,
    pub alpha: f64,
    pub lr: f64,
    pub seed: u64,
    /// Epochs without a validation improvement before stopping.
    pub early_stop_patience: usize,
    pub prior_smoothing: f64,
    pub split: SplitSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_per_domain: 64,
            epochs: 100,
            steps_per_epoch: None,
            alpha: 1.0,
            lr: 1e-3,
            seed: 0,
            early_stop_patience: 10,
            prior_smoothing: 1.0,
            split: SplitSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_per_domain < 4 {
            return Err(Error::param(format!("batch_per_domain must be >= 4, got {}", self.batch_per_domain)));
        }
        if self.epochs == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::param("epochs and steps_per_epoch must be positive"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param(format!("alpha must be nonnegative, got {}", self.alpha)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.prior_smoothing >= 0.0) {
            return Err(Error::param("prior_smoothing must be nonnegative"));
        }
        self.split.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Airl,
    NoLstm,
    NoTrans,
    NoInv,
    Erm,
    Ld,
    Ft,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Airl,
        Method::NoLstm,
        Method::NoTrans,
        Method::NoInv,
        Method::Erm,
        Method::Ld,
        Method::Ft,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Airl => "airl",
            Method::NoLstm => "no_lstm",
            Method::NoTrans => "no_trans",
            Method::NoInv => "no_inv",
            Method::Erm => "erm",
            Method::Ld => "ld",
            Method::Ft => "ft",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Method::Erm | Method::Ld | Method::Ft)
    }

    /// The architecture this method trains, derived from `base`.
    pub fn model_config(self, base: &AirlConfig) -> AirlConfig {
        let mut cfg = base.clone();
        match self {
            Method::Airl | Method::NoInv => {}
            Method::NoLstm => cfg.use_hypernetwork = false,
            Method::NoTrans => cfg.use_attention = false,
            Method::Erm | Method::Ld | Method::Ft => {
                cfg.use_attention = false;
                cfg.use_hypernetwork = false;
            }
        }
        cfg
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::param(format!("unknown method {s:?}")))
    }
}

/// Per-domain train / validation / in-distribution test parts of the sources.
#[derive(Debug, Clone)]
pub struct SourceSplits {
    pub train: Vec<LabeledDataset>,
    pub val: Vec<LabeledDataset>,
    pub idtest: Vec<LabeledDataset>,
}

/// Splits domains `1..=t_source`; domain `t` is shuffled with seed `seed + t`.
pub fn split_sources(seq: &DomainSequence, t_source: usize, spec: &SplitSpec, seed: u64) -> Result<SourceSplits> {
    if t_source == 0 || t_source > seq.len() {
        return Err(Error::param(format!("t_source {t_source} for {} domains", seq.len())));
    }
    let mut out = SourceSplits {
        train: Vec::new(),
        val: Vec::new(),
        idtest: Vec::new(),
    };
    for d in &seq.domains()[..t_source] {
        let (tr, va, te) = split(d, spec, seed.wrapping_add(d.domain_index as u64))?;
        out.train.push(tr);
        out.val.push(va);
        out.idtest.push(te);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Step {
        step: usize,
        epoch: usize,
        #[serde(flatten)]
        loss: LossBreakdown,
    },
    Epoch {
        epoch: usize,
        val_acc: f64,
        improved: bool,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    /// Objective value of every optimization step, in order.
    pub fn step_totals(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Step { loss, .. } => Some(loss.total),
                LogRecord::Epoch { .. } => None,
            })
            .collect()
    }

    pub fn steps(&self) -> impl Iterator<Item = &LossBreakdown> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Step { loss, .. } => Some(loss),
            LogRecord::Epoch { .. } => None,
        })
    }

    /// One JSON object per line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of a training run, frozen at the selected epoch.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub method: Method,
    pub state: AirlState,
    /// `h*_1..h*_{T-1}` (copies of the shared classifier for methods without the hypernetwork).
    pub classifiers: Vec<ClassifierVec>,
    pub t_source: usize,
    pub train_config: TrainConfig,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub epochs_run: usize,
    pub log: TrainLog,
}

/// Class decisions from logits: `logit > 0` for a single column, otherwise the
/// first maximal column.
pub fn decide(logits: &Tensor) -> Vec<usize> {
    let (n, c) = logits.as_2d();
    (0..n)
        .map(|r| {
            let row = logits.row_slice(r);
            if c == 1 {
                usize::from(row[0] > 0.0)
            } else {
                let mut best = 0;
                for k in 1..c {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            }
        })
        .collect()
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len() as f64
}

impl TrainedModel {
    /// Classifier applied to domain `t`: `h_{t-1}` (or `h_1` for `t = 1`),
    /// rolling the hypernetwork past the materialized ones when needed.
    pub fn classifier_for_domain(&self, t: usize) -> Result<ClassifierVec> {
        if t == 0 {
            return Err(Error::usage("domain indices start at 1"));
        }
        let idx = t.saturating_sub(1).max(1);
        if let Some(h) = self.classifiers.get(idx - 1) {
            return Ok(h.clone());
        }
        let all = self.state.classifiers(idx)?;
        Ok(all.into_iter().last().expect("nonempty"))
    }

    /// Predictions for samples of domain `t` through `h_{t-1}(Enc(x))`.
    pub fn predict_domain(&self, t: usize, x: &Tensor) -> Result<Vec<usize>> {
        let h = self.classifier_for_domain(t)?;
        Ok(decide(&self.state.logits(&h, x)?))
    }

    pub fn domain_accuracy(&self, ds: &LabeledDataset) -> Result<f64> {
        let pred = self.predict_domain(ds.domain_index, ds.features())?;
        Ok(accuracy(&pred, ds.labels()))
    }
}

/// Epoch-wise shuffled index stream over one dataset; reshuffles when exhausted.
struct Sampler {
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize, rng: &mut rng::Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn next(&mut self, k: usize, rng: &mut rng::Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Tracks the best validation accuracy and the parameters that produced it.
struct Selector {
    best_acc: f64,
    best_epoch: usize,
    best: Option<(ParamSet, RunningStats)>,
    since: usize,
}

impl Selector {
    fn new() -> Self {
        Self {
            best_acc: f64::NEG_INFINITY,
            best_epoch: 0,
            best: None,
            since: 0,
        }
    }

    fn offer(&mut self, epoch: usize, acc: f64, state: &AirlState, bn: &RunningStats) -> bool {
        if acc >= self.best_acc {
            self.best_acc = acc;
            self.best_epoch = epoch;
            self.best = Some((state.params.clone(), bn.clone()));
            self.since = 0;
            true
        } else {
            self.since += 1;
            false
        }
    }
}

fn diverged(step: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { op } => Error::Diverged {
            step,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

fn check_sources(seq: &DomainSequence, min: usize) -> Result<usize> {
    let t = seq.t_source();
    if t < min {
        return Err(Error::param(format!("need at least {min} source domains, have {t}")));
    }
    if seq.n_classes() < 2 {
        return Err(Error::param("training needs at least two classes"));
    }
    Ok(t)
}

fn steps_per_epoch(cfg: &TrainConfig, splits: &SourceSplits) -> usize {
    cfg.steps_per_epoch.unwrap_or_else(|| {
        let largest = splits.train.iter().map(LabeledDataset::len).max().unwrap_or(1);
        largest.div_ceil(cfg.batch_per_domain)
    })
}

fn stack_batch(parts: &[(&LabeledDataset, Vec<usize>)]) -> Result<(Tensor, Vec<Vec<usize>>)> {
    let dim = parts[0].0.feature_dim();
    let mut data = Vec::new();
    let mut labels = Vec::with_capacity(parts.len());
    for (ds, idx) in parts {
        data.extend_from_slice(ds.features().select_rows(idx).data());
        labels.push(idx.iter().map(|&i| ds.labels()[i]).collect());
    }
    let rows = data.len() / dim;
    Ok((Tensor::new(vec![rows, dim], data)?, labels))
}

/// Trains `method` on the source domains of `seq` (the first `seq.t_source()`).
pub fn train(method: Method, seq: &DomainSequence, base: &AirlConfig, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let model_cfg = method.model_config(base);
    if model_cfg.input_dim != seq.feature_dim() || model_cfg.n_classes != seq.n_classes() {
        return Err(Error::param(format!(
            "model expects {} features / {} classes, data has {} / {}",
            model_cfg.input_dim,
            model_cfg.n_classes,
            seq.feature_dim(),
            seq.n_classes()
        )));
    }
    if method.is_baseline() {
        baseline_loop(method, seq, model_cfg, cfg)
    } else {
        let alpha = if method == Method::NoInv { 0.0 } else { cfg.alpha };
        airl_loop(method, seq, model_cfg, cfg, alpha)
    }
}

/// The full method with the architecture flags of `model_cfg` as given.
pub fn train_airl(seq: &DomainSequence, model_cfg: &AirlConfig, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if model_cfg.input_dim != seq.feature_dim() || model_cfg.n_classes != seq.n_classes() {
        return Err(Error::param("model config does not match the data"));
    }
    airl_loop(Method::Airl, seq, model_cfg.clone(), cfg, cfg.alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Erm,
    Ld,
    Ft,
}

pub fn train_baseline(kind: Baseline, seq: &DomainSequence, base: &AirlConfig, cfg: &TrainConfig) -> Result<TrainedModel> {
    let method = match kind {
        Baseline::Erm => Method::Erm,
        Baseline::Ld => Method::Ld,
        Baseline::Ft => Method::Ft,
    };
    train(method, seq, base, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoLstm,
    NoTrans,
    NoInv,
}

pub fn ablate(variant: Ablation, seq: &DomainSequence, base: &AirlConfig, cfg: &TrainConfig) -> Result<TrainedModel> {
    let method = match variant {
        Ablation::NoLstm => Method::NoLstm,
        Ablation::NoTrans => Method::NoTrans,
        Ablation::NoInv => Method::NoInv,
    };
    train(method, seq, base, cfg)
}

/// Loss of one optimization step of the sequence objective.
pub struct SequenceStep {
    pub breakdown: LossBreakdown,
}

/// Builds the sequence objective `sum_t (L_cls^t + alpha L_inv^t)` for one
/// batch (`x` stacks `T` blocks of `n` rows) on `g`, reading parameters from
/// `vars` (in [`ParamSet`] order).
#[allow(clippy::too_many_arguments)]
pub fn sequence_objective(
    state: &AirlState,
    g: &mut Graph,
    vars: &[Var],
    bn: &mut RunningStats,
    x: &Tensor,
    labels: &[Vec<usize>],
    weights: &ClassWeightTable,
    alpha: f64,
) -> Result<(Var, Vec<StepLoss>)> {
    let t_count = labels.len();
    if t_count < 2 {
        return Err(Error::usage("a sequence step needs two domains"));
    }
    let n = labels[0].len();
    let xv = g.constant(x.clone());
    let z_all = state.encode(g, vars, xv)?;
    let zhat = state.attend_sequence(g, vars, z_all, n, t_count - 1, Some(bn))?;
    let hs = state.classifier_sequence(g, vars, t_count - 1)?;
    let n_classes = state.config.n_classes;
    let mut per_step = Vec::with_capacity(t_count - 1);
    let mut total = None;
    for t in 1..t_count {
        let z_next = g.slice(z_all, 0, t * n, n)?;
        let both = g.concat(&[zhat[t - 1], z_next], 0)?;
        let logits = state.classify(g, hs[t - 1], both)?;
        let lf = g.slice(logits, 0, 0, n)?;
        let lg = g.slice(logits, 0, n, n)?;
        let w = weights.step(t);
        let cls = weighted_cls_loss(g, lf, &labels[t - 1], w, lg, &labels[t])?;
        let sample_w: Vec<f64> = labels[t - 1].iter().map(|&y| w[y]).collect();
        let inv = coral_inv_loss(g, zhat[t - 1], &labels[t - 1], &sample_w, z_next, &labels[t], n_classes)?;
        per_step.push(StepLoss {
            t,
            l_cls: g.value(cls).item().expect("scalar"),
            l_inv: g.value(inv.loss).item().expect("scalar"),
            skipped_classes: inv.skipped,
        });
        let scaled = g.scale(inv.loss, alpha)?;
        let term = g.add(cls, scaled)?;
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok((total.expect("at least one transition"), per_step))
}

/// Builds the objective for one batch, backpropagates it and accumulates
/// gradients into `state.params`.
pub fn sequence_step(
    state: &mut AirlState,
    bn: &mut RunningStats,
    x: &Tensor,
    labels: &[Vec<usize>],
    weights: &ClassWeightTable,
    alpha: f64,
    step: usize,
) -> Result<SequenceStep> {
    let mut g = Graph::new();
    let vars = state.bind(&mut g);
    let (total, per_step) = sequence_objective(state, &mut g, &vars, bn, x, labels, weights, alpha)?;
    let breakdown = total_objective(per_step, alpha)?;
    let mut grads = g.backward(total).map_err(diverged(step))?;
    state.params.accumulate(&mut grads, &vars)?;
    Ok(SequenceStep { breakdown })
}

fn airl_loop(method: Method, seq: &DomainSequence, model_cfg: AirlConfig, cfg: &TrainConfig, alpha: f64) -> Result<TrainedModel> {
    let t_source = check_sources(seq, 2)?;
    let splits = split_sources(seq, t_source, &cfg.split, cfg.seed)?;
    let priors: Vec<Vec<f64>> = splits
        .train
        .iter()
        .map(|d| estimate_class_priors(d, cfg.prior_smoothing))
        .collect();
    let weights = ClassWeightTable::from_priors(&priors)?;

    let mut state = AirlState::new(model_cfg, cfg.seed)?;
    let mut bn = state.bn.clone();
    let mut opt = Adam::new(&state.params, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut rng = rng::stream(cfg.seed, rng::streams::BATCH);
    let mut samplers: Vec<Sampler> = splits.train.iter().map(|d| Sampler::new(d.len(), &mut rng)).collect();
    let spe = steps_per_epoch(cfg, &splits);
    let n = cfg.batch_per_domain;
    let last_val = splits.val.last().expect("sources");

    let mut log = TrainLog::default();
    let mut sel = Selector::new();
    let mut step = 0;
    let mut epochs_run = 0;
    for epoch in 1..=cfg.epochs {
        for _ in 0..spe {
            step += 1;
            let parts: Vec<(&LabeledDataset, Vec<usize>)> = splits
                .train
                .iter()
                .zip(samplers.iter_mut())
                .map(|(d, s)| (d, s.next(n, &mut rng)))
                .collect();
            let (x, labels) = stack_batch(&parts)?;
            let out = sequence_step(&mut state, &mut bn, &x, &labels, &weights, alpha, step).map_err(diverged(step))?;
            if !out.breakdown.total.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: "objective is not finite".into(),
                });
            }
            opt.step(&mut state.params)?;
            if !state.params.all_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: "parameters became non-finite".into(),
                });
            }
            log.records.push(LogRecord::Step {
                step,
                epoch,
                loss: out.breakdown,
            });
        }
        epochs_run = epoch;
        let h = state.classifiers(t_source - 1)?.pop().expect("nonempty");
        let acc = accuracy(&decide(&state.logits(&h, last_val.features())?), last_val.labels());
        let improved = sel.offer(epoch, acc, &state, &bn);
        log.records.push(LogRecord::Epoch {
            epoch,
            val_acc: acc,
            improved,
        });
        log::debug!("{method} epoch {epoch}: val acc {acc:.4}");
        if sel.since >= cfg.early_stop_patience {
            break;
        }
    }
    finish(method, state, sel, t_source, cfg, epochs_run, log)
}

fn finish(
    method: Method,
    mut state: AirlState,
    sel: Selector,
    t_source: usize,
    cfg: &TrainConfig,
    epochs_run: usize,
    log: TrainLog,
) -> Result<TrainedModel> {
    let (params, bn) = sel.best.expect("at least one epoch ran");
    state.params = params;
    state.params.zero_grads();
    state.bn = bn;
    let classifiers = state.classifiers(t_source.saturating_sub(1).max(1))?;
    Ok(TrainedModel {
        method,
        state,
        classifiers: classifiers.into_iter().take(t_source - 1).collect(),
        t_source,
        train_config: cfg.clone(),
        best_epoch: sel.best_epoch,
        best_val_acc: sel.best_acc,
        epochs_run,
        log,
    })
}

/// Encoder plus one shared classifier trained by mean cross-entropy.
fn baseline_loop(method: Method, seq: &DomainSequence, model_cfg: AirlConfig, cfg: &TrainConfig) -> Result<TrainedModel> {
    let t_source = check_sources(seq, 1)?;
    let splits = split_sources(seq, t_source, &cfg.split, cfg.seed)?;
    let mut state = AirlState::new(model_cfg, cfg.seed)?;
    let bn = state.bn.clone();
    let mut opt = Adam::new(&state.params, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut rng = rng::stream(cfg.seed, rng::streams::BATCH);
    let mut samplers: Vec<Sampler> = splits.train.iter().map(|d| Sampler::new(d.len(), &mut rng)).collect();
    let spe = steps_per_epoch(cfg, &splits);
    let n = cfg.batch_per_domain;
    let last_val = splits.val.last().expect("sources");

    // (active domains, epochs) per phase; only the final phase may stop early
    let phases: Vec<(Vec<usize>, usize)> = match method {
        Method::Erm => vec![((0..t_source).collect(), cfg.epochs)],
        Method::Ld => vec![(vec![t_source - 1], cfg.epochs)],
        Method::Ft => {
            let per = (cfg.epochs / t_source).max(1);
            (0..t_source).map(|i| (vec![i], per)).collect()
        }
        _ => return Err(Error::usage(format!("{method} is not a baseline"))),
    };

    let mut log = TrainLog::default();
    let mut sel = Selector::new();
    let mut step = 0;
    let mut epoch = 0;
    let n_phases = phases.len();
    'phases: for (p, (active, epochs)) in phases.into_iter().enumerate() {
        for _ in 0..epochs {
            epoch += 1;
            for _ in 0..spe {
                step += 1;
                let parts: Vec<(&LabeledDataset, Vec<usize>)> = active
                    .iter()
                    .map(|&i| (&splits.train[i], samplers[i].next(n, &mut rng)))
                    .collect();
                let (x, labels) = stack_batch(&parts)?;
                let flat: Vec<usize> = labels.concat();
                let mut g = Graph::new();
                let vars = state.bind(&mut g);
                let xv = g.constant(x);
                let z = state.encode(&mut g, &vars, xv).map_err(diverged(step))?;
                let h = vars[state.first_classifier().index()];
                let logits = state.classify(&mut g, h, z).map_err(diverged(step))?;
                let ce = cross_entropy(&mut g, logits, &flat).map_err(diverged(step))?;
                let loss = g.reduce_mean(ce)?;
                let value = g.value(loss).item().expect("scalar");
                let mut grads = g.backward(loss).map_err(diverged(step))?;
                state.params.accumulate(&mut grads, &vars)?;
                opt.step(&mut state.params)?;
                if !state.params.all_finite() {
                    return Err(Error::Diverged {
                        step,
                        detail: "parameters became non-finite".into(),
                    });
                }
                log.records.push(LogRecord::Step {
                    step,
                    epoch,
                    loss: LossBreakdown {
                        l_cls: value,
                        l_inv: 0.0,
                        total: value,
                        per_step: Vec::new(),
                    },
                });
            }
            let h = ClassifierVec::from_tensor(state.params.get(state.first_classifier()));
            let acc = accuracy(&decide(&state.logits(&h, last_val.features())?), last_val.labels());
            let improved = sel.offer(epoch, acc, &state, &bn);
            log.records.push(LogRecord::Epoch {
                epoch,
                val_acc: acc,
                improved,
            });
            if p + 1 == n_phases && sel.since >= cfg.early_stop_patience {
                break 'phases;
            }
        }
    }
    let t_keep = t_source;
    finish(method, state, sel, t_keep, cfg, epoch, log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decide_breaks_ties_toward_lower_class() {
        let bin = Tensor::column(&[0.0, 1e-9, -3.0]);
        assert_eq!(decide(&bin), vec![0, 1, 0]);
        let multi = Tensor::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 2.0, 2.0]]).unwrap();
        assert_eq!(decide(&multi), vec![0, 1]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_per_domain: 3, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { alpha: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn sampler_covers_every_index_each_pass() {
        let mut rng = rng::seeded(0);
        let mut s = Sampler::new(10, &mut rng);
        let mut first: Vec<usize> = s.next(10, &mut rng);
        first.sort_unstable();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        assert_eq!(s.next(25, &mut rng).len(), 25);
    }
}
