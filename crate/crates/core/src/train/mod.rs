//! Multi-task training: weighted BCE + masked squared-error losses, Adam,
//! reduce-on-plateau learning rate, and head-only fine-tuning.

mod adam;
mod data;
mod loss;

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState, Scope, ADAM_EPS, BETA1, BETA2};
pub use data::{init_from_data, InputSource, PreparedSample, Target, WindowSet};
pub use loss::{bce, multitask_loss, LossParts, LossWeights, BCE_EPS};

use crate::error::{Error, Result};
use crate::eval::{angle_abs_error, clamp_distance};
use crate::model::{Grads, Model, ModelOutput, RawOutput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_min: f64,
    /// Multiplier applied to the learning rate after a plateau.
    pub plateau_factor: f64,
    /// Epochs without validation improvement before the rate drops.
    pub plateau_patience: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    /// Use the unit-normalized (sin, cos) pair in the angle loss.
    pub normalized_angle_loss: bool,
    /// Epochs of head-only fine-tuning after the main run.
    pub fine_tune_epochs: usize,
    /// Decision threshold for the validation accuracy column.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 1e-5,
            lr_min: 1e-9,
            plateau_factor: 0.5,
            plateau_patience: 3,
            batch_size: 32,
            epochs: 20,
            seed: 0,
            weights: LossWeights::default(),
            normalized_angle_loss: false,
            fine_tune_epochs: 0,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_init && self.lr_init.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rates must satisfy 0 < lr_min ({}) <= lr_init ({})",
                self.lr_min, self.lr_init
            )));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor <= 1.0) {
            return Err(Error::invalid("plateau_factor must be in (0, 1]"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid("threshold must be in [0, 1]"));
        }
        self.weights.validate()
    }
}

/// Losses and metrics of one pass over a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassStats {
    /// Mean weighted loss.
    pub loss: f64,
    /// Mean unweighted per-task terms.
    pub parts: LossParts,
    pub accuracy: f64,
    /// Over all positives; `None` without positives.
    pub angle_mae_deg: Option<f64>,
    pub distance_mae_m: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_parts: LossParts,
    pub valid: PassStats,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest weighted validation loss (the starting
    /// point counts as epoch 0).
    pub model: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Set when a non-finite loss stopped training early; `model` is then
    /// the last good selection.
    pub diverged: Option<Error>,
}

/// Dataset view used by the loop: full inputs, or frozen embeddings when
/// only the heads train.
enum Feed<'a> {
    Inputs(&'a dyn InputSource),
    Embedded(Vec<Array1<f64>>, Vec<Target>),
}

impl Feed<'_> {
    fn len(&self) -> usize {
        match self {
            Feed::Inputs(s) => s.len(),
            Feed::Embedded(e, _) => e.len(),
        }
    }

    fn target(&self, i: usize) -> Target {
        match self {
            Feed::Inputs(s) => s.target(i),
            Feed::Embedded(_, t) => t[i],
        }
    }

    fn output(&self, model: &Model, i: usize) -> Result<RawOutput> {
        match self {
            Feed::Inputs(s) => model.forward_raw(&s.input(i)?),
            Feed::Embedded(e, _) => Ok(model.heads_forward(&e[i]).0),
        }
    }

    /// Loss of sample `i`, accumulating its gradient into `g`.
    fn accumulate(&self, model: &Model, i: usize, cfg: &TrainConfig, g: &mut Grads) -> Result<(f64, LossParts)> {
        let t = self.target(i);
        match self {
            Feed::Inputs(s) => {
                let (raw, tape) = model.forward_tape(&s.input(i)?)?;
                let (l, parts, d) = multitask_loss(&raw, &t, &cfg.weights, cfg.normalized_angle_loss);
                model.backward(&tape, &d, g);
                Ok((l, parts))
            }
            Feed::Embedded(e, _) => {
                let (raw, tape) = model.heads_forward(&e[i]);
                let (l, parts, d) = multitask_loss(&raw, &t, &cfg.weights, cfg.normalized_angle_loss);
                model.heads_backward(&tape, &d, g);
                Ok((l, parts))
            }
        }
    }
}

/// Mean loss over `indices` and the exact gradient of that mean.
pub fn batch_gradients(
    model: &Model,
    data: &dyn InputSource,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<(f64, LossParts, Grads)> {
    let mut g = model.params().zero_grads();
    let feed = Feed::Inputs(data);
    let (loss, parts) = accumulate_batch(model, &feed, indices, cfg, &mut g)?;
    Ok((loss, parts, g))
}

fn accumulate_batch(model: &Model, feed: &Feed, idx: &[usize], cfg: &TrainConfig, g: &mut Grads) -> Result<(f64, LossParts)> {
    let (mut loss, mut parts) = (0.0, LossParts::default());
    for &i in idx {
        let (l, p) = feed.accumulate(model, i, cfg, g)?;
        loss += l;
        parts.add(&p);
    }
    let k = 1.0 / idx.len().max(1) as f64;
    g.scale(k);
    Ok((loss * k, parts.scaled(k)))
}

fn evaluate_feed(model: &Model, feed: &Feed, cfg: &TrainConfig) -> Result<PassStats> {
    let n = feed.len();
    let (mut loss, mut parts, mut correct) = (0.0, LossParts::default(), 0usize);
    let (mut ang, mut dist, mut npos) = (0.0, 0.0, 0usize);
    for i in 0..n {
        let raw = feed.output(model, i)?;
        let t = feed.target(i);
        let (l, p, _) = multitask_loss(&raw, &t, &cfg.weights, cfg.normalized_angle_loss);
        loss += l;
        parts.add(&p);
        let out = ModelOutput::from(raw);
        if (out.p_siren >= cfg.threshold) == t.is_siren {
            correct += 1;
        }
        if t.is_siren {
            npos += 1;
            ang += angle_abs_error(out.theta_hat, t.theta);
            dist += (clamp_distance(out.distance) - t.distance).abs();
        }
    }
    let k = 1.0 / n.max(1) as f64;
    Ok(PassStats {
        loss: loss * k,
        parts: parts.scaled(k),
        accuracy: correct as f64 * k,
        angle_mae_deg: (npos > 0).then(|| ang / npos as f64),
        distance_mae_m: (npos > 0).then(|| dist / npos as f64),
    })
}

/// Losses and metrics of `model` over a dataset.
pub fn evaluate(model: &Model, data: &dyn InputSource, cfg: &TrainConfig) -> Result<PassStats> {
    evaluate_feed(model, &Feed::Inputs(data), cfg)
}

fn embed_all(model: &Model, data: &dyn InputSource) -> Result<Feed<'static>> {
    let mut e = Vec::with_capacity(data.len());
    let mut t = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        e.push(model.embed(&data.input(i)?)?);
        t.push(data.target(i));
    }
    Ok(Feed::Embedded(e, t))
}

fn run(
    model: Model,
    train: &dyn InputSource,
    valid: &dyn InputSource,
    cfg: &TrainConfig,
    scope: Scope,
    epochs: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if valid.is_empty() {
        return Err(Error::invalid("validation set is empty"));
    }
    let mut model = model;
    if epochs == 0 {
        return Ok(TrainOutcome {
            model,
            best_epoch: 0,
            history: Vec::new(),
            diverged: None,
        });
    }
    let (tr, va) = match scope {
        Scope::Full => (Feed::Inputs(train), Feed::Inputs(valid)),
        // the streams are frozen, so their embeddings never change
        Scope::HeadsOnly => (embed_all(&model, train)?, embed_all(&model, valid)?),
    };
    let mut best = model.clone();
    let mut best_loss = evaluate_feed(&model, &va, cfg)?.loss;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut lr = cfg.lr_init;
    let mut adam = AdamState::new(model.params(), scope);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..tr.len()).collect();
    let mut grads = model.params().zero_grads();
    let mut history = Vec::with_capacity(epochs);
    let mut diverged = None;

    'epochs: for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let (mut tl, mut tp, mut seen) = (0.0, LossParts::default(), 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            grads.zero();
            let (l, p) = accumulate_batch(&model, &tr, idx, cfg, &mut grads)?;
            if !l.is_finite() || !grads.is_finite() {
                diverged = Some(Error::Diverged {
                    epoch,
                    batch: b,
                    reason: format!("non-finite {}", if l.is_finite() { "gradient" } else { "loss" }),
                });
                break 'epochs;
            }
            adam_step(model.params_mut(), &grads, &mut adam, lr);
            tl += l * idx.len() as f64;
            tp.add(&p.scaled(idx.len() as f64));
            seen += idx.len();
        }
        let valid_stats = evaluate_feed(&model, &va, cfg)?;
        if !valid_stats.loss.is_finite() || !model.params().is_finite() {
            diverged = Some(Error::Diverged {
                epoch,
                batch: order.len().div_ceil(cfg.batch_size),
                reason: "non-finite validation loss".into(),
            });
            break;
        }
        let k = 1.0 / seen as f64;
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss: tl * k,
            train_parts: tp.scaled(k),
            valid: valid_stats,
        });
        if valid_stats.loss < best_loss {
            best_loss = valid_stats.loss;
            best = model.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.plateau_patience {
                lr = (lr * cfg.plateau_factor).max(cfg.lr_min);
                since_best = 0;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        best_epoch,
        history,
        diverged,
    })
}

/// Trains every trainable tensor for `cfg.epochs` and keeps the parameters
/// with the lowest weighted validation loss.
pub fn train_loop(model: Model, train: &dyn InputSource, valid: &dyn InputSource, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run(model, train, valid, cfg, Scope::Full, cfg.epochs)
}

/// Trains only the head MLPs for `cfg.fine_tune_epochs`; both streams
/// come back bit-identical.
pub fn fine_tune_heads(model: Model, train: &dyn InputSource, valid: &dyn InputSource, cfg: &TrainConfig) -> Result<TrainOutcome> {
    run(model, train, valid, cfg, Scope::HeadsOnly, cfg.fine_tune_epochs)
}

pub const HISTORY_HEADER: &str = "epoch,lr,train_loss,train_siren,train_angle,train_distance,\
valid_loss,valid_siren,valid_angle,valid_distance,valid_accuracy,valid_angle_mae_deg,valid_distance_mae_m";

/// History as CSV. Columns of tasks with zero weight read `NA`.
pub fn format_history(history: &[EpochRecord], w: &LossWeights) -> String {
    let num = |active: bool, v: Option<f64>| match (active, v) {
        (true, Some(v)) => format!("{v:.6}"),
        _ => "NA".to_string(),
    };
    let (a, d) = (w.angle > 0.0, w.distance > 0.0);
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        let v = &r.valid;
        let _ = writeln!(
            out,
            "{},{:e},{:.6},{},{},{},{:.6},{},{},{},{:.6},{},{}",
            r.epoch,
            r.lr,
            r.train_loss,
            num(w.siren > 0.0, Some(r.train_parts.siren)),
            num(a, Some(r.train_parts.angle)),
            num(d, Some(r.train_parts.distance)),
            v.loss,
            num(w.siren > 0.0, Some(v.parts.siren)),
            num(a, Some(v.parts.angle)),
            num(d, Some(v.parts.distance)),
            v.accuracy,
            num(a, v.angle_mae_deg),
            num(d, v.distance_mae_m),
        );
    }
    out
}

pub fn write_history(path: &Path, history: &[EpochRecord], w: &LossWeights) -> Result<()> {
    std::fs::write(path, format_history(history, w)).map_err(|e| Error::io(path, e))
}
