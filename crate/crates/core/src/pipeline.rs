//! The five pipeline stages behind the command-line verbs.
//!
//! Run directory layout:
//!
//! ```text
//! <out_dir>/sessions/<tag>/{audio.wav,poses.txt,manifest.toml}
//! <out_dir>/labels/{labels.txt,dataset.toml}
//! <out_dir>/model/{best.ckpt,history.csv[,finetune_history.csv]}
//! <out_dir>/eval/{metrics.csv,summary.txt,angle_box.txt,distance_box.txt,
//!                 angle_box.svg,distance_box.svg}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use crate::autolabel::io::{read_labels, windows_from_records, write_labels, DatasetManifest, DATASET_MANIFEST, LABELS_FILE};
use crate::autolabel::{
    split_by_session, split_by_session_stratified, window_dataset, window_starts, LabeledWindow, WindowAudio, WindowParams,
};
use crate::config::RunConfig;
use crate::dsp::{FeatureExtractor, FeatureParams};
use crate::error::{Error, Result};
use crate::eval::{
    binned_metrics, error_distributions, format_box_stats, format_metrics_csv, format_summary, measure_latency,
    summary_stats, svg_box_plot, LatencyStats, MetricsTable, Prediction, SummaryStats,
};
use crate::model::{read_checkpoint, write_checkpoint, Model, ModelConfig, ModelInput, ModelOutput};
use crate::scene_sim::io::{read_session, read_wav, write_session, SessionManifest, MANIFEST_FILE};
use crate::scene_sim::{generate_session, SessionData, SAMPLE_RATE};
use crate::train::{fine_tune_heads, init_from_data, train_loop, write_history, InputSource, Target, WindowSet};

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const FINETUNE_HISTORY_FILE: &str = "finetune_history.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

pub fn model_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("model")
}

pub fn eval_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("eval")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateReport {
    pub dir: PathBuf,
    pub sessions: Vec<SessionManifest>,
}

impl fmt::Display for SimulateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut by_scenario: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for m in &self.sessions {
            let e = by_scenario.entry(m.scenario.name()).or_default();
            e.0 += 1;
            e.1 += usize::from(m.clipped);
        }
        writeln!(f, "wrote {} sessions to {}", self.sessions.len(), self.dir.display())?;
        for (name, (n, clipped)) in by_scenario {
            writeln!(f, "  {name}: {n} sessions, {clipped} clipped")?;
        }
        let secs: f64 = self.sessions.iter().map(|m| m.duration).sum();
        write!(f, "  total audio {secs:.1} s")
    }
}

/// Generates every configured session. All scene configs are validated
/// before the first file is written.
pub fn simulate(cfg: &RunConfig) -> Result<SimulateReport> {
    let scenes = cfg.simulate.scenes()?;
    if scenes.is_empty() {
        return Err(Error::invalid("config has no [[simulate.batches]]"));
    }
    let dir = cfg.sessions_dir();
    create_dir(&dir)?;
    let mut sessions = Vec::with_capacity(scenes.len());
    for scene in &scenes {
        let data = generate_session(scene)?;
        write_session(&dir.join(&scene.session_tag), scene, &data)?;
        sessions.push(SessionManifest::new(scene, &data));
    }
    Ok(SimulateReport { dir, sessions })
}

/// Every session under `dir`, sorted by tag.
pub fn load_sessions(dir: &Path) -> Result<Vec<SessionData>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut dirs = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.join(MANIFEST_FILE).is_file() {
            dirs.push(p);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::invalid(format!("no sessions found in {}", dir.display())));
    }
    dirs.iter().map(|d| read_session(d).map(|(_, s)| s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub positive: usize,
    pub negative: usize,
}

impl ClassCounts {
    fn of(windows: &[LabeledWindow]) -> Self {
        let positive = windows.iter().filter(|w| w.is_siren()).count();
        ClassCounts {
            positive,
            negative: windows.len() - positive,
        }
    }
}

/// Sectors of the angle histogram in the label report, degrees.
pub const ANGLE_SECTORS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelReport {
    pub windowed: usize,
    pub balanced: usize,
    pub train: ClassCounts,
    pub valid: ClassCounts,
    pub test: ClassCounts,
    /// Positive counts per 45° sector starting at -180°.
    pub angle_histogram: [usize; ANGLE_SECTORS],
    pub deviation: f64,
}

impl fmt::Display for LabelReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "windows {} (after balancing {})", self.windowed, self.balanced)?;
        for (name, c) in [("train", self.train), ("valid", self.valid), ("test", self.test)] {
            writeln!(f, "  {name}: {} positive, {} negative", c.positive, c.negative)?;
        }
        writeln!(f, "  split deviation {:.1} windows", self.deviation)?;
        write!(f, "angle histogram (deg: positives)")?;
        let width = 360 / ANGLE_SECTORS as i32;
        for (k, n) in self.angle_histogram.iter().enumerate() {
            let lo = -180 + width * k as i32;
            write!(f, "\n  [{lo}, {}): {n}", lo + width)?;
        }
        Ok(())
    }
}

fn angle_sector(theta: f64) -> usize {
    let u = (theta + std::f64::consts::PI) / std::f64::consts::TAU;
    ((u * ANGLE_SECTORS as f64).floor().max(0.0) as usize).min(ANGLE_SECTORS - 1)
}

/// Windows, balances and splits every session; writes the kept windows to
/// `labels.txt` and the split membership to `dataset.toml`.
pub fn label(cfg: &RunConfig) -> Result<LabelReport> {
    let sessions = load_sessions(&cfg.sessions_dir())?;
    let mut windows = Vec::new();
    for s in &sessions {
        windows.extend(window_dataset(s, &cfg.label.window)?);
    }
    let windowed = windows.len();
    let balanced = cfg.label.balance.apply(windows)?;
    let mut angle_histogram = [0; ANGLE_SECTORS];
    for w in &balanced {
        if let Some(s) = w.source {
            angle_histogram[angle_sector(s.theta)] += 1;
        }
    }
    let n_balanced = balanced.len();
    let split = if cfg.label.stratified {
        split_by_session_stratified(balanced, cfg.label.split, cfg.label.split_seed)?
    } else {
        split_by_session(balanced, cfg.label.split, cfg.label.split_seed)?
    };
    let dir = cfg.labels_dir();
    create_dir(&dir)?;
    write_labels(
        &dir.join(LABELS_FILE),
        split.train.iter().chain(&split.valid).chain(&split.test),
    )?;
    DatasetManifest::new(&split, cfg.label.window.input_samples()).write(&dir.join(DATASET_MANIFEST))?;
    Ok(LabelReport {
        windowed,
        balanced: n_balanced,
        train: ClassCounts::of(&split.train),
        valid: ClassCounts::of(&split.valid),
        test: ClassCounts::of(&split.test),
        angle_histogram,
        deviation: split.sessions.deviation,
    })
}

/// Labeled windows of each split, rebuilt from the label files.
#[derive(Debug, Clone)]
pub struct SplitWindows {
    pub train: Vec<LabeledWindow>,
    pub valid: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
}

pub fn load_split(cfg: &RunConfig) -> Result<SplitWindows> {
    let dir = cfg.labels_dir();
    let manifest = DatasetManifest::read(&dir.join(DATASET_MANIFEST))?;
    let input = cfg.label.window.input_samples();
    if manifest.input_samples != input {
        return Err(Error::invalid(format!(
            "labels were written for {} input samples, config expects {input}",
            manifest.input_samples
        )));
    }
    let records = read_labels(&dir.join(LABELS_FILE))?;
    let sessions: HashMap<String, SessionData> = load_sessions(&cfg.sessions_dir())?
        .into_iter()
        .map(|s| (s.session_tag.clone(), s))
        .collect();
    for tag in manifest.train.iter().chain(&manifest.valid).chain(&manifest.test) {
        if !sessions.contains_key(tag) {
            return Err(Error::invalid(format!("dataset refers to missing session {tag:?}")));
        }
    }
    let windows = windows_from_records(&records, &sessions, input)?;
    let member = |tags: &[String]| -> HashSet<String> { tags.iter().cloned().collect() };
    let (tr, va, te) = (member(&manifest.train), member(&manifest.valid), member(&manifest.test));
    let mut out = SplitWindows {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
    };
    for w in windows {
        let tag = w.session_tag.as_str();
        if tr.contains(tag) {
            out.train.push(w);
        } else if va.contains(tag) {
            out.valid.push(w);
        } else if te.contains(tag) {
            out.test.push(w);
        } else {
            return Err(Error::invalid(format!("label for session {tag:?} not in any split")));
        }
    }
    Ok(out)
}

/// Rejects a model whose input shape differs from what the config's
/// windows and features produce.
pub fn check_compatible(model: &ModelConfig, cfg: &RunConfig) -> Result<()> {
    let want = &cfg.model;
    let pairs = [
        ("channels", model.n_channels, want.n_channels),
        ("input samples", model.input_samples, cfg.label.window.input_samples()),
        ("feature dim", model.feature_dim, cfg.features.feature_dim()),
        ("frames", model.n_frames, cfg.features.mel.n_frames(cfg.label.window.input_samples())),
    ];
    for (what, have, need) in pairs {
        if have != need {
            return Err(Error::invalid(format!(
                "model expects {have} {what} but the config produces {need}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub train_windows: usize,
    pub valid_windows: usize,
    pub valid_loss: f64,
    pub valid_accuracy: f64,
}

impl fmt::Display for TrainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "trained on {} windows, validated on {}", self.train_windows, self.valid_windows)?;
        writeln!(f, "best epoch {} of {}", self.best_epoch, self.epochs_run)?;
        writeln!(f, "valid loss {:.6}, accuracy {:.4}", self.valid_loss, self.valid_accuracy)?;
        write!(f, "checkpoint {}", self.checkpoint.display())
    }
}

/// Trains from scratch, or continues from `resume`, and writes the best
/// checkpoint with its history. On divergence the last good selection is
/// still written and the divergence is returned as the error.
pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainReport> {
    let split = load_split(cfg)?;
    if split.train.is_empty() || split.valid.is_empty() {
        return Err(Error::invalid("train and valid splits must be non-empty"));
    }
    let train_set = WindowSet::prepare(&split.train, cfg.features)?;
    let valid_set = WindowSet::prepare(&split.valid, cfg.features)?;
    let model = match resume {
        Some(path) => {
            let m = read_checkpoint(path)?;
            check_compatible(m.config(), cfg)?;
            m
        }
        None => {
            let mut m = Model::new(cfg.model.clone())?;
            init_from_data(&mut m, &train_set)?;
            m
        }
    };
    let dir = model_dir(cfg);
    create_dir(&dir)?;
    let mut outcome = train_loop(model, &train_set, &valid_set, &cfg.train)?;
    write_history(&dir.join(HISTORY_FILE), &outcome.history, &cfg.train.weights)?;
    let mut epochs_run = outcome.history.len();
    if outcome.diverged.is_none() && cfg.train.fine_tune_epochs > 0 {
        let ft = fine_tune_heads(outcome.model, &train_set, &valid_set, &cfg.train)?;
        write_history(&dir.join(FINETUNE_HISTORY_FILE), &ft.history, &cfg.train.weights)?;
        epochs_run += ft.history.len();
        outcome = ft;
    }
    let checkpoint = dir.join(CHECKPOINT_FILE);
    write_checkpoint(&checkpoint, &outcome.model)?;
    if let Some(e) = outcome.diverged {
        return Err(e);
    }
    let best = outcome
        .history
        .iter()
        .find(|r| r.epoch == outcome.best_epoch)
        .map(|r| r.valid);
    Ok(TrainReport {
        checkpoint,
        best_epoch: outcome.best_epoch,
        epochs_run,
        train_windows: train_set.len(),
        valid_windows: valid_set.len(),
        valid_loss: best.map_or(f64::NAN, |v| v.loss),
        valid_accuracy: best.map_or(f64::NAN, |v| v.accuracy),
    })
}

/// Raw window audio to the three outputs: band-pass, features, network.
#[derive(Debug)]
pub struct Detector {
    fx: FeatureExtractor,
    model: Model,
}

impl Detector {
    pub fn new(model: Model, features: FeatureParams) -> Result<Self> {
        let fx = FeatureExtractor::new(features)?;
        let c = model.config();
        if features.feature_dim() != c.feature_dim || features.mel.n_frames(c.input_samples) != c.n_frames {
            return Err(Error::invalid("feature parameters do not match the model"));
        }
        Ok(Detector { fx, model })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn detect(&self, audio: &WindowAudio) -> Result<ModelOutput> {
        if audio.len() != self.model.config().input_samples {
            return Err(Error::invalid(format!(
                "window has {} samples, model expects {}",
                audio.len(),
                self.model.config().input_samples
            )));
        }
        let (filtered, feats) = self.fx.featurize(audio)?;
        self.model.forward(&ModelInput::new(&filtered, &feats))
    }
}

pub fn predict(model: &Model, data: &dyn InputSource) -> Result<Vec<Prediction>> {
    (0..data.len())
        .map(|i| Ok(Prediction::from(&model.forward(&data.input(i)?)?)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub dir: PathBuf,
    pub table: MetricsTable,
    pub summary: SummaryStats,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", format_summary(&self.summary))?;
        write!(f, "wrote {}", self.dir.display())
    }
}

/// Writes the metrics table, summary, box statistics and box plots for
/// `preds` against `labels`.
pub fn write_eval_outputs(
    dir: &Path,
    preds: &[Prediction],
    labels: &[Target],
    threshold: f64,
    range: (f64, f64),
    latency: Option<LatencyStats>,
) -> Result<EvalReport> {
    if preds.len() != labels.len() {
        return Err(Error::invalid("prediction and label counts differ"));
    }
    create_dir(dir)?;
    let table = binned_metrics(preds, labels, threshold);
    let mut summary = summary_stats(preds, labels, threshold, range);
    summary.latency = latency;
    write_file(&dir.join(METRICS_FILE), &format_metrics_csv(&table))?;
    write_file(&dir.join(SUMMARY_FILE), &format_summary(&summary))?;
    let (ang, dist) = error_distributions(preds, labels, threshold);
    write_file(&dir.join("angle_box.txt"), &format_box_stats(&ang))?;
    write_file(&dir.join("distance_box.txt"), &format_box_stats(&dist))?;
    write_file(
        &dir.join("angle_box.svg"),
        &svg_box_plot("Angle error by distance", "absolute angle error (deg)", &ang),
    )?;
    write_file(
        &dir.join("distance_box.svg"),
        &svg_box_plot("Distance error by distance", "absolute distance error (m)", &dist),
    )?;
    Ok(EvalReport {
        dir: dir.to_path_buf(),
        table,
        summary,
    })
}

/// Evaluates a checkpoint on the test split. Latency covers the full
/// per-window path on the first test window; the summary file omits it so
/// reruns stay byte-identical.
pub fn eval(cfg: &RunConfig, checkpoint: &Path, threshold: f64) -> Result<EvalReport> {
    let model = read_checkpoint(checkpoint)?;
    check_compatible(model.config(), cfg)?;
    let split = load_split(cfg)?;
    if split.test.is_empty() {
        return Err(Error::invalid("test split is empty"));
    }
    let test = WindowSet::prepare(&split.test, cfg.features)?;
    let preds = predict(&model, &test)?;
    let labels: Vec<Target> = (0..test.len()).map(|i| test.target(i)).collect();
    let range = (cfg.eval.range[0], cfg.eval.range[1]);
    let mut report = write_eval_outputs(&eval_dir(cfg), &preds, &labels, threshold, range, None)?;
    let detector = Detector::new(model, cfg.features)?;
    let audio = &split.test[0].audio;
    report.summary.latency = Some(measure_latency(
        || detector.detect(audio).map(drop),
        cfg.eval.latency_warmup,
        cfg.eval.latency_runs,
    )?);
    Ok(report)
}

/// One streaming-inference tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferRecord {
    pub t: f64,
    pub p_siren: f64,
    pub theta_deg: f64,
    pub distance_m: f64,
    pub latency_ms: f64,
}

impl fmt::Display for InferRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.3} {:.6} {:.3} {:.3} {:.3}",
            self.t, self.p_siren, self.theta_deg, self.distance_m, self.latency_ms
        )
    }
}

pub const INFER_HEADER: &str = "# t p_siren theta_deg distance_m latency_ms";

/// Runs the detector at every tick `t = window_len + k * stride` that fits
/// in the recording, on the trailing input of each window. A tick only
/// reads samples before `t`.
pub fn infer_audio(
    detector: &Detector,
    audio: Arc<Vec<Vec<f32>>>,
    window: &WindowParams,
    mut emit: impl FnMut(InferRecord) -> Result<()>,
) -> Result<usize> {
    window.validate()?;
    let n = audio.first().map_or(0, Vec::len);
    let (win, input) = (window.window_samples(), window.input_samples());
    let mut ticks = 0;
    for start in window_starts(n, window) {
        let end = start + win;
        let t0 = Instant::now();
        let out = detector.detect(&WindowAudio::new(Arc::clone(&audio), end - input, input))?;
        let latency_ms = t0.elapsed().as_secs_f64() * 1e3;
        let p = Prediction::from(&out);
        emit(InferRecord {
            t: end as f64 / SAMPLE_RATE as f64,
            p_siren: p.p_siren,
            theta_deg: p.theta_hat.to_degrees(),
            distance_m: p.distance,
            latency_ms,
        })?;
        ticks += 1;
    }
    Ok(ticks)
}

/// Streams a WAV file through the checkpoint's detector.
pub fn infer_file(
    checkpoint: &Path,
    wav: &Path,
    features: FeatureParams,
    window: &WindowParams,
    emit: impl FnMut(InferRecord) -> Result<()>,
) -> Result<usize> {
    let model = read_checkpoint(checkpoint)?;
    if model.config().input_samples != window.input_samples() {
        return Err(Error::invalid("window input length does not match the model"));
    }
    let detector = Detector::new(model, features)?;
    let audio = read_wav(wav)?;
    infer_audio(&detector, Arc::new(audio), window, emit)
}
