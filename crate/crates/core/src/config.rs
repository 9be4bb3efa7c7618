//! Run configuration shared by every CLI verb.
//!
//! A TOML document with these top-level tables, all optional:
//!
//! * `out_dir`: run directory (default `"run"`).
//! * `[[simulate.batches]]`: scene batches, expanded into one session per
//!   seed (see [`SceneBatch`]).
//! * `[label]`: windowing, front/rear balancing and the session split.
//! * `[features]`: band-pass filter, mel and MFCC parameters.
//! * `[model]`: network shape and init seed.
//! * `[train]`: optimizer, schedule, loss weights.
//! * `[eval]`: threshold, summary range, latency runs.
//!
//! Unknown keys are rejected everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autolabel::{BalanceParams, SplitRatio, WindowParams};
use crate::dsp::FeatureParams;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::scene_sim::{MicArrayGeometry, NoiseMix, Scenario, SceneConfig, SirenProfile};
use crate::train::TrainConfig;

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub label: LabelConfig,
    #[serde(default)]
    pub features: FeatureParams,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: default_out_dir(),
            simulate: SimulateConfig::default(),
            label: LabelConfig::default(),
            features: FeatureParams::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub batches: Vec<SceneBatch>,
}

/// `count` sessions of one scenario with seeds `seed_start..`. List-valued
/// fields are cycled over the sessions of the batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneBatch {
    pub scenario: Scenario,
    pub seed_start: u64,
    pub count: usize,
    pub duration: f64,
    pub snr_db: Vec<f64>,
    pub ego_speed: Vec<f64>,
    pub ev_speed: Vec<f64>,
    pub sirens: Vec<SirenProfile>,
    /// Session tags are `{tag_prefix}-{seed:04}`; defaults to the scenario
    /// name.
    pub tag_prefix: Option<String>,
    pub noise_dbfs: f64,
    pub noise: NoiseMix,
    pub mic: MicArrayGeometry,
}

impl Default for SceneBatch {
    fn default() -> Self {
        SceneBatch {
            scenario: Scenario::Intersection,
            seed_start: 0,
            count: 1,
            duration: 16.0,
            snr_db: vec![20.0],
            ego_speed: vec![10.0],
            ev_speed: vec![15.0],
            sirens: vec![
                SirenProfile::wail(600.0, 1500.0, 4.0),
                SirenProfile {
                    kind: crate::scene_sim::SirenKind::Yelp,
                    ..SirenProfile::wail(650.0, 1600.0, 0.3)
                },
                SirenProfile {
                    kind: crate::scene_sim::SirenKind::HiLo,
                    ..SirenProfile::wail(700.0, 1100.0, 1.0)
                },
            ],
            tag_prefix: None,
            noise_dbfs: -40.0,
            noise: NoiseMix::default(),
            mic: MicArrayGeometry::default(),
        }
    }
}

fn pick<T: Clone>(what: &str, v: &[T], k: usize) -> Result<T> {
    if v.is_empty() {
        return Err(Error::invalid(format!("scene batch field {what} is empty")));
    }
    Ok(v[k % v.len()].clone())
}

impl SceneBatch {
    pub fn expand(&self) -> Result<Vec<SceneConfig>> {
        let prefix = self.tag_prefix.clone().unwrap_or_else(|| self.scenario.name().replace('_', "-"));
        (0..self.count)
            .map(|k| {
                let seed = self.seed_start + k as u64;
                let cfg = SceneConfig {
                    scenario: self.scenario,
                    seed,
                    duration: self.duration,
                    snr_db: pick("snr_db", &self.snr_db, k)?,
                    ego_speed: pick("ego_speed", &self.ego_speed, k)?,
                    ev_speed: pick("ev_speed", &self.ev_speed, k)?,
                    siren: pick("sirens", &self.sirens, k)?,
                    session_tag: format!("{prefix}-{seed:04}"),
                    noise_dbfs: self.noise_dbfs,
                    noise: self.noise,
                    mic: self.mic.clone(),
                };
                cfg.validate()?;
                Ok(cfg)
            })
            .collect()
    }
}

impl SimulateConfig {
    /// Every session of every batch, validated, with unique tags.
    pub fn scenes(&self) -> Result<Vec<SceneConfig>> {
        let mut out = Vec::new();
        for b in &self.batches {
            out.extend(b.expand()?);
        }
        let mut tags: Vec<&str> = out.iter().map(|c| c.session_tag.as_str()).collect();
        tags.sort_unstable();
        if let Some(w) = tags.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::invalid(format!("duplicate session tag {}", w[0])));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub window: WindowParams,
    pub balance: BalanceParams,
    pub split: SplitRatio,
    pub split_seed: u64,
    /// Split siren and siren-free sessions separately.
    pub stratified: bool,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            window: WindowParams::default(),
            balance: BalanceParams::default(),
            split: SplitRatio::default(),
            split_seed: 0,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold: f64,
    /// Distance range (meters) for the summary statistics.
    pub range: [f64; 2],
    pub latency_runs: usize,
    pub latency_warmup: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            range: [10.0, 50.0],
            latency_runs: 100,
            latency_warmup: 10,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text).map_err(|e| match e {
            Error::InvalidInput(m) => Error::invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Cross-section consistency: the model input must match the windows
    /// and features the other sections produce.
    pub fn validate(&self) -> Result<()> {
        self.label.window.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.simulate.scenes()?;
        let input = self.label.window.input_samples();
        if self.model.input_samples != input {
            return Err(Error::invalid(format!(
                "model.input_samples {} differs from the window input length {input}",
                self.model.input_samples
            )));
        }
        let dim = self.features.feature_dim();
        if self.model.feature_dim != dim {
            return Err(Error::invalid(format!("model.feature_dim {} differs from features ({dim})", self.model.feature_dim)));
        }
        let frames = self.features.mel.n_frames(input);
        if self.model.n_frames != frames {
            return Err(Error::invalid(format!("model.n_frames {} differs from features ({frames})", self.model.n_frames)));
        }
        if self.model.n_channels != crate::scene_sim::N_CHANNELS {
            return Err(Error::invalid("model.n_channels must match the microphone array"));
        }
        if !(0.0..=1.0).contains(&self.eval.threshold) || self.eval.range[0] > self.eval.range[1] {
            return Err(Error::invalid("eval threshold must be in [0, 1] and range ordered"));
        }
        Ok(())
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.out_dir.join("sessions")
    }

    pub fn labels_dir(&self) -> PathBuf {
        self.out_dir.join("labels")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_file_matches_code() {
        let text = include_str!("../../../configs/defaults.toml");
        assert_eq!(RunConfig::parse(text).unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    const SAMPLE: &str = r#"
out_dir = "x"

[[simulate.batches]]
scenario = "same_direction"
seed_start = 10
count = 3
snr_db = [inf, 10.0]

[[simulate.batches]]
scenario = "negative_only"
count = 2

[label]
split_seed = 4

[train]
epochs = 2
weights = { siren = 1.0, angle = 0.0, distance = 0.0 }
"#;

    #[test]
    fn parse_and_round_trip() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        let scenes = cfg.simulate.scenes().unwrap();
        assert_eq!(scenes.len(), 5);
        assert_eq!(scenes[0].session_tag, "same-direction-0010");
        assert_eq!(scenes[0].snr_db, f64::INFINITY);
        assert_eq!(scenes[1].snr_db, 10.0);
        assert_eq!(scenes[2].snr_db, f64::INFINITY);
        let again = RunConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_toml()).unwrap(), RunConfig::default());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::parse("bogus = 1").unwrap_err().is_validation());
        assert!(RunConfig::parse("[train]\nlearning_rate = 1.0").is_err());
        assert!(RunConfig::parse("[[simulate.batches]]\nduration = 1.0").is_err());
        assert!(RunConfig::parse("[model]\ninput_samples = 1000").is_err());
        let dup = "[[simulate.batches]]\ncount = 2\n[[simulate.batches]]\nseed_start = 1";
        assert!(RunConfig::parse(dup).is_err());
    }
}
