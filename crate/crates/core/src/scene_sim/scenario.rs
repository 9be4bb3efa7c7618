use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::{ambient_noise, NoiseMix};
use super::propagate::{propagate, TimedSignal};
use super::siren::{synth_siren_segment, SirenProfile};
use super::trajectory::{Pose, Trajectory, MAX_SPEED};
use super::{MicArrayGeometry, N_CHANNELS, SAMPLE_RATE, SPEED_OF_SOUND};
use crate::error::{Error, Result};

/// Minimum session length; one full labeling window.
pub const MIN_DURATION: f64 = 1.5;
const POSE_RATE_HZ: f64 = 100.0;
const LANE_WIDTH: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Orthogonal crossing at an intersection.
    Intersection,
    /// Parallel lanes, opposite directions.
    OppositeParallel,
    /// Parallel lanes, same direction.
    SameDirection,
    /// Ego drive with ambient noise only.
    NegativeOnly,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Intersection => "intersection",
            Scenario::OppositeParallel => "opposite_parallel",
            Scenario::SameDirection => "same_direction",
            Scenario::NegativeOnly => "negative_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "intersection" => Ok(Scenario::Intersection),
            "opposite_parallel" => Ok(Scenario::OppositeParallel),
            "same_direction" => Ok(Scenario::SameDirection),
            "negative_only" => Ok(Scenario::NegativeOnly),
            other => Err(Error::invalid(format!("unknown scenario {other:?}"))),
        }
    }
}

fn default_noise_dbfs() -> f64 {
    -40.0
}

/// Everything needed to synthesize one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub duration: f64,
    /// Session-level siren-to-noise ratio; `inf` disables noise.
    pub snr_db: f64,
    pub ego_speed: f64,
    pub ev_speed: f64,
    pub siren: SirenProfile,
    pub session_tag: String,
    /// Noise power for sessions without a siren, in dB relative to full scale.
    #[serde(default = "default_noise_dbfs")]
    pub noise_dbfs: f64,
    #[serde(default)]
    pub noise: NoiseMix,
    #[serde(default)]
    pub mic: MicArrayGeometry,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration >= MIN_DURATION && self.duration.is_finite()) {
            return Err(Error::invalid(format!(
                "session {}: duration {} s is below the {MIN_DURATION} s minimum",
                self.session_tag, self.duration
            )));
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::invalid("snr_db must be finite or +inf"));
        }
        for (name, v) in [("ego_speed", self.ego_speed), ("ev_speed", self.ev_speed)] {
            if !(0.0..=MAX_SPEED).contains(&v) {
                return Err(Error::invalid(format!("{name} {v} outside [0, {MAX_SPEED}] m/s")));
            }
        }
        if !self.noise_dbfs.is_finite() {
            return Err(Error::invalid("noise_dbfs must be finite"));
        }
        if self.session_tag.is_empty() || self.session_tag.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!(
                "session_tag {:?} must be non-empty without whitespace",
                self.session_tag
            )));
        }
        self.siren.validate()?;
        self.mic.validate()
    }
}

/// One simulated drive.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionData {
    /// `N_CHANNELS` rows of `duration * SAMPLE_RATE` samples in `[-1, 1]`.
    pub audio: Arc<Vec<Vec<f32>>>,
    pub ego_track: Trajectory,
    /// Emergency-vehicle track; absent for negative sessions.
    pub ev_track: Option<Trajectory>,
    pub has_siren: bool,
    pub session_tag: String,
    /// Whether the mix had to be clipped into `[-1, 1]`.
    pub clipped: bool,
    /// Mean noise power actually mixed in, dBFS.
    pub noise_dbfs: f64,
}

impl SessionData {
    pub fn n_samples(&self) -> usize {
        self.audio.first().map_or(0, Vec::len)
    }

    pub fn duration(&self) -> f64 {
        self.n_samples() as f64 / SAMPLE_RATE as f64
    }
}

/// Result of [`mix_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct MixedScene {
    pub audio: Vec<Vec<f64>>,
    pub clipped: bool,
    /// Linear gain applied to the noise.
    pub noise_gain: f64,
}

fn mean_power(x: &[Vec<f64>]) -> f64 {
    let n: usize = x.iter().map(Vec::len).sum();
    if n == 0 {
        return 0.0;
    }
    x.iter().flat_map(|c| c.iter()).map(|v| v * v).sum::<f64>() / n as f64
}

fn clip(audio: &mut [Vec<f64>]) -> bool {
    let mut clipped = false;
    for v in audio.iter_mut().flat_map(|c| c.iter_mut()) {
        if v.abs() > 1.0 {
            *v = v.clamp(-1.0, 1.0);
            clipped = true;
        }
    }
    clipped
}

/// Adds `noise` to `clean` so that the whole-session power ratio equals
/// `snr_db`. `+inf` returns the clean signal untouched.
pub fn mix_scene(clean: &[Vec<f64>], noise: &[Vec<f64>], snr_db: f64) -> Result<MixedScene> {
    if clean.len() != noise.len() || clean.iter().zip(noise).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::invalid("clean and noise must have identical shapes"));
    }
    if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid("snr_db must be finite or +inf"));
    }
    let mut audio = clean.to_vec();
    if snr_db == f64::INFINITY {
        let clipped = clip(&mut audio);
        return Ok(MixedScene {
            audio,
            clipped,
            noise_gain: 0.0,
        });
    }
    let p_clean = mean_power(clean);
    if p_clean <= 0.0 {
        return Err(Error::invalid("clean signal has zero power; a finite SNR is undefined"));
    }
    let p_noise = mean_power(noise);
    if p_noise <= 0.0 {
        return Err(Error::invalid("noise has zero power"));
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    for (a, n) in audio.iter_mut().zip(noise) {
        a.iter_mut().zip(n).for_each(|(a, n)| *a += gain * n);
    }
    let clipped = clip(&mut audio);
    Ok(MixedScene {
        audio,
        clipped,
        noise_gain: gain,
    })
}

/// Straight-line motion in a local frame where the ego crosses the origin
/// along +x at time `t_pass`.
#[derive(Debug, Clone, Copy)]
struct LocalMotion {
    x0: f64,
    y0: f64,
    vx: f64,
    vy: f64,
    t_ref: f64,
}

impl LocalMotion {
    fn at(&self, t: f64) -> (f64, f64) {
        (self.x0 + self.vx * (t - self.t_ref), self.y0 + self.vy * (t - self.t_ref))
    }

    fn heading(&self, fallback: f64) -> f64 {
        if self.vx == 0.0 && self.vy == 0.0 {
            fallback
        } else {
            self.vy.atan2(self.vx)
        }
    }
}

struct WorldFrame {
    rot: f64,
    ox: f64,
    oy: f64,
}

impl WorldFrame {
    fn track(&self, m: &LocalMotion, fallback_heading: f64, t0: f64, t1: f64) -> Result<Trajectory> {
        let n = ((t1 - t0) * POSE_RATE_HZ).ceil() as usize;
        let (s, c) = self.rot.sin_cos();
        let heading = m.heading(fallback_heading) + self.rot;
        let poses = (0..=n)
            .map(|k| {
                let t = t0 + k as f64 / POSE_RATE_HZ;
                let (x, y) = m.at(t);
                Pose::new(t, self.ox + c * x - s * y, self.oy + s * x + c * y, heading)
            })
            .collect();
        Trajectory::new(poses)
    }
}

fn side(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

fn layout(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> (LocalMotion, Option<LocalMotion>) {
    let t_pass = rng.gen_range(0.35..0.65) * cfg.duration;
    let ego = LocalMotion {
        x0: 0.0,
        y0: 0.0,
        vx: cfg.ego_speed,
        vy: 0.0,
        t_ref: t_pass,
    };
    let ev = match cfg.scenario {
        Scenario::Intersection => {
            let dir = side(rng);
            let lane = side(rng) * 0.5 * LANE_WIDTH;
            let offset = side(rng) * rng.gen_range(1.5..4.0);
            Some(LocalMotion {
                x0: lane,
                y0: 0.0,
                vx: 0.0,
                vy: dir * cfg.ev_speed,
                t_ref: t_pass + offset,
            })
        }
        Scenario::OppositeParallel => Some(LocalMotion {
            x0: rng.gen_range(-2.0..2.0),
            y0: side(rng) * LANE_WIDTH,
            vx: -cfg.ev_speed,
            vy: 0.0,
            t_ref: t_pass,
        }),
        Scenario::SameDirection => Some(LocalMotion {
            x0: rng.gen_range(-2.0..2.0),
            y0: side(rng) * LANE_WIDTH,
            vx: cfg.ev_speed,
            vy: 0.0,
            t_ref: t_pass,
        }),
        Scenario::NegativeOnly => None,
    };
    (ego, ev)
}

const STREAM_LAYOUT: u64 = 1;
const STREAM_NOISE: u64 = 2;

/// Synthesizes a full session. Deterministic in `cfg` (including the seed).
pub fn generate_session(cfg: &SceneConfig) -> Result<SessionData> {
    cfg.validate()?;
    let sr = SAMPLE_RATE as f64;
    let n = (cfg.duration * sr).round() as usize;
    let t_end = (n - 1) as f64 / sr;

    let mut layout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    layout_rng.set_stream(STREAM_LAYOUT);
    let (ego_m, ev_m) = layout(cfg, &mut layout_rng);
    let frame = WorldFrame {
        rot: layout_rng.gen_range(-PI..PI),
        ox: layout_rng.gen_range(-300.0..300.0),
        oy: layout_rng.gen_range(-300.0..300.0),
    };

    // Emission can precede reception by up to max distance / c.
    let max_dist = ev_m.map_or(0.0, |ev| {
        (0..=100)
            .map(|k| {
                let t = t_end * k as f64 / 100.0;
                let (a, b) = (ego_m.at(t), ev.at(t));
                (a.0 - b.0).hypot(a.1 - b.1)
            })
            .fold(0.0, f64::max)
    });
    let pre_roll = (max_dist / SPEED_OF_SOUND + 0.5).ceil();
    let track_t0 = -pre_roll;
    let track_t1 = t_end + 0.5;

    let ego_track = frame.track(&ego_m, 0.0, track_t0, track_t1)?;
    let ev_track = match &ev_m {
        Some(m) => Some(frame.track(m, FRAC_PI_2, track_t0, track_t1)?),
        None => None,
    };

    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(STREAM_NOISE);
    let noise = ambient_noise(N_CHANNELS, n, sr, &cfg.noise, &mut noise_rng);

    let (mixed, noise_power) = match &ev_track {
        Some(ev) => {
            let n_src = ((t_end - track_t0) * sr).ceil() as usize + 1;
            let source = TimedSignal {
                t0: track_t0,
                sr,
                samples: synth_siren_segment(&cfg.siren, track_t0, n_src, sr)?,
            };
            let clean = (0..N_CHANNELS)
                .map(|ch| {
                    let rx = cfg.mic.capsule_track(&ego_track, ch)?;
                    propagate(&source, ev, &rx, 0.0, n, SPEED_OF_SOUND)
                })
                .collect::<Result<Vec<_>>>()?;
            let mix = mix_scene(&clean, &noise, cfg.snr_db)?;
            let p = mean_power(&noise) * mix.noise_gain * mix.noise_gain;
            (mix, p)
        }
        None => {
            let target = 10f64.powf(cfg.noise_dbfs / 10.0);
            let gain = (target / mean_power(&noise)).sqrt();
            let mut audio: Vec<Vec<f64>> = noise.iter().map(|c| c.iter().map(|v| v * gain).collect()).collect();
            let clipped = clip(&mut audio);
            (
                MixedScene {
                    audio,
                    clipped,
                    noise_gain: gain,
                },
                target,
            )
        }
    };

    let audio = mixed
        .audio
        .iter()
        .map(|c| c.iter().map(|&v| v as f32).collect())
        .collect();
    Ok(SessionData {
        audio: Arc::new(audio),
        ego_track,
        ev_track,
        has_siren: ev_m.is_some(),
        session_tag: cfg.session_tag.clone(),
        clipped: mixed.clipped,
        noise_dbfs: if noise_power > 0.0 {
            10.0 * noise_power.log10()
        } else {
            f64::NEG_INFINITY
        },
    })
}
