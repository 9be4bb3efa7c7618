//! On-disk session layout.
//!
//! A session directory holds three files:
//!
//! * `audio.wav`: 8 channels, 48 kHz, 32-bit float PCM, interleaved.
//! * `poses.txt`: one `vehicle t x y heading` record per line, where
//!   `vehicle` is `ego` or `ev`; numbers carry six decimals.
//! * `manifest.toml`: scenario, seed, snr_db, has_siren, session_tag and a
//!   few derived fields.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::scenario::{Scenario, SceneConfig, SessionData};
use super::trajectory::{Pose, Trajectory};
use super::{N_CHANNELS, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const AUDIO_FILE: &str = "audio.wav";
pub const POSES_FILE: &str = "poses.txt";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionManifest {
    pub scenario: Scenario,
    pub seed: u64,
    pub snr_db: f64,
    pub has_siren: bool,
    pub session_tag: String,
    pub duration: f64,
    pub sample_rate: u32,
    pub channels: usize,
    pub clipped: bool,
    pub noise_dbfs: f64,
}

impl SessionManifest {
    pub fn new(cfg: &SceneConfig, session: &SessionData) -> Self {
        SessionManifest {
            scenario: cfg.scenario,
            seed: cfg.seed,
            snr_db: cfg.snr_db,
            has_siren: session.has_siren,
            session_tag: session.session_tag.clone(),
            duration: session.duration(),
            sample_rate: SAMPLE_RATE,
            channels: N_CHANNELS,
            clipped: session.clipped,
            noise_dbfs: session.noise_dbfs,
        }
    }
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `audio` as 32-bit float interleaved WAV at 48 kHz.
pub fn write_wav(path: &Path, audio: &[Vec<f32>]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: audio.len() as u16,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(wav_err(path))?;
    let n = audio.first().map_or(0, Vec::len);
    for i in 0..n {
        for ch in audio {
            w.write_sample(ch[i]).map_err(wav_err(path))?;
        }
    }
    w.finalize().map_err(wav_err(path))
}

/// Reads an 8-channel 48 kHz float WAV into per-channel rows.
pub fn read_wav(path: &Path) -> Result<Vec<Vec<f32>>> {
    let reader = hound::WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    if spec.channels as usize != N_CHANNELS || spec.sample_rate != SAMPLE_RATE {
        return Err(Error::invalid(format!(
            "{}: expected {N_CHANNELS} channels at {SAMPLE_RATE} Hz, found {} at {} Hz",
            path.display(),
            spec.channels,
            spec.sample_rate
        )));
    }
    let chans = spec.channels as usize;
    let mut out = vec![Vec::with_capacity(reader.len() as usize / chans); chans];
    match spec.sample_format {
        hound::SampleFormat::Float => {
            for (i, s) in reader.into_samples::<f32>().enumerate() {
                out[i % chans].push(s.map_err(wav_err(path))?);
            }
        }
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            for (i, s) in reader.into_samples::<i32>().enumerate() {
                out[i % chans].push(s.map_err(wav_err(path))? as f32 * scale);
            }
        }
    }
    Ok(out)
}

fn write_poses(out: &mut String, vehicle: &str, track: &Trajectory) {
    for p in track.poses() {
        let _ = writeln!(out, "{vehicle} {:.6} {:.6} {:.6} {:.6}", p.t, p.x, p.y, p.heading);
    }
}

/// Parses a pose log into `(ego, ev)` tracks.
pub fn parse_poses(path: &Path, text: &str) -> Result<(Trajectory, Option<Trajectory>)> {
    let mut ego = Vec::new();
    let mut ev = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::format("pose log", path, format!("line {}: {line:?}", lineno + 1));
        if fields.len() != 5 {
            return Err(bad());
        }
        let nums: Vec<f64> = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let pose = Pose::new(nums[0], nums[1], nums[2], nums[3]);
        match fields[0] {
            "ego" => ego.push(pose),
            "ev" => ev.push(pose),
            _ => return Err(bad()),
        }
    }
    let ego = Trajectory::new(ego).map_err(|e| Error::format("pose log", path, format!("ego track: {e}")))?;
    let ev = if ev.is_empty() {
        None
    } else {
        Some(Trajectory::new(ev).map_err(|e| Error::format("pose log", path, format!("ev track: {e}")))?)
    };
    Ok((ego, ev))
}

/// Writes a session directory.
pub fn write_session(dir: &Path, cfg: &SceneConfig, session: &SessionData) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_wav(&dir.join(AUDIO_FILE), &session.audio)?;

    let mut poses = String::from("# vehicle t x y heading\n");
    write_poses(&mut poses, "ego", &session.ego_track);
    if let Some(ev) = &session.ev_track {
        write_poses(&mut poses, "ev", ev);
    }
    let p = dir.join(POSES_FILE);
    fs::write(&p, poses).map_err(|e| Error::io(&p, e))?;

    let manifest = SessionManifest::new(cfg, session);
    let text = toml::to_string(&manifest).expect("manifest serializes");
    let p = dir.join(MANIFEST_FILE);
    fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

pub fn read_manifest(dir: &Path) -> Result<SessionManifest> {
    let p = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    toml::from_str(&text).map_err(|e| Error::format("session manifest", &p, e.to_string()))
}

/// Loads a session directory written by [`write_session`].
pub fn read_session(dir: &Path) -> Result<(SessionManifest, SessionData)> {
    let manifest = read_manifest(dir)?;
    let audio = read_wav(&dir.join(AUDIO_FILE))?;
    let p = dir.join(POSES_FILE);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let (ego_track, ev_track) = parse_poses(&p, &text)?;
    if manifest.has_siren && ev_track.is_none() {
        return Err(Error::format("pose log", &p, "positive session without ev track"));
    }
    let session = SessionData {
        audio: Arc::new(audio),
        ego_track,
        ev_track: if manifest.has_siren { ev_track } else { None },
        has_siren: manifest.has_siren,
        session_tag: manifest.session_tag.clone(),
        clipped: manifest.clipped,
        noise_dbfs: manifest.noise_dbfs,
    };
    Ok((manifest, session))
}
