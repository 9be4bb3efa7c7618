use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::relative_angle_distance;
use crate::error::Result;
use crate::scene_sim::{SessionData, SAMPLE_RATE};

/// Ground-truth location of an active siren.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceLocation {
    /// Bearing in radians, `(-pi, pi]`, 0 ahead, left positive.
    pub theta: f64,
    /// Range in metres.
    pub distance: f64,
}

/// A view of `len` samples starting at `offset` in every channel of a
/// session's audio. Cloning is cheap; the audio is shared.
#[derive(Debug, Clone)]
pub struct WindowAudio {
    source: Arc<Vec<Vec<f32>>>,
    offset: usize,
    len: usize,
}

impl WindowAudio {
    pub fn new(source: Arc<Vec<Vec<f32>>>, offset: usize, len: usize) -> Self {
        assert!(source.iter().all(|c| offset + len <= c.len()), "window exceeds session audio");
        WindowAudio { source, offset, len }
    }

    /// Owns its samples directly.
    pub fn from_channels(channels: Vec<Vec<f32>>) -> Self {
        let len = channels.first().map_or(0, Vec::len);
        WindowAudio::new(Arc::new(channels), 0, len)
    }

    pub fn n_channels(&self) -> usize {
        self.source.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Sample offset of the slice within its session.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn channel(&self, ch: usize) -> &[f32] {
        &self.source[ch][self.offset..self.offset + self.len]
    }

    pub fn channels(&self) -> impl Iterator<Item = &[f32]> + '_ {
        (0..self.n_channels()).map(|c| self.channel(c))
    }
}

impl PartialEq for WindowAudio {
    fn eq(&self, other: &Self) -> bool {
        self.len == other.len && self.n_channels() == other.n_channels() && self.channels().eq(other.channels())
    }
}

/// One training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub audio: WindowAudio,
    pub t_end: f64,
    /// `Some` iff a siren is active in this window.
    pub source: Option<SourceLocation>,
    pub session_tag: String,
}

impl LabeledWindow {
    pub fn is_siren(&self) -> bool {
        self.source.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowParams {
    /// Length of one data point, seconds.
    pub window_len: f64,
    /// Spacing between consecutive data points, seconds.
    pub stride: f64,
    /// Trailing part of each data point fed to the model, seconds.
    pub input_len: f64,
    /// Positives farther than this are discarded, metres.
    pub max_distance: f64,
}

impl Default for WindowParams {
    fn default() -> Self {
        WindowParams {
            window_len: 1.5,
            stride: 0.17,
            input_len: 0.5,
            max_distance: 100.0,
        }
    }
}

fn to_samples(seconds: f64) -> usize {
    (seconds * SAMPLE_RATE as f64).round() as usize
}

impl WindowParams {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if !(self.window_len > 0.0 && self.stride > 0.0 && self.input_len > 0.0) {
            return Err(Error::invalid("window_len, stride and input_len must be positive"));
        }
        if self.input_len > self.window_len {
            return Err(Error::invalid("input_len cannot exceed window_len"));
        }
        if !(self.max_distance > 0.0) {
            return Err(Error::invalid("max_distance must be positive"));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        to_samples(self.window_len)
    }

    pub fn stride_samples(&self) -> usize {
        to_samples(self.stride)
    }

    pub fn input_samples(&self) -> usize {
        to_samples(self.input_len)
    }
}

/// Start sample of every full window in a recording of `n_samples`.
pub fn window_starts(n_samples: usize, params: &WindowParams) -> impl Iterator<Item = usize> {
    let (win, stride) = (params.window_samples(), params.stride_samples().max(1));
    let count = if n_samples >= win { (n_samples - win) / stride + 1 } else { 0 };
    (0..count).map(move |k| k * stride)
}

/// Slices a session into labeled windows. Windows start every `stride`;
/// the emitted audio is the trailing `input_len` of each window and the
/// label is taken at the window end.
pub fn window_dataset(session: &SessionData, params: &WindowParams) -> Result<Vec<LabeledWindow>> {
    params.validate()?;
    let sr = SAMPLE_RATE as f64;
    let (win, input) = (params.window_samples(), params.input_samples());
    let mut out = Vec::new();
    for start in window_starts(session.n_samples(), params) {
        let end = start + win;
        let t_end = end as f64 / sr;
        let source = match &session.ev_track {
            Some(ev) if session.has_siren => {
                let (theta, distance) = relative_angle_distance(&session.ego_track.pose_at(t_end)?, &ev.pose_at(t_end)?);
                if distance > params.max_distance {
                    continue;
                }
                Some(SourceLocation { theta, distance })
            }
            _ => None,
        };
        out.push(LabeledWindow {
            audio: WindowAudio::new(Arc::clone(&session.audio), end - input, input),
            t_end,
            source,
            session_tag: session.session_tag.clone(),
        });
    }
    Ok(out)
}
