//! Label files and the dataset manifest.
//!
//! `labels.txt` holds one record per window:
//!
//! ```text
//! session_tag t_end is_siren theta distance audio_offset
//! ```
//!
//! `is_siren` is `1` or `0`; `theta` (radians) and `distance` (metres) are
//! `NA` for negatives; `audio_offset` is the first sample of the model input
//! within the session audio. Lines starting with `#` are comments.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DatasetSplit, LabeledWindow, SourceLocation, SplitRatio, WindowAudio};
use crate::error::{Error, Result};
use crate::scene_sim::SessionData;

pub const LABELS_FILE: &str = "labels.txt";
pub const DATASET_MANIFEST: &str = "dataset.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub session_tag: String,
    pub t_end: f64,
    pub source: Option<SourceLocation>,
    pub audio_offset: usize,
}

impl From<&LabeledWindow> for LabelRecord {
    fn from(w: &LabeledWindow) -> Self {
        LabelRecord {
            session_tag: w.session_tag.clone(),
            t_end: w.t_end,
            source: w.source,
            audio_offset: w.audio.offset(),
        }
    }
}

pub fn format_labels<'a>(windows: impl IntoIterator<Item = &'a LabeledWindow>) -> String {
    let mut out = String::from("# session_tag t_end is_siren theta distance audio_offset\n");
    for w in windows {
        let r = LabelRecord::from(w);
        let _ = match r.source {
            Some(s) => writeln!(
                out,
                "{} {:.6} 1 {:.9} {:.6} {}",
                r.session_tag, r.t_end, s.theta, s.distance, r.audio_offset
            ),
            None => writeln!(out, "{} {:.6} 0 NA NA {}", r.session_tag, r.t_end, r.audio_offset),
        };
    }
    out
}

pub fn write_labels<'a>(path: &Path, windows: impl IntoIterator<Item = &'a LabeledWindow>) -> Result<()> {
    fs::write(path, format_labels(windows)).map_err(|e| Error::io(path, e))
}

pub fn parse_labels(path: &Path, text: &str) -> Result<Vec<LabelRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |why: &str| Error::format("label file", path, format!("line {}: {why}: {line:?}", lineno + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let source = match f[2] {
            "1" => Some(SourceLocation {
                theta: num(f[3])?,
                distance: num(f[4])?,
            }),
            "0" => None,
            _ => return Err(bad("is_siren must be 0 or 1")),
        };
        out.push(LabelRecord {
            session_tag: f[0].to_string(),
            t_end: num(f[1])?,
            source,
            audio_offset: f[5].parse().map_err(|_| bad("bad audio offset"))?,
        });
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(path, &text)
}

/// Rebuilds windows from label records and the sessions they refer to.
pub fn windows_from_records(
    records: &[LabelRecord],
    sessions: &HashMap<String, SessionData>,
    input_samples: usize,
) -> Result<Vec<LabeledWindow>> {
    records
        .iter()
        .map(|r| {
            let s = sessions
                .get(&r.session_tag)
                .ok_or_else(|| Error::invalid(format!("label refers to missing session {:?}", r.session_tag)))?;
            if r.audio_offset + input_samples > s.n_samples() {
                return Err(Error::invalid(format!(
                    "label at offset {} runs past the end of session {:?}",
                    r.audio_offset, r.session_tag
                )));
            }
            Ok(LabeledWindow {
                audio: WindowAudio::new(Arc::clone(&s.audio), r.audio_offset, input_samples),
                t_end: r.t_end,
                source: r.source,
                session_tag: r.session_tag.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// Split membership written next to the label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub ratio: SplitRatio,
    pub deviation: f64,
    pub input_samples: usize,
    pub counts: SplitCounts,
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetManifest {
    pub fn new(split: &DatasetSplit, input_samples: usize) -> Self {
        DatasetManifest {
            ratio: split.ratio,
            deviation: split.sessions.deviation,
            input_samples,
            counts: SplitCounts {
                train: split.train.len(),
                valid: split.valid.len(),
                test: split.test.len(),
            },
            train: split.sessions.train.clone(),
            valid: split.sessions.valid.clone(),
            test: split.sessions.test.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format("dataset manifest", path, e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_round_trip() {
        let audio = Arc::new(vec![vec![0f32; 100]; 8]);
        let windows = vec![
            LabeledWindow {
                audio: WindowAudio::new(Arc::clone(&audio), 10, 50),
                t_end: 1.5,
                source: Some(SourceLocation { theta: -0.5, distance: 42.25 }),
                session_tag: "a".into(),
            },
            LabeledWindow {
                audio: WindowAudio::new(audio, 40, 50),
                t_end: 1.67,
                source: None,
                session_tag: "b".into(),
            },
        ];
        let text = format_labels(&windows);
        assert!(text.contains("b 1.670000 0 NA NA 40"));
        let recs = parse_labels(Path::new("mem"), &text).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].source.unwrap().distance, 42.25);
        assert_eq!(recs[1].audio_offset, 40);
        assert!(parse_labels(Path::new("mem"), "a 1.0 2 NA NA 0").is_err());
    }
}
