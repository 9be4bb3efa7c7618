use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledWindow;
use crate::error::{Error, Result};

/// Relative sizes of the train/valid/test splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatio {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio {
            train: 8.0,
            valid: 1.0,
            test: 1.0,
        }
    }
}

impl SplitRatio {
    fn parts(&self) -> [f64; 3] {
        [self.train, self.valid, self.test]
    }

    fn validate(&self) -> Result<()> {
        if self.parts().iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::invalid("split ratios must be positive"));
        }
        Ok(())
    }
}

/// Which session tags went to which split.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SessionAssignment {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
    /// Sum over splits of |sample count - target count|.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<LabeledWindow>,
    pub valid: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    pub ratio: SplitRatio,
    pub sessions: SessionAssignment,
}

fn deviation(counts: &[usize; 3], targets: &[f64; 3]) -> f64 {
    counts.iter().zip(targets).map(|(&c, t)| (c as f64 - t).abs()).sum()
}

/// Assigns whole sessions to train/valid/test so that sample counts track
/// `ratio` as closely as possible. Every split receives at least one
/// session.
///
/// Sessions are visited largest first (ties shuffled by `seed`), each going
/// to the split furthest below its target; single moves and pairwise swaps
/// are then applied while they strictly reduce the deviation.
pub fn assign_sessions(sizes: &[(String, usize)], ratio: &SplitRatio, seed: u64) -> Result<SessionAssignment> {
    ratio.validate()?;
    if sizes.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 sessions to split, got {}",
            sizes.len()
        )));
    }
    let total: usize = sizes.iter().map(|s| s.1).sum();
    let rsum: f64 = ratio.parts().iter().sum();
    let targets = ratio.parts().map(|r| total as f64 * r / rsum);

    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| sizes[b].1.cmp(&sizes[a].1));

    let mut which = vec![0usize; sizes.len()];
    let mut counts = [0usize; 3];
    let mut members = [0usize; 3];
    for (pos, &i) in order.iter().enumerate() {
        let remaining = order.len() - pos;
        let empty: Vec<usize> = (0..3).filter(|&s| members[s] == 0).collect();
        let candidates: Vec<usize> = if remaining <= empty.len() { empty } else { (0..3).collect() };
        let best = candidates
            .iter()
            .copied()
            .fold(None::<usize>, |acc, s| match acc {
                Some(a) if targets[a] - counts[a] as f64 >= targets[s] - counts[s] as f64 => Some(a),
                _ => Some(s),
            })
            .expect("non-empty candidate list");
        which[i] = best;
        counts[best] += sizes[i].1;
        members[best] += 1;
    }

    // local refinement
    let mut current = deviation(&counts, &targets);
    'improve: loop {
        for i in 0..sizes.len() {
            let from = which[i];
            if members[from] > 1 {
                for to in (0..3).filter(|&s| s != from) {
                    let mut c = counts;
                    c[from] -= sizes[i].1;
                    c[to] += sizes[i].1;
                    let d = deviation(&c, &targets);
                    if d < current - 1e-9 {
                        which[i] = to;
                        counts = c;
                        members[from] -= 1;
                        members[to] += 1;
                        current = d;
                        continue 'improve;
                    }
                }
            }
            for j in (i + 1)..sizes.len() {
                let (a, b) = (which[i], which[j]);
                if a == b || sizes[i].1 == sizes[j].1 {
                    continue;
                }
                let mut c = counts;
                c[a] = c[a] - sizes[i].1 + sizes[j].1;
                c[b] = c[b] - sizes[j].1 + sizes[i].1;
                let d = deviation(&c, &targets);
                if d < current - 1e-9 {
                    which.swap(i, j);
                    counts = c;
                    current = d;
                    continue 'improve;
                }
            }
        }
        break;
    }

    let mut out = SessionAssignment {
        deviation: current,
        ..Default::default()
    };
    for (i, (tag, _)) in sizes.iter().enumerate() {
        match which[i] {
            0 => out.train.push(tag.clone()),
            1 => out.valid.push(tag.clone()),
            _ => out.test.push(tag.clone()),
        }
    }
    Ok(out)
}

fn session_sizes(samples: &[LabeledWindow]) -> Vec<(String, usize)> {
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for w in samples {
        *sizes.entry(&w.session_tag).or_default() += 1;
    }
    sizes.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn partition(samples: Vec<LabeledWindow>, ratio: SplitRatio, sessions: SessionAssignment) -> DatasetSplit {
    let mut split = DatasetSplit {
        train: Vec::new(),
        valid: Vec::new(),
        test: Vec::new(),
        ratio,
        sessions,
    };
    for w in samples {
        if split.sessions.valid.contains(&w.session_tag) {
            split.valid.push(w);
        } else if split.sessions.test.contains(&w.session_tag) {
            split.test.push(w);
        } else {
            split.train.push(w);
        }
    }
    split
}

/// Splits samples by session so that no session contributes to more than
/// one split.
pub fn split_by_session(samples: Vec<LabeledWindow>, ratio: SplitRatio, seed: u64) -> Result<DatasetSplit> {
    let sessions = assign_sessions(&session_sizes(&samples), &ratio, seed)?;
    Ok(partition(samples, ratio, sessions))
}

/// Like [`split_by_session`], but splits sessions containing sirens and
/// siren-free sessions separately so each split sees both classes.
pub fn split_by_session_stratified(samples: Vec<LabeledWindow>, ratio: SplitRatio, seed: u64) -> Result<DatasetSplit> {
    let positive: std::collections::BTreeSet<String> =
        samples.iter().filter(|w| w.is_siren()).map(|w| w.session_tag.clone()).collect();
    let (pos, neg): (Vec<_>, Vec<_>) = session_sizes(&samples)
        .into_iter()
        .partition(|(tag, _)| positive.contains(tag));
    let a = assign_sessions(&pos, &ratio, seed)?;
    let b = assign_sessions(&neg, &ratio, seed.wrapping_add(1))?;
    let merged = SessionAssignment {
        train: a.train.into_iter().chain(b.train).collect(),
        valid: a.valid.into_iter().chain(b.valid).collect(),
        test: a.test.into_iter().chain(b.test).collect(),
        deviation: a.deviation + b.deviation,
    };
    Ok(partition(samples, ratio, merged))
}
