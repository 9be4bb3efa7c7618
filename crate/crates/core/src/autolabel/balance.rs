use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledWindow;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceParams {
    /// Half-width of the front and rear sectors, degrees.
    pub sector_halfwidth_deg: f64,
    /// Probability of keeping an in-sector positive.
    pub keep_ratio: f64,
    pub seed: u64,
}

impl Default for BalanceParams {
    fn default() -> Self {
        BalanceParams {
            sector_halfwidth_deg: 15.0,
            keep_ratio: 0.5,
            seed: 0,
        }
    }
}

impl BalanceParams {
    pub fn apply(&self, samples: Vec<LabeledWindow>) -> Result<Vec<LabeledWindow>> {
        balance_directions(samples, self.sector_halfwidth_deg.to_radians(), self.keep_ratio, self.seed)
    }
}

/// Whether `theta` lies within `halfwidth` of dead ahead or dead astern.
pub(crate) fn in_front_or_rear(theta: f64, halfwidth: f64) -> bool {
    theta.abs() <= halfwidth || (PI - theta.abs()) <= halfwidth
}

/// Thins positives whose source is straight ahead or behind: each one is
/// kept with probability `keep_ratio`. Everything else passes through in
/// order.
pub fn balance_directions(
    samples: Vec<LabeledWindow>,
    sector_halfwidth: f64,
    keep_ratio: f64,
    seed: u64,
) -> Result<Vec<LabeledWindow>> {
    if !(0.0..=1.0).contains(&keep_ratio) {
        return Err(Error::invalid(format!("keep_ratio {keep_ratio} outside [0, 1]")));
    }
    if !(sector_halfwidth >= 0.0) {
        return Err(Error::invalid("sector half-width must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(samples
        .into_iter()
        .filter(|w| match w.source {
            Some(src) if in_front_or_rear(src.theta, sector_halfwidth) => rng.gen_bool(keep_ratio),
            _ => true,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autolabel::{SourceLocation, WindowAudio};

    fn sample(theta: Option<f64>) -> LabeledWindow {
        LabeledWindow {
            audio: WindowAudio::from_channels(vec![]),
            t_end: 0.0,
            source: theta.map(|theta| SourceLocation { theta, distance: 10.0 }),
            session_tag: "x".into(),
        }
    }

    #[test]
    fn keep_all_is_identity() {
        let v: Vec<_> = (0..50).map(|i| sample(Some(i as f64 * 0.01))).collect();
        assert_eq!(balance_directions(v.clone(), 0.3, 1.0, 4).unwrap(), v);
    }

    #[test]
    fn keep_none_removes_sector() {
        let mut v: Vec<_> = (0..30).map(|_| sample(Some(0.0))).collect();
        v.extend((0..5).map(|_| sample(None)));
        let out = balance_directions(v, 15f64.to_radians(), 0.0, 1).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|w| !w.is_siren()));
    }

    #[test]
    fn sector_density_halves() {
        let n = 20000;
        let v: Vec<_> = (0..n)
            .map(|i| sample(Some(-PI + 2.0 * PI * (i as f64 + 0.5) / n as f64)))
            .collect();
        let hw = 15f64.to_radians();
        let sector_in = v.iter().filter(|w| in_front_or_rear(w.source.unwrap().theta, hw)).count();
        let out = balance_directions(v, hw, 0.5, 9).unwrap();
        // counting oracle
        let in_sector = out.iter().filter(|w| in_front_or_rear(w.source.unwrap().theta, hw)).count() as f64;
        let side = out.len() as f64 - in_sector;
        let sector_width = 4.0 * hw;
        let side_density = side / (2.0 * PI - sector_width);
        let expected = 0.5 * side_density * sector_width;
        let sigma = (sector_in as f64 * 0.25).sqrt();
        assert!((in_sector - expected).abs() < 3.0 * sigma, "{in_sector} vs {expected} (sigma {sigma})");
        assert_eq!(side as usize, n - sector_in);
    }

    #[test]
    fn rejects_bad_ratio() {
        assert!(balance_directions(vec![], 0.1, 1.5, 0).is_err());
    }
}
