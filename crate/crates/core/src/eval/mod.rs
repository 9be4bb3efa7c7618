//! Accuracy, wrap-corrected angle error, distance error, per-distance-bin
//! breakdowns, summary statistics and latency measurement.

mod report;

use std::f64::consts::PI;
use std::time::Instant;

pub use report::{box_stats, error_distributions, format_box_stats, format_metrics_csv, format_summary, svg_box_plot, BoxStats, METRICS_HEADER};

use crate::model::ModelOutput;
use crate::train::Target;

/// Distances are reported within `[0, MAX_REPORTED_DISTANCE]` meters.
pub const MAX_REPORTED_DISTANCE: f64 = 150.0;
pub const N_BINS: usize = 10;
pub const BIN_WIDTH: f64 = 10.0;

/// Absolute bearing error in degrees, wrapped the short way round.
pub fn angle_abs_error(theta_hat: f64, theta: f64) -> f64 {
    let mut e = (theta_hat - theta).abs() % (2.0 * PI);
    if e > PI {
        e = 2.0 * PI - e;
    }
    e.to_degrees()
}

pub fn clamp_distance(d: f64) -> f64 {
    d.clamp(0.0, MAX_REPORTED_DISTANCE)
}

pub fn classify(p_siren: f64, threshold: f64) -> bool {
    p_siren >= threshold
}

/// Post-processed model output for one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub p_siren: f64,
    pub theta_hat: f64,
    /// Clamped to the reporting range.
    pub distance: f64,
}

impl From<&ModelOutput> for Prediction {
    fn from(o: &ModelOutput) -> Self {
        Prediction {
            p_siren: o.p_siren,
            theta_hat: o.theta_hat,
            distance: clamp_distance(o.distance),
        }
    }
}

/// Index of the 10 m bin holding a ground-truth distance; 100 m falls in
/// the last bin.
pub fn distance_bin(d: f64) -> Option<usize> {
    if !(0.0..=N_BINS as f64 * BIN_WIDTH).contains(&d) {
        return None;
    }
    Some(((d / BIN_WIDTH) as usize).min(N_BINS - 1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinMetrics {
    pub lo: f64,
    pub hi: f64,
    /// Positives whose true distance falls in the bin.
    pub count: usize,
    pub detected: usize,
    /// Percent; `None` for an empty bin.
    pub recall: Option<f64>,
    /// Over true positives only; `None` when there are none.
    pub angle_mae_deg: Option<f64>,
    pub distance_mae_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub bins: Vec<BinMetrics>,
}

impl MetricsTable {
    pub fn total_positives(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Per-bin recall over positives and angle/distance MAE over detected
/// positives.
pub fn binned_metrics(preds: &[Prediction], labels: &[Target], threshold: f64) -> MetricsTable {
    let mut count = [0usize; N_BINS];
    let mut ang: Vec<Vec<f64>> = vec![Vec::new(); N_BINS];
    let mut dist: Vec<Vec<f64>> = vec![Vec::new(); N_BINS];
    for (p, t) in preds.iter().zip(labels) {
        if !t.is_siren {
            continue;
        }
        let Some(b) = distance_bin(t.distance) else { continue };
        count[b] += 1;
        if classify(p.p_siren, threshold) {
            ang[b].push(angle_abs_error(p.theta_hat, t.theta));
            dist[b].push((p.distance - t.distance).abs());
        }
    }
    let bins = (0..N_BINS)
        .map(|b| BinMetrics {
            lo: b as f64 * BIN_WIDTH,
            hi: (b + 1) as f64 * BIN_WIDTH,
            count: count[b],
            detected: ang[b].len(),
            recall: (count[b] > 0).then(|| 100.0 * ang[b].len() as f64 / count[b] as f64),
            angle_mae_deg: mean(&ang[b]),
            distance_mae_m: mean(&dist[b]),
        })
        .collect();
    MetricsTable { bins }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub runs: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    /// Over every window.
    pub accuracy: f64,
    pub n_windows: usize,
    /// Distance range (meters) for the remaining fields.
    pub range: (f64, f64),
    pub n_in_range: usize,
    pub recall: Option<f64>,
    pub angle_median_deg: Option<f64>,
    pub angle_mean_deg: Option<f64>,
    pub distance_median_m: Option<f64>,
    pub distance_mean_m: Option<f64>,
    pub latency: Option<LatencyStats>,
}

/// Accuracy over all windows; recall and error medians/means over
/// positives whose true distance lies in `range` (errors over detected
/// ones, as in the binned table).
pub fn summary_stats(preds: &[Prediction], labels: &[Target], threshold: f64, range: (f64, f64)) -> SummaryStats {
    let n = preds.len().min(labels.len());
    let correct = preds
        .iter()
        .zip(labels)
        .filter(|(p, t)| classify(p.p_siren, threshold) == t.is_siren)
        .count();
    let (mut ang, mut dist, mut n_in) = (Vec::new(), Vec::new(), 0usize);
    for (p, t) in preds.iter().zip(labels) {
        if !t.is_siren || t.distance < range.0 || t.distance > range.1 {
            continue;
        }
        n_in += 1;
        if classify(p.p_siren, threshold) {
            ang.push(angle_abs_error(p.theta_hat, t.theta));
            dist.push((p.distance - t.distance).abs());
        }
    }
    SummaryStats {
        accuracy: if n > 0 { correct as f64 / n as f64 } else { 0.0 },
        n_windows: n,
        range,
        n_in_range: n_in,
        recall: (n_in > 0).then(|| ang.len() as f64 / n_in as f64),
        angle_median_deg: median(&ang),
        angle_mean_deg: mean(&ang),
        distance_median_m: median(&dist),
        distance_mean_m: mean(&dist),
        latency: None,
    }
}

/// Times `f` after `warmup` discarded calls; reports the median and 95th
/// percentile over `runs` calls (at least 100).
pub fn measure_latency<E>(mut f: impl FnMut() -> Result<(), E>, warmup: usize, runs: usize) -> Result<LatencyStats, E> {
    for _ in 0..warmup {
        f()?;
    }
    let runs = runs.max(100);
    let mut ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        f()?;
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    ms.sort_by(f64::total_cmp);
    Ok(LatencyStats {
        runs,
        median_ms: median(&ms).unwrap_or(0.0),
        p95_ms: report::quantile(&ms, 0.95),
    })
}
