use std::fmt::Write as _;

use super::{angle_abs_error, classify, distance_bin, MetricsTable, Prediction, SummaryStats, BIN_WIDTH, N_BINS};
use crate::train::Target;

pub const METRICS_HEADER: &str = "metric,0-10,10-20,20-30,30-40,40-50,50-60,60-70,70-80,80-90,90-100";

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Box-plot summary; whiskers reach the furthest points within 1.5 IQR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub n: usize,
    pub whisker_lo: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_hi: f64,
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&s, 0.25), quantile(&s, 0.5), quantile(&s, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let whisker_lo = s.iter().copied().find(|&v| v >= lo_fence).unwrap_or(s[0]);
    let whisker_hi = s.iter().rev().copied().find(|&v| v <= hi_fence).unwrap_or(s[s.len() - 1]);
    Some(BoxStats {
        n: s.len(),
        whisker_lo,
        q1,
        median,
        q3,
        whisker_hi,
    })
}

/// Per-bin angle (degrees) and distance (meters) errors of detected
/// positives.
pub fn error_distributions(preds: &[Prediction], labels: &[Target], threshold: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut ang = vec![Vec::new(); N_BINS];
    let mut dist = vec![Vec::new(); N_BINS];
    for (p, t) in preds.iter().zip(labels) {
        if !t.is_siren || !classify(p.p_siren, threshold) {
            continue;
        }
        if let Some(b) = distance_bin(t.distance) {
            ang[b].push(angle_abs_error(p.theta_hat, t.theta));
            dist[b].push((p.distance - t.distance).abs());
        }
    }
    (ang, dist)
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

/// Table with one row per metric and one column per 10 m bin.
pub fn format_metrics_csv(table: &MetricsTable) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    type Cell = fn(&super::BinMetrics) -> String;
    let rows: [(&str, Cell); 4] = [
        ("recall_pct", |b| cell(b.recall)),
        ("angle_mae_deg", |b| cell(b.angle_mae_deg)),
        ("distance_mae_m", |b| cell(b.distance_mae_m)),
        ("count", |b| b.count.to_string()),
    ];
    for (name, f) in rows {
        let cells: Vec<String> = table.bins.iter().map(f).collect();
        let _ = writeln!(out, "{name},{}", cells.join(","));
    }
    out
}

pub fn format_summary(s: &SummaryStats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "windows {}", s.n_windows);
    let _ = writeln!(out, "accuracy {:.4}", s.accuracy);
    let _ = writeln!(out, "range_m {}-{}", s.range.0, s.range.1);
    let _ = writeln!(out, "positives_in_range {}", s.n_in_range);
    let _ = writeln!(out, "recall {}", cell(s.recall));
    let _ = writeln!(out, "angle_median_deg {}", cell(s.angle_median_deg));
    let _ = writeln!(out, "angle_mean_deg {}", cell(s.angle_mean_deg));
    let _ = writeln!(out, "distance_median_m {}", cell(s.distance_median_m));
    let _ = writeln!(out, "distance_mean_m {}", cell(s.distance_mean_m));
    if let Some(l) = s.latency {
        let _ = writeln!(out, "latency_median_ms {:.3}", l.median_ms);
        let _ = writeln!(out, "latency_p95_ms {:.3}", l.p95_ms);
    }
    out
}

/// One line per bin: `bin n whisker_lo q1 median q3 whisker_hi`.
pub fn format_box_stats(per_bin: &[Vec<f64>]) -> String {
    let mut out = String::from("bin n whisker_lo q1 median q3 whisker_hi\n");
    for (b, v) in per_bin.iter().enumerate() {
        let label = format!("{}-{}", b as f64 * BIN_WIDTH, (b + 1) as f64 * BIN_WIDTH);
        match box_stats(v) {
            Some(s) => {
                let _ = writeln!(
                    out,
                    "{label} {} {:.4} {:.4} {:.4} {:.4} {:.4}",
                    s.n, s.whisker_lo, s.q1, s.median, s.q3, s.whisker_hi
                );
            }
            None => {
                let _ = writeln!(out, "{label} 0 NA NA NA NA NA");
            }
        }
    }
    out
}

/// Box plot per distance bin as a standalone SVG document.
pub fn svg_box_plot(title: &str, y_label: &str, per_bin: &[Vec<f64>]) -> String {
    let (w, h) = (640.0, 360.0);
    let (left, right, top, bottom) = (60.0, 20.0, 30.0, 50.0);
    let stats: Vec<Option<BoxStats>> = per_bin.iter().map(|v| box_stats(v)).collect();
    let y_max = stats
        .iter()
        .flatten()
        .map(|s| s.whisker_hi)
        .fold(1e-9f64, f64::max)
        * 1.1;
    let plot_h = h - top - bottom;
    let slot = (w - left - right) / per_bin.len().max(1) as f64;
    let y = |v: f64| top + plot_h * (1.0 - v / y_max);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{title}</text>"#, w / 2.0);
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/><line x1="{left}" y1="{0}" x2="{}" y2="{0}" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"#, left - 4.0, y(v) + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {0:.1})" text-anchor="middle">{y_label}</text>"#,
        top + plot_h / 2.0
    );
    for (b, st) in stats.iter().enumerate() {
        let cx = left + slot * (b as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}-{}</text>"#,
            h - bottom + 16.0,
            b as f64 * BIN_WIDTH,
            (b + 1) as f64 * BIN_WIDTH
        );
        let Some(st) = st else { continue };
        let bw = slot * 0.5;
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
            y(st.whisker_lo),
            y(st.whisker_hi)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{bw:.1}" height="{:.1}" fill="#9ecae1" stroke="black"/>"##,
            cx - bw / 2.0,
            y(st.q3),
            (y(st.q1) - y(st.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{1:.1}" stroke="black" stroke-width="2"/>"#,
            cx - bw / 2.0,
            y(st.median),
            cx + bw / 2.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">true distance (m)</text>"#,
        left + (w - left - right) / 2.0,
        h - 10.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::binned_metrics;

    #[test]
    fn quantiles_and_whiskers() {
        let v: Vec<f64> = (1..=9).map(f64::from).chain([100.0]).collect();
        let b = box_stats(&v).unwrap();
        assert_eq!(b.n, 10);
        assert!((b.median - 5.5).abs() < 1e-12);
        assert!((b.q1 - 3.25).abs() < 1e-12);
        assert!((b.q3 - 7.75).abs() < 1e-12);
        // 100 is an outlier beyond q3 + 1.5 IQR
        assert_eq!(b.whisker_hi, 9.0);
        assert_eq!(b.whisker_lo, 1.0);
        assert!(box_stats(&[]).is_none());
    }

    #[test]
    fn csv_layout() {
        let t = vec![Target::positive(0.0, 5.0), Target::positive(0.0, 95.0)];
        let p = vec![
            Prediction {
                p_siren: 0.9,
                theta_hat: 0.1,
                distance: 7.0,
            },
            Prediction {
                p_siren: 0.2,
                theta_hat: 0.0,
                distance: 95.0,
            },
        ];
        let csv = format_metrics_csv(&binned_metrics(&p, &t, 0.5));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("recall_pct,100.0000,NA,"));
        assert!(lines[1].ends_with(",0.0000"));
        assert!(lines[3].starts_with("distance_mae_m,2.0000,"));
        assert_eq!(lines[4], "count,1,0,0,0,0,0,0,0,0,1");
        let svg = svg_box_plot("t", "deg", &error_distributions(&p, &t, 0.5).0);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let text = format_box_stats(&error_distributions(&p, &t, 0.5).1);
        assert!(text.lines().nth(1).unwrap().starts_with("0-10 1 2.0000"));
    }
}
