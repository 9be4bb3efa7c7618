use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use siren_core::config::RunConfig;
use siren_core::eval::Prediction;
use siren_core::model::Model;
use siren_core::pipeline::{self, Detector, InferRecord};
use siren_core::train::Target;

fn smoke() -> RunConfig {
    RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml")).unwrap()
}

fn records(detector: &Detector, audio: Vec<Vec<f32>>, cfg: &RunConfig) -> Vec<InferRecord> {
    let mut out = Vec::new();
    pipeline::infer_audio(detector, Arc::new(audio), &cfg.label.window, |r| {
        out.push(r);
        Ok(())
    })
    .unwrap();
    out
}

#[test]
fn streaming_ticks_ignore_future_samples() {
    let cfg = smoke();
    let detector = Detector::new(Model::new(cfg.model.clone()).unwrap(), cfg.features).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 4 * 48_000;
    let audio: Vec<Vec<f32>> = (0..8).map(|_| (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()).collect();
    let base = records(&detector, audio.clone(), &cfg);
    assert_eq!(base.len(), 1 + ((4.0f64 - 1.5) / 0.17 + 1e-9).floor() as usize);

    let cut = base[5].t;
    let mut altered = audio;
    let from = (cut * 48_000.0).round() as usize;
    altered.iter_mut().for_each(|ch| ch[from..].iter_mut().for_each(|v| *v = -*v * 3.0));
    let after = records(&detector, altered, &cfg);
    for (a, b) in base.iter().zip(&after) {
        let same = (a.p_siren, a.theta_deg, a.distance_m) == (b.p_siren, b.theta_deg, b.distance_m);
        if a.t <= cut {
            assert!(same, "tick at {} saw samples after {cut}", a.t);
        }
    }
    assert!(base.iter().zip(&after).any(|(a, b)| a.t > cut && a.p_siren != b.p_siren));
}

#[test]
fn oracle_predictions_give_zero_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let labels: Vec<Target> = (0..200)
        .map(|i| {
            if i % 3 == 0 {
                Target::NEGATIVE
            } else {
                Target::positive(rng.gen_range(-PI..PI), rng.gen_range(0.0..100.0))
            }
        })
        .collect();
    let preds: Vec<Prediction> = labels
        .iter()
        .map(|t| Prediction {
            p_siren: if t.is_siren { 1.0 } else { 0.0 },
            theta_hat: t.theta,
            distance: t.distance,
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let report = pipeline::write_eval_outputs(dir.path(), &preds, &labels, 0.5, (10.0, 50.0), None).unwrap();
    assert_eq!(report.summary.accuracy, 1.0);
    assert_eq!(report.summary.recall, Some(1.0));
    assert_eq!(report.summary.angle_mean_deg, Some(0.0));
    assert_eq!(report.summary.distance_mean_m, Some(0.0));
    for b in &report.table.bins {
        assert_eq!(b.recall, Some(100.0));
        assert_eq!(b.angle_mae_deg, Some(0.0));
        assert_eq!(b.distance_mae_m, Some(0.0));
    }
    let csv = fs::read_to_string(dir.path().join(pipeline::METRICS_FILE)).unwrap();
    let mae_rows: Vec<&str> = csv.lines().filter(|l| l.contains("_mae_")).collect();
    assert_eq!(mae_rows.len(), 2);
    for row in mae_rows {
        assert!(row.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0), "{row}");
    }
}

#[test]
fn zero_weight_tasks_read_na_in_history() {
    let mut cfg = smoke();
    let dir = tempfile::tempdir().unwrap();
    cfg.out_dir = dir.path().to_path_buf();
    cfg.train.weights = siren_core::train::LossWeights::new(1.0, 0.0, 0.0);
    cfg.train.epochs = 1;
    pipeline::simulate(&cfg).unwrap();
    pipeline::label(&cfg).unwrap();
    pipeline::train(&cfg, None).unwrap();
    let text = fs::read_to_string(pipeline::model_dir(&cfg).join(pipeline::HISTORY_FILE)).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    for (h, v) in header.iter().zip(&row) {
        let zero_weight = h.contains("angle") || h.contains("distance");
        assert_eq!(*v == "NA", zero_weight, "{h} = {v}");
    }
}
