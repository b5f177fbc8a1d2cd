//! Full pipeline on a synthetic 3x3 market: train, predict, calibrate, score.

use std::sync::Arc;

use lmpgan::calibration::{calibrate_zones, CalibrationConfig};
use lmpgan::evaluation::{frobenius_distance, spatial_correlation_matrix, ScoreReport, ScoreSettings, SPIKE_MULTIPLIER};
use lmpgan::gan::{GanArch, GanConfig, GanModel, StopReason, Trainer};
use lmpgan::market_data::{make_video, synth_market_with, window, GridLayout, NormStats, SynthParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const TRAIN_HOURS: usize = 90 * 24;
const TEST_HOURS: usize = 14 * 24;
const BIAS: f64 = -5.0;

fn gan_config() -> GanConfig {
    GanConfig {
        arch: GanArch::scaled_down(4),
        extra_channels: 2,
        max_iterations: 8000,
        eval_every: 250,
        patience: 2000,
        seed: 1,
        ..GanConfig::default()
    }
}

fn calibrated(pred: &[Vec<f64>], truth: &[Vec<f64>], cfg: &CalibrationConfig) -> Vec<Vec<f64>> {
    calibrate_zones(pred, truth, cfg)
        .unwrap()
        .into_iter()
        .map(|c| c.calibrated)
        .collect()
}

pub fn run() -> Outcome {
    let cal_cfg = CalibrationConfig::default();
    let warmup = cal_cfg.window;
    let layout = Arc::new(GridLayout::numbered(3, 3).unwrap());
    let raw = synth_market_with(&SynthParams::new(42, TRAIN_HOURS + warmup + TEST_HOURS, 0.01), Arc::clone(&layout)).unwrap();
    let stats = NormStats::fit(&raw.slice(0, TRAIN_HOURS).unwrap()).unwrap();
    let norm = make_video(&raw, &stats).unwrap();

    let cfg = gan_config();
    let samples = window(&norm.slice(0, TRAIN_HOURS).unwrap(), cfg.history).unwrap();
    let (train_set, val) = samples.split_at(samples.len() * 9 / 10);
    let model = GanModel::for_video(cfg, &norm).unwrap().with_norm(stats);
    let mut trainer = Trainer::new(model, train_set, val).unwrap();
    let stop = trainer.run(|_| Ok(())).unwrap();
    let iterations = trainer.iteration();
    let model = trainer.into_model();

    // Predictions cover the calibration warm-up and the test span.
    let pred = model.predict_zone_series(&norm, TRAIN_HOURS, raw.len()).unwrap();
    let truth = raw.rtlmp_by_zone();
    let truth_tail: Vec<Vec<f64>> = truth.iter().map(|t| t[TRAIN_HOURS..].to_vec()).collect();
    let test_start = TRAIN_HOURS + warmup;

    let gan_only: Vec<Vec<f64>> = pred.iter().map(|p| p[warmup..].to_vec()).collect();
    let pipeline = calibrated(&pred, &truth_tail, &cal_cfg);
    let biased: Vec<Vec<f64>> = pred.iter().map(|p| p.iter().map(|v| v + BIAS).collect()).collect();
    let biased_gan: Vec<Vec<f64>> = biased.iter().map(|p| p[warmup..].to_vec()).collect();
    let biased_pipeline = calibrated(&biased, &truth_tail, &cal_cfg);

    let score = |p: &[Vec<f64>]| ScoreReport::compute(layout.zones(), &truth, p, test_start, &ScoreSettings::default()).unwrap();
    let main = score(&pipeline);
    let gan = score(&gan_only);
    let biased_gan = score(&biased_gan);
    let biased_cal = score(&biased_pipeline);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let shuffled: Vec<Vec<f64>> = pipeline
        .iter()
        .map(|p| {
            let mut s = p.clone();
            s.shuffle(&mut rng);
            s
        })
        .collect();
    let control = frobenius_distance(&spatial_correlation_matrix(&shuffled).unwrap(), &main.corr_truth);

    let persistence = main.baselines.one_hour.percent;
    let beats = main.aggregate.percent < persistence;
    let gap = (biased_cal.aggregate.percent - main.aggregate.percent).abs();
    let recovers = gap <= 1.0;
    let spatial = main.frobenius < 0.5 * control;
    let recall = main
        .spike_recall()
        .map_or("n/a".to_string(), |r| format!("{:.0}% of {}", 100.0 * r, main.spikes));
    Outcome::new(
        beats && recovers && spatial,
        format!(
            "MAPE {:.2}% vs 1h persistence {persistence:.2}%; bias {BIAS}: calibrated {:.2}% ({gap:.2} pt from unbiased, <=1); Frobenius {:.3} vs shuffled {control:.3} (<0.5x)",
            main.aggregate.percent, biased_cal.aggregate.percent, main.frobenius
        ),
    )
    .note(format!(
        "GAN training: {iterations} iterations ({}), {} train / {} validation samples",
        match stop {
            StopReason::MaxIterations => "iteration cap",
            StopReason::EarlyStop => "early stop",
        },
        train_set.len(),
        val.len()
    ))
    .note(format!(
        "GAN alone {:.2}%, biased GAN alone {:.2}%, 24h persistence {:.2}%",
        gan.aggregate.percent, biased_gan.aggregate.percent, main.baselines.day.percent
    ))
    .note(format!("spike recall (>{SPIKE_MULTIPLIER}x trailing median): {recall}"))
}
