//! Capacity checks on tiny training sets.

use std::sync::Arc;

use lmpgan::gan::{GanArch, GanConfig, GanModel, Trainer};
use lmpgan::market_data::{make_video, synth_market, window, GridLayout, MarketVideo, NormStats, Sample};
use lmpgan::nn::Mode;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const ITERATIONS: u64 = 2000;
const SET_SIZE: usize = 64;

fn data() -> (MarketVideo, Vec<Sample>) {
    let layout = Arc::new(GridLayout::numbered(3, 3).unwrap());
    let raw = synth_market(17, layout, SET_SIZE + 4, 0.0).unwrap();
    let norm = make_video(&raw, &NormStats::fit(&raw).unwrap()).unwrap();
    let samples = window(&norm, 4).unwrap();
    (norm, samples)
}

fn config() -> GanConfig {
    GanConfig {
        arch: GanArch::scaled_down(4),
        max_iterations: ITERATIONS,
        eval_every: ITERATIONS,
        patience: ITERATIONS,
        seed: 9,
        ..GanConfig::default()
    }
}

/// Mean per-sample squared error over `data`, generator in training mode
/// with the whole set as one batch.
fn train_mode_l2(model: &GanModel, data: &[Sample]) -> f64 {
    let refs: Vec<&Sample> = data.iter().collect();
    let input = model.generator_input(&refs).unwrap();
    let (y, _) = model.generator.forward(&input, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    y.data()
        .chunks(data[0].y.len())
        .zip(data)
        .map(|(yh, s)| sq_err(yh, &s.y))
        .sum::<f64>()
        / data.len() as f64
}

fn sq_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Trains on four copies of one sample; returns the final `||Yhat - Y||_2`
/// in inference mode.
fn single_sample(cfg: GanConfig, video: &MarketVideo, s: &Sample) -> f64 {
    let batch = vec![s.clone(); 4];
    let mut t = Trainer::new(GanModel::for_video(cfg, video).unwrap(), &batch, &batch).unwrap();
    t.run(|_| Ok(())).unwrap();
    sq_err(&t.model().predict_next(&s.x).unwrap(), &s.y).sqrt()
}

pub fn run() -> Outcome {
    let (video, samples) = data();
    let set = &samples[..SET_SIZE];

    let mut t = Trainer::new(GanModel::for_video(config(), &video).unwrap(), set, set).unwrap();
    for _ in 0..10 {
        t.step().unwrap();
    }
    let at10 = train_mode_l2(t.model(), set);
    t.run(|_| Ok(())).unwrap();
    let end = train_mode_l2(t.model(), set);
    let drop = 1.0 - end / at10;
    let logged_10 = t.log().rows[9].lp;
    let tail = &t.log().rows[t.log().rows.len() - 50..];
    let logged_end = tail.iter().map(|r| r.lp).sum::<f64>() / tail.len() as f64;

    let l2_only = GanConfig {
        lambda_adv: 0.0,
        lambda_gdl: 0.0,
        lambda_dcl: 0.0,
        ..config()
    };
    let single = single_sample(config(), &video, &samples[0]);
    let single_l2 = single_sample(l2_only, &video, &samples[0]);

    let pass = drop >= 0.8 && single < 0.05 && t.iteration() <= ITERATIONS;
    Outcome::new(
        pass,
        format!(
            "{SET_SIZE} samples: generator L2 {at10:.4} at it 10 -> {end:.4} at it {} ({:.1}% drop, >=80%); single sample ||Yhat-Y|| {single:.4} (<0.05)",
            t.iteration(),
            100.0 * drop
        ),
    )
    .note(format!("logged batch L2: {logged_10:.4} at it 10, mean of last 50 iterations {logged_end:.4}"))
    .note(format!("single sample, pure L2 objective (informational): ||Yhat-Y|| = {single_l2:.2e}"))
}
