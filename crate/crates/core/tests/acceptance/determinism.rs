use std::sync::Arc;

use lmpgan::gan::{train, GanArch, GanConfig, GanModel};
use lmpgan::market_data::{make_video, synth_market, window, GridLayout, NormStats};

use crate::Outcome;

fn run_once() -> (Vec<u8>, Vec<u8>) {
    let layout = Arc::new(GridLayout::numbered(3, 3).unwrap());
    let raw = synth_market(23, layout, 24 * 10, 0.02).unwrap();
    let stats = NormStats::fit(&raw).unwrap();
    let norm = make_video(&raw, &stats).unwrap();
    let samples = window(&norm, 4).unwrap();
    let (train_set, val) = samples.split_at(200);
    let cfg = GanConfig {
        arch: GanArch::scaled_down(8),
        max_iterations: 60,
        eval_every: 20,
        seed: 5,
        ..GanConfig::default()
    };
    let model = GanModel::for_video(cfg, &norm).unwrap().with_norm(stats);
    let (model, log, _) = train(model, train_set, val).unwrap();
    let mut ck = Vec::new();
    model.to_checkpoint(log.rows.len() as u64).write(&mut ck).unwrap();
    let mut csv = Vec::new();
    log.write_csv(&mut csv).unwrap();
    (ck, csv)
}

pub fn run() -> Outcome {
    let (ck_a, log_a) = run_once();
    let (ck_b, log_b) = run_once();
    Outcome::new(
        ck_a == ck_b && log_a == log_b,
        format!(
            "checkpoints {} ({} bytes), logs {} ({} bytes)",
            if ck_a == ck_b { "identical" } else { "differ" },
            ck_a.len(),
            if log_a == log_b { "identical" } else { "differ" },
            log_a.len()
        ),
    )
}
