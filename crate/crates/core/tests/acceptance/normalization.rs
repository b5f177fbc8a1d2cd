use lmpgan::market_data::{denormalize, normalize, FeatureStats};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_end, mut worst_trip) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(2..300);
        let scale = 10f64.powf(rng.random_range(-2.0..3.0));
        let data: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0) * scale + 1e-3).collect();
        let stats = FeatureStats::fit(data.iter().copied()).unwrap();
        if stats.is_degenerate() {
            continue;
        }
        let lo = data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        worst_end = worst_end
            .max((normalize(lo, &stats).unwrap() + 1.0).abs())
            .max((normalize(hi, &stats).unwrap() - 1.0).abs());
        for &c in &data {
            let back = denormalize(normalize(c, &stats).unwrap(), &stats).unwrap();
            worst_trip = worst_trip.max((back - c).abs());
        }
    }
    let stats = FeatureStats::fit([10.0, 20.0, 30.0]).unwrap();
    let example = normalize(20.0, &stats).unwrap();
    // (ln 11 - ln(21)/2) / (ln(21)/2)
    let oracle = (11f64.ln() - 21f64.ln() / 2.0) / (21f64.ln() / 2.0);
    let pass = worst_end < 1e-12 && worst_trip < 1e-9 && (example - 0.5753).abs() < 1e-4 && (example - oracle).abs() < 1e-15;
    Outcome::new(
        pass,
        format!("1000 datasets: endpoint err {worst_end:.1e} (<1e-12), round trip {worst_trip:.1e} (<1e-9); 20 in {{10,20,30}} -> {example:.6}"),
    )
}
