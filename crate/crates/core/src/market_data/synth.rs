//! Synthetic zonal market data for tests and demos.
//!
//! Each zone carries a demand curve with daily and weekly cycles, a price
//! level driven by demand, spatially smoothed AR(1) noise plus a system-wide
//! factor, and optional Poisson price spikes that hit a zone and its
//! neighbours. DALMP is the noise-free price level plus a small error.

use std::f64::consts::PI;
use std::sync::Arc;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::{GridLayout, MarketFrame, MarketVideo, RTLMP};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct SynthParams {
    pub seed: u64,
    pub hours: usize,
    /// Expected number of spike events per hour across the whole grid.
    pub spike_rate: f64,
    pub start: DateTime<Utc>,
    /// Standard deviation of the per-zone AR(1) noise, $/MWh.
    pub local_noise: f64,
    /// Standard deviation of the system-wide AR(1) factor, $/MWh.
    pub system_noise: f64,
}

impl SynthParams {
    pub fn new(seed: u64, hours: usize, spike_rate: f64) -> Self {
        Self {
            seed,
            hours,
            spike_rate,
            start: Utc.with_ymd_and_hms(2017, 1, 1, 0, 0, 0).unwrap(),
            local_noise: 2.0,
            system_noise: 2.0,
        }
    }
}

/// Deterministic synthetic video with channels `rtlmp, dalmp, demand`.
pub fn synth_market(seed: u64, layout: Arc<GridLayout>, hours: usize, spike_rate: f64) -> Result<MarketVideo> {
    synth_market_with(&SynthParams::new(seed, hours, spike_rate), layout)
}

pub fn synth_market_with(p: &SynthParams, layout: Arc<GridLayout>) -> Result<MarketVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let cells = layout.cells();
    let (rows, cols) = (layout.rows() as f64, layout.cols() as f64);

    // Zone constants: price level rises toward the bottom-right corner.
    let base: Vec<f64> = (0..cells)
        .map(|c| {
            let (r, k) = layout.position(c);
            30.0 + 8.0 * r as f64 / rows.max(1.0) + 6.0 * k as f64 / cols.max(1.0) + rng.random_range(-2.0..2.0)
        })
        .collect();
    let peak_demand: Vec<f64> = (0..cells).map(|_| rng.random_range(800.0..3000.0)).collect();
    let phase: Vec<f64> = (0..cells).map(|_| rng.random_range(-0.5..0.5)).collect();
    let neighbors: Vec<Vec<usize>> = (0..cells).map(|c| layout.neighbors(c)).collect();

    let rho_local: f64 = 0.85;
    let rho_system: f64 = 0.9;
    let local_innov = p.local_noise * (1.0 - rho_local * rho_local).sqrt();
    let system_innov = p.system_noise * (1.0 - rho_system * rho_system).sqrt();

    let mut eta = vec![0.0; cells];
    let mut demand_noise = vec![0.0; cells];
    let mut system = 0.0;
    let mut spike_mult: Vec<f64> = vec![1.0; cells];
    // Remaining hours and multiplier of active spikes, per cell.
    let mut active: Vec<(usize, usize, f64)> = Vec::new();
    let poisson = (p.spike_rate > 0.0).then(|| Poisson::new(p.spike_rate).unwrap());

    let channels = 3;
    let mut frames = Vec::with_capacity(p.hours);
    for t in 0..p.hours {
        let ts = p.start + Duration::hours(t as i64);
        let hour = (t % 24) as f64;
        let day = ((t / 24) % 7) as f64;

        system = rho_system * system + system_innov * std.sample(&mut rng);
        let w: Vec<f64> = (0..cells).map(|_| std.sample(&mut rng)).collect();
        for c in 0..cells {
            // Spatial smoothing keeps neighbouring zones correlated.
            let nb = &neighbors[c];
            let mix = if nb.is_empty() {
                w[c]
            } else {
                (w[c] + nb.iter().map(|&j| w[j]).sum::<f64>() / nb.len() as f64) / 2f64.sqrt()
            };
            eta[c] = rho_local * eta[c] + local_innov * mix;
            demand_noise[c] = 0.9 * demand_noise[c] + 0.01 * std.sample(&mut rng);
        }

        spike_mult.iter_mut().for_each(|m: &mut f64| *m = 1.0);
        if let Some(pois) = &poisson {
            let events = pois.sample(&mut rng) as usize;
            for _ in 0..events {
                let center = rng.random_range(0..cells);
                let dur = rng.random_range(1..=3usize);
                let mag = rng.random_range(2.5..5.0);
                active.push((center, dur, mag));
            }
        }
        active.retain_mut(|(center, left, mag)| {
            spike_mult[*center] = spike_mult[*center].max(*mag);
            for &j in &neighbors[*center] {
                spike_mult[j] = spike_mult[j].max(1.0 + (*mag - 1.0) * 0.5);
            }
            *left -= 1;
            *left > 0
        });

        let mut values = vec![0.0; cells * channels];
        for c in 0..cells {
            let daily = 0.6 * (2.0 * PI * (hour - 9.0 + phase[c]) / 24.0).sin()
                + 0.4 * (4.0 * PI * (hour - 3.0 + phase[c]) / 24.0).sin();
            let weekly = if day >= 5.0 { -1.0 } else { 0.3 * (2.0 * PI * day / 5.0).cos() };
            let load = 1.0 + 0.18 * daily + 0.05 * weekly + demand_noise[c];
            let demand = peak_demand[c] * 0.7 * load;
            let level = base[c] * load.max(0.2).powf(1.5);
            let rtlmp = level * spike_mult[c] + system + eta[c];
            let dalmp = level + 0.5 * std.sample(&mut rng);
            values[c * channels] = rtlmp;
            values[c * channels + 1] = dalmp;
            values[c * channels + 2] = demand;
        }
        frames.push(MarketFrame::new(ts, channels, values)?);
    }

    MarketVideo::new(layout, vec![RTLMP.into(), "dalmp".into(), "demand".into()], frames)
}
