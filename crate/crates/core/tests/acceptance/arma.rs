use lmpgan::calibration::{fit_arma, select_order};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::Outcome;

const N: usize = 10_000;
const SEEDS: u64 = 20;
const BURN_IN: usize = 500;

/// `x_t = phi x_{t-1} + e_t + theta e_{t-1}` with unit Gaussian noise.
fn simulate(phi: f64, theta: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x, mut e_prev) = (0.0, 0.0);
    let mut out = Vec::with_capacity(N);
    for t in 0..N + BURN_IN {
        let e: f64 = StandardNormal.sample(&mut rng);
        x = phi * x + e + theta * e_prev;
        e_prev = e;
        if t >= BURN_IN {
            out.push(x);
        }
    }
    out
}

pub fn run() -> Outcome {
    let (mut ar_ok, mut arma_ok, mut wn_ok) = (0, 0, 0);
    let (mut ar_worst, mut arma_worst, mut wn_worst) = (0.0f64, 0.0f64, 0.0f64);
    let mut orders = Vec::new();
    for seed in 0..SEEDS {
        let ar = fit_arma(&simulate(0.7, 0.0, 1000 + seed), 1, 0).unwrap();
        let err = (ar.phi[0] - 0.7).abs();
        ar_worst = ar_worst.max(err);
        ar_ok += usize::from(err <= 0.1);

        let m = fit_arma(&simulate(0.5, 0.3, 2000 + seed), 1, 1).unwrap();
        let err = (m.phi[0] - 0.5).abs().max((m.theta[0] - 0.3).abs());
        arma_worst = arma_worst.max(err);
        arma_ok += usize::from(err <= 0.1);

        let wn = simulate(0.0, 0.0, 3000 + seed);
        let phi = fit_arma(&wn, 1, 0).unwrap().phi[0].abs();
        let order = select_order(&wn, 3, 3);
        wn_worst = wn_worst.max(phi);
        wn_ok += usize::from(phi < 0.05 && order == (0, 0));
        if order != (0, 0) {
            orders.push((seed, order));
        }
    }
    let n = SEEDS as usize;
    let out = Outcome::new(
        ar_ok == n && arma_ok == n && wn_ok == n,
        format!(
            "AR(1) {ar_ok}/{n} (worst err {ar_worst:.3}), ARMA(1,1) {arma_ok}/{n} (worst err {arma_worst:.3}), white noise {wn_ok}/{n} (worst |phi| {wn_worst:.4})"
        ),
    );
    if orders.is_empty() {
        out
    } else {
        out.note(format!("white-noise order selection misses (seed, order): {orders:?}"))
    }
}
