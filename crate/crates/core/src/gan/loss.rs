//! Discriminator and generator losses, with gradients w.r.t. the generated
//! frame where the loss is differentiable.
//!
//! Frames are row-major `rows x cols` slices of normalized RTLMPs.

use super::config::GanConfig;
use crate::error::{Error, Result};

/// Clamp applied to discriminator outputs before taking logarithms.
pub const BCE_EPS: f64 = 1e-7;

/// Binary cross-entropy of a prediction `k` in (0, 1) against label `s`.
pub fn loss_bce(k: f64, s: f64) -> f64 {
    let k = k.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(s * k.ln() + (1.0 - s) * (1.0 - k).ln())
}

/// d bce / d k; zero where the clamp is active.
pub fn bce_grad(k: f64, s: f64) -> f64 {
    if !(BCE_EPS..=1.0 - BCE_EPS).contains(&k) {
        return 0.0;
    }
    -s / k + (1.0 - s) / (1.0 - k)
}

/// `bce(d_real, 1) + bce(d_fake, 0)`.
pub fn loss_d(d_real: f64, d_fake: f64) -> f64 {
    loss_bce(d_real, 1.0) + loss_bce(d_fake, 0.0)
}

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(what, &[b.len()], &[a.len()]));
    }
    Ok(())
}

/// Entry-wise `||yhat - y||_p^p`.
pub fn loss_lp(yhat: &[f64], y: &[f64], p: u32) -> Result<f64> {
    same_len(yhat, y, "loss_lp")?;
    Ok(yhat.iter().zip(y).map(|(a, b)| (a - b).abs().powi(p as i32)).sum())
}

pub fn loss_lp_grad(yhat: &[f64], y: &[f64], p: u32) -> Vec<f64> {
    yhat.iter()
        .zip(y)
        .map(|(a, b)| {
            let d = a - b;
            match p {
                1 => sgn(d),
                _ => p as f64 * d.abs().powi(p as i32 - 1) * sgn(d),
            }
        })
        .collect()
}

fn check_frame(yhat: &[f64], y: &[f64], rows: usize, cols: usize) -> Result<()> {
    if y.len() != rows * cols {
        return Err(Error::shape("frame", &[rows, cols], &[y.len()]));
    }
    same_len(yhat, y, "generated frame")
}

/// Neighbouring pixel pairs: vertical `(i-1, j) -> (i, j)` then horizontal
/// `(i, j-1) -> (i, j)`. Only pairs where both pixels exist.
fn neighbour_pairs(rows: usize, cols: usize) -> impl Iterator<Item = (usize, usize)> {
    let vertical = (1..rows).flat_map(move |i| (0..cols).map(move |j| ((i - 1) * cols + j, i * cols + j)));
    let horizontal = (0..rows).flat_map(move |i| (1..cols).map(move |j| (i * cols + j - 1, i * cols + j)));
    vertical.chain(horizontal)
}

/// Gradient difference loss: sum over neighbouring pairs of
/// `| |y_a - y_b| - |yhat_a - yhat_b| |^alpha`.
pub fn loss_gdl(yhat: &[f64], y: &[f64], rows: usize, cols: usize, alpha: u32) -> Result<f64> {
    check_frame(yhat, y, rows, cols)?;
    Ok(neighbour_pairs(rows, cols)
        .map(|(a, b)| ((y[a] - y[b]).abs() - (yhat[a] - yhat[b]).abs()).abs().powi(alpha as i32))
        .sum())
}

pub fn loss_gdl_grad(yhat: &[f64], y: &[f64], rows: usize, cols: usize, alpha: u32) -> Vec<f64> {
    let mut g = vec![0.0; yhat.len()];
    for (a, b) in neighbour_pairs(rows, cols) {
        let dy = (y[a] - y[b]).abs();
        let dh = yhat[a] - yhat[b];
        let diff = dy - dh.abs();
        // d/d yhat_a of |diff|^alpha = alpha |diff|^(alpha-1) sgn(diff) * (-sgn(dh))
        let outer = alpha as f64 * diff.abs().powi(alpha as i32 - 1) * sgn(diff);
        let da = -outer * sgn(dh);
        g[a] += da;
        g[b] -= da;
    }
    g
}

/// Sign with `sgn(0) = 0`.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Direction changing loss: per pixel `|sgn(yhat - x_last) - sgn(y - x_last)|`,
/// each contributing 0, 1 or 2. Piecewise constant, so its gradient is zero
/// almost everywhere.
pub fn loss_dcl(yhat: &[f64], y: &[f64], x_last: &[f64]) -> Result<f64> {
    same_len(yhat, y, "loss_dcl")?;
    same_len(x_last, y, "loss_dcl history frame")?;
    Ok(yhat
        .iter()
        .zip(y)
        .zip(x_last)
        .map(|((h, t), x)| (sgn(h - x) - sgn(t - x)).abs())
        .sum())
}

/// The four generator loss components for one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GenLossTerms {
    pub adv: f64,
    pub lp: f64,
    pub gdl: f64,
    pub dcl: f64,
}

impl GenLossTerms {
    pub fn weighted(&self, cfg: &GanConfig) -> f64 {
        cfg.lambda_adv * self.adv + cfg.lambda_lp * self.lp + cfg.lambda_gdl * self.gdl + cfg.lambda_dcl * self.dcl
    }
}

/// Generator loss terms for one sample and their weighted sum.
pub fn loss_g(
    x_last: &[f64],
    y: &[f64],
    yhat: &[f64],
    d_fake: f64,
    rows: usize,
    cols: usize,
    cfg: &GanConfig,
) -> Result<(f64, GenLossTerms)> {
    let terms = GenLossTerms {
        adv: loss_bce(d_fake, 1.0),
        lp: loss_lp(yhat, y, cfg.p)?,
        gdl: loss_gdl(yhat, y, rows, cols, cfg.alpha)?,
        dcl: loss_dcl(yhat, y, x_last)?,
    };
    Ok((terms.weighted(cfg), terms))
}

/// Gradient of the weighted pixel terms (lp, gdl; dcl contributes zero)
/// w.r.t. the generated frame. The adversarial term is handled by
/// backpropagating through the discriminator.
pub fn pixel_loss_grad(yhat: &[f64], y: &[f64], rows: usize, cols: usize, cfg: &GanConfig) -> Vec<f64> {
    let lp = loss_lp_grad(yhat, y, cfg.p);
    let gdl = loss_gdl_grad(yhat, y, rows, cols, cfg.alpha);
    lp.iter().zip(&gdl).map(|(a, b)| cfg.lambda_lp * a + cfg.lambda_gdl * b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn bce_examples() {
        assert!(loss_bce(1.0 - BCE_EPS, 1.0) < 1e-6);
        assert!((loss_bce(0.5, 1.0) - LN2).abs() < 1e-15);
        assert!((loss_bce(0.5, 0.0) - LN2).abs() < 1e-15);
        assert!((loss_bce(BCE_EPS, 1.0) - 16.118).abs() < 1e-3);
        assert!(loss_bce(0.3, 1.0) > loss_bce(0.6, 1.0));
    }

    #[test]
    fn discriminator_loss_examples() {
        assert!(loss_d(1.0 - BCE_EPS, BCE_EPS) < 1e-6);
        assert!((loss_d(0.5, 0.5) - 2.0 * LN2).abs() < 1e-12);
        assert!((loss_d(BCE_EPS, 1.0 - BCE_EPS) - 2.0 * -(BCE_EPS.ln())).abs() < 1e-6);
    }

    #[test]
    fn lp_examples() {
        assert_eq!(loss_lp(&[1.0, 0.0], &[1.0, 0.0], 2).unwrap(), 0.0);
        assert_eq!(loss_lp(&[0.0, 0.0], &[1.0, 0.0], 2).unwrap(), 1.0);
        assert_eq!(loss_lp(&[0.0, 0.5], &[1.0, 0.0], 1).unwrap(), 1.5);
        assert!(loss_lp(&[0.0], &[1.0, 0.0], 2).is_err());
    }

    #[test]
    fn gdl_examples() {
        let y = [0.0, 1.0, 0.0, 1.0];
        assert_eq!(loss_gdl(&y, &y, 2, 2, 1).unwrap(), 0.0);
        assert_eq!(loss_gdl(&[0.0; 4], &y, 2, 2, 1).unwrap(), 2.0);
        let shifted: Vec<f64> = y.iter().map(|v| v + 3.5).collect();
        assert_eq!(loss_gdl(&shifted, &y, 2, 2, 1).unwrap(), 0.0);
        assert!(loss_gdl(&[0.0; 4], &y, 3, 2, 1).is_err());
    }

    #[test]
    fn dcl_examples() {
        assert_eq!(loss_dcl(&[0.3], &[0.5], &[0.2]).unwrap(), 0.0);
        assert_eq!(loss_dcl(&[0.1], &[0.5], &[0.2]).unwrap(), 2.0);
        assert_eq!(loss_dcl(&[0.3], &[0.2], &[0.2]).unwrap(), 1.0);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn generator_loss_examples() {
        let cfg = GanConfig::default();
        let y = [0.1, -0.4, 0.7, 0.2];
        let (total, _) = loss_g(&[0.0; 4], &y, &y, 1.0 - BCE_EPS, 2, 2, &cfg).unwrap();
        assert!(total < 1e-6);

        let only_lp = GanConfig {
            lambda_adv: 0.0,
            lambda_gdl: 0.0,
            lambda_dcl: 0.0,
            ..GanConfig::default()
        };
        let (total, _) = loss_g(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 0.0], 0.5, 1, 2, &only_lp).unwrap();
        assert_eq!(total, 1.0);

        let terms = GenLossTerms {
            adv: 0.6931,
            lp: 0.5,
            gdl: 0.3,
            dcl: 1.0,
        };
        assert!((terms.weighted(&cfg) - 1.1386).abs() < 1e-4);

        let zero = GanConfig {
            lambda_adv: 0.0,
            lambda_lp: 0.0,
            lambda_gdl: 0.0,
            lambda_dcl: 0.0,
            ..GanConfig::default()
        };
        assert_eq!(loss_g(&[0.0; 2], &[1.0, 0.0], &[0.0, 0.3], 0.2, 1, 2, &zero).unwrap().0, 0.0);
    }

    proptest! {
        #[test]
        fn components_nonnegative_and_bounded(
            vals in proptest::collection::vec(-1.0f64..1.0, 27),
        ) {
            let (yhat, rest) = vals.split_at(9);
            let (y, x) = rest.split_at(9);
            prop_assert!(loss_lp(yhat, y, 2).unwrap() >= 0.0);
            prop_assert!(loss_gdl(yhat, y, 3, 3, 1).unwrap() >= 0.0);
            let dcl = loss_dcl(yhat, y, x).unwrap();
            prop_assert!((0.0..=18.0).contains(&dcl));
            prop_assert_eq!(loss_lp(y, y, 2).unwrap(), 0.0);
            prop_assert_eq!(loss_gdl(y, y, 3, 3, 1).unwrap(), 0.0);
            prop_assert_eq!(loss_dcl(y, y, x).unwrap(), 0.0);
        }

        #[test]
        fn gdl_translation_invariant(vals in proptest::collection::vec(-1.0f64..1.0, 18), c in -2.0f64..2.0) {
            let (a, b) = vals.split_at(9);
            let a2: Vec<f64> = a.iter().map(|v| v + c).collect();
            let b2: Vec<f64> = b.iter().map(|v| v + c).collect();
            let l1 = loss_gdl(a, b, 3, 3, 1).unwrap();
            let l2 = loss_gdl(&a2, &b2, 3, 3, 1).unwrap();
            prop_assert!((l1 - l2).abs() < 1e-12);
        }
    }
}
