//! ARMA correction of GAN predictions.
//!
//! The residual `y - yhat` of each zone is modelled as an ARMA(p, q) process
//! fitted on a trailing window, and the one-step forecast of the residual is
//! added to the next prediction.

use std::io::Write;

use chrono::{DateTime, Utc};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::market_data::format_timestamp;
use crate::stats::mean;

/// Floor applied to the residual variance inside logarithms.
const MIN_VARIANCE: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct ArmaModel {
    pub p: usize,
    pub q: usize,
    pub mu: f64,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma2: f64,
}

/// All partial autocorrelations of `1 - a_1 z - ... - a_k z^k` have modulus
/// below one, i.e. every root lies outside the unit circle.
fn roots_outside_unit_circle(coeffs: &[f64]) -> bool {
    let mut a = coeffs.to_vec();
    while let Some(&k) = a.last() {
        if k.abs() >= 1.0 {
            return false;
        }
        let n = a.len();
        let d = 1.0 - k * k;
        a = (0..n - 1).map(|j| (a[j] + k * a[n - 2 - j]) / d).collect();
    }
    true
}

impl ArmaModel {
    /// ARMA(0, 0) around `mu`.
    pub fn constant(mu: f64) -> Self {
        Self {
            p: 0,
            q: 0,
            mu,
            phi: Vec::new(),
            theta: Vec::new(),
            sigma2: 0.0,
        }
    }

    pub fn is_causal(&self) -> bool {
        roots_outside_unit_circle(&self.phi)
    }

    pub fn is_invertible(&self) -> bool {
        let neg: Vec<f64> = self.theta.iter().map(|t| -t).collect();
        roots_outside_unit_circle(&neg)
    }

    /// Innovations of `series` under the model, filtered recursively with
    /// zero pre-sample values.
    pub fn innovations(&self, series: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = series.iter().map(|v| v - self.mu).collect();
        let mut e = vec![0.0; x.len()];
        for t in 0..x.len() {
            let mut pred = 0.0;
            for (k, phi) in self.phi.iter().enumerate() {
                if t > k {
                    pred += phi * x[t - k - 1];
                }
            }
            for (k, th) in self.theta.iter().enumerate() {
                if t > k {
                    pred += th * e[t - k - 1];
                }
            }
            e[t] = x[t] - pred;
        }
        e
    }

    pub fn bic(&self, n: usize) -> f64 {
        n as f64 * self.sigma2.max(MIN_VARIANCE).ln() + (self.p + self.q + 1) as f64 * (n as f64).ln()
    }
}

/// Ordinary least squares of `y` on the columns of `x` via the normal
/// equations.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let xt = x.transpose();
    let gram = &xt * x;
    let scale = gram.diagonal().max();
    if scale.is_nan() || scale <= 0.0 {
        return Err(Error::Singular("regressors are identically zero".into()));
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("lagged regressors are collinear".into()))?;
    let l = chol.l();
    let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |m, &v| m.min(v * v));
    if min_pivot < scale * 1e-12 {
        return Err(Error::Singular("lagged regressors are collinear".into()));
    }
    Ok(chol.solve(&(xt * y)))
}

/// Regresses `x[t]` on `x[t-1..t-p]` and `e[t-1..t-q]` for `t` in `start..`.
fn lag_regression(x: &[f64], e: &[f64], p: usize, q: usize, start: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows = x.len() - start;
    let cols = p + q;
    let design = DMatrix::from_fn(rows, cols, |r, c| {
        let t = start + r;
        if c < p {
            x[t - c - 1]
        } else {
            e[t - (c - p) - 1]
        }
    });
    let target = DVector::from_iterator(rows, x[start..].iter().copied());
    let beta = least_squares(&design, &target)?;
    Ok((beta.rows(0, p).iter().copied().collect(), beta.rows(p, q).iter().copied().collect()))
}

/// Hannan–Rissanen estimate of an ARMA(p, q) model.
///
/// The mean is the sample mean. A long autoregression on the demeaned series
/// supplies innovation estimates; φ and θ then come from least squares on
/// lagged values and lagged innovation estimates. σ² is the mean squared
/// innovation of the fitted model over the whole series.
pub fn fit_arma(series: &[f64], p: usize, q: usize) -> Result<ArmaModel> {
    let n = series.len();
    let needed = 20 * (p + q + 1);
    if n < needed {
        return Err(Error::Insufficient {
            what: "residual observations for ARMA fit",
            needed,
            got: n,
        });
    }
    if let Some(bad) = series.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite residual {bad}")));
    }
    let mu = mean(series);
    let x: Vec<f64> = series.iter().map(|v| v - mu).collect();
    let (phi, theta) = if p + q == 0 {
        (Vec::new(), Vec::new())
    } else if q == 0 {
        lag_regression(&x, &[], p, 0, p)?
    } else {
        let m = ((10.0 * (n as f64).log10()).ceil() as usize).min(n / 4).max(p + q);
        let (ar, _) = lag_regression(&x, &[], m, 0, m)?;
        let mut e = vec![0.0; n];
        for t in m..n {
            e[t] = x[t] - (0..m).map(|k| ar[k] * x[t - k - 1]).sum::<f64>();
        }
        lag_regression(&x, &e, p, q, m + q.max(p))?
    };
    let mut model = ArmaModel {
        p,
        q,
        mu,
        phi,
        theta,
        sigma2: 0.0,
    };
    let e = model.innovations(series);
    let skip = p.max(q);
    model.sigma2 = e[skip..].iter().map(|v| v * v).sum::<f64>() / (n - skip) as f64;
    if !model.is_causal() || !model.is_invertible() {
        log::debug!(
            "ARMA({p},{q}) fit is not causal/invertible: phi={:?} theta={:?}",
            model.phi,
            model.theta
        );
    }
    Ok(model)
}

/// Order on the grid `p <= p_max`, `q <= q_max` with the lowest BIC; ties go
/// to the smaller `p + q`, then the smaller `p`. Orders that cannot be fitted
/// are skipped; if none can, `(1, 1)` is returned with a warning.
pub fn select_order(series: &[f64], p_max: usize, q_max: usize) -> (usize, usize) {
    let mut best: Option<(f64, usize, usize)> = None;
    for p in 0..=p_max {
        for q in 0..=q_max {
            let Ok(m) = fit_arma(series, p, q) else { continue };
            let bic = m.bic(series.len());
            let better = match best {
                None => true,
                Some((b, bp, bq)) => bic < b || (bic == b && (p + q, p) < (bp + bq, bp)),
            };
            if better {
                best = Some((bic, p, q));
            }
        }
    }
    match best {
        Some((_, p, q)) => (p, q),
        None => {
            log::warn!("no ARMA order could be fitted; falling back to (1,1)");
            (1, 1)
        }
    }
}

/// One-step forecast of the next residual from the most recent residuals
/// and innovations (oldest first, latest last):
/// `mu + sum phi_k (d[i-k+1] - mu) + sum theta_k e[i-k+1]`.
pub fn forecast_delta(model: &ArmaModel, residuals: &[f64], innovations: &[f64]) -> Result<f64> {
    if residuals.len() < model.p || innovations.len() < model.q {
        return Err(Error::Insufficient {
            what: "residual history for forecast",
            needed: model.p.max(model.q),
            got: residuals.len().min(innovations.len()),
        });
    }
    let mut f = model.mu;
    for (k, phi) in model.phi.iter().enumerate() {
        f += phi * (residuals[residuals.len() - 1 - k] - model.mu);
    }
    for (k, th) in model.theta.iter().enumerate() {
        f += th * innovations[innovations.len() - 1 - k];
    }
    Ok(f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    /// Trailing window of residuals used for each fit, in hours.
    pub window: usize,
    /// Refit cadence in hours.
    pub refit: usize,
    pub p_max: usize,
    pub q_max: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            window: 168,
            refit: 24,
            p_max: 3,
            q_max: 3,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 20 || self.refit == 0 {
            return Err(Error::Config(format!(
                "calibration needs window >= 20 and refit >= 1, got {} and {}",
                self.window, self.refit
            )));
        }
        Ok(())
    }
}

/// Calibrated values for hours `window..` of one zone's series.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrated {
    /// Index of the first calibrated hour in the input series.
    pub start: usize,
    pub delta_hat: Vec<f64>,
    pub calibrated: Vec<f64>,
    /// Model in force at each refit, with the hour it was fitted at.
    pub models: Vec<(usize, ArmaModel)>,
}

fn fit_window(window: &[f64], cfg: &CalibrationConfig) -> ArmaModel {
    let (p, q) = select_order(window, cfg.p_max, cfg.q_max);
    match fit_arma(window, p, q) {
        Ok(m) => {
            if !m.is_causal() || !m.is_invertible() {
                log::warn!("selected ARMA({p},{q}) is not causal/invertible: phi={:?} theta={:?}", m.phi, m.theta);
            }
            m
        }
        Err(e) => {
            log::warn!("ARMA({p},{q}) fit failed ({e}); using the window mean");
            ArmaModel::constant(mean(window))
        }
    }
}

/// Calibrates aligned predictions `y_pred` against truths `y_true` ($/MWh).
///
/// The correction for hour `i` uses only residuals of hours before `i`.
/// Every `refit` hours a model is selected and fitted on the trailing
/// `window` residuals; between refits innovations are updated recursively.
pub fn calibrate(y_pred: &[f64], y_true: &[f64], cfg: &CalibrationConfig) -> Result<Calibrated> {
    cfg.validate()?;
    if y_pred.len() != y_true.len() {
        return Err(Error::shape("calibration series", &[y_true.len()], &[y_pred.len()]));
    }
    let n = y_pred.len();
    if n <= cfg.window {
        return Err(Error::Insufficient {
            what: "hours for calibration window",
            needed: cfg.window + 1,
            got: n,
        });
    }
    let resid: Vec<f64> = y_true.iter().zip(y_pred).map(|(y, p)| y - p).collect();
    if let Some(bad) = resid.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite residual {bad}")));
    }
    let mut out = Calibrated {
        start: cfg.window,
        delta_hat: Vec::with_capacity(n - cfg.window),
        calibrated: Vec::with_capacity(n - cfg.window),
        models: Vec::new(),
    };
    let mut model = ArmaModel::constant(0.0);
    let mut innov: Vec<f64> = Vec::new();
    for i in cfg.window..n {
        let hist = &resid[i - cfg.window..i];
        if (i - cfg.window).is_multiple_of(cfg.refit) {
            model = fit_window(hist, cfg);
            innov = model.innovations(hist);
            out.models.push((i, model.clone()));
        } else {
            // extend the innovations by the residual observed at i - 1
            let f = forecast_delta(&model, &resid[..i - 1], &innov)?;
            innov.push(resid[i - 1] - f);
        }
        let d = forecast_delta(&model, &resid[..i], &innov)?;
        out.delta_hat.push(d);
        out.calibrated.push(y_pred[i] + d);
    }
    Ok(out)
}

/// Calibrates each zone independently. `y_pred[z]` and `y_true[z]` are
/// aligned hourly series for zone `z`.
pub fn calibrate_zones(y_pred: &[Vec<f64>], y_true: &[Vec<f64>], cfg: &CalibrationConfig) -> Result<Vec<Calibrated>> {
    if y_pred.len() != y_true.len() {
        return Err(Error::shape("calibration zones", &[y_true.len()], &[y_pred.len()]));
    }
    y_pred.iter().zip(y_true).map(|(p, y)| calibrate(p, y, cfg)).collect()
}

/// One line of the calibration report.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRow {
    pub timestamp: DateTime<Utc>,
    pub zone: String,
    pub y_true: f64,
    pub y_gan: f64,
    pub delta_hat: f64,
    pub y_calibrated: f64,
}

pub fn write_report<W: Write>(rows: &[CalibrationRow], mut w: W) -> Result<()> {
    writeln!(w, "timestamp,zone,y_true,y_gan,delta_hat,y_calibrated")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            format_timestamp(&r.timestamp),
            r.zone,
            r.y_true,
            r.y_gan,
            r.delta_hat,
            r.y_calibrated
        )?;
    }
    Ok(())
}
