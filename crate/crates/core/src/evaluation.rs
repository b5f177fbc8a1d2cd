//! Scoring: MAPE, persistence baselines, spatial correlation structure and
//! spike capture.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{Error, Result};
use crate::stats::{median, pearson};

/// Hours with `|y| <= EPS_DEN` ($/MWh) are left out of MAPE.
pub const EPS_DEN: f64 = 0.01;
pub const SPIKE_MULTIPLIER: f64 = 3.0;
/// Trailing window for the spike threshold median, in hours.
pub const SPIKE_WINDOW: usize = 168;

/// Reference MAPEs (%) for real ISO markets. Not reproduced: they
/// come from a year of ISO market data that is not bundled here.
pub mod reference {
    /// ISO-NE 2018, hour-by-hour, per zone.
    pub const ISO_NE_2018: [(&str, f64); 9] = [
        ("VT", 11.03),
        ("HN", 11.25),
        ("ME", 11.82),
        ("WCMA", 10.99),
        ("System", 11.06),
        ("NEMA", 11.05),
        ("CT", 11.04),
        ("RI", 11.01),
        ("SEMA", 11.05),
    ];
    pub const SPP_SHUB: f64 = 17.7;
    pub const SPP_NHUB: f64 = 19.1;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mape {
    pub percent: f64,
    /// Hours scored.
    pub used: usize,
    /// Hours skipped for a near-zero denominator.
    pub excluded: usize,
}

/// MAPE over pairs of truth and prediction series, pooled.
pub fn mape_pooled<'a, I>(pairs: I, eps: f64) -> Result<Mape>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let (mut sum, mut used, mut excluded) = (0.0, 0usize, 0usize);
    for (y, p) in pairs {
        if y.len() != p.len() {
            return Err(Error::shape("mape", &[y.len()], &[p.len()]));
        }
        for (a, b) in y.iter().zip(p) {
            if a.abs() > eps {
                sum += (a - b).abs() / a.abs();
                used += 1;
            } else {
                excluded += 1;
            }
        }
    }
    if used == 0 {
        return Err(Error::Data(format!("MAPE undefined: all {excluded} hours have |y| <= {eps}")));
    }
    Ok(Mape {
        percent: 100.0 * sum / used as f64,
        used,
        excluded,
    })
}

pub fn mape(y_true: &[f64], y_pred: &[f64]) -> Result<Mape> {
    mape_pooled([(y_true, y_pred)], EPS_DEN)
}

/// Pairwise Pearson coefficients between zone series; `None` where a zone
/// has zero variance.
pub fn spatial_correlation_matrix(series: &[Vec<f64>]) -> Result<Vec<Vec<Option<f64>>>> {
    let k = series.len();
    let len = series.first().map_or(0, Vec::len);
    if len < 2 {
        return Err(Error::Insufficient {
            what: "hours for correlation",
            needed: 2,
            got: len,
        });
    }
    if let Some(s) = series.iter().find(|s| s.len() != len) {
        return Err(Error::shape("zone series", &[len], &[s.len()]));
    }
    let mut m = vec![vec![None; k]; k];
    for i in 0..k {
        for j in i..k {
            let v = if i == j {
                pearson(&series[i], &series[i]).map(|_| 1.0)
            } else {
                pearson(&series[i], &series[j])
            };
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}

/// Frobenius norm of `a - b` over entries defined in both.
pub fn frobenius_distance(a: &[Vec<Option<f64>>], b: &[Vec<Option<f64>>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .filter_map(|(x, y)| Some((x.as_ref()? - y.as_ref()?).powi(2)))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Baselines {
    /// `yhat(t) = y(t-1)`.
    pub one_hour: Mape,
    /// `yhat(t) = y(t-24)`.
    pub day: Mape,
}

/// Persistence MAPEs over hours `start..end` of each zone's truth series.
pub fn persistence_baselines(truth: &[Vec<f64>], start: usize, end: usize, eps_den: f64) -> Result<Baselines> {
    if start < 24 {
        return Err(Error::Insufficient {
            what: "hours of history for 24h persistence",
            needed: 24,
            got: start,
        });
    }
    if truth.iter().any(|s| s.len() < end) || start >= end {
        return Err(Error::Data(format!("baseline span {start}..{end} outside the series")));
    }
    let lagged = |lag: usize| -> Result<Mape> {
        mape_pooled(truth.iter().map(|s| (&s[start..end], &s[start - lag..end - lag])), eps_den)
    };
    Ok(Baselines {
        one_hour: lagged(1)?,
        day: lagged(24)?,
    })
}

/// Fraction of truth-spike hours in `start..` also flagged by the prediction.
///
/// Hour `t` is a spike when `y_true[t]` exceeds `multiplier` times the median
/// of `y_true[t-168..t]`; it is captured when `y_pred[t]` exceeds the same
/// threshold. `y_pred` is aligned with `y_true`; entries before `start` are
/// ignored. `None` when there are no truth spikes.
pub fn spike_recall(y_true: &[f64], y_pred: &[f64], start: usize, multiplier: f64) -> Result<Option<f64>> {
    let (spikes, caught) = spike_counts(y_true, y_pred, start, multiplier)?;
    Ok((spikes > 0).then(|| caught as f64 / spikes as f64))
}

pub fn spike_counts(y_true: &[f64], y_pred: &[f64], start: usize, multiplier: f64) -> Result<(usize, usize)> {
    if start < SPIKE_WINDOW {
        return Err(Error::Insufficient {
            what: "hours of history before spike scoring",
            needed: SPIKE_WINDOW,
            got: start,
        });
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::shape("spike series", &[y_true.len()], &[y_pred.len()]));
    }
    let (mut spikes, mut caught) = (0, 0);
    for t in start..y_true.len() {
        let thr = multiplier * median(&y_true[t - SPIKE_WINDOW..t]);
        if y_true[t] > thr {
            spikes += 1;
            if y_pred[t] > thr {
                caught += 1;
            }
        }
    }
    Ok((spikes, caught))
}

/// MAPE denominator floor and spike threshold used by [`ScoreReport`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreSettings {
    pub eps_den: f64,
    pub spike_multiplier: f64,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        Self {
            eps_den: EPS_DEN,
            spike_multiplier: SPIKE_MULTIPLIER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub zones: Vec<String>,
    pub zone_mape: Vec<Mape>,
    pub aggregate: Mape,
    pub baselines: Baselines,
    pub corr_pred: Vec<Vec<Option<f64>>>,
    pub corr_truth: Vec<Vec<Option<f64>>>,
    pub frobenius: f64,
    pub spike_multiplier: f64,
    pub spikes: usize,
    pub spikes_caught: usize,
}

impl ScoreReport {
    /// Scores predictions for hours `start..start + pred[z].len()` of the truth
    /// series (one per zone, including history before `start`).
    pub fn compute(zones: &[String], truth: &[Vec<f64>], pred: &[Vec<f64>], start: usize, settings: &ScoreSettings) -> Result<Self> {
        let ScoreSettings { eps_den, spike_multiplier } = *settings;
        if truth.len() != zones.len() || pred.len() != zones.len() {
            return Err(Error::shape("zones", &[zones.len()], &[truth.len(), pred.len()]));
        }
        let span = pred.first().map_or(0, Vec::len);
        let end = start + span;
        if truth.iter().any(|s| s.len() < end) || pred.iter().any(|p| p.len() != span) {
            return Err(Error::Data("prediction span does not fit the truth series".into()));
        }
        let window: Vec<&[f64]> = truth.iter().map(|s| &s[start..end]).collect();
        let zone_mape = window
            .iter()
            .zip(pred)
            .map(|(y, p)| mape_pooled([(*y, p.as_slice())], eps_den))
            .collect::<Result<Vec<_>>>()?;
        let aggregate = mape_pooled(window.iter().zip(pred).map(|(y, p)| (*y, p.as_slice())), eps_den)?;
        let baselines = persistence_baselines(truth, start, end, eps_den)?;
        let corr_truth = spatial_correlation_matrix(&window.iter().map(|w| w.to_vec()).collect::<Vec<_>>())?;
        let corr_pred = spatial_correlation_matrix(pred)?;
        let frobenius = frobenius_distance(&corr_pred, &corr_truth);
        let (mut spikes, mut spikes_caught) = (0, 0);
        if start >= SPIKE_WINDOW {
            for (y, p) in truth.iter().zip(pred) {
                let mut aligned = y[..end].to_vec();
                aligned[start..].copy_from_slice(p);
                let (s, c) = spike_counts(&y[..end], &aligned, start, spike_multiplier)?;
                spikes += s;
                spikes_caught += c;
            }
        }
        Ok(Self {
            zones: zones.to_vec(),
            zone_mape,
            aggregate,
            baselines,
            corr_pred,
            corr_truth,
            frobenius,
            spike_multiplier,
            spikes,
            spikes_caught,
        })
    }

    pub fn spike_recall(&self) -> Option<f64> {
        (self.spikes > 0).then(|| self.spikes_caught as f64 / self.spikes as f64)
    }

    /// `metric,zone,value` lines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "metric,zone,value")?;
        for (z, m) in self.zones.iter().zip(&self.zone_mape) {
            writeln!(w, "mape,{z},{}", m.percent)?;
        }
        writeln!(w, "mape,ALL,{}", self.aggregate.percent)?;
        writeln!(w, "excluded_hours,ALL,{}", self.aggregate.excluded)?;
        writeln!(w, "mape_persistence_1h,ALL,{}", self.baselines.one_hour.percent)?;
        writeln!(w, "mape_persistence_24h,ALL,{}", self.baselines.day.percent)?;
        writeln!(w, "corr_frobenius,ALL,{}", self.frobenius)?;
        match self.spike_recall() {
            Some(r) => writeln!(w, "spike_recall,ALL,{r}")?,
            None => writeln!(w, "spike_recall,ALL,NA")?,
        }
        writeln!(w, "spike_hours,ALL,{}", self.spikes)?;
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let width = self.zones.iter().map(String::len).max().unwrap_or(4).max(9);
        let _ = writeln!(s, "{:<width$}  {:>9}", "zone", "MAPE %");
        for (z, m) in self.zones.iter().zip(&self.zone_mape) {
            let _ = writeln!(s, "{z:<width$}  {:>9.3}", m.percent);
        }
        let _ = writeln!(s, "{:<width$}  {:>9.3}", "all", self.aggregate.percent);
        let _ = writeln!(s);
        let _ = writeln!(s, "persistence 1h   {:>9.3} %", self.baselines.one_hour.percent);
        let _ = writeln!(s, "persistence 24h  {:>9.3} %", self.baselines.day.percent);
        let _ = writeln!(s, "excluded hours   {:>9}", self.aggregate.excluded);
        let _ = writeln!(s, "corr. distance   {:>9.4}", self.frobenius);
        let recall = self.spike_recall().map_or("N/A".to_string(), |r| format!("{r:.3}"));
        let _ = writeln!(
            s,
            "spike recall     {recall:>9} ({} of {} hours > {}x weekly median)",
            self.spikes_caught, self.spikes, self.spike_multiplier
        );
        s
    }
}

/// Writes a correlation matrix as CSV with zone headers; undefined entries
/// are `NA`.
pub fn write_matrix_csv<W: Write>(zones: &[String], m: &[Vec<Option<f64>>], mut w: W) -> Result<()> {
    writeln!(w, "zone,{}", zones.join(","))?;
    for (z, row) in zones.iter().zip(m) {
        let cells: Vec<String> = row.iter().map(|v| v.map_or("NA".into(), |x| x.to_string())).collect();
        writeln!(w, "{z},{}", cells.join(","))?;
    }
    Ok(())
}
