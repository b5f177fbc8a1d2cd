//! Log-shift normalization of market data into `[-1, 1]`.
//!
//! For a feature with training minimum `min_c`, each value is shifted to
//! `c+ = c - min_c + 1 >= 1`, then mapped by
//! `(ln c+ - ln(max_c+)/2) / (ln(max_c+)/2)`, which sends the training
//! minimum to -1 and the training maximum to +1.

use std::io::{BufRead, BufReader, Read, Write};

use super::{MarketFrame, MarketVideo};
use crate::error::{Error, Result};

/// Replacement for shifted values `c+ <= 0`, which occur when a value lies
/// below the fitted minimum by one unit or more.
pub const CPLUS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureStats {
    pub min_c: f64,
    pub max_cplus: f64,
}

impl FeatureStats {
    pub fn new(min_c: f64, max_cplus: f64) -> Result<Self> {
        let s = Self { min_c, max_cplus };
        s.validate()?;
        Ok(s)
    }

    pub fn fit<I: IntoIterator<Item = f64>>(values: I) -> Option<Self> {
        let vals: Vec<f64> = values.into_iter().collect();
        let min_c = vals.iter().copied().reduce(f64::min)?;
        let max_cplus = vals
            .iter()
            .map(|&c| c - min_c + 1.0)
            .fold(f64::NEG_INFINITY, f64::max);
        Some(Self { min_c, max_cplus })
    }

    pub fn is_degenerate(&self) -> bool {
        self.max_cplus <= 1.0
    }

    fn validate(&self) -> Result<()> {
        if !self.min_c.is_finite() || !self.max_cplus.is_finite() || self.max_cplus < 1.0 {
            return Err(Error::Data(format!(
                "invalid normalization stats min_C={} max_Cplus={}",
                self.min_c, self.max_cplus
            )));
        }
        Ok(())
    }

    fn half_log_max(&self) -> f64 {
        self.max_cplus.ln() / 2.0
    }

    /// Normalizes without the degenerate check; reports whether the shifted
    /// value had to be floored.
    fn normalize_unchecked(&self, value: f64) -> (f64, bool) {
        let mut cplus = value - self.min_c + 1.0;
        let clamped = cplus <= 0.0;
        if clamped {
            cplus = CPLUS_FLOOR;
        }
        let h = self.half_log_max();
        ((cplus.ln() - h) / h, clamped)
    }
}

/// Fits `min_C` and `max(C+)` for one feature over all zones and hours.
pub fn fit_norm_stats(video: &MarketVideo, feature: &str) -> Result<FeatureStats> {
    let ch = video
        .feature_index(feature)
        .ok_or_else(|| Error::MissingStats(feature.to_string()))?;
    FeatureStats::fit(
        video
            .frames()
            .iter()
            .flat_map(|fr| (0..fr.cells()).map(move |c| fr.get(c, ch))),
    )
    .ok_or(Error::Insufficient {
        what: "frames to fit normalization stats",
        needed: 1,
        got: 0,
    })
}

pub fn normalize(value: f64, stats: &FeatureStats) -> Result<f64> {
    stats.validate()?;
    if stats.is_degenerate() {
        return Err(Error::DegenerateStats {
            feature: String::new(),
            max_cplus: stats.max_cplus,
        });
    }
    let (z, clamped) = stats.normalize_unchecked(value);
    if clamped {
        log::warn!(
            "value {value} lies below the training minimum {}; shifted value floored at {CPLUS_FLOOR}",
            stats.min_c
        );
    }
    Ok(z)
}

/// Inverse of [`normalize`] (for values that were not floored).
pub fn denormalize(norm_value: f64, stats: &FeatureStats) -> Result<f64> {
    stats.validate()?;
    let h = stats.half_log_max();
    Ok((norm_value * h + h).exp() + stats.min_c - 1.0)
}

/// Per-feature statistics, ordered like the video channels they were fit on.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    entries: Vec<(String, FeatureStats)>,
}

impl NormStats {
    pub fn new(entries: Vec<(String, FeatureStats)>) -> Self {
        Self { entries }
    }

    /// Fits every channel of `video`. Only pass the training span.
    pub fn fit(video: &MarketVideo) -> Result<Self> {
        let entries = video
            .features()
            .iter()
            .map(|f| Ok((f.clone(), fit_norm_stats(video, f)?)))
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn get(&self, feature: &str) -> Option<&FeatureStats> {
        self.entries.iter().find(|(f, _)| f == feature).map(|(_, s)| s)
    }

    pub fn entries(&self) -> &[(String, FeatureStats)] {
        &self.entries
    }

    /// Writes `feature,min_C,max_Cplus` rows with 17 significant digits.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "feature,min_C,max_Cplus")?;
        for (f, s) in &self.entries {
            writeln!(out, "{f},{:.16e},{:.16e}", s.min_c, s.max_cplus)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if i == 0 {
                if line != "feature,min_C,max_Cplus" {
                    return Err(Error::Data(format!("norm stats header mismatch: `{line}`")));
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let bad = || Error::Data(format!("norm stats line {}: `{line}`", i + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            let min_c: f64 = parts[1].parse().map_err(|_| bad())?;
            let max_cplus: f64 = parts[2].parse().map_err(|_| bad())?;
            entries.push((parts[0].to_string(), FeatureStats::new(min_c, max_cplus)?));
        }
        Ok(Self { entries })
    }
}

/// Normalizes every cell of a raw video with its channel's statistics.
///
/// Values outside the fitted range are not clamped (only a shifted value
/// `c+ <= 0` is floored, with a warning). Constant channels become zeros.
pub fn make_video(raw: &MarketVideo, stats: &NormStats) -> Result<MarketVideo> {
    let per_channel: Vec<FeatureStats> = raw
        .features()
        .iter()
        .map(|f| stats.get(f).copied().ok_or_else(|| Error::MissingStats(f.clone())))
        .collect::<Result<_>>()?;
    for (f, s) in raw.features().iter().zip(&per_channel) {
        s.validate()?;
        if s.is_degenerate() {
            log::warn!("feature `{f}` is constant over the fitting span; emitting zeros");
        }
    }
    let mut floored = 0usize;
    let frames = raw
        .frames()
        .iter()
        .map(|fr| {
            let ch = fr.channels();
            let values = fr
                .values()
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let s = &per_channel[i % ch];
                    if s.is_degenerate() {
                        return 0.0;
                    }
                    let (z, clamped) = s.normalize_unchecked(v);
                    floored += clamped as usize;
                    z
                })
                .collect();
            MarketFrame::new(fr.timestamp, ch, values)
        })
        .collect::<Result<Vec<_>>>()?;
    if floored > 0 {
        log::warn!("{floored} values fell below their training minimum by >= 1 unit; shifted values floored at {CPLUS_FLOOR}");
    }
    MarketVideo::new(raw.layout().clone(), raw.features().to_vec(), frames)
}
