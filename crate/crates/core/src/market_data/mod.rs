//! Market data images and videos.
//!
//! A [`MarketFrame`] is one hour of market data laid out on an `M x N` grid of
//! price zones with `F` feature channels per cell. A [`MarketVideo`] is a
//! gap-free hourly sequence of frames sharing one [`GridLayout`]. Channel 0 is
//! always the real-time price.

mod ingest;
mod norm;
mod synth;

use std::collections::HashSet;
use std::sync::Arc;

use chrono::{DateTime, Duration, Timelike, Utc};

use crate::error::{Error, Result};
use crate::stats::pearson;

pub use ingest::{format_timestamp, ingest_csv, ingest_reader, write_csv, IngestReport, MAX_FILL_HOURS};
pub use norm::{
    denormalize, fit_norm_stats, make_video, normalize, FeatureStats, NormStats, CPLUS_FLOOR,
};
pub use synth::{synth_market, synth_market_with, SynthParams};

/// Name of the real-time price feature. It always occupies channel 0.
pub const RTLMP: &str = "rtlmp";

/// Placement of price zones on the image grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridLayout {
    rows: usize,
    cols: usize,
    zone_order: Vec<String>,
}

impl GridLayout {
    pub fn new(rows: usize, cols: usize, zone_order: Vec<String>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("grid must be non-empty, got {rows}x{cols}")));
        }
        if zone_order.len() != rows * cols {
            return Err(Error::Config(format!(
                "grid {rows}x{cols} needs {} zones, got {}",
                rows * cols,
                zone_order.len()
            )));
        }
        let mut seen = HashSet::new();
        for z in &zone_order {
            if !seen.insert(z.as_str()) {
                return Err(Error::Config(format!("zone `{z}` listed twice in zone_order")));
            }
        }
        Ok(Self {
            rows,
            cols,
            zone_order,
        })
    }

    /// `rows x cols` grid with zones named `Z1`, `Z2`, ... in row-major order.
    pub fn numbered(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, (1..=rows * cols).map(|i| format!("Z{i}")).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn zones(&self) -> &[String] {
        &self.zone_order
    }

    pub fn cell_of(&self, zone: &str) -> Option<usize> {
        self.zone_order.iter().position(|z| z == zone)
    }

    /// (row, col) of a row-major cell index.
    pub fn position(&self, cell: usize) -> (usize, usize) {
        (cell / self.cols, cell % self.cols)
    }

    /// 4-neighbourhood of a cell.
    pub fn neighbors(&self, cell: usize) -> Vec<usize> {
        let (r, c) = self.position(cell);
        let mut out = Vec::with_capacity(4);
        if r > 0 {
            out.push(cell - self.cols);
        }
        if r + 1 < self.rows {
            out.push(cell + self.cols);
        }
        if c > 0 {
            out.push(cell - 1);
        }
        if c + 1 < self.cols {
            out.push(cell + 1);
        }
        out
    }
}

/// One raw observation row: a zone's features at one hour.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub timestamp: DateTime<Utc>,
    pub zone_id: String,
    pub features: Vec<(String, f64)>,
}

/// Market data image for one hour. Values are stored `[cell][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketFrame {
    pub timestamp: DateTime<Utc>,
    channels: usize,
    values: Vec<f64>,
}

impl MarketFrame {
    pub fn new(timestamp: DateTime<Utc>, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || !values.len().is_multiple_of(channels) {
            return Err(Error::Data(format!(
                "frame at {} has {} values, not a multiple of {channels} channels",
                format_timestamp(&timestamp),
                values.len()
            )));
        }
        Ok(Self {
            timestamp,
            channels,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn cells(&self) -> usize {
        self.values.len() / self.channels
    }

    pub fn get(&self, cell: usize, channel: usize) -> f64 {
        self.values[cell * self.channels + channel]
    }

    pub fn set(&mut self, cell: usize, channel: usize, v: f64) {
        self.values[cell * self.channels + channel] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// One channel across all cells, row-major.
    pub fn channel(&self, channel: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn rtlmp(&self) -> Vec<f64> {
        self.channel(0)
    }
}

/// Time-ordered, gap-free hourly sequence of frames over one layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketVideo {
    layout: Arc<GridLayout>,
    features: Vec<String>,
    frames: Vec<MarketFrame>,
}

impl MarketVideo {
    pub fn new(layout: Arc<GridLayout>, features: Vec<String>, frames: Vec<MarketFrame>) -> Result<Self> {
        if features.first().map(String::as_str) != Some(RTLMP) {
            return Err(Error::Data(format!("channel 0 must be `{RTLMP}`, got {features:?}")));
        }
        let f = features.len();
        for (i, fr) in frames.iter().enumerate() {
            if fr.channels != f || fr.cells() != layout.cells() {
                return Err(Error::shape(
                    format!("frame {i}"),
                    &[layout.rows(), layout.cols(), f],
                    &[fr.cells(), fr.channels],
                ));
            }
            if i > 0 && fr.timestamp - frames[i - 1].timestamp != Duration::hours(1) {
                return Err(Error::Data(format!(
                    "frames not hourly-contiguous between {} and {}",
                    format_timestamp(&frames[i - 1].timestamp),
                    format_timestamp(&fr.timestamp)
                )));
            }
            if fr.timestamp.minute() != 0 || fr.timestamp.second() != 0 || fr.timestamp.nanosecond() != 0 {
                return Err(Error::Data(format!(
                    "timestamp {} is not on a whole hour",
                    format_timestamp(&fr.timestamp)
                )));
            }
        }
        Ok(Self {
            layout,
            features,
            frames,
        })
    }

    pub fn layout(&self) -> &Arc<GridLayout> {
        &self.layout
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f == name)
    }

    pub fn frames(&self) -> &[MarketFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.features.len()
    }

    /// Hourly series of one channel at one cell.
    pub fn series(&self, cell: usize, channel: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.get(cell, channel)).collect()
    }

    /// RTLMP series per zone, in layout order.
    pub fn rtlmp_by_zone(&self) -> Vec<Vec<f64>> {
        (0..self.layout.cells()).map(|c| self.series(c, 0)).collect()
    }

    /// Frames `[start, end)` as a new video.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            return Err(Error::Data(format!(
                "slice {start}..{end} out of range for video of {} frames",
                self.len()
            )));
        }
        Ok(Self {
            layout: Arc::clone(&self.layout),
            features: self.features.clone(),
            frames: self.frames[start..end].to_vec(),
        })
    }

    /// Index of the frame at `ts`, if inside the video.
    pub fn index_of(&self, ts: &DateTime<Utc>) -> Option<usize> {
        let first = self.frames.first()?.timestamp;
        let h = (*ts - first).num_hours();
        if h < 0 || h as usize >= self.len() || first + Duration::hours(h) != *ts {
            return None;
        }
        Some(h as usize)
    }
}

/// One supervised example: `n` consecutive history frames and the RTLMP image
/// of the following hour.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<MarketFrame>,
    pub y: Vec<f64>,
    pub target_time: DateTime<Utc>,
}

impl Sample {
    /// RTLMP channel of the last history frame.
    pub fn last_rtlmp(&self) -> Vec<f64> {
        self.x.last().map(MarketFrame::rtlmp).unwrap_or_default()
    }
}

/// Sliding windows of `n` history frames; yields `T - n` samples.
pub fn window(video: &MarketVideo, n: usize) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Config("history length n must be at least 1".into()));
    }
    if video.len() <= n {
        return Err(Error::Insufficient {
            what: "frames for windowing",
            needed: n + 1,
            got: video.len(),
        });
    }
    Ok((0..video.len() - n)
        .map(|i| Sample {
            x: video.frames[i..i + n].to_vec(),
            y: video.frames[i + n].rtlmp(),
            target_time: video.frames[i + n].timestamp,
        })
        .collect())
}

/// Pearson correlation of `feature` against `target`, pooled over every
/// (zone, hour) pair.
pub fn feature_correlation(video: &MarketVideo, feature: &str, target: &str) -> Result<f64> {
    let fi = video
        .feature_index(feature)
        .ok_or_else(|| Error::MissingStats(feature.to_string()))?;
    let ti = video
        .feature_index(target)
        .ok_or_else(|| Error::MissingStats(target.to_string()))?;
    let mut a = Vec::with_capacity(video.len() * video.layout.cells());
    let mut b = Vec::with_capacity(a.capacity());
    for fr in &video.frames {
        for cell in 0..fr.cells() {
            a.push(fr.get(cell, fi));
            b.push(fr.get(cell, ti));
        }
    }
    pearson(&a, &b).ok_or_else(|| {
        Error::Data(format!(
            "correlation of `{feature}` vs `{target}` undefined: zero variance"
        ))
    })
}
