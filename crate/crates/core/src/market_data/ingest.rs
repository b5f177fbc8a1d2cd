use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration, Timelike, Utc};

use super::{GridLayout, MarketFrame, MarketVideo, RTLMP};
use crate::error::{Error, Result};

/// Longest run of missing hours per zone that is forward-filled.
pub const MAX_FILL_HOURS: usize = 6;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub rows: usize,
    pub frames: usize,
    pub filled_cells: usize,
    pub first: Option<DateTime<Utc>>,
    pub last: Option<DateTime<Utc>>,
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Reads a wide-form market CSV (`timestamp,zone,<feature>...`).
///
/// `features` selects and orders the channels; `rtlmp` is moved to channel 0
/// if listed elsewhere. Columns not listed are ignored.
pub fn ingest_csv(path: &Path, layout: Arc<GridLayout>, features: &[String]) -> Result<(MarketVideo, IngestReport)> {
    let file = File::open(path)?;
    ingest_reader(file, path, layout, features)
}

pub fn ingest_reader<R: Read>(
    reader: R,
    source: &Path,
    layout: Arc<GridLayout>,
    features: &[String],
) -> Result<(MarketVideo, IngestReport)> {
    let schema_err = |line: u64, msg: String| Error::Schema {
        path: PathBuf::from(source),
        line,
        msg,
    };

    let mut features: Vec<String> = features.to_vec();
    match features.iter().position(|f| f == RTLMP) {
        Some(0) => {}
        Some(i) => {
            let f = features.remove(i);
            features.insert(0, f);
        }
        None => return Err(Error::Config(format!("feature list must include `{RTLMP}`"))),
    }

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| schema_err(1, e.to_string()))?
        .clone();
    if headers.get(0) != Some("timestamp") || headers.get(1) != Some("zone") {
        return Err(schema_err(1, "header must start with `timestamp,zone`".into()));
    }
    let cols: Vec<usize> = features
        .iter()
        .map(|f| {
            headers
                .iter()
                .position(|h| h == f)
                .ok_or_else(|| schema_err(1, format!("missing feature column `{f}`")))
        })
        .collect::<Result<_>>()?;

    let f = features.len();
    let cells = layout.cells();
    let mut rows: HashMap<(i64, usize), Vec<f64>> = HashMap::new();
    let mut span: Option<(DateTime<Utc>, DateTime<Utc>)> = None;
    let mut report = IngestReport::default();

    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            schema_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let ts = DateTime::parse_from_rfc3339(rec.get(0).unwrap_or(""))
            .map_err(|e| schema_err(line, format!("bad timestamp `{}`: {e}", rec.get(0).unwrap_or(""))))?
            .with_timezone(&Utc);
        if ts.minute() != 0 || ts.second() != 0 || ts.nanosecond() != 0 {
            return Err(schema_err(line, format!("timestamp {ts} is not on a whole hour")));
        }
        let zone = rec.get(1).unwrap_or("");
        let cell = layout.cell_of(zone).ok_or_else(|| Error::UnknownZone {
            path: PathBuf::from(source),
            line,
            zone: zone.to_string(),
        })?;
        let mut vals = Vec::with_capacity(f);
        for (name, &c) in features.iter().zip(&cols) {
            let raw = rec.get(c).unwrap_or("").trim();
            let v: f64 = raw
                .parse()
                .map_err(|_| schema_err(line, format!("`{name}` value `{raw}` is not a number")))?;
            if !v.is_finite() {
                return Err(schema_err(line, format!("`{name}` value is not finite")));
            }
            vals.push(v);
        }
        let hour = ts.timestamp() / 3600;
        if rows.insert((hour, cell), vals).is_some() {
            return Err(schema_err(line, format!("duplicate row for zone `{zone}` at {}", format_timestamp(&ts))));
        }
        span = Some(match span {
            None => (ts, ts),
            Some((a, b)) => (a.min(ts), b.max(ts)),
        });
        report.rows += 1;
    }

    let (first, last) = span.ok_or_else(|| Error::Data(format!("{}: no data rows", source.display())))?;
    let hours = ((last - first).num_hours() + 1) as usize;
    let h0 = first.timestamp() / 3600;

    let mut frames: Vec<MarketFrame> = Vec::with_capacity(hours);
    let mut missing_run = vec![0usize; cells];
    for h in 0..hours {
        let ts = first + Duration::hours(h as i64);
        let mut values = vec![0.0; cells * f];
        for cell in 0..cells {
            let dst = &mut values[cell * f..(cell + 1) * f];
            match rows.get(&(h0 + h as i64, cell)) {
                Some(v) => {
                    missing_run[cell] = 0;
                    dst.copy_from_slice(v);
                }
                None => {
                    missing_run[cell] += 1;
                    let zone = &layout.zones()[cell];
                    let Some(prev) = frames.last() else {
                        return Err(Error::Data(format!(
                            "zone `{zone}` has no data at the first hour {}; cannot forward-fill",
                            format_timestamp(&ts)
                        )));
                    };
                    if missing_run[cell] > MAX_FILL_HOURS {
                        // Report the full extent of the gap.
                        let start = h + 1 - missing_run[cell];
                        let mut end = h;
                        while end + 1 < hours && !rows.contains_key(&(h0 + end as i64 + 1, cell)) {
                            end += 1;
                        }
                        return Err(Error::Gap {
                            zone: zone.clone(),
                            from: format_timestamp(&(first + Duration::hours(start as i64))),
                            to: format_timestamp(&(first + Duration::hours(end as i64))),
                            hours: end + 1 - start,
                            limit: MAX_FILL_HOURS,
                        });
                    }
                    for (k, d) in dst.iter_mut().enumerate() {
                        *d = prev.get(cell, k);
                    }
                    report.filled_cells += 1;
                    log::warn!(
                        "zone `{zone}` missing at {}; forward-filled from previous hour",
                        format_timestamp(&ts)
                    );
                }
            }
        }
        frames.push(MarketFrame::new(ts, f, values)?);
    }

    report.frames = frames.len();
    report.first = Some(first);
    report.last = Some(last);
    let video = MarketVideo::new(layout, features, frames)?;
    Ok((video, report))
}

/// Writes a video in the same wide CSV schema `ingest_csv` reads.
pub fn write_csv<W: Write>(video: &MarketVideo, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string(), "zone".to_string()];
    header.extend(video.features().iter().cloned());
    w.write_record(&header).map_err(csv_io)?;
    let zones = video.layout().zones();
    for fr in video.frames() {
        let ts = format_timestamp(&fr.timestamp);
        for (cell, zone) in zones.iter().enumerate() {
            let mut row = Vec::with_capacity(header.len());
            row.push(ts.clone());
            row.push(zone.clone());
            for ch in 0..fr.channels() {
                row.push(format!("{}", fr.get(cell, ch)));
            }
            w.write_record(&row).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
