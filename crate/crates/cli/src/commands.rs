use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use lmpgan::calibration::{calibrate_zones, write_report, CalibrationRow};
use lmpgan::evaluation::{write_matrix_csv, ScoreReport};
use lmpgan::gan::{GanModel, StopReason, TrainLog, Trainer};
use lmpgan::market_data::{
    format_timestamp, ingest_csv, make_video, synth_market_with, window, write_csv, GridLayout, MarketVideo, NormStats,
    SynthParams,
};
use lmpgan::nn::Checkpoint;
use lmpgan::render::{write_matrix_ppm, write_ppm};

use crate::config::{RunConfig, Source};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Writes through a temporary sibling file so readers never see partial output.
fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> lmpgan::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(lmpgan::Error::from)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut w = BufWriter::new(File::create(&tmp).map_err(lmpgan::Error::from)?);
    f(&mut w)?;
    w.flush().map_err(lmpgan::Error::from)?;
    drop(w);
    fs::rename(&tmp, path).map_err(lmpgan::Error::from)?;
    Ok(())
}

fn layout(cfg: &RunConfig) -> Result<Arc<GridLayout>> {
    Ok(Arc::new(cfg.grid.layout()?))
}

fn load_raw(cfg: &RunConfig) -> Result<MarketVideo> {
    Ok(ingest_csv(&cfg.paths.data, layout(cfg)?, &cfg.data.features)?.0)
}

fn load_normalized(cfg: &RunConfig) -> Result<MarketVideo> {
    let path = cfg.paths.normalized();
    if !path.exists() {
        return Err(CliError::Core(lmpgan::Error::Data(format!(
            "{} not found; run `lmpgan ingest` first",
            path.display()
        ))));
    }
    Ok(ingest_csv(&path, layout(cfg)?, &cfg.data.features)?.0)
}

/// Index of the first hour after the training span.
fn train_end(cfg: &RunConfig, video: &MarketVideo) -> Result<usize> {
    let end = match cfg.data.train_end {
        Some(ts) => video.index_of(&ts).ok_or_else(|| {
            lmpgan::Error::Data(format!("data.train_end {} is outside the data span", format_timestamp(&ts)))
        })?,
        None => video.len().checked_sub(cfg.data.holdout_hours).ok_or_else(|| lmpgan::Error::Insufficient {
            what: "hours for the hold-out span",
            needed: cfg.data.holdout_hours + 1,
            got: video.len(),
        })?,
    };
    if end == 0 {
        return Err(lmpgan::Error::Data("training span is empty".into()).into());
    }
    Ok(end)
}

pub fn synth(cfg: &RunConfig, hours: Option<usize>, out: Option<PathBuf>) -> Result<()> {
    let s = &cfg.synth;
    let mut p = SynthParams::new(cfg.seed, hours.unwrap_or(s.hours), s.spike_rate);
    if let Some(t) = s.start {
        p.start = t;
    }
    if let Some(v) = s.local_noise {
        p.local_noise = v;
    }
    if let Some(v) = s.system_noise {
        p.system_noise = v;
    }
    let video = synth_market_with(&p, layout(cfg)?)?;
    let out = out.unwrap_or_else(|| cfg.paths.data.clone());
    write_atomic(&out, |w| write_csv(&video, w))?;
    println!(
        "wrote {} rows ({} hours x {} zones) to {}",
        video.len() * video.layout().cells(),
        video.len(),
        video.layout().cells(),
        out.display()
    );
    Ok(())
}

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let (raw, report) = ingest_csv(&cfg.paths.data, layout(cfg)?, &cfg.data.features)?;
    let end = train_end(cfg, &raw)?;
    let stats = NormStats::fit(&raw.slice(0, end)?)?;
    let norm = make_video(&raw, &stats)?;
    write_atomic(&cfg.paths.norm_stats(), |w| stats.write(w))?;
    write_atomic(&cfg.paths.normalized(), |w| write_csv(&norm, w))?;
    let span = |t: Option<DateTime<Utc>>| t.map_or("-".into(), |t| format_timestamp(&t));
    println!(
        "ingested {} rows into {} frames ({} .. {}), {} cells forward-filled",
        report.rows,
        report.frames,
        span(report.first),
        span(report.last),
        report.filled_cells
    );
    println!(
        "training span: {} hours; normalization statistics fitted on it; hold-out: {} hours",
        end,
        raw.len() - end
    );
    println!("wrote {} and {}", cfg.paths.normalized().display(), cfg.paths.norm_stats().display());
    Ok(())
}

pub fn train(cfg: &RunConfig, resume: bool) -> Result<()> {
    let norm = load_normalized(cfg)?;
    let stats = NormStats::read(File::open(cfg.paths.norm_stats()).map_err(lmpgan::Error::from)?)?;
    let gan_cfg = cfg.gan_config()?;
    let end = train_end(cfg, &norm)?;
    let samples = window(&norm.slice(0, end)?, gan_cfg.history)?;
    let n_val = (samples.len() as f64 * cfg.data.validation_fraction).round() as usize;
    let (train_set, val) = samples.split_at(samples.len() - n_val);

    let ck_path = cfg.paths.checkpoint();
    let log_path = cfg.paths.train_log();
    let mut trainer = if resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        let mut model = GanModel::from_checkpoint(&ck)?;
        if model.features != norm.features() {
            return Err(lmpgan::Error::Checkpoint("checkpoint features differ from the dataset".into()).into());
        }
        model.config.max_iterations = gan_cfg.max_iterations;
        let log = if log_path.exists() {
            TrainLog::read_csv(File::open(&log_path).map_err(lmpgan::Error::from)?)?
        } else {
            TrainLog::default()
        };
        log::info!("resuming from iteration {}", ck.iteration);
        Trainer::resume(model, ck.iteration, log, train_set, val)?
    } else {
        let model = GanModel::for_video(gan_cfg, &norm)?.with_norm(stats);
        Trainer::new(model, train_set, val)?
    };
    log::info!(
        "training on {} samples ({} validation), {} generator parameters",
        train_set.len(),
        val.len(),
        trainer.model().generator.param_count()
    );

    let mut saved = None;
    let save = |t: &Trainer| -> lmpgan::Result<()> {
        if saved == Some(t.iteration()) {
            return Ok(());
        }
        saved = Some(t.iteration());
        let ck = t.model().to_checkpoint(t.iteration());
        write_atomic(&ck_path, |w| ck.write(w)).map_err(CliError::into_core)?;
        write_atomic(&log_path, |w| t.log().write_csv(w)).map_err(CliError::into_core)?;
        if let Some(r) = t.log().rows.last() {
            log::info!(
                "iteration {}: loss_D {:.4}, loss_G {:.4}, val_l2 {:.5}",
                r.iteration,
                r.loss_d,
                r.loss_g,
                r.val_l2
            );
        }
        Ok(())
    };
    let stop = trainer.run(save)?;
    println!(
        "training stopped at iteration {} ({}); checkpoint {}, log {}",
        trainer.iteration(),
        match stop {
            StopReason::MaxIterations => "iteration cap",
            StopReason::EarlyStop => "no validation improvement",
        },
        ck_path.display(),
        log_path.display()
    );
    Ok(())
}

fn load_model(cfg: &RunConfig) -> Result<GanModel> {
    let ck = Checkpoint::load(&cfg.paths.checkpoint())?;
    Ok(GanModel::from_checkpoint(&ck)?)
}

pub fn predict(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let norm = load_normalized(cfg)?;
    let raw = load_raw(cfg)?;
    if raw.len() != norm.len() || raw.frames()[0].timestamp != norm.frames()[0].timestamp {
        return Err(lmpgan::Error::Data("normalized dataset is stale; re-run `lmpgan ingest`".into()).into());
    }
    let start = train_end(cfg, &norm)?;
    let pred = model.predict_zone_series(&norm, start, norm.len())?;
    let truth = raw.rtlmp_by_zone();
    let zones = raw.layout().zones();
    let path = cfg.paths.predictions();
    write_atomic(&path, |w| {
        writeln!(w, "timestamp,zone,y_true,y_gan")?;
        for h in start..norm.len() {
            let ts = format_timestamp(&norm.frames()[h].timestamp);
            for (z, zone) in zones.iter().enumerate() {
                writeln!(w, "{ts},{zone},{:?},{:?}", truth[z][h], pred[z][h - start])?;
            }
        }
        Ok(())
    })?;
    println!("wrote {} hours x {} zones to {}", norm.len() - start, zones.len(), path.display());
    Ok(())
}

/// Hourly per-zone columns of a report CSV.
struct Series {
    times: Vec<DateTime<Utc>>,
    /// `columns[c][zone][hour]`.
    columns: Vec<Vec<Vec<f64>>>,
}

fn read_series(path: &Path, layout: &GridLayout, names: &[&str]) -> Result<Series> {
    let data_err = |line: u64, msg: String| lmpgan::Error::Schema {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| data_err(0, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| data_err(1, e.to_string()))?.clone();
    let col = |n: &str| headers.iter().position(|h| h == n).ok_or_else(|| data_err(1, format!("missing column `{n}`")));
    let (tcol, zcol) = (col("timestamp")?, col("zone")?);
    let vcols: Vec<usize> = names.iter().map(|n| col(n)).collect::<std::result::Result<_, _>>()?;

    let cells = layout.cells();
    let mut times: Vec<DateTime<Utc>> = Vec::new();
    let mut rows: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| data_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let ts = DateTime::parse_from_rfc3339(&rec[tcol])
            .map_err(|e| data_err(line, format!("bad timestamp: {e}")))?
            .with_timezone(&Utc);
        if times.last() != Some(&ts) {
            if let Some(prev) = times.last() {
                if ts != *prev + Duration::hours(1) {
                    return Err(data_err(line, "timestamps must be consecutive hours".into()).into());
                }
            }
            times.push(ts);
        }
        let zone = layout.cell_of(&rec[zcol]).ok_or_else(|| data_err(line, format!("unknown zone `{}`", &rec[zcol])))?;
        let vals = vcols
            .iter()
            .map(|&c| rec[c].parse::<f64>().map_err(|_| data_err(line, format!("`{}` is not a number", &rec[c]))))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if rows.insert((times.len() - 1, zone), vals).is_some() {
            return Err(data_err(line, format!("duplicate row for zone `{}`", &rec[zcol])).into());
        }
    }
    if times.is_empty() || rows.len() != times.len() * cells {
        return Err(lmpgan::Error::Data(format!("{}: every hour needs one row per zone", path.display())).into());
    }
    let columns = (0..names.len())
        .map(|c| (0..cells).map(|z| (0..times.len()).map(|h| rows[&(h, z)][c]).collect()).collect())
        .collect();
    Ok(Series { times, columns })
}

pub fn calibrate(cfg: &RunConfig) -> Result<()> {
    let layout = layout(cfg)?;
    let s = read_series(&cfg.paths.predictions(), &layout, &["y_true", "y_gan"])?;
    let (truth, pred) = (&s.columns[0], &s.columns[1]);
    let cal = calibrate_zones(pred, truth, &cfg.calibration_config())?;
    let start = cal[0].start;
    let mut rows = Vec::with_capacity((s.times.len() - start) * layout.cells());
    for h in start..s.times.len() {
        for (z, zone) in layout.zones().iter().enumerate() {
            rows.push(CalibrationRow {
                timestamp: s.times[h],
                zone: zone.clone(),
                y_true: truth[z][h],
                y_gan: pred[z][h],
                delta_hat: cal[z].delta_hat[h - start],
                y_calibrated: cal[z].calibrated[h - start],
            });
        }
    }
    let path = cfg.paths.calibration();
    write_atomic(&path, |w| write_report(&rows, w))?;
    println!(
        "calibrated {} hours x {} zones after a {}-hour warm-up; wrote {}",
        s.times.len() - start,
        layout.cells(),
        start,
        path.display()
    );
    Ok(())
}

pub fn evaluate(cfg: &RunConfig, source: Option<Source>) -> Result<()> {
    let raw = load_raw(cfg)?;
    let layout = Arc::clone(raw.layout());
    let (path, column) = match source.unwrap_or(cfg.evaluation.source) {
        Source::Gan => (cfg.paths.predictions(), "y_gan"),
        Source::Calibrated => (cfg.paths.calibration(), "y_calibrated"),
    };
    let s = read_series(&path, &layout, &[column])?;
    let start = raw
        .index_of(&s.times[0])
        .ok_or_else(|| lmpgan::Error::Data(format!("{}: first hour is outside the data span", path.display())))?;
    let report = ScoreReport::compute(layout.zones(), &raw.rtlmp_by_zone(), &s.columns[0], start, &cfg.score_settings())?;
    write_atomic(&cfg.paths.score_csv(), |w| report.write_csv(w))?;
    let table = report.to_table();
    write_atomic(&cfg.paths.score_table(), |w| Ok(w.write_all(table.as_bytes())?))?;
    write_atomic(&cfg.paths.corr("pred"), |w| write_matrix_csv(layout.zones(), &report.corr_pred, w))?;
    write_atomic(&cfg.paths.corr("truth"), |w| write_matrix_csv(layout.zones(), &report.corr_truth, w))?;
    println!(
        "scored `{column}` over {} hours from {}",
        s.times.len(),
        format_timestamp(&s.times[0])
    );
    print!("{table}");
    Ok(())
}

pub fn render_frame(cfg: &RunConfig, index: Option<usize>, time: Option<DateTime<Utc>>, feature: &str, out: Option<PathBuf>) -> Result<()> {
    let norm = load_normalized(cfg)?;
    let i = match (index, time) {
        (_, Some(t)) => norm
            .index_of(&t)
            .ok_or_else(|| lmpgan::Error::Data(format!("{} is outside the data span", format_timestamp(&t))))?,
        (Some(i), None) if i < norm.len() => i,
        (Some(i), None) => return Err(lmpgan::Error::Data(format!("frame {i} out of range (0..{})", norm.len())).into()),
        (None, None) => norm.len() - 1,
    };
    let ch = norm
        .feature_index(feature)
        .ok_or_else(|| CliError::Usage(format!("unknown feature `{feature}`")))?;
    let l = norm.layout();
    let out = out.unwrap_or_else(|| cfg.paths.reports.join(format!("frame_{i}_{feature}.ppm")));
    write_atomic(&out, |w| write_ppm(&norm.frames()[i].channel(ch), l.rows(), l.cols(), w))?;
    println!("wrote {}x{} frame {i} ({feature}) to {}", l.rows(), l.cols(), out.display());
    Ok(())
}

fn read_matrix(path: &Path) -> Result<Vec<Vec<Option<f64>>>> {
    let bad = |line: usize, msg: &str| lmpgan::Error::Schema {
        path: path.to_path_buf(),
        line: line as u64,
        msg: msg.to_string(),
    };
    let text = fs::read_to_string(path).map_err(lmpgan::Error::from)?;
    let mut m = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let row = line
            .split(',')
            .skip(1)
            .map(|v| match v {
                "NA" => Ok(None),
                v => v.parse().map(Some).map_err(|_| bad(i + 1, "not a number")),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        m.push(row);
    }
    if m.iter().any(|r| r.len() != m.len()) {
        return Err(bad(1, "matrix is not square").into());
    }
    Ok(m)
}

pub fn render_correlation(cfg: &RunConfig, which: &str, out: Option<PathBuf>) -> Result<()> {
    let m = read_matrix(&cfg.paths.corr(which))?;
    let out = out.unwrap_or_else(|| cfg.paths.reports.join(format!("corr_{which}.ppm")));
    write_atomic(&out, |w| write_matrix_ppm(&m, w))?;
    println!("wrote {0}x{0} correlation heatmap to {1}", m.len(), out.display());
    Ok(())
}
