//! Run configuration: one TOML file plus `--set section.key=value` overrides.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use lmpgan::calibration::CalibrationConfig;
use lmpgan::evaluation::{ScoreSettings, EPS_DEN, SPIKE_MULTIPLIER};
use lmpgan::gan::{GanArch, GanConfig};
use lmpgan::market_data::GridLayout;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Single source of randomness for synthesis and training.
    pub seed: u64,
    pub paths: Paths,
    pub grid: Grid,
    pub data: Data,
    pub gan: GanSection,
    pub calibration: CalibrationSection,
    pub evaluation: EvaluationSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Raw market CSV.
    pub data: PathBuf,
    /// Normalized video and normalization statistics.
    pub artifacts: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "market.csv".into(),
            artifacts: "artifacts".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
        }
    }
}

impl Paths {
    pub fn normalized(&self) -> PathBuf {
        self.artifacts.join("normalized.csv")
    }

    pub fn norm_stats(&self) -> PathBuf {
        self.artifacts.join("norm_stats.csv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.checkpoints.join("latest.ckpt")
    }

    pub fn train_log(&self) -> PathBuf {
        self.checkpoints.join("train_log.csv")
    }

    pub fn predictions(&self) -> PathBuf {
        self.reports.join("predictions.csv")
    }

    pub fn calibration(&self) -> PathBuf {
        self.reports.join("calibration.csv")
    }

    pub fn score_csv(&self) -> PathBuf {
        self.reports.join("score.csv")
    }

    pub fn score_table(&self) -> PathBuf {
        self.reports.join("score.txt")
    }

    pub fn corr(&self, which: &str) -> PathBuf {
        self.reports.join(format!("corr_{which}.csv"))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major zone names; `Z1..Z{rows*cols}` when empty.
    pub zones: Vec<String>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 3,
            zones: Vec::new(),
        }
    }
}

impl Grid {
    pub fn layout(&self) -> lmpgan::Result<GridLayout> {
        if self.zones.is_empty() {
            GridLayout::numbered(self.rows, self.cols)
        } else {
            GridLayout::new(self.rows, self.cols, self.zones.clone())
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Data {
    pub features: Vec<String>,
    /// First hour after the training span.
    #[serde(deserialize_with = "de_time")]
    pub train_end: Option<DateTime<Utc>>,
    /// Hours held out at the end when `train_end` is unset.
    pub holdout_hours: usize,
    /// Trailing share of training samples used for validation.
    pub validation_fraction: f64,
}

impl Default for Data {
    fn default() -> Self {
        Self {
            features: vec!["rtlmp".into(), "dalmp".into(), "demand".into()],
            train_end: None,
            holdout_hours: 504,
            validation_fraction: 0.1,
        }
    }
}

/// Optional overrides of the generator/discriminator hyperparameters.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanSection {
    pub history: Option<usize>,
    pub lambda_adv: Option<f64>,
    pub lambda_lp: Option<f64>,
    pub lambda_gdl: Option<f64>,
    pub lambda_dcl: Option<f64>,
    pub p: Option<u32>,
    pub alpha: Option<u32>,
    pub lr_g: Option<f64>,
    pub lr_d: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_iterations: Option<u64>,
    pub eval_every: Option<u64>,
    pub patience: Option<u64>,
    pub min_improvement: Option<f64>,
    pub extra_channels: Option<usize>,
    pub dropout: Option<f64>,
    pub leaky_slope: Option<f64>,
    /// Divides every layer width of the default architecture.
    pub width_divisor: Option<usize>,
    pub group_maps: Option<usize>,
    pub generator_maps: Option<Vec<usize>>,
    pub discriminator_dense: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub window: usize,
    pub refit: usize,
    pub p_max: usize,
    pub q_max: usize,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let c = CalibrationConfig::default();
        Self {
            window: c.window,
            refit: c.refit,
            p_max: c.p_max,
            q_max: c.q_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Gan,
    Calibrated,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub eps_den: f64,
    pub spike_multiplier: f64,
    /// Which prediction column `evaluate` scores.
    pub source: Source,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            eps_den: EPS_DEN,
            spike_multiplier: SPIKE_MULTIPLIER,
            source: Source::Calibrated,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub hours: usize,
    pub spike_rate: f64,
    #[serde(deserialize_with = "de_time")]
    pub start: Option<DateTime<Utc>>,
    pub local_noise: Option<f64>,
    pub system_noise: Option<f64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            hours: 2160,
            spike_rate: 0.01,
            start: None,
            local_noise: None,
            system_noise: None,
        }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when `None`), applies `key=value` overrides and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                text.parse().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            set_dotted(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.grid.layout()?;
        if !self.data.features.iter().any(|f| f == lmpgan::market_data::RTLMP) {
            return Err(CliError::Config("data.features must include `rtlmp`".into()));
        }
        if !(0.0..1.0).contains(&self.data.validation_fraction) {
            return Err(CliError::Config("data.validation_fraction must be in [0, 1)".into()));
        }
        self.gan_config()?.validate()?;
        self.calibration_config().validate()?;
        if !(self.evaluation.eps_den >= 0.0 && self.evaluation.spike_multiplier > 0.0) {
            return Err(CliError::Config("evaluation.eps_den must be >= 0 and spike_multiplier > 0".into()));
        }
        Ok(())
    }

    pub fn gan_config(&self) -> Result<GanConfig, CliError> {
        let g = &self.gan;
        let d = GanConfig::default();
        let mut arch = match g.width_divisor {
            Some(0) => return Err(CliError::Config("gan.width_divisor must be positive".into())),
            Some(k) => GanArch::scaled_down(k),
            None => d.arch.clone(),
        };
        if let Some(v) = g.group_maps {
            arch.group_maps = v;
        }
        if let Some(v) = &g.generator_maps {
            arch.generator_maps = v.clone();
        }
        if let Some(v) = &g.discriminator_dense {
            arch.discriminator_dense = v.clone();
        }
        Ok(GanConfig {
            history: g.history.unwrap_or(d.history),
            lambda_adv: g.lambda_adv.unwrap_or(d.lambda_adv),
            lambda_lp: g.lambda_lp.unwrap_or(d.lambda_lp),
            lambda_gdl: g.lambda_gdl.unwrap_or(d.lambda_gdl),
            lambda_dcl: g.lambda_dcl.unwrap_or(d.lambda_dcl),
            p: g.p.unwrap_or(d.p),
            alpha: g.alpha.unwrap_or(d.alpha),
            lr_g: g.lr_g.unwrap_or(d.lr_g),
            lr_d: g.lr_d.unwrap_or(d.lr_d),
            batch_size: g.batch_size.unwrap_or(d.batch_size),
            max_iterations: g.max_iterations.unwrap_or(d.max_iterations),
            seed: self.seed,
            eval_every: g.eval_every.unwrap_or(d.eval_every),
            patience: g.patience.unwrap_or(d.patience),
            min_improvement: g.min_improvement.unwrap_or(d.min_improvement),
            extra_channels: g.extra_channels.unwrap_or(d.extra_channels),
            dropout: g.dropout.unwrap_or(d.dropout),
            leaky_slope: g.leaky_slope.unwrap_or(d.leaky_slope),
            arch,
        })
    }

    pub fn calibration_config(&self) -> CalibrationConfig {
        let c = &self.calibration;
        CalibrationConfig {
            window: c.window,
            refit: c.refit,
            p_max: c.p_max,
            q_max: c.q_max,
        }
    }

    pub fn score_settings(&self) -> ScoreSettings {
        ScoreSettings {
            eps_den: self.evaluation.eps_den,
            spike_multiplier: self.evaluation.spike_multiplier,
        }
    }
}

/// RFC 3339 timestamp given either as a TOML datetime or a string.
fn de_time<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<DateTime<Utc>>, D::Error> {
    let text = match toml::Value::deserialize(d)? {
        toml::Value::String(s) => s,
        toml::Value::Datetime(t) => t.to_string(),
        other => return Err(serde::de::Error::custom(format!("expected a timestamp, got `{other}`"))),
    };
    DateTime::parse_from_rfc3339(&text)
        .map(|t| Some(t.with_timezone(&Utc)))
        .map_err(|e| serde::de::Error::custom(format!("bad timestamp `{text}`: {e}")))
}

/// Applies `a.b.c=value`; the value is parsed as a TOML value, falling back
/// to a bare string.
fn set_dotted(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{assignment}` is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, sections) = parts.split_last().unwrap();
    let mut cur = table;
    for s in sections {
        cur = cur
            .entry(s.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{s}` in `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = RunConfig::load(None, &[]).unwrap();
        assert_eq!(c.grid.layout().unwrap().zones()[0], "Z1");
        assert_eq!(c.gan_config().unwrap().arch, GanArch::default());
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::load(
            None,
            &[
                "seed=7".into(),
                "gan.width_divisor=8".into(),
                "paths.data=x/y.csv".into(),
                "data.train_end=2017-02-01T00:00:00Z".into(),
                "evaluation.source=gan".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.gan_config().unwrap().seed, 7);
        assert_eq!(c.gan_config().unwrap().arch, GanArch::scaled_down(8));
        assert_eq!(c.paths.data, PathBuf::from("x/y.csv"));
        assert!(c.data.train_end.is_some());
        assert_eq!(c.evaluation.source, Source::Gan);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(RunConfig::load(None, &["gan.bogus=1".into()]).is_err());
        assert!(RunConfig::load(None, &["grid.zones=[\"A\"]".into()]).is_err());
        assert!(RunConfig::load(None, &["data.features=[\"dalmp\"]".into()]).is_err());
        assert!(RunConfig::load(None, &["gan.batch_size=0".into()]).is_err());
        assert!(matches!(RunConfig::load(None, &["novalue".into()]), Err(CliError::Usage(_))));
    }
}
