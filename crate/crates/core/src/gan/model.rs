use std::f64::consts::TAU;
use std::sync::Arc;

use chrono::{DateTime, Datelike, Duration, Timelike, Utc};

use super::config::GanConfig;
use super::derive_seed;
use crate::error::{Error, Result};
use crate::market_data::{denormalize, FeatureStats, GridLayout, MarketFrame, MarketVideo, NormStats, Sample};
use crate::nn::{Checkpoint, LayerSpec, NetworkSpec, NetworkState, Padding, Tensor};

pub const GENERATOR: &str = "generator";
pub const DISCRIMINATOR: &str = "discriminator";

/// Generator: grouped transposed convolution (one filter bank per input
/// channel), concatenation, then transposed convolutions down to one `tanh`
/// channel. Every hidden layer is followed by batchnorm and ReLU; all layers
/// preserve the grid size.
pub fn generator_spec(cfg: &GanConfig, in_channels: usize, rows: usize, cols: usize) -> Result<NetworkSpec> {
    let per = cfg.arch.group_maps;
    let mut width = in_channels * per;
    let mut layers = vec![
        LayerSpec::Conv2dTranspose {
            in_channels,
            out_channels: width,
            groups: in_channels,
            padding: Padding::Same,
        },
        LayerSpec::ConcatGrouped {
            groups: in_channels,
            per_group: per,
        },
        LayerSpec::batchnorm(width),
        LayerSpec::Relu,
    ];
    for &maps in &cfg.arch.generator_maps {
        layers.push(LayerSpec::Conv2dTranspose {
            in_channels: width,
            out_channels: maps,
            groups: 1,
            padding: Padding::Same,
        });
        layers.push(LayerSpec::batchnorm(maps));
        layers.push(LayerSpec::Relu);
        width = maps;
    }
    layers.push(LayerSpec::Conv2dTranspose {
        in_channels: width,
        out_channels: 1,
        groups: 1,
        padding: Padding::Same,
    });
    layers.push(LayerSpec::Tanh);
    NetworkSpec::new(vec![in_channels, rows, cols], layers)
}

/// Discriminator over `n` history RTLMP frames plus one candidate frame:
/// grouped valid convolution, concatenation, dense layers and a sigmoid.
pub fn discriminator_spec(cfg: &GanConfig, rows: usize, cols: usize) -> Result<NetworkSpec> {
    let ch = cfg.history + 1;
    let per = cfg.arch.group_maps;
    if rows < 3 || cols < 3 {
        return Err(Error::Config(format!("grid {rows}x{cols} is smaller than the 3x3 kernel")));
    }
    let mut width = ch * per * (rows - 2) * (cols - 2);
    let mut layers = vec![
        LayerSpec::Conv2d {
            in_channels: ch,
            out_channels: ch * per,
            groups: ch,
            padding: Padding::Valid,
        },
        LayerSpec::ConcatGrouped { groups: ch, per_group: per },
        LayerSpec::batchnorm(ch * per),
        LayerSpec::LeakyRelu { slope: cfg.leaky_slope },
        LayerSpec::Dropout { rate: cfg.dropout },
        LayerSpec::Flatten,
    ];
    for &units in &cfg.arch.discriminator_dense {
        layers.push(LayerSpec::Dense {
            inputs: width,
            outputs: units,
        });
        layers.push(LayerSpec::batchnorm(units));
        layers.push(LayerSpec::LeakyRelu { slope: cfg.leaky_slope });
        layers.push(LayerSpec::Dropout { rate: cfg.dropout });
        width = units;
    }
    layers.push(LayerSpec::Dense { inputs: width, outputs: 1 });
    layers.push(LayerSpec::Sigmoid);
    NetworkSpec::new(vec![ch, rows, cols], layers)
}

/// Calendar planes for the predicted hour.
fn calendar(t: &DateTime<Utc>, extra: usize) -> Vec<f64> {
    let h = TAU * t.hour() as f64 / 24.0;
    let d = TAU * t.weekday().num_days_from_monday() as f64 / 7.0;
    [h.sin(), h.cos(), d.sin(), d.cos()][..extra].to_vec()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub config: GanConfig,
    pub layout: Arc<GridLayout>,
    pub features: Vec<String>,
    pub generator: NetworkState,
    pub discriminator: NetworkState,
    /// Statistics used to normalize the training data, if known.
    pub norm: Option<NormStats>,
}

impl GanModel {
    pub fn new(config: GanConfig, layout: Arc<GridLayout>, features: Vec<String>) -> Result<Self> {
        config.validate()?;
        if features.is_empty() {
            return Err(Error::Config("at least one feature is required".into()));
        }
        let c = config.history * features.len() + config.extra_channels;
        let g = generator_spec(&config, c, layout.rows(), layout.cols())?;
        let d = discriminator_spec(&config, layout.rows(), layout.cols())?;
        Ok(Self {
            generator: NetworkState::init(g, derive_seed(config.seed, 1))?,
            discriminator: NetworkState::init(d, derive_seed(config.seed, 2))?,
            config,
            layout,
            features,
            norm: None,
        })
    }

    /// Model shaped for `video`'s grid and features.
    pub fn for_video(config: GanConfig, video: &MarketVideo) -> Result<Self> {
        Self::new(config, Arc::clone(video.layout()), video.features().to_vec())
    }

    pub fn with_norm(mut self, norm: NormStats) -> Self {
        self.norm = Some(norm);
        self
    }

    pub fn input_channels(&self) -> usize {
        self.generator.spec().input[0]
    }

    fn check_history(&self, x: &[MarketFrame]) -> Result<()> {
        let f = self.features.len();
        let cells = self.layout.cells();
        if x.len() != self.config.history {
            return Err(Error::shape("history frames", &[self.config.history], &[x.len()]));
        }
        for fr in x {
            if fr.channels() != f || fr.cells() != cells {
                return Err(Error::shape("history frame", &[cells, f], &[fr.cells(), fr.channels()]));
            }
        }
        Ok(())
    }

    /// Generator input for one history window predicting `target`:
    /// channel `t * F + f` holds feature `f` of history frame `t`, followed by
    /// the calendar planes.
    pub fn generator_item(&self, x: &[MarketFrame], target: &DateTime<Utc>) -> Result<Vec<f64>> {
        self.check_history(x)?;
        let cells = self.layout.cells();
        let mut data = Vec::with_capacity(self.input_channels() * cells);
        for fr in x {
            for f in 0..self.features.len() {
                data.extend((0..cells).map(|c| fr.get(c, f)));
            }
        }
        for v in calendar(target, self.config.extra_channels) {
            data.extend(std::iter::repeat_n(v, cells));
        }
        Ok(data)
    }

    fn item_shape(&self, batch: usize, channels: usize) -> Vec<usize> {
        vec![batch, channels, self.layout.rows(), self.layout.cols()]
    }

    pub fn generator_input(&self, samples: &[&Sample]) -> Result<Tensor> {
        let mut data = Vec::new();
        for s in samples {
            data.extend(self.generator_item(&s.x, &s.target_time)?);
        }
        Tensor::new(self.item_shape(samples.len(), self.input_channels()), data)
    }

    /// Discriminator input: the history RTLMP frames followed by one
    /// candidate frame per sample (`candidates` is `[B, 1, H, W]` or flat).
    pub fn discriminator_input(&self, samples: &[&Sample], candidates: &[f64]) -> Result<Tensor> {
        let cells = self.layout.cells();
        if candidates.len() != samples.len() * cells {
            return Err(Error::shape("candidate frames", &[samples.len(), cells], &[candidates.len()]));
        }
        let mut data = Vec::with_capacity(samples.len() * (self.config.history + 1) * cells);
        for (s, cand) in samples.iter().zip(candidates.chunks(cells)) {
            self.check_history(&s.x)?;
            for fr in &s.x {
                data.extend(fr.rtlmp());
            }
            data.extend_from_slice(cand);
        }
        Tensor::new(self.item_shape(samples.len(), self.config.history + 1), data)
    }

    /// Normalized RTLMP image of the hour after `x`.
    pub fn predict_next(&self, x: &[MarketFrame]) -> Result<Vec<f64>> {
        let last = x.last().ok_or_else(|| Error::shape("history frames", &[self.config.history], &[0]))?;
        let item = self.generator_item(x, &(last.timestamp + Duration::hours(1)))?;
        let input = Tensor::new(self.item_shape(1, self.input_channels()), item)?;
        Ok(self.generator.infer(&input)?.into_data())
    }

    /// One-step predictions for frames `start..end` of `video`, each from the
    /// `n` true frames before it.
    pub fn predict_series(&self, video: &MarketVideo, start: usize, end: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.config.history;
        if start < n || end > video.len() || start > end {
            return Err(Error::Insufficient {
                what: "history frames before the first prediction",
                needed: n,
                got: start.min(video.len()),
            });
        }
        if video.features() != self.features.as_slice() {
            return Err(Error::Config(format!(
                "video features {:?} differ from model features {:?}",
                video.features(),
                self.features
            )));
        }
        let frames = video.frames();
        let mut out = Vec::with_capacity(end - start);
        let chunk = 256;
        let mut t = start;
        while t < end {
            let stop = (t + chunk).min(end);
            let mut data = Vec::new();
            for k in t..stop {
                data.extend(self.generator_item(&frames[k - n..k], &frames[k].timestamp)?);
            }
            let input = Tensor::new(self.item_shape(stop - t, self.input_channels()), data)?;
            let y = self.generator.infer(&input)?;
            out.extend(y.data().chunks(self.layout.cells()).map(<[f64]>::to_vec));
            t = stop;
        }
        Ok(out)
    }

    /// [`Self::predict_series`] mapped back to $/MWh and transposed to one
    /// series per zone.
    pub fn predict_zone_series(&self, video: &MarketVideo, start: usize, end: usize) -> Result<Vec<Vec<f64>>> {
        let frames = self.predict_series(video, start, end)?;
        let mut zones = vec![Vec::with_capacity(frames.len()); self.layout.cells()];
        for f in &frames {
            for (z, v) in self.denormalize_frame(f)?.into_iter().enumerate() {
                zones[z].push(v);
            }
        }
        Ok(zones)
    }

    fn rtlmp_stats(&self) -> Result<&FeatureStats> {
        self.norm
            .as_ref()
            .and_then(|s| s.get(crate::market_data::RTLMP))
            .ok_or_else(|| Error::MissingStats(crate::market_data::RTLMP.into()))
    }

    /// Maps a normalized RTLMP frame back to $/MWh.
    pub fn denormalize_frame(&self, frame: &[f64]) -> Result<Vec<f64>> {
        let s = self.rtlmp_stats()?;
        frame.iter().map(|&v| denormalize(v, s)).collect()
    }

    pub fn to_checkpoint(&self, iteration: u64) -> Checkpoint {
        let mut meta: Vec<_> = self.config.to_pairs().into_iter().filter(|(k, _)| k != "seed").collect();
        meta.push(("grid".into(), format!("{}x{}", self.layout.rows(), self.layout.cols())));
        meta.push(("zones".into(), self.layout.zones().join(",")));
        meta.push(("features".into(), self.features.join(",")));
        if let Some(norm) = &self.norm {
            for (f, s) in norm.entries() {
                meta.push((format!("norm.{f}"), format!("{:?},{:?}", s.min_c, s.max_cplus)));
            }
        }
        Checkpoint {
            seed: self.config.seed,
            iteration,
            meta,
            networks: vec![
                (GENERATOR.into(), self.generator.clone()),
                (DISCRIMINATOR.into(), self.discriminator.clone()),
            ],
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let missing = |k: &str| Error::Checkpoint(format!("checkpoint lacks `{k}`"));
        let mut config = GanConfig::default();
        config.apply_pairs(ck.meta.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
        config.seed = ck.seed;
        let grid = ck.meta("grid").ok_or_else(|| missing("grid"))?;
        let (rows, cols) = grid
            .split_once('x')
            .and_then(|(r, c)| Some((r.parse().ok()?, c.parse().ok()?)))
            .ok_or_else(|| Error::Checkpoint(format!("bad grid `{grid}`")))?;
        let zones = ck.meta("zones").ok_or_else(|| missing("zones"))?;
        let layout = GridLayout::new(rows, cols, zones.split(',').map(str::to_string).collect())?;
        let features: Vec<String> = ck
            .meta("features")
            .ok_or_else(|| missing("features"))?
            .split(',')
            .map(str::to_string)
            .collect();
        let mut entries = Vec::new();
        for (k, v) in &ck.meta {
            if let Some(f) = k.strip_prefix("norm.") {
                let (a, b) = v
                    .split_once(',')
                    .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                    .ok_or_else(|| Error::Checkpoint(format!("bad stats `{k}={v}`")))?;
                entries.push((f.to_string(), FeatureStats::new(a, b)?));
            }
        }
        let mut model = Self::new(config, Arc::new(layout), features)?;
        for (name, slot) in [(GENERATOR, &mut model.generator), (DISCRIMINATOR, &mut model.discriminator)] {
            let net = ck.network(name).ok_or_else(|| missing(name))?;
            if net.spec() != slot.spec() {
                return Err(Error::Checkpoint(format!("{name} architecture does not match its configuration")));
            }
            *slot = net.clone();
        }
        if !entries.is_empty() {
            model.norm = Some(NormStats::new(entries));
        }
        Ok(model)
    }
}
