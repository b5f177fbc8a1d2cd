use crate::error::{Error, Result};

/// Feature-map widths of the generator and discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct GanArch {
    /// Filters applied to each input channel by the first (grouped) layer.
    pub group_maps: usize,
    /// Widths of the generator's transposed convolutions after the
    /// concatenation, before the single-channel output layer.
    pub generator_maps: Vec<usize>,
    /// Widths of the discriminator's dense layers before the scalar output.
    pub discriminator_dense: Vec<usize>,
}

impl Default for GanArch {
    /// Full-width network: 64 maps per input channel, then 1024, 512, 64
    /// (generator) and dense 1024, 512, 256 (discriminator).
    fn default() -> Self {
        Self {
            group_maps: 64,
            generator_maps: vec![1024, 512, 64],
            discriminator_dense: vec![1024, 512, 256],
        }
    }
}

impl GanArch {
    /// Every width divided by `factor` (at least 1).
    pub fn scaled_down(factor: usize) -> Self {
        let d = Self::default();
        let s = |v: usize| (v / factor.max(1)).max(1);
        Self {
            group_maps: s(d.group_maps),
            generator_maps: d.generator_maps.into_iter().map(s).collect(),
            discriminator_dense: d.discriminator_dense.into_iter().map(s).collect(),
        }
    }

    fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        format!("{}|{}|{}", self.group_maps, join(&self.generator_maps), join(&self.discriminator_dense))
    }

    fn from_text(s: &str) -> Option<Self> {
        let mut parts = s.split('|');
        let list = |p: &str| -> Option<Vec<usize>> {
            if p.is_empty() {
                return Some(Vec::new());
            }
            p.split(';').map(|x| x.parse().ok()).collect()
        };
        let arch = Self {
            group_maps: parts.next()?.parse().ok()?,
            generator_maps: list(parts.next()?)?,
            discriminator_dense: list(parts.next()?)?,
        };
        parts.next().is_none().then_some(arch)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanConfig {
    /// History length `n` in frames.
    pub history: usize,
    pub lambda_adv: f64,
    pub lambda_lp: f64,
    pub lambda_gdl: f64,
    pub lambda_dcl: f64,
    /// Norm order of the pixel loss, 1 or 2.
    pub p: u32,
    /// Exponent of the gradient difference loss.
    pub alpha: u32,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Minibatch size `M`.
    pub batch_size: usize,
    pub max_iterations: u64,
    pub seed: u64,
    /// Validation and checkpoint cadence in iterations.
    pub eval_every: u64,
    /// Stop when validation L2 has not improved by `min_improvement`
    /// (relative) for this many iterations. 0 disables early stopping.
    pub patience: u64,
    pub min_improvement: f64,
    /// Calendar planes appended to the generator input: 0, 2 (hour of day)
    /// or 4 (hour of day and day of week) for the predicted hour.
    pub extra_channels: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub arch: GanArch,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            history: 4,
            lambda_adv: 0.2,
            lambda_lp: 1.0,
            lambda_gdl: 1.0,
            lambda_dcl: 0.2,
            p: 2,
            alpha: 1,
            lr_g: 0.0005,
            lr_d: 0.0005,
            batch_size: 4,
            max_iterations: 20_000,
            seed: 0,
            eval_every: 500,
            patience: 2_000,
            min_improvement: 0.001,
            extra_channels: 0,
            dropout: 0.3,
            leaky_slope: 0.2,
            arch: GanArch::default(),
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.history == 0 {
            return bad("history must be at least 1".into());
        }
        for (name, v) in [
            ("lambda_adv", self.lambda_adv),
            ("lambda_lp", self.lambda_lp),
            ("lambda_gdl", self.lambda_gdl),
            ("lambda_dcl", self.lambda_dcl),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !matches!(self.p, 1 | 2) {
            return bad(format!("p must be 1 or 2, got {}", self.p));
        }
        if self.alpha == 0 {
            return bad("alpha must be at least 1".into());
        }
        if !(self.lr_g >= 0.0 && self.lr_d >= 0.0) {
            return bad("learning rates must be non-negative".into());
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be positive".into());
        }
        if !matches!(self.extra_channels, 0 | 2 | 4) {
            return bad(format!("extra_channels must be 0, 2 or 4, got {}", self.extra_channels));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        let a = &self.arch;
        if a.group_maps == 0 || a.generator_maps.contains(&0) || a.discriminator_dense.contains(&0) {
            return bad("architecture widths must be positive".into());
        }
        Ok(())
    }

    /// `key=value` pairs for checkpoint headers.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("history".into(), self.history.to_string()),
            ("lambda_adv".into(), format!("{:?}", self.lambda_adv)),
            ("lambda_lp".into(), format!("{:?}", self.lambda_lp)),
            ("lambda_gdl".into(), format!("{:?}", self.lambda_gdl)),
            ("lambda_dcl".into(), format!("{:?}", self.lambda_dcl)),
            ("p".into(), self.p.to_string()),
            ("alpha".into(), self.alpha.to_string()),
            ("lr_g".into(), format!("{:?}", self.lr_g)),
            ("lr_d".into(), format!("{:?}", self.lr_d)),
            ("batch_size".into(), self.batch_size.to_string()),
            ("max_iterations".into(), self.max_iterations.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("eval_every".into(), self.eval_every.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("min_improvement".into(), format!("{:?}", self.min_improvement)),
            ("extra_channels".into(), self.extra_channels.to_string()),
            ("dropout".into(), format!("{:?}", self.dropout)),
            ("leaky_slope".into(), format!("{:?}", self.leaky_slope)),
            ("arch".into(), self.arch.to_text()),
        ]
    }

    /// Overrides fields from `key=value` pairs; unknown keys are ignored.
    pub fn apply_pairs<'a, I: IntoIterator<Item = (&'a str, &'a str)>>(&mut self, pairs: I) -> Result<()> {
        for (k, v) in pairs {
            let num = |v: &str| -> Result<f64> { v.parse().map_err(|_| Error::Config(format!("`{k}`: `{v}` is not a number"))) };
            let int = |v: &str| -> Result<u64> { v.parse().map_err(|_| Error::Config(format!("`{k}`: `{v}` is not an integer"))) };
            match k {
                "history" => self.history = int(v)? as usize,
                "lambda_adv" => self.lambda_adv = num(v)?,
                "lambda_lp" => self.lambda_lp = num(v)?,
                "lambda_gdl" => self.lambda_gdl = num(v)?,
                "lambda_dcl" => self.lambda_dcl = num(v)?,
                "p" => self.p = int(v)? as u32,
                "alpha" => self.alpha = int(v)? as u32,
                "lr_g" => self.lr_g = num(v)?,
                "lr_d" => self.lr_d = num(v)?,
                "batch_size" => self.batch_size = int(v)? as usize,
                "max_iterations" => self.max_iterations = int(v)?,
                "seed" => self.seed = int(v)?,
                "eval_every" => self.eval_every = int(v)?,
                "patience" => self.patience = int(v)?,
                "min_improvement" => self.min_improvement = num(v)?,
                "extra_channels" => self.extra_channels = int(v)? as usize,
                "dropout" => self.dropout = num(v)?,
                "leaky_slope" => self.leaky_slope = num(v)?,
                "arch" => {
                    self.arch = GanArch::from_text(v).ok_or_else(|| Error::Config(format!("bad arch `{v}`")))?;
                }
                _ => {}
            }
        }
        Ok(())
    }
}
