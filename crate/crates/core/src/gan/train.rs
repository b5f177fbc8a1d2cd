use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::derive_seed;
use super::loss::{bce_grad, loss_bce, loss_g, loss_lp, pixel_loss_grad, GenLossTerms};
use super::model::GanModel;
use crate::error::{Error, Result};
use crate::market_data::Sample;
use crate::nn::{Gradients, Mode, Tensor};

/// Losses above this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// One training-log line. Losses are minibatch means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRow {
    pub iteration: u64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub adv: f64,
    pub lp: f64,
    pub gdl: f64,
    pub dcl: f64,
    /// Most recent validation L2 (mean squared-error sum per frame).
    pub val_l2: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

pub const LOG_HEADER: &str = "iteration,loss_D,loss_G,adv,lp,gdl,dcl,val_l2";

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{LOG_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.iteration, r.loss_d, r.loss_g, r.adv, r.lp, r.gdl, r.dcl, r.val_l2
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut lines = text.lines();
        if lines.next() != Some(LOG_HEADER) {
            return Err(Error::Data(format!("training log must start with `{LOG_HEADER}`")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let bad = || Error::Data(format!("training log line {}: `{line}`", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad());
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad());
            rows.push(TrainLogRow {
                iteration: f[0].parse().map_err(|_| bad())?,
                loss_d: num(1)?,
                loss_g: num(2)?,
                adv: num(3)?,
                lp: num(4)?,
                gdl: num(5)?,
                dcl: num(6)?,
                val_l2: num(7)?,
            });
        }
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    EarlyStop,
}

/// Mean validation L2 of the generator in inference mode.
pub fn validation_l2(model: &GanModel, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in samples.chunks(256) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let y = model.generator.infer(&model.generator_input(&refs)?)?;
        for (s, yhat) in chunk.iter().zip(y.data().chunks(model.layout.cells())) {
            total += loss_lp(yhat, &s.y, 2)?;
        }
    }
    Ok(total / samples.len() as f64)
}

/// Alternating discriminator / generator minibatch SGD.
///
/// Each iteration draws two minibatches (one per network) from a stream of
/// per-epoch shuffles of the training set. Shuffles and dropout masks are
/// functions of `(seed, epoch)` and `(seed, iteration)`, so a run resumed
/// from a checkpoint continues exactly as an uninterrupted one.
pub struct Trainer<'a> {
    model: GanModel,
    train: &'a [Sample],
    val: &'a [Sample],
    iteration: u64,
    log: TrainLog,
    best_val: f64,
    last_improvement: u64,
    last_val: f64,
    perm: Option<(u64, Vec<usize>)>,
}

impl<'a> Trainer<'a> {
    pub fn new(model: GanModel, train: &'a [Sample], val: &'a [Sample]) -> Result<Self> {
        Self::resume(model, 0, TrainLog::default(), train, val)
    }

    /// Continues after `iteration` completed iterations; `log` holds their rows.
    pub fn resume(model: GanModel, iteration: u64, mut log: TrainLog, train: &'a [Sample], val: &'a [Sample]) -> Result<Self> {
        model.config.validate()?;
        if train.len() < model.config.batch_size {
            return Err(Error::Insufficient {
                what: "training samples",
                needed: model.config.batch_size,
                got: train.len(),
            });
        }
        log.rows.retain(|r| r.iteration <= iteration);
        let mut t = Self {
            model,
            train,
            val,
            iteration,
            log,
            best_val: f64::INFINITY,
            last_improvement: 0,
            last_val: f64::NAN,
            perm: None,
        };
        let evals: Vec<(u64, f64)> = t
            .log
            .rows
            .iter()
            .filter(|r| t.is_eval(r.iteration))
            .map(|r| (r.iteration, r.val_l2))
            .collect();
        for (it, v) in evals {
            t.record_val(it, v);
        }
        Ok(t)
    }

    pub fn model(&self) -> &GanModel {
        &self.model
    }

    pub fn into_model(self) -> GanModel {
        self.model
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    fn is_eval(&self, it: u64) -> bool {
        it == 1 || it.is_multiple_of(self.model.config.eval_every)
    }

    fn record_val(&mut self, it: u64, v: f64) {
        self.last_val = v;
        if v.is_finite() && (v < self.best_val * (1.0 - self.model.config.min_improvement) || !self.best_val.is_finite()) {
            self.best_val = v;
            self.last_improvement = it;
        }
    }

    /// Sample index at position `k` of the shuffled stream.
    fn stream_index(&mut self, k: u64) -> usize {
        let n = self.train.len() as u64;
        let epoch = k / n;
        if self.perm.as_ref().map(|p| p.0) != Some(epoch) {
            let mut idx: Vec<usize> = (0..self.train.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.model.config.seed, 4));
            rng.set_stream(epoch);
            idx.shuffle(&mut rng);
            self.perm = Some((epoch, idx));
        }
        self.perm.as_ref().unwrap().1[(k % n) as usize]
    }

    fn batches(&mut self, it: u64) -> (Vec<&'a Sample>, Vec<&'a Sample>) {
        let m = self.model.config.batch_size as u64;
        let base = (it - 1) * 2 * m;
        let train = self.train;
        let idx: Vec<usize> = (0..2 * m).map(|j| self.stream_index(base + j)).collect();
        let (d, g) = idx.split_at(m as usize);
        (d.iter().map(|&i| &train[i]).collect(), g.iter().map(|&i| &train[i]).collect())
    }

    fn guard(&self, it: u64, name: &str, v: f64) -> Result<()> {
        if !v.is_finite() || v.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                iteration: it,
                detail: format!("{name} = {v}"),
            });
        }
        Ok(())
    }

    /// Runs one iteration and returns its log row.
    pub fn step(&mut self) -> Result<TrainLogRow> {
        let it = self.iteration + 1;
        let cfg = self.model.config.clone();
        let cells = self.model.layout.cells();
        let (rows, cols) = (self.model.layout.rows(), self.model.layout.cols());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3));
        rng.set_stream(it);
        let (batch_d, batch_g) = self.batches(it);
        let b = cfg.batch_size as f64;

        // Discriminator step.
        let gin = self.model.generator_input(&batch_d)?;
        let (fake, _) = self.model.generator.forward(&gin, Mode::Train, &mut rng)?;
        let truth: Vec<f64> = batch_d.iter().flat_map(|s| s.y.iter().copied()).collect();
        let real_in = self.model.discriminator_input(&batch_d, &truth)?;
        let fake_in = self.model.discriminator_input(&batch_d, fake.data())?;
        let d = &self.model.discriminator;
        let (d_real, cache_r) = d.forward(&real_in, Mode::Train, &mut rng)?;
        let (d_fake, cache_f) = d.forward(&fake_in, Mode::Train, &mut rng)?;
        let loss_d: f64 = d_real
            .data()
            .iter()
            .zip(d_fake.data())
            .map(|(&r, &f)| loss_bce(r, 1.0) + loss_bce(f, 0.0))
            .sum();
        self.guard(it, "loss_D", loss_d / b)?;
        let gr = d_real.map(|k| bce_grad(k, 1.0));
        let gf = d_fake.map(|k| bce_grad(k, 0.0));
        let (mut grads_d, _) = d.backward(&cache_r, &gr)?;
        grads_d.accumulate(&d.backward(&cache_f, &gf)?.0);
        let d = &mut self.model.discriminator;
        d.update_running_stats(&cache_r);
        d.update_running_stats(&cache_f);
        d.sgd_step(&grads_d, cfg.lr_d)?;

        // Generator step on a fresh minibatch.
        let gin = self.model.generator_input(&batch_g)?;
        let (yhat, cache_g) = self.model.generator.forward(&gin, Mode::Train, &mut rng)?;
        let fake_in = self.model.discriminator_input(&batch_g, yhat.data())?;
        let d = &self.model.discriminator;
        let (d_fake, cache_df) = d.forward(&fake_in, Mode::Train, &mut rng)?;
        let mut sum = GenLossTerms::default();
        let mut loss_total = 0.0;
        let mut grad_y = Vec::with_capacity(yhat.len());
        for ((s, yh), &k) in batch_g.iter().zip(yhat.data().chunks(cells)).zip(d_fake.data()) {
            let (total, t) = loss_g(&s.last_rtlmp(), &s.y, yh, k, rows, cols, &cfg)?;
            loss_total += total;
            sum.adv += t.adv;
            sum.lp += t.lp;
            sum.gdl += t.gdl;
            sum.dcl += t.dcl;
            grad_y.extend(pixel_loss_grad(yh, &s.y, rows, cols, &cfg));
        }
        self.guard(it, "loss_G", loss_total / b)?;
        let g_adv = d_fake.map(|k| cfg.lambda_adv * bce_grad(k, 1.0));
        let (_, d_input_grad) = d.backward(&cache_df, &g_adv)?;
        let ch = cfg.history + 1;
        for (i, g) in grad_y.chunks_mut(cells).enumerate() {
            let cand = &d_input_grad.data()[(i * ch + ch - 1) * cells..][..cells];
            for (a, &c) in g.iter_mut().zip(cand) {
                *a += c;
            }
        }
        let grad_y = Tensor::new(yhat.shape().to_vec(), grad_y)?;
        let (grads_g, _): (Gradients, _) = self.model.generator.backward(&cache_g, &grad_y)?;
        let g = &mut self.model.generator;
        g.update_running_stats(&cache_g);
        g.sgd_step(&grads_g, cfg.lr_g)?;

        self.iteration = it;
        if self.is_eval(it) {
            let v = validation_l2(&self.model, self.val)?;
            self.record_val(it, v);
        }
        let row = TrainLogRow {
            iteration: it,
            loss_d: loss_d / b,
            loss_g: loss_total / b,
            adv: sum.adv / b,
            lp: sum.lp / b,
            gdl: sum.gdl / b,
            dcl: sum.dcl / b,
            val_l2: self.last_val,
        };
        self.log.rows.push(row);
        Ok(row)
    }

    fn should_stop(&self) -> Option<StopReason> {
        let cfg = &self.model.config;
        if self.iteration >= cfg.max_iterations {
            return Some(StopReason::MaxIterations);
        }
        if cfg.patience > 0 && self.best_val.is_finite() && self.iteration - self.last_improvement >= cfg.patience {
            return Some(StopReason::EarlyStop);
        }
        None
    }

    /// Trains until a stopping rule fires. `on_eval` runs after every
    /// validation iteration and once more on exit.
    pub fn run<F: FnMut(&Trainer) -> Result<()>>(&mut self, mut on_eval: F) -> Result<StopReason> {
        loop {
            if let Some(reason) = self.should_stop() {
                on_eval(self)?;
                return Ok(reason);
            }
            self.step()?;
            if self.iteration.is_multiple_of(self.model.config.eval_every) {
                on_eval(self)?;
            }
        }
    }
}

/// Trains a fresh model on `train`, early-stopping on `val`.
pub fn train(model: GanModel, train: &[Sample], val: &[Sample]) -> Result<(GanModel, TrainLog, StopReason)> {
    let mut t = Trainer::new(model, train, val)?;
    let reason = t.run(|_| Ok(()))?;
    let log = t.log.clone();
    Ok((t.into_model(), log, reason))
}
