use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::kernels::{col2im, from_channel_major, gemm, im2col, to_channel_major, ConvGeom, KK};
use super::layer::{LayerSpec, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Standard deviation of the weight initializer; draws are truncated at
/// two standard deviations.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batchnorm, dropout active.
    Train,
    /// Running statistics in batchnorm, dropout off.
    Infer,
}

/// Learned tensors of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// Trainable tensors, see [`LayerSpec::param_shapes`].
    pub params: Vec<Tensor>,
    /// Running mean and variance for batchnorm; empty otherwise.
    pub buffers: Vec<Tensor>,
}

/// Parameter gradients, parallel to `NetworkState` trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<Tensor>>,
}

impl Gradients {
    pub fn zeros_like(state: &NetworkState) -> Self {
        Self {
            layers: state
                .layers
                .iter()
                .map(|l| l.params.iter().map(|p| Tensor::zeros(p.shape())).collect())
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.iter_mut().zip(b) {
                x.axpy(1.0, y);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.layers.iter_mut().flatten() {
            t.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flatten().flat_map(|t| t.data().iter().copied()).collect()
    }
}

#[derive(Debug, Clone)]
enum Extra {
    None,
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    Dropout(Vec<f64>),
    Output(Tensor),
}

/// Intermediates recorded by [`NetworkState::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    mode: Mode,
    version: u64,
    inputs: Vec<Tensor>,
    extras: Vec<Extra>,
}

impl Cache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Inputs to each layer; `inputs()[i]` feeds layer `i`.
    pub fn layer_inputs(&self) -> &[Tensor] {
        &self.inputs
    }
}

/// A network's spec together with its learned parameters.
#[derive(Debug, Clone)]
pub struct NetworkState {
    spec: NetworkSpec,
    layers: Vec<LayerParams>,
    shapes: Vec<Vec<usize>>,
    version: u64,
}

impl NetworkState {
    /// Weights ~ N(0, 0.02^2) truncated at +-2 sigma, biases 0, batchnorm
    /// gamma 1 and beta 0, running mean 0 and variance 1.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                let params = match l {
                    LayerSpec::BatchNorm { channels, .. } => {
                        vec![Tensor::filled(&[*channels], 1.0), Tensor::zeros(&[*channels])]
                    }
                    _ => l
                        .param_shapes()
                        .into_iter()
                        .enumerate()
                        .map(|(i, s)| {
                            if i == 0 {
                                let n = s.iter().product();
                                let data = (0..n)
                                    .map(|_| loop {
                                        let v: f64 = normal.sample(&mut rng);
                                        if v.abs() <= 2.0 * INIT_STD {
                                            break v;
                                        }
                                    })
                                    .collect();
                                Tensor::new(s, data).unwrap()
                            } else {
                                Tensor::zeros(&s)
                            }
                        })
                        .collect(),
                };
                let buffers = match l {
                    LayerSpec::BatchNorm { channels, .. } => {
                        vec![Tensor::zeros(&[*channels]), Tensor::filled(&[*channels], 1.0)]
                    }
                    _ => Vec::new(),
                };
                LayerParams { params, buffers }
            })
            .collect();
        Ok(Self {
            spec,
            layers,
            shapes,
            version: 0,
        })
    }

    /// Rebuilds a state from stored tensors, checking every shape.
    pub fn from_parts(spec: NetworkSpec, layers: Vec<LayerParams>) -> Result<Self> {
        let shapes = spec.shapes()?;
        if layers.len() != spec.layers.len() {
            return Err(Error::Spec(format!(
                "{} parameter groups for {} layers",
                layers.len(),
                spec.layers.len()
            )));
        }
        for (i, (l, p)) in spec.layers.iter().zip(&layers).enumerate() {
            let want: Vec<Vec<usize>> = l.param_shapes().into_iter().chain(l.buffer_shapes()).collect();
            let got: Vec<Vec<usize>> = p.params.iter().chain(&p.buffers).map(|t| t.shape().to_vec()).collect();
            if want != got {
                return Err(Error::shape(format!("layer {i} parameters"), &want.concat(), &got.concat()));
            }
        }
        Ok(Self {
            spec,
            layers,
            shapes,
            version: 0,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        self.version += 1;
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape().len() != self.spec.input.len() + 1 || input.shape()[1..] != self.spec.input[..] {
            let mut want = vec![input.shape().first().copied().unwrap_or(1)];
            want.extend_from_slice(&self.spec.input);
            return Err(Error::shape("network input (layer 0)", &want, input.shape()));
        }
        Ok(())
    }

    /// Inference-mode forward pass without a cache.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        // Dropout is inactive in inference, so the RNG is never drawn from.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.forward(input, Mode::Infer, &mut rng).map(|(y, _)| y)
    }

    pub fn forward<R: Rng + ?Sized>(&self, input: &Tensor, mode: Mode, rng: &mut R) -> Result<(Tensor, Cache)> {
        self.check_input(input)?;
        let batch = input.batch();
        let mut inputs = Vec::with_capacity(self.spec.layers.len());
        let mut extras = Vec::with_capacity(self.spec.layers.len());
        let mut x = input.clone();
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let in_shape = &self.shapes[i];
            let out_shape = &self.shapes[i + 1];
            let mut full_out = vec![batch];
            full_out.extend_from_slice(out_shape);
            let p = &self.layers[i];
            let (y, extra) = match *layer {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    groups,
                    padding,
                } => {
                    let g = ConvGeom::new(in_shape[1], in_shape[2], padding.pixels()).unwrap();
                    let (cin, cout) = (in_channels / groups, out_channels / groups);
                    let mut y = vec![0.0; batch * out_channels * g.dst_len()];
                    let w = p.params[0].data();
                    let n = batch * g.dst_len();
                    for gi in 0..groups {
                        let cols = im2col(x.data(), batch, in_channels, gi * cin, cin, &g);
                        let mut out = vec![0.0; cout * n];
                        gemm(cout, cin * KK, n, &w[gi * cout * cin * KK..][..cout * cin * KK], false, &cols, false, &mut out, false);
                        from_channel_major(&out, &mut y, batch, out_channels, gi * cout, cout, g.dst_len(), false);
                    }
                    add_bias(&mut y, p.params[1].data(), batch, g.dst_len());
                    (Tensor::new(full_out, y)?, Extra::None)
                }
                LayerSpec::Conv2dTranspose {
                    in_channels,
                    out_channels,
                    groups,
                    padding,
                } => {
                    let g = ConvGeom::new(out_shape[1], out_shape[2], padding.pixels()).unwrap();
                    let (cin, cout) = (in_channels / groups, out_channels / groups);
                    let mut y = vec![0.0; batch * out_channels * g.src_len()];
                    let w = p.params[0].data();
                    let n = batch * g.dst_len();
                    for gi in 0..groups {
                        let xg = to_channel_major(x.data(), batch, in_channels, gi * cin, cin, g.dst_len());
                        let mut cols = vec![0.0; cout * KK * n];
                        gemm(cout * KK, cin, n, &w[gi * cin * cout * KK..][..cin * cout * KK], true, &xg, false, &mut cols, false);
                        col2im(&cols, &mut y, batch, out_channels, gi * cout, cout, &g);
                    }
                    add_bias(&mut y, p.params[1].data(), batch, g.src_len());
                    (Tensor::new(full_out, y)?, Extra::None)
                }
                LayerSpec::Dense { inputs: ni, outputs: no } => {
                    let mut y = vec![0.0; batch * no];
                    gemm(batch, ni, no, x.data(), false, p.params[0].data(), true, &mut y, false);
                    add_bias(&mut y, p.params[1].data(), batch, 1);
                    (Tensor::new(full_out, y)?, Extra::None)
                }
                LayerSpec::BatchNorm { channels, eps, .. } => {
                    let s = in_shape[1..].iter().product::<usize>();
                    let (gamma, beta) = (p.params[0].data(), p.params[1].data());
                    let count = (batch * s) as f64;
                    let mut y = vec![0.0; x.len()];
                    let mut xhat = vec![0.0; x.len()];
                    let mut means = vec![0.0; channels];
                    let mut vars = vec![0.0; channels];
                    let mut inv_stds = vec![0.0; channels];
                    for c in 0..channels {
                        let idx = |b: usize, k: usize| (b * channels + c) * s + k;
                        let (mean, var) = match mode {
                            Mode::Train => {
                                let mut m = 0.0;
                                for b in 0..batch {
                                    for k in 0..s {
                                        m += x.data()[idx(b, k)];
                                    }
                                }
                                m /= count;
                                let mut v = 0.0;
                                for b in 0..batch {
                                    for k in 0..s {
                                        let d = x.data()[idx(b, k)] - m;
                                        v += d * d;
                                    }
                                }
                                (m, v / count)
                            }
                            Mode::Infer => (p.buffers[0].data()[c], p.buffers[1].data()[c]),
                        };
                        let inv_std = 1.0 / (var + eps).sqrt();
                        for b in 0..batch {
                            for k in 0..s {
                                let j = idx(b, k);
                                xhat[j] = (x.data()[j] - mean) * inv_std;
                                y[j] = gamma[c] * xhat[j] + beta[c];
                            }
                        }
                        means[c] = mean;
                        vars[c] = var;
                        inv_stds[c] = inv_std;
                    }
                    (
                        Tensor::new(full_out, y)?,
                        Extra::BatchNorm {
                            xhat,
                            inv_std: inv_stds,
                            mean: means,
                            var: vars,
                        },
                    )
                }
                LayerSpec::Relu => (x.map(|v| v.max(0.0)), Extra::None),
                LayerSpec::LeakyRelu { slope } => (x.map(|v| if v > 0.0 { v } else { slope * v }), Extra::None),
                LayerSpec::Tanh => {
                    let y = x.map(f64::tanh);
                    (y.clone(), Extra::Output(y))
                }
                LayerSpec::Sigmoid => {
                    let y = x.map(sigmoid);
                    (y.clone(), Extra::Output(y))
                }
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Infer => (x.clone(), Extra::None),
                    Mode::Train => {
                        let keep = 1.0 - rate;
                        let mask: Vec<f64> = (0..x.len())
                            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep })
                            .collect();
                        let y = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
                        (Tensor::new(full_out, y)?, Extra::Dropout(mask))
                    }
                },
                LayerSpec::ConcatGrouped { .. } | LayerSpec::Flatten => (x.clone().reshape(full_out)?, Extra::None),
            };
            inputs.push(x);
            extras.push(extra);
            x = y;
        }
        Ok((
            x,
            Cache {
                mode,
                version: self.version,
                inputs,
                extras,
            },
        ))
    }

    /// Backpropagates `grad_out` (gradient of a scalar loss w.r.t. the
    /// network output) through a training-mode cache.
    pub fn backward(&self, cache: &Cache, grad_out: &Tensor) -> Result<(Gradients, Tensor)> {
        if cache.mode != Mode::Train {
            return Err(Error::Cache("backward requires a training-mode forward cache".into()));
        }
        if cache.version != self.version || cache.inputs.len() != self.spec.layers.len() {
            return Err(Error::Cache(format!(
                "cache from parameter version {} ({} layers), network is at version {} ({} layers)",
                cache.version,
                cache.inputs.len(),
                self.version,
                self.spec.layers.len()
            )));
        }
        let batch = cache.inputs.first().map_or(0, Tensor::batch);
        let mut want = vec![batch];
        want.extend_from_slice(self.output_shape());
        if grad_out.shape() != want.as_slice() {
            return Err(Error::shape("output gradient", &want, grad_out.shape()));
        }

        let mut grads = Gradients::zeros_like(self);
        let mut dy = grad_out.clone();
        for i in (0..self.spec.layers.len()).rev() {
            let x = &cache.inputs[i];
            let in_shape = &self.shapes[i];
            let out_shape = &self.shapes[i + 1];
            let p = &self.layers[i];
            let g_out = &mut grads.layers[i];
            let dx: Vec<f64> = match self.spec.layers[i] {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    groups,
                    padding,
                } => {
                    let g = ConvGeom::new(in_shape[1], in_shape[2], padding.pixels()).unwrap();
                    let (cin, cout) = (in_channels / groups, out_channels / groups);
                    let n = batch * g.dst_len();
                    let w = p.params[0].data();
                    let mut dx = vec![0.0; x.len()];
                    for gi in 0..groups {
                        let cols = im2col(x.data(), batch, in_channels, gi * cin, cin, &g);
                        let dyg = to_channel_major(dy.data(), batch, out_channels, gi * cout, cout, g.dst_len());
                        let wl = cout * cin * KK;
                        gemm(cout, n, cin * KK, &dyg, false, &cols, true, &mut g_out[0].data_mut()[gi * wl..][..wl], false);
                        let mut dcols = vec![0.0; cin * KK * n];
                        gemm(cin * KK, cout, n, &w[gi * wl..][..wl], true, &dyg, false, &mut dcols, false);
                        col2im(&dcols, &mut dx, batch, in_channels, gi * cin, cin, &g);
                    }
                    bias_grad(g_out[1].data_mut(), dy.data(), batch, g.dst_len());
                    dx
                }
                LayerSpec::Conv2dTranspose {
                    in_channels,
                    out_channels,
                    groups,
                    padding,
                } => {
                    let g = ConvGeom::new(out_shape[1], out_shape[2], padding.pixels()).unwrap();
                    let (cin, cout) = (in_channels / groups, out_channels / groups);
                    let n = batch * g.dst_len();
                    let w = p.params[0].data();
                    let mut dx = vec![0.0; x.len()];
                    for gi in 0..groups {
                        let dcols = im2col(dy.data(), batch, out_channels, gi * cout, cout, &g);
                        let xg = to_channel_major(x.data(), batch, in_channels, gi * cin, cin, g.dst_len());
                        let wl = cin * cout * KK;
                        gemm(cin, n, cout * KK, &xg, false, &dcols, true, &mut g_out[0].data_mut()[gi * wl..][..wl], false);
                        let mut dxg = vec![0.0; cin * n];
                        gemm(cin, cout * KK, n, &w[gi * wl..][..wl], false, &dcols, false, &mut dxg, false);
                        from_channel_major(&dxg, &mut dx, batch, in_channels, gi * cin, cin, g.dst_len(), false);
                    }
                    bias_grad(g_out[1].data_mut(), dy.data(), batch, g.src_len());
                    dx
                }
                LayerSpec::Dense { inputs: ni, outputs: no } => {
                    gemm(no, batch, ni, dy.data(), true, x.data(), false, g_out[0].data_mut(), false);
                    bias_grad(g_out[1].data_mut(), dy.data(), batch, 1);
                    let mut dx = vec![0.0; batch * ni];
                    gemm(batch, no, ni, dy.data(), false, p.params[0].data(), false, &mut dx, false);
                    dx
                }
                LayerSpec::BatchNorm { channels, .. } => {
                    let Extra::BatchNorm { xhat, inv_std, .. } = &cache.extras[i] else {
                        return Err(Error::Cache(format!("layer {i}: missing batchnorm cache")));
                    };
                    let s = in_shape[1..].iter().product::<usize>();
                    let count = (batch * s) as f64;
                    let gamma = p.params[0].data();
                    let mut dx = vec![0.0; x.len()];
                    for c in 0..channels {
                        let idx = |b: usize, k: usize| (b * channels + c) * s + k;
                        let (mut sum_dy, mut sum_dy_xhat) = (0.0, 0.0);
                        for b in 0..batch {
                            for k in 0..s {
                                let j = idx(b, k);
                                sum_dy += dy.data()[j];
                                sum_dy_xhat += dy.data()[j] * xhat[j];
                            }
                        }
                        g_out[0].data_mut()[c] = sum_dy_xhat;
                        g_out[1].data_mut()[c] = sum_dy;
                        let scale = gamma[c] * inv_std[c] / count;
                        for b in 0..batch {
                            for k in 0..s {
                                let j = idx(b, k);
                                dx[j] = scale * (count * dy.data()[j] - sum_dy - xhat[j] * sum_dy_xhat);
                            }
                        }
                    }
                    dx
                }
                LayerSpec::Relu => zip_map(x, &dy, |x, d| if x > 0.0 { d } else { 0.0 }),
                LayerSpec::LeakyRelu { slope } => zip_map(x, &dy, |x, d| if x > 0.0 { d } else { slope * d }),
                LayerSpec::Tanh | LayerSpec::Sigmoid => {
                    let Extra::Output(y) = &cache.extras[i] else {
                        return Err(Error::Cache(format!("layer {i}: missing activation cache")));
                    };
                    if matches!(self.spec.layers[i], LayerSpec::Tanh) {
                        zip_map(y, &dy, |y, d| d * (1.0 - y * y))
                    } else {
                        zip_map(y, &dy, |y, d| d * y * (1.0 - y))
                    }
                }
                LayerSpec::Dropout { .. } => {
                    let Extra::Dropout(mask) = &cache.extras[i] else {
                        return Err(Error::Cache(format!("layer {i}: missing dropout mask")));
                    };
                    dy.data().iter().zip(mask).map(|(d, m)| d * m).collect()
                }
                LayerSpec::ConcatGrouped { .. } | LayerSpec::Flatten => dy.data().to_vec(),
            };
            dy = Tensor::new(x.shape().to_vec(), dx)?;
        }
        Ok((grads, dy))
    }

    /// Folds the batch statistics of a training-mode pass into the batchnorm
    /// running averages.
    pub fn update_running_stats(&mut self, cache: &Cache) {
        if cache.mode != Mode::Train {
            return;
        }
        for (i, layer) in self.spec.layers.iter().enumerate() {
            if let (LayerSpec::BatchNorm { momentum, .. }, Extra::BatchNorm { mean, var, .. }) = (layer, &cache.extras[i]) {
                let bufs = &mut self.layers[i].buffers;
                for (r, m) in bufs[0].data_mut().iter_mut().zip(mean) {
                    *r = momentum * *r + (1.0 - momentum) * m;
                }
                for (r, v) in bufs[1].data_mut().iter_mut().zip(var) {
                    *r = momentum * *r + (1.0 - momentum) * v;
                }
            }
        }
    }

    /// Plain SGD: `w <- w - lr * g`. Gradients are expected to be summed over
    /// the minibatch already.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Spec(format!(
                "gradient has {} layers, network has {}",
                grads.layers.len(),
                self.layers.len()
            )));
        }
        for (i, (g, l)) in grads.layers.iter().zip(&self.layers).enumerate() {
            if g.len() != l.params.len() {
                return Err(Error::Spec(format!("layer {i}: gradient tensor count mismatch")));
            }
            for (k, (gt, pt)) in g.iter().zip(&l.params).enumerate() {
                if gt.shape() != pt.shape() {
                    return Err(Error::shape(format!("layer {i} gradient"), pt.shape(), gt.shape()));
                }
                if !gt.is_finite() {
                    return Err(Error::NonFinite {
                        layer: i,
                        param: self.spec.layers[i].param_names()[k].to_string(),
                    });
                }
            }
        }
        for (g, l) in grads.layers.iter().zip(&mut self.layers) {
            for (gt, pt) in g.iter().zip(&mut l.params) {
                pt.axpy(-lr, gt);
            }
        }
        self.version += 1;
        Ok(())
    }
}

impl PartialEq for NetworkState {
    /// Compares spec and tensors; the internal parameter version is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.layers == other.layers
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_bias(y: &mut [f64], bias: &[f64], batch: usize, spatial: usize) {
    let c = bias.len();
    for b in 0..batch {
        for (ch, &bv) in bias.iter().enumerate() {
            y[(b * c + ch) * spatial..][..spatial].iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad(db: &mut [f64], dy: &[f64], batch: usize, spatial: usize) {
    let c = db.len();
    for (ch, d) in db.iter_mut().enumerate() {
        *d = (0..batch)
            .map(|b| dy[(b * c + ch) * spatial..][..spatial].iter().sum::<f64>())
            .sum();
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}
