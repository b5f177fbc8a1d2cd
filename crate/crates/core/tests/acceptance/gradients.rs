//! Central finite differences against backpropagation, and the
//! convolution / transposed-convolution adjoint identity.

use lmpgan::gan::{discriminator_spec, generator_spec, pixel_loss_grad, loss_gdl, loss_lp, GanArch, GanConfig};
use lmpgan::nn::{LayerSpec, Mode, NetworkSpec, NetworkState, Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TRIALS: usize = 100;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-6;
const DROPOUT_SEED: u64 = 77;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Train-mode output plus the sign pattern of every rectifier input, to
/// detect kink crossings.
fn forward_signs(net: &NetworkState, x: &Tensor) -> (Tensor, Vec<bool>) {
    let (y, cache) = net.forward(x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(DROPOUT_SEED)).unwrap();
    let mut signs = Vec::new();
    for (l, inp) in net.spec().layers.iter().zip(cache.layer_inputs()) {
        if matches!(l, LayerSpec::Relu | LayerSpec::LeakyRelu { .. }) {
            signs.extend(inp.data().iter().map(|v| *v > 0.0));
        }
    }
    (y, signs)
}

struct Report {
    worst: f64,
    trials: usize,
    resampled: usize,
    tiny: usize,
}

/// Loss `sum(w * net(x))`; checks random parameter and input coordinates.
fn check_network(net: &NetworkState, batch: usize, seed: u64, input_range: (f64, f64)) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = vec![batch];
    shape.extend_from_slice(&net.spec().input);
    let x = random(&shape, input_range.0, input_range.1, &mut rng);
    let mut out_shape = vec![batch];
    out_shape.extend_from_slice(net.output_shape());
    let w = random(&out_shape, -1.0, 1.0, &mut rng);
    let loss = |n: &NetworkState, x: &Tensor| {
        let (y, signs) = forward_signs(n, x);
        (y.dot(&w), signs)
    };
    let (_, cache) = net.forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(DROPOUT_SEED)).unwrap();
    let (grads, dx) = net.backward(&cache, &w).unwrap();
    let (_, base_signs) = loss(net, &x);

    let params: Vec<(usize, usize, usize)> = net
        .layers()
        .iter()
        .enumerate()
        .flat_map(|(l, lp)| lp.params.iter().enumerate().map(move |(k, t)| (l, k, t.len())))
        .collect();
    let n_params: usize = params.iter().map(|p| p.2).sum();
    let mut rep = Report {
        worst: 0.0,
        trials: 0,
        resampled: 0,
        tiny: 0,
    };
    while rep.trials < TRIALS {
        // Half the trials on inputs, half on parameters (inputs only when
        // the network has none).
        let on_input = n_params == 0 || rng.random_bool(0.5);
        let (analytic, plus, minus) = if on_input {
            let i = rng.random_range(0..x.len());
            let mut xp = x.clone();
            xp.data_mut()[i] += H;
            let mut xm = x.clone();
            xm.data_mut()[i] -= H;
            (dx.data()[i], loss(net, &xp), loss(net, &xm))
        } else {
            let mut r = rng.random_range(0..n_params);
            let &(l, k, len) = params
                .iter()
                .find(|p| {
                    if r < p.2 {
                        true
                    } else {
                        r -= p.2;
                        false
                    }
                })
                .unwrap();
            let i = r.min(len - 1);
            let mut np = net.clone();
            np.layers_mut()[l].params[k].data_mut()[i] += H;
            let mut nm = net.clone();
            nm.layers_mut()[l].params[k].data_mut()[i] -= H;
            (grads.layers[l][k].data()[i], loss(&np, &x), loss(&nm, &x))
        };
        if plus.1 != base_signs || minus.1 != base_signs {
            rep.resampled += 1;
            assert!(rep.resampled < 10 * TRIALS, "too many kink crossings");
            continue;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * H);
        if analytic.abs().max(numeric.abs()) < FLOOR {
            rep.tiny += 1;
        }
        rep.worst = rep.worst.max(rel_err(analytic, numeric));
        rep.trials += 1;
    }
    rep
}

fn single(input: Vec<usize>, layer: LayerSpec, seed: u64) -> NetworkState {
    let mut net = NetworkState::init(NetworkSpec::new(input, vec![layer]).unwrap(), seed).unwrap();
    // Non-trivial affine batchnorm parameters and biases.
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    for l in net.layers_mut() {
        for t in &mut l.params {
            for v in t.data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
    }
    net
}

fn layer_cases() -> Vec<(&'static str, NetworkState, (f64, f64))> {
    let conv = |cin, cout, groups, padding| LayerSpec::Conv2d {
        in_channels: cin,
        out_channels: cout,
        groups,
        padding,
    };
    let convt = |cin, cout, groups, padding| LayerSpec::Conv2dTranspose {
        in_channels: cin,
        out_channels: cout,
        groups,
        padding,
    };
    let away = (0.05, 1.0);
    let any = (-1.0, 1.0);
    vec![
        ("conv2d same", single(vec![2, 4, 4], conv(2, 3, 1, Padding::Same), 1), any),
        ("conv2d valid grouped", single(vec![4, 4, 3], conv(4, 6, 2, Padding::Valid), 2), any),
        ("conv2d_transpose same grouped", single(vec![3, 3, 3], convt(3, 6, 3, Padding::Same), 3), any),
        ("conv2d_transpose valid", single(vec![2, 3, 3], convt(2, 3, 1, Padding::Valid), 4), any),
        ("dense", single(vec![7], LayerSpec::Dense { inputs: 7, outputs: 5 }, 5), any),
        ("batchnorm spatial", single(vec![3, 3, 3], LayerSpec::batchnorm(3), 6), any),
        ("batchnorm flat", single(vec![6], LayerSpec::batchnorm(6), 7), any),
        // Rectifier inputs kept away from the kink; sign chosen per element below.
        ("relu", single(vec![2, 3, 3], LayerSpec::Relu, 8), away),
        ("leaky_relu", single(vec![2, 3, 3], LayerSpec::LeakyRelu { slope: 0.2 }, 9), away),
        ("tanh", single(vec![2, 3, 3], LayerSpec::Tanh, 10), (-2.0, 2.0)),
        ("sigmoid", single(vec![5], LayerSpec::Sigmoid, 11), (-3.0, 3.0)),
        ("dropout", single(vec![2, 3, 3], LayerSpec::Dropout { rate: 0.3 }, 12), any),
        ("concat_grouped", single(vec![6, 3, 3], LayerSpec::ConcatGrouped { groups: 3, per_group: 2 }, 13), any),
        ("flatten", single(vec![2, 3, 3], LayerSpec::Flatten, 14), any),
    ]
}

fn reduced() -> GanConfig {
    GanConfig {
        arch: GanArch {
            group_maps: 4,
            generator_maps: vec![16, 8],
            discriminator_dense: vec![16, 8],
        },
        ..GanConfig::default()
    }
}

/// lp + gdl pixel-loss gradient against finite differences.
fn check_pixel_loss() -> f64 {
    let cfg = GanConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    let f = |yh: &[f64], y: &[f64]| cfg.lambda_lp * loss_lp(yh, y, cfg.p).unwrap() + cfg.lambda_gdl * loss_gdl(yh, y, 3, 3, cfg.alpha).unwrap();
    for _ in 0..TRIALS {
        let y: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let yh: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = pixel_loss_grad(&yh, &y, 3, 3, &cfg);
        let i = rng.random_range(0..9);
        let (mut p, mut m) = (yh.clone(), yh.clone());
        p[i] += H;
        m[i] -= H;
        worst = worst.max(rel_err(g[i], (f(&p, &y) - f(&m, &y)) / (2.0 * H)));
    }
    worst
}

fn check_adjoint() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for trial in 0..40 {
        let groups = [1, 2, 3][trial % 3];
        let padding = if trial % 2 == 0 { Padding::Same } else { Padding::Valid };
        let cin = groups * rng.random_range(1..4);
        let cout = groups * rng.random_range(1..4);
        let (h, w) = (rng.random_range(3..6), rng.random_range(3..6));
        let conv = NetworkSpec::new(
            vec![cin, h, w],
            vec![LayerSpec::Conv2d {
                in_channels: cin,
                out_channels: cout,
                groups,
                padding,
            }],
        )
        .unwrap();
        let out = conv.output_shape();
        let convt = NetworkSpec::new(
            out.clone(),
            vec![LayerSpec::Conv2dTranspose {
                in_channels: cout,
                out_channels: cin,
                groups,
                padding,
            }],
        )
        .unwrap();
        let mut a = NetworkState::init(conv, 1).unwrap();
        let mut b = NetworkState::init(convt, 2).unwrap();
        let k = random(&[cout, cin / groups, 3, 3], -1.0, 1.0, &mut rng);
        a.layers_mut()[0].params[0] = k.clone();
        b.layers_mut()[0].params[0] = k;
        for n in [&mut a, &mut b] {
            n.layers_mut()[0].params[1].data_mut().fill(0.0);
        }
        let x = random(&[2, cin, h, w], -1.0, 1.0, &mut rng);
        let y = random(&[2, out[0], out[1], out[2]], -1.0, 1.0, &mut rng);
        let lhs = a.infer(&x).unwrap().dot(&y);
        let rhs = x.dot(&b.infer(&y).unwrap());
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}

pub fn run() -> Outcome {
    let mut notes = Vec::new();
    let mut worst = 0.0f64;
    let mut resampled = 0;
    let mut total = 0;
    for (name, net, range) in layer_cases() {
        let rep = if matches!(name, "relu" | "leaky_relu") {
            // Mixed signs, magnitudes bounded away from zero.
            check_signed(&net, range)
        } else {
            check_network(&net, 3, 21, range)
        };
        notes.push(format!("{name:<30} worst rel err {:.2e} over {} trials", rep.worst, rep.trials));
        worst = worst.max(rep.worst);
        resampled += rep.resampled;
        total += rep.trials;
    }
    let cfg = reduced();
    let g = NetworkState::init(generator_spec(&cfg, 12, 3, 3).unwrap(), 31).unwrap();
    let d = NetworkState::init(discriminator_spec(&cfg, 3, 3).unwrap(), 32).unwrap();
    for (name, net) in [("generator (reduced width)", g), ("discriminator (reduced width)", d)] {
        let rep = check_network(&net, 4, 41, (-1.0, 1.0));
        notes.push(format!(
            "{name:<30} worst rel err {:.2e} over {} trials ({} resampled at kinks, {} below {FLOOR:e})",
            rep.worst, rep.trials, rep.resampled, rep.tiny
        ));
        worst = worst.max(rep.worst);
        resampled += rep.resampled;
        total += rep.trials;
    }
    let pixel = check_pixel_loss();
    notes.push(format!("{:<30} worst rel err {pixel:.2e} over {TRIALS} trials", "pixel loss (lp + gdl)"));
    worst = worst.max(pixel);
    let adjoint = check_adjoint();
    let pass = worst < TOL && adjoint < 1e-9;
    let mut out = Outcome::new(
        pass,
        format!("{total} FD trials, worst rel err {worst:.2e} (<{TOL:e}), {resampled} kink resamples; adjoint max err {adjoint:.1e} (<1e-9)"),
    );
    out.notes = notes;
    out
}

/// Rectifier check with inputs of random sign and magnitude in `range`.
fn check_signed(net: &NetworkState, range: (f64, f64)) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut worst = 0.0f64;
    let mut shape = vec![3];
    shape.extend_from_slice(&net.spec().input);
    for _ in 0..TRIALS {
        let mut x = random(&shape, range.0, range.1, &mut rng);
        for v in x.data_mut() {
            if rng.random_bool(0.5) {
                *v = -*v;
            }
        }
        let (_, cache) = net.forward(&x, Mode::Train, &mut ChaCha8Rng::seed_from_u64(DROPOUT_SEED)).unwrap();
        let w = random(x.shape(), -1.0, 1.0, &mut rng);
        let (_, dx) = net.backward(&cache, &w).unwrap();
        let i = rng.random_range(0..x.len());
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp.data_mut()[i] += H;
        xm.data_mut()[i] -= H;
        let fp = net.infer(&xp).unwrap().dot(&w);
        let fm = net.infer(&xm).unwrap().dot(&w);
        assert_eq!(forward_signs(net, &xp).1, forward_signs(net, &xm).1);
        worst = worst.max(rel_err(dx.data()[i], (fp - fm) / (2.0 * H)));
    }
    Report {
        worst,
        trials: TRIALS,
        resampled: 0,
        tiny: 0,
    }
}
