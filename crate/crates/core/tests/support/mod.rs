//! Independent oracles shared by the integration tests and the acceptance
//! suite: central finite differences, a direct-loop convolution and a
//! stream recount of classification metrics.
#![allow(dead_code)]

use leancnn_core::{
    bce_with_logits, cross_entropy, Dropout, Layer, LayerPlan, MaxPool2d, Mode, Relu, Rng, Tensor,
};

/// Step for central differences in f64.
pub const FD_STEP: f64 = 1e-6;

/// `|a - b| / max(|a| + |b|, tiny)` over whole vectors.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a) + norm(b);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Probe loss `L = sum(y * r)` through a train-mode forward.
fn probe(layer: &mut Layer<f64>, x: &Tensor<f64>, r: &[f64]) -> f64 {
    let y = layer.forward(x.clone(), Mode::Train).unwrap();
    dot(y.data(), r)
}

/// Worst relative error over the input gradient and every parameter
/// gradient of `layer` at `x`.
pub fn check_layer(layer: &mut Layer<f64>, x: &Tensor<f64>, rng: &mut Rng) -> f64 {
    let y = layer.forward(x.clone(), Mode::Train).unwrap();
    let r: Vec<f64> = (0..y.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let dx = layer
        .backward(Tensor::from_vec(y.dims(), r.clone()).unwrap())
        .unwrap();
    let analytic_params: Vec<Vec<f64>> = layer
        .params_and_grads()
        .into_iter()
        .map(|(_, g)| g.data().to_vec())
        .collect();

    let mut worst: f64 = 0.0;
    let mut numeric = Vec::with_capacity(x.numel());
    let mut xp = x.clone();
    for i in 0..x.numel() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + FD_STEP;
        let plus = probe(layer, &xp, &r);
        xp.data_mut()[i] = orig - FD_STEP;
        let minus = probe(layer, &xp, &r);
        xp.data_mut()[i] = orig;
        numeric.push((plus - minus) / (2.0 * FD_STEP));
    }
    worst = worst.max(rel_err(dx.data(), &numeric));

    for (p, analytic) in analytic_params.iter().enumerate() {
        let mut numeric = Vec::with_capacity(analytic.len());
        for j in 0..analytic.len() {
            let nudge = |layer: &mut Layer<f64>, delta: f64| {
                let mut pg = layer.params_and_grads();
                pg[p].0.data_mut()[j] += delta;
            };
            nudge(layer, FD_STEP);
            let plus = probe(layer, x, &r);
            nudge(layer, -2.0 * FD_STEP);
            let minus = probe(layer, x, &r);
            nudge(layer, FD_STEP);
            numeric.push((plus - minus) / (2.0 * FD_STEP));
        }
        worst = worst.max(rel_err(analytic, &numeric));
    }
    worst
}

fn random_tensor(dims: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::uniform(dims, rng, -1.0, 1.0).unwrap()
}

fn randomize_state(layer: &mut Layer<f64>, rng: &mut Rng) {
    for t in layer.state_mut() {
        t.map_inplace(|_| rng.uniform(0.5, 1.5));
    }
}

/// One random layer instance of the given kind and an input for it.
pub fn instance(kind: &str, rng: &mut Rng) -> (Layer<f64>, Tensor<f64>) {
    let seed = rng.below(1 << 30) as u64;
    match kind {
        "conv" => loop {
            let (n, cin, cout) = (1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(3));
            let (k, pad, stride) = (1 + rng.below(3), rng.below(2), 1 + rng.below(2));
            let (h, w) = (3 + rng.below(4), 3 + rng.below(4));
            if (h + 2 * pad < k)
                || (h + 2 * pad - k) % stride != 0
                || (w + 2 * pad - k) % stride != 0
            {
                continue;
            }
            let plan = LayerPlan::Conv {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                pad,
                stride,
            };
            let mut layer = Layer::from_plan(&plan, &mut Rng::new(seed), 0).unwrap();
            if let Layer::Conv(c) = &mut layer {
                c.bias.map_inplace(|_| rng.uniform(-0.5, 0.5));
            }
            return (layer, random_tensor(&[n, cin, h, w], rng));
        },
        "batchnorm" => {
            let (n, c, h, w) = (
                1 + rng.below(3),
                1 + rng.below(3),
                2 + rng.below(2),
                2 + rng.below(3),
            );
            let mut layer = Layer::from_plan(
                &LayerPlan::BatchNorm { channels: c },
                &mut Rng::new(seed),
                0,
            )
            .unwrap();
            randomize_state(&mut layer, rng);
            (layer, random_tensor(&[n, c, h, w], rng))
        }
        "dense" => {
            let (n, i, o) = (1 + rng.below(4), 1 + rng.below(8), 1 + rng.below(6));
            let plan = LayerPlan::Dense {
                in_features: i,
                out_features: o,
            };
            let mut layer = Layer::from_plan(&plan, &mut Rng::new(seed), 0).unwrap();
            if let Layer::Dense(d) = &mut layer {
                d.bias.map_inplace(|_| rng.uniform(-0.5, 0.5));
            }
            (layer, random_tensor(&[n, i], rng))
        }
        "relu" => {
            let dims = [
                1 + rng.below(3),
                1 + rng.below(3),
                1 + rng.below(4),
                1 + rng.below(4),
            ];
            let mut x = random_tensor(&dims, rng);
            // keep clear of the kink
            x.map_inplace(|v| {
                if v.abs() < 0.01 {
                    v + 0.05_f64.copysign(v)
                } else {
                    v
                }
            });
            (Layer::Relu(Relu::new()), x)
        }
        "maxpool" => {
            let dims = [
                1 + rng.below(2),
                1 + rng.below(3),
                2 * (1 + rng.below(3)),
                2 * (1 + rng.below(3)),
            ];
            let numel: usize = dims.iter().product();
            let mut values: Vec<f64> = (0..numel).map(|i| i as f64 * 0.01).collect();
            rng.shuffle(&mut values);
            (
                Layer::MaxPool(MaxPool2d::new()),
                Tensor::from_vec(&dims, values).unwrap(),
            )
        }
        "dropout" => {
            let mut d = Dropout::new(0.5, Rng::new(seed));
            d.frozen = true;
            let dims = [1 + rng.below(4), 1 + rng.below(16)];
            (Layer::Dropout(d), random_tensor(&dims, rng))
        }
        other => panic!("unknown layer kind {other}"),
    }
}

pub const LAYER_KINDS: [&str; 6] = ["conv", "batchnorm", "dense", "relu", "maxpool", "dropout"];

/// Worst relative error over `count` random instances of a layer kind.
pub fn layer_sweep(kind: &str, count: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let (mut layer, x) = instance(kind, &mut rng);
            check_layer(&mut layer, &x, &mut rng)
        })
        .fold(0.0, f64::max)
}

fn numeric_grad(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + FD_STEP;
            let plus = f(&xp);
            xp[i] = orig - FD_STEP;
            let minus = f(&xp);
            xp[i] = orig;
            (plus - minus) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Worst relative error of the BCE-with-logits gradient over random batches.
pub fn bce_sweep(count: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let n = 1 + rng.below(8);
            let z: Vec<f64> = (0..n).map(|_| rng.uniform(-4.0, 4.0)).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.below(2) as f64).collect();
            let targets = Tensor::from_vec(&[n, 1], t).unwrap();
            let (_, grad) =
                bce_with_logits(&Tensor::from_vec(&[n, 1], z.clone()).unwrap(), &targets).unwrap();
            let numeric = numeric_grad(&z, |zz| {
                bce_with_logits(&Tensor::from_vec(&[n, 1], zz.to_vec()).unwrap(), &targets)
                    .unwrap()
                    .0
            });
            rel_err(grad.data(), &numeric)
        })
        .fold(0.0, f64::max)
}

/// Worst relative error of the cross-entropy gradient over random batches.
pub fn ce_sweep(count: usize, seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let (n, c) = (1 + rng.below(6), 2 + rng.below(5));
            let z: Vec<f64> = (0..n * c).map(|_| rng.uniform(-4.0, 4.0)).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
            let (_, grad) =
                cross_entropy(&Tensor::from_vec(&[n, c], z.clone()).unwrap(), &labels).unwrap();
            let numeric = numeric_grad(&z, |zz| {
                cross_entropy(&Tensor::from_vec(&[n, c], zz.to_vec()).unwrap(), &labels)
                    .unwrap()
                    .0
            });
            rel_err(grad.data(), &numeric)
        })
        .fold(0.0, f64::max)
}

/// Direct convolution with explicit zero padding; `x` is `[N, C, H, W]`,
/// `w` is `[Co, C, k, k]`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv(
    x: &[f32],
    (n, c, h, w): (usize, usize, usize, usize),
    weight: &[f32],
    bias: &[f32],
    co: usize,
    k: usize,
    pad: usize,
    stride: usize,
) -> Vec<f32> {
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f32; n * co * ho * wo];
    for b in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[o] as f64;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ci) * h + iy as usize) * w + ix as usize];
                                let wv = weight[((o * c + ci) * k + ky) * k + kx];
                                acc += xv as f64 * wv as f64;
                            }
                        }
                    }
                    out[((b * co + o) * ho + oy) * wo + ox] = acc as f32;
                }
            }
        }
    }
    out
}

/// Max abs difference between im2col convolution and the direct oracle over
/// `count` random shapes with `N <= 3`, `C <= 4`, `H, W <= 10`.
pub fn conv_oracle_sweep(count: usize, seed: u64) -> f32 {
    use leancnn_core::Conv2d;
    let mut rng = Rng::new(seed);
    let mut worst = 0.0f32;
    let mut done = 0;
    while done < count {
        let (n, c, co) = (1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4));
        let (h, w) = (1 + rng.below(10), 1 + rng.below(10));
        let (k, pad, stride) = (1 + rng.below(3), rng.below(2), 1 + rng.below(2));
        if h + 2 * pad < k
            || w + 2 * pad < k
            || (h + 2 * pad - k) % stride != 0
            || (w + 2 * pad - k) % stride != 0
        {
            continue;
        }
        let mut conv = Conv2d::<f32>::new(c, co, k, pad, stride).unwrap();
        conv.weight.map_inplace(|_| rng.uniform(-1.0, 1.0));
        conv.bias.map_inplace(|_| rng.uniform(-1.0, 1.0));
        let x = Tensor::<f32>::uniform(&[n, c, h, w], &mut rng, -1.0, 1.0).unwrap();
        let want = naive_conv(
            x.data(),
            (n, c, h, w),
            conv.weight.data(),
            conv.bias.data(),
            co,
            k,
            pad,
            stride,
        );
        let got = conv.infer(x).unwrap();
        assert_eq!(got.numel(), want.len());
        for (a, b) in got.data().iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
        done += 1;
    }
    worst
}

/// Accuracy and per-class `(precision, recall, f1)` recounted straight from
/// a `(truth, predicted)` stream, zero denominators giving 0.
pub fn stream_metrics(
    truth: &[usize],
    pred: &[usize],
    classes: usize,
) -> (f64, Vec<(f64, f64, f64)>) {
    let correct = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    let accuracy = if truth.is_empty() {
        0.0
    } else {
        correct as f64 / truth.len() as f64
    };
    let per_class = (0..classes)
        .map(|k| {
            let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
            for (&t, &p) in truth.iter().zip(pred) {
                match (t == k, p == k) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    _ => {}
                }
            }
            let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
            let (p, r) = (div(tp, tp + fp), div(tp, tp + fn_));
            let f1 = if p + r == 0.0 {
                0.0
            } else {
                2.0 * p * r / (p + r)
            };
            (p, r, f1)
        })
        .collect();
    (accuracy, per_class)
}

/// Number of random streams (out of `count`) whose matrix-derived metrics
/// differ in any bit from the stream recount, or whose binary and macro
/// paths disagree on the positive class when `C = 2`.
pub fn stream_oracle_sweep(count: usize, seed: u64) -> usize {
    use leancnn_core::{binary_metrics, multiclass_metrics, ConfusionMatrix};
    let mut rng = Rng::new(seed);
    let mut mismatches = 0;
    for _ in 0..count {
        let classes = 2 + rng.below(4);
        let n = rng.below(200);
        let truth: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
        let mut cm = ConfusionMatrix::with_classes(classes).unwrap();
        cm.extend(truth.iter().copied().zip(pred.iter().copied()))
            .unwrap();
        let report = multiclass_metrics(&cm);
        let (accuracy, per_class) = stream_metrics(&truth, &pred, classes);
        let mut ok = report.accuracy == accuracy && report.total == n as u64;
        for (m, &(p, r, f1)) in report.per_class.iter().zip(&per_class) {
            ok &= m.precision == p && m.recall == r && m.f1 == f1;
        }
        let mean =
            |f: fn(&(f64, f64, f64)) -> f64| per_class.iter().map(f).sum::<f64>() / classes as f64;
        ok &= report.precision == mean(|c| c.0)
            && report.recall == mean(|c| c.1)
            && report.f1 == mean(|c| c.2);
        if classes == 2 {
            let b = binary_metrics(&cm).unwrap();
            let pos = &report.per_class[1];
            ok &= b.precision == pos.precision
                && b.recall == pos.recall
                && b.f1 == pos.f1
                && b.accuracy == report.accuracy;
        }
        if !ok {
            mismatches += 1;
        }
    }
    mismatches
}
