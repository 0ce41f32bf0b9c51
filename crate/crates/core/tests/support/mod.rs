//! Independent reference implementations shared by the integration tests
//! and the acceptance suite. Nothing here calls the code it checks except
//! to obtain the value under test.
#![allow(dead_code)]

use loadsafe_core::arch::{receptive_field, ArchitectureSpec, InputShape, LayerSpec, LogisticNetConfig, Shape};
use loadsafe_core::model::Network;
use loadsafe_core::pipeline::{compute_metrics, ConfusionMatrix};
use loadsafe_core::tensor::{
    batchnorm2d, batchnorm2d_backward, conv2d, conv2d_backward, dense, dense_backward, grad_check, maxpool2d,
    relu, relu_backward, softmax_cross_entropy, Mode, Tensor, BN_EPSILON,
};
use loadsafe_core::Exec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

// ---------------------------------------------------------------- conv

/// Direct cross-correlation: for every output cell, sum over input channel,
/// kernel row and kernel column in that order, then add the bias.
pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, ci, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (co, k) = (ws[0], ws[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * co * oh * ow];
    for s in 0..n {
        for o in 0..co {
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = 0.0;
                    for i in 0..ci {
                        for kr in 0..k {
                            for kc in 0..k {
                                let y = (r * stride + kr) as isize - pad as isize;
                                let xx = (c * stride + kc) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((s * ci + i) * h + y as usize) * wd + xx as usize];
                                acc += w.data()[((o * ci + i) * k + kr) * k + kc] * xv;
                            }
                        }
                    }
                    out[((s * co + o) * oh + r) * ow + c] = acc + b.data()[o];
                }
            }
        }
    }
    Tensor::new(vec![n, co, oh, ow], out).unwrap()
}

pub struct ConvCase {
    pub x: Tensor<f64>,
    pub w: Tensor<f64>,
    pub b: Tensor<f64>,
    pub stride: usize,
    pub pad: usize,
}

/// A random convolution no larger than 2x3x16x16 whose kernel fits.
pub fn random_conv_case(rng: &mut ChaCha8Rng) -> ConvCase {
    let n = rng.gen_range(1..=2);
    let ci = rng.gen_range(1..=3);
    let h = rng.gen_range(1..=16);
    let wd = rng.gen_range(1..=16);
    let pad = rng.gen_range(0..=2);
    let k = rng.gen_range(1..=(h.min(wd) + 2 * pad).min(7));
    let stride = rng.gen_range(1..=3);
    let co = rng.gen_range(1..=4);
    ConvCase {
        x: uniform(rng, &[n, ci, h, wd], -1.0, 1.0),
        w: uniform(rng, &[co, ci, k, k], -1.0, 1.0),
        b: uniform(rng, &[co], -1.0, 1.0),
        stride,
        pad,
    }
}

/// Returns the number of cases whose output differs from the reference in
/// any bit.
pub fn conv_oracle_mismatches(cases: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    (0..cases)
        .filter(|_| {
            let c = random_conv_case(&mut r);
            let got = conv2d(&c.x, &c.w, &c.b, c.stride, c.pad).unwrap();
            let want = naive_conv2d(&c.x, &c.w, &c.b, c.stride, c.pad);
            got.shape() != want.shape()
                || got.data().iter().zip(want.data()).any(|(a, b)| a.to_bits() != b.to_bits())
        })
        .count()
}

// ---------------------------------------------------------------- gradients

/// Step for the nonlinear checks.
pub const GRAD_EPSILON: f64 = 1e-6;
/// Step for functions affine in the checked argument. Central differences
/// are exact there, so a large step only shrinks the roundoff that swamps
/// near-zero gradient entries at 1e-6.
pub const AFFINE_EPSILON: f64 = 1e-3;

/// Adapts a closure that can skip its backward pass: the analytic gradient
/// is only read at the first (unperturbed) call.
fn grad_once<F>(mut f: F) -> impl FnMut(&Tensor<f64>) -> loadsafe_core::Result<(f64, Vec<f64>)>
where
    F: FnMut(&Tensor<f64>, bool) -> loadsafe_core::Result<(f64, Vec<f64>)>,
{
    let mut first = true;
    move |x| {
        let need = std::mem::take(&mut first);
        f(x, need)
    }
}

fn weighted_sum(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Largest relative error of conv2d input and weight gradients under the
/// scalar `sum(conv(x) * r)`.
pub fn conv_grad_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let mut c = random_conv_case(&mut g);
    // keep the check cheap but never empty
    c.x = uniform(&mut g, &[2, c.x.shape()[1], c.x.shape()[2].max(4), c.x.shape()[3].max(4)], -1.0, 1.0);
    let y = conv2d(&c.x, &c.w, &c.b, c.stride, c.pad).unwrap();
    let r = uniform(&mut g, y.shape(), -1.0, 1.0);
    let (w, b, s, p) = (c.w.clone(), c.b.clone(), c.stride, c.pad);
    let ex = grad_check(
        |x| {
            let y = conv2d(x, &w, &b, s, p)?;
            let gr = conv2d_backward(Exec::Sequential, x, &w, &r, s, p, true)?;
            Ok((weighted_sum(&y, &r), gr.input.unwrap().into_data()))
        },
        &c.x,
        AFFINE_EPSILON,
    )
    .unwrap();
    let x = c.x.clone();
    let ew = grad_check(
        |w| {
            let y = conv2d(&x, w, &b, s, p)?;
            let gr = conv2d_backward(Exec::Sequential, &x, w, &r, s, p, false)?;
            Ok((weighted_sum(&y, &r), gr.weights.into_data()))
        },
        &c.w,
        AFFINE_EPSILON,
    )
    .unwrap();
    let eb = grad_check(
        |b| {
            let y = conv2d(&x, &c.w, b, s, p)?;
            let gr = conv2d_backward(Exec::Sequential, &x, &c.w, &r, s, p, false)?;
            Ok((weighted_sum(&y, &r), gr.bias.into_data()))
        },
        &c.b,
        AFFINE_EPSILON,
    )
    .unwrap();
    ex.max(ew).max(eb)
}

pub fn dense_grad_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (bsz, n, m) = (g.gen_range(1..=4), g.gen_range(1..=12), g.gen_range(1..=8));
    let x = uniform(&mut g, &[bsz, n], -1.0, 1.0);
    let w = uniform(&mut g, &[n, m], -1.0, 1.0);
    let b = uniform(&mut g, &[m], -1.0, 1.0);
    let r = uniform(&mut g, &[bsz, m], -1.0, 1.0);
    let ex = grad_check(
        |x| Ok((weighted_sum(&dense(x, &w, &b)?, &r), dense_backward(x, &w, &r)?.input.into_data())),
        &x,
        AFFINE_EPSILON,
    )
    .unwrap();
    let ew = grad_check(
        |w| Ok((weighted_sum(&dense(&x, w, &b)?, &r), dense_backward(&x, w, &r)?.weights.into_data())),
        &w,
        AFFINE_EPSILON,
    )
    .unwrap();
    let eb = grad_check(
        |b| Ok((weighted_sum(&dense(&x, &w, b)?, &r), dense_backward(&x, &w, &r)?.bias.into_data())),
        &b,
        AFFINE_EPSILON,
    )
    .unwrap();
    ex.max(ew).max(eb)
}

/// Train-mode batch normalization: input, gamma and beta gradients.
pub fn batchnorm_grad_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let shape = [g.gen_range(2..=3), g.gen_range(1..=3), g.gen_range(2..=4), g.gen_range(2..=4)];
    let c = shape[1];
    let x = uniform(&mut g, &shape, -2.0, 2.0);
    let gamma = uniform(&mut g, &[c], 0.5, 1.5);
    let beta = uniform(&mut g, &[c], -0.5, 0.5);
    let r = uniform(&mut g, &shape, -1.0, 1.0);
    let run = |x: &Tensor<f64>, gamma: &Tensor<f64>, beta: &Tensor<f64>| {
        let (mut m, mut v) = (Tensor::zeros(&[c]), Tensor::full(&[c], 1.0));
        let (y, cache) = batchnorm2d(x, gamma, beta, &mut m, &mut v, BN_EPSILON, Mode::Train).unwrap();
        let grads = batchnorm2d_backward(&cache.unwrap(), gamma, &r).unwrap();
        (weighted_sum(&y, &r), grads)
    };
    let ex = grad_check(
        |x| {
            let (f, gr) = run(x, &gamma, &beta);
            Ok((f, gr.input.into_data()))
        },
        &x,
        GRAD_EPSILON,
    )
    .unwrap();
    let eg = grad_check(
        |gm| {
            let (f, gr) = run(&x, gm, &beta);
            Ok((f, gr.gamma.into_data()))
        },
        &gamma,
        GRAD_EPSILON,
    )
    .unwrap();
    let eb = grad_check(
        |bt| {
            let (f, gr) = run(&x, &gamma, bt);
            Ok((f, gr.beta.into_data()))
        },
        &beta,
        GRAD_EPSILON,
    )
    .unwrap();
    ex.max(eg).max(eb)
}

pub fn cross_entropy_grad_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (b, k) = (g.gen_range(1..=6), g.gen_range(2..=5));
    let logits = uniform(&mut g, &[b, k], -3.0, 3.0);
    let labels: Vec<usize> = (0..b).map(|_| g.gen_range(0..k)).collect();
    grad_check(
        |z| {
            let (loss, grad) = softmax_cross_entropy(z, &labels)?;
            Ok((loss, grad.into_data()))
        },
        &logits,
        GRAD_EPSILON,
    )
    .unwrap()
}

/// ReLU sampled with every input at least 0.1 away from the kink.
pub fn relu_grad_error(seed: u64) -> f64 {
    let mut g = rng(seed);
    let n = g.gen_range(1..=32);
    let x = Tensor::from_fn(&[1, n], |_| {
        let m = g.gen_range(0.1..2.0);
        if g.gen_bool(0.5) {
            m
        } else {
            -m
        }
    });
    let r = uniform(&mut g, &[1, n], -1.0, 1.0);
    grad_check(|x| Ok((weighted_sum(&relu(x), &r), relu_backward(x, &r)?.into_data())), &x, GRAD_EPSILON).unwrap()
}

/// The LogisticNet classifier head (the last three conv/BN blocks, pooling,
/// and the dropout-regularized dense stack) at the compact widths, checked
/// end to end from its input through softmax cross-entropy. Each probe runs
/// on a fresh copy of the network so every evaluation sees the same dropout
/// masks and batch statistics.
pub fn logisticnet_head_spec() -> ArchitectureSpec {
    let full = LogisticNetConfig::compact(2).build(64).unwrap();
    let shapes = full.output_shape().unwrap();
    // the head starts after the second pooling layer
    let pools: Vec<usize> =
        full.layers.iter().enumerate().filter(|(_, l)| matches!(l, LayerSpec::Maxpool { .. })).map(|(i, _)| i).collect();
    let cut = pools[1] + 1;
    let Shape::Spatial { channels, height, width } = shapes[cut - 1] else { unreachable!() };
    ArchitectureSpec::new("logisticnet-head", InputShape { channels, height, width }, full.layers[cut..].to_vec())
}

/// Input gradient of the cross-entropy through the whole head, plus the
/// final dense weights as read back from the network after `backward`
/// under a fixed projection of the logits (affine in those weights).
pub fn logisticnet_head_grad_error(seed: u64) -> f64 {
    let spec = logisticnet_head_spec();
    let mut base: Network<f64> = Network::new(&spec, seed).unwrap();
    base.set_input_grad(true);
    let mut g = rng(seed ^ 0xabc);
    let x = uniform(&mut g, &base.batch_shape(2), -1.0, 1.0);
    let labels = [0, 1];
    let ex = grad_check(
        grad_once(|x, need| {
            let mut net = base.clone();
            let (logits, tape) = net.forward_train(x, Exec::Sequential)?;
            let (loss, dz) = softmax_cross_entropy(&logits, &labels)?;
            if !need {
                return Ok((loss, Vec::new()));
            }
            let dx = net.backward(tape, &dz, Exec::Sequential)?.expect("input gradient enabled");
            Ok((loss, dx.into_data()))
        }),
        &x,
        GRAD_EPSILON,
    )
    .unwrap();
    let last_w = spec_last_dense_weight(&base);
    let w0 = base.params().param(&last_w).unwrap().clone();
    let r = uniform(&mut g, &[2, 2], -1.0, 1.0);
    let ew = grad_check(
        grad_once(|w, need| {
            let mut net = base.clone();
            *net.params_mut().param_mut(&last_w).unwrap() = w.clone();
            let (logits, tape) = net.forward_train(&x, Exec::Sequential)?;
            let f = weighted_sum(&logits, &r);
            if !need {
                return Ok((f, Vec::new()));
            }
            net.backward(tape, &r, Exec::Sequential)?;
            Ok((f, net.params().param(&last_w).unwrap().grad().unwrap().to_vec()))
        }),
        &w0,
        AFFINE_EPSILON,
    )
    .unwrap();
    ex.max(ew)
}

fn spec_last_dense_weight(net: &Network<f64>) -> String {
    net.params().params().map(|(n, _)| n.to_string()).filter(|n| n.contains("dense") && n.ends_with(".weight")).max().unwrap()
}

/// Worst error per checked operation over `seeds`.
pub fn grad_check_suite(seeds: std::ops::Range<u64>) -> Vec<(&'static str, f64)> {
    let checks: [(&str, fn(u64) -> f64); 6] = [
        ("conv2d", conv_grad_error),
        ("dense", dense_grad_error),
        ("batchnorm2d", batchnorm_grad_error),
        ("softmax_cross_entropy", cross_entropy_grad_error),
        ("relu", relu_grad_error),
        ("logisticnet head", logisticnet_head_grad_error),
    ];
    checks.iter().map(|&(name, f)| (name, seeds.clone().map(f).fold(0.0, f64::max))).collect()
}

// ---------------------------------------------------------------- metrics

/// Five metrics recomputed from shuffled (prediction, label) pairs without
/// going through confusion counts: F1 as `2TP / (2TP + FP + FN)` and MCC as
/// the Pearson correlation of the two indicator vectors.
pub fn brute_force_metrics(pairs: &[(usize, usize)], positive: usize) -> [f64; 5] {
    let n = pairs.len() as f64;
    let p: Vec<f64> = pairs.iter().map(|&(p, _)| (p == positive) as u8 as f64).collect();
    let l: Vec<f64> = pairs.iter().map(|&(_, l)| (l == positive) as u8 as f64).collect();
    let accuracy = pairs.iter().filter(|(a, b)| a == b).count() as f64 / n;
    let predicted_pos: Vec<usize> = (0..pairs.len()).filter(|&i| p[i] == 1.0).collect();
    let actual_pos: Vec<usize> = (0..pairs.len()).filter(|&i| l[i] == 1.0).collect();
    let hits = predicted_pos.iter().filter(|&&i| l[i] == 1.0).count() as f64;
    let safe_div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let precision = safe_div(hits, predicted_pos.len() as f64);
    let recall = safe_div(hits, actual_pos.len() as f64);
    let misses = (predicted_pos.len() as f64 - hits) + (actual_pos.len() as f64 - hits);
    let f1 = safe_div(2.0 * hits, 2.0 * hits + misses);
    let (mp, ml) = (p.iter().sum::<f64>() / n, l.iter().sum::<f64>() / n);
    let cov: f64 = p.iter().zip(&l).map(|(a, b)| (a - mp) * (b - ml)).sum();
    let vp: f64 = p.iter().map(|a| (a - mp) * (a - mp)).sum();
    let vl: f64 = l.iter().map(|b| (b - ml) * (b - ml)).sum();
    let mcc = safe_div(cov, (vp * vl).sqrt());
    [accuracy, precision, recall, f1, mcc]
}

/// Largest absolute difference between `compute_metrics` and the brute-force
/// recomputation over `cases` random confusion matrices (including ones
/// with empty rows or columns).
pub fn metric_oracle_max_error(cases: usize, seed: u64) -> f64 {
    let mut g = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let max = *[0u64, 3, 40, 300].choose(&mut g).unwrap().max(&3);
        let mut counts = [0u64; 4];
        for c in &mut counts {
            *c = if g.gen_bool(0.15) { 0 } else { g.gen_range(0..=max) };
        }
        if counts.iter().sum::<u64>() == 0 {
            counts[g.gen_range(0..4)] = 1;
        }
        let positive = g.gen_range(0..2);
        let neg = 1 - positive;
        let [tp, fp, fn_, tn] = counts;
        let mut pairs: Vec<(usize, usize)> = std::iter::repeat_n((positive, positive), tp as usize)
            .chain(std::iter::repeat_n((positive, neg), fp as usize))
            .chain(std::iter::repeat_n((neg, positive), fn_ as usize))
            .chain(std::iter::repeat_n((neg, neg), tn as usize))
            .collect();
        pairs.shuffle(&mut g);
        let want = brute_force_metrics(&pairs, positive);
        let m = compute_metrics(&ConfusionMatrix::new(positive, tp, fp, fn_, tn)).unwrap();
        for (a, b) in [m.accuracy, m.precision, m.recall, m.f1, m.mcc].iter().zip(want) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

// ---------------------------------------------------------------- receptive field

/// A random stack of 1 to 4 conv/pool layers on a single-channel square
/// input, redrawn until every layer fits.
pub fn random_rf_spec(g: &mut ChaCha8Rng) -> ArchitectureSpec {
    loop {
        let size = g.gen_range(8..=28);
        let n = g.gen_range(1..=4);
        let layers: Vec<LayerSpec> = (0..n)
            .map(|_| {
                let k = g.gen_range(1..=5);
                let s = g.gen_range(1..=3);
                if g.gen_bool(0.6) {
                    LayerSpec::conv(k, g.gen_range(1..=2), s, g.gen_range(0..=k / 2))
                } else {
                    LayerSpec::maxpool(k.max(2), s)
                }
            })
            .collect();
        let spec = ArchitectureSpec::new("rf-probe", InputShape { channels: 1, height: size, width: size }, layers);
        if spec.output_shape().is_ok() {
            return spec;
        }
    }
}

fn run_stack(spec: &ArchitectureSpec, weights: &[(Tensor<f64>, Tensor<f64>)], x: &Tensor<f64>) -> Tensor<f64> {
    let mut cur = x.clone();
    let mut wi = weights.iter();
    for l in &spec.layers {
        cur = match *l {
            LayerSpec::Conv { stride, padding, .. } => {
                let (w, b) = wi.next().unwrap();
                conv2d(&cur, w, b, stride, padding).unwrap()
            }
            LayerSpec::Maxpool { pool_size, stride } => maxpool2d(&cur, pool_size, stride).unwrap(),
            _ => unreachable!("conv/pool stacks only"),
        };
    }
    cur
}

/// Measures, for every output unit, which input pixels influence it by
/// raising each pixel in turn by a large amount (weights and inputs are
/// positive, so any influence shows up as a change through conv and max
/// pooling alike). The receptive field is the extent of that support: a
/// kernel smaller than its stride leaves holes inside it.
///
/// For units whose analytic window `start + u * jump .. + rf` lies inside
/// the input, the measured row and column extents must equal it exactly;
/// for the others they must stay within the clipped window. Returns the
/// number of failing units, or `None` when no unit is interior (so `rf`
/// itself could not be observed).
pub fn rf_perturbation_check(spec: &ArchitectureSpec, seed: u64) -> Option<usize> {
    let mut g = rng(seed);
    let size = spec.input_shape.height;
    let mut ch = 1;
    let mut weights = Vec::new();
    for l in &spec.layers {
        if let LayerSpec::Conv { kernel_size: k, filters, .. } = *l {
            weights.push((uniform(&mut g, &[filters, ch, k, k], 0.5, 1.5), uniform(&mut g, &[filters], 0.0, 0.1)));
            ch = filters;
        }
    }
    let x = uniform(&mut g, &[1, 1, size, size], 0.0, 1.0);
    let base = run_stack(spec, &weights, &x);
    let [_, _, oh, ow] = base.dims4().unwrap();
    // measured extent per output unit of channel 0: (row lo, row hi, col lo, col hi), inclusive
    let mut extent: Vec<Option<(usize, usize, usize, usize)>> = vec![None; oh * ow];
    for px in 0..size * size {
        let (y, xx) = (px / size, px % size);
        let mut xp = x.clone();
        xp.data_mut()[px] += 1000.0;
        let out = run_stack(spec, &weights, &xp);
        for (o, e) in extent.iter_mut().enumerate() {
            if out.data()[o] != base.data()[o] {
                *e = Some(match *e {
                    None => (y, y, xx, xx),
                    Some((r0, r1, c0, c1)) => (r0.min(y), r1.max(y), c0.min(xx), c1.max(xx)),
                });
            }
        }
    }
    let last = receptive_field(spec).pop().unwrap();
    let lo = |u: usize| last.start + (u * last.jump) as isize;
    let inside = |u: usize| lo(u) >= 0 && lo(u) + last.rf as isize <= size as isize;
    let clip = |u: usize| (lo(u).max(0), (lo(u) + last.rf as isize - 1).min(size as isize - 1));
    let mut failures = 0;
    let mut interior = false;
    for r in 0..oh {
        for c in 0..ow {
            let Some((r0, r1, c0, c1)) = extent[r * ow + c] else {
                failures += 1;
                continue;
            };
            let (r0, r1, c0, c1) = (r0 as isize, r1 as isize, c0 as isize, c1 as isize);
            let ((wr0, wr1), (wc0, wc1)) = (clip(r), clip(c));
            let ok = if inside(r) && inside(c) {
                interior = true;
                (r0, r1, c0, c1) == (wr0, wr1, wc0, wc1)
            } else {
                r0 >= wr0 && r1 <= wr1 && c0 >= wc0 && c1 <= wc1
            };
            if !ok {
                failures += 1;
            }
        }
    }
    interior.then_some(failures)
}

/// Checks `n` random specs that have at least one interior unit. Returns
/// the specs that failed.
pub fn rf_oracle_failures(n: usize, seed: u64) -> Vec<Vec<LayerSpec>> {
    let mut g = rng(seed);
    let mut checked = 0;
    let mut failed = Vec::new();
    while checked < n {
        let spec = random_rf_spec(&mut g);
        if let Some(bad) = rf_perturbation_check(&spec, seed + checked as u64) {
            checked += 1;
            if bad > 0 {
                failed.push(spec.layers);
            }
        }
    }
    failed
}
