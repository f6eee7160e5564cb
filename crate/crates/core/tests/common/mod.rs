//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use nlmda::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `out[b,h,c,t] = x[b,0,c,t] * w[h,0,c]`
pub fn expand_oracle(x: &Tensor, w: &Tensor) -> Tensor {
    let (b, c, t) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let d = w.shape()[0];
    let mut out = Tensor::zeros([b, d, c, t]);
    for bi in 0..b {
        for h in 0..d {
            for ci in 0..c {
                for ti in 0..t {
                    out.set(
                        &[bi, h, ci, ti],
                        x.get(&[bi, 0, ci, ti]) * w.get(&[h, 0, ci]),
                    );
                }
            }
        }
    }
    out
}

/// Cross-correlation with padding `(top, left)` and output extent `(oh, ow)`.
/// Padded taps read zero, or the nearest edge element when `replicate`.
pub fn conv_oracle(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    pad: (usize, usize),
    out_hw: (usize, usize),
    replicate: bool,
) -> Tensor {
    let (bn, din, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (dout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let mut out = Tensor::zeros([bn, dout, out_hw.0, out_hw.1]);
    for bi in 0..bn {
        for o in 0..dout {
            for i in 0..out_hw.0 {
                for j in 0..out_hw.1 {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for ci in 0..din {
                        for p in 0..kh {
                            for q in 0..kw {
                                let (mut r, mut c) = (
                                    (i + p) as isize - pad.0 as isize,
                                    (j + q) as isize - pad.1 as isize,
                                );
                                if replicate {
                                    r = r.clamp(0, h as isize - 1);
                                    c = c.clamp(0, wd as isize - 1);
                                }
                                if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < wd {
                                    acc += x.get(&[bi, ci, r as usize, c as usize])
                                        * w.get(&[o, ci, p, q]);
                                }
                            }
                        }
                    }
                    out.set(&[bi, o, i, j], acc);
                }
            }
        }
    }
    out
}

/// Softmax along `axis` by explicit index enumeration.
pub fn softmax_oracle(x: &Tensor, axis: usize) -> Tensor {
    let shape = x.shape().to_vec();
    let mut out = x.clone();
    let n = shape[axis];
    let total = x.numel();
    let stride: usize = shape[axis + 1..].iter().product();
    for flat in 0..total {
        if !(flat / stride).is_multiple_of(n) {
            continue;
        }
        let vals: Vec<f64> = (0..n).map(|k| x.data()[flat + k * stride]).collect();
        let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = vals.iter().map(|v| (v - m).exp()).sum();
        for (k, v) in vals.iter().enumerate() {
            out.data_mut()[flat + k * stride] = (v - m).exp() / z;
        }
    }
    out
}

/// Non-overlapping average pooling over the last two axes, remainder dropped.
pub fn pool_oracle(x: &Tensor, win: (usize, usize)) -> Tensor {
    let s = x.shape();
    let (oh, ow) = (s[2] / win.0, s[3] / win.1);
    let mut out = Tensor::zeros([s[0], s[1], oh, ow]);
    for a in 0..s[0] {
        for d in 0..s[1] {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for p in 0..win.0 {
                        for q in 0..win.1 {
                            acc += x.get(&[a, d, i * win.0 + p, j * win.1 + q]);
                        }
                    }
                    out.set(&[a, d, i, j], acc / (win.0 * win.1) as f64);
                }
            }
        }
    }
    out
}

pub fn extent(rng: &mut impl Rng, hi: usize) -> usize {
    rng.random_range(1..=hi)
}

/// Runs `cases` seeded random comparisons of each op against its oracle and
/// returns `(op, cases, max abs error)`.
pub fn oracle_suite(cases: usize, seed: u64) -> Vec<(&'static str, usize, f64)> {
    use nlmda::tensor::{Padding, Tape};
    let mut r = rng(seed);
    let (mut e_expand, mut e_conv, mut e_soft, mut e_pool) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..cases {
        let mut tape = Tape::new();
        let (b, c, t, d) = (
            extent(&mut r, 3),
            extent(&mut r, 5),
            extent(&mut r, 6),
            extent(&mut r, 4),
        );
        let x = Tensor::randn([b, 1, c, t], 1.0, &mut r);
        let w = Tensor::randn([d, 1, c], 1.0, &mut r);
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let y = tape.contract_expand(xv, wv).unwrap();
        e_expand = e_expand.max(tape.value(y).max_abs_diff(&expand_oracle(&x, &w)));

        let (din, dout) = (extent(&mut r, 3), extent(&mut r, 3));
        let (h, wd) = (extent(&mut r, 6), extent(&mut r, 6));
        let (kh, kw) = (extent(&mut r, h), extent(&mut r, wd));
        let x = Tensor::randn([b, din, h, wd], 1.0, &mut r);
        let k = Tensor::randn([dout, din, kh, kw], 1.0, &mut r);
        let bias = Tensor::randn([dout], 1.0, &mut r);
        let padding = [Padding::Valid, Padding::Same, Padding::Replicate][r.random_range(0..3)];
        let (xv, kv, bv) = (
            tape.constant(x.clone()),
            tape.constant(k.clone()),
            tape.constant(bias.clone()),
        );
        let (pad, out_hw) = if padding == Padding::Valid {
            ((0, 0), (h - kh + 1, wd - kw + 1))
        } else {
            (((kh - 1) / 2, (kw - 1) / 2), (h, wd))
        };
        let y = tape.conv2d(xv, kv, Some(bv), padding).unwrap();
        let expected = conv_oracle(
            &x,
            &k,
            Some(&bias),
            pad,
            out_hw,
            padding == Padding::Replicate,
        );
        e_conv = e_conv.max(tape.value(y).max_abs_diff(&expected));

        let shape: Vec<usize> = (0..extent(&mut r, 4)).map(|_| extent(&mut r, 5)).collect();
        let axis = r.random_range(0..shape.len());
        let x = Tensor::randn(shape, 3.0, &mut r);
        let xv = tape.constant(x.clone());
        let y = tape.softmax(xv, axis).unwrap();
        e_soft = e_soft.max(tape.value(y).max_abs_diff(&softmax_oracle(&x, axis)));

        let x = Tensor::randn([b, d, h, wd], 1.0, &mut r);
        let win = (extent(&mut r, h), extent(&mut r, wd));
        let xv = tape.constant(x.clone());
        let y = tape.avg_pool(xv, win).unwrap();
        e_pool = e_pool.max(tape.value(y).max_abs_diff(&pool_oracle(&x, win)));
    }
    vec![
        ("contract_expand", cases, e_expand),
        ("conv2d", cases, e_conv),
        ("softmax", cases, e_soft),
        ("avg_pool", cases, e_pool),
    ]
}

/// Direct evaluation of the pooling-width formula in floating point.
pub fn k_pooling_reference(fs: usize, n: usize) -> usize {
    let ratio = (n as f64 / 200.0).floor().max(1.0);
    (fs as f64 / 10.0 / ratio).floor().max(1.0) as usize
}

/// Sampling rates crossed with log-spaced training-set sizes and the edges
/// where the formula changes value.
pub fn k_pooling_grid() -> Vec<(usize, usize)> {
    let mut n_values: Vec<usize> = (0..=100)
        .map(|i| 10f64.powf(i as f64 * 0.05).round() as usize)
        .collect();
    n_values.extend([199, 200, 201, 399, 400, 28497, 40710]);
    let mut grid = Vec::new();
    for fs in [100, 128, 200, 250, 256, 500, 1000] {
        grid.extend(n_values.iter().map(|&n| (fs, n)));
    }
    grid
}

/// Largest deviation from each attention identity on random inputs:
/// all-ones depth weights replicate the input, depth-constant features pass
/// through depth attention, and zero hidden weights give uniform channel
/// attention (output `x / C`).
pub fn identity_suite(seed: u64) -> Vec<(&'static str, f64)> {
    use nlmda::model::{
        channel_attention_forward, depth_attention_forward, nonlinear_attention_forward,
        ModelConfig,
    };
    use nlmda::tensor::Tape;
    let mut r = rng(seed);
    let cfg = ModelConfig::default();
    let (c, t, d) = (cfg.channels, cfg.samples, cfg.depth);

    let mut tape = Tape::new();
    let x = Tensor::randn([3, 1, c, t], 1.0, &mut r);
    let xv = tape.constant(x.clone());
    let ones = tape.constant(Tensor::ones([d, 1, c]));
    let y = channel_attention_forward(&mut tape, &cfg, xv, ones).unwrap();
    let y = tape.value(y);
    let mut replicate = 0.0f64;
    for b in 0..3 {
        for h in 0..d {
            for ch in 0..c {
                for i in 0..t {
                    replicate =
                        replicate.max((y.get(&[b, h, ch, i]) - x.get(&[b, 0, ch, i])).abs());
                }
            }
        }
    }

    let (fc, ft) = (5, 24);
    let slice = Tensor::randn([3, 1, fc, ft], 1.0, &mut r);
    let mut f = Tensor::zeros([3, d, fc, ft]);
    for b in 0..3 {
        for h in 0..d {
            for ch in 0..fc {
                for i in 0..ft {
                    f.set(&[b, h, ch, i], slice.get(&[b, 0, ch, i]));
                }
            }
        }
    }
    let fv = tape.constant(f.clone());
    let w = tape.constant(Tensor::randn([1, 1, cfg.depth_attn_kernel, 1], 1.0, &mut r));
    let bias = tape.constant(Tensor::randn([1], 1.0, &mut r));
    let out = depth_attention_forward(&mut tape, fv, w, bias).unwrap();
    let depth_identity = tape.value(out.output).max_abs_diff(&f);

    let x = Tensor::randn([3, d, c, t], 1.0, &mut r);
    let xv = tape.constant(x.clone());
    let w1 = tape.constant(Tensor::zeros([cfg.attn_hidden, t]));
    let b1 = tape.constant(Tensor::randn([cfg.attn_hidden], 1.0, &mut r));
    let w2 = tape.constant(Tensor::randn([1, cfg.attn_hidden], 1.0, &mut r));
    let out = nonlinear_attention_forward(&mut tape, xv, w1, b1, w2).unwrap();
    let uniform = tape
        .value(out.weights)
        .data()
        .iter()
        .fold(0.0f64, |m, a| m.max((a - 1.0 / c as f64).abs()));
    let scaled = tape
        .value(out.output)
        .data()
        .iter()
        .zip(x.data())
        .fold(0.0f64, |m, (y, x)| m.max((y - x / c as f64).abs()));

    vec![
        ("ones_replicate", replicate),
        ("depth_constant", depth_identity),
        ("uniform_alpha", uniform),
        ("uniform_output", scaled),
    ]
}
