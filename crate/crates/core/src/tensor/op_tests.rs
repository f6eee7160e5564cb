//! Per-operation checks against hand values and loop oracles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::Error;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Depth expansion by direct summation.
fn expand_oracle(x: &Tensor, c: &Tensor) -> Tensor {
    let (b, din, ch, t) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let d = c.shape()[0];
    let mut out = Tensor::zeros([b, d, ch, t]);
    for bi in 0..b {
        for h in 0..d {
            for c_ in 0..ch {
                for ti in 0..t {
                    let s: f64 = (0..din)
                        .map(|di| x.get(&[bi, di, c_, ti]) * c.get(&[h, di, c_]))
                        .sum();
                    out.set(&[bi, h, c_, ti], s);
                }
            }
        }
    }
    out
}

fn conv_oracle(
    x: &Tensor,
    w: &Tensor,
    bias: &Tensor,
    pad: (usize, usize),
    out_hw: (usize, usize),
) -> Tensor {
    let (b, din, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (dout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let mut out = Tensor::zeros([b, dout, out_hw.0, out_hw.1]);
    for bi in 0..b {
        for o in 0..dout {
            for r in 0..out_hw.0 {
                for c in 0..out_hw.1 {
                    let mut s = bias.data()[o];
                    for i in 0..din {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ir = r as isize + ki as isize - pad.0 as isize;
                                let ic = c as isize + kj as isize - pad.1 as isize;
                                if ir >= 0 && ic >= 0 && (ir as usize) < h && (ic as usize) < wd {
                                    s += x.get(&[bi, i, ir as usize, ic as usize])
                                        * w.get(&[o, i, ki, kj]);
                                }
                            }
                        }
                    }
                    out.set(&[bi, o, r, c], s);
                }
            }
        }
    }
    out
}

/// Maclaurin series for erf, independent of libm.
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..60 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    sum * 2.0 / std::f64::consts::PI.sqrt()
}

fn forward1(x: Tensor, f: impl FnOnce(&mut Tape, Var) -> Result<Var>) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let out = f(&mut tape, v).unwrap();
    tape.value(out).clone()
}

#[test]
fn contract_expand_all_ones_replicates() {
    let x = Tensor::randn([2, 1, 4, 5], 1.0, &mut rng(1));
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let cv = tape.constant(Tensor::ones([3, 1, 4]));
    let out = tape.contract_expand(xv, cv).unwrap();
    let out = tape.value(out);
    assert_eq!(out.shape(), &[2, 3, 4, 5]);
    for b in 0..2 {
        for h in 0..3 {
            for c in 0..4 {
                for t in 0..5 {
                    assert_eq!(out.get(&[b, h, c, t]), x.get(&[b, 0, c, t]));
                }
            }
        }
    }
}

#[test]
fn contract_expand_single_entry_scaling() {
    let x = Tensor::randn([2, 1, 3, 4], 1.0, &mut rng(2));
    let mut c = Tensor::zeros([2, 1, 3]);
    c.set(&[0, 0, 0], 2.0);
    let mut tape = Tape::new();
    let (xv, cv) = (tape.constant(x.clone()), tape.constant(c));
    let out = tape.contract_expand(xv, cv).unwrap();
    let out = tape.value(out);
    for b in 0..2 {
        for h in 0..2 {
            for ch in 0..3 {
                for t in 0..4 {
                    let expect = if h == 0 && ch == 0 {
                        2.0 * x.get(&[b, 0, 0, t])
                    } else {
                        0.0
                    };
                    assert_eq!(out.get(&[b, h, ch, t]), expect);
                }
            }
        }
    }
}

#[test]
fn contract_expand_matches_loop_oracle() {
    let mut r = rng(3);
    let x = Tensor::randn([2, 1, 3, 4], 1.0, &mut r);
    let c = Tensor::randn([2, 1, 3], 1.0, &mut r);
    let mut tape = Tape::new();
    let (xv, cv) = (tape.constant(x.clone()), tape.constant(c.clone()));
    let out = tape.contract_expand(xv, cv).unwrap();
    assert!(tape.value(out).max_abs_diff(&expand_oracle(&x, &c)) < 1e-12);
}

#[test]
fn contract_expand_rejects_channel_mismatch() {
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::zeros([1, 1, 3, 4]));
    let cv = tape.constant(Tensor::zeros([2, 1, 5]));
    let err = tape.contract_expand(xv, cv).unwrap_err();
    assert!(
        matches!(err, Error::Shape(ref m) if m.contains("C=3")),
        "{err}"
    );
}

#[test]
fn conv2d_zero_input_yields_bias() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros([2, 3, 5, 6]));
    let w = tape.constant(Tensor::randn([4, 3, 2, 3], 1.0, &mut rng(4)));
    let b = tape.constant(Tensor::new([4], vec![0.5, -1.0, 2.0, 3.0]).unwrap());
    let out = tape.conv2d(x, w, Some(b), Padding::Valid).unwrap();
    let out = tape.value(out);
    assert_eq!(out.shape(), &[2, 4, 4, 4]);
    for (i, v) in out.data().iter().enumerate() {
        let o = (i / 16) % 4;
        assert_eq!(*v, [0.5, -1.0, 2.0, 3.0][o]);
    }
}

#[test]
fn conv2d_counts_ones() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::ones([1, 1, 3, 3]));
    let w = tape.constant(Tensor::ones([1, 1, 3, 3]));
    let out = tape.conv2d(x, w, None, Padding::Valid).unwrap();
    assert_eq!(tape.value(out).data(), &[9.0]);
}

#[test]
fn conv2d_temporal_geometry_matches_oracle() {
    let mut r = rng(5);
    let x = Tensor::randn([2, 9, 17, 200], 1.0, &mut r);
    let w = Tensor::randn([12, 9, 1, 9], 0.3, &mut r);
    let b = Tensor::randn([12], 1.0, &mut r);
    let mut tape = Tape::new();
    let (xv, wv, bv) = (
        tape.constant(x.clone()),
        tape.constant(w.clone()),
        tape.constant(b.clone()),
    );
    let out = tape.conv2d(xv, wv, Some(bv), Padding::Valid).unwrap();
    let out = tape.value(out);
    assert_eq!(out.shape(), &[2, 12, 17, 192]);
    assert!(out.max_abs_diff(&conv_oracle(&x, &w, &b, (0, 0), (17, 192))) < 1e-10);
}

#[test]
fn conv2d_same_padding_puts_extra_zero_high() {
    let mut r = rng(6);
    let x = Tensor::randn([1, 2, 5, 6], 1.0, &mut r);
    let w = Tensor::randn([3, 2, 4, 3], 1.0, &mut r);
    let b = Tensor::zeros([3]);
    let mut tape = Tape::new();
    let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
    let out = tape.conv2d(xv, wv, None, Padding::Same).unwrap();
    // Kh=4: pad 1 above, 2 below. Kw=3: pad 1 each side.
    let expect = conv_oracle(&x, &w, &b, (1, 1), (5, 6));
    assert!(tape.value(out).max_abs_diff(&expect) < 1e-12);
}

#[test]
fn conv2d_rejects_oversized_kernel() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros([1, 1, 3, 3]));
    let w = tape.constant(Tensor::zeros([1, 1, 4, 1]));
    assert!(matches!(
        tape.conv2d(x, w, None, Padding::Valid),
        Err(Error::Shape(_))
    ));
}

#[test]
fn activations_at_zero_and_saturation() {
    let out = forward1(Tensor::new([3], vec![0.0, 20.0, -20.0]).unwrap(), |t, v| {
        t.tanh(v)
    });
    assert_eq!(out.data()[0], 0.0);
    assert!((out.data()[1] - 1.0).abs() < 1e-12);
    assert!((out.data()[2] + 1.0).abs() < 1e-12);
    let g = forward1(Tensor::new([1], vec![0.0]).unwrap(), |t, v| t.gelu(v));
    assert_eq!(g.data()[0], 0.0);
}

#[test]
fn gelu_matches_series_cdf() {
    let expect = 1.0 * 0.5 * (1.0 + erf_series(1.0 / 2f64.sqrt()));
    let g = forward1(Tensor::scalar(1.0), |t, v| t.gelu(v));
    assert!((g.data()[0] - expect).abs() < 1e-12);
    assert!((g.data()[0] - 0.841345).abs() < 1e-5);
    let at10 = forward1(Tensor::scalar(10.0), |t, v| t.gelu(v));
    assert!((at10.data()[0] - 10.0).abs() < 1e-6);
}

#[test]
fn softmax_values_and_shift_invariance() {
    let u = forward1(Tensor::full([4], 3.0), |t, v| t.softmax(v, 0));
    assert!(u.data().iter().all(|p| (p - 0.25).abs() < 1e-15));

    let p = forward1(Tensor::new([3], vec![1., 2., 3.]).unwrap(), |t, v| {
        t.softmax(v, 0)
    });
    let denom: f64 = [1f64, 2., 3.].iter().map(|v| v.exp()).sum();
    for (k, expect) in [0.090031, 0.244728, 0.665241].iter().enumerate() {
        assert!((p.data()[k] - expect).abs() < 1e-5);
        assert!((p.data()[k] - ((k + 1) as f64).exp() / denom).abs() < 1e-15);
    }
    let shifted = forward1(Tensor::new([3], vec![101., 102., 103.]).unwrap(), |t, v| {
        t.softmax(v, 0)
    });
    assert!(shifted.max_abs_diff(&p) < 1e-12);

    let extreme = forward1(
        Tensor::new([3], vec![1e300, -1e300, 0.0]).unwrap(),
        |t, v| t.softmax(v, 0),
    );
    assert_eq!(extreme.data(), &[1.0, 0.0, 0.0]);
}

#[test]
fn softmax_axis_out_of_range() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros([2, 3]));
    assert!(tape.softmax(x, 2).is_err());
}

#[test]
fn batch_norm_train_standardizes() {
    let x = Tensor::randn([4, 3, 2, 5], 5.0, &mut rng(7));
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::ones([3]));
    let b = tape.constant(Tensor::zeros([3]));
    let mut state = BatchNormState::new(3);
    let out = tape.batch_norm(xv, g, b, &mut state, Mode::Train).unwrap();
    let out = tape.value(out);
    for d in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|bi| (0..2).flat_map(move |h| (0..5).map(move |w| (bi, h, w))))
            .map(|(bi, h, w)| out.get(&[bi, d, h, w]))
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-6, "var {var}");
    }
    assert!(state.running_mean.iter().any(|m| *m != 0.0));
}

#[test]
fn batch_norm_zero_gamma_gives_beta() {
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::randn([2, 2, 3, 3], 1.0, &mut rng(8)));
    let g = tape.constant(Tensor::zeros([2]));
    let b = tape.constant(Tensor::new([2], vec![0.7, -0.2]).unwrap());
    let out = tape
        .batch_norm(xv, g, b, &mut BatchNormState::new(2), Mode::Train)
        .unwrap();
    for (i, v) in tape.value(out).data().iter().enumerate() {
        assert_eq!(*v, if (i / 9) % 2 == 0 { 0.7 } else { -0.2 });
    }
}

#[test]
fn batch_norm_eval_uses_running_stats() {
    let mut state = BatchNormState::new(1);
    state.running_mean = vec![2.0];
    state.running_var = vec![4.0];
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::new([1, 1, 1, 2], vec![3.0, -1.0]).unwrap());
    let g = tape.constant(Tensor::scalar(1.5));
    let b = tape.constant(Tensor::scalar(0.25));
    let out = tape.batch_norm(xv, g, b, &mut state, Mode::Eval).unwrap();
    let s = (4.0f64 + 1e-5).sqrt();
    let expect = [(3.0 - 2.0) / s * 1.5 + 0.25, (-1.0 - 2.0) / s * 1.5 + 0.25];
    for (v, e) in tape.value(out).data().iter().zip(expect) {
        assert!((v - e).abs() < 1e-14);
    }
    assert_eq!(state.running_mean, vec![2.0]);
}

#[test]
fn batch_norm_train_needs_two_samples() {
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::zeros([1, 1, 2, 2]));
    let g = tape.constant(Tensor::ones([1]));
    let b = tape.constant(Tensor::zeros([1]));
    let r = tape.batch_norm(xv, g, b, &mut BatchNormState::new(1), Mode::Train);
    assert!(matches!(r, Err(Error::InvalidArgument(_))));
}

#[test]
fn avg_pool_examples() {
    let x = Tensor::randn([2, 3, 4, 5], 1.0, &mut rng(9));
    assert_eq!(forward1(x.clone(), |t, v| t.avg_pool(v, (1, 1))), x);

    let row = Tensor::new([1, 1, 1, 4], vec![1., 2., 3., 4.]).unwrap();
    assert_eq!(
        forward1(row, |t, v| t.avg_pool(v, (1, 2))).data(),
        &[1.5, 3.5]
    );

    let dropped = forward1(
        Tensor::new([1, 1, 1, 5], vec![1., 2., 3., 4., 100.]).unwrap(),
        |t, v| t.avg_pool(v, (1, 2)),
    );
    assert_eq!(dropped.shape(), &[1, 1, 1, 2]);

    let x = Tensor::randn([2, 2, 3, 12], 1.0, &mut rng(10));
    let pooled = forward1(x.clone(), |t, v| t.avg_pool(v, (1, 4)));
    let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.numel() as f64;
    assert!((mean(&pooled) - mean(&x)).abs() < 1e-12);

    let mut tape = Tape::new();
    let v = tape.constant(Tensor::zeros([1, 1, 2, 2]));
    assert!(tape.avg_pool(v, (1, 3)).is_err());
}

#[test]
fn linear_hadamard_cross_entropy_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::new([1, 2], vec![1., 2.]).unwrap());
    let w = tape.constant(Tensor::new([1, 2], vec![3., 4.]).unwrap());
    let b = tape.constant(Tensor::new([1], vec![5.]).unwrap());
    let y = tape.linear(x, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), &[16.0]);

    let a = Tensor::randn([2, 3], 1.0, &mut rng(11));
    let av = tape.constant(a.clone());
    let ones = tape.constant(Tensor::ones([2, 3]));
    let h = tape.hadamard(av, ones).unwrap();
    assert_eq!(tape.value(h), &a);

    let logits = tape.constant(Tensor::full([3, 2], 0.4));
    let loss = tape.cross_entropy(logits, &[0, 1, 1]).unwrap();
    assert!((tape.value(loss).data()[0] - 2f64.ln()).abs() < 1e-15);

    assert!(matches!(
        tape.cross_entropy(logits, &[0, 2, 1]),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::zeros([2]));
    let y = tape.tanh(x).unwrap();
    assert!(matches!(tape.backward(y), Err(Error::Shape(_))));
}

#[test]
fn quadratic_gradient_is_exact() {
    let x = Tensor::randn([5], 1.0, &mut rng(12));
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let sq = tape.hadamard(xv, xv).unwrap();
    let s = tape.sum(sq).unwrap();
    tape.backward(s).unwrap();
    let g = tape.grad(xv).unwrap();
    for (gi, xi) in g.data().iter().zip(x.data()) {
        assert_eq!(*gi, 2.0 * xi);
    }
    let err = gradcheck(
        |t, v| {
            let sq = t.hadamard(v[0], v[0])?;
            t.sum(sq)
        },
        &[x],
    )
    .unwrap();
    assert!(err < 1e-9, "{err}");
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::ones([2]));
    let p = tape.param(Tensor::ones([2]));
    let m = tape.hadamard(c, p).unwrap();
    let s = tape.sum(m).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(c).is_none());
    assert_eq!(tape.grad(p).unwrap().data(), &[1.0, 1.0]);
}
