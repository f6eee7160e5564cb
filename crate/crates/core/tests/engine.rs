mod common;

use common::{extent, oracle_suite, rng};
use nlmda::tensor::{
    gradcheck, random_projection, BatchNormState, Mode, Padding, Tape, Tensor, Var,
};
use nlmda::Result;
use proptest::prelude::*;

const TOL: f64 = 1e-4;

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..=6, 1..=4)
}

fn projected(
    seed: u64,
    op: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> impl Fn(&mut Tape, &[Var]) -> Result<Var> {
    move |t, v| {
        let y = op(t, v)?;
        random_projection(t, y, &mut rng(!seed))
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn elementwise_gradients(shape in shape_strategy(), seed in any::<u64>()) {
        let x = Tensor::randn(shape, 1.0, &mut rng(seed));
        for err in [
            gradcheck(projected(seed, |t, v| t.tanh(v[0])), std::slice::from_ref(&x)).unwrap(),
            gradcheck(projected(seed, |t, v| t.gelu(v[0])), std::slice::from_ref(&x)).unwrap(),
            gradcheck(projected(seed, |t, v| t.scale(v[0], 0.37)), std::slice::from_ref(&x)).unwrap(),
            gradcheck(|t, v| t.sum(v[0]), std::slice::from_ref(&x)).unwrap(),
        ] {
            prop_assert!(err < TOL, "relative error {err}");
        }
    }

    #[test]
    fn softmax_gradient(shape in shape_strategy(), seed in any::<u64>(), axis_pick in 0usize..4) {
        let axis = axis_pick % shape.len();
        let x = Tensor::randn(shape, 2.0, &mut rng(seed));
        let err = gradcheck(projected(seed, move |t, v| t.softmax(v[0], axis)), &[x]).unwrap();
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn reshape_gradient(shape in shape_strategy(), seed in any::<u64>()) {
        let n: usize = shape.iter().product();
        let x = Tensor::randn(shape, 1.0, &mut rng(seed));
        let err = gradcheck(projected(seed, move |t, v| t.reshape(v[0], &[n])), &[x]).unwrap();
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn hadamard_broadcast_gradient(shape in shape_strategy(), mask in prop::collection::vec(any::<bool>(), 4), seed in any::<u64>()) {
        let mut r = rng(seed);
        let bshape: Vec<usize> = shape.iter().zip(&mask).map(|(&d, &m)| if m { 1 } else { d }).collect();
        let a = Tensor::randn(shape, 1.0, &mut r);
        let b = Tensor::randn(bshape, 1.0, &mut r);
        let err = gradcheck(projected(seed, |t, v| t.hadamard(v[0], v[1])), &[a, b]).unwrap();
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn contract_expand_gradient(b in 1usize..=3, c in 1usize..=5, t in 1usize..=6, d in 1usize..=4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = Tensor::randn([b, 1, c, t], 1.0, &mut r);
        let w = Tensor::randn([d, 1, c], 1.0, &mut r);
        let err = gradcheck(projected(seed, |t, v| t.contract_expand(v[0], v[1])), &[x, w]).unwrap();
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn conv2d_gradient(
        b in 1usize..=2, din in 1usize..=3, dout in 1usize..=3,
        h in 1usize..=6, w in 1usize..=6, pick in 0usize..3, seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let (kh, kw) = (extent(&mut r, h), extent(&mut r, w));
        let x = Tensor::randn([b, din, h, w], 1.0, &mut r);
        let k = Tensor::randn([dout, din, kh, kw], 0.5, &mut r);
        let bias = Tensor::randn([dout], 0.5, &mut r);
        let padding = [Padding::Valid, Padding::Same, Padding::Replicate][pick];
        let err = gradcheck(projected(seed, move |t, v| t.conv2d(v[0], v[1], Some(v[2]), padding)), &[x, k, bias]).unwrap();
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn pool_gradient(b in 1usize..=2, d in 1usize..=3, h in 1usize..=6, w in 1usize..=6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let win = (extent(&mut r, h), extent(&mut r, w));
        let x = Tensor::randn([b, d, h, w], 1.0, &mut r);
        let err = gradcheck(projected(seed, move |t, v| t.avg_pool(v[0], win)), &[x]).unwrap();
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn linear_gradient(lead in prop::collection::vec(1usize..=4, 1..=3), n_in in 1usize..=6, n_out in 1usize..=6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut xs = lead;
        xs.push(n_in);
        let x = Tensor::randn(xs, 1.0, &mut r);
        let w = Tensor::randn([n_out, n_in], 0.5, &mut r);
        let b = Tensor::randn([n_out], 0.5, &mut r);
        let err = gradcheck(projected(seed, |t, v| t.linear(v[0], v[1], Some(v[2]))), &[x, w, b]).unwrap();
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn batch_norm_gradient(b in 2usize..=4, d in 1usize..=3, h in 1usize..=4, w in 1usize..=4, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = Tensor::randn([b, d, h, w], 2.0, &mut r);
        let g = Tensor::randn([d], 1.0, &mut r);
        let beta = Tensor::randn([d], 1.0, &mut r);
        let f = projected(seed, move |t, v| t.batch_norm(v[0], v[1], v[2], &mut BatchNormState::new(d), Mode::Train));
        let err = gradcheck(f, &[x, g, beta]).unwrap();
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn cross_entropy_gradient(b in 1usize..=5, k in 2usize..=5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let logits = Tensor::randn([b, k], 2.0, &mut r);
        let labels: Vec<usize> = (0..b).map(|i| (i * 7 + seed as usize) % k).collect();
        let err = gradcheck(|t, v| t.cross_entropy(v[0], &labels), &[logits]).unwrap();
        prop_assert!(err < TOL, "relative error {err}");
    }

    #[test]
    fn tanh_is_odd(x in -20.0f64..20.0) {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::new([2], vec![x, -x]).unwrap());
        let y = tape.tanh(v).unwrap();
        let d = tape.value(y).data();
        prop_assert_eq!(d[0], -d[1]);
    }

    #[test]
    fn gelu_is_bounded_by_identity(x in -50.0f64..50.0) {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::scalar(x));
        let y = tape.gelu(v).unwrap();
        prop_assert!(tape.value(y).data()[0].abs() <= x.abs());
    }
}

#[test]
fn cross_entropy_of_softmax_has_closed_form_gradient() {
    let mut r = rng(11);
    for _ in 0..20 {
        let (b, k) = (extent(&mut r, 6), 1 + extent(&mut r, 5));
        let logits = Tensor::randn([b, k], 3.0, &mut r);
        let labels: Vec<usize> = (0..b).map(|i| (i * 3 + 1) % k).collect();
        let mut tape = Tape::new();
        let z = tape.param(logits.clone());
        let loss = tape.cross_entropy(z, &labels).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(z).unwrap();
        for (i, &label) in labels.iter().enumerate() {
            let row = &logits.data()[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let zsum: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for (j, v) in row.iter().enumerate() {
                let p = (v - m).exp() / zsum;
                let expected = (p - f64::from(u8::from(j == label))) / b as f64;
                assert!((g.get(&[i, j]) - expected).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn ops_match_loop_oracles() {
    for (op, cases, err) in oracle_suite(60, 5) {
        assert!(cases >= 50);
        assert!(err < 1e-10, "{op}: {err}");
    }
}

fn replay() -> (Vec<Tensor>, Vec<Tensor>) {
    let mut r = rng(99);
    let mut tape = Tape::new();
    let x = tape.param(Tensor::randn([2, 1, 3, 8], 1.0, &mut r));
    let c = tape.param(Tensor::randn([2, 1, 3], 1.0, &mut r));
    let w = tape.param(Tensor::randn([4, 2, 1, 3], 1.0, &mut r));
    let e = tape.contract_expand(x, c).unwrap();
    let h = tape.conv2d(e, w, None, Padding::Same).unwrap();
    let h = tape.gelu(h).unwrap();
    let s = tape.softmax(h, 3).unwrap();
    let p = tape.avg_pool(s, (3, 2)).unwrap();
    let loss = random_projection(&mut tape, p, &mut r).unwrap();
    tape.backward(loss).unwrap();
    let values = [e, h, s, p, loss]
        .iter()
        .map(|&v| tape.value(v).clone())
        .collect();
    let grads = [x, c, w]
        .iter()
        .map(|&v| tape.grad(v).unwrap().clone())
        .collect();
    (values, grads)
}

#[test]
fn tape_replay_is_bit_identical() {
    let (v1, g1) = replay();
    let (v2, g2) = replay();
    for (a, b) in v1.iter().chain(&g1).zip(v2.iter().chain(&g2)) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
}

#[test]
fn shared_subexpression_accumulates() {
    // d/dx sum(x*x + x) = 2x + 1
    let x0 = Tensor::new([3], vec![0.5, -1.0, 2.0]).unwrap();
    let mut tape = Tape::new();
    let x = tape.param(x0.clone());
    let sq = tape.hadamard(x, x).unwrap();
    let s1 = tape.sum(sq).unwrap();
    let s2 = tape.sum(x).unwrap();
    let both = tape.reshape(s1, &[1]).unwrap();
    let joined = tape.hadamard(both, s2).unwrap();
    tape.backward(joined).unwrap();
    // d/dx (sum x^2)(sum x) = 2x * sum(x) + sum(x^2)
    let (sx, sx2) = (1.5, 0.25 + 1.0 + 4.0);
    let g = tape.grad(x).unwrap();
    for (i, &xi) in x0.data().iter().enumerate() {
        assert!((g.data()[i] - (2.0 * xi * sx + sx2)).abs() < 1e-12);
    }
}
