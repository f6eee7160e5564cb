use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BatchNormState, Mode, Padding, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// `|a - b| / max(1e-8, |a| + |b|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences and returns the largest relative error over every coordinate
/// of every input.
///
/// `f` receives a fresh tape with each input registered as a trainable leaf
/// and must return a one-element node.
pub fn gradcheck<F>(f: F, inputs: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.numel()).map(move |i| (k, i)))
        .collect();
    gradcheck_at(f, inputs, &coords)
}

/// [`gradcheck`] restricted to the `(input, flat index)` pairs in `coords`.
pub fn gradcheck_at<F>(f: F, inputs: &[Tensor], coords: &[(usize, usize)]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for &(k, i) in coords {
        if k >= inputs.len() || i >= inputs[k].numel() {
            return Err(Error::invalid(format!("no coordinate {i} in input {k}")));
        }
        let orig = inputs[k].data()[i];
        probe[k].data_mut()[i] = orig + FD_STEP;
        let plus = eval(&probe)?;
        probe[k].data_mut()[i] = orig - FD_STEP;
        let minus = eval(&probe)?;
        probe[k].data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let a = tape.grad(vars[k]).map_or(0.0, |g| g.data()[i]);
        if !a.is_finite() || !numeric.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite gradient at input {k}, coordinate {i}"
            )));
        }
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

/// `sum(x * r)` for a fixed random `r`, a scalar whose gradient reaches every
/// element of `x` with a distinct weight.
pub fn random_projection<R: Rng + ?Sized>(tape: &mut Tape, x: Var, rng: &mut R) -> Result<Var> {
    let r = tape.constant(Tensor::randn(tape.shape(x).to_vec(), 1.0, rng));
    let prod = tape.hadamard(x, r)?;
    tape.sum(prod)
}

/// Checks every differentiable primitive on small random inputs. Returns the
/// largest relative error per primitive.
pub fn primitive_gradchecks(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let proj_seed: u64 = rng.random();
    // Each closure rebuilds the same projection so every evaluation sees one function.
    let project = |tape: &mut Tape, v: Var| {
        random_projection(tape, v, &mut ChaCha8Rng::seed_from_u64(proj_seed))
    };
    let mut out = Vec::new();

    let x = Tensor::randn([2, 1, 3, 4], 1.0, rng);
    let c = Tensor::randn([2, 1, 3], 1.0, rng);
    out.push((
        "contract_expand",
        gradcheck(
            |t, v| {
                let y = t.contract_expand(v[0], v[1])?;
                project(t, y)
            },
            &[x, c],
        )?,
    ));

    for (name, padding) in [
        ("conv2d_valid", Padding::Valid),
        ("conv2d_same", Padding::Same),
        ("conv2d_replicate", Padding::Replicate),
    ] {
        let x = Tensor::randn([2, 2, 4, 5], 1.0, rng);
        let w = Tensor::randn([3, 2, 2, 3], 0.5, rng);
        let b = Tensor::randn([3], 0.5, rng);
        out.push((
            name,
            gradcheck(
                |t, v| {
                    let y = t.conv2d(v[0], v[1], Some(v[2]), padding)?;
                    project(t, y)
                },
                &[x, w, b],
            )?,
        ));
    }

    let x = Tensor::randn([2, 3, 4], 1.0, rng);
    out.push((
        "tanh",
        gradcheck(
            |t, v| {
                let y = t.tanh(v[0])?;
                project(t, y)
            },
            std::slice::from_ref(&x),
        )?,
    ));
    out.push((
        "gelu",
        gradcheck(
            |t, v| {
                let y = t.gelu(v[0])?;
                project(t, y)
            },
            std::slice::from_ref(&x),
        )?,
    ));
    out.push((
        "softmax",
        gradcheck(
            |t, v| {
                let y = t.softmax(v[0], 1)?;
                project(t, y)
            },
            std::slice::from_ref(&x),
        )?,
    ));
    out.push((
        "scale",
        gradcheck(
            |t, v| {
                let y = t.scale(v[0], -1.7)?;
                project(t, y)
            },
            std::slice::from_ref(&x),
        )?,
    ));
    out.push((
        "reshape",
        gradcheck(
            |t, v| {
                let y = t.reshape(v[0], &[6, 4])?;
                project(t, y)
            },
            std::slice::from_ref(&x),
        )?,
    ));
    out.push((
        "sum",
        gradcheck(
            |t, v| {
                let y = t.sum(v[0])?;
                t.scale(y, 0.3)
            },
            &[x],
        )?,
    ));

    let x = Tensor::randn([3, 2, 2, 3], 2.0, rng);
    let g = Tensor::randn([2], 1.0, rng);
    let b = Tensor::randn([2], 1.0, rng);
    out.push((
        "batch_norm",
        gradcheck(
            |t, v| {
                let mut state = BatchNormState::new(2);
                let y = t.batch_norm(v[0], v[1], v[2], &mut state, Mode::Train)?;
                project(t, y)
            },
            &[x, g, b],
        )?,
    ));

    let x = Tensor::randn([2, 2, 4, 6], 1.0, rng);
    out.push((
        "avg_pool",
        gradcheck(
            |t, v| {
                let y = t.avg_pool(v[0], (2, 3))?;
                project(t, y)
            },
            &[x],
        )?,
    ));

    let x = Tensor::randn([2, 3, 5], 1.0, rng);
    let w = Tensor::randn([4, 5], 0.5, rng);
    let b = Tensor::randn([4], 0.5, rng);
    out.push((
        "linear",
        gradcheck(
            |t, v| {
                let y = t.linear(v[0], v[1], Some(v[2]))?;
                project(t, y)
            },
            &[x, w, b],
        )?,
    ));

    let a = Tensor::randn([2, 3, 4], 1.0, rng);
    let b = Tensor::randn([2, 1, 4], 1.0, rng);
    out.push((
        "hadamard",
        gradcheck(
            |t, v| {
                let y = t.hadamard(v[0], v[1])?;
                project(t, y)
            },
            &[a, b],
        )?,
    ));

    let logits = Tensor::randn([4, 3], 1.0, rng);
    out.push((
        "cross_entropy",
        gradcheck(|t, v| t.cross_entropy(v[0], &[0, 2, 1, 2]), &[logits])?,
    ));
    Ok(out)
}
