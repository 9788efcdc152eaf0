//! Central finite-difference gradient verification.
//!
//! The numeric side only evaluates forward passes on no-grad tapes, so it is
//! independent of the adjoint code it checks.

use crate::error::{Result, TensorError};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Magnitudes below this are compared in absolute rather than relative terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst relative error per input, in input order.
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Number of scalar entries compared.
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Compares the tape gradient of the scalar `f(inputs)` with central
/// differences for every entry of every input.
pub fn check_gradients<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    check_gradients_strided(inputs, step, 1, f)
}

/// Like [`check_gradients`] but only probes every `stride`-th entry of each
/// input (always including the first).
pub fn check_gradients_strided<F>(
    inputs: &[Tensor],
    step: f64,
    stride: usize,
    f: F,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let stride = stride.max(1);
    let tracked: Vec<Tensor> = inputs
        .iter()
        .map(|t| t.detached().with_requires_grad(true))
        .collect();

    let tape = Tape::new();
    let vars = tape.bind(&tracked);
    let loss = f(&tape, &vars)?;
    tape.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&tracked)
        .map(|(v, t)| tape.grad(v).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let eval = |probe: &[Tensor]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars = tape.bind(probe);
        let out = f(&tape, &vars)?;
        if out.value().numel() != 1 {
            return Err(TensorError::Contract(
                "gradient check needs a scalar output".into(),
            ));
        }
        Ok(out.item())
    };

    let mut probe = tracked.clone();
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut max_abs: f64 = 0.0;
    let mut checked = 0;
    for (idx, grads) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in (0..grads.len()).step_by(stride) {
            let original = probe[idx].data()[j];
            probe[idx].data_mut()[j] = original + step;
            let plus = eval(&probe)?;
            probe[idx].data_mut()[j] = original - step;
            let minus = eval(&probe)?;
            probe[idx].data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(grads[j], numeric));
            max_abs = max_abs.max((grads[j] - numeric).abs());
            checked += 1;
        }
        per_input.push(worst);
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_input,
        max_rel_error,
        max_abs_error: max_abs,
        checked,
    })
}

/// One named entry of [`primitive_suite`].
#[derive(Clone, Debug)]
pub struct NamedCheck {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn random_tensor(rng: &mut impl rand::Rng, shape: &[usize]) -> Tensor {
    let numel = shape.iter().product();
    let data = (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

/// Values bounded away from zero so ReLU kinks stay out of the stencil.
fn kink_free_tensor(rng: &mut impl rand::Rng, shape: &[usize]) -> Tensor {
    let mut t = random_tensor(rng, shape);
    for v in t.data_mut() {
        *v = v.signum() * (0.1 + v.abs());
    }
    t
}

/// Projects `out` onto fixed random weights so every output entry feeds the
/// scalar loss with a distinct coefficient.
fn project<'t>(out: &Var<'t>, weights: &Tensor) -> Result<Var<'t>> {
    let w = out.tape().constant(weights.reshape(out.shape().to_vec())?);
    Ok(out.mul(&w)?.sum())
}

/// Gradient checks for every differentiable primitive, on random inputs
/// drawn from `seed`.
pub fn primitive_suite(seed: u64) -> Result<Vec<NamedCheck>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let h = DEFAULT_STEP;
    let mut checks = Vec::new();
    let mut push = |name, report| checks.push(NamedCheck { name, report });

    let (a, b) = (
        random_tensor(&mut rng, &[3, 4]),
        random_tensor(&mut rng, &[4, 2]),
    );
    let w = random_tensor(&mut rng, &[3, 2]);
    push(
        "matmul",
        check_gradients(&[a, b], h, |_, v| project(&v[0].matmul(&v[1])?, &w))?,
    );

    let x = random_tensor(&mut rng, &[3, 5]);
    let w = random_tensor(&mut rng, &[5, 3]);
    push(
        "transpose",
        check_gradients(&[x], h, |_, v| project(&v[0].transpose()?, &w))?,
    );

    let (x, bias) = (
        random_tensor(&mut rng, &[4, 3]),
        random_tensor(&mut rng, &[3]),
    );
    let w = random_tensor(&mut rng, &[4, 3]);
    push(
        "add",
        check_gradients(&[x, bias], h, |_, v| project(&v[0].add(&v[1])?, &w))?,
    );

    let (x, y) = (
        random_tensor(&mut rng, &[2, 3]),
        random_tensor(&mut rng, &[2, 3]),
    );
    let w = random_tensor(&mut rng, &[2, 3]);
    push(
        "mul",
        check_gradients(&[x, y], h, |_, v| project(&v[0].mul(&v[1])?, &w))?,
    );

    let x = random_tensor(&mut rng, &[5]);
    let w = random_tensor(&mut rng, &[5]);
    push(
        "scale",
        check_gradients(&[x], h, |_, v| project(&v[0].scale(-1.7), &w))?,
    );

    let x = kink_free_tensor(&mut rng, &[3, 4]);
    let w = random_tensor(&mut rng, &[3, 4]);
    push(
        "relu",
        check_gradients(&[x], h, |_, v| project(&v[0].relu(), &w))?,
    );

    for (name, axis) in [("softmax(axis=0)", 0), ("softmax(axis=1)", 1)] {
        let x = random_tensor(&mut rng, &[3, 5]);
        let w = random_tensor(&mut rng, &[3, 5]);
        push(
            name,
            check_gradients(&[x], h, |_, v| project(&v[0].softmax(axis)?, &w))?,
        );
    }

    let x = random_tensor(&mut rng, &[3, 6]);
    let gain = random_tensor(&mut rng, &[6]);
    let beta = random_tensor(&mut rng, &[6]);
    let w = random_tensor(&mut rng, &[3, 6]);
    push(
        "layer_norm",
        check_gradients(&[x, gain, beta], h, |_, v| {
            project(&v[0].layer_norm(&v[1], &v[2], 1e-5)?, &w)
        })?,
    );

    for (name, axis) in [("mean(axis=0)", 0), ("mean(axis=1)", 1)] {
        let x = random_tensor(&mut rng, &[4, 3]);
        let w = random_tensor(&mut rng, &[if axis == 0 { 3 } else { 4 }]);
        push(
            name,
            check_gradients(&[x], h, |_, v| project(&v[0].mean(axis)?, &w))?,
        );
    }
    for (name, axis) in [("std(axis=0)", 0), ("std(axis=1)", 1)] {
        let x = random_tensor(&mut rng, &[6, 3]);
        let w = random_tensor(&mut rng, &[if axis == 0 { 3 } else { 6 }]);
        push(
            name,
            check_gradients(&[x], h, |_, v| project(&v[0].std(axis)?, &w))?,
        );
    }

    for (name, stride, padding) in [
        ("conv1d(stride=1,pad=1)", 1, 1),
        ("conv1d(stride=2,pad=0)", 2, 0),
    ] {
        let x = random_tensor(&mut rng, &[9, 3]);
        let k = random_tensor(&mut rng, &[3, 3, 2]);
        let t_out = (9 + 2 * padding - 3) / stride + 1;
        let w = random_tensor(&mut rng, &[t_out, 2]);
        push(
            name,
            check_gradients(&[x, k], h, |_, v| {
                project(&v[0].conv1d(&v[1], stride, padding)?, &w)
            })?,
        );
    }

    let (x, y) = (
        random_tensor(&mut rng, &[2, 3]),
        random_tensor(&mut rng, &[2, 2]),
    );
    let w = random_tensor(&mut rng, &[2, 5]);
    push(
        "concat",
        check_gradients(&[x, y], h, |_, v| {
            project(&crate::ops::concat(&v[..2], 1)?, &w)
        })?,
    );

    let x = random_tensor(&mut rng, &[3, 6]);
    let w = random_tensor(&mut rng, &[3, 2]);
    push(
        "narrow",
        check_gradients(&[x], h, |_, v| project(&v[0].narrow(1, 2, 2)?, &w))?,
    );

    let x = random_tensor(&mut rng, &[2, 3]);
    let w = random_tensor(&mut rng, &[6]);
    push(
        "reshape",
        check_gradients(&[x], h, |_, v| project(&v[0].reshape(vec![6])?, &w))?,
    );

    let x = random_tensor(&mut rng, &[2, 2]);
    push(
        "sum",
        check_gradients(&[x], h, |_, v| Ok(v[0].mul(&v[0])?.sum()))?,
    );

    let x = random_tensor(&mut rng, &[4, 4]);
    let w = random_tensor(&mut rng, &[4, 4]);
    push(
        "dropout(rate=0.3)",
        check_gradients(&[x], h, |_, v| {
            use rand::SeedableRng;
            let mut mask_rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xd0);
            project(&v[0].dropout(0.3, true, &mut mask_rng)?, &w)
        })?,
    );

    let x = random_tensor(&mut rng, &[5]).reshape(vec![1, 5])?;
    push(
        "cross_entropy",
        check_gradients(&[x], h, |_, v| v[0].cross_entropy(2))?,
    );

    Ok(checks)
}
