//! Forward/adjoint contracts and the finite-difference gradient check.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{GradResult, ImageTensor};

/// A scalar function of one image with an analytic gradient.
pub trait Objective {
    fn value(&self, input: &ImageTensor) -> Result<f64>;
    fn value_and_grad(&self, input: &ImageTensor) -> Result<GradResult>;
}

/// An image-to-image map with a vector-Jacobian product.
pub trait ImageOp {
    fn forward(&self, input: &ImageTensor) -> Result<ImageTensor>;
    fn adjoint(&self, input: &ImageTensor, upstream: &ImageTensor) -> Result<ImageTensor>;
}

/// Turns an [`ImageOp`] into a scalar objective `sum(weights * op(x))`.
pub struct Projected<O> {
    pub op: O,
    pub weights: ImageTensor,
}

impl<O: ImageOp> Projected<O> {
    /// Draws projection weights uniformly from [-1, 1] for the given output shape.
    pub fn random(op: O, out_shape: (usize, usize, usize), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, c) = out_shape;
        let weights = ImageTensor::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..=1.0));
        Self { op, weights }
    }
}

impl<O: ImageOp> Objective for Projected<O> {
    fn value(&self, input: &ImageTensor) -> Result<f64> {
        let out = self.op.forward(input)?;
        out.ensure_same_shape(&self.weights, "projection weights")?;
        Ok(out.data().iter().zip(self.weights.data()).map(|(a, b)| a * b).sum())
    }

    fn value_and_grad(&self, input: &ImageTensor) -> Result<GradResult> {
        let value = self.value(input)?;
        let grad = self.op.adjoint(input, &self.weights)?;
        Ok(GradResult { value, grad })
    }
}

impl<F> Objective for F
where
    F: Fn(&ImageTensor) -> Result<GradResult>,
{
    fn value(&self, input: &ImageTensor) -> Result<f64> {
        Ok(self(input)?.value)
    }

    fn value_and_grad(&self, input: &ImageTensor) -> Result<GradResult> {
        self(input)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

pub const FD_STEP: f64 = 1e-4;
pub const MIN_COORDS: usize = 64;

/// Compares the analytic gradient against central differences on a random
/// subset of coordinates (all of them when the input has fewer than
/// `coords`).
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, floor)` where
/// `floor = 1e-3 * max|n| + 1e-12` over the checked set, so entries that are
/// numerically zero compared to the gradient's scale are judged absolutely.
pub fn grad_check_report(
    objective: &dyn Objective,
    input: &ImageTensor,
    coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let analytic = objective.value_and_grad(input)?;
    if !analytic.value.is_finite() {
        return Err(Error::Evaluation("non-finite forward value".into()));
    }
    analytic.grad.ensure_same_shape(input, "gradient")?;
    let n = input.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<usize> = if coords >= n {
        (0..n).collect()
    } else {
        sample(&mut rng, n, coords).into_vec()
    };

    let mut numeric = Vec::with_capacity(picked.len());
    let mut probe = input.clone();
    for &i in &picked {
        let x = input.data()[i];
        let h = FD_STEP * x.abs().max(1.0);
        probe.data_mut()[i] = x + h;
        let fp = objective.value(&probe)?;
        probe.data_mut()[i] = x - h;
        let fm = objective.value(&probe)?;
        probe.data_mut()[i] = x;
        if !(fp.is_finite() && fm.is_finite()) {
            return Err(Error::Evaluation(format!(
                "non-finite forward value at coordinate {i}"
            )));
        }
        numeric.push((fp - fm) / (2.0 * h));
    }

    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-3 * scale + 1e-12;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: picked.first().copied().unwrap_or(0),
        coords_checked: picked.len(),
    };
    for (&i, &num) in picked.iter().zip(&numeric) {
        let a = analytic.grad.data()[i];
        let err = (a - num).abs() / a.abs().max(num.abs()).max(floor);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// `true` iff the gradient agrees with central differences within `tolerance`.
pub fn grad_check(objective: &dyn Objective, input: &ImageTensor, tolerance: f64) -> Result<bool> {
    Ok(grad_check_report(objective, input, MIN_COORDS, 0x5eed)?.passed(tolerance))
}
