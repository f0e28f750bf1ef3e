use crate::tensor::{GradResult, ImageTensor};

/// Regulariser inside the square root of the gradient so flat regions have
/// a zero (sub)gradient instead of a division by zero.
pub const TV_EPS: f64 = 1e-12;

#[inline]
fn diffs(s: &ImageTensor, y: usize, x: usize, c: usize) -> (f64, f64) {
    let v = s.at(y, x, c);
    let dv = if y + 1 < s.height() { v - s.at(y + 1, x, c) } else { 0.0 };
    let dh = if x + 1 < s.width() { v - s.at(y, x + 1, c) } else { 0.0 };
    (dv, dh)
}

/// Isotropic total variation summed over channels; neighbours past the
/// border contribute a zero difference.
pub fn tv_loss(s: &ImageTensor) -> f64 {
    let mut total = 0.0;
    for y in 0..s.height() {
        for x in 0..s.width() {
            for c in 0..s.channels() {
                let (dv, dh) = diffs(s, y, x, c);
                total += (dv * dv + dh * dh).sqrt();
            }
        }
    }
    total
}

pub fn tv_loss_grad(s: &ImageTensor) -> GradResult {
    let mut grad = s.zeros_like();
    let mut value = 0.0;
    for y in 0..s.height() {
        for x in 0..s.width() {
            for c in 0..s.channels() {
                let (dv, dh) = diffs(s, y, x, c);
                value += (dv * dv + dh * dh).sqrt();
                let r = (dv * dv + dh * dh + TV_EPS).sqrt();
                let (gv, gh) = (dv / r, dh / r);
                let i = grad.index(y, x, c);
                grad.data_mut()[i] += gv + gh;
                if y + 1 < s.height() {
                    let j = grad.index(y + 1, x, c);
                    grad.data_mut()[j] -= gv;
                }
                if x + 1 < s.width() {
                    let j = grad.index(y, x + 1, c);
                    grad.data_mut()[j] -= gh;
                }
            }
        }
    }
    GradResult { value, grad }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use crate::error::Result;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_is_zero() {
        let s = ImageTensor::filled(5, 7, 3, 0.37);
        assert_eq!(tv_loss(&s), 0.0);
        let g = tv_loss_grad(&s);
        assert_eq!(g.value, 0.0);
        assert!(g.grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_horizontal_step() {
        let s = ImageTensor::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        assert_eq!(tv_loss(&s), 1.0);
    }

    #[test]
    fn checkerboard_two_by_two() {
        // (0,0): sqrt(1+1); (0,1): vertical 1; (1,0): horizontal 1; (1,1): 0.
        let s = ImageTensor::new(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((tv_loss(&s) - (2f64.sqrt() + 2.0)).abs() <= 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let obj = |s: &ImageTensor| -> Result<GradResult> { Ok(tv_loss_grad(s)) };
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = ImageTensor::from_fn(8, 8, 3, |_, _, _| rng.random::<f64>());
            assert!(grad_check(&obj, &s, 1e-4).unwrap(), "seed {seed}");
        }
    }
}
