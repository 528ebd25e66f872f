//! Smooth-L1 loss with mean reduction: quadratic within `beta` of the
//! target, linear outside, matching the convention where the two regimes
//! meet with continuous value and gradient.

use nalgebra::DMatrix;

/// Mean-reduced smooth-L1: per element, `0.5·d²/beta` for `|d| < beta`,
/// `|d| − 0.5·beta` otherwise, averaged over all elements.
pub fn smooth_l1(prediction: &DMatrix<f64>, target: &DMatrix<f64>, beta: f64) -> f64 {
    debug_assert_eq!(prediction.shape(), target.shape());
    debug_assert!(beta > 0.0);
    let mut total = 0.0;
    for (p, t) in prediction.iter().zip(target.iter()) {
        let d = (p - t).abs();
        total += if d < beta {
            0.5 * d * d / beta
        } else {
            d - 0.5 * beta
        };
    }
    total / prediction.len() as f64
}

/// Gradient of [`smooth_l1`] with respect to the prediction.
pub fn smooth_l1_grad(prediction: &DMatrix<f64>, target: &DMatrix<f64>, beta: f64) -> DMatrix<f64> {
    debug_assert_eq!(prediction.shape(), target.shape());
    let scale = 1.0 / prediction.len() as f64;
    let mut grad = prediction - target;
    for g in grad.iter_mut() {
        *g = if g.abs() < beta {
            *g / beta * scale
        } else {
            g.signum() * scale
        };
    }
    grad
}
