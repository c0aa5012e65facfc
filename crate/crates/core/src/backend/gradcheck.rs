//! Central finite differences, used as an independent oracle for the analytic gradients.

use super::data::DatasetSplit;
use super::model::{loss, Params};
use super::BackendError;

/// Step used by the gradient oracle.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for [`max_relative_error`], so coordinates whose true
/// gradient is (numerically) zero are compared absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

/// `(f(θ + h e_i) - f(θ - h e_i)) / 2h` for every coordinate `i` of `p`.
pub fn finite_diff<F>(p: &Params, h_step: f64, mut f: F) -> Result<Params, BackendError>
where
    F: FnMut(&Params) -> Result<f64, BackendError>,
{
    if !(h_step > 0.0 && h_step.is_finite()) {
        return Err(BackendError::InvalidConfig(format!(
            "finite-difference step must be positive, got {h_step}"
        )));
    }
    let mut probe = p.clone();
    let mut grad = p.clone();
    let n = p.len();
    for i in 0..n {
        let original = *coord(&mut probe, i);
        *coord(&mut probe, i) = original + h_step;
        let plus = f(&probe)?;
        *coord(&mut probe, i) = original - h_step;
        let minus = f(&probe)?;
        *coord(&mut probe, i) = original;
        *coord(&mut grad, i) = (plus - minus) / (2.0 * h_step);
    }
    Ok(grad)
}

fn coord(p: &mut Params, i: usize) -> &mut f64 {
    p.iter_mut().nth(i).expect("coordinate index in range")
}

/// Finite-difference gradient of the training objective (mean cross-entropy plus L2).
pub fn finite_diff_grad(
    p: &Params,
    batch: &DatasetSplit,
    l2: f64,
    h_step: f64,
) -> Result<Params, BackendError> {
    finite_diff(p, h_step, |q| loss(q, batch, l2))
}

/// `max_i |a_i - b_i| / max(|a_i|, |b_i|, RELATIVE_ERROR_FLOOR)`.
pub fn max_relative_error(a: &Params, b: &Params) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(RELATIVE_ERROR_FLOOR))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::model::InitScheme;

    #[test]
    fn quadratic_gradient_is_identity() {
        let p = Params::init(2, 3, 2, InitScheme::Uniform(1.0), 5);
        let g = finite_diff(&p, 1e-4, |q| Ok(0.5 * q.iter().map(|x| x * x).sum::<f64>())).unwrap();
        for (gi, pi) in g.iter().zip(p.iter()) {
            assert!((gi - pi).abs() < 1e-8, "{gi} vs {pi}");
        }
    }

    #[test]
    fn small_step_stays_finite() {
        let p = Params::init(3, 2, 3, InitScheme::Uniform(1.0), 6);
        let (train, _) = crate::backend::data::make_blobs(2, 3, 3, 1.0, 1.0, 0).unwrap();
        let g = finite_diff_grad(&p, &train, 0.0, 1e-5).unwrap();
        assert!(g.is_finite());
        assert!(g.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn rejects_non_positive_step() {
        let p = Params::zeros(1, 1, 2);
        assert!(finite_diff(&p, 0.0, |_| Ok(0.0)).is_err());
        assert!(finite_diff(&p, -1.0, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn relative_error_floor() {
        let a = Params::zeros(1, 0, 2);
        let mut b = a.clone();
        assert_eq!(max_relative_error(&a, &b), 0.0);
        b.b2[0] = 1e-12;
        assert!(max_relative_error(&a, &b) <= 1e-4);
        b.b2[0] = 1.0;
        assert_eq!(max_relative_error(&a, &b), 1.0);
    }
}
