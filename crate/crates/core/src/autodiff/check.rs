//! Finite-difference and inner-product checks for primitives.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Value};

/// Central-difference gradient check of a scalar function.
///
/// `f` returns `(value, gradient)`; the gradient is compared coordinate-wise
/// against `(f(x + eps e_i) - f(x - eps e_i)) / 2eps`, each error divided by
/// `max(1, |analytic|)`. Complex inputs perturb the real and imaginary parts
/// separately. Returns the maximum relative error.
pub fn grad_check<T, F>(mut f: F, x: &Value<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: FnMut(&Value<T>) -> Result<(T, Value<T>)>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    let (v0, grad) = f(x)?;
    if !v0.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite("grad_check".into()));
    }
    if grad.shape() != x.shape() {
        return Err(Error::shape(format!(
            "gradient {:?} for input {:?}",
            grad.shape(),
            x.shape()
        )));
    }
    let coords = flatten(&grad);
    let mut worst = 0.0f64;
    for (i, analytic) in coords.iter().enumerate() {
        let plus = f(&perturb(x, i, eps))?.0.f64();
        let minus = f(&perturb(x, i, -eps))?.0.f64();
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("grad_check".into()));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic - numeric).abs() / analytic.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Real coordinates in the order used by [`perturb`]: real tensors
/// elementwise, complex tensors as `re, im` pairs.
fn flatten<T: Scalar>(v: &Value<T>) -> Vec<f64> {
    match v {
        Value::Real(t) => t.data().iter().map(|x| x.f64()).collect(),
        Value::Complex(t) => t.data().iter().flat_map(|c| [c.re.f64(), c.im.f64()]).collect(),
    }
}

fn perturb<T: Scalar>(x: &Value<T>, i: usize, eps: f64) -> Value<T> {
    let mut y = x.clone();
    let e = T::c(eps);
    match &mut y {
        Value::Real(t) => t.data_mut()[i] = t.data()[i] + e,
        Value::Complex(t) => {
            let c = &mut t.data_mut()[i / 2];
            if i % 2 == 0 {
                c.re = c.re + e;
            } else {
                c.im = c.im + e;
            }
        }
    }
    y
}

/// `|<A x, y> - <x, A* y>| / (|x| |y|)` on the real inner product.
/// Note the normalization uses `x` and `y` (not `Ax`); for an isometry both agree.
pub fn adjoint_check<T, A, B>(apply: A, adjoint: B, x: &Value<T>, y: &Value<T>) -> Result<f64>
where
    T: Scalar,
    A: FnOnce(&Value<T>) -> Result<Value<T>>,
    B: FnOnce(&Value<T>) -> Result<Value<T>>,
{
    let ax = apply(x)?;
    let aty = adjoint(y)?;
    let lhs = ax.inner(y)?.f64();
    let rhs = x.inner(&aty)?.f64();
    let denom = x.norm().f64() * y.norm().f64();
    if denom == 0.0 {
        return Ok((lhs - rhs).abs());
    }
    Ok((lhs - rhs).abs() / denom)
}

/// Adjoint check of a recorded primitive, using its own backward rule as `A*`.
pub fn primitive_adjoint_check<T: Scalar>(
    op: &dyn super::Primitive<T>,
    x: &Value<T>,
    y: &Value<T>,
) -> Result<f64> {
    let out = op.forward(&[x])?;
    adjoint_check(
        |_| Ok(out.clone()),
        |y| {
            op.backward(&[x], &out, y)?
                .into_iter()
                .next()
                .flatten()
                .ok_or_else(|| Error::invalid("primitive produced no input gradient"))
        },
        x,
        y,
    )
}

/// Convenience for scalar real functions of a real tensor.
pub fn grad_check_real<T, F>(mut f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: FnMut(&Tensor<T>) -> Result<(T, Tensor<T>)>,
{
    grad_check(
        |v| {
            let (val, g) = f(v.as_real()?)?;
            Ok((val, g.into()))
        },
        &x.clone().into(),
        eps,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        let x = Tensor::<f64>::scalar(3.0);
        let err = grad_check_real(|x| {
            let v = x.data()[0];
            Ok((v * v, Tensor::scalar(2.0 * v)))
        }, &x, 1e-5)
        .unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn identity_adjoint_residual_is_zero() {
        let x: Value<f64> = Tensor::from_f64(&[3], &[1.0, -2.0, 0.5]).unwrap().into();
        let y: Value<f64> = Tensor::from_f64(&[3], &[0.3, 4.0, -1.0]).unwrap().into();
        let r = adjoint_check(|v| Ok(v.clone()), |v| Ok(v.clone()), &x, &y).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let x = Tensor::<f64>::scalar(3.0);
        let err = grad_check_real(|x| {
            let v = x.data()[0];
            Ok((v * v, Tensor::scalar(v)))
        }, &x, 1e-5)
        .unwrap();
        assert!(err > 0.4);
    }
}
