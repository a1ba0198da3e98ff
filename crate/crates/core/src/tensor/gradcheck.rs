use super::{grad, no_grad, Tensor, TensorError};
use crate::Scalar;

/// Largest relative disagreement between the analytic gradient of `f` at `x`
/// and a central finite difference with step `eps`:
/// `max_i |analytic_i - numeric_i| / (|numeric_i| + 1e-12)`.
///
/// `f` must be scalar-valued and smooth around `x`.
pub fn grad_check<T, E, F>(f: F, x: &Tensor<T>, eps: T) -> Result<T, E>
where
    T: Scalar,
    E: From<TensorError>,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>, E>,
{
    let xp = x.detach_param();
    let y = f(&xp)?;
    let analytic = grad(&y, &[xp], false)?.remove(0);
    let base = x.to_vec();
    let shape = x.shape().to_vec();
    let eval = |data: Vec<T>| -> Result<T, E> {
        let t = Tensor::new(data, shape.clone())?;
        Ok(no_grad(|| f(&t))?.item())
    };
    let two = T::lit(2.0);
    let floor = T::lit(1e-12);
    let mut worst = T::zero();
    for (i, &a) in analytic.data().iter().enumerate() {
        let mut plus = base.clone();
        plus[i] = plus[i] + eps;
        let mut minus = base.clone();
        minus[i] = minus[i] - eps;
        let numeric = (eval(plus)? - eval(minus)?) / (two * eps);
        let rel = (a - numeric).abs() / (numeric.abs() + floor);
        if rel > worst || rel.is_nan() {
            worst = rel;
        }
    }
    Ok(worst)
}
