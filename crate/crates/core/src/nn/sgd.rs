use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::scalar::{lit, Scalar};

/// One SGD-with-momentum step: `v <- momentum * v - lr * g`, `p <- p + v`.
pub fn sgd_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    velocity: &mut ParamSet<T>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(velocity) {
        return Err(Error::ShapeMismatch {
            expected: "gradients and velocity shaped like the parameters".into(),
            found: "different tensor layout".into(),
        });
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradients"));
    }
    let (lr, momentum) = (lit::<T>(lr), lit::<T>(momentum));
    for ((p, g), v) in params.tensors.iter_mut().zip(&grads.tensors).zip(&mut velocity.tensors) {
        for ((p, &g), v) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
            *v = momentum * *v - lr * g;
            *p += *v;
        }
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("parameters after update"));
    }
    Ok(())
}
