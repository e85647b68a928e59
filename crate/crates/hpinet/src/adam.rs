use crate::error::{HpiError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-parameter Adam accumulator with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(dims: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(dims),
            v: Tensor::zeros(dims),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update: moments decay, bias-corrected step, `t` incremented.
pub fn adam_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if param.dims() != grad.dims() || param.dims() != state.m.dims() || param.dims() != state.v.dims() {
        return Err(HpiError::Shape(format!(
            "adam_step dims: param {:?}, grad {:?}, m {:?}, v {:?}",
            param.dims(),
            grad.dims(),
            state.m.dims(),
            state.v.dims()
        )));
    }
    state.t += 1;
    let b1 = T::from_f64(state.beta1);
    let b2 = T::from_f64(state.beta2);
    let one = T::one();
    let bc1 = T::from_f64(1.0 - state.beta1.powi(state.t as i32));
    let bc2 = T::from_f64(1.0 - state.beta2.powi(state.t as i32));
    let eps = T::from_f64(state.eps);
    let lr_t = T::from_f64(lr);

    let (p, m, v) = (param.data_mut(), state.m.data_mut(), state.v.data_mut());
    let g = grad.data();
    for i in 0..p.len() {
        m[i] = b1 * m[i] + (one - b1) * g[i];
        v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] = p[i] - lr_t * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
