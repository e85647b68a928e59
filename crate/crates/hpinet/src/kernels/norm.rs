use crate::parallel::for_each_chunk;
use crate::scalar::Scalar;

/// Softmax along `axis`, with the lane max subtracted before exponentiation
/// so arbitrarily large finite inputs cannot overflow.
pub fn softmax<T: Scalar>(x: &[T], dims: &[usize], axis: usize, out: &mut [T]) {
    let len = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let block = len * inner;
    for_each_chunk(out, block, |o, chunk| {
        let xb = &x[o * block..(o + 1) * block];
        for i in 0..inner {
            let mut mx = T::neg_infinity();
            for j in 0..len {
                let v = xb[j * inner + i];
                if v > mx {
                    mx = v;
                }
            }
            let mut sum = T::zero();
            for j in 0..len {
                let e = (xb[j * inner + i] - mx).exp();
                chunk[j * inner + i] = e;
                sum += e;
            }
            for j in 0..len {
                chunk[j * inner + i] = chunk[j * inner + i] / sum;
            }
        }
    });
}

/// Backward of softmax given its output `y` (accumulating):
/// dx += y ∘ (g − Σ g∘y) per lane.
pub fn softmax_backward<T: Scalar>(y: &[T], g: &[T], dims: &[usize], axis: usize, out: &mut [T]) {
    let len = dims[axis];
    let inner: usize = dims[axis + 1..].iter().product();
    let block = len * inner;
    for_each_chunk(out, block, |o, chunk| {
        let yb = &y[o * block..(o + 1) * block];
        let gb = &g[o * block..(o + 1) * block];
        for i in 0..inner {
            let mut dot = T::zero();
            for j in 0..len {
                dot += gb[j * inner + i] * yb[j * inner + i];
            }
            for j in 0..len {
                let idx = j * inner + i;
                chunk[idx] += yb[idx] * (gb[idx] - dot);
            }
        }
    });
}

/// Layer normalization over the last dimension followed by the affine map
/// `gamma * xhat + beta`.
pub fn layer_norm<T: Scalar>(x: &[T], gamma: &[T], beta: &[T], eps: f64, out: &mut [T]) {
    let c = gamma.len();
    debug_assert_eq!(beta.len(), c);
    debug_assert_eq!(x.len() % c, 0);
    let epst = T::from_f64(eps);
    let inv_c = T::one() / T::from_f64(c as f64);
    for_each_chunk(out, c, |r, row| {
        let xr = &x[r * c..(r + 1) * c];
        let mut mean = T::zero();
        for &v in xr {
            mean += v;
        }
        mean = mean * inv_c;
        let mut var = T::zero();
        for &v in xr {
            let d = v - mean;
            var += d * d;
        }
        var = var * inv_c;
        let rstd = T::one() / (var + epst).sqrt();
        for j in 0..c {
            row[j] = (xr[j] - mean) * rstd * gamma[j] + beta[j];
        }
    });
}

/// Backward of `layer_norm` (accumulating into dx, dgamma, dbeta).
pub fn layer_norm_backward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    eps: f64,
    g: &[T],
    dx: &mut [T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) {
    let c = gamma.len();
    let rows = x.len() / c;
    let epst = T::from_f64(eps);
    let inv_c = T::one() / T::from_f64(c as f64);

    // per-row mean and reciprocal std, computed once
    let mut mean = vec![T::zero(); rows];
    let mut rstd = vec![T::zero(); rows];
    for_each_chunk(&mut mean, 1, |r, m| {
        let xr = &x[r * c..(r + 1) * c];
        let mut s = T::zero();
        for &v in xr {
            s += v;
        }
        m[0] = s * inv_c;
    });
    {
        let mean_ref = &mean;
        for_each_chunk(&mut rstd, 1, |r, o| {
            let xr = &x[r * c..(r + 1) * c];
            let mut var = T::zero();
            for &v in xr {
                let d = v - mean_ref[r];
                var += d * d;
            }
            o[0] = T::one() / (var * inv_c + epst).sqrt();
        });
    }

    // dx = rstd * (h − mean(h) − xhat * mean(h ∘ xhat)), h = g ∘ gamma
    {
        let (mean_ref, rstd_ref) = (&mean, &rstd);
        for_each_chunk(dx, c, |r, row| {
            let xr = &x[r * c..(r + 1) * c];
            let gr = &g[r * c..(r + 1) * c];
            let (mu, rs) = (mean_ref[r], rstd_ref[r]);
            let mut h_mean = T::zero();
            let mut hx_mean = T::zero();
            for j in 0..c {
                let h = gr[j] * gamma[j];
                let xhat = (xr[j] - mu) * rs;
                h_mean += h;
                hx_mean += h * xhat;
            }
            h_mean = h_mean * inv_c;
            hx_mean = hx_mean * inv_c;
            for j in 0..c {
                let h = gr[j] * gamma[j];
                let xhat = (xr[j] - mu) * rs;
                row[j] += rs * (h - h_mean - xhat * hx_mean);
            }
        });
    }

    // column-gathered parameter gradients (deterministic: rows summed in order)
    {
        let (mean_ref, rstd_ref) = (&mean, &rstd);
        for_each_chunk(dgamma, 1, |j, o| {
            let mut acc = T::zero();
            for r in 0..rows {
                let xhat = (x[r * c + j] - mean_ref[r]) * rstd_ref[r];
                acc += g[r * c + j] * xhat;
            }
            o[0] += acc;
        });
    }
    for_each_chunk(dbeta, 1, |j, o| {
        let mut acc = T::zero();
        for r in 0..rows {
            acc += g[r * c + j];
        }
        o[0] += acc;
    });
}

const FRAC_1_SQRT_2PI: f64 = 0.39894228040143267794;

/// Exact (erf-based) GELU: x·Φ(x).
pub fn gelu<T: Scalar>(x: &[T], out: &mut [T]) {
    let s = super::dense::chunk_of(x.len());
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    for_each_chunk(out, s, |i, c| {
        for (j, o) in c.iter_mut().enumerate() {
            let v = x[i * s + j];
            *o = v * half * (T::one() + (v * inv_sqrt2).erf_s());
        }
    });
}

/// dGELU/dx = Φ(x) + x·φ(x), accumulated into `out`.
pub fn gelu_backward<T: Scalar>(x: &[T], g: &[T], out: &mut [T]) {
    let s = super::dense::chunk_of(x.len());
    let half = T::from_f64(0.5);
    let inv_sqrt2 = T::from_f64(std::f64::consts::FRAC_1_SQRT_2);
    let pdf_c = T::from_f64(FRAC_1_SQRT_2PI);
    for_each_chunk(out, s, |i, c| {
        for (j, o) in c.iter_mut().enumerate() {
            let idx = i * s + j;
            let v = x[idx];
            let cdf = half * (T::one() + (v * inv_sqrt2).erf_s());
            let pdf = pdf_c * (-(v * v) * half).exp();
            *o += g[idx] * (cdf + v * pdf);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry() {
        let x = [0.0f32, 0.0];
        let mut out = [0.0f32; 2];
        softmax(&x, &[2], 0, &mut out);
        assert_eq!(out, [0.5, 0.5]);
    }

    #[test]
    fn softmax_large_inputs_stay_finite() {
        let x = [1000.0f32, 0.0];
        let mut out = [0.0f32; 2];
        softmax(&x, &[2], 0, &mut out);
        assert!(out.iter().all(|v| v.is_finite()));
        assert!((out[0] - 1.0).abs() < 1e-6);
        assert!(out[1].abs() < 1e-6);
    }

    #[test]
    fn softmax_matches_formula_oracle() {
        let x = [1.0f32, 2.0, 3.0];
        let mut out = [0.0f32; 3];
        softmax(&x, &[3], 0, &mut out);
        let z: f64 = x.iter().map(|&v| (v as f64).exp()).sum();
        for i in 0..3 {
            assert!(((out[i] as f64) - (x[i] as f64).exp() / z).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_middle_axis() {
        // dims [2,3,2], axis 1: sums along j must be 1 for each (o,i)
        let x: Vec<f32> = (0..12).map(|i| (i as f32).sin()).collect();
        let mut out = vec![0.0f32; 12];
        softmax(&x, &[2, 3, 2], 1, &mut out);
        for o in 0..2 {
            for i in 0..2 {
                let s: f32 = (0..3).map(|j| out[o * 6 + j * 2 + i]).sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn layer_norm_two_point() {
        let x = [1.0f32, 3.0];
        let gamma = [1.0f32, 1.0];
        let beta = [0.0f32, 0.0];
        let mut out = [0.0f32; 2];
        layer_norm(&x, &gamma, &beta, 0.0, &mut out);
        assert!((out[0] + 1.0).abs() < 1e-6);
        assert!((out[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layer_norm_constant_maps_to_beta() {
        let x = [7.5f32; 4];
        let gamma = [2.0f32; 4];
        let beta = [0.25f32, -0.5, 0.0, 1.0];
        let mut out = [0.0f32; 4];
        layer_norm(&x, &gamma, &beta, 1e-5, &mut out);
        for j in 0..4 {
            assert!((out[j] - beta[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_matches_direct_formula() {
        let x = [0.0f32, 2.0, 4.0];
        let gamma = [1.0f32; 3];
        let beta = [0.0f32; 3];
        let eps = 1e-5f64;
        let mut out = [0.0f32; 3];
        layer_norm(&x, &gamma, &beta, eps, &mut out);
        let mean = 2.0f64;
        let var = ((0.0 - mean).powi(2) + (2.0 - mean).powi(2) + (4.0 - mean).powi(2)) / 3.0;
        for j in 0..3 {
            let want = (x[j] as f64 - mean) / (var + eps).sqrt();
            assert!((out[j] as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn gelu_known_values() {
        let x = [0.0f32, 10.0, 1.0];
        let mut out = [0.0f32; 3];
        gelu(&x, &mut out);
        assert_eq!(out[0], 0.0);
        assert!((out[1] - 10.0).abs() < 1e-4);
        assert!((out[2] - 0.841345).abs() < 1e-5);
    }
}
