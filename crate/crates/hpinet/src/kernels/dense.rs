use crate::parallel::for_each_chunk;
use crate::scalar::Scalar;

/// C[m,n] = A[m,k] · B[k,n]
pub fn matmul_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for_each_chunk(out, n, |i, row| {
        let ar = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (p, &av) in ar.iter().enumerate() {
                acc += av * b[p * n + j];
            }
            *o = acc;
        }
    });
}

/// C[m,n] += A[m,k] · B[n,k]ᵀ (accumulating; used on the backward path)
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for_each_chunk(out, n, |i, row| {
        let ar = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let br = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for p in 0..k {
                acc += ar[p] * br[p];
            }
            *o += acc;
        }
    });
}

/// C[m,n] += A[k,m]ᵀ · B[k,n] (accumulating; used on the backward path)
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for_each_chunk(out, n, |i, row| {
        for (j, o) in row.iter_mut().enumerate() {
            let mut acc = T::zero();
            for p in 0..k {
                acc += a[p * m + i] * b[p * n + j];
            }
            *o += acc;
        }
    });
}

/// Batched matrix product: C[b,m,n] = A[b,m,k] · B[b,k,n] per batch index.
pub fn bmm_nn<T: Scalar>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), batch * m * n);
    for_each_chunk(out, m * n, |i, c| {
        matmul_chunk_nn(&a[i * m * k..(i + 1) * m * k], &b[i * k * n..(i + 1) * k * n], m, k, n, c);
    });
}

// Sequential inner matmul used inside an already-parallel batch chunk.
fn matmul_chunk_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = T::zero();
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
}

pub fn bmm_nt<T: Scalar>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), batch * m * n);
    for_each_chunk(out, m * n, |bi, c| {
        let ab = &a[bi * m * k..(bi + 1) * m * k];
        let bb = &b[bi * n * k..(bi + 1) * n * k];
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..k {
                    acc += ab[i * k + p] * bb[j * k + p];
                }
                c[i * n + j] += acc;
            }
        }
    });
}

pub fn bmm_tn<T: Scalar>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), batch * m * n);
    for_each_chunk(out, m * n, |bi, c| {
        let ab = &a[bi * k * m..(bi + 1) * k * m];
        let bb = &b[bi * k * n..(bi + 1) * k * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..k {
                    acc += ab[p * m + i] * bb[p * n + j];
                }
                c[i * n + j] += acc;
            }
        }
    });
}

/// out[r, c] = x[r, c] + bias[c], broadcasting over all leading dims.
pub fn bias_add<T: Scalar>(x: &[T], bias: &[T], out: &mut [T]) {
    let c = bias.len();
    debug_assert_eq!(x.len() % c, 0);
    for_each_chunk(out, c, |i, row| {
        let xr = &x[i * c..(i + 1) * c];
        for j in 0..c {
            row[j] = xr[j] + bias[j];
        }
    });
}

/// Gradient of the bias in `bias_add` (accumulating): column sums over all
/// leading dims.
pub fn bias_grad<T: Scalar>(g: &[T], c: usize, out: &mut [T]) {
    debug_assert_eq!(g.len() % c, 0);
    let rows = g.len() / c;
    for_each_chunk(out, 1, |j, o| {
        let mut acc = T::zero();
        for r in 0..rows {
            acc += g[r * c + j];
        }
        o[0] += acc;
    });
}

/// out[i] += src[i] * factor  (gradient plumbing for add/scale/reshape ops)
pub fn acc_scaled<T: Scalar>(src: &[T], factor: T, out: &mut [T]) {
    debug_assert_eq!(src.len(), out.len());
    let s = chunk_of(out.len());
    for_each_chunk(out, s, |i, c| {
        for (j, o) in c.iter_mut().enumerate() {
            *o += src[i * s + j] * factor;
        }
    });
}

pub fn add<T: Scalar>(a: &[T], b: &[T], out: &mut [T]) {
    debug_assert_eq!(a.len(), b.len());
    let s = chunk_of(a.len());
    for_each_chunk(out, s, |i, c| {
        for (j, o) in c.iter_mut().enumerate() {
            let idx = i * s + j;
            *o = a[idx] + b[idx];
        }
    });
}

pub fn scale<T: Scalar>(a: &[T], factor: T, out: &mut [T]) {
    let s = chunk_of(a.len());
    for_each_chunk(out, s, |i, c| {
        for (j, o) in c.iter_mut().enumerate() {
            *o = a[i * s + j] * factor;
        }
    });
}

/// Elementwise chunk size: a divisor of `n` good enough for parallel split.
pub(crate) fn chunk_of(n: usize) -> usize {
    if n == 0 {
        return 1;
    }
    // favour ~4k chunks; fall back to whole buffer when n is prime-ish
    for cand in [4096usize, 1024, 256, 64, 16, 4, 2] {
        if n % cand == 0 {
            return cand;
        }
    }
    n
}
