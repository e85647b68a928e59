use crate::parallel::for_each_chunk;
use crate::scalar::Scalar;

/// 3x3 cross-correlation with zero padding 1, so spatial dims are preserved.
///
/// `x`: [c_in, h, w], `w`: [c_out, c_in, 3, 3], `b`: [c_out],
/// `out`: [c_out, h, w].
pub fn conv3x3<T: Scalar>(
    x: &[T],
    w: &[T],
    b: &[T],
    c_in: usize,
    c_out: usize,
    h: usize,
    wd: usize,
    out: &mut [T],
) {
    debug_assert_eq!(x.len(), c_in * h * wd);
    debug_assert_eq!(w.len(), c_out * c_in * 9);
    debug_assert_eq!(b.len(), c_out);
    debug_assert_eq!(out.len(), c_out * h * wd);
    for_each_chunk(out, h * wd, |co, plane| {
        let wbase = co * c_in * 9;
        for y in 0..h {
            for xo in 0..wd {
                let mut acc = b[co];
                for ci in 0..c_in {
                    let xplane = &x[ci * h * wd..(ci + 1) * h * wd];
                    let kbase = wbase + ci * 9;
                    for ky in 0..3usize {
                        let yy = y as isize + ky as isize - 1;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let xx = xo as isize + kx as isize - 1;
                            if xx < 0 || xx >= wd as isize {
                                continue;
                            }
                            acc += xplane[yy as usize * wd + xx as usize] * w[kbase + ky * 3 + kx];
                        }
                    }
                }
                plane[y * wd + xo] = acc;
            }
        }
    });
}

/// Gradient wrt the input (accumulating): full correlation of `g` with the
/// flipped kernel.
pub fn conv3x3_grad_input<T: Scalar>(
    g: &[T],
    w: &[T],
    c_in: usize,
    c_out: usize,
    h: usize,
    wd: usize,
    out: &mut [T],
) {
    debug_assert_eq!(out.len(), c_in * h * wd);
    for_each_chunk(out, h * wd, |ci, plane| {
        for y in 0..h {
            for x in 0..wd {
                let mut acc = T::zero();
                for co in 0..c_out {
                    let gplane = &g[co * h * wd..(co + 1) * h * wd];
                    let kbase = (co * c_in + ci) * 9;
                    for ky in 0..3usize {
                        let yo = y as isize - (ky as isize - 1);
                        if yo < 0 || yo >= h as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let xo = x as isize - (kx as isize - 1);
                            if xo < 0 || xo >= wd as isize {
                                continue;
                            }
                            acc += gplane[yo as usize * wd + xo as usize] * w[kbase + ky * 3 + kx];
                        }
                    }
                }
                plane[y * wd + x] += acc;
            }
        }
    });
}

/// Gradient wrt the kernel (accumulating).
pub fn conv3x3_grad_weight<T: Scalar>(
    g: &[T],
    x: &[T],
    c_in: usize,
    c_out: usize,
    h: usize,
    wd: usize,
    out: &mut [T],
) {
    debug_assert_eq!(out.len(), c_out * c_in * 9);
    for_each_chunk(out, c_in * 9, |co, block| {
        let gplane = &g[co * h * wd..(co + 1) * h * wd];
        for ci in 0..c_in {
            let xplane = &x[ci * h * wd..(ci + 1) * h * wd];
            for ky in 0..3usize {
                for kx in 0..3usize {
                    let mut acc = T::zero();
                    for y in 0..h {
                        let yy = y as isize + ky as isize - 1;
                        if yy < 0 || yy >= h as isize {
                            continue;
                        }
                        for x2 in 0..wd {
                            let xx = x2 as isize + kx as isize - 1;
                            if xx < 0 || xx >= wd as isize {
                                continue;
                            }
                            acc += gplane[y * wd + x2] * xplane[yy as usize * wd + xx as usize];
                        }
                    }
                    block[ci * 9 + ky * 3 + kx] += acc;
                }
            }
        }
    });
}

/// Gradient wrt the bias (accumulating): per-channel sums.
pub fn conv3x3_grad_bias<T: Scalar>(g: &[T], c_out: usize, h: usize, wd: usize, out: &mut [T]) {
    debug_assert_eq!(out.len(), c_out);
    for_each_chunk(out, 1, |co, o| {
        let mut acc = T::zero();
        for v in &g[co * h * wd..(co + 1) * h * wd] {
            acc += *v;
        }
        o[0] += acc;
    });
}
