use crate::parallel::for_each_chunk;
use crate::scalar::Scalar;

/// Rearrange `x` [r²·c, h, w] into [c, r·h, r·w]: the channel block
/// `c·r² .. c·r²+r²-1` at spatial (y, x) fills the r×r output tile anchored
/// at (r·y, r·x), row-major within the tile.
pub fn pixel_shuffle<T: Scalar>(x: &[T], c_out: usize, r: usize, h: usize, w: usize, out: &mut [T]) {
    debug_assert_eq!(x.len(), c_out * r * r * h * w);
    debug_assert_eq!(out.len(), c_out * r * h * r * w);
    let (oh, ow) = (r * h, r * w);
    for_each_chunk(out, oh * ow, |c, plane| {
        for y in 0..oh {
            let (hy, a) = (y / r, y % r);
            for xo in 0..ow {
                let (wx, b) = (xo / r, xo % r);
                plane[y * ow + xo] = x[((c * r * r + a * r + b) * h + hy) * w + wx];
            }
        }
    });
}

/// Exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Scalar>(x: &[T], c_out: usize, r: usize, h: usize, w: usize, out: &mut [T]) {
    debug_assert_eq!(x.len(), c_out * r * h * r * w);
    debug_assert_eq!(out.len(), c_out * r * r * h * w);
    let (ih, iw) = (r * h, r * w);
    for_each_chunk(out, h * w, |ch, plane| {
        let c = ch / (r * r);
        let a = (ch % (r * r)) / r;
        let b = ch % r;
        for y in 0..h {
            for xo in 0..w {
                plane[y * w + xo] = x[(c * ih + y * r + a) * iw + xo * r + b];
            }
        }
    });
}

/// Accumulating unshuffle, used as the backward of `pixel_shuffle`.
pub fn pixel_unshuffle_acc<T: Scalar>(g: &[T], _c_out: usize, r: usize, h: usize, w: usize, out: &mut [T]) {
    let (ih, iw) = (r * h, r * w);
    for_each_chunk(out, h * w, |ch, plane| {
        let c = ch / (r * r);
        let a = (ch % (r * r)) / r;
        let b = ch % r;
        for y in 0..h {
            for xo in 0..w {
                plane[y * w + xo] += g[(c * ih + y * r + a) * iw + xo * r + b];
            }
        }
    });
}

/// Accumulating shuffle, used as the backward of `pixel_unshuffle`.
pub fn pixel_shuffle_acc<T: Scalar>(g: &[T], _c_out: usize, r: usize, h: usize, w: usize, out: &mut [T]) {
    let (oh, ow) = (r * h, r * w);
    for_each_chunk(out, oh * ow, |c, plane| {
        for y in 0..oh {
            let (hy, a) = (y / r, y % r);
            for xo in 0..ow {
                let (wx, b) = (xo / r, xo % r);
                plane[y * ow + xo] += g[((c * r * r + a * r + b) * h + hy) * w + wx];
            }
        }
    });
}

fn coords_of(mut idx: usize, dims: &[usize], coords: &mut [usize]) {
    for d in (0..dims.len()).rev() {
        coords[d] = idx % dims[d];
        idx /= dims[d];
    }
}

fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; dims.len()];
    for d in (0..dims.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * dims[d + 1];
    }
    s
}

/// Axis permutation: out has dims `dims[perm[i]]` and
/// out[c0,..,ck] = x[c_{perm...}] with out_coord[i] = in_coord[perm[i]].
pub fn permute<T: Scalar>(x: &[T], dims: &[usize], perm: &[usize], out: &mut [T]) {
    let out_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let in_strides = strides_of(dims);
    let chunk: usize = out_dims[1..].iter().product::<usize>().max(1);
    let nd = dims.len();
    for_each_chunk(out, chunk, |c0, block| {
        let mut oc = vec![0usize; nd];
        for (off, o) in block.iter_mut().enumerate() {
            coords_of(off, &out_dims[1..], &mut oc[1..]);
            oc[0] = c0;
            let mut src = 0usize;
            for i in 0..nd {
                src += oc[i] * in_strides[perm[i]];
            }
            *o = x[src];
        }
    });
}

/// Accumulating permute for the backward pass.
pub fn permute_acc<T: Scalar>(x: &[T], dims: &[usize], perm: &[usize], out: &mut [T]) {
    let out_dims: Vec<usize> = perm.iter().map(|&p| dims[p]).collect();
    let in_strides = strides_of(dims);
    let chunk: usize = out_dims[1..].iter().product::<usize>().max(1);
    let nd = dims.len();
    for_each_chunk(out, chunk, |c0, block| {
        let mut oc = vec![0usize; nd];
        for (off, o) in block.iter_mut().enumerate() {
            coords_of(off, &out_dims[1..], &mut oc[1..]);
            oc[0] = c0;
            let mut src = 0usize;
            for i in 0..nd {
                src += oc[i] * in_strides[perm[i]];
            }
            *o += x[src];
        }
    });
}

pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Mean over the second-to-last axis: [.., rows, c] -> [.., c].
pub fn mean_rows<T: Scalar>(x: &[T], rows: usize, c: usize, out: &mut [T]) {
    debug_assert_eq!(x.len() % (rows * c), 0);
    let inv = T::one() / T::from_f64(rows as f64);
    for_each_chunk(out, c, |b, chunk| {
        let xb = &x[b * rows * c..(b + 1) * rows * c];
        for j in 0..c {
            let mut acc = T::zero();
            for r in 0..rows {
                acc += xb[r * c + j];
            }
            chunk[j] = acc * inv;
        }
    });
}

/// Backward of `mean_rows` (accumulating): broadcast g / rows.
pub fn mean_rows_acc<T: Scalar>(g: &[T], rows: usize, c: usize, out: &mut [T]) {
    let inv = T::one() / T::from_f64(rows as f64);
    for_each_chunk(out, rows * c, |b, chunk| {
        let gb = &g[b * c..(b + 1) * c];
        for r in 0..rows {
            for j in 0..c {
                chunk[r * c + j] += gb[j] * inv;
            }
        }
    });
}

/// Top-left spatial crop of a [c, h, w] tensor.
pub fn crop_spatial<T: Scalar>(x: &[T], h: usize, w: usize, oh: usize, ow: usize, out: &mut [T]) {
    debug_assert!(oh <= h && ow <= w);
    debug_assert_eq!(x.len() % (h * w), 0);
    for_each_chunk(out, oh * ow, |c, plane| {
        let xp = &x[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            plane[y * ow..(y + 1) * ow].copy_from_slice(&xp[y * w..y * w + ow]);
        }
    });
}

/// Backward of `crop_spatial` (accumulating into the uncropped layout).
pub fn crop_spatial_acc<T: Scalar>(g: &[T], h: usize, w: usize, oh: usize, ow: usize, out: &mut [T]) {
    for_each_chunk(out, h * w, |c, plane| {
        let gp = &g[c * oh * ow..(c + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                plane[y * w + x] += gp[y * ow + x];
            }
        }
    });
}
