//! Patch division and aggregation.
//!
//! A feature map of size H×W is split into P×P patches whose top-left
//! corners (u, v) satisfy `u % P == 0 || u == H - P` (same rule for v).
//! Aligned patches tile the grid; when P does not divide the extent, one
//! extra patch is anchored at the far edge, so every pixel is covered and no
//! padding is ever introduced. Aggregation pastes patches back, averaging
//! where boundary patches overlap, which makes the result independent of
//! patch processing order.

use crate::error::{HpiError, Result};
use crate::parallel::for_each_chunk;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Top-left patch corners for one axis: every u in `0..=extent-p` with
/// `u % p == 0`, plus `extent - p` when the extent is not a multiple of p.
pub fn patch_origins(extent: usize, p: usize) -> Result<Vec<usize>> {
    if p == 0 || p > extent {
        return Err(HpiError::Geometry(format!(
            "patch size {p} does not fit extent {extent}"
        )));
    }
    let mut origins: Vec<usize> = (0..=extent - p).filter(|u| u % p == 0).collect();
    if *origins.last().unwrap() != extent - p {
        origins.push(extent - p);
    }
    Ok(origins)
}

/// Patch geometry of one division of an H×W grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchLayout {
    height: usize,
    width: usize,
    patch: usize,
    row_origins: Vec<usize>,
    col_origins: Vec<usize>,
}

impl PatchLayout {
    pub fn new(height: usize, width: usize, patch: usize) -> Result<Self> {
        let row_origins = patch_origins(height, patch)?;
        let col_origins = patch_origins(width, patch)?;
        Ok(Self { height, width, patch, row_origins, col_origins })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn num_patches(&self) -> usize {
        self.row_origins.len() * self.col_origins.len()
    }

    /// (u, v) of patch `i`, row-major over the origin grid.
    pub fn origin(&self, i: usize) -> (usize, usize) {
        let cols = self.col_origins.len();
        (self.row_origins[i / cols], self.col_origins[i % cols])
    }

    /// All origins in row-major order.
    pub fn origins(&self) -> Vec<(usize, usize)> {
        (0..self.num_patches()).map(|i| self.origin(i)).collect()
    }

    /// Indices of this axis' origins whose patch covers coordinate `y`.
    fn covering(origins: &[usize], p: usize, y: usize) -> CoveringPair {
        // at most two patches cover any coordinate: the aligned one and the
        // tail patch anchored at extent - p
        let mut pair = CoveringPair { first: usize::MAX, second: usize::MAX };
        for (idx, &u) in origins.iter().enumerate() {
            if u <= y && y < u + p {
                if pair.first == usize::MAX {
                    pair.first = idx;
                } else {
                    pair.second = idx;
                }
            }
        }
        debug_assert!(pair.first != usize::MAX);
        pair
    }

    /// Number of patches covering pixel (y, x).
    pub fn coverage(&self, y: usize, x: usize) -> usize {
        let r = Self::covering(&self.row_origins, self.patch, y);
        let c = Self::covering(&self.col_origins, self.patch, x);
        r.len() * c.len()
    }
}

#[derive(Clone, Copy)]
struct CoveringPair {
    first: usize,
    second: usize,
}

impl CoveringPair {
    fn len(&self) -> usize {
        1 + (self.second != usize::MAX) as usize
    }
    fn get(&self, i: usize) -> usize {
        if i == 0 {
            self.first
        } else {
            self.second
        }
    }
}

/// The patches of one division, stacked as a single [N, P², C] tensor with
/// patch rows flattened row-major: pixel (u+a, v+b) sits at patch row a·P+b.
#[derive(Clone, Debug)]
pub struct PatchSet<T> {
    pub layout: PatchLayout,
    pub stacked: Tensor<T>,
}

impl<T: Scalar> PatchSet<T> {
    pub fn num_patches(&self) -> usize {
        self.layout.num_patches()
    }

    pub fn channels(&self) -> usize {
        self.stacked.dims()[2]
    }

    /// Copy of patch `i` as a [P², C] tensor.
    pub fn patch(&self, i: usize) -> Tensor<T> {
        let sq = self.layout.patch * self.layout.patch;
        let c = self.channels();
        let data = self.stacked.data()[i * sq * c..(i + 1) * sq * c].to_vec();
        Tensor::new(vec![sq, c], data).expect("patch slice is consistent")
    }
}

/// Raw divide: `x` is [c, h, w]; `out` is [n, p², c].
pub(crate) fn divide_into<T: Scalar>(x: &[T], c: usize, layout: &PatchLayout, out: &mut [T]) {
    let p = layout.patch;
    let (h, w) = (layout.height, layout.width);
    debug_assert_eq!(x.len(), c * h * w);
    debug_assert_eq!(out.len(), layout.num_patches() * p * p * c);
    for_each_chunk(out, p * p * c, |i, patch| {
        let (u, v) = layout.origin(i);
        for a in 0..p {
            for b in 0..p {
                let row = a * p + b;
                for ch in 0..c {
                    patch[row * c + ch] = x[ch * h * w + (u + a) * w + (v + b)];
                }
            }
        }
    });
}

/// Backward of divide (accumulating into the [c, h, w] gradient).
pub(crate) fn divide_acc<T: Scalar>(g: &[T], c: usize, layout: &PatchLayout, out: &mut [T]) {
    let p = layout.patch;
    let (h, w) = (layout.height, layout.width);
    let cols = layout.col_origins.len();
    for_each_chunk(out, h * w, |ch, plane| {
        for y in 0..h {
            let rc = PatchLayout::covering(&layout.row_origins, p, y);
            for x in 0..w {
                let cc = PatchLayout::covering(&layout.col_origins, p, x);
                let mut acc = T::zero();
                for ri in 0..rc.len() {
                    let r = rc.get(ri);
                    let a = y - layout.row_origins[r];
                    for ci in 0..cc.len() {
                        let cidx = cc.get(ci);
                        let b = x - layout.col_origins[cidx];
                        let patch = r * cols + cidx;
                        acc += g[(patch * p * p + a * p + b) * c + ch];
                    }
                }
                plane[y * w + x] += acc;
            }
        }
    });
}

/// Raw aggregate: `patches` is [n, p², c]; `out` is [c, h, w]. Overlapping
/// contributions are averaged; sums are paired so that identical
/// contributions average back to the exact original value.
pub(crate) fn aggregate_into<T: Scalar>(patches: &[T], c: usize, layout: &PatchLayout, out: &mut [T]) {
    let p = layout.patch;
    let (h, w) = (layout.height, layout.width);
    let cols = layout.col_origins.len();
    debug_assert_eq!(out.len(), c * h * w);
    for_each_chunk(out, h * w, |ch, plane| {
        for y in 0..h {
            let rc = PatchLayout::covering(&layout.row_origins, p, y);
            for x in 0..w {
                let cc = PatchLayout::covering(&layout.col_origins, p, x);
                let mut vals = [T::zero(); 4];
                let mut k = 0usize;
                for ri in 0..rc.len() {
                    let r = rc.get(ri);
                    let a = y - layout.row_origins[r];
                    for ci in 0..cc.len() {
                        let cidx = cc.get(ci);
                        let b = x - layout.col_origins[cidx];
                        let patch = r * cols + cidx;
                        vals[k] = patches[(patch * p * p + a * p + b) * c + ch];
                        k += 1;
                    }
                }
                let mean = match k {
                    1 => vals[0],
                    2 => (vals[0] + vals[1]) / T::from_f64(2.0),
                    _ => ((vals[0] + vals[1]) + (vals[2] + vals[3])) / T::from_f64(4.0),
                };
                plane[y * w + x] = mean;
            }
        }
    });
}

/// Backward of aggregate (accumulating into the [n, p², c] gradient):
/// each patch pixel receives g / coverage of the pixel it wrote to.
pub(crate) fn aggregate_acc<T: Scalar>(g: &[T], c: usize, layout: &PatchLayout, out: &mut [T]) {
    let p = layout.patch;
    let (h, w) = (layout.height, layout.width);
    for_each_chunk(out, p * p * c, |i, patch| {
        let (u, v) = layout.origin(i);
        for a in 0..p {
            for b in 0..p {
                let (y, x) = (u + a, v + b);
                let cov = T::from_f64(layout.coverage(y, x) as f64);
                let row = a * p + b;
                for ch in 0..c {
                    patch[row * c + ch] += g[ch * h * w + y * w + x] / cov;
                }
            }
        }
    });
}

/// Split a [C, H, W] tensor into patches of size `p`.
pub fn divide<T: Scalar>(x: &Tensor<T>, p: usize) -> Result<PatchSet<T>> {
    if x.rank() != 3 {
        return Err(HpiError::Shape(format!("divide expects [c,h,w], got {:?}", x.dims())));
    }
    let (c, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let layout = PatchLayout::new(h, w, p)?;
    let mut out = vec![T::zero(); layout.num_patches() * p * p * c];
    divide_into(x.data(), c, &layout, &mut out);
    let stacked = Tensor::new(vec![layout.num_patches(), p * p, c], out)?;
    Ok(PatchSet { layout, stacked })
}

/// Paste a patch set back into a [C, H, W] tensor, averaging overlaps.
pub fn aggregate<T: Scalar>(ps: &PatchSet<T>) -> Result<Tensor<T>> {
    let c = ps.channels();
    let layout = &ps.layout;
    let expect = layout.num_patches() * layout.patch * layout.patch * c;
    if ps.stacked.len() != expect {
        return Err(HpiError::Geometry(format!(
            "patch set has {} values, layout implies {expect}",
            ps.stacked.len()
        )));
    }
    let mut out = vec![T::zero(); c * layout.height * layout.width];
    aggregate_into(ps.stacked.data(), c, layout, &mut out);
    Tensor::new(vec![c, layout.height, layout.width], out)
}

/// Patch size used by block `block_index` of the cascaded schedule.
pub fn cpd_schedule(patch_sizes: &[usize], block_index: usize) -> Result<usize> {
    patch_sizes
        .get(block_index)
        .copied()
        .ok_or_else(|| HpiError::Usage(format!(
            "block index {block_index} out of range for {} blocks",
            patch_sizes.len()
        )))
}

/// Fraction of pixels that lie on a patch border in *every* division of the
/// schedule. A pixel is on a border in one division when its row or column
/// is the first or last of some covering patch.
pub fn boundary_persistence(height: usize, width: usize, schedule: &[usize]) -> Result<f64> {
    if schedule.is_empty() {
        return Err(HpiError::Usage("empty schedule".into()));
    }
    let mut persistent = vec![true; height * width];
    for &p in schedule {
        let layout = PatchLayout::new(height, width, p)?;
        let row_border = axis_border_set(&layout.row_origins, p, height);
        let col_border = axis_border_set(&layout.col_origins, p, width);
        for y in 0..height {
            for x in 0..width {
                if !(row_border[y] || col_border[x]) {
                    persistent[y * width + x] = false;
                }
            }
        }
    }
    let count = persistent.iter().filter(|&&b| b).count();
    Ok(count as f64 / (height * width) as f64)
}

fn axis_border_set(origins: &[usize], p: usize, extent: usize) -> Vec<bool> {
    let mut border = vec![false; extent];
    for &u in origins {
        border[u] = true;
        border[u + p - 1] = true;
    }
    border
}
