//! Resampling: bilinear (used by the LR skip connection) and antialiased
//! bicubic downscaling (the degradation that synthesizes LR training and
//! evaluation inputs). Both compute in f64 and store back to f32, so a
//! constant image resizes to exactly the same constant.

use crate::error::{HpiError, Result};
use crate::image::ImagePlane;

/// Bilinear resize with the align-corners-false convention: output pixel
/// centers map to `(i + 0.5) * in/out - 0.5` in source coordinates, with
/// edge clamping.
pub fn bilinear_resize(img: &ImagePlane, out_h: usize, out_w: usize) -> Result<ImagePlane> {
    if out_h == 0 || out_w == 0 {
        return Err(HpiError::Usage("bilinear_resize to empty size".into()));
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut data = vec![0.0f32; c * out_h * out_w];
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for ch in 0..c {
        for oy in 0..out_h {
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let ty = fy - y0 as f64;
            for ox in 0..out_w {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let tx = fx - x0 as f64;
                let v00 = img.get(ch, y0, x0) as f64;
                let v01 = img.get(ch, y0, x1) as f64;
                let v10 = img.get(ch, y1, x0) as f64;
                let v11 = img.get(ch, y1, x1) as f64;
                let top = v00 + (v01 - v00) * tx;
                let bot = v10 + (v11 - v10) * tx;
                data[(ch * out_h + oy) * out_w + ox] = (top + (bot - top) * ty) as f32;
            }
        }
    }
    ImagePlane::new(out_h, out_w, img.space(), data)
}

/// Keys cubic kernel with a = -0.5.
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (A + 2.0) * x.powi(3) - (A + 3.0) * x.powi(2) + 1.0
    } else if x < 2.0 {
        A * x.powi(3) - 5.0 * A * x.powi(2) + 8.0 * A * x - 4.0 * A
    } else {
        0.0
    }
}

/// Antialiased bicubic weights for downscaling an axis by integer `scale`:
/// the kernel is stretched by the scale factor and the taps are normalized,
/// with indices clamped to the border (replicate).
fn bicubic_taps(out_i: usize, scale: usize, in_len: usize) -> (Vec<usize>, Vec<f64>) {
    let s = scale as f64;
    let u = (out_i as f64 + 0.5) * s - 0.5;
    let lo = (u - 2.0 * s).ceil() as isize;
    let hi = (u + 2.0 * s).floor() as isize;
    let mut idx = Vec::with_capacity((hi - lo + 1) as usize);
    let mut wts = Vec::with_capacity((hi - lo + 1) as usize);
    let mut sum = 0.0;
    for j in lo..=hi {
        let wgt = cubic_kernel((u - j as f64) / s) / s;
        if wgt == 0.0 {
            continue;
        }
        idx.push(j.clamp(0, in_len as isize - 1) as usize);
        wts.push(wgt);
        sum += wgt;
    }
    for wgt in &mut wts {
        *wgt /= sum;
    }
    (idx, wts)
}

/// Bicubic downscale by an integer factor, the standard degradation used to
/// synthesize LR images from HR ground truth. Output is clamped to [0, 1].
pub fn degrade(hr: &ImagePlane, scale: usize) -> Result<ImagePlane> {
    if scale == 0 {
        return Err(HpiError::Usage("degrade scale must be >= 1".into()));
    }
    if scale == 1 {
        return Ok(hr.clone());
    }
    let (h, w, c) = (hr.height(), hr.width(), hr.channels());
    if h % scale != 0 || w % scale != 0 {
        return Err(HpiError::Usage(format!(
            "degrade needs dims divisible by {scale}, got {h}x{w} (crop first)"
        )));
    }
    let (oh, ow) = (h / scale, w / scale);

    // horizontal pass: [c, h, w] -> [c, h, ow], in f64
    let col_taps: Vec<(Vec<usize>, Vec<f64>)> = (0..ow).map(|i| bicubic_taps(i, scale, w)).collect();
    let mut mid = vec![0.0f64; c * h * ow];
    for ch in 0..c {
        for y in 0..h {
            for ox in 0..ow {
                let (idx, wts) = &col_taps[ox];
                let mut acc = 0.0f64;
                for (j, wgt) in idx.iter().zip(wts) {
                    acc += hr.get(ch, y, *j) as f64 * wgt;
                }
                mid[(ch * h + y) * ow + ox] = acc;
            }
        }
    }

    // vertical pass: [c, h, ow] -> [c, oh, ow]
    let row_taps: Vec<(Vec<usize>, Vec<f64>)> = (0..oh).map(|i| bicubic_taps(i, scale, h)).collect();
    let mut data = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let (idx, wts) = &row_taps[oy];
            for ox in 0..ow {
                let mut acc = 0.0f64;
                for (j, wgt) in idx.iter().zip(wts) {
                    acc += mid[(ch * h + j) * ow + ox] * wgt;
                }
                data[(ch * oh + oy) * ow + ox] = acc.clamp(0.0, 1.0) as f32;
            }
        }
    }
    ImagePlane::new(oh, ow, hr.space(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ColorSpace;

    #[test]
    fn bilinear_identity_when_dims_match() {
        let img = ImagePlane::new(2, 3, ColorSpace::Y, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let out = bilinear_resize(&img, 2, 3).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn bilinear_constant_stays_constant() {
        let img = ImagePlane::constant(3, 4, ColorSpace::Rgb, 0.37);
        let out = bilinear_resize(&img, 9, 5).unwrap();
        for v in out.data() {
            assert_eq!(*v, 0.37);
        }
    }

    #[test]
    fn bilinear_checkerboard_matches_sampling_oracle() {
        // 2x2 checkerboard to 4x4 against direct evaluation of the formula
        let img = ImagePlane::new(2, 2, ColorSpace::Y, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = bilinear_resize(&img, 4, 4).unwrap();
        for oy in 0..4 {
            for ox in 0..4 {
                let fy = ((oy as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
                let fx = ((ox as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
                let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(1), (x0 + 1).min(1));
                let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
                let v = |y: usize, x: usize| img.get(0, y, x) as f64;
                let want = v(y0, x0) * (1.0 - ty) * (1.0 - tx)
                    + v(y0, x1) * (1.0 - ty) * tx
                    + v(y1, x0) * ty * (1.0 - tx)
                    + v(y1, x1) * ty * tx;
                assert!((out.get(0, oy, ox) as f64 - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn degrade_constant_is_exact() {
        let img = ImagePlane::constant(8, 8, ColorSpace::Rgb, 0.62);
        let lr = degrade(&img, 2).unwrap();
        assert_eq!(lr.height(), 4);
        for v in lr.data() {
            assert_eq!(*v, 0.62);
        }
    }

    #[test]
    fn degrade_scale_one_is_identity() {
        let img = ImagePlane::new(2, 2, ColorSpace::Y, vec![0.1, 0.9, 0.4, 0.6]).unwrap();
        let out = degrade(&img, 1).unwrap();
        assert_eq!(out.data(), img.data());
    }

    #[test]
    fn degrade_rejects_indivisible_dims() {
        let img = ImagePlane::constant(9, 8, ColorSpace::Y, 0.5);
        assert!(degrade(&img, 2).is_err());
    }

    #[test]
    fn degrade_ramp_matches_separable_oracle() {
        // 8x8 linear ramp, x2 downscale, against a direct separable oracle
        let data: Vec<f32> = (0..64).map(|i| ((i % 8) as f32) / 7.0).collect();
        let img = ImagePlane::new(8, 8, ColorSpace::Y, data.clone()).unwrap();
        let lr = degrade(&img, 2).unwrap();

        let taps = |i: usize, n: usize| bicubic_taps(i, 2, n);
        for oy in 0..4 {
            for ox in 0..4 {
                let (ix, wx) = taps(ox, 8);
                let (iy, wy) = taps(oy, 8);
                let mut acc = 0.0f64;
                for (jy, wyv) in iy.iter().zip(&wy) {
                    let mut row = 0.0f64;
                    for (jx, wxv) in ix.iter().zip(&wx) {
                        row += data[jy * 8 + jx] as f64 * wxv;
                    }
                    acc += row * wyv;
                }
                let got = lr.get(0, oy, ox) as f64;
                assert!((got - acc.clamp(0.0, 1.0)).abs() < 1e-6, "({oy},{ox}): {got} vs {acc}");
            }
        }
    }
}
