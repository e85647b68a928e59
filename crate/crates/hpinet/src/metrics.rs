//! PSNR and SSIM on single-channel planes, computed in f64.

use crate::error::{HpiError, Result};
use crate::image::ImagePlane;

/// Peak signal-to-noise ratio in dB on [0, 1] data, excluding a border of
/// `shave` pixels on every side. Identical inputs give +inf.
pub fn psnr(a: &ImagePlane, b: &ImagePlane, shave: usize) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels() {
        return Err(HpiError::Usage(format!(
            "psnr dims {}x{}x{} vs {}x{}x{}",
            a.channels(), a.height(), a.width(), b.channels(), b.height(), b.width()
        )));
    }
    if 2 * shave >= a.height() || 2 * shave >= a.width() {
        return Err(HpiError::Usage(format!(
            "shave {shave} consumes the whole {}x{} image",
            a.height(), a.width()
        )));
    }
    let (h, w) = (a.height(), a.width());
    let mut se = 0.0f64;
    let mut n = 0usize;
    for c in 0..a.channels() {
        for y in shave..h - shave {
            for x in shave..w - shave {
                let d = a.get(c, y, x) as f64 - b.get(c, y, x) as f64;
                se += d * d;
                n += 1;
            }
        }
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0f64; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Separable valid-window Gaussian filter of an f64 plane.
fn gauss_filter(src: &[f64], h: usize, w: usize) -> Vec<f64> {
    let win = gaussian_window();
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut mid = vec![0.0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, wv) in win.iter().enumerate() {
                acc += src[y * w + x + k] * wv;
            }
            mid[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, wv) in win.iter().enumerate() {
                acc += mid[(y + k) * ow + x] * wv;
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean structural similarity with the standard 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1, valid-window border
/// handling.
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels() {
        return Err(HpiError::Usage("ssim requires matching dims".into()));
    }
    if a.channels() != 1 {
        return Err(HpiError::Usage("ssim operates on single-channel planes".into()));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(HpiError::Usage(format!("ssim needs at least 11x11 input, got {h}x{w}")));
    }
    let av: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let bv: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let aa: Vec<f64> = av.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = bv.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| x * y).collect();

    let mu_a = gauss_filter(&av, h, w);
    let mu_b = gauss_filter(&bv, h, w);
    let s_aa = gauss_filter(&aa, h, w);
    let s_bb = gauss_filter(&bb, h, w);
    let s_ab = gauss_filter(&ab, h, w);

    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut sum = 0.0f64;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = s_aa[i] - ma * ma;
        let var_b = s_bb[i] - mb * mb;
        let cov = s_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        sum += num / den;
    }
    Ok(sum / mu_a.len() as f64)
}
