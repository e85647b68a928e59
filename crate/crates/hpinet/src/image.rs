//! Image container, PNG I/O, and pixel-space helpers.

use std::path::Path;

use crate::error::{HpiError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColorSpace {
    Rgb,
    Y,
}

/// Floating-point image in [0, 1], stored channel-major ([c][y][x]).
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    channels: usize,
    space: ColorSpace,
    data: Vec<f32>,
}

impl ImagePlane {
    /// Values are clamped into [0, 1] on construction.
    pub fn new(height: usize, width: usize, space: ColorSpace, mut data: Vec<f32>) -> Result<Self> {
        let channels = match space {
            ColorSpace::Rgb => 3,
            ColorSpace::Y => 1,
        };
        if height == 0 || width == 0 {
            return Err(HpiError::Usage("empty image".into()));
        }
        if data.len() != channels * height * width {
            return Err(HpiError::Usage(format!(
                "image data length {} != {channels}x{height}x{width}",
                data.len()
            )));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { height, width, channels, space, data })
    }

    pub fn constant(height: usize, width: usize, space: ColorSpace, v: f32) -> Self {
        let channels = match space {
            ColorSpace::Rgb => 3,
            ColorSpace::Y => 1,
        };
        Self {
            height,
            width,
            channels,
            space,
            data: vec![v.clamp(0.0, 1.0); channels * height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn space(&self) -> ColorSpace {
        self.space
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Decode a PNG. 8-bit values map to v/255, 16-bit to v/65535; an alpha
    /// channel, when present, is dropped. Grayscale becomes a Y plane.
    pub fn read_png(path: &Path) -> Result<Self> {
        use image::DynamicImage as D;
        let reader = image::ImageReader::open(path)?;
        let img = reader
            .decode()
            .map_err(|e| HpiError::Format(format!("{}: {e}", path.display())))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let planes = |chan: usize, vals: Vec<f32>| -> Result<Self> {
            // interleaved -> channel-major
            let mut data = vec![0.0f32; chan * h * w];
            for y in 0..h {
                for x in 0..w {
                    for c in 0..chan {
                        data[(c * h + y) * w + x] = vals[(y * w + x) * chan + c];
                    }
                }
            }
            let space = if chan == 1 { ColorSpace::Y } else { ColorSpace::Rgb };
            Self::new(h, w, space, data)
        };
        match img {
            D::ImageLuma8(b) => planes(1, b.into_raw().iter().map(|&v| v as f32 / 255.0).collect()),
            D::ImageRgb8(b) => planes(3, b.into_raw().iter().map(|&v| v as f32 / 255.0).collect()),
            D::ImageLumaA8(b) => {
                let raw = b.into_raw();
                planes(1, raw.chunks(2).map(|p| p[0] as f32 / 255.0).collect())
            }
            D::ImageRgba8(b) => {
                let raw = b.into_raw();
                let mut vals = Vec::with_capacity(3 * h * w);
                for p in raw.chunks(4) {
                    vals.extend(p[..3].iter().map(|&v| v as f32 / 255.0));
                }
                planes(3, vals)
            }
            D::ImageLuma16(b) => planes(1, b.into_raw().iter().map(|&v| v as f32 / 65535.0).collect()),
            D::ImageRgb16(b) => planes(3, b.into_raw().iter().map(|&v| v as f32 / 65535.0).collect()),
            D::ImageLumaA16(b) => {
                let raw = b.into_raw();
                planes(1, raw.chunks(2).map(|p| p[0] as f32 / 65535.0).collect())
            }
            D::ImageRgba16(b) => {
                let raw = b.into_raw();
                let mut vals = Vec::with_capacity(3 * h * w);
                for p in raw.chunks(4) {
                    vals.extend(p[..3].iter().map(|&v| v as f32 / 65535.0));
                }
                planes(3, vals)
            }
            other => Err(HpiError::Format(format!(
                "unsupported pixel format {:?} in {}",
                other.color(),
                path.display()
            ))),
        }
    }

    /// Encode as 8-bit PNG (RGB or grayscale).
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.channels * self.height * self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    let v = self.get(c, y, x).clamp(0.0, 1.0);
                    bytes.push((v * 255.0).round() as u8);
                }
            }
        }
        let color = if self.channels == 1 {
            image::ExtendedColorType::L8
        } else {
            image::ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| HpiError::Format(format!("{}: {e}", path.display())))
    }

    /// BT.601 studio-swing luma: Y·255 = 65.481·R + 128.553·G + 24.966·B + 16
    /// with R, G, B in [0, 1]; stored as Y/255.
    pub fn rgb_to_y(&self) -> Result<ImagePlane> {
        if self.space != ColorSpace::Rgb {
            return Err(HpiError::Usage("rgb_to_y expects an RGB image".into()));
        }
        let (h, w) = (self.height, self.width);
        let mut data = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                let r = self.get(0, y, x) as f64;
                let g = self.get(1, y, x) as f64;
                let b = self.get(2, y, x) as f64;
                let y255 = 65.481 * r + 128.553 * g + 24.966 * b + 16.0;
                data[y * w + x] = (y255 / 255.0) as f32;
            }
        }
        ImagePlane::new(h, w, ColorSpace::Y, data)
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.channels, self.height, self.width], |i| T::from_f64(self.data[i] as f64))
    }

    /// Clamps into [0, 1] like any construction.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, space: ColorSpace) -> Result<Self> {
        if t.rank() != 3 {
            return Err(HpiError::Usage(format!("from_tensor expects [c,h,w], got {:?}", t.dims())));
        }
        let data: Vec<f32> = t.data().iter().map(|v| v.as_f64() as f32).collect();
        ImagePlane::new(t.dims()[1], t.dims()[2], space, data)
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<ImagePlane> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(HpiError::Usage(format!(
                "crop {h}x{w}+{y0}+{x0} exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = vec![0.0f32; self.channels * h * w];
        for c in 0..self.channels {
            for y in 0..h {
                for x in 0..w {
                    data[(c * h + y) * w + x] = self.get(c, y0 + y, x0 + x);
                }
            }
        }
        ImagePlane::new(h, w, self.space, data)
    }

    /// Mirror-pad (without repeating the edge row) on the bottom/right so the
    /// image reaches at least `h` x `w`.
    pub fn reflect_pad_to(&self, h: usize, w: usize) -> Result<ImagePlane> {
        let oh = self.height.max(h);
        let ow = self.width.max(w);
        if oh > 2 * self.height - 1 || ow > 2 * self.width - 1 {
            return Err(HpiError::Geometry(format!(
                "cannot reflect-pad {}x{} to {oh}x{ow}",
                self.height, self.width
            )));
        }
        let reflect = |i: usize, n: usize| if i < n { i } else { 2 * n - 2 - i };
        let mut data = vec![0.0f32; self.channels * oh * ow];
        for c in 0..self.channels {
            for y in 0..oh {
                let sy = reflect(y, self.height);
                for x in 0..ow {
                    data[(c * oh + y) * ow + x] = self.get(c, sy, reflect(x, self.width));
                }
            }
        }
        ImagePlane::new(oh, ow, self.space, data)
    }

    /// One of the 8 dihedral transforms: k = flip·4 + quarter-turns.
    pub fn dihedral(&self, k: u8) -> ImagePlane {
        let rot = (k % 4) as usize;
        let flip = k >= 4;
        let (h, w) = (self.height, self.width);
        let (oh, ow) = if rot % 2 == 0 { (h, w) } else { (w, h) };
        let mut data = vec![0.0f32; self.channels * oh * ow];
        for c in 0..self.channels {
            for y in 0..oh {
                for x in 0..ow {
                    let (sy, sx) = dihedral_src(y, x, h, w, rot);
                    let sx = if flip { w - 1 - sx } else { sx };
                    data[(c * oh + y) * ow + x] = self.get(c, sy, sx);
                }
            }
        }
        ImagePlane { height: oh, width: ow, channels: self.channels, space: self.space, data }
    }

    /// Drop a border of `n` pixels on every side.
    pub fn shave(&self, n: usize) -> Result<ImagePlane> {
        if 2 * n >= self.height || 2 * n >= self.width {
            return Err(HpiError::Usage(format!(
                "shave {n} leaves nothing of {}x{}",
                self.height, self.width
            )));
        }
        self.crop(n, n, self.height - 2 * n, self.width - 2 * n)
    }
}

/// Source coordinates for a quarter-turn rotation: out[y][x] = in[sy][sx].
/// `rot` counts 90° clockwise turns; (h, w) are the *source* dims.
fn dihedral_src(y: usize, x: usize, h: usize, w: usize, rot: usize) -> (usize, usize) {
    match rot {
        0 => (y, x),
        1 => (h - 1 - x, y),
        2 => (h - 1 - y, w - 1 - x),
        _ => (x, w - 1 - y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_clamps_to_unit_interval() {
        let img = ImagePlane::new(1, 2, ColorSpace::Y, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn rgb_to_y_white_black_gray() {
        let white = ImagePlane::constant(2, 2, ColorSpace::Rgb, 1.0).rgb_to_y().unwrap();
        assert!((white.data()[0] - 235.0 / 255.0).abs() < 1e-6);
        let black = ImagePlane::constant(2, 2, ColorSpace::Rgb, 0.0).rgb_to_y().unwrap();
        assert!((black.data()[0] - 16.0 / 255.0).abs() < 1e-6);
        for gf in [0.25f32, 0.5, 0.75] {
            let gray = ImagePlane::constant(1, 1, ColorSpace::Rgb, gf).rgb_to_y().unwrap();
            let want = (219.0 * gf as f64 + 16.0) / 255.0;
            assert!((gray.data()[0] as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn rgb_to_y_range_bounds() {
        for i in 0..50 {
            let r = (i as f32 * 0.37) % 1.0;
            let g = (i as f32 * 0.71) % 1.0;
            let b = (i as f32 * 0.13) % 1.0;
            let img = ImagePlane::new(1, 1, ColorSpace::Rgb, vec![r, g, b]).unwrap();
            let y = img.rgb_to_y().unwrap().data()[0];
            assert!(y >= 16.0 / 255.0 - 1e-6 && y <= 235.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn rgb_to_y_rejects_y_input() {
        let img = ImagePlane::constant(2, 2, ColorSpace::Y, 0.5);
        assert!(img.rgb_to_y().is_err());
    }

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        let img = ImagePlane::new(1, 3, ColorSpace::Y, vec![0.1, 0.2, 0.3]).unwrap();
        let p = img.reflect_pad_to(1, 5).unwrap();
        assert_eq!(p.data(), &[0.1, 0.2, 0.3, 0.2, 0.1]);
        assert!(img.reflect_pad_to(1, 6).is_err());
    }

    #[test]
    fn dihedral_transforms_are_bijective_and_distinct() {
        let img = ImagePlane::new(2, 3, ColorSpace::Y, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let mut seen = Vec::new();
        for k in 0..8u8 {
            let t = img.dihedral(k);
            assert_eq!(t.data().len(), 6);
            let mut sorted = t.data().to_vec();
            sorted.sort_by(f32::total_cmp);
            assert_eq!(sorted, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5], "k={k} must permute pixels");
            seen.push(t.data().to_vec());
        }
        for a in 0..8 {
            for b in (a + 1)..8 {
                assert_ne!(seen[a], seen[b], "transforms {a} and {b} coincide");
            }
        }
    }

    #[test]
    fn dihedral_rot180_is_reverse() {
        let img = ImagePlane::new(2, 2, ColorSpace::Y, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let r = img.dihedral(2);
        assert_eq!(r.data(), &[0.4, 0.3, 0.2, 0.1]);
    }

    #[test]
    fn png_round_trip_is_lossless_for_8bit() {
        let dir = std::env::temp_dir().join("hpinet_img_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.png");
        let data: Vec<f32> = (0..3 * 7 * 5).map(|i| ((i * 97) % 256) as f32 / 255.0).collect();
        let img = ImagePlane::new(7, 5, ColorSpace::Rgb, data).unwrap();
        img.write_png(&path).unwrap();
        let back = ImagePlane::read_png(&path).unwrap();
        assert_eq!(back.space(), ColorSpace::Rgb);
        assert_eq!(back.data(), img.data());
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn truncated_png_is_a_format_error() {
        let dir = std::env::temp_dir().join("hpinet_img_test");
        std::fs::create_dir_all(&dir).unwrap();
        let good = dir.join("good.png");
        let bad = dir.join("bad.png");
        ImagePlane::constant(8, 8, ColorSpace::Rgb, 0.5).write_png(&good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&bad, &bytes[..bytes.len() / 2]).unwrap();
        match ImagePlane::read_png(&bad) {
            Err(HpiError::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
        std::fs::remove_file(&good).ok();
        std::fs::remove_file(&bad).ok();
    }
}
