//! Planar floating-point images.

use std::path::Path;

use crate::error::{Error, Result};

/// Planar image with samples in `[0, 1]`, stored channel-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::check_dims(height, width, channels)?;
        Ok(Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        })
    }

    /// Wraps planar data; values are clamped into `[0, 1]`.
    pub fn from_planar(height: usize, width: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        Self::check_dims(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::InvalidInput(format!(
                "expected {} samples for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("image samples must be finite".into()));
        }
        clamp_unit(&mut data);
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from a function of `(channel, row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut img = Self::new(height, width, channels)?;
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.data[(c * height + y) * width + x] = f(c, y, x).clamp(0.0, 1.0);
                }
            }
        }
        Ok(img)
    }

    fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!("empty image {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!("channels must be 1 or 3, got {channels}")));
        }
        Ok(())
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Three-channel view: grayscale is replicated, color is cloned.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Image {
            height: self.height,
            width: self.width,
            channels: 3,
            data,
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 || y0 + height > self.height || x0 + width > self.width {
            return Err(Error::InvalidInput(format!(
                "crop {height}x{width} at ({y0}, {x0}) outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in y0..y0 + height {
                data.extend_from_slice(&plane[y * self.width + x0..y * self.width + x0 + width]);
            }
        }
        Ok(Image {
            height,
            width,
            channels: self.channels,
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Image) -> Option<f32> {
        if (self.height, self.width, self.channels) != (other.height, other.width, other.channels) {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max),
        )
    }

    /// Loads a PNG (or any format the `image` crate was built with).
    /// Grayscale stays single-channel; alpha is dropped.
    pub fn load(path: &Path) -> Result<Image> {
        let dynimg = ::image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
        let gray = matches!(
            dynimg.color(),
            ::image::ColorType::L8 | ::image::ColorType::L16 | ::image::ColorType::La8 | ::image::ColorType::La16
        );
        if gray {
            let buf = dynimg.to_luma32f();
            Image::from_planar(h, w, 1, buf.into_raw())
        } else {
            let buf = dynimg.to_rgb32f();
            let raw = buf.into_raw();
            let n = h * w;
            let mut data = vec![0.0; 3 * n];
            for (i, px) in raw.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    data[c * n + i] = px[c];
                }
            }
            Image::from_planar(h, w, 3, data)
        }
    }

    /// Writes an 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let to_u8 = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let n = self.height * self.width;
        let (w, h) = (self.width as u32, self.height as u32);
        let result = if self.channels == 1 {
            let raw: Vec<u8> = self.data.iter().map(|&v| to_u8(v)).collect();
            ::image::GrayImage::from_raw(w, h, raw)
                .expect("buffer length matches dimensions")
                .save(path)
        } else {
            let mut raw = Vec::with_capacity(3 * n);
            for i in 0..n {
                for c in 0..3 {
                    raw.push(to_u8(self.data[c * n + i]));
                }
            }
            ::image::RgbImage::from_raw(w, h, raw)
                .expect("buffer length matches dimensions")
                .save(path)
        };
        result.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Rounds every sample to the nearest 8-bit level, as a PNG round trip would.
    pub fn quantized(&self) -> Image {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = f32::from((v.clamp(0.0, 1.0) * 255.0).round() as u8) / 255.0;
        }
        out
    }
}

pub(crate) fn clamp_unit(data: &mut [f32]) {
    for v in data {
        *v = v.clamp(0.0, 1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Image::new(0, 3, 1).is_err());
        assert!(Image::new(3, 3, 2).is_err());
        assert!(Image::from_planar(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::from_planar(1, 1, 1, vec![f32::NAN]).is_err());
    }

    #[test]
    fn clamps_on_write() {
        let img = Image::from_planar(1, 2, 1, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn crop_and_rgb() {
        let img = Image::from_fn(4, 5, 1, |_, y, x| (y * 5 + x) as f32 / 20.0).unwrap();
        let c = img.crop(1, 2, 2, 3).unwrap();
        assert_eq!(c.get(0, 0, 0), img.get(0, 1, 2));
        assert_eq!(c.get(0, 1, 2), img.get(0, 2, 4));
        assert!(img.crop(3, 0, 2, 2).is_err());
        let rgb = c.to_rgb();
        assert_eq!(rgb.channels(), 3);
        assert_eq!(rgb.plane(2), c.plane(0));
    }

    #[test]
    fn png_round_trip_is_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::from_fn(6, 7, 3, |c, y, x| ((c + y * 3 + x * 5) % 11) as f32 / 10.3).unwrap();
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        let back = Image::load(&path).unwrap();
        assert_eq!(back, img.quantized());

        let gray = Image::from_fn(3, 3, 1, |_, y, x| (y + x) as f32 / 4.0).unwrap();
        let path = dir.path().join("g.png");
        gray.save_png(&path).unwrap();
        assert_eq!(Image::load(&path).unwrap().channels(), 1);
    }
}
