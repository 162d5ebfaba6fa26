use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB raster with linear values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self { width, height, data }
    }

    /// Wraps interleaved RGB samples. Values are clamped into `[0, 1]`.
    pub fn from_raw(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Contract(format!(
                "raw buffer has {} samples, expected {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::Contract("raw buffer contains NaN".into()));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Interleaved samples, row-major.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = (y * self.width + x) * 3;
        for (c, v) in rgb.into_iter().enumerate() {
            self.data[i + c] = v.clamp(0.0, 1.0);
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Box-filtered downsample by an integer factor; trailing partial blocks are dropped.
    pub fn downsample(&self, factor: usize) -> Result<ImageBuffer> {
        if factor == 0 || factor > self.width || factor > self.height {
            return Err(Error::Contract(format!("cannot downsample {}x{} by {factor}", self.width, self.height)));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let norm = 1.0 / (factor * factor) as f64;
        let mut out = ImageBuffer::filled(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let p = self.pixel(x * factor + dx, y * factor + dy);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                out.set_pixel(x, y, acc.map(|v| v * norm));
            }
        }
        Ok(out)
    }

    /// 8-bit quantization, `round(255 * v)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8).collect()
    }

    /// Writes an 8-bit PNG. Samples are stored as-is (no transfer curve).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer length matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
    }

    /// Reads any 8/16-bit image the `image` crate decodes and maps samples to
    /// `[0, 1]` linearly, the inverse of [`ImageBuffer::save_png`].
    pub fn load(path: impl AsRef<Path>) -> Result<ImageBuffer> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image { path: path.to_path_buf(), message: other.to_string() },
        })?;
        let rgb = img.to_rgb32f();
        let (w, h) = rgb.dimensions();
        let data = rgb.into_raw().into_iter().map(|v| v as f64).collect();
        ImageBuffer::from_raw(w as usize, h as usize, data)
    }
}
