use crate::error::{Error, Result};

/// Planar (channel-major) image with pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!("images have 1 or 3 channels, got {channels}")));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("image extent {height}x{width} is empty")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "{channels}x{height}x{width} image needs {} pixels, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid(format!("pixel value {p} outside [0, 1]")));
        }
        Ok(Image { height, width, channels, pixels })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from `f(channel, y, x)`; values are clamped.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    pixels.push(clamp01(f(c, y, x)));
                }
            }
        }
        Self::new(height, width, channels, pixels)
    }

    /// Unchecked constructor for internal ops that already clamp.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), height * width * channels);
        Image { height, width, channels, pixels }
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

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Per-pixel luminance (Rec. 601 weights); the pixel plane itself for grayscale.
    pub fn luminance(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.pixels.clone();
        }
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        (0..r.len()).map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).collect()
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_raw(self.height, self.width, self.channels, self.pixels.iter().map(|&p| clamp01(f(p))).collect())
    }
}

#[inline]
pub(crate) fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}
