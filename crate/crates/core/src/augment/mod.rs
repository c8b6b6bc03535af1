//! Stochastic view generation.
//!
//! Every op takes an explicit rng and returns a new image clamped to
//! `[0, 1]`. With neutral parameters each op returns its input bit for bit.

mod image;
mod ops;
pub mod pgm;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use image::Image;
pub use ops::{
    adjust_brightness, adjust_contrast, adjust_hue, adjust_saturation, bin_cdf, blur_with, color_distort,
    crop_resize, displacement_field, elastic_deform, elastic_with, eq_bin, gaussian_blur, gaussian_taps,
    histogram_equalize, kernel_side, random_crop_resize, rotate, rotate_by, sample, sample_crop_window, Border,
    CropWindow, EQ_BINS,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CropParams {
    pub area_range: [f64; 2],
    pub aspect_range: [f64; 2],
    pub flip_probability: f64,
}

impl Default for CropParams {
    fn default() -> Self {
        CropParams { area_range: [0.08, 1.0], aspect_range: [0.75, 4.0 / 3.0], flip_probability: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColorParams {
    pub strength: f64,
}

impl Default for ColorParams {
    fn default() -> Self {
        ColorParams { strength: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotationParams {
    pub range_degrees: [f64; 2],
}

impl Default for RotationParams {
    fn default() -> Self {
        RotationParams { range_degrees: [-45.0, 45.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlurParams {
    pub probability: f64,
    pub sigma_range: [f64; 2],
    pub kernel_frac: f64,
}

impl Default for BlurParams {
    fn default() -> Self {
        BlurParams { probability: 0.5, sigma_range: [0.1, 2.0], kernel_frac: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElasticParams {
    pub alpha: f64,
    pub sigma: f64,
}

impl Default for ElasticParams {
    fn default() -> Self {
        ElasticParams { alpha: 1.0, sigma: 3.0 }
    }
}

/// Enabled ops and their parameters. A missing section disables the op.
/// Application order: crop (with flip), equalization, elastic, rotation,
/// color, blur.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub crop: Option<CropParams>,
    pub color: Option<ColorParams>,
    pub rotation: Option<RotationParams>,
    pub blur: Option<BlurParams>,
    pub equalize: bool,
    pub elastic: Option<ElasticParams>,
    /// `[height, width]`; defaults to the source size.
    pub out_size: Option<[usize; 2]>,
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be in [0, 1], got {p}")))
    }
}

impl AugmentPolicy {
    /// Crop, color and blur as used for natural-image contrastive training.
    pub fn natural() -> Self {
        AugmentPolicy {
            crop: Some(CropParams::default()),
            color: Some(ColorParams::default()),
            blur: Some(BlurParams::default()),
            ..Default::default()
        }
    }

    /// Crop, rotation, equalization and elastic deformation.
    pub fn medical() -> Self {
        AugmentPolicy {
            crop: Some(CropParams::default()),
            rotation: Some(RotationParams::default()),
            equalize: true,
            elastic: Some(ElasticParams::default()),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.crop {
            ops::check_crop_ranges(c.area_range, c.aspect_range).map_err(|e| Error::Config(e.to_string()))?;
            check_probability("flip probability", c.flip_probability)?;
        }
        if let Some(c) = &self.color {
            if !(c.strength >= 0.0) {
                return Err(Error::Config(format!("color strength must be >= 0, got {}", c.strength)));
            }
        }
        if let Some(r) = &self.rotation {
            let [lo, hi] = r.range_degrees;
            if lo != -hi || lo > hi {
                return Err(Error::Config(format!("rotation range {:?} must be symmetric about 0", r.range_degrees)));
            }
        }
        if let Some(b) = &self.blur {
            check_probability("blur probability", b.probability)?;
            if !(b.sigma_range[0] > 0.0 && b.sigma_range[0] <= b.sigma_range[1]) {
                return Err(Error::Config(format!("blur sigma range {:?} must be positive", b.sigma_range)));
            }
            if !(b.kernel_frac > 0.0 && b.kernel_frac <= 1.0) {
                return Err(Error::Config(format!("blur kernel fraction {} outside (0, 1]", b.kernel_frac)));
            }
        }
        if let Some(e) = &self.elastic {
            if !(e.alpha >= 0.0 && e.sigma > 0.0) {
                return Err(Error::Config("elastic alpha must be >= 0 and sigma > 0".into()));
            }
        }
        if let Some([h, w]) = self.out_size {
            if h == 0 || w == 0 {
                return Err(Error::Config("augment out_size must be nonzero".into()));
            }
        }
        Ok(())
    }

    /// Applies the policy once.
    pub fn apply(&self, img: &Image, rng: &mut impl Rng) -> Result<Image> {
        let [oh, ow] = self.out_size.unwrap_or([img.height(), img.width()]);
        let mut out = match &self.crop {
            Some(c) => {
                ops::check_crop_ranges(c.area_range, c.aspect_range)?;
                let window = sample_crop_window(rng, c.area_range, c.aspect_range);
                let flip = rng.gen::<f64>() < c.flip_probability;
                crop_resize(img, window, oh, ow, flip)?
            }
            None if [oh, ow] != [img.height(), img.width()] => crop_resize(img, CropWindow::FULL, oh, ow, false)?,
            None => img.clone(),
        };
        if self.equalize {
            out = histogram_equalize(&out);
        }
        if let Some(e) = &self.elastic {
            out = elastic_deform(&out, rng, e.alpha, e.sigma)?;
        }
        if let Some(r) = &self.rotation {
            out = rotate(&out, rng, r.range_degrees);
        }
        if let Some(c) = &self.color {
            out = color_distort(&out, rng, c.strength);
        }
        if let Some(b) = &self.blur {
            out = gaussian_blur(&out, rng, b.sigma_range, b.kernel_frac, b.probability)?;
        }
        Ok(out)
    }
}

/// Uniform index into a record's `k` views; no draw when `k == 1`.
pub fn select_view(k: usize, rng: &mut impl Rng) -> usize {
    if k > 1 {
        rng.gen_range(0..k)
    } else {
        0
    }
}

/// Picks one of `views`, then applies `policy` twice with independent draws.
pub fn make_view_pair(views: &[Image], policy: &AugmentPolicy, rng: &mut impl Rng) -> Result<(Image, Image)> {
    if views.is_empty() {
        return Err(Error::Empty("record has no images".into()));
    }
    let src = &views[select_view(views.len(), rng)];
    let a = policy.apply(src, rng)?;
    let b = policy.apply(src, rng)?;
    Ok((a, b))
}

#[cfg(test)]
mod tests;
