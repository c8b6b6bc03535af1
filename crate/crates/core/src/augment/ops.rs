use rand::Rng;

use super::image::{clamp01, Image};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    /// Samples outside the image read as 0.
    Zero,
    /// Coordinates are clamped to the nearest edge pixel.
    Replicate,
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + t * (b - a)
    }
}

/// Bilinear sample of channel `c` at fractional `(y, x)`.
pub fn sample(img: &Image, c: usize, y: f64, x: f64, border: Border) -> f64 {
    let (h, w) = (img.height() as isize, img.width() as isize);
    let (y, x) = match border {
        Border::Replicate => (y.clamp(0.0, (h - 1) as f64), x.clamp(0.0, (w - 1) as f64)),
        Border::Zero => {
            if y <= -1.0 || x <= -1.0 || y >= h as f64 || x >= w as f64 {
                return 0.0;
            }
            (y, x)
        }
    };
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (yi, xi) = (y0 as isize, x0 as isize);
    let px = |yy: isize, xx: isize| -> f64 {
        match border {
            Border::Replicate => img.get(c, yy.clamp(0, h - 1) as usize, xx.clamp(0, w - 1) as usize),
            Border::Zero => {
                if yy < 0 || xx < 0 || yy >= h || xx >= w {
                    0.0
                } else {
                    img.get(c, yy as usize, xx as usize)
                }
            }
        }
    };
    let top = if fx == 0.0 { px(yi, xi) } else { lerp(px(yi, xi), px(yi, xi + 1), fx) };
    if fy == 0.0 {
        return top;
    }
    let bottom = if fx == 0.0 { px(yi + 1, xi) } else { lerp(px(yi + 1, xi), px(yi + 1, xi + 1), fx) };
    lerp(top, bottom, fy)
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

// ---------------------------------------------------------------- crop

/// Crop rectangle in fractions of the source height and width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub top: f64,
    pub left: f64,
    pub height: f64,
    pub width: f64,
}

impl CropWindow {
    pub const FULL: CropWindow = CropWindow { top: 0.0, left: 0.0, height: 1.0, width: 1.0 };

    pub fn area(&self) -> f64 {
        self.height * self.width
    }
}

pub(crate) fn check_crop_ranges(area_range: [f64; 2], aspect_range: [f64; 2]) -> Result<()> {
    let [a0, a1] = area_range;
    if !(a0 > 0.0 && a0 <= a1 && a1 <= 1.0) {
        return Err(Error::invalid(format!("crop area range {area_range:?} must lie in (0, 1]")));
    }
    let [r0, r1] = aspect_range;
    if !(r0 > 0.0 && r0 <= r1 && r1.is_finite()) {
        return Err(Error::invalid(format!("crop aspect range {aspect_range:?} must be positive")));
    }
    Ok(())
}

/// Inception-style window: area fraction uniform in `area_range`, log-aspect
/// uniform in `aspect_range` (relative to the source aspect). A side that
/// would exceed the image is clipped to 1 and the other side stretched so
/// the sampled area is kept.
pub fn sample_crop_window(rng: &mut impl Rng, area_range: [f64; 2], aspect_range: [f64; 2]) -> CropWindow {
    let area = uniform(rng, area_range[0], area_range[1]);
    let aspect = uniform(rng, aspect_range[0].ln(), aspect_range[1].ln()).exp();
    let (mut h, mut w) = ((area / aspect).sqrt(), (area * aspect).sqrt());
    if w > 1.0 {
        w = 1.0;
        h = area;
    } else if h > 1.0 {
        h = 1.0;
        w = area;
    }
    let top = uniform(rng, 0.0, 1.0 - h);
    let left = uniform(rng, 0.0, 1.0 - w);
    CropWindow { top, left, height: h, width: w }
}

/// Resamples `window` of `img` to `out_h x out_w` with bilinear
/// interpolation, optionally mirrored left to right.
pub fn crop_resize(img: &Image, window: CropWindow, out_h: usize, out_w: usize, flip: bool) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!("output size {out_h}x{out_w} is empty")));
    }
    let (h, w) = (img.height() as f64, img.width() as f64);
    let (y0, x0) = (window.top * h, window.left * w);
    let (sy, sx) = (window.height * h / out_h as f64, window.width * w / out_w as f64);
    let mut out = Vec::with_capacity(out_h * out_w * img.channels());
    for c in 0..img.channels() {
        for i in 0..out_h {
            let y = y0 + (i as f64 + 0.5) * sy - 0.5;
            for j in 0..out_w {
                let jj = if flip { out_w - 1 - j } else { j };
                let x = x0 + (jj as f64 + 0.5) * sx - 0.5;
                out.push(clamp01(sample(img, c, y, x, Border::Replicate)));
            }
        }
    }
    Ok(Image::from_raw(out_h, out_w, img.channels(), out))
}

pub fn random_crop_resize(
    img: &Image,
    rng: &mut impl Rng,
    area_range: [f64; 2],
    aspect_range: [f64; 2],
    out_size: [usize; 2],
) -> Result<Image> {
    check_crop_ranges(area_range, aspect_range)?;
    if out_size[0] == 0 || out_size[1] == 0 {
        return Err(Error::invalid(format!("output size {out_size:?} is empty")));
    }
    let window = sample_crop_window(rng, area_range, aspect_range);
    crop_resize(img, window, out_size[0], out_size[1], false)
}

// ---------------------------------------------------------------- color

pub fn adjust_brightness(img: &Image, delta: f64) -> Image {
    if delta == 0.0 {
        return img.clone();
    }
    img.map(|p| p + delta)
}

/// `(p − µ)·factor + µ` with µ the mean luminance.
pub fn adjust_contrast(img: &Image, factor: f64) -> Image {
    if factor == 1.0 {
        return img.clone();
    }
    let lum = img.luminance();
    let mu = lum.iter().sum::<f64>() / lum.len() as f64;
    img.map(|p| (p - mu) * factor + mu)
}

/// Blends each pixel toward its luminance; grayscale images are returned as is.
pub fn adjust_saturation(img: &Image, factor: f64) -> Image {
    if factor == 1.0 || img.channels() == 1 {
        return img.clone();
    }
    let lum = img.luminance();
    let n = lum.len();
    let px = img.pixels().iter().enumerate().map(|(k, &p)| clamp01(lum[k % n] + factor * (p - lum[k % n]))).collect();
    Image::from_raw(img.height(), img.width(), 3, px)
}

/// Rotates hue by `shift` turns; grayscale images are returned as is.
pub fn adjust_hue(img: &Image, shift: f64) -> Image {
    if shift == 0.0 || img.channels() == 1 {
        return img.clone();
    }
    let n = img.height() * img.width();
    let mut out = img.pixels().to_vec();
    for i in 0..n {
        let (h, s, v) = rgb_to_hsv(out[i], out[n + i], out[2 * n + i]);
        let (r, g, b) = hsv_to_rgb((h + shift).rem_euclid(1.0), s, v);
        out[i] = clamp01(r);
        out[n + i] = clamp01(g);
        out[2 * n + i] = clamp01(b);
    }
    Image::from_raw(img.height(), img.width(), 3, out)
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Jitter amplitudes at strength `s`: brightness ±0.4s (additive),
/// contrast and saturation factors in `1 ± 0.8s`, hue ±0.2s turns.
/// Adjustments are applied in that order; all four draws are always made.
pub fn color_distort(img: &Image, rng: &mut impl Rng, strength: f64) -> Image {
    let s = strength.max(0.0);
    let brightness = uniform(rng, -0.4 * s, 0.4 * s);
    let contrast = uniform(rng, (1.0 - 0.8 * s).max(0.0), 1.0 + 0.8 * s);
    let saturation = uniform(rng, (1.0 - 0.8 * s).max(0.0), 1.0 + 0.8 * s);
    let hue = uniform(rng, -0.2 * s, 0.2 * s);
    if s == 0.0 {
        return img.clone();
    }
    let out = adjust_brightness(img, brightness);
    let out = adjust_contrast(&out, contrast);
    let out = adjust_saturation(&out, saturation);
    adjust_hue(&out, hue)
}

// ---------------------------------------------------------------- blur

/// `max(1, round(frac·dim))`, bumped to the next odd number.
pub fn kernel_side(frac: f64, dim: usize) -> usize {
    let k = ((frac * dim as f64).round() as usize).max(1);
    if k % 2 == 0 {
        k + 1
    } else {
        k
    }
}

/// Unnormalized Gaussian taps for offsets `-r..=r`, `side = 2r + 1`.
pub fn gaussian_taps(sigma: f64, side: usize) -> Vec<f64> {
    let r = (side / 2) as isize;
    (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect()
}

/// 1-D correlation along rows (`axis = 1`) or columns (`axis = 0`) of an
/// `h x w` plane. Taps falling outside are dropped and the rest
/// renormalized; the sum is taken relative to the centre pixel so constant
/// regions come out bit-exact.
fn convolve_axis(plane: &[f64], h: usize, w: usize, taps: &[f64], axis: usize) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let mut out = vec![0.0; plane.len()];
    for y in 0..h {
        for x in 0..w {
            let centre = plane[y * w + x];
            let (mut acc, mut norm) = (0.0, taps[r as usize]);
            for d in (-r..=r).filter(|&d| d != 0) {
                let (yy, xx) = if axis == 0 { (y as isize + d, x as isize) } else { (y as isize, x as isize + d) };
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    continue;
                }
                let t = taps[(d + r) as usize];
                acc += t * (plane[yy as usize * w + xx as usize] - centre);
                norm += t;
            }
            out[y * w + x] = centre + acc / norm;
        }
    }
    out
}

pub(crate) fn smooth_plane(plane: &[f64], h: usize, w: usize, sigma: f64, side_h: usize, side_w: usize) -> Vec<f64> {
    let rows = convolve_axis(plane, h, w, &gaussian_taps(sigma, side_w), 1);
    convolve_axis(&rows, h, w, &gaussian_taps(sigma, side_h), 0)
}

/// Separable Gaussian blur with explicit odd kernel sides.
pub fn blur_with(img: &Image, sigma: f64, side_h: usize, side_w: usize) -> Result<Image> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("blur sigma must be > 0, got {sigma}")));
    }
    if side_h % 2 == 0 || side_w % 2 == 0 {
        return Err(Error::invalid(format!("kernel sides must be odd, got {side_h}x{side_w}")));
    }
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(img.pixels().len());
    for c in 0..img.channels() {
        out.extend(smooth_plane(img.plane(c), h, w, sigma, side_h, side_w).into_iter().map(clamp01));
    }
    Ok(Image::from_raw(h, w, img.channels(), out))
}

pub fn gaussian_blur(
    img: &Image,
    rng: &mut impl Rng,
    sigma_range: [f64; 2],
    kernel_frac: f64,
    probability: f64,
) -> Result<Image> {
    if !(sigma_range[0] > 0.0 && sigma_range[0] <= sigma_range[1]) {
        return Err(Error::invalid(format!("blur sigma range {sigma_range:?} must be positive")));
    }
    if !(kernel_frac > 0.0 && kernel_frac <= 1.0) {
        return Err(Error::invalid(format!("kernel fraction {kernel_frac} outside (0, 1]")));
    }
    let u: f64 = rng.gen();
    let sigma = uniform(rng, sigma_range[0], sigma_range[1]);
    if u >= probability {
        return Ok(img.clone());
    }
    blur_with(img, sigma, kernel_side(kernel_frac, img.height()), kernel_side(kernel_frac, img.width()))
}

// ---------------------------------------------------------------- rotation

fn exact_sin_cos(degrees: f64) -> (f64, f64) {
    let d = degrees.rem_euclid(360.0);
    match d {
        d if d == 0.0 => (0.0, 1.0),
        d if d == 90.0 => (1.0, 0.0),
        d if d == 180.0 => (0.0, -1.0),
        d if d == 270.0 => (-1.0, 0.0),
        d => d.to_radians().sin_cos(),
    }
}

/// Rotation about the image centre. With `y` pointing down, a positive
/// angle turns content clockwise on screen; `90°` maps `out[y][x]` to
/// `src[h−1−x][y]` on square images. Uncovered pixels are 0.
pub fn rotate_by(img: &Image, degrees: f64) -> Image {
    let (sin, cos) = exact_sin_cos(degrees);
    let (h, w) = (img.height(), img.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(img.pixels().len());
    for c in 0..img.channels() {
        for y in 0..h {
            let dy = y as f64 - cy;
            for x in 0..w {
                let dx = x as f64 - cx;
                let sx = cx + (cos * dx + sin * dy);
                let sy = cy + (cos * dy - sin * dx);
                out.push(clamp01(sample(img, c, sy, sx, Border::Zero)));
            }
        }
    }
    Image::from_raw(h, w, img.channels(), out)
}

pub fn rotate(img: &Image, rng: &mut impl Rng, range_degrees: [f64; 2]) -> Image {
    let angle = uniform(rng, range_degrees[0], range_degrees[1]);
    rotate_by(img, angle)
}

// ---------------------------------------------------------------- equalization

pub const EQ_BINS: usize = 256;

#[inline]
pub fn eq_bin(v: f64) -> usize {
    ((v * EQ_BINS as f64).floor() as usize).min(EQ_BINS - 1)
}

/// Empirical CDF over the 256 quantization bins.
pub fn bin_cdf(values: &[f64]) -> [f64; EQ_BINS] {
    let mut counts = [0usize; EQ_BINS];
    for &v in values {
        counts[eq_bin(v)] += 1;
    }
    let mut cdf = [0.0; EQ_BINS];
    let mut acc = 0;
    for (b, c) in counts.iter().enumerate() {
        acc += c;
        cdf[b] = acc as f64 / values.len() as f64;
    }
    cdf
}

/// `v → (cdf(v) − cdf_min) / (1 − cdf_min)` on luminance. Images whose
/// pixels all share a bin are returned unchanged. Colour images get the
/// luminance change added to every channel.
pub fn histogram_equalize(img: &Image) -> Image {
    let lum = img.luminance();
    let cdf = bin_cdf(&lum);
    let cdf_min = cdf.iter().copied().find(|&c| c > 0.0).unwrap_or(1.0);
    if cdf_min >= 1.0 {
        return img.clone();
    }
    let map = |v: f64| (cdf[eq_bin(v)] - cdf_min) / (1.0 - cdf_min);
    if img.channels() == 1 {
        return img.map(map);
    }
    let n = lum.len();
    let px = img.pixels().iter().enumerate().map(|(k, &p)| clamp01(p + map(lum[k % n]) - lum[k % n])).collect();
    Image::from_raw(img.height(), img.width(), 3, px)
}

// ---------------------------------------------------------------- elastic

/// Smoothed displacement field `(dy, dx)`, each U(−1, 1) per pixel before
/// smoothing, unscaled.
pub fn displacement_field(rng: &mut impl Rng, h: usize, w: usize, sigma: f64) -> (Vec<f64>, Vec<f64>) {
    let side = 2 * (3.0 * sigma).ceil() as usize + 1;
    let mut raw = || -> Vec<f64> { (0..h * w).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let dy = raw();
    let dx = raw();
    (smooth_plane(&dy, h, w, sigma, side, side), smooth_plane(&dx, h, w, sigma, side, side))
}

/// Resamples `img` at `p + alpha·field(p)` with edge replication.
pub fn elastic_with(img: &Image, dy: &[f64], dx: &[f64], alpha: f64) -> Image {
    if alpha == 0.0 {
        return img.clone();
    }
    let (h, w) = (img.height(), img.width());
    let mut out = Vec::with_capacity(img.pixels().len());
    for c in 0..img.channels() {
        for y in 0..h {
            for x in 0..w {
                let k = y * w + x;
                out.push(clamp01(sample(img, c, y as f64 + alpha * dy[k], x as f64 + alpha * dx[k], Border::Replicate)));
            }
        }
    }
    Image::from_raw(h, w, img.channels(), out)
}

pub fn elastic_deform(img: &Image, rng: &mut impl Rng, alpha: f64, sigma: f64) -> Result<Image> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("elastic alpha must be >= 0, got {alpha}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("elastic sigma must be > 0, got {sigma}")));
    }
    let (dy, dx) = displacement_field(rng, img.height(), img.width(), sigma);
    Ok(elastic_with(img, &dy, &dx, alpha))
}
