//! Grayscale image container plus the filtering, resampling and geometric
//! transforms shared by feature extraction, hashing and the robustness suites.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major single-channel image with real-valued intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::dim(format!(
                "{} pixels supplied for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    #[inline]
    pub fn row(&self, y: usize) -> &[f32] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Pixel lookup with edge replication outside the frame.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear sample at a real-valued position; coordinates are clamped to the frame.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn mean(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Copy of the window `[x0, x0+w) x [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::dim(format!(
                "crop window {w}x{h}+{x0}+{y0} does not fit a {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            pixels.extend_from_slice(&self.row(y)[x0..x0 + w]);
        }
        Ok(GrayImage {
            width: w,
            height: h,
            pixels,
        })
    }

    /// Root-mean-square difference; images must share dimensions.
    pub fn rms_diff(&self, other: &GrayImage) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::dim("rms_diff on images of different size"));
        }
        let ss: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(&a, &b)| {
                let d = (a - b) as f64;
                d * d
            })
            .sum();
        Ok((ss / self.pixels.len().max(1) as f64).sqrt())
    }
}

/// Sampled, normalized 1-D Gaussian with radius `ceil(4 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (4.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|&v| (v / sum) as f32).collect()
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("blur sigma must be positive, got {sigma}")));
    }
    Ok(convolve_separable(img, &gaussian_kernel(sigma)))
}

pub(crate) fn convolve_separable(img: &GrayImage, kernel: &[f32]) -> GrayImage {
    let (w, h) = (img.width, img.height);
    if w == 0 || h == 0 {
        return img.clone();
    }
    let r = kernel.len() / 2;

    // Horizontal pass over a padded row buffer.
    let mut tmp = vec![0f32; w * h];
    let mut padded = vec![0f32; w + 2 * r];
    for y in 0..h {
        let row = img.row(y);
        padded[..r].fill(row[0]);
        padded[r..r + w].copy_from_slice(row);
        padded[r + w..].fill(row[w - 1]);
        let out = &mut tmp[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let win = &padded[x..x + kernel.len()];
            *o = win.iter().zip(kernel).map(|(a, b)| a * b).sum();
        }
    }

    // Vertical pass accumulates whole rows so the inner loop stays contiguous.
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        let dst = &mut out[y * w..(y + 1) * w];
        for (k, &kv) in kernel.iter().enumerate() {
            let sy = (y as isize + k as isize - r as isize).clamp(0, h as isize - 1) as usize;
            let src = &tmp[sy * w..(sy + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    GrayImage {
        width: w,
        height: h,
        pixels: out,
    }
}

fn resampled_dim(n: usize, factor: f64) -> usize {
    if factor > 1.0 {
        (n as f64 * factor).round() as usize
    } else {
        (n as f64 * factor).floor() as usize
    }
}

/// Bilinear resampling by `factor`. Output sample `i` reads input position `i / factor`.
pub fn resample(img: &GrayImage, factor: f64) -> Result<GrayImage> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(Error::param(format!("resample factor must be positive, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(img.clone());
    }
    let w = resampled_dim(img.width, factor);
    let h = resampled_dim(img.height, factor);
    if w < 8 || h < 8 {
        return Err(Error::dim(format!(
            "resampling {}x{} by {factor} gives {w}x{h}, below 8x8",
            img.width, img.height
        )));
    }
    let inv = 1.0 / factor;
    Ok(GrayImage::from_fn(w, h, |x, y| {
        img.sample_bilinear((x as f64 * inv) as f32, (y as f64 * inv) as f32)
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Top,
    Bottom,
    Left,
    Right,
}

/// Geometric perturbation applied to a response before re-identification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Transform {
    Identity,
    /// Rotation in degrees about the image center; the canvas grows to the rotated bounding box.
    Rotate { degrees: f64 },
    Scale { factor: f64 },
    /// Removes `fraction / 2` of each dimension from every edge.
    CropFrame { fraction: f64 },
    /// Removes `fraction` of each dimension at the named corner.
    CropCorner { fraction: f64, corner: Corner },
    /// Removes `fraction` of the extent perpendicular to the named side.
    CropSide { fraction: f64, side: Side },
    /// Zero-fills a centered rectangle covering `fraction` of the image area.
    CropCenter { fraction: f64 },
    /// Keeps only a centered window whose sides are `1 - fraction` of the original.
    KeepCenter { fraction: f64 },
}

impl Transform {
    pub fn validate(&self) -> Result<()> {
        let frac_ok = |f: f64| f > 0.0 && f < 1.0;
        let ok = match *self {
            Transform::Identity => true,
            Transform::Rotate { degrees } => (0.0..360.0).contains(&degrees),
            Transform::Scale { factor } => factor > 0.0 && factor.is_finite(),
            Transform::CropFrame { fraction }
            | Transform::CropCorner { fraction, .. }
            | Transform::CropSide { fraction, .. }
            | Transform::CropCenter { fraction }
            | Transform::KeepCenter { fraction } => frac_ok(fraction),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("invalid transform {self:?}")))
        }
    }

    /// Short stable label used in report files.
    pub fn label(&self) -> String {
        match *self {
            Transform::Identity => "identity".into(),
            Transform::Rotate { degrees } => format!("rotate-{degrees}"),
            Transform::Scale { factor } => format!("scale-{factor}"),
            Transform::CropFrame { fraction } => format!("crop-frame-{fraction}"),
            Transform::CropCorner { fraction, corner } => {
                let c = match corner {
                    Corner::TopLeft => "tl",
                    Corner::TopRight => "tr",
                    Corner::BottomLeft => "bl",
                    Corner::BottomRight => "br",
                };
                format!("crop-corner-{c}-{fraction}")
            }
            Transform::CropSide { fraction, side } => {
                let s = match side {
                    Side::Top => "top",
                    Side::Bottom => "bottom",
                    Side::Left => "left",
                    Side::Right => "right",
                };
                format!("crop-side-{s}-{fraction}")
            }
            Transform::CropCenter { fraction } => format!("crop-center-{fraction}"),
            Transform::KeepCenter { fraction } => format!("keep-center-{fraction}"),
        }
    }
}

fn frac_px(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

pub fn apply_transform(img: &GrayImage, t: &Transform) -> Result<GrayImage> {
    t.validate()?;
    let (w, h) = (img.width, img.height);
    match *t {
        Transform::Identity => Ok(img.clone()),
        Transform::Rotate { degrees } => Ok(rotate(img, degrees)),
        Transform::Scale { factor } => resample(img, factor),
        Transform::CropFrame { fraction } => {
            let mx = frac_px(w, fraction / 2.0);
            let my = frac_px(h, fraction / 2.0);
            img.crop(mx, my, w.saturating_sub(2 * mx), h.saturating_sub(2 * my))
        }
        Transform::CropCorner { fraction, corner } => {
            let mx = frac_px(w, fraction);
            let my = frac_px(h, fraction);
            let (x0, y0) = match corner {
                Corner::TopLeft => (mx, my),
                Corner::TopRight => (0, my),
                Corner::BottomLeft => (mx, 0),
                Corner::BottomRight => (0, 0),
            };
            img.crop(x0, y0, w.saturating_sub(mx), h.saturating_sub(my))
        }
        Transform::CropSide { fraction, side } => {
            let mx = frac_px(w, fraction);
            let my = frac_px(h, fraction);
            match side {
                Side::Left => img.crop(mx, 0, w.saturating_sub(mx), h),
                Side::Right => img.crop(0, 0, w.saturating_sub(mx), h),
                Side::Top => img.crop(0, my, w, h.saturating_sub(my)),
                Side::Bottom => img.crop(0, 0, w, h.saturating_sub(my)),
            }
        }
        Transform::CropCenter { fraction } => {
            let side = fraction.sqrt();
            let bw = frac_px(w, side);
            let bh = frac_px(h, side);
            let x0 = (w - bw) / 2;
            let y0 = (h - bh) / 2;
            let mut out = img.clone();
            for y in y0..y0 + bh {
                out.pixels[y * w + x0..y * w + x0 + bw].fill(0.0);
            }
            Ok(out)
        }
        Transform::KeepCenter { fraction } => {
            let kw = frac_px(w, 1.0 - fraction);
            let kh = frac_px(h, 1.0 - fraction);
            img.crop((w - kw.min(w)) / 2, (h - kh.min(h)) / 2, kw, kh)
        }
    }
}

/// Rotation about the image center. Multiples of 90 degrees are exact pixel
/// permutations; other angles use bilinear interpolation on a canvas sized to
/// the rotated bounding box, zero outside the source frame.
fn rotate(img: &GrayImage, degrees: f64) -> GrayImage {
    let (w, h) = (img.width, img.height);
    let quarter = degrees / 90.0;
    if quarter.fract() == 0.0 {
        return match quarter as u32 % 4 {
            0 => img.clone(),
            1 => GrayImage::from_fn(h, w, |xn, yn| img.get(w - 1 - yn, xn)),
            2 => GrayImage::from_fn(w, h, |xn, yn| img.get(w - 1 - xn, h - 1 - yn)),
            _ => GrayImage::from_fn(h, w, |xn, yn| img.get(yn, h - 1 - xn)),
        };
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let nw = (w as f64 * c.abs() + h as f64 * s.abs()).round() as usize;
    let nh = (w as f64 * s.abs() + h as f64 * c.abs()).round() as usize;
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (ncx, ncy) = ((nw as f64 - 1.0) / 2.0, (nh as f64 - 1.0) / 2.0);
    GrayImage::from_fn(nw, nh, |xn, yn| {
        let dx = xn as f64 - ncx;
        let dy = yn as f64 - ncy;
        // Forward map is x' = c dx + s dy, y' = -s dx + c dy; invert it.
        let sx = c * dx - s * dy + cx;
        let sy = s * dx + c * dy + cy;
        if sx < -1e-9 || sy < -1e-9 || sx > w as f64 - 1.0 + 1e-9 || sy > h as f64 - 1.0 + 1e-9 {
            0.0
        } else {
            img.sample_bilinear(sx as f32, sy as f32)
        }
    })
}

/// Affine rescale to [0, 1]; constant images become all zeros.
pub fn normalize(img: &GrayImage) -> GrayImage {
    let (lo, hi) = img
        .pixels
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let pixels = if !(range > 0.0) {
        vec![0.0; img.pixels.len()]
    } else {
        img.pixels.iter().map(|&v| (v - lo) / range).collect()
    };
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}
