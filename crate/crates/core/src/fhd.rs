//! Gabor phase-sign hashing and fractional Hamming distance statistics.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaborParams {
    /// Carrier wavelength in pixels.
    pub wavelength: f64,
    /// Carrier directions in degrees, hashed in this order.
    pub orientations: Vec<f64>,
    /// Sampling grid as (rows, cols).
    pub grid: (usize, usize),
}

impl Default for GaborParams {
    fn default() -> Self {
        GaborParams {
            wavelength: 4.0,
            orientations: vec![0.0, 45.0, 90.0, 135.0],
            grid: (32, 32),
        }
    }
}

impl GaborParams {
    pub fn with_wavelength(wavelength: f64) -> Self {
        GaborParams {
            wavelength,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 1.0 && self.wavelength.is_finite()) {
            return Err(Error::param(format!("wavelength must exceed 1 px, got {}", self.wavelength)));
        }
        if self.orientations.is_empty() {
            return Err(Error::param("at least one orientation is required"));
        }
        if self.grid.0 == 0 || self.grid.1 == 0 {
            return Err(Error::param("grid must be non-empty"));
        }
        Ok(())
    }

    pub fn key_len(&self) -> usize {
        self.grid.0 * self.grid.1 * self.orientations.len()
    }
}

/// Fixed-length bit string, packed little-endian into 64-bit words.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryKey {
    len: usize,
    words: Vec<u64>,
}

impl BinaryKey {
    pub fn zeros(len: usize) -> Self {
        BinaryKey {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn from_bits(bits: impl IntoIterator<Item = bool>) -> Self {
        let mut key = BinaryKey::zeros(0);
        for b in bits {
            if key.len % 64 == 0 {
                key.words.push(0);
            }
            if b {
                key.words[key.len / 64] |= 1 << (key.len % 64);
            }
            key.len += 1;
        }
        key
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range for key of length {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Bitwise complement over the key length.
    pub fn not(&self) -> Self {
        let mut out = self.clone();
        for w in &mut out.words {
            *w = !*w;
        }
        out.clear_tail();
        out
    }

    fn clear_tail(&mut self) {
        let rem = self.len % 64;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    /// Lowercase hex, two digits per byte, bytes in bit order.
    pub fn to_hex(&self) -> String {
        let n_bytes = self.len.div_ceil(8);
        let mut s = String::with_capacity(n_bytes * 2);
        for i in 0..n_bytes {
            let byte = (self.words[i / 8] >> ((i % 8) * 8)) as u8;
            s.push_str(&format!("{byte:02x}"));
        }
        s
    }

    pub fn from_hex(hex: &str, len: usize) -> Result<Self> {
        if hex.len() != len.div_ceil(8) * 2 {
            return Err(Error::Format(format!("{} hex digits cannot hold {len} bits", hex.len())));
        }
        let mut key = BinaryKey::zeros(len);
        for (i, chunk) in hex.as_bytes().chunks(2).enumerate() {
            let text = std::str::from_utf8(chunk).map_err(|e| Error::Format(e.to_string()))?;
            let byte = u8::from_str_radix(text, 16).map_err(|e| Error::Format(format!("bad hex {text:?}: {e}")))?;
            key.words[i / 8] |= (byte as u64) << ((i % 8) * 8);
        }
        let before = key.words.clone();
        key.clear_tail();
        if key.words != before {
            return Err(Error::Format("bits set beyond the key length".into()));
        }
        Ok(key)
    }
}

#[derive(Serialize, Deserialize)]
struct KeyRepr {
    bits: usize,
    hex: String,
}

impl Serialize for BinaryKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KeyRepr {
            bits: self.len,
            hex: self.to_hex(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BinaryKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = KeyRepr::deserialize(d)?;
        BinaryKey::from_hex(&r.hex, r.bits).map_err(serde::de::Error::custom)
    }
}

/// Zero-mean complex Gabor kernel: Gaussian envelope with sigma = wavelength / 2.
struct GaborKernel {
    radius: isize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl GaborKernel {
    fn new(wavelength: f64, degrees: f64) -> Self {
        let sigma = 0.5 * wavelength;
        let radius = (3.0 * sigma).ceil() as isize;
        let side = (2 * radius + 1) as usize;
        let (s, c) = degrees.to_radians().sin_cos();
        let mut env = Vec::with_capacity(side * side);
        let mut re = Vec::with_capacity(side * side);
        let mut im = Vec::with_capacity(side * side);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let (x, y) = (dx as f64, dy as f64);
                let e = (-(x * x + y * y) / (2.0 * sigma * sigma)).exp();
                let phase = 2.0 * PI * (x * c + y * s) / wavelength;
                env.push(e);
                re.push(e * phase.cos());
                im.push(e * phase.sin());
            }
        }
        // Remove the DC response of the real part so uniform brightness changes cannot flip bits.
        let dc = re.iter().sum::<f64>() / env.iter().sum::<f64>();
        for (r, e) in re.iter_mut().zip(&env) {
            *r -= dc * e;
        }
        GaborKernel { radius, re, im }
    }

    fn respond(&self, img: &GrayImage, cx: isize, cy: isize) -> (f64, f64) {
        let side = 2 * self.radius + 1;
        let (mut re, mut im) = (0.0, 0.0);
        for dy in -self.radius..=self.radius {
            for dx in -self.radius..=self.radius {
                let k = ((dy + self.radius) * side + dx + self.radius) as usize;
                let v = img.get_clamped(cx + dx, cy + dy) as f64;
                re += self.re[k] * v;
                im += self.im[k] * v;
            }
        }
        (re, im)
    }
}

fn grid_centers(n: usize, cells: usize) -> Vec<isize> {
    (0..cells)
        .map(|i| ((i as f64 + 0.5) * n as f64 / cells as f64).floor() as isize)
        .collect()
}

/// Real parts of the Gabor responses at every grid point, orientation-major.
pub fn gabor_responses(img: &GrayImage, p: &GaborParams) -> Result<Vec<f64>> {
    p.validate()?;
    let (rows, cols) = p.grid;
    if img.width() < cols || img.height() < rows {
        return Err(Error::dim(format!(
            "image {}x{} is smaller than the {}x{} hash grid",
            img.width(),
            img.height(),
            cols,
            rows
        )));
    }
    let xs = grid_centers(img.width(), cols);
    let ys = grid_centers(img.height(), rows);
    let mut out = Vec::with_capacity(p.key_len());
    for &deg in &p.orientations {
        let kernel = GaborKernel::new(p.wavelength, deg);
        for &y in &ys {
            for &x in &xs {
                out.push(kernel.respond(img, x, y).0);
            }
        }
    }
    Ok(out)
}

/// Bit is set iff the real Gabor response is positive.
pub fn gabor_hash(img: &GrayImage, p: &GaborParams) -> Result<BinaryKey> {
    Ok(BinaryKey::from_bits(gabor_responses(img, p)?.into_iter().map(|v| v > 0.0)))
}

pub fn fhd(a: &BinaryKey, b: &BinaryKey) -> Result<f64> {
    if a.len != b.len {
        return Err(Error::param(format!("key lengths differ: {} vs {}", a.len, b.len)));
    }
    if a.len == 0 {
        return Err(Error::param("cannot compare empty keys"));
    }
    let diff: u32 = a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones()).sum();
    Ok(diff as f64 / a.len as f64)
}

/// Mean grain size as the full width at half maximum of the intensity autocorrelation,
/// averaged over the horizontal and vertical axes.
pub fn estimate_grain_size(img: &GrayImage) -> Result<f64> {
    let (w, h) = (img.width(), img.height());
    let max_lag = 32.min(w / 2).min(h / 2);
    if max_lag < 2 {
        return Err(Error::dim(format!("image {w}x{h} too small for grain estimation")));
    }
    let mean = img.mean() as f32;
    let centered: Vec<f32> = img.pixels().iter().map(|&v| v - mean).collect();
    let autocorr = |dx: usize, dy: usize| -> f64 {
        let mut acc = 0.0;
        for y in 0..h - dy {
            let a = &centered[y * w..y * w + w - dx];
            let b = &centered[(y + dy) * w + dx..(y + dy) * w + w];
            acc += a.iter().zip(b).map(|(&p, &q)| (p * q) as f64).sum::<f64>();
        }
        acc / ((w - dx) * (h - dy)) as f64
    };
    let zero = autocorr(0, 0);
    if !(zero > 0.0) {
        return Err(Error::param("constant image has no grain structure"));
    }
    let half_width = |horizontal: bool| -> f64 {
        let mut prev = 1.0;
        for lag in 1..=max_lag {
            let v = if horizontal { autocorr(lag, 0) } else { autocorr(0, lag) } / zero;
            if v <= 0.5 {
                return lag as f64 - 1.0 + (prev - 0.5) / (prev - v);
            }
            prev = v;
        }
        max_lag as f64
    };
    Ok(half_width(true) + half_width(false))
}

/// Mean grain size over `images`, used as the Gabor wavelength.
pub fn tuned_params<'a>(images: impl IntoIterator<Item = &'a GrayImage>) -> Result<GaborParams> {
    let sizes = images
        .into_iter()
        .map(estimate_grain_size)
        .collect::<Result<Vec<_>>>()?;
    if sizes.is_empty() {
        return Err(Error::param("no images to tune the wavelength on"));
    }
    let mean = sizes.iter().sum::<f64>() / sizes.len() as f64;
    let p = GaborParams::with_wavelength(mean);
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Summary {
            mean,
            std: var.sqrt(),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FhdStats {
    pub like: Vec<f64>,
    pub unlike: Vec<f64>,
    pub ideal_like: Vec<f64>,
}

impl FhdStats {
    pub fn like_summary(&self) -> Option<Summary> {
        Summary::of(&self.like)
    }

    pub fn unlike_summary(&self) -> Option<Summary> {
        Summary::of(&self.unlike)
    }

    pub fn ideal_like_summary(&self) -> Option<Summary> {
        Summary::of(&self.ideal_like)
    }

    /// Histogram over `[0, 1]` with `bins` equal bins: `(bin_center, like, unlike, ideal_like)`.
    pub fn histogram(&self, bins: usize) -> Vec<(f64, usize, usize, usize)> {
        let bins = bins.max(1);
        let index = |v: f64| ((v * bins as f64) as usize).min(bins - 1);
        let mut rows: Vec<(f64, usize, usize, usize)> = (0..bins)
            .map(|i| ((i as f64 + 0.5) / bins as f64, 0, 0, 0))
            .collect();
        for &v in &self.like {
            rows[index(v)].1 += 1;
        }
        for &v in &self.unlike {
            rows[index(v)].2 += 1;
        }
        for &v in &self.ideal_like {
            rows[index(v)].3 += 1;
        }
        rows
    }

    pub fn histogram_csv(&self, bins: usize) -> String {
        let mut s = String::from("bin_center,like_count,unlike_count,ideal_like_count\n");
        for (c, l, u, i) in self.histogram(bins) {
            s.push_str(&format!("{c:.4},{l},{u},{i}\n"));
        }
        s
    }
}

/// Like, unlike and ideal-like distributions for aligned response sets.
///
/// `t0[i]` and `t1[i]` must be responses to the same challenge.
pub fn fhd_stats(t0: &[&GrayImage], t1: &[&GrayImage], p: &GaborParams) -> Result<FhdStats> {
    if t0.len() != t1.len() {
        return Err(Error::param(format!(
            "response sets are misaligned: {} vs {} records",
            t0.len(),
            t1.len()
        )));
    }
    let keys0 = t0.par_iter().map(|img| gabor_hash(img, p)).collect::<Result<Vec<_>>>()?;
    let keys1 = t1.par_iter().map(|img| gabor_hash(img, p)).collect::<Result<Vec<_>>>()?;
    fhd_stats_from_keys(&keys0, &keys1)
}

pub fn fhd_stats_from_keys(keys0: &[BinaryKey], keys1: &[BinaryKey]) -> Result<FhdStats> {
    if keys0.len() != keys1.len() {
        return Err(Error::param("key sets are misaligned"));
    }
    let like = keys0.iter().zip(keys1).map(|(a, b)| fhd(a, b)).collect::<Result<Vec<_>>>()?;
    let ideal_like = keys0.iter().map(|a| fhd(a, a)).collect::<Result<Vec<_>>>()?;
    let unlike = (0..keys0.len())
        .into_par_iter()
        .map(|i| {
            (0..keys1.len())
                .filter(|&j| j != i)
                .map(|j| fhd(&keys0[i], &keys1[j]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(FhdStats {
        like,
        unlike,
        ideal_like,
    })
}
