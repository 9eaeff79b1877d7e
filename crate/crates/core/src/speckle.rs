//! Synthetic far-field speckle generator standing in for the optical bench.
//!
//! A binary challenge pattern is imprinted on a coherent beam inside a circular
//! pupil, multiplied by the PUF's random phase screen and propagated to the far
//! field with a 2-D DFT. The camera sees the tone-mapped intensity, with optional
//! re-acquisition noise, sub-pixel jitter and gain drift.

use std::sync::Arc;

use num_complex::Complex32;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{gaussian_kernel, GrayImage};

/// Side of the square simulation grid.
pub const SIM_SIZE: usize = 512;
pub const FRAME_WIDTH: usize = 360;
pub const FRAME_HEIGHT: usize = 270;

/// Derives an independent 64-bit seed for `(seed, domain, index)`.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(domain.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    for _ in 0..2 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const DOMAIN_CHALLENGE: u64 = 1;
const DOMAIN_ACQUISITION: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    Ps,
    Pdlc,
    Tio2,
}

impl Archetype {
    pub fn preset(self) -> ArchetypePreset {
        match self {
            // Polystyrene monolayer: intermediate grain size and contrast.
            Archetype::Ps => ArchetypePreset {
                grain_px: 4.3,
                phase_corr_px: 0.0,
                contrast_gain: 0.85,
                background: 0.05,
            },
            // Liquid-crystal droplets: full contrast, grains sized for the richest feature yield.
            Archetype::Pdlc => ArchetypePreset {
                grain_px: 5.5,
                phase_corr_px: 0.0,
                contrast_gain: 1.0,
                background: 0.0,
            },
            // Strongly scattering, low transmission: washed-out grains on a bright haze.
            Archetype::Tio2 => ArchetypePreset {
                grain_px: 3.6,
                phase_corr_px: 0.0,
                contrast_gain: 0.55,
                background: 0.25,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Archetype::Ps => "ps",
            Archetype::Pdlc => "pdlc",
            Archetype::Tio2 => "tio2",
        }
    }
}

impl std::str::FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ps" => Ok(Archetype::Ps),
            "pdlc" => Ok(Archetype::Pdlc),
            "tio2" => Ok(Archetype::Tio2),
            other => Err(Error::param(format!("unknown archetype {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchetypePreset {
    /// Mean far-field grain size in camera pixels; sets the pupil diameter.
    pub grain_px: f64,
    /// Correlation length of the phase screen in simulation pixels (0 = white).
    pub phase_corr_px: f64,
    pub contrast_gain: f64,
    pub background: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChallengeSpec {
    pub id: u32,
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    /// Fraction of mirrors switched on.
    pub fill: f64,
}

impl ChallengeSpec {
    pub const DEFAULT_DIMS: (usize, usize) = (32, 32);

    pub fn new(id: u32, seed: u64) -> Self {
        ChallengeSpec {
            id,
            seed,
            rows: Self::DEFAULT_DIMS.0,
            cols: Self::DEFAULT_DIMS.1,
            fill: 0.5,
        }
    }
}

/// Seeded binary mask with exactly `round(fill * rows * cols)` on-pixels (value 1).
pub fn make_challenge(spec: &ChallengeSpec) -> Result<GrayImage> {
    if spec.rows < 8 || spec.cols < 8 {
        return Err(Error::dim(format!(
            "challenge grid must be at least 8x8, got {}x{}",
            spec.rows, spec.cols
        )));
    }
    if !(0.0..=1.0).contains(&spec.fill) {
        return Err(Error::param(format!("fill must lie in [0, 1], got {}", spec.fill)));
    }
    let total = spec.rows * spec.cols;
    let on = (spec.fill * total as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..total).collect();
    // Partial Fisher-Yates: the first `on` slots are a uniform random subset.
    for i in 0..on {
        let j = rng.random_range(i..total);
        order.swap(i, j);
    }
    let mut px = vec![0f32; total];
    for &k in &order[..on] {
        px[k] = 1.0;
    }
    GrayImage::from_vec(spec.cols, spec.rows, px)
}

/// A seeded scattering medium.
#[derive(Debug, Clone)]
pub struct PufModel {
    pub archetype: Archetype,
    pub seed: u64,
    pub grain_px: f64,
    pub phase_corr_px: f64,
    pub contrast_gain: f64,
    pub background: f64,
    /// Unit-amplitude transmission on the `SIM_SIZE x SIM_SIZE` grid.
    pub phase_screen: Arc<Vec<Complex32>>,
}

pub fn make_puf(archetype: Archetype, seed: u64) -> PufModel {
    make_puf_with(archetype, archetype.preset(), seed)
}

pub fn make_puf_with(archetype: Archetype, preset: ArchetypePreset, seed: u64) -> PufModel {
    let n = SIM_SIZE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut screen: Vec<Complex32> = (0..n * n)
        .map(|_| Complex32::from_polar(1.0, rng.random::<f32>() * std::f32::consts::TAU))
        .collect();
    if preset.phase_corr_px > 0.0 {
        // Smoothing random phasors and keeping only the argument yields a correlated
        // phase that is still uniform on the circle.
        let smooth = smooth_complex(&screen, n, preset.phase_corr_px);
        for (s, v) in screen.iter_mut().zip(smooth) {
            let norm = v.norm();
            *s = if norm > 0.0 { v / norm } else { Complex32::new(1.0, 0.0) };
        }
    }
    PufModel {
        archetype,
        seed,
        grain_px: preset.grain_px,
        phase_corr_px: preset.phase_corr_px,
        contrast_gain: preset.contrast_gain,
        background: preset.background,
        phase_screen: Arc::new(screen),
    }
}

fn smooth_complex(field: &[Complex32], n: usize, sigma: f64) -> Vec<Complex32> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let wrap = |i: isize| i.rem_euclid(n as isize) as usize;
    let mut tmp = vec![Complex32::new(0.0, 0.0); n * n];
    for y in 0..n {
        for x in 0..n {
            let mut acc = Complex32::new(0.0, 0.0);
            for (t, &kv) in k.iter().enumerate() {
                acc += field[y * n + wrap(x as isize + t as isize - r)] * kv;
            }
            tmp[y * n + x] = acc;
        }
    }
    let mut out = vec![Complex32::new(0.0, 0.0); n * n];
    for y in 0..n {
        for x in 0..n {
            let mut acc = Complex32::new(0.0, 0.0);
            for (t, &kv) in k.iter().enumerate() {
                acc += tmp[wrap(y as isize + t as isize - r) * n + x] * kv;
            }
            out[y * n + x] = acc;
        }
    }
    out
}

/// Re-acquisition perturbations. All-zero parameters reproduce the ideal response exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    /// Standard deviation of additive Gaussian read-out noise, in intensity units.
    pub noise_sigma: f64,
    /// Translation drawn uniformly from `[-jitter_px, jitter_px]` on each axis.
    pub jitter_px: f64,
    /// Illumination gain drawn uniformly from `[1 - gain_drift, 1 + gain_drift]`.
    pub gain_drift: f64,
    pub seed: u64,
}

impl AcquisitionParams {
    pub const fn ideal() -> Self {
        AcquisitionParams {
            noise_sigma: 0.0,
            jitter_px: 0.0,
            gain_drift: 0.0,
            seed: 0,
        }
    }

    /// Calibrated re-acquisition model for repeated interrogations of `archetype`.
    ///
    /// The low-contrast haze of TiO2 leaves less signal headroom, so its bench is
    /// modeled as quieter to keep genuine pairs well separated.
    pub const fn calibrated(archetype: Archetype, seed: u64) -> Self {
        let (noise_sigma, jitter_px) = match archetype {
            Archetype::Ps | Archetype::Pdlc => (0.057, 0.42),
            Archetype::Tio2 => (0.021, 0.28),
        };
        AcquisitionParams {
            noise_sigma,
            jitter_px,
            gain_drift: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.noise_sigma, self.jitter_px, self.gain_drift]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.gain_drift < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("invalid acquisition parameters {self:?}")))
        }
    }

    fn is_ideal(&self) -> bool {
        self.noise_sigma == 0.0 && self.jitter_px == 0.0 && self.gain_drift == 0.0
    }
}

fn fft2_inplace(data: &mut [Complex32], n: usize) {
    let mut planner = FftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(n);
    let mut scratch = vec![Complex32::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(data, &mut scratch);
    transpose_square(data, n);
    fft.process_with_scratch(data, &mut scratch);
    transpose_square(data, n);
}

fn transpose_square(data: &mut [Complex32], n: usize) {
    for y in 0..n {
        for x in y + 1..n {
            data.swap(y * n + x, x * n + y);
        }
    }
}

/// Far-field complex amplitude on the full simulation grid.
///
/// The mask is encoded as a binary 0/pi phase pattern (+1 for on mirrors, -1 for
/// off) so that distinct challenges excite uncorrelated combinations of the
/// screen. With `pupil = false` the whole grid is illuminated.
fn far_field(puf: &PufModel, mask: &GrayImage, pupil: bool, shift: (f64, f64)) -> Vec<Complex32> {
    let n = SIM_SIZE;
    let diameter = if pupil {
        (n as f64 / puf.grain_px).min(n as f64)
    } else {
        n as f64
    };
    let c = (n as f64 - 1.0) / 2.0;
    let x0 = c - diameter / 2.0;
    let (mr, mc) = (mask.height(), mask.width());
    let mut field = vec![Complex32::new(0.0, 0.0); n * n];
    for y in 0..n {
        let v = (y as f64 - x0) / diameter;
        if !(0.0..1.0).contains(&v) {
            continue;
        }
        let row = ((v * mr as f64) as usize).min(mr - 1);
        for x in 0..n {
            let u = (x as f64 - x0) / diameter;
            if !(0.0..1.0).contains(&u) {
                continue;
            }
            if pupil {
                let (dx, dy) = (u - 0.5, v - 0.5);
                if dx * dx + dy * dy > 0.25 {
                    continue;
                }
            }
            let col = ((u * mc as f64) as usize).min(mc - 1);
            let sign = if mask.get(col, row) > 0.5 { 1.0 } else { -1.0 };
            let mut e = puf.phase_screen[y * n + x] * sign;
            if shift != (0.0, 0.0) {
                // A linear phase tilt translates the far field by `shift` pixels.
                let phase = -std::f64::consts::TAU * (shift.0 * x as f64 + shift.1 * y as f64) / n as f64;
                e *= Complex32::from_polar(1.0, phase as f32);
            }
            field[y * n + x] = e;
        }
    }
    fft2_inplace(&mut field, n);
    field
}

/// Raw far-field intensity on the full simulation grid, before any camera model.
pub fn raw_intensity(puf: &PufModel, challenge: &ChallengeSpec, pupil: bool) -> Result<Vec<f32>> {
    let mask = make_challenge(challenge)?;
    Ok(far_field(puf, &mask, pupil, (0.0, 0.0))
        .iter()
        .map(|v| v.norm_sqr())
        .collect())
}

/// Camera frame (270x360, 8-bit quantized) of the response to `challenge`.
pub fn render_response(puf: &PufModel, challenge: &ChallengeSpec, acq: &AcquisitionParams) -> Result<GrayImage> {
    acq.validate()?;
    let mask = make_challenge(challenge)?;
    let mut rng = ChaCha8Rng::seed_from_u64(acq.seed);
    let ideal = acq.is_ideal();
    let shift = if ideal || acq.jitter_px == 0.0 {
        (0.0, 0.0)
    } else {
        (
            rng.random_range(-acq.jitter_px..=acq.jitter_px),
            rng.random_range(-acq.jitter_px..=acq.jitter_px),
        )
    };
    let gain = if ideal || acq.gain_drift == 0.0 {
        1.0
    } else {
        rng.random_range(1.0 - acq.gain_drift..=1.0 + acq.gain_drift)
    };

    let field = far_field(puf, &mask, true, shift);
    let n = SIM_SIZE;
    let (ox, oy) = ((n - FRAME_WIDTH) / 2, (n - FRAME_HEIGHT) / 2);
    let mut intensity = Vec::with_capacity(FRAME_WIDTH * FRAME_HEIGHT);
    for y in oy..oy + FRAME_HEIGHT {
        for x in ox..ox + FRAME_WIDTH {
            intensity.push(field[y * n + x].norm_sqr() as f64);
        }
    }
    let mean = intensity.iter().sum::<f64>() / intensity.len() as f64;

    let noise = (acq.noise_sigma > 0.0).then(|| Normal::new(0.0, acq.noise_sigma).unwrap());
    let pixels = intensity
        .iter()
        .map(|&i| {
            let tone = if mean > 0.0 { i / (i + mean) } else { 0.0 };
            let mut v = (puf.background + puf.contrast_gain * tone) * gain;
            if let Some(nd) = &noise {
                v += nd.sample(&mut rng);
            }
            ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
        })
        .collect();
    GrayImage::from_vec(FRAME_WIDTH, FRAME_HEIGHT, pixels)
}

/// One challenge/response record.
#[derive(Debug, Clone)]
pub struct CrpRecord {
    pub id: u32,
    pub challenge: ChallengeSpec,
    pub response: GrayImage,
}

/// Challenge seed for record `id` of a dataset seeded with `seed`.
pub fn challenge_for(seed: u64, id: u32) -> ChallengeSpec {
    ChallengeSpec::new(id, derive_seed(seed, DOMAIN_CHALLENGE, id as u64))
}

/// Acquisition parameters for record `id`: the per-record noise seed is derived from `acq.seed`.
pub fn acquisition_for(acq: &AcquisitionParams, id: u32) -> AcquisitionParams {
    AcquisitionParams {
        seed: derive_seed(acq.seed, DOMAIN_ACQUISITION, id as u64),
        ..*acq
    }
}

/// Renders records `ids` in parallel. Record `i` depends only on `(puf, seed, acq, i)`, so
/// any id range of a larger dataset equals the same range of a smaller one.
pub fn build_records(
    puf: &PufModel,
    ids: std::ops::Range<u32>,
    acq: &AcquisitionParams,
    seed: u64,
) -> Result<Vec<CrpRecord>> {
    acq.validate()?;
    ids.into_par_iter()
        .map(|id| {
            let challenge = challenge_for(seed, id);
            let response = render_response(puf, &challenge, &acquisition_for(acq, id))?;
            Ok(CrpRecord {
                id,
                challenge,
                response,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f32], b: &[f32]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mb = b.iter().map(|&v| v as f64).sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (&x, &y) in a.iter().zip(b) {
            let (dx, dy) = (x as f64 - ma, y as f64 - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn challenge_fill_and_determinism() {
        let mut spec = ChallengeSpec::new(0, 42);
        spec.rows = 64;
        spec.cols = 64;
        let m = make_challenge(&spec).unwrap();
        assert_eq!(m.pixels().iter().filter(|&&v| v == 1.0).count(), 2048);
        assert_eq!(make_challenge(&spec).unwrap(), m);
        spec.fill = 0.0;
        assert!(make_challenge(&spec).unwrap().pixels().iter().all(|&v| v == 0.0));
        spec.rows = 4;
        assert!(make_challenge(&spec).is_err());
    }

    #[test]
    fn puf_is_deterministic() {
        let a = make_puf(Archetype::Ps, 5);
        let b = make_puf(Archetype::Ps, 5);
        assert_eq!(a.phase_screen, b.phase_screen);
        let c = make_puf(Archetype::Ps, 6);
        assert_ne!(a.phase_screen, c.phase_screen);
    }

    #[test]
    fn contrast_ordering_of_presets() {
        let g = |a: Archetype| a.preset().contrast_gain;
        assert!(g(Archetype::Pdlc) >= g(Archetype::Ps));
        assert!(g(Archetype::Ps) > g(Archetype::Tio2));
    }

    #[test]
    fn ideal_render_is_bit_identical() {
        let puf = make_puf(Archetype::Ps, 1);
        let ch = ChallengeSpec::new(0, 9);
        let a = render_response(&puf, &ch, &AcquisitionParams::ideal()).unwrap();
        let b = render_response(
            &puf,
            &ch,
            &AcquisitionParams {
                seed: 77,
                ..AcquisitionParams::ideal()
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!((a.width(), a.height()), (360, 270));
        assert!(a.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn fully_developed_speckle_statistics() {
        // Negative-exponential intensity has coefficient of variation exactly 1.
        let puf = make_puf(Archetype::Ps, 3);
        let i = raw_intensity(&puf, &ChallengeSpec::new(0, 4), false).unwrap();
        assert_eq!(i.len(), 1 << 18);
        let n = i.len() as f64;
        let mean = i.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = i.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let cv = var.sqrt() / mean;
        assert!((cv - 1.0).abs() < 0.05, "cv {cv}");
    }

    #[test]
    fn responses_decorrelate() {
        let puf = make_puf(Archetype::Ps, 10);
        let other = make_puf(Archetype::Ps, 11);
        let acq = AcquisitionParams::ideal();
        let r1 = render_response(&puf, &ChallengeSpec::new(0, 100), &acq).unwrap();
        let r2 = render_response(&puf, &ChallengeSpec::new(1, 101), &acq).unwrap();
        let r3 = render_response(&other, &ChallengeSpec::new(0, 100), &acq).unwrap();
        assert!(pearson(r1.pixels(), r2.pixels()).abs() < 0.1);
        assert!(pearson(r1.pixels(), r3.pixels()).abs() < 0.1);
        let noisy = render_response(&puf, &ChallengeSpec::new(0, 100), &AcquisitionParams::calibrated(Archetype::Ps, 5)).unwrap();
        assert!(pearson(r1.pixels(), noisy.pixels()) > 0.5);
    }

    #[test]
    fn record_ranges_are_prefix_stable() {
        let puf = make_puf(Archetype::Ps, 2);
        let acq = AcquisitionParams::calibrated(Archetype::Ps, 3);
        let small = build_records(&puf, 0..3, &acq, 8).unwrap();
        let tail = build_records(&puf, 2..4, &acq, 8).unwrap();
        assert_eq!(small[2].response, tail[0].response);
        assert_eq!(small[2].challenge, tail[0].challenge);
        assert_eq!(small.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn seed_derivation_spreads() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, 1, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(derive_seed(7, 1, 0), derive_seed(7, 2, 0));
    }
}
