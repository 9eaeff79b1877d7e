use std::f64::consts::PI;

use super::{Keypoint, ScaleSpace, SiftParams};

const BINS: usize = 36;
const PEAK_RATIO: f64 = 0.8;
const RADIUS_FACTOR: f64 = 3.0;
const SIGMA_FACTOR: f64 = 1.5;

/// Smoothed 36-bin gradient orientation histogram around a keypoint.
pub(crate) fn orientation_histogram(kp: &Keypoint, ss: &ScaleSpace, p: &SiftParams) -> [f64; BINS] {
    let oct = &ss.octaves[kp.octave];
    let img = &oct.gauss[kp.layer];
    let (w, h) = (img.width() as i64, img.height() as i64);
    let scale = kp.octave_scale(p);
    let sigma_w = SIGMA_FACTOR * scale;
    let radius = (RADIUS_FACTOR * sigma_w).round() as i64;
    let cx = (kp.x as f64 / oct.step).round() as i64;
    let cy = (kp.y as f64 / oct.step).round() as i64;
    let denom = 2.0 * sigma_w * sigma_w;

    let mut hist = [0f64; BINS];
    for dy in -radius..=radius {
        let y = cy + dy;
        if y <= 0 || y >= h - 1 {
            continue;
        }
        for dx in -radius..=radius {
            let x = cx + dx;
            if x <= 0 || x >= w - 1 || dx * dx + dy * dy > radius * radius {
                continue;
            }
            let (xu, yu) = (x as usize, y as usize);
            let gx = (img.get(xu + 1, yu) - img.get(xu - 1, yu)) as f64;
            let gy = (img.get(xu, yu + 1) - img.get(xu, yu - 1)) as f64;
            let weight = (-((dx * dx + dy * dy) as f64) / denom).exp();
            let angle = gy.atan2(gx).rem_euclid(2.0 * PI);
            let bin = ((angle * BINS as f64 / (2.0 * PI)).round() as usize) % BINS;
            hist[bin] += weight * (gx * gx + gy * gy).sqrt();
        }
    }

    // [1, 2, 1] / 4 applied twice, i.e. [1, 4, 6, 4, 1] / 16, circularly.
    for _ in 0..2 {
        let src = hist;
        for i in 0..BINS {
            let prev = src[(i + BINS - 1) % BINS];
            let next = src[(i + 1) % BINS];
            hist[i] = (prev + 2.0 * src[i] + next) * 0.25;
        }
    }
    hist
}

/// Emits one keypoint per histogram peak within 80% of the maximum.
pub fn assign_orientations(kps: &[Keypoint], ss: &ScaleSpace, p: &SiftParams) -> Vec<Keypoint> {
    let mut out = Vec::with_capacity(kps.len() + kps.len() / 4);
    for kp in kps {
        let hist = orientation_histogram(kp, ss, p);
        let max = hist.iter().cloned().fold(0.0, f64::max);
        if !(max > 0.0) {
            continue;
        }
        for i in 0..BINS {
            let l = hist[(i + BINS - 1) % BINS];
            let r = hist[(i + 1) % BINS];
            let c = hist[i];
            if c > l && c > r && c >= PEAK_RATIO * max {
                let shift = 0.5 * (l - r) / (l - 2.0 * c + r);
                let bin = (i as f64 + shift).rem_euclid(BINS as f64);
                let mut degrees = (bin * 360.0 / BINS as f64) as f32;
                if degrees >= 360.0 {
                    degrees -= 360.0;
                }
                out.push(Keypoint {
                    orientation: degrees,
                    ..*kp
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;
    use crate::sift::build_scale_space;

    fn probe(octave: usize, layer: usize, x: f32, y: f32) -> Keypoint {
        Keypoint {
            x,
            y,
            octave,
            layer,
            scale: 0.0,
            orientation: 0.0,
            response: 1.0,
            layer_offset: 0.0,
        }
    }

    #[test]
    fn ramp_along_x_points_at_zero_degrees() {
        let p = SiftParams::default();
        let img = GrayImage::from_fn(64, 64, |x, _| x as f32 / 64.0);
        let ss = build_scale_space(&img, &p).unwrap();
        let out = assign_orientations(&[probe(0, 2, 32.0, 32.0)], &ss, &p);
        assert_eq!(out.len(), 1);
        let o = out[0].orientation;
        assert!(o < 5.0 || o > 355.0, "orientation {o}");
    }

    #[test]
    fn ramp_along_y_points_at_ninety_degrees() {
        let p = SiftParams::default();
        let img = GrayImage::from_fn(64, 64, |_, y| y as f32 / 64.0);
        let ss = build_scale_space(&img, &p).unwrap();
        let out = assign_orientations(&[probe(0, 1, 30.0, 33.0)], &ss, &p);
        assert_eq!(out.len(), 1);
        assert!((out[0].orientation - 90.0).abs() < 5.0);
    }

    #[test]
    fn symmetric_blob_peaks_are_near_equal() {
        let p = SiftParams::default();
        let img = GrayImage::from_fn(64, 64, |x, y| {
            let r2 = (x as f64 - 32.0).powi(2) + (y as f64 - 32.0).powi(2);
            (-r2 / 32.0).exp() as f32
        });
        let ss = build_scale_space(&img, &p).unwrap();
        let kp = probe(0, 2, 32.0, 32.0);
        let hist = orientation_histogram(&kp, &ss, &p);
        let max = hist.iter().cloned().fold(0.0, f64::max);
        let min = hist.iter().cloned().fold(f64::MAX, f64::min);
        assert!(min > 0.5 * max, "histogram should be nearly flat: {min} vs {max}");
        let out = assign_orientations(&[kp], &ss, &p);
        assert!(!out.is_empty());
        for o in &out {
            let v = hist[((o.orientation / 10.0).round() as usize) % BINS];
            assert!(v >= 0.75 * max);
        }
    }
}
