use serde::{Deserialize, Serialize};

use super::{ScaleSpace, SiftParams};

/// A sample that is a strict extremum of its 3x3x3 DoG neighbourhood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RawExtremum {
    pub octave: usize,
    /// DoG layer index, in `1..=n_octave_layers`.
    pub layer: usize,
    pub x: usize,
    pub y: usize,
}

/// Scans every octave for strict 26-neighbour extrema above half the final contrast cutoff.
///
/// Output is ordered by (octave, layer, y, x).
pub fn detect_extrema(ss: &ScaleSpace, p: &SiftParams) -> Vec<RawExtremum> {
    let threshold = (0.5 * p.contrast_threshold / p.n_octave_layers as f64) as f32;
    let mut out = Vec::new();
    for (o, oct) in ss.octaves.iter().enumerate() {
        let (w, h) = (oct.dog[0].width(), oct.dog[0].height());
        if w < 3 || h < 3 {
            continue;
        }
        for layer in 1..oct.dog.len() - 1 {
            let below = oct.dog[layer - 1].pixels();
            let cur = oct.dog[layer].pixels();
            let above = oct.dog[layer + 1].pixels();
            for y in 1..h - 1 {
                for x in 1..w - 1 {
                    let i = y * w + x;
                    let v = cur[i];
                    if v.abs() < threshold {
                        continue;
                    }
                    if is_strict_extremum(v, i, w, below, cur, above) {
                        out.push(RawExtremum { octave: o, layer, x, y });
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn is_strict_extremum(v: f32, i: usize, w: usize, below: &[f32], cur: &[f32], above: &[f32]) -> bool {
    let offsets = [
        i - w - 1,
        i - w,
        i - w + 1,
        i - 1,
        i + 1,
        i + w - 1,
        i + w,
        i + w + 1,
    ];
    if v > 0.0 {
        offsets.iter().all(|&j| v > cur[j])
            && offsets.iter().all(|&j| v > below[j] && v > above[j])
            && v > below[i]
            && v > above[i]
    } else {
        offsets.iter().all(|&j| v < cur[j])
            && offsets.iter().all(|&j| v < below[j] && v < above[j])
            && v < below[i]
            && v < above[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;
    use crate::sift::build_scale_space;
    use crate::sift::tests::blobs;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent scan: compare against every neighbour by explicit coordinates.
    fn naive(ss: &ScaleSpace, p: &SiftParams) -> Vec<RawExtremum> {
        let thr = 0.5 * p.contrast_threshold / p.n_octave_layers as f64;
        let mut out = Vec::new();
        for (o, oct) in ss.octaves.iter().enumerate() {
            for l in 1..=p.n_octave_layers {
                let d = &oct.dog;
                let (w, h) = (d[l].width(), d[l].height());
                for y in 1..h - 1 {
                    for x in 1..w - 1 {
                        let v = d[l].get(x, y);
                        if (v.abs() as f64) < thr {
                            continue;
                        }
                        let mut is_max = true;
                        let mut is_min = true;
                        for dl in [-1i32, 0, 1] {
                            for dy in [-1i32, 0, 1] {
                                for dx in [-1i32, 0, 1] {
                                    if dl == 0 && dy == 0 && dx == 0 {
                                        continue;
                                    }
                                    let n = d[(l as i32 + dl) as usize]
                                        .get((x as i32 + dx) as usize, (y as i32 + dy) as usize);
                                    is_max &= v > n;
                                    is_min &= v < n;
                                }
                            }
                        }
                        if is_max || is_min {
                            out.push(RawExtremum { octave: o, layer: l, x, y });
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_scan_on_noise() {
        let p = SiftParams::default();
        for (size, seed) in [(64, 1u64), (96, 2), (128, 3)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = GrayImage::from_fn(size, size, |_, _| rng.random::<f32>());
            let ss = build_scale_space(&img, &p).unwrap();
            let fast = detect_extrema(&ss, &p);
            assert!(!fast.is_empty());
            assert_eq!(fast, naive(&ss, &p));
        }
        let img = blobs(100, 80, 4);
        let ss = build_scale_space(&img, &p).unwrap();
        assert_eq!(detect_extrema(&ss, &p), naive(&ss, &p));
    }

    #[test]
    fn constant_image_has_no_extrema() {
        let img = GrayImage::filled(40, 40, 0.3);
        let p = SiftParams::default();
        let ss = build_scale_space(&img, &p).unwrap();
        assert!(detect_extrema(&ss, &p).is_empty());
    }

    fn gaussian_blob(size: usize, sigma: f64) -> GrayImage {
        let c = (size as f64 - 1.0) / 2.0;
        GrayImage::from_fn(size, size, |x, y| {
            let r2 = (x as f64 - c).powi(2) + (y as f64 - c).powi(2);
            (-r2 / (2.0 * sigma * sigma)).exp() as f32
        })
    }

    #[test]
    fn single_blob_gives_one_dominant_extremum_at_predicted_scale() {
        let p = SiftParams::default();
        let blob_sigma = 4.0;
        let img = gaussian_blob(64, blob_sigma);
        let ss = build_scale_space(&img, &p).unwrap();
        let raw = detect_extrema(&ss, &p);
        let dominant = raw
            .iter()
            .max_by(|a, b| {
                let va = ss.octaves[a.octave].dog[a.layer].get(a.x, a.y).abs();
                let vb = ss.octaves[b.octave].dog[b.layer].get(b.x, b.y).abs();
                va.total_cmp(&vb)
            })
            .expect("blob produces an extremum");
        let step = ss.octaves[dominant.octave].step;
        let cx = dominant.x as f64 * step;
        let cy = dominant.y as f64 * step;
        assert!((cx - 31.5).abs() <= 1.0 + step / 2.0 && (cy - 31.5).abs() <= 1.0 + step / 2.0);

        // Oracle: analytic DoG response of a Gaussian blob at its center over a dense scale
        // grid. Blurring a blob of scale b to total scale s gives peak b^2 / s^2, and the DoG
        // between s and k s is b^2 (1/s^2 - 1/(k s)^2) scaled by the amplitude-preserving
        // factor; its maximum over s is the predicted optimum.
        let k = p.layer_step();
        let response = |s: f64| {
            let lo = blob_sigma * blob_sigma / (blob_sigma * blob_sigma + s * s);
            let hi = blob_sigma * blob_sigma / (blob_sigma * blob_sigma + k * k * s * s);
            (lo - hi).abs()
        };
        let (mut best_s, mut best_v) = (0.0, 0.0);
        let mut s = 0.5;
        while s < 30.0 {
            let v = response(s);
            if v > best_v {
                best_v = v;
                best_s = s;
            }
            s += 0.001;
        }
        let found = ss.absolute_scale(&p, dominant.octave, dominant.layer as f64);
        let log_dist = (found.ln() - best_s.ln()).abs() / k.ln();
        assert!(log_dist <= 1.0, "found scale {found}, oracle {best_s}");
    }
}
