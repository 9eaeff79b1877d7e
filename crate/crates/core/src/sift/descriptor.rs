use std::collections::HashMap;
use std::f32::consts::PI;

use crate::image::GrayImage;

use super::{FeatureSet, Keypoint, ScaleSpace, SiftParams, DESCRIPTOR_LEN};

const GRID: usize = 4;
const ORI_BINS: usize = 8;
/// Width of one spatial cell in units of the keypoint scale.
const CELL_FACTOR: f64 = 3.0;
const CLIP: f32 = 0.2;

/// Gradient magnitude and direction (radians in [0, 2pi)) by central differences.
struct GradientField {
    width: usize,
    height: usize,
    magnitude: Vec<f32>,
    angle: Vec<f32>,
}

impl GradientField {
    fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut magnitude = vec![0f32; w * h];
        let mut angle = vec![0f32; w * h];
        for y in 1..h.saturating_sub(1) {
            for x in 1..w - 1 {
                let gx = img.get(x + 1, y) - img.get(x - 1, y);
                let gy = img.get(x, y + 1) - img.get(x, y - 1);
                let i = y * w + x;
                magnitude[i] = (gx * gx + gy * gy).sqrt();
                let a = gy.atan2(gx);
                angle[i] = if a < 0.0 { a + 2.0 * PI } else { a };
            }
        }
        GradientField {
            width: w,
            height: h,
            magnitude,
            angle,
        }
    }
}

/// Does the rotated descriptor window (plus the 1 px gradient margin) fit inside the octave image?
fn window_fits(x: f64, y: f64, half: f64, orientation_deg: f64, w: usize, h: usize) -> bool {
    let (s, c) = orientation_deg.to_radians().sin_cos();
    let extent = half * (s.abs() + c.abs());
    x - extent >= 1.0
        && y - extent >= 1.0
        && x + extent <= (w - 2) as f64
        && y + extent <= (h - 2) as f64
}

fn describe(kp: &Keypoint, field: &GradientField, step: f64, scale: f64) -> Option<[f32; DESCRIPTOR_LEN]> {
    let d = GRID as i64;
    let n = ORI_BINS;
    let cell = CELL_FACTOR * scale;
    let cx = kp.x as f64 / step;
    let cy = kp.y as f64 / step;
    if !window_fits(cx, cy, cell * GRID as f64 / 2.0, kp.orientation as f64, field.width, field.height) {
        return None;
    }
    let (sin_o, cos_o) = (kp.orientation as f64).to_radians().sin_cos();
    let ori_rad = (kp.orientation as f64).to_radians() as f32;
    let radius = ((cell * std::f64::consts::SQRT_2 * (d as f64 + 1.0) * 0.5).round() as i64)
        .min(((field.width * field.width + field.height * field.height) as f64).sqrt() as i64);
    let (ix, iy) = (cx.round() as i64, cy.round() as i64);
    let (fx, fy) = (cx - ix as f64, cy - iy as f64);
    // Gaussian weight with sigma of half the window, in cell units.
    let exp_scale = -1.0 / (2.0 * (d as f64 / 2.0).powi(2));

    let dp = (d + 2) as usize;
    let np = n + 2;
    let mut hist = vec![0f32; dp * dp * np];
    for i in -radius..=radius {
        let y = iy + i;
        if y < 1 || y >= field.height as i64 - 1 {
            continue;
        }
        for j in -radius..=radius {
            let x = ix + j;
            if x < 1 || x >= field.width as i64 - 1 {
                continue;
            }
            // Offset from the sub-pixel center, projected onto the keypoint frame.
            let ox = j as f64 - fx;
            let oy = i as f64 - fy;
            let c_rot = (ox * cos_o + oy * sin_o) / cell;
            let r_rot = (-ox * sin_o + oy * cos_o) / cell;
            let rbin = r_rot + d as f64 / 2.0 - 0.5;
            let cbin = c_rot + d as f64 / 2.0 - 0.5;
            if !(rbin > -1.0 && rbin < d as f64 && cbin > -1.0 && cbin < d as f64) {
                continue;
            }
            let idx = y as usize * field.width + x as usize;
            let weight = ((c_rot * c_rot + r_rot * r_rot) * exp_scale).exp() as f32;
            let mag = field.magnitude[idx] * weight;
            let mut rel = field.angle[idx] - ori_rad;
            if rel < 0.0 {
                rel += 2.0 * PI;
            }
            if rel >= 2.0 * PI {
                rel -= 2.0 * PI;
            }
            let obin = rel * n as f32 / (2.0 * PI);

            let r0 = rbin.floor();
            let c0 = cbin.floor();
            let o0 = obin.floor();
            let (rf, cf, of) = ((rbin - r0) as f32, (cbin - c0) as f32, obin - o0);
            let (r0, c0) = (r0 as i64, c0 as i64);
            let mut o0 = o0 as usize;
            if o0 >= n {
                o0 -= n;
            }

            let v_r1 = mag * rf;
            let v_r0 = mag - v_r1;
            let v_rc11 = v_r1 * cf;
            let v_rc10 = v_r1 - v_rc11;
            let v_rc01 = v_r0 * cf;
            let v_rc00 = v_r0 - v_rc01;
            let v_rco111 = v_rc11 * of;
            let v_rco110 = v_rc11 - v_rco111;
            let v_rco101 = v_rc10 * of;
            let v_rco100 = v_rc10 - v_rco101;
            let v_rco011 = v_rc01 * of;
            let v_rco010 = v_rc01 - v_rco011;
            let v_rco001 = v_rc00 * of;
            let v_rco000 = v_rc00 - v_rco001;

            let base = (((r0 + 1) as usize) * dp + (c0 + 1) as usize) * np + o0;
            hist[base] += v_rco000;
            hist[base + 1] += v_rco001;
            hist[base + np] += v_rco010;
            hist[base + np + 1] += v_rco011;
            hist[base + dp * np] += v_rco100;
            hist[base + dp * np + 1] += v_rco101;
            hist[base + (dp + 1) * np] += v_rco110;
            hist[base + (dp + 1) * np + 1] += v_rco111;
        }
    }

    // Fold the orientation wrap-around bins and drop the spatial padding.
    let mut out = [0f32; DESCRIPTOR_LEN];
    for r in 0..GRID {
        for c in 0..GRID {
            let base = ((r + 1) * dp + c + 1) * np;
            hist[base] += hist[base + n];
            hist[base + 1] += hist[base + n + 1];
            for k in 0..n {
                out[(r * GRID + c) * n + k] = hist[base + k];
            }
        }
    }

    let norm = out.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return None;
    }
    let limit = CLIP as f64;
    let mut clipped = [0f64; DESCRIPTOR_LEN];
    for (dst, &v) in clipped.iter_mut().zip(out.iter()) {
        *dst = (v as f64 / norm).min(limit);
    }
    let norm2 = clipped.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (dst, v) in out.iter_mut().zip(clipped) {
        *dst = (v / norm2) as f32;
    }
    Some(out)
}

/// Computes 128-component descriptors, dropping keypoints whose window leaves the image.
pub fn compute_descriptors(kps: &[Keypoint], ss: &ScaleSpace, p: &SiftParams) -> FeatureSet {
    let mut fields: HashMap<(usize, usize), GradientField> = HashMap::new();
    let mut out = FeatureSet::default();
    for kp in kps {
        let field = fields
            .entry((kp.octave, kp.layer))
            .or_insert_with(|| GradientField::new(&ss.octaves[kp.octave].gauss[kp.layer]));
        let step = ss.octaves[kp.octave].step;
        if let Some(desc) = describe(kp, field, step, kp.octave_scale(p)) {
            out.push(*kp, &desc);
        }
    }
    out
}
