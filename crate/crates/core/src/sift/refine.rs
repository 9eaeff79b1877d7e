use super::{Keypoint, RawExtremum, ScaleSpace, SiftParams};

const MAX_INTERP_STEPS: usize = 5;

/// Why an extremum did not become a keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// The quadratic fit did not settle within the iteration budget, or was singular.
    Unstable,
    /// The fit walked out of the sampled volume.
    OutOfBounds,
    LowContrast,
    /// Principal curvature ratio at or above the edge threshold.
    Edge,
}

/// Principal-curvature test on the 2x2 spatial Hessian. Ratios at or above `r` fail.
pub fn passes_edge_test(dxx: f64, dyy: f64, dxy: f64, r: f64) -> bool {
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    det > 0.0 && tr * tr * r < (r + 1.0) * (r + 1.0) * det
}

struct Derivatives {
    grad: [f64; 3],
    hess: [[f64; 3]; 3],
}

fn derivatives(ss: &ScaleSpace, o: usize, l: usize, x: usize, y: usize) -> Derivatives {
    let dog = &ss.octaves[o].dog;
    let at = |layer: usize, xx: usize, yy: usize| dog[layer].get(xx, yy) as f64;
    let v = at(l, x, y);
    let dx = (at(l, x + 1, y) - at(l, x - 1, y)) * 0.5;
    let dy = (at(l, x, y + 1) - at(l, x, y - 1)) * 0.5;
    let ds = (at(l + 1, x, y) - at(l - 1, x, y)) * 0.5;
    let dxx = at(l, x + 1, y) + at(l, x - 1, y) - 2.0 * v;
    let dyy = at(l, x, y + 1) + at(l, x, y - 1) - 2.0 * v;
    let dss = at(l + 1, x, y) + at(l - 1, x, y) - 2.0 * v;
    let dxy = (at(l, x + 1, y + 1) - at(l, x - 1, y + 1) - at(l, x + 1, y - 1)
        + at(l, x - 1, y - 1))
        * 0.25;
    let dxs = (at(l + 1, x + 1, y) - at(l + 1, x - 1, y) - at(l - 1, x + 1, y)
        + at(l - 1, x - 1, y))
        * 0.25;
    let dys = (at(l + 1, x, y + 1) - at(l + 1, x, y - 1) - at(l - 1, x, y + 1)
        + at(l - 1, x, y - 1))
        * 0.25;
    Derivatives {
        grad: [dx, dy, ds],
        hess: [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]],
    }
}

/// Solves `h * x = b` by Cramer's rule; `None` when singular.
fn solve3(h: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det3(h);
    if d.abs() < 1e-30 || !d.is_finite() {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut m = *h;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *slot = det3(&m) / d;
    }
    Some(out)
}

/// Sub-pixel localization of a single extremum with contrast and edge filtering.
pub fn refine_one(raw: &RawExtremum, ss: &ScaleSpace, p: &SiftParams) -> Result<Keypoint, Rejection> {
    let n = p.n_octave_layers;
    let oct = &ss.octaves[raw.octave];
    let (w, h) = (oct.dog[0].width() as i64, oct.dog[0].height() as i64);
    let (mut x, mut y, mut l) = (raw.x as i64, raw.y as i64, raw.layer as i64);

    let mut converged = None;
    for _ in 0..MAX_INTERP_STEPS {
        let d = derivatives(ss, raw.octave, l as usize, x as usize, y as usize);
        let neg = [-d.grad[0], -d.grad[1], -d.grad[2]];
        let offset = solve3(&d.hess, &neg).ok_or(Rejection::Unstable)?;
        if offset.iter().all(|v| v.abs() < 0.5) {
            converged = Some((d, offset));
            break;
        }
        if offset.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
            return Err(Rejection::Unstable);
        }
        x += offset[0].round() as i64;
        y += offset[1].round() as i64;
        l += offset[2].round() as i64;
        if l < 1 || l > n as i64 || x < 1 || x >= w - 1 || y < 1 || y >= h - 1 {
            return Err(Rejection::OutOfBounds);
        }
    }
    let (d, offset) = converged.ok_or(Rejection::Unstable)?;
    let (xu, yu, lu) = (x as usize, y as usize, l as usize);

    let value = oct.dog[lu].get(xu, yu) as f64;
    let contrast = value + 0.5 * (d.grad[0] * offset[0] + d.grad[1] * offset[1] + d.grad[2] * offset[2]);
    if contrast.abs() * (n as f64) < p.contrast_threshold {
        return Err(Rejection::LowContrast);
    }
    if !passes_edge_test(d.hess[0][0], d.hess[1][1], d.hess[0][1], p.edge_threshold) {
        return Err(Rejection::Edge);
    }

    let step = oct.step;
    let layer_pos = lu as f64 + offset[2];
    Ok(Keypoint {
        x: ((x as f64 + offset[0]) * step) as f32,
        y: ((y as f64 + offset[1]) * step) as f32,
        octave: raw.octave,
        layer: lu,
        scale: ss.absolute_scale(p, raw.octave, layer_pos) as f32,
        orientation: 0.0,
        response: contrast.abs() as f32,
        layer_offset: offset[2] as f32,
    })
}

/// Keeps the extrema that survive localization, preserving input order.
pub fn refine_keypoints(raw: &[RawExtremum], ss: &ScaleSpace, p: &SiftParams) -> Vec<Keypoint> {
    raw.iter().filter_map(|r| refine_one(r, ss, p).ok()).collect()
}
