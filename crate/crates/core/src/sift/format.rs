//! Little-endian binary feature files.
//!
//! Layout: magic `SFT1`, feature count (u32), parameter echo, then per feature
//! `x, y, scale, orientation, response` followed by 128 descriptor values, all f32.
//!
//! Parameter echo: `n_features u32, n_octave_layers u32, contrast_threshold f32,
//! edge_threshold f32, sigma f32, octave_downsample f32, input_blur f32, flags u32`
//! where flag bit 0 is `upsample_input`.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{FeatureSet, Keypoint, SiftParams, DESCRIPTOR_LEN};

pub const FORMAT_MAGIC: &[u8; 4] = b"SFT1";

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn write_features(w: &mut impl Write, fs: &FeatureSet, p: &SiftParams) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(40 + fs.len() * (5 + DESCRIPTOR_LEN) * 4);
    buf.extend_from_slice(FORMAT_MAGIC);
    put_u32(&mut buf, fs.len() as u32);
    put_u32(&mut buf, p.n_features as u32);
    put_u32(&mut buf, p.n_octave_layers as u32);
    put_f32(&mut buf, p.contrast_threshold as f32);
    put_f32(&mut buf, p.edge_threshold as f32);
    put_f32(&mut buf, p.sigma as f32);
    put_f32(&mut buf, p.octave_downsample as f32);
    put_f32(&mut buf, p.input_blur as f32);
    put_u32(&mut buf, p.upsample_input as u32);
    for (kp, desc) in fs.iter() {
        for v in [kp.x, kp.y, kp.scale, kp.orientation, kp.response] {
            put_f32(&mut buf, v);
        }
        for &v in desc {
            put_f32(&mut buf, v);
        }
    }
    w.write_all(&buf)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take4(&mut self) -> Result<[u8; 4]> {
        let bytes = self
            .data
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        self.pos += 4;
        Ok(bytes.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take4()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take4()?))
    }

    /// Widens via the shortest decimal form so that `0.04f32` reads back as `0.04`.
    fn f32_as_f64(&mut self) -> Result<f64> {
        let v = self.f32()?;
        Ok(v.to_string().parse().unwrap_or(v as f64))
    }
}

/// Reads a feature file. Octave and layer are reconstructed from the stored scale.
pub fn read_features(r: &mut impl Read) -> Result<(FeatureSet, SiftParams)> {
    let mut data = Vec::new();
    r.read_to_end(&mut data)
        .map_err(|e| Error::Format(e.to_string()))?;
    let mut c = Cursor { data: &data, pos: 0 };
    if &c.take4()? != FORMAT_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let count = c.u32()? as usize;
    let params = SiftParams {
        n_features: c.u32()? as usize,
        n_octave_layers: c.u32()? as usize,
        contrast_threshold: c.f32_as_f64()?,
        edge_threshold: c.f32_as_f64()?,
        sigma: c.f32_as_f64()?,
        octave_downsample: c.f32_as_f64()?,
        input_blur: c.f32_as_f64()?,
        upsample_input: c.u32()? & 1 == 1,
    };
    params.validate()?;
    let expected = c.pos + count * (5 + DESCRIPTOR_LEN) * 4;
    if data.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for {count} features, found {}",
            data.len()
        )));
    }

    let base_step = if params.upsample_input { 0.5 } else { 1.0 };
    let n = params.n_octave_layers as f64;
    let mut fs = FeatureSet {
        keypoints: Vec::with_capacity(count),
        descriptors: Vec::with_capacity(count * DESCRIPTOR_LEN),
    };
    for _ in 0..count {
        let (x, y, scale, orientation, response) = (c.f32()?, c.f32()?, c.f32()?, c.f32()?, c.f32()?);
        let rel = (scale as f64 / (params.sigma * base_step)).max(1.0);
        // Scale ranges of adjacent octaves overlap when the downsample factor is not 2;
        // the reconstruction is exact only for the factor-2 pyramid.
        let octave = ((rel.ln() - 0.5 / n * 2f64.ln()) / params.octave_downsample.ln())
            .floor()
            .max(0.0);
        let layer_pos = (rel / params.octave_downsample.powf(octave)).log2() * n;
        let layer = layer_pos.round().clamp(1.0, n);
        fs.keypoints.push(Keypoint {
            x,
            y,
            octave: octave as usize,
            layer: layer as usize,
            scale,
            orientation,
            response,
            layer_offset: (layer_pos - layer) as f32,
        });
        for _ in 0..DESCRIPTOR_LEN {
            fs.descriptors.push(c.f32()?);
        }
    }
    Ok((fs, params))
}
