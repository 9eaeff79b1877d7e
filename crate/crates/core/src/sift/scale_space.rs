use crate::error::{Error, Result};
use crate::image::{gaussian_blur, resample, GrayImage};

use super::SiftParams;

#[derive(Debug, Clone)]
pub struct Octave {
    /// `n_octave_layers + 3` progressively blurred images.
    pub gauss: Vec<GrayImage>,
    /// `n_octave_layers + 2` differences of adjacent Gaussian layers.
    pub dog: Vec<GrayImage>,
    /// Input-image pixels per octave pixel.
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct ScaleSpace {
    pub octaves: Vec<Octave>,
}

impl ScaleSpace {
    /// Absolute scale (input pixels) of Gaussian layer `layer` in octave `octave`.
    pub fn absolute_scale(&self, p: &SiftParams, octave: usize, layer: f64) -> f64 {
        p.sigma * 2f64.powf(layer / p.n_octave_layers as f64) * self.octaves[octave].step
    }
}

fn octave_count(min_dim: usize, downsample: f64) -> usize {
    let n = ((min_dim as f64 / 8.0).ln() / downsample.ln()).floor();
    n.max(1.0) as usize
}

fn blur(img: &GrayImage, sigma: f64) -> GrayImage {
    gaussian_blur(img, sigma).expect("incremental sigma is positive")
}

fn difference(a: &GrayImage, b: &GrayImage) -> GrayImage {
    let px = b
        .pixels()
        .iter()
        .zip(a.pixels())
        .map(|(hi, lo)| hi - lo)
        .collect();
    GrayImage::from_vec(a.width(), a.height(), px).expect("same dimensions")
}

/// Builds the Gaussian and difference-of-Gaussian pyramids.
pub fn build_scale_space(img: &GrayImage, p: &SiftParams) -> Result<ScaleSpace> {
    p.validate()?;
    if img.width() < 16 || img.height() < 16 {
        return Err(Error::dim(format!(
            "feature extraction needs at least 16x16, got {}x{}",
            img.width(),
            img.height()
        )));
    }
    let n = p.n_octave_layers;
    let k = p.layer_step();

    let (base, base_step) = if p.upsample_input {
        let up = resample(img, 2.0)?;
        let pre = (p.sigma * p.sigma - 4.0 * p.input_blur * p.input_blur).max(0.01);
        (blur(&up, pre.sqrt()), 0.5)
    } else {
        let pre = (p.sigma * p.sigma - p.input_blur * p.input_blur).max(0.01);
        (blur(img, pre.sqrt()), 1.0)
    };

    // Incremental blur taking layer i-1 to layer i (both relative to the octave).
    let increments: Vec<f64> = (1..n + 3)
        .map(|i| {
            let prev = p.sigma * k.powi(i as i32 - 1);
            let total = prev * k;
            (total * total - prev * prev).sqrt()
        })
        .collect();

    let n_octaves = octave_count(base.width().min(base.height()), p.octave_downsample);
    let mut octaves: Vec<Octave> = Vec::with_capacity(n_octaves);
    for o in 0..n_octaves {
        let first = match octaves.last() {
            None => base.clone(),
            Some(prev) if p.octave_downsample == 2.0 => {
                // Layer n carries twice the base blur; decimating it yields the next base exactly.
                resample(&prev.gauss[n], 0.5)?
            }
            Some(prev) => {
                let factor = 1.0 / p.octave_downsample;
                let seed = resample(&prev.gauss[0], factor)?;
                let have = p.sigma * factor;
                blur(&seed, (p.sigma * p.sigma - have * have).sqrt())
            }
        };
        let mut gauss = Vec::with_capacity(n + 3);
        gauss.push(first);
        for inc in &increments {
            let next = blur(gauss.last().unwrap(), *inc);
            gauss.push(next);
        }
        let dog = gauss.windows(2).map(|w| difference(&w[0], &w[1])).collect();
        octaves.push(Octave {
            gauss,
            dog,
            step: base_step * p.octave_downsample.powi(o as i32),
        });
    }
    Ok(ScaleSpace { octaves })
}
