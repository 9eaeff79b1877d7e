//! Scale-invariant feature detection and description.
//!
//! The pipeline has four stages, each exposed on its own so it can be tested
//! in isolation:
//!
//! 1. [`build_scale_space`] / [`detect_extrema`]: Gaussian pyramid, difference
//!    of Gaussians, and 26-neighbour extrema.
//! 2. [`refine_keypoints`]: quadratic sub-pixel fit with contrast and edge
//!    rejection.
//! 3. [`assign_orientations`]: dominant gradient directions.
//! 4. [`compute_descriptors`]: 4x4x8 gradient histograms.
//!
//! [`detect_and_describe`] composes them and applies the output ordering.

mod descriptor;
mod extrema;
mod format;
mod orientation;
mod refine;
mod scale_space;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub use descriptor::compute_descriptors;
pub use extrema::{detect_extrema, RawExtremum};
pub use format::{read_features, write_features, FORMAT_MAGIC};
pub use orientation::assign_orientations;
pub use refine::{passes_edge_test, refine_keypoints, refine_one, Rejection};
pub use scale_space::{build_scale_space, Octave, ScaleSpace};

/// Length of a descriptor vector.
pub const DESCRIPTOR_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftParams {
    /// Keep at most this many features, strongest first. Zero keeps all.
    pub n_features: usize,
    pub n_octave_layers: usize,
    pub contrast_threshold: f64,
    /// Maximum ratio `r` between principal curvatures.
    pub edge_threshold: f64,
    pub sigma: f64,
    /// Resolution ratio between consecutive octaves.
    pub octave_downsample: f64,
    /// Double the input resolution before building the pyramid.
    pub upsample_input: bool,
    /// Blur already present in the input image.
    pub input_blur: f64,
}

impl Default for SiftParams {
    fn default() -> Self {
        SiftParams {
            n_features: 0,
            n_octave_layers: 4,
            contrast_threshold: 0.04,
            edge_threshold: 5.0,
            sigma: 1.6,
            octave_downsample: 2.0,
            upsample_input: false,
            input_blur: 0.5,
        }
    }
}

impl SiftParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_octave_layers < 1 {
            return Err(Error::param("n_octave_layers must be at least 1"));
        }
        if !(self.contrast_threshold > 0.0) {
            return Err(Error::param("contrast_threshold must be positive"));
        }
        if !(self.edge_threshold >= 1.0) {
            return Err(Error::param("edge_threshold must be at least 1"));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::param("sigma must be positive"));
        }
        if !(self.octave_downsample > 1.0) {
            return Err(Error::param("octave_downsample must exceed 1"));
        }
        if !(self.input_blur >= 0.0) {
            return Err(Error::param("input_blur must be non-negative"));
        }
        Ok(())
    }

    /// Multiplicative scale step between adjacent layers, `2^(1/layers)`.
    pub fn layer_step(&self) -> f64 {
        2f64.powf(1.0 / self.n_octave_layers as f64)
    }
}

/// A localized, oriented scale-space feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    /// Position in input-image pixel coordinates.
    pub x: f32,
    pub y: f32,
    pub octave: usize,
    /// DoG layer the extremum was localized on.
    pub layer: usize,
    /// Absolute Gaussian scale in input pixels.
    pub scale: f32,
    /// Degrees in [0, 360), measured from +x towards +y (image rows grow downward).
    pub orientation: f32,
    pub response: f32,
    /// Sub-layer offset from the quadratic fit, in [-0.5, 0.5].
    #[serde(skip)]
    pub(crate) layer_offset: f32,
}

impl Keypoint {
    /// Scale relative to the keypoint's own octave.
    pub(crate) fn octave_scale(&self, p: &SiftParams) -> f64 {
        p.sigma * 2f64.powf((self.layer as f64 + self.layer_offset as f64) / p.n_octave_layers as f64)
    }
}

/// Keypoints with their descriptors stored contiguously, `DESCRIPTOR_LEN` floats per feature.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<f32>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * DESCRIPTOR_LEN..(i + 1) * DESCRIPTOR_LEN]
    }

    pub fn push(&mut self, kp: Keypoint, desc: &[f32]) {
        debug_assert_eq!(desc.len(), DESCRIPTOR_LEN);
        self.keypoints.push(kp);
        self.descriptors.extend_from_slice(desc);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Keypoint, &[f32])> {
        self.keypoints
            .iter()
            .zip(self.descriptors.chunks_exact(DESCRIPTOR_LEN))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("feature set serializes")
    }
}

/// Strongest first; ties resolved by (octave, layer, y, x, orientation).
fn output_order(a: &Keypoint, b: &Keypoint) -> std::cmp::Ordering {
    b.response
        .total_cmp(&a.response)
        .then(a.octave.cmp(&b.octave))
        .then(a.layer.cmp(&b.layer))
        .then(a.y.total_cmp(&b.y))
        .then(a.x.total_cmp(&b.x))
        .then(a.orientation.total_cmp(&b.orientation))
}

/// Runs all four stages and returns features sorted by descending response.
pub fn detect_and_describe(img: &GrayImage, p: &SiftParams) -> Result<FeatureSet> {
    let ss = build_scale_space(img, p)?;
    let raw = detect_extrema(&ss, p);
    let refined = refine_keypoints(&raw, &ss, p);
    let oriented = assign_orientations(&refined, &ss, p);
    let described = compute_descriptors(&oriented, &ss, p);

    let mut order: Vec<usize> = (0..described.len()).collect();
    order.sort_by(|&i, &j| output_order(&described.keypoints[i], &described.keypoints[j]));
    if p.n_features > 0 {
        order.truncate(p.n_features);
    }
    let mut out = FeatureSet {
        keypoints: Vec::with_capacity(order.len()),
        descriptors: Vec::with_capacity(order.len() * DESCRIPTOR_LEN),
    };
    for i in order {
        out.push(described.keypoints[i], described.descriptor(i));
    }
    Ok(out)
}
