//! Authentication of optical physical unclonable functions from laser speckle
//! responses by scale-invariant feature matching, with a Gabor-hash /
//! fractional-Hamming-distance baseline and a synthetic speckle generator.

pub mod dataset;
pub mod error;
pub mod fhd;
pub mod image;
pub mod io;
pub mod matcher;
pub mod protocol;
pub mod runner;
pub mod sift;
pub mod speckle;

pub use error::{Error, Result};
pub use image::{GrayImage, Transform};
pub use sift::{detect_and_describe, FeatureSet, Keypoint, SiftParams};
