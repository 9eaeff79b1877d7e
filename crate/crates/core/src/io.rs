//! 8-bit grayscale PNG / binary PGM reading and writing.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::image::GrayImage;

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Quantizes to 8 bits by `round(v * 255)` after clamping to [0, 1].
pub fn to_u8(img: &GrayImage) -> Vec<u8> {
    img.pixels()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<GrayImage> {
    GrayImage::from_vec(
        width,
        height,
        bytes.iter().map(|&b| b as f32 / 255.0).collect(),
    )
}

/// Loads any PNG or PGM file, converting to grayscale intensities in [0, 1].
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?.into_luma8();
    let (w, h) = img.dimensions();
    from_u8(w as usize, h as usize, img.as_raw())
}

/// Writes an 8-bit image; `.pgm` selects binary P5, anything else PNG.
pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_u8(img);
    let (w, h) = (img.width() as u32, img.height() as u32);
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        PnmEncoder::new(BufWriter::new(file))
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(&bytes, w, h, ExtendedColorType::L8)
            .map_err(|e| image_err(path, e))
    } else {
        image::save_buffer_with_format(path, &bytes, w, h, ExtendedColorType::L8, ImageFormat::Png)
            .map_err(|e| image_err(path, e))
    }
}
