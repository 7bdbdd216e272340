use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{ImageFormat, RgbImage};

use super::wire::ImageData;
use super::BackendError;
use crate::types::{ImageSample, Pixels, RgbRaster};

/// Image part for a sample: in-memory rasters become PNG, files on disk are
/// passed through unchanged after a full decode check.
pub fn encode_image(sample: &ImageSample) -> Result<ImageData, BackendError> {
    let fail = |reason: String| BackendError::Decode {
        sample_id: sample.sample_id.clone(),
        reason,
    };
    match &sample.pixels {
        Pixels::Raster(r) => {
            let img = RgbImage::from_raw(r.width, r.height, r.data.to_vec())
                .ok_or_else(|| fail("raster size does not match dimensions".into()))?;
            let mut buf = Cursor::new(Vec::new());
            img.write_to(&mut buf, ImageFormat::Png)
                .map_err(|e| fail(e.to_string()))?;
            Ok(ImageData {
                media_type: "image/png".into(),
                base64: STANDARD.encode(buf.into_inner()),
            })
        }
        Pixels::Encoded { bytes, .. } => {
            let format = image::guess_format(bytes).map_err(|e| fail(e.to_string()))?;
            let media_type = match format {
                ImageFormat::Png => "image/png",
                ImageFormat::Jpeg => "image/jpeg",
                other => return Err(fail(format!("unsupported format {other:?}"))),
            };
            image::load_from_memory_with_format(bytes, format).map_err(|e| fail(e.to_string()))?;
            Ok(ImageData {
                media_type: media_type.into(),
                base64: STANDARD.encode(bytes),
            })
        }
    }
}

/// Decodes a base64 PNG payload back to an RGB raster.
pub fn decode_png(data: &ImageData) -> Result<RgbRaster, BackendError> {
    let fail = |reason: String| BackendError::Decode {
        sample_id: String::new(),
        reason,
    };
    let bytes = STANDARD.decode(&data.base64).map_err(|e| fail(e.to_string()))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| fail(e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    RgbRaster::new(w, h, img.into_raw()).map_err(|e| fail(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LabelSet;
    use proptest::prelude::*;

    fn write_jpeg(path: &std::path::Path) -> Vec<u8> {
        let img = RgbImage::from_fn(16, 16, |x, y| image::Rgb([x as u8 * 10, y as u8 * 10, 128]));
        img.save_with_format(path, ImageFormat::Jpeg).unwrap();
        std::fs::read(path).unwrap()
    }

    #[test]
    fn cifar_raster_round_trips() {
        let data: Vec<u8> = (0..32 * 32 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let raster = RgbRaster::new(32, 32, data).unwrap();
        let sample = ImageSample::from_raster("s", &LabelSet::cifar10(), "cat", raster.clone()).unwrap();
        let part = encode_image(&sample).unwrap();
        assert_eq!(part.media_type, "image/png");
        assert_eq!(decode_png(&part).unwrap(), raster);
    }

    #[test]
    fn jpeg_passthrough_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jpg");
        let bytes = write_jpeg(&path);
        let labels = LabelSet::cifar10();
        let sample = ImageSample::from_file("j", &labels, "dog", &path).unwrap();
        let part = encode_image(&sample).unwrap();
        assert_eq!(part.media_type, "image/jpeg");
        assert_eq!(STANDARD.decode(&part.base64).unwrap(), bytes);

        let cut = dir.path().join("cut.jpg");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        let truncated = ImageSample::from_file("t", &labels, "dog", &cut).unwrap();
        match encode_image(&truncated) {
            Err(BackendError::Decode { sample_id, .. }) => assert_eq!(sample_id, "t"),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn png_path_is_lossless(w in 1u32..12, h in 1u32..12, seed in any::<u8>()) {
            let data: Vec<u8> = (0..(w * h * 3)).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
            let raster = RgbRaster::new(w, h, data).unwrap();
            let sample = ImageSample::from_raster("p", &LabelSet::cifar10(), "frog", raster.clone()).unwrap();
            prop_assert_eq!(decode_png(&encode_image(&sample).unwrap()).unwrap(), raster);
        }
    }
}
