//! Image and mask file I/O. Files are 8-bit; rasters are normalized to `[0, 1]`.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, RasterImage};

fn to_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn raster_from_dynamic(img: &DynamicImage) -> Result<RasterImage> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => RasterImage::new(
            h,
            w,
            1,
            g.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        ),
        other => {
            let rgb = other.to_rgb8();
            RasterImage::new(h, w, 3, rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect())
        }
    }
}

pub fn raster_to_dynamic(img: &RasterImage) -> DynamicImage {
    let (h, w) = img.dims();
    let raw: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
    if img.channels() == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w as u32, h as u32, raw).expect("sized buffer"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w as u32, h as u32, raw).expect("sized buffer"))
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    raster_from_dynamic(&img)
}

/// Loads a mask file, binarizing its luma channel at 128.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = img.to_luma8();
    BinaryMask::from_gray8(gray.height() as usize, gray.width() as usize, gray.as_raw())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

/// Saves a raster; the format follows the file extension (PNG or JPEG).
pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    raster_to_dynamic(img)
        .save(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Saves a mask as a single-channel 0/255 PNG.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let (h, w) = mask.dims();
    GrayImage::from_raw(w as u32, h as u32, mask.to_gray8())
        .expect("sized buffer")
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn encode_png(img: &RasterImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    raster_to_dynamic(img).write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn encode_mask_png(mask: &BinaryMask) -> Result<Vec<u8>> {
    let (h, w) = mask.dims();
    let mut buf = std::io::Cursor::new(Vec::new());
    DynamicImage::ImageLuma8(GrayImage::from_raw(w as u32, h as u32, mask.to_gray8()).expect("sized buffer"))
        .write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn decode_image(bytes: &[u8]) -> Result<RasterImage> {
    raster_from_dynamic(&image::load_from_memory(bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_8bit_exact() {
        let img = RasterImage::from_fn(5, 7, 3, |r, c, k| ((r * 31 + c * 7 + k * 3) % 256) as f32 / 255.0).unwrap();
        let back = decode_image(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn mask_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = BinaryMask::from_fn(6, 9, |r, c| (r + c) % 3 == 0);
        let p = dir.path().join("sub/m.png");
        save_mask(&m, &p).unwrap();
        assert_eq!(load_mask(&p).unwrap(), m);
    }
}
