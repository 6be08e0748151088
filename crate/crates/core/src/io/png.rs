//! PNG helpers: 8-bit intensity images, 16-bit instance labels, RGB overlays.

use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::raster::Raster;

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    image::open(path).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads any PNG and converts it to grayscale intensities in `[0, 255]`.
pub fn read_gray(path: &Path) -> Result<Raster<f32>> {
    let img = open(path)?;
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    Ok(Raster::from_vec(
        w as usize,
        h as usize,
        gray.into_raw().into_iter().map(f32::from).collect(),
    ))
}

/// Writes intensities rounded and clamped to 8 bits.
pub fn write_gray(path: &Path, image: &Raster<f32>) -> Result<()> {
    ensure_parent(path)?;
    let data = image
        .data()
        .iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let buf = GrayImage::from_raw(image.width() as u32, image.height() as u32, data)
        .expect("buffer size matches");
    buf.save(path).map_err(|e| Error::format(path, e.to_string()))
}

/// Reads instance labels from a single-channel 8- or 16-bit PNG without rescaling.
pub fn read_labels(path: &Path) -> Result<Raster<u16>> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<u16> = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u16::from).collect(),
        _ => {
            return Err(Error::format(
                path,
                "segmentation must be a single-channel 8- or 16-bit PNG",
            ))
        }
    };
    Ok(Raster::from_vec(w, h, data))
}

pub fn write_labels(path: &Path, labels: &Raster<u16>) -> Result<()> {
    ensure_parent(path)?;
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(
        labels.width() as u32,
        labels.height() as u32,
        labels.data().to_vec(),
    )
    .expect("buffer size matches");
    buf.save(path).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_rgb(path: &Path, image: &Raster<[u8; 3]>) -> Result<()> {
    ensure_parent(path)?;
    let mut buf = RgbImage::new(image.width() as u32, image.height() as u32);
    for (i, px) in image.data().iter().enumerate() {
        let x = (i % image.width()) as u32;
        let y = (i / image.width()) as u32;
        buf.put_pixel(x, y, Rgb(*px));
    }
    buf.save(path).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_rgb(path: &Path) -> Result<Raster<[u8; 3]>> {
    let img = open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0).collect();
    Ok(Raster::from_vec(w as usize, h as usize, data))
}
