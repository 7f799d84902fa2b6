//! Intensity images with per-pixel validity and PNG I/O.
//!
//! Samples are `f32` in [0, 1], interleaved for multi-channel images.
//! Images are read/written as 8- or 16-bit PNG (grayscale or RGB) mapped
//! linearly to [0, 1]; validity masks travel as separate 8-bit PNGs
//! (0 = invalid, 255 = valid).

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<f32>,
    valid: Vec<bool>,
}

impl Image {
    /// All-valid zero image.
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Image {
            width,
            height,
            channels,
            samples: vec![0.0; width * height * channels],
            valid: vec![true; width * height],
        }
    }

    /// Grayscale image built from a function of pixel coordinates.
    pub fn from_fn_gray(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut img = Image::new(width, height, 1);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                img.samples[y * width + x] = v;
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel_index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.samples[self.pixel_index(x, y) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        let i = self.pixel_index(x, y) * self.channels + c;
        self.samples[i] = v;
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[self.pixel_index(x, y)]
    }

    #[inline]
    pub fn set_valid(&mut self, x: usize, y: usize, v: bool) {
        let i = self.pixel_index(x, y);
        self.valid[i] = v;
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Grayscale view: identity for single-channel images, 0.299/0.587/0.114
    /// luminance for RGB. Validity is carried over.
    pub fn to_luma(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = Image::new(self.width, self.height, 1);
        for i in 0..self.width * self.height {
            let r = self.samples[i * 3];
            let g = self.samples[i * 3 + 1];
            let b = self.samples[i * 3 + 2];
            out.samples[i] = 0.299 * r + 0.587 * g + 0.114 * b;
            out.valid[i] = self.valid[i];
        }
        out
    }

    /// Horizontal mirror; exact (no resampling).
    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let xf = self.width - 1 - x;
                for c in 0..self.channels {
                    out.samples[(y * self.width + x) * self.channels + c] =
                        self.samples[(y * self.width + xf) * self.channels + c];
                }
                out.valid[y * self.width + x] = self.valid[y * self.width + xf];
            }
        }
        out
    }
}

/// Write as 16-bit PNG (grayscale or RGB by channel count).
pub fn save_png16(img: &Image, path: &Path) -> Result<()> {
    let w = img.width as u32;
    let h = img.height as u32;
    let quant = |v: f32| -> u16 { (v.clamp(0.0, 1.0) * 65535.0).round() as u16 };
    match img.channels {
        1 => {
            let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w, h);
            for (x, y, p) in buf.enumerate_pixels_mut() {
                p.0 = [quant(img.get(x as usize, y as usize, 0))];
            }
            buf.save(path)?;
        }
        _ => {
            let mut buf = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(w, h);
            for (x, y, p) in buf.enumerate_pixels_mut() {
                for c in 0..3 {
                    p.0[c] = quant(img.get(x as usize, y as usize, c));
                }
            }
            buf.save(path)?;
        }
    }
    Ok(())
}

/// Read an 8- or 16-bit PNG into [0, 1] samples; all pixels valid.
pub fn load_png(path: &Path) -> Result<Image> {
    let dynimg = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()?;
    Ok(decode_dynimg(dynimg))
}

/// Decode already-loaded PNG bytes; used by the fuzz harness.
pub fn decode_png_bytes(bytes: &[u8]) -> Result<Image> {
    let dynimg = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    Ok(decode_dynimg(dynimg))
}

fn decode_dynimg(dynimg: image::DynamicImage) -> Image {
    use image::DynamicImage::*;
    match dynimg {
        ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            let mut img = Image::new(w as usize, h as usize, 1);
            for (x, y, p) in buf.enumerate_pixels() {
                img.set(x as usize, y as usize, 0, p.0[0] as f32 / 255.0);
            }
            img
        }
        ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            let mut img = Image::new(w as usize, h as usize, 1);
            for (x, y, p) in buf.enumerate_pixels() {
                img.set(x as usize, y as usize, 0, p.0[0] as f32 / 65535.0);
            }
            img
        }
        other => {
            let buf = other.to_rgb16();
            let (w, h) = buf.dimensions();
            let mut img = Image::new(w as usize, h as usize, 3);
            for (x, y, p) in buf.enumerate_pixels() {
                for c in 0..3 {
                    img.set(x as usize, y as usize, c, p.0[c] as f32 / 65535.0);
                }
            }
            img
        }
    }
}

/// Write the validity mask as an 8-bit PNG (0 = invalid, 255 = valid).
pub fn save_mask_png(img: &Image, path: &Path) -> Result<()> {
    let mut buf = image::GrayImage::new(img.width as u32, img.height as u32);
    for (x, y, p) in buf.enumerate_pixels_mut() {
        p.0 = [if img.is_valid(x as usize, y as usize) { 255 } else { 0 }];
    }
    buf.save(path)?;
    Ok(())
}

/// Apply a validity mask PNG (any nonzero byte = valid) to an image.
pub fn load_mask_png(img: &mut Image, path: &Path) -> Result<()> {
    let dynimg = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .decode()?;
    let buf = dynimg.to_luma8();
    if buf.width() as usize != img.width || buf.height() as usize != img.height {
        return Err(Error::DimensionMismatch(
            img.width,
            img.height,
            buf.width() as usize,
            buf.height() as usize,
        ));
    }
    for (x, y, p) in buf.enumerate_pixels() {
        img.set_valid(x as usize, y as usize, p.0[0] != 0);
    }
    Ok(())
}
