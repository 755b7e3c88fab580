use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::render::colormap::Colormap;
use crate::volume::Frame;

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::param(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(RgbImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        RgbImage {
            width,
            height,
            pixels: rgb.repeat(width * height),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copies the `width x height` region whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, width: usize, height: usize) -> Result<RgbImage> {
        if x + width > self.width || y + height > self.height {
            return Err(Error::param(format!(
                "crop {width}x{height}+{x}+{y} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(width * height * 3);
        for row in y..y + height {
            let start = (row * self.width + x) * 3;
            pixels.extend_from_slice(&self.pixels[start..start + width * 3]);
        }
        RgbImage::new(width, height, pixels)
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_compression(png::Compression::Fast);
            let mut w = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
            w.write_image_data(&self.pixels)
                .map_err(|e| Error::Png(e.to_string()))?;
            w.finish().map_err(|e| Error::Png(e.to_string()))?;
        }
        Ok(out)
    }

    /// Decodes an 8-bit RGB or RGBA PNG (alpha is dropped).
    pub fn from_png(bytes: &[u8]) -> Result<RgbImage> {
        let png_err = |e: png::DecodingError| Error::Png(e.to_string());
        let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(png_err)?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Png("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(png_err)?;
        buf.truncate(info.buffer_size());
        let (w, h) = (info.width as usize, info.height as usize);
        if info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Png(format!("unsupported bit depth {:?}", info.bit_depth)));
        }
        let pixels = match info.color_type {
            png::ColorType::Rgb => buf,
            png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            other => return Err(Error::Png(format!("unsupported color type {other:?}"))),
        };
        RgbImage::new(w, h, pixels)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_png()?).map_err(|e| Error::io(path, e))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<RgbImage> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        RgbImage::from_png(&bytes)
    }
}

/// Maps a frame of values in `[0, 1]` through `cmap`.
pub fn colorize(frame: &Frame, cmap: &Colormap) -> Result<RgbImage> {
    let mut pixels = Vec::with_capacity(frame.values.len() * 3);
    for &v in &frame.values {
        pixels.extend_from_slice(&cmap.lookup(v)?);
    }
    RgbImage::new(frame.width, frame.height, pixels)
}

/// Per-channel `round((1 - alpha) * base + alpha * heat)`.
pub fn overlay(base: &RgbImage, heat: &RgbImage, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param(format!("alpha must be in [0, 1], got {alpha}")));
    }
    if base.width != heat.width || base.height != heat.height {
        return Err(Error::param(format!(
            "overlay size mismatch: base {}x{}, heatmap {}x{}",
            base.width, base.height, heat.width, heat.height
        )));
    }
    let pixels = base
        .pixels
        .iter()
        .zip(&heat.pixels)
        .map(|(&b, &h)| ((1.0 - alpha) * b as f64 + alpha * h as f64).round() as u8)
        .collect();
    RgbImage::new(base.width, base.height, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkerboard() {
        let cmap = Colormap::default();
        let f = Frame::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let img = colorize(&f, &cmap).unwrap();
        assert_eq!(img.pixel(0, 0), cmap.lut[0]);
        assert_eq!(img.pixel(1, 0), cmap.lut[255]);
        assert_eq!(img.pixel(0, 1), cmap.lut[255]);
        assert_eq!(img.pixel(1, 1), cmap.lut[0]);
    }

    #[test]
    fn colorize_rejects_out_of_range() {
        let f = Frame::new(1, 2, vec![0.5, 1.5]).unwrap();
        assert!(colorize(&f, &Colormap::default()).is_err());
    }

    #[test]
    fn overlay_blend() {
        let a = RgbImage::filled(2, 1, [100, 100, 100]);
        let b = RgbImage::filled(2, 1, [200, 0, 255]);
        assert_eq!(overlay(&a, &b, 0.0).unwrap(), a);
        assert_eq!(overlay(&a, &b, 1.0).unwrap(), b);
        assert_eq!(overlay(&a, &b, 0.5).unwrap().pixel(0, 0), [150, 50, 178]);
        assert!(overlay(&a, &RgbImage::filled(1, 1, [0; 3]), 0.5).is_err());
    }

    #[test]
    fn png_round_trip() {
        let mut img = RgbImage::filled(3, 2, [1, 2, 3]);
        img.set_pixel(2, 1, [250, 0, 7]);
        let bytes = img.to_png().unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
        assert_eq!(RgbImage::from_png(&bytes).unwrap(), img);
        assert_eq!(img.to_png().unwrap(), bytes);
    }
}
