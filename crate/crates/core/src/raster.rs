//! Minimal row-major rasters and PNG conversion.

use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};

/// Row-major 2D raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

pub type Rgb = [f64; 3];
pub type RgbRaster = Raster<Rgb>;

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Raster {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster payload size");
        Raster {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn same_size<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Pixel containing a continuous image coordinate (pixel centers sit on integers).
    pub fn pixel_at(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let x = u.round();
        let y = v.round();
        if x >= 0.0 && y >= 0.0 && (x as usize) < self.width && (y as usize) < self.height {
            Some((x as usize, y as usize))
        } else {
            None
        }
    }
}

impl RgbRaster {
    /// Bilinear sample with edge clamping; `None` outside the pixel-center hull
    /// extended by half a pixel.
    pub fn sample_bilinear(&self, u: f64, v: f64) -> Option<Rgb> {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(u >= -0.5 && v >= -0.5 && u <= w - 0.5 && v <= h - 0.5) {
            return None;
        }
        let u = u.clamp(0.0, w - 1.0);
        let v = v.clamp(0.0, h - 1.0);
        let x0 = u.floor() as usize;
        let y0 = v.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = u - x0 as f64;
        let fy = v - y0 as f64;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let top = self.get(x0, y0)[c] * (1.0 - fx) + self.get(x1, y0)[c] * fx;
            let bottom = self.get(x0, y1)[c] * (1.0 - fx) + self.get(x1, y1)[c] * fx;
            *o = top * (1.0 - fy) + bottom * fy;
        }
        Some(out)
    }

    pub fn sample_nearest(&self, u: f64, v: f64) -> Option<Rgb> {
        self.pixel_at(u, v).map(|(x, y)| *self.get(x, y))
    }

    pub fn to_image(&self) -> RgbImage {
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for (px, rgb) in img.pixels_mut().zip(&self.data) {
            px.0 = rgb.map(quantize);
        }
        img
    }

    pub fn from_image(img: &RgbImage) -> Self {
        let data = img
            .pixels()
            .map(|p| p.0.map(|c| c as f64 / 255.0))
            .collect();
        Raster::from_vec(img.width() as usize, img.height() as usize, data)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_image(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

impl Raster<u8> {
    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        let gray = img.to_luma8();
        Ok(Raster::from_vec(
            gray.width() as usize,
            gray.height() as usize,
            gray.into_raw(),
        ))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        GrayImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("raster payload matches dimensions")
            .save(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })
    }
}

#[inline]
pub fn quantize(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Raw float raster: ASCII header `"W H\n"` followed by little-endian f32 row-major payload.
pub fn write_f32_raster(path: &Path, raster: &Raster<f32>) -> Result<()> {
    let mut bytes = format!("{} {}\n", raster.width, raster.height).into_bytes();
    bytes.reserve(raster.data.len() * 4);
    for v in &raster.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32_raster(path: &Path) -> Result<Raster<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_f32_raster(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
}

fn parse_f32_raster(bytes: &[u8]) -> std::result::Result<Raster<f32>, String> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or("missing header line")?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| "header is not ASCII")?;
    let mut it = header.split_whitespace();
    let mut dim = || -> std::result::Result<usize, String> {
        it.next()
            .ok_or("header needs 'W H'")?
            .parse::<usize>()
            .map_err(|e| format!("bad header: {e}"))
    };
    let (w, h) = (dim()?, dim()?);
    let payload = &bytes[nl + 1..];
    if payload.len() != w * h * 4 {
        return Err(format!(
            "payload has {} bytes, expected {} for {w}x{h}",
            payload.len(),
            w * h * 4
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Raster::from_vec(w, h, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_raster_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.f32");
        let r = Raster::from_vec(3, 2, vec![1.0, f32::NAN, 0.25, -3.5, 1e-30, f32::INFINITY]);
        write_f32_raster(&path, &r).unwrap();
        let back = read_f32_raster(&path).unwrap();
        assert_eq!(back.width, 3);
        let a: Vec<u32> = r.data.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_f32_raster_is_rejected() {
        assert!(parse_f32_raster(b"2 2\n\0\0\0\0").is_err());
        assert!(parse_f32_raster(b"2 2").is_err());
    }

    #[test]
    fn bilinear_hits_pixel_centers_exactly() {
        let r = Raster::from_vec(2, 1, vec![[0.0, 0.0, 0.0], [1.0, 0.5, 0.25]]);
        assert_eq!(r.sample_bilinear(1.0, 0.0), Some([1.0, 0.5, 0.25]));
        assert_eq!(r.sample_bilinear(0.5, 0.0), Some([0.5, 0.25, 0.125]));
        assert_eq!(r.sample_bilinear(2.0, 0.0), None);
    }
}
