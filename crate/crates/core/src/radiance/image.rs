use std::path::Path;

use super::RadianceError;

/// Linear RGB image with channels in `[0, 1]`, rows top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; 3 * width as usize * height as usize],
        }
    }

    pub fn get(&self, col: u32, row: u32) -> [f64; 3] {
        let i = 3 * (row as usize * self.width as usize + col as usize);
        [self.data[i] as f64, self.data[i + 1] as f64, self.data[i + 2] as f64]
    }

    pub fn set(&mut self, col: u32, row: u32, rgb: [f64; 3]) {
        let i = 3 * (row as usize * self.width as usize + col as usize);
        for c in 0..3 {
            self.data[i + c] = rgb[c] as f32;
        }
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Absolute per-channel difference, scaled by `gain` and clamped.
    pub fn abs_diff(&self, other: &Image, gain: f32) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| ((a - b).abs() * gain).min(1.0))
                .collect(),
        }
    }

    /// Images placed left to right; heights must agree.
    pub fn hstack(images: &[&Image]) -> Option<Image> {
        let height = images.first()?.height;
        if images.iter().any(|i| i.height != height) {
            return None;
        }
        let width = images.iter().map(|i| i.width).sum();
        let mut out = Image::new(width, height);
        for row in 0..height as usize {
            let mut at = 3 * row * width as usize;
            for img in images {
                let w = 3 * img.width as usize;
                out.data[at..at + w].copy_from_slice(&img.data[row * w..(row + 1) * w]);
                at += w;
            }
        }
        Some(out)
    }

    /// Reads a PNG, preferring the full-precision `.bin` next to it when one
    /// of the matching size exists.
    pub fn read_png_or_raw(path: &Path) -> Result<Image, RadianceError> {
        let png = Self::read_png(path)?;
        let raw = path.with_extension("bin");
        if raw.exists() {
            Self::read_raw(&raw, png.width, png.height)
        } else {
            Ok(png)
        }
    }

    pub fn write_png(&self, path: &Path) -> Result<(), RadianceError> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::save_buffer(path, &bytes, self.width, self.height, image::ColorType::Rgb8)
            .map_err(|e| RadianceError::Checkpoint(e.to_string()))
    }

    pub fn read_png(path: &Path) -> Result<Image, RadianceError> {
        let img = image::open(path)
            .map_err(|e| RadianceError::Checkpoint(e.to_string()))?
            .to_rgb8();
        Ok(Image {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&b| b as f32 / 255.0).collect(),
        })
    }

    /// Raw little-endian f32 buffer, interleaved RGB.
    pub fn write_raw(&self, path: &Path) -> Result<(), RadianceError> {
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read_raw(path: &Path, width: u32, height: u32) -> Result<Image, RadianceError> {
        let bytes = std::fs::read(path)?;
        let expected = 12 * width as usize * height as usize;
        if bytes.len() != expected {
            return Err(RadianceError::Checkpoint(format!(
                "raw image {}: expected {expected} bytes, found {}",
                path.display(),
                bytes.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data: bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_raw_round_trip() {
        let mut img = Image::new(3, 2);
        img.set(1, 1, [0.2, 0.6, 1.0]);
        let dir = tempfile::tempdir().unwrap();
        img.write_raw(&dir.path().join("a.bin")).unwrap();
        assert_eq!(Image::read_raw(&dir.path().join("a.bin"), 3, 2).unwrap(), img);
        img.write_png(&dir.path().join("a.png")).unwrap();
        let back = Image::read_png(&dir.path().join("a.png")).unwrap();
        assert!((back.get(1, 1)[1] - 0.6).abs() < 1.0 / 255.0);
        assert_eq!(Image::read_png_or_raw(&dir.path().join("a.png")).unwrap(), img);
    }

    #[test]
    fn hstack_concatenates_rows() {
        let mut a = Image::new(1, 2);
        a.set(0, 1, [1.0, 0.0, 0.0]);
        let mut b = Image::new(2, 2);
        b.set(1, 0, [0.0, 1.0, 0.0]);
        let s = Image::hstack(&[&a, &b]).unwrap();
        assert_eq!((s.width, s.height), (3, 2));
        assert_eq!(s.get(0, 1), [1.0, 0.0, 0.0]);
        assert_eq!(s.get(2, 0), [0.0, 1.0, 0.0]);
        assert!(Image::hstack(&[&a, &Image::new(1, 3)]).is_none());
        assert!(Image::hstack(&[]).is_none());
    }
}
