use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Resolution tag carried by every image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ppi {
    #[serde(rename = "250")]
    P250,
    #[serde(rename = "500")]
    P500,
}

impl Ppi {
    pub fn value(self) -> u32 {
        match self {
            Ppi::P250 => 250,
            Ppi::P500 => 500,
        }
    }

    /// Pipeline resolution implied by a square side length (256 at 250 ppi, 512 at 500 ppi).
    pub fn for_side(side: usize) -> Option<Ppi> {
        match side {
            256 => Some(Ppi::P250),
            512 => Some(Ppi::P500),
            _ => None,
        }
    }

    /// Factor converting a length given in 500-ppi pixels to this resolution.
    pub fn scale_from_500(self) -> f64 {
        self.value() as f64 / 500.0
    }
}

fn check_pipeline_shape(width: usize, height: usize, ppi: Ppi) -> Result<()> {
    if width != height || Ppi::for_side(width) != Some(ppi) {
        return Err(shape_err(
            "256x256 @ 250 ppi or 512x512 @ 500 ppi",
            format!("{width}x{height} @ {} ppi", ppi.value()),
        ));
    }
    Ok(())
}

/// Grayscale print with intensities in `[0, 1]` (0 = black ridge ink, 1 = white background).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayFingerprint {
    width: usize,
    height: usize,
    ppi: Ppi,
    pixels: Vec<f32>,
}

impl GrayFingerprint {
    pub fn new(width: usize, height: usize, ppi: Ppi, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(shape_err(width * height, pixels.len()));
        }
        if let Some((i, v)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::InvalidValue(format!(
                "gray pixel {i} = {v} outside [0,1]"
            )));
        }
        Ok(Self {
            width,
            height,
            ppi,
            pixels,
        })
    }

    /// Constructor that also enforces the pipeline size/ppi pairing.
    pub fn new_pipeline(width: usize, height: usize, ppi: Ppi, pixels: Vec<f32>) -> Result<Self> {
        check_pipeline_shape(width, height, ppi)?;
        Self::new(width, height, ppi, pixels)
    }

    /// Builds from arbitrary values, clamping into `[0, 1]` (non-finite values become 1).
    pub fn from_clamped(width: usize, height: usize, ppi: Ppi, mut pixels: Vec<f32>) -> Result<Self> {
        for v in &mut pixels {
            *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 1.0 };
        }
        Self::new(width, height, ppi, pixels)
    }

    pub fn constant(width: usize, height: usize, ppi: Ppi, value: f32) -> Result<Self> {
        Self::new(width, height, ppi, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn ppi(&self) -> Ppi {
        self.ppi
    }
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }
    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// 8-bit quantization used on disk.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, ppi: Ppi, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            ppi,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }

    /// Snaps intensities to the 8-bit grid so in-memory images equal their PNG round trip.
    pub fn quantized(&self) -> Self {
        let bytes = self.to_u8();
        Self::from_u8(self.width, self.height, self.ppi, &bytes).expect("quantized in range")
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        super::io::encode_gray_png(self.width, self.height, &self.to_u8())
    }

    pub fn write_png(&self, path: &Path) -> Result<Vec<u8>> {
        let bytes = self.encode_png()?;
        super::io::write_bytes(path, &bytes)?;
        Ok(bytes)
    }

    /// Reads an 8-bit PNG; the ppi tag is inferred from the side length (500 unless 256).
    pub fn read_png(path: &Path) -> Result<Self> {
        let (w, h, data) = super::io::read_gray_png(path)?;
        let ppi = Ppi::for_side(w.max(h)).unwrap_or(Ppi::P500);
        Self::from_u8(w, h, ppi, &data)
    }
}

/// Strict `{0,1}` ridge map (1 = ridge). Also used for segmentation masks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryRidgeMap {
    width: usize,
    height: usize,
    ppi: Ppi,
    pixels: Vec<u8>,
}

impl BinaryRidgeMap {
    pub fn new(width: usize, height: usize, ppi: Ppi, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(shape_err(width * height, pixels.len()));
        }
        if let Some((i, v)) = pixels.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(Error::InvalidValue(format!(
                "binary pixel {i} = {v} not in {{0,1}}"
            )));
        }
        Ok(Self {
            width,
            height,
            ppi,
            pixels,
        })
    }

    pub fn new_pipeline(width: usize, height: usize, ppi: Ppi, pixels: Vec<u8>) -> Result<Self> {
        check_pipeline_shape(width, height, ppi)?;
        Self::new(width, height, ppi, pixels)
    }

    pub fn zeros(width: usize, height: usize, ppi: Ppi) -> Self {
        Self {
            width,
            height,
            ppi,
            pixels: vec![0; width * height],
        }
    }

    pub fn ones(width: usize, height: usize, ppi: Ppi) -> Self {
        Self {
            width,
            height,
            ppi,
            pixels: vec![1; width * height],
        }
    }

    /// Thresholds a soft map: `v >= threshold` becomes 1.
    pub fn from_soft(width: usize, height: usize, ppi: Ppi, soft: &[f32], threshold: f32) -> Result<Self> {
        if soft.len() != width * height {
            return Err(shape_err(width * height, soft.len()));
        }
        Ok(Self {
            width,
            height,
            ppi,
            pixels: soft.iter().map(|&v| u8::from(v >= threshold)).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn ppi(&self) -> Ppi {
        self.ppi
    }
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.pixels[y * self.width + x] = u8::from(v);
    }

    pub fn count_ones(&self) -> usize {
        self.pixels.iter().map(|&v| v as usize).sum()
    }

    pub fn ridge_fraction(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.count_ones() as f64 / self.pixels.len() as f64
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.pixels.iter().map(|&v| v as f32).collect()
    }

    /// Elementwise product (masking).
    pub fn and(&self, other: &BinaryRidgeMap) -> Result<BinaryRidgeMap> {
        if self.width != other.width || self.height != other.height {
            return Err(shape_err(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(BinaryRidgeMap {
            width: self.width,
            height: self.height,
            ppi: self.ppi,
            pixels: self
                .pixels
                .iter()
                .zip(&other.pixels)
                .map(|(a, b)| a & b)
                .collect(),
        })
    }

    /// Fraction of pixels on which two equally sized maps agree.
    pub fn agreement(&self, other: &BinaryRidgeMap) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(shape_err(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        let same = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .filter(|(a, b)| a == b)
            .count();
        Ok(same as f64 / self.pixels.len().max(1) as f64)
    }

    /// Halves each side; a 2x2 block becomes a ridge when at least two of its pixels are.
    pub fn downsample2(&self) -> BinaryRidgeMap {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut out = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                let s = self.get(2 * x, 2 * y) as u32
                    + self.get(2 * x + 1, 2 * y) as u32
                    + self.get(2 * x, 2 * y + 1) as u32
                    + self.get(2 * x + 1, 2 * y + 1) as u32;
                out[y * w + x] = u8::from(s >= 2);
            }
        }
        let ppi = if self.ppi == Ppi::P500 { Ppi::P250 } else { self.ppi };
        BinaryRidgeMap {
            width: w,
            height: h,
            ppi,
            pixels: out,
        }
    }

    /// Nearest-neighbour doubling.
    pub fn upsample2(&self) -> BinaryRidgeMap {
        let (w, h) = (self.width * 2, self.height * 2);
        let mut out = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = self.get(x / 2, y / 2);
            }
        }
        let ppi = if self.ppi == Ppi::P250 { Ppi::P500 } else { self.ppi };
        BinaryRidgeMap {
            width: w,
            height: h,
            ppi,
            pixels: out,
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let bytes: Vec<u8> = self.pixels.iter().map(|&v| v * 255).collect();
        super::io::encode_gray_png(self.width, self.height, &bytes)
    }

    pub fn write_png(&self, path: &Path) -> Result<Vec<u8>> {
        let bytes = self.encode_png()?;
        super::io::write_bytes(path, &bytes)?;
        Ok(bytes)
    }

    /// Reads a PNG and thresholds at mid-gray.
    pub fn read_png(path: &Path) -> Result<Self> {
        let (w, h, data) = super::io::read_gray_png(path)?;
        let ppi = Ppi::for_side(w.max(h)).unwrap_or(Ppi::P250);
        Ok(Self {
            width: w,
            height: h,
            ppi,
            pixels: data.iter().map(|&b| u8::from(b >= 128)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_rejects_out_of_range() {
        assert!(GrayFingerprint::new(2, 1, Ppi::P500, vec![0.0, 1.5]).is_err());
        assert!(GrayFingerprint::new(2, 1, Ppi::P500, vec![f32::NAN, 0.5]).is_err());
        assert!(GrayFingerprint::new(2, 1, Ppi::P500, vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn binary_rejects_non_binary() {
        assert!(BinaryRidgeMap::new(2, 1, Ppi::P250, vec![0, 2]).is_err());
        assert!(BinaryRidgeMap::new(2, 1, Ppi::P250, vec![0, 1]).is_ok());
    }

    #[test]
    fn pipeline_shape_pairs_size_with_ppi() {
        assert!(BinaryRidgeMap::new_pipeline(256, 256, Ppi::P250, vec![0; 256 * 256]).is_ok());
        assert!(BinaryRidgeMap::new_pipeline(256, 256, Ppi::P500, vec![0; 256 * 256]).is_err());
        assert!(GrayFingerprint::new_pipeline(512, 512, Ppi::P500, vec![1.0; 512 * 512]).is_ok());
        assert!(GrayFingerprint::new_pipeline(300, 300, Ppi::P500, vec![1.0; 300 * 300]).is_err());
    }

    #[test]
    fn downsample_then_upsample_preserves_blocks() {
        let mut m = BinaryRidgeMap::zeros(4, 4, Ppi::P500);
        m.set(0, 0, true);
        m.set(1, 0, true);
        m.set(2, 2, true);
        let d = m.downsample2();
        assert_eq!(d.pixels(), &[1, 0, 0, 0]);
        assert_eq!(d.ppi(), Ppi::P250);
        assert_eq!(d.upsample2().count_ones(), 4);
    }
}
