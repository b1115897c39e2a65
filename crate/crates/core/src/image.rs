//! Planar floating-point images.

use crate::error::{Error, Result};

/// Colour interpretation of an image's channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColorSpace {
    Rgb,
    YCbCr,
    Gray,
}

/// Nominal sample range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleRange {
    /// Samples nominally in `[0, 1]`.
    Unit,
    /// Samples nominally in `[0, 255]`.
    Byte,
}

impl SampleRange {
    /// Multiplier that converts a sample in this range to byte units.
    pub fn to_byte_factor(self) -> f64 {
        match self {
            SampleRange::Unit => 255.0,
            SampleRange::Byte => 1.0,
        }
    }
}

/// An `H×W×C` image stored plane by plane (`data[c][y][x]`).
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarImage {
    height: usize,
    width: usize,
    channels: usize,
    space: ColorSpace,
    range: SampleRange,
    data: Vec<f64>,
}

impl PlanarImage {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        space: ColorSpace,
        range: SampleRange,
        data: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("empty image ({height}x{width})")));
        }
        let expected_channels = match space {
            ColorSpace::Gray => 1,
            ColorSpace::Rgb | ColorSpace::YCbCr => 3,
        };
        if channels != expected_channels {
            return Err(Error::invalid(format!(
                "{space:?} image needs {expected_channels} channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!(
                "data length {} != {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {bad}")));
        }
        Ok(Self { height, width, channels, space, range, data })
    }

    /// Constant image.
    pub fn filled(
        height: usize,
        width: usize,
        space: ColorSpace,
        range: SampleRange,
        values: &[f64],
    ) -> Result<Self> {
        let plane = height * width;
        let data = values
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, plane))
            .collect();
        Self::new(height, width, values.len(), space, range, data)
    }

    /// Builds an image from interleaved (`[y][x][c]`) samples, e.g. PPM order.
    pub fn from_interleaved(
        height: usize,
        width: usize,
        channels: usize,
        space: ColorSpace,
        range: SampleRange,
        interleaved: &[f64],
    ) -> Result<Self> {
        if interleaved.len() != height * width * channels {
            return Err(Error::shape(format!(
                "interleaved length {} != {height}x{width}x{channels}",
                interleaved.len()
            )));
        }
        let plane = height * width;
        let mut data = vec![0.0; interleaved.len()];
        for (i, px) in interleaved.chunks_exact(channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                data[c * plane + i] = v;
            }
        }
        Self::new(height, width, channels, space, range, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn range(&self) -> SampleRange {
        self.range
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Samples in `[y][x][c]` order.
    pub fn to_interleaved(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(self.data.len());
        for i in 0..plane {
            for c in 0..self.channels {
                out.push(self.data[c * plane + i]);
            }
        }
        out
    }

    /// Converts between unit and byte ranges by scaling.
    pub fn to_range(&self, range: SampleRange) -> PlanarImage {
        let factor = self.range.to_byte_factor() / range.to_byte_factor();
        let mut out = self.clone();
        if factor != 1.0 {
            out.data.iter_mut().for_each(|v| *v *= factor);
        }
        out.range = range;
        out
    }

    /// Clamps to the nominal range.
    pub fn clamped(&self) -> PlanarImage {
        let hi = match self.range {
            SampleRange::Unit => 1.0,
            SampleRange::Byte => 255.0,
        };
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, hi));
        out
    }

    /// Crops the rectangle `[y0, y0+h) × [x0, x0+w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<PlanarImage> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            return Err(Error::invalid(format!(
                "crop {h}x{w}@({y0},{x0}) outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in y0..y0 + h {
                data.extend_from_slice(&plane[y * self.width + x0..y * self.width + x0 + w]);
            }
        }
        PlanarImage::new(h, w, self.channels, self.space, self.range, data)
    }

    /// Mirrors the image left to right.
    pub fn flipped_horizontally(&self) -> PlanarImage {
        let mut out = self.clone();
        for c in 0..self.channels {
            let plane = out.plane_mut(c);
            for row in plane.chunks_exact_mut(self.width) {
                row.reverse();
            }
        }
        out
    }

    /// A single channel as a gray image.
    pub fn channel_image(&self, c: usize) -> PlanarImage {
        PlanarImage {
            height: self.height,
            width: self.width,
            channels: 1,
            space: ColorSpace::Gray,
            range: self.range,
            data: self.plane(c).to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_lengths_and_nan() {
        assert!(PlanarImage::new(2, 2, 3, ColorSpace::Rgb, SampleRange::Byte, vec![0.0; 11]).is_err());
        let mut data = vec![0.0; 12];
        data[5] = f64::NAN;
        assert!(PlanarImage::new(2, 2, 3, ColorSpace::Rgb, SampleRange::Byte, data).is_err());
        assert!(PlanarImage::new(0, 2, 1, ColorSpace::Gray, SampleRange::Byte, vec![]).is_err());
    }

    #[test]
    fn interleaved_round_trip() {
        let inter: Vec<f64> = (0..2 * 3 * 3).map(f64::from).collect();
        let img = PlanarImage::from_interleaved(2, 3, 3, ColorSpace::Rgb, SampleRange::Byte, &inter).unwrap();
        assert_eq!(img.get(1, 0, 0), 1.0);
        assert_eq!(img.get(0, 1, 2), 15.0);
        assert_eq!(img.to_interleaved(), inter);
    }

    #[test]
    fn crop_and_flip() {
        let data: Vec<f64> = (0..16).map(f64::from).collect();
        let img = PlanarImage::new(4, 4, 1, ColorSpace::Gray, SampleRange::Byte, data).unwrap();
        let c = img.crop(1, 2, 2, 2).unwrap();
        assert_eq!(c.data(), &[6.0, 7.0, 10.0, 11.0]);
        assert_eq!(img.flipped_horizontally().get(0, 0, 0), 3.0);
        assert!(img.crop(3, 3, 2, 2).is_err());
    }
}
