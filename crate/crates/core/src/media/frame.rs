use crate::error::{Error, Result};
use crate::plane::Plane;

/// An RGB image with intensities in `[0, 1]`, stored row-major and interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub const CHANNELS: usize = 3;

    /// Wraps interleaved RGB samples, checking length, finiteness and range.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * Self::CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "frame {width}x{height} needs {} samples, got {}",
                height * width * Self::CHANNELS,
                data.len()
            )));
        }
        if let Some(bad) = data
            .iter()
            .find(|x| !x.is_finite() || **x < 0.0 || **x > 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "frame sample {bad} outside [0, 1]"
            )));
        }
        Ok(Frame {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Frame {
            height,
            width,
            data: vec![0.0; height * width * Self::CHANNELS],
        }
    }

    /// Builds a frame from a per-pixel closure; values are clamped into `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f32; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * Self::CHANNELS);
        for v in 0..height {
            for u in 0..width {
                let px = f(u, v);
                data.extend(px.iter().map(|x| clamp_unit(*x)));
            }
        }
        Frame {
            height,
            width,
            data,
        }
    }

    /// Replicates a gray plane into all three channels (values clamped into `[0, 1]`).
    pub fn from_gray(plane: &Plane) -> Self {
        Frame::from_fn(plane.height(), plane.width(), |u, v| {
            let g = plane.get(u, v);
            [g, g, g]
        })
    }

    /// Builds a frame from 8-bit RGB bytes, mapping each byte `x` to `x / 255`.
    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != height * width * Self::CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "rgb8 buffer for {width}x{height} has {} bytes",
                bytes.len()
            )));
        }
        Ok(Frame {
            height,
            width,
            data: bytes.iter().map(|b| *b as f32 / 255.0).collect(),
        })
    }

    /// Quantizes to 8-bit RGB with round-to-nearest.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|x| (x * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize) -> f32 {
        self.data[(v * self.width + u) * Self::CHANNELS + c]
    }

    #[inline]
    pub fn pixel(&self, u: usize, v: usize) -> [f32; 3] {
        let i = (v * self.width + u) * Self::CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, u: usize, v: usize, px: [f32; 3]) {
        let i = (v * self.width + u) * Self::CHANNELS;
        for c in 0..Self::CHANNELS {
            self.data[i + c] = clamp_unit(px[c]);
        }
    }

    /// One interleaved row of `width * 3` samples.
    #[inline]
    pub fn row(&self, v: usize) -> &[f32] {
        let stride = self.width * Self::CHANNELS;
        &self.data[v * stride..(v + 1) * stride]
    }

    /// Luma `0.299 R + 0.587 G + 0.114 B`.
    pub fn to_gray(&self) -> Plane {
        let data = self
            .data
            .chunks_exact(Self::CHANNELS)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        Plane::new(self.height, self.width, data)
    }

    /// Splits into three single-channel planes.
    pub fn channels(&self) -> [Plane; 3] {
        let mut planes = [
            Vec::with_capacity(self.height * self.width),
            Vec::with_capacity(self.height * self.width),
            Vec::with_capacity(self.height * self.width),
        ];
        for p in self.data.chunks_exact(Self::CHANNELS) {
            for c in 0..Self::CHANNELS {
                planes[c].push(p[c]);
            }
        }
        planes.map(|d| Plane::new(self.height, self.width, d))
    }

    /// Inverse of [`Frame::channels`]; samples are clamped into `[0, 1]`.
    pub fn from_channels(planes: &[Plane; 3]) -> Result<Self> {
        let (h, w) = planes[0].dims();
        if planes.iter().any(|p| p.dims() != (h, w)) {
            return Err(Error::ShapeMismatch("channel planes differ in size".into()));
        }
        Ok(Frame::from_fn(h, w, |u, v| {
            [
                planes[0].get(u, v),
                planes[1].get(u, v),
                planes[2].get(u, v),
            ]
        }))
    }

    /// Copy of the column range `[u0, u1)`.
    pub fn crop_columns(&self, u0: usize, u1: usize) -> Frame {
        assert!(u0 <= u1 && u1 <= self.width);
        let w = u1 - u0;
        let mut data = Vec::with_capacity(self.height * w * Self::CHANNELS);
        for v in 0..self.height {
            let row = self.row(v);
            data.extend_from_slice(&row[u0 * Self::CHANNELS..u1 * Self::CHANNELS]);
        }
        Frame {
            height: self.height,
            width: w,
            data,
        }
    }
}

#[inline]
fn clamp_unit(x: f32) -> f32 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

pub(crate) fn check_same_shape(a: &Frame, b: &Frame, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_samples() {
        assert!(Frame::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(Frame::new(1, 1, vec![0.0, f32::NAN, 0.0]).is_err());
        assert!(Frame::new(1, 2, vec![0.0; 3]).is_err());
        assert!(Frame::new(1, 1, vec![0.0, 0.5, 1.0]).is_ok());
    }

    #[test]
    fn rgb8_round_trip_is_exact() {
        let bytes: Vec<u8> = (0..=255u8).cycle().take(7 * 5 * 3).collect();
        let f = Frame::from_rgb8(5, 7, &bytes).unwrap();
        assert_eq!(f.to_rgb8(), bytes);
    }

    #[test]
    fn gray_uses_bt601_weights() {
        let f = Frame::from_fn(1, 1, |_, _| [1.0, 0.0, 0.0]);
        assert!((f.to_gray().get(0, 0) - 0.299).abs() < 1e-7);
    }

    #[test]
    fn crop_columns_keeps_rows() {
        let f = Frame::from_fn(2, 4, |u, v| [u as f32 / 4.0, v as f32 / 2.0, 0.0]);
        let c = f.crop_columns(1, 3);
        assert_eq!(c.dims(), (2, 2));
        assert_eq!(c.pixel(0, 1), f.pixel(1, 1));
        assert_eq!(c.pixel(1, 0), f.pixel(2, 0));
    }
}
