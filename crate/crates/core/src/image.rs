//! Raster types.
//!
//! [`ImageTensor`] stores channels planar (`C x H x W`, row-major inside each
//! plane), which is the layout both the per-channel transforms and the
//! convolution layers want. Pixel intensities live on the 8-bit scale
//! `[0, 255]` throughout the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

pub const PIXEL_MIN: f64 = 0.0;
pub const PIXEL_MAX: f64 = 255.0;

/// Sum of squared values, accumulated in double precision.
pub fn energy<T: Scalar>(values: &[T]) -> f64 {
    values
        .iter()
        .map(|v| {
            let v = v.to_f64_lossy();
            v * v
        })
        .sum()
}

/// A single `height x width` channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePlane<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T: Scalar> ImagePlane<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Empty("image plane"));
        }
        if values.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values ({height}x{width})", height * width),
                found: format!("{} values", values.len()),
            });
        }
        Ok(Self { height, width, values })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(height, width, values)
    }

    pub fn filled(height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.values[row * self.width + col]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn energy(&self) -> f64 {
        energy(&self.values)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.height, self.width), (other.height, other.width));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max)
    }
}

/// A multi-channel image, planar `C x H x W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> ImageTensor<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Empty("image"));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{expected} values ({channels}x{height}x{width})"),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Builds an image from `f(channel, row, col)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for ch in 0..channels {
            for r in 0..height {
                for c in 0..width {
                    data.push(f(ch, r, c));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    /// Interleaved 8-bit samples (`H x W x C`, as found in PPM files).
    pub fn from_interleaved_u8(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != channels * height * width {
            return Err(Error::Format(format!(
                "expected {} interleaved bytes, found {}",
                channels * height * width,
                bytes.len()
            )));
        }
        Self::from_fn(channels, height, width, |ch, r, c| {
            T::from_u8(bytes[(r * width + c) * channels + ch]).unwrap_or_else(T::zero)
        })
    }

    /// Planar 8-bit samples (`C x H x W`, as found in CIFAR records).
    pub fn from_planar_u8(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| T::from_u8(b).unwrap_or_else(T::zero)).collect();
        Self::new(channels, height, width, data)
    }

    pub fn from_planes(planes: Vec<ImagePlane<T>>) -> Result<Self> {
        let first = planes.first().ok_or(Error::Empty("plane list"))?;
        let (h, w) = (first.height, first.width);
        let channels = planes.len();
        let mut data = Vec::with_capacity(channels * h * w);
        for p in planes {
            if (p.height, p.width) != (h, w) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{h}x{w}"),
                    found: format!("{}x{}", p.height, p.width),
                });
            }
            data.extend(p.values);
        }
        Self::new(channels, h, w, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn channel(&self, ch: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn channel_mut(&mut self, ch: usize) -> &mut [T] {
        let n = self.height * self.width;
        &mut self.data[ch * n..(ch + 1) * n]
    }

    pub fn plane(&self, ch: usize) -> ImagePlane<T> {
        ImagePlane {
            height: self.height,
            width: self.width,
            values: self.channel(ch).to_vec(),
        }
    }

    pub fn get(&self, ch: usize, row: usize, col: usize) -> T {
        self.data[(ch * self.height + row) * self.width + col]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite("image pixels"))
        }
    }

    /// Clamps every sample to the 8-bit intensity range.
    pub fn clamp_to_pixel_range(&mut self) {
        let (lo, hi) = (lit::<T>(PIXEL_MIN), lit::<T>(PIXEL_MAX));
        for v in &mut self.data {
            *v = v.max(lo).min(hi);
        }
    }

    pub fn energy(&self) -> f64 {
        energy(&self.data)
    }

    pub fn cast<U: Scalar>(&self) -> ImageTensor<U> {
        ImageTensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect(),
        }
    }

    /// Rounds and clamps to 8-bit samples, interleaved `H x W x C`.
    pub fn to_interleaved_u8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len());
        for r in 0..self.height {
            for c in 0..self.width {
                for ch in 0..self.channels {
                    out.push(quantize(self.get(ch, r, c)));
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max)
    }
}

fn quantize<T: Scalar>(v: T) -> u8 {
    let v = v.to_f64_lossy();
    if v.is_nan() {
        0
    } else {
        v.round().clamp(PIXEL_MIN, PIXEL_MAX) as u8
    }
}
