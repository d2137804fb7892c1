//! Test-time distortions: Gaussian noise, Gaussian blur, salt-and-pepper
//! noise, motion blur and speckle noise.
//!
//! Level units per family:
//!
//! | family         | level                                   |
//! |----------------|-----------------------------------------|
//! | gaussian-noise | variance on `[0, 1]`-scaled intensities |
//! | gaussian-blur  | kernel standard deviation in pixels     |
//! | salt-pepper    | per-pixel corruption probability        |
//! | motion-blur    | motion angle in degrees                 |
//! | speckle        | variance of the multiplicative noise    |
//!
//! Convolutions use reflect padding (`d c b | a b c d | c b a`). Every output is
//! clamped to `[0, 255]`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::image::{ImageTensor, PIXEL_MAX, PIXEL_MIN};
use crate::rng::{purpose, stream};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistortionKind {
    GaussianNoise,
    SaltPepper,
    Speckle,
    GaussianBlur,
    MotionBlur,
}

impl DistortionKind {
    /// Column order used in reports.
    pub const ALL: [DistortionKind; 5] = [
        DistortionKind::GaussianNoise,
        DistortionKind::SaltPepper,
        DistortionKind::Speckle,
        DistortionKind::GaussianBlur,
        DistortionKind::MotionBlur,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::GaussianNoise => "gaussian-noise",
            DistortionKind::SaltPepper => "salt-pepper",
            DistortionKind::Speckle => "speckle",
            DistortionKind::GaussianBlur => "gaussian-blur",
            DistortionKind::MotionBlur => "motion-blur",
        }
    }

    /// Short column header for tables.
    pub fn label(self) -> &'static str {
        match self {
            DistortionKind::GaussianNoise => "Gauss. Noise",
            DistortionKind::SaltPepper => "Salt and Pepper",
            DistortionKind::Speckle => "Speckle",
            DistortionKind::GaussianBlur => "Gauss. Blur",
            DistortionKind::MotionBlur => "Motion Blur",
        }
    }

    pub fn is_blur(self) -> bool {
        matches!(self, DistortionKind::GaussianBlur | DistortionKind::MotionBlur)
    }

    fn index(self) -> u64 {
        Self::ALL.iter().position(|&k| k == self).unwrap() as u64
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| invalid(format!("unknown distortion kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    pub kind: DistortionKind,
    pub level: f64,
}

impl DistortionSpec {
    pub fn new(kind: DistortionKind, level: f64) -> Self {
        Self { kind, level }
    }

    /// Levels must be finite, non-negative and no larger than the profile's
    /// upper bound for the family.
    pub fn validate(&self, profile: &DatasetProfile) -> Result<()> {
        let range = profile.range(self.kind);
        if !self.level.is_finite() || self.level < 0.0 || self.level > range.max + 1e-12 {
            return Err(invalid(format!(
                "{} level {} outside [0, {}] for the {} profile",
                self.kind, self.level, range.max, profile.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileName {
    /// 32x32 CIFAR-style inputs.
    Small,
    /// ImageNet-style inputs.
    Large,
}

impl fmt::Display for ProfileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProfileName::Small => "small",
            ProfileName::Large => "large",
        })
    }
}

impl FromStr for ProfileName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "small" | "cifar" => Ok(ProfileName::Small),
            "large" | "imagenet" => Ok(ProfileName::Large),
            _ => Err(invalid(format!("unknown profile '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRange {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub name: ProfileName,
    pub gaussian_noise: LevelRange,
    pub salt_pepper: LevelRange,
    pub speckle: LevelRange,
    pub gaussian_blur: LevelRange,
    pub motion_blur: LevelRange,
    /// Length of the motion blur line kernel in pixels.
    pub motion_length: usize,
}

impl DatasetProfile {
    pub fn small() -> Self {
        Self {
            name: ProfileName::Small,
            gaussian_noise: LevelRange { min: 0.1, max: 0.5 },
            salt_pepper: LevelRange { min: 0.0, max: 0.5 },
            speckle: LevelRange { min: 0.1, max: 0.5 },
            gaussian_blur: LevelRange { min: 0.0, max: 5.0 },
            motion_blur: LevelRange { min: 0.0, max: 22.5 },
            motion_length: 9,
        }
    }

    pub fn large() -> Self {
        Self {
            name: ProfileName::Large,
            gaussian_blur: LevelRange { min: 0.0, max: 10.0 },
            motion_blur: LevelRange { min: 0.0, max: 45.0 },
            motion_length: 19,
            ..Self::small()
        }
    }

    pub fn named(name: ProfileName) -> Self {
        match name {
            ProfileName::Small => Self::small(),
            ProfileName::Large => Self::large(),
        }
    }

    pub fn range(&self, kind: DistortionKind) -> LevelRange {
        match kind {
            DistortionKind::GaussianNoise => self.gaussian_noise,
            DistortionKind::SaltPepper => self.salt_pepper,
            DistortionKind::Speckle => self.speckle,
            DistortionKind::GaussianBlur => self.gaussian_blur,
            DistortionKind::MotionBlur => self.motion_blur,
        }
    }
}

pub const GRID_LEVELS: usize = 5;

/// Five evenly spaced levels spanning the family's range. Ranges that start
/// at zero drop the identity endpoint: `{r/5, 2r/5, ..., r}`.
pub fn level_grid(kind: DistortionKind, profile: &DatasetProfile) -> [DistortionSpec; GRID_LEVELS] {
    let LevelRange { min, max } = profile.range(kind);
    let n = GRID_LEVELS as f64;
    std::array::from_fn(|i| {
        let i = i as f64;
        let level = if min == 0.0 {
            max * (i + 1.0) / n
        } else {
            (min * (n - 1.0 - i) + max * i) / (n - 1.0)
        };
        DistortionSpec::new(kind, level)
    })
}

/// Reflect-101 index into `0..len`.
fn reflect(index: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = index.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Truncated, normalised Gaussian; length is the smallest odd integer >= 6 sigma + 1.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let mut len = (6.0 * sigma + 1.0).ceil() as usize;
    if len.is_multiple_of(2) {
        len += 1;
    }
    let radius = (len / 2) as f64;
    let raw: Vec<f64> = (0..len)
        .map(|i| {
            let x = i as f64 - radius;
            (-(x * x) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// `length x length` kernel of a line through the centre at `angle_deg`
/// (counter-clockwise from the +x axis, y pointing down), anti-aliased by
/// bilinear splatting and normalised to sum 1. Row-major.
pub fn motion_kernel(length: usize, angle_deg: f64) -> Vec<f64> {
    let length = length.max(1);
    let mut k = vec![0.0; length * length];
    let centre = (length as f64 - 1.0) / 2.0;
    let (sin, cos) = (angle_deg * PI / 180.0).sin_cos();
    let samples = 16 * length;
    let half = (length as f64 - 1.0) / 2.0;
    for s in 0..samples {
        let t = if samples == 1 {
            0.0
        } else {
            -half + 2.0 * half * s as f64 / (samples - 1) as f64
        };
        let x = centre + t * cos;
        let y = centre - t * sin;
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
            for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                let (cx, cy) = (x0 + dx, y0 + dy);
                if cx < 0.0 || cy < 0.0 || cx >= length as f64 || cy >= length as f64 {
                    continue;
                }
                k[cy as usize * length + cx as usize] += wx * wy;
            }
        }
    }
    let total: f64 = k.iter().sum();
    k.into_iter().map(|w| w / total).collect()
}

// Accumulating `centre + sum w_i (x_i - centre)` instead of `sum w_i x_i`
// makes constant regions come out bit-exact for normalised kernels.

fn blur_separable<T: Scalar>(image: &ImageTensor<T>, kernel: &[f64]) -> ImageTensor<T> {
    let (channels, h, w) = image.shape();
    let r = (kernel.len() / 2) as isize;
    let mut out = image.clone();
    let mut tmp = vec![0.0f64; h * w];
    for ch in 0..channels {
        let src: Vec<f64> = image.channel(ch).iter().map(|v| v.to_f64_lossy()).collect();
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let centre = row[x];
                let mut acc = 0.0;
                for (i, &k) in kernel.iter().enumerate() {
                    acc += k * (row[reflect(x as isize + i as isize - r, w)] - centre);
                }
                tmp[y * w + x] = centre + acc;
            }
        }
        let dst = out.channel_mut(ch);
        for y in 0..h {
            for x in 0..w {
                let centre = tmp[y * w + x];
                let mut acc = 0.0;
                for (i, &k) in kernel.iter().enumerate() {
                    acc += k * (tmp[reflect(y as isize + i as isize - r, h) * w + x] - centre);
                }
                dst[y * w + x] = T::from_f64_lossy((centre + acc).clamp(PIXEL_MIN, PIXEL_MAX));
            }
        }
    }
    out
}

fn convolve_2d<T: Scalar>(image: &ImageTensor<T>, kernel: &[f64], size: usize) -> ImageTensor<T> {
    let (channels, h, w) = image.shape();
    let r = (size / 2) as isize;
    let taps: Vec<(isize, isize, f64)> = (0..size)
        .flat_map(|ky| (0..size).map(move |kx| (ky, kx)))
        .map(|(ky, kx)| (ky as isize - r, kx as isize - r, kernel[ky * size + kx]))
        .filter(|t| t.2 != 0.0)
        .collect();
    let mut out = image.clone();
    for ch in 0..channels {
        let src: Vec<f64> = image.channel(ch).iter().map(|v| v.to_f64_lossy()).collect();
        let dst = out.channel_mut(ch);
        for y in 0..h {
            for x in 0..w {
                let centre = src[y * w + x];
                let mut acc = 0.0;
                for &(dy, dx, k) in &taps {
                    let sy = reflect(y as isize + dy, h);
                    let sx = reflect(x as isize + dx, w);
                    acc += k * (src[sy * w + sx] - centre);
                }
                dst[y * w + x] = T::from_f64_lossy((centre + acc).clamp(PIXEL_MIN, PIXEL_MAX));
            }
        }
    }
    out
}

fn normal(variance: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, variance.sqrt()).map_err(|e| invalid(format!("noise distribution: {e}")))
}

/// Applies one distortion. `rng` supplies every random draw.
pub fn distort<T: Scalar, R: Rng + ?Sized>(
    image: &ImageTensor<T>,
    spec: DistortionSpec,
    profile: &DatasetProfile,
    rng: &mut R,
) -> Result<ImageTensor<T>> {
    spec.validate(profile)?;
    image.ensure_finite()?;
    let level = spec.level;
    let (lo, hi) = (lit::<T>(PIXEL_MIN), lit::<T>(PIXEL_MAX));
    let clamp = |v: f64| T::from_f64_lossy(v.clamp(PIXEL_MIN, PIXEL_MAX));
    let out = match spec.kind {
        DistortionKind::GaussianNoise => {
            let noise = normal(level)?;
            let mut out = image.clone();
            for v in out.data_mut() {
                *v = clamp(v.to_f64_lossy() + PIXEL_MAX * noise.sample(rng));
            }
            out
        }
        DistortionKind::Speckle => {
            let noise = normal(level)?;
            let mut out = image.clone();
            for v in out.data_mut() {
                *v = clamp(v.to_f64_lossy() * (1.0 + noise.sample(rng)));
            }
            out
        }
        DistortionKind::SaltPepper => {
            let (channels, h, w) = image.shape();
            let mut out = image.clone();
            for idx in 0..h * w {
                if rng.random::<f64>() < level {
                    let value = if rng.random_bool(0.5) { hi } else { lo };
                    for ch in 0..channels {
                        out.channel_mut(ch)[idx] = value;
                    }
                }
            }
            out
        }
        DistortionKind::GaussianBlur => {
            if level == 0.0 {
                image.clone()
            } else {
                blur_separable(image, &gaussian_kernel(level))
            }
        }
        DistortionKind::MotionBlur => {
            let size = profile.motion_length;
            convolve_2d(image, &motion_kernel(size, level), size)
        }
    };
    Ok(out)
}

/// [`distort`] with the stream keyed by `(seed, family, level, image_id)`, so
/// every model evaluated with the same seed sees the same corrupted pixels.
pub fn distort_seeded<T: Scalar>(
    image: &ImageTensor<T>,
    spec: DistortionSpec,
    profile: &DatasetProfile,
    seed: u64,
    image_id: u64,
) -> Result<ImageTensor<T>> {
    let mut rng = stream(
        seed,
        &[purpose::DISTORT, spec.kind.index(), spec.level.to_bits(), image_id],
    );
    distort(image, spec, profile, &mut rng)
}
