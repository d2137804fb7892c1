//! Random DCT coefficient thresholding, applied to training inputs only.
//!
//! Each image draws an integer threshold `X` uniformly from `[low, high]`
//! (inclusive; `[0, 50]` by default). Every channel is transformed with the
//! full-image DCT, coefficients whose magnitude lies strictly under `X` are
//! zeroed, and the plane is reconstructed and clamped to the pixel range. All
//! channels of one image share the same `X`.
//!
//! Nothing on the inference path depends on this module.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dct::{self, CoefficientPlane};
use crate::error::{invalid, Error, Result};
use crate::image::{ImageTensor, PIXEL_MAX, PIXEL_MIN};
use crate::rng::{purpose, stream};
use crate::scalar::{lit, Scalar};

/// Coefficients within this distance of the threshold count as ties and survive.
///
/// Coefficients that are mathematically equal to `X` come out of the transform
/// a few ulps either side of it.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdDistribution {
    pub low: u32,
    pub high: u32,
}

impl Default for ThresholdDistribution {
    fn default() -> Self {
        Self { low: 0, high: 50 }
    }
}

impl ThresholdDistribution {
    pub fn new(low: u32, high: u32) -> Result<Self> {
        let d = Self { low, high };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.low > self.high {
            return Err(invalid(format!(
                "threshold range low {} exceeds high {}",
                self.low, self.high
            )));
        }
        Ok(())
    }

    /// Uniform integer draw from `[low, high]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        rng.random_range(self.low..=self.high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub distribution: ThresholdDistribution,
    pub clamp_range: (f64, f64),
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            distribution: ThresholdDistribution::default(),
            clamp_range: (PIXEL_MIN, PIXEL_MAX),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.distribution.validate()?;
        let (lo, hi) = self.clamp_range;
        if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
            return Err(invalid(format!("clamp range ({lo}, {hi}) must satisfy low < high")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdSample {
    pub image_id: u64,
    pub threshold: u32,
}

/// Zeroes every coefficient with `|B| < threshold`. Ties survive.
pub fn threshold_coefficients(coeffs: &mut CoefficientPlane, threshold: f64) {
    let cut = threshold - TIE_TOLERANCE;
    for c in coeffs.coeffs_mut() {
        if c.abs() < cut {
            *c = 0.0;
        }
    }
}

fn apply_with_clamp<T: Scalar>(image: &ImageTensor<T>, threshold: u32, clamp: (f64, f64)) -> Result<ImageTensor<T>> {
    image.ensure_finite()?;
    let plan = dct::plan(image.height(), image.width())?;
    let mut out = image.clone();
    let (lo, hi) = (lit::<T>(clamp.0), lit::<T>(clamp.1));
    for ch in 0..image.channels() {
        let mut coeffs = plan.forward(&image.plane(ch))?;
        threshold_coefficients(&mut coeffs, f64::from(threshold));
        let rebuilt = plan.inverse::<T>(&coeffs)?;
        for (dst, v) in out.channel_mut(ch).iter_mut().zip(rebuilt.values()) {
            *dst = v.max(lo).min(hi);
        }
    }
    Ok(out)
}

/// Thresholds every channel of `image` at `threshold` and clamps to `[0, 255]`.
pub fn apply_dct_threshold<T: Scalar>(image: &ImageTensor<T>, threshold: u32) -> Result<ImageTensor<T>> {
    apply_with_clamp(image, threshold, (PIXEL_MIN, PIXEL_MAX))
}

pub struct AugmentedBatch<T> {
    pub images: Vec<ImageTensor<T>>,
    pub samples: Vec<ThresholdSample>,
}

/// Seeded augmenter. Thresholds are keyed by `(seed, epoch, image_id)`, so the
/// same image gets a fresh draw every epoch and results do not depend on batch
/// composition or processing order.
#[derive(Debug, Clone)]
pub struct Augmenter {
    config: AugmentConfig,
}

impl Augmenter {
    pub fn new(config: AugmentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.config
    }

    pub fn sample_threshold(&self, epoch: u64, image_id: u64) -> ThresholdSample {
        let mut rng = stream(self.config.seed, &[purpose::AUGMENT, epoch, image_id]);
        ThresholdSample {
            image_id,
            threshold: self.config.distribution.sample(&mut rng),
        }
    }

    pub fn apply<T: Scalar>(&self, image: &ImageTensor<T>, threshold: u32) -> Result<ImageTensor<T>> {
        apply_with_clamp(image, threshold, self.config.clamp_range)
    }

    /// Augments a batch; `ids[i]` identifies `images[i]`. Order is preserved.
    pub fn augment_batch<T: Scalar>(
        &self,
        images: &[ImageTensor<T>],
        ids: &[u64],
        epoch: u64,
    ) -> Result<AugmentedBatch<T>> {
        self.augment_batch_parallel(images, ids, epoch, 1)
    }

    /// Same as [`Self::augment_batch`], split over `threads` workers.
    /// Output is identical for any thread count.
    pub fn augment_batch_parallel<T: Scalar>(
        &self,
        images: &[ImageTensor<T>],
        ids: &[u64],
        epoch: u64,
        threads: usize,
    ) -> Result<AugmentedBatch<T>> {
        if images.is_empty() {
            return Err(Error::Empty("augmentation batch"));
        }
        if images.len() != ids.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} image ids", images.len()),
                found: format!("{} image ids", ids.len()),
            });
        }
        let samples: Vec<ThresholdSample> = ids.iter().map(|&id| self.sample_threshold(epoch, id)).collect();
        let work = |offset: usize, chunk: &[ImageTensor<T>]| -> Result<Vec<ImageTensor<T>>> {
            chunk
                .iter()
                .enumerate()
                .map(|(i, img)| {
                    self.apply(img, samples[offset + i].threshold)
                        .map_err(|e| Error::at(offset + i, e))
                })
                .collect()
        };
        let out = crate::parallel::map_chunks(images, threads, work)?;
        Ok(AugmentedBatch { images: out, samples })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dct::fdct2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gray(h: usize, w: usize, v: &[f64]) -> ImageTensor<f64> {
        ImageTensor::new(1, h, w, v.to_vec()).unwrap()
    }

    fn random_image(seed: u64, c: usize, h: usize, w: usize) -> ImageTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(c, h, w, |_, _, _| rng.random_range(0.0..=255.0)).unwrap()
    }

    #[test]
    fn degenerate_distribution_is_constant() {
        let d = ThresholdDistribution::new(7, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..100).all(|_| d.sample(&mut rng) == 7));
        assert!(ThresholdDistribution::new(8, 7).is_err());
    }

    #[test]
    fn uniform_counts_within_five_sigma() {
        // Binomial(n, 1/51): sigma = sqrt(n p (1 - p)).
        let n = 100_000usize;
        let p = 1.0 / 51.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let d = ThresholdDistribution::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0usize; 51];
        for _ in 0..n {
            counts[d.sample(&mut rng) as usize] += 1;
        }
        for (x, &c) in counts.iter().enumerate() {
            assert!((c as f64 - n as f64 * p).abs() < 5.0 * sigma, "value {x}: {c}");
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let aug = Augmenter::new(AugmentConfig {
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        let a: Vec<u32> = (0..20).map(|i| aug.sample_threshold(0, i).threshold).collect();
        let b: Vec<u32> = (0..20).map(|i| aug.sample_threshold(0, i).threshold).collect();
        assert_eq!(a, b);
        let other_epoch: Vec<u32> = (0..20).map(|i| aug.sample_threshold(1, i).threshold).collect();
        assert_ne!(a, other_epoch);
    }

    #[test]
    fn zero_threshold_is_identity() {
        let img = random_image(4, 3, 17, 12);
        let out = apply_dct_threshold(&img, 0).unwrap();
        assert!(out.max_abs_diff(&img) <= 1e-6);
    }

    #[test]
    fn constant_plane_survives_max_threshold() {
        let img = ImageTensor::filled(1, 32, 32, 128.0f64).unwrap();
        let out = apply_dct_threshold(&img, 50).unwrap();
        assert!(out.max_abs_diff(&img) < 1e-9);
    }

    #[test]
    fn strict_inequality_tie_case() {
        // B = [[5, 5], [5, 5]] for this plane.
        let img = gray(2, 2, &[10.0, 0.0, 0.0, 0.0]);
        let b = fdct2(&img.plane(0)).unwrap();
        assert!(b.coeffs().iter().all(|c| (c - 5.0).abs() < 1e-12));

        let killed = apply_dct_threshold(&img, 6).unwrap();
        assert!(killed.data().iter().all(|&v| v.abs() < 1e-12));
        let kept = apply_dct_threshold(&img, 5).unwrap();
        assert!(kept.max_abs_diff(&img) < 1e-9);
    }

    #[test]
    fn output_stays_in_pixel_range() {
        let img = random_image(5, 3, 16, 16);
        for x in [1, 10, 25, 50] {
            let out = apply_dct_threshold(&img, x).unwrap();
            assert!(out.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
        }
    }

    #[test]
    fn coefficient_thresholding_is_idempotent_and_monotone() {
        let img = random_image(6, 1, 20, 20);
        let b = fdct2(&img.plane(0)).unwrap();
        let mut prev = f64::INFINITY;
        for x in 0..=50 {
            let mut once = b.clone();
            threshold_coefficients(&mut once, x as f64);
            let mut twice = once.clone();
            threshold_coefficients(&mut twice, x as f64);
            assert_eq!(once, twice);
            assert!(once.energy() <= prev);
            prev = once.energy();
        }
    }

    #[test]
    fn rejects_non_finite_pixels() {
        let img = gray(1, 2, &[1.0, f64::NAN]);
        assert!(matches!(apply_dct_threshold(&img, 3), Err(Error::NonFinite(_))));
    }

    #[test]
    fn batch_preserves_order_and_reports_index() {
        let aug = Augmenter::new(AugmentConfig {
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let imgs: Vec<_> = (0..3).map(|i| random_image(i, 1, 8, 8)).collect();
        let a = aug.augment_batch(&imgs, &[10, 11, 12], 0).unwrap();
        let b = aug.augment_batch(&imgs, &[10, 11, 12], 0).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.images, b.images);
        for (i, s) in a.samples.iter().enumerate() {
            assert_eq!(s.image_id, 10 + i as u64);
            assert_eq!(a.images[i], apply_dct_threshold(&imgs[i], s.threshold).unwrap());
        }

        let mut bad = imgs.clone();
        bad[2].data_mut()[0] = f64::INFINITY;
        match aug.augment_batch(&bad, &[10, 11, 12], 0) {
            Err(Error::AtIndex { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}", other = other.map(|_| ())),
        }
        assert!(aug.augment_batch::<f64>(&[], &[], 0).is_err());
    }

    #[test]
    fn all_zero_draws_leave_batch_unchanged() {
        let aug = Augmenter::new(AugmentConfig {
            distribution: ThresholdDistribution::new(0, 0).unwrap(),
            ..Default::default()
        })
        .unwrap();
        let imgs: Vec<_> = (0..4).map(|i| random_image(i + 20, 3, 9, 7)).collect();
        let out = aug.augment_batch(&imgs, &[0, 1, 2, 3], 5).unwrap();
        for (a, b) in out.images.iter().zip(&imgs) {
            assert!(a.max_abs_diff(b) <= 1e-6);
        }
    }

    #[test]
    fn thread_count_does_not_change_output() {
        let aug = Augmenter::new(AugmentConfig {
            seed: 77,
            ..Default::default()
        })
        .unwrap();
        let imgs: Vec<_> = (0..7).map(|i| random_image(i + 40, 3, 10, 10)).collect();
        let ids: Vec<u64> = (100..107).collect();
        let serial = aug.augment_batch_parallel(&imgs, &ids, 2, 1).unwrap();
        let threaded = aug.augment_batch_parallel(&imgs, &ids, 2, 3).unwrap();
        assert_eq!(serial.images, threaded.images);
        assert_eq!(serial.samples, threaded.samples);
    }
}
