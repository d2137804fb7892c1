//! Orthonormal 2D DCT-II / DCT-III over a single full-image block.
//!
//! For an `M x N` plane `A` the forward transform is
//!
//! ```text
//! B[p][q] = a_p a_q sum_m sum_n A[m][n] cos(pi (2m+1) p / 2M) cos(pi (2n+1) q / 2N)
//! a_0 = sqrt(1/M), a_p = sqrt(2/M) for p >= 1   (likewise a_q with N)
//! ```
//!
//! and the inverse swaps the roles of the sums. The fast path is separable:
//! each row and column goes through a length-`L` DCT computed from one
//! length-`L` complex FFT (even/odd reordering plus a quarter-wave twiddle).
//! `rustfft` picks mixed-radix, Rader or Bluestein plans, so every length is
//! supported. All arithmetic is `f64`; conversion to the caller's scalar type
//! happens only on the way in and out.
//!
//! The `*_naive` functions evaluate the double sums directly and exist as an
//! oracle for the fast path.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{energy, ImagePlane};
use crate::scalar::Scalar;

/// DCT coefficients of one plane; same geometry as the source plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPlane {
    height: usize,
    width: usize,
    coeffs: Vec<f64>,
}

impl CoefficientPlane {
    pub fn new(height: usize, width: usize, coeffs: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Empty("coefficient plane"));
        }
        if coeffs.len() != height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{} coefficients ({height}x{width})", height * width),
                found: format!("{} coefficients", coeffs.len()),
            });
        }
        Ok(Self { height, width, coeffs })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.coeffs[p * self.width + q]
    }

    pub fn energy(&self) -> f64 {
        energy(&self.coeffs)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.height, self.width), (other.height, other.width));
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn ensure_finite(&self) -> Result<()> {
        if self.coeffs.iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("DCT coefficients"))
        }
    }
}

fn alpha(index: usize, len: usize) -> f64 {
    if index == 0 {
        (1.0 / len as f64).sqrt()
    } else {
        (2.0 / len as f64).sqrt()
    }
}

/// Length-`n` orthonormal DCT-II and its inverse, computed through one complex FFT.
pub struct Dct1d {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    // exp(-i pi k / 2n)
    twiddles: Vec<Complex<f64>>,
    alphas: Vec<f64>,
    scratch_len: usize,
}

impl Dct1d {
    pub fn new(len: usize, planner: &mut FftPlanner<f64>) -> Self {
        assert!(len > 0, "DCT length must be positive");
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let twiddles = (0..len)
            .map(|k| Complex::from_polar(1.0, -PI * k as f64 / (2.0 * len as f64)))
            .collect();
        let alphas = (0..len).map(|k| alpha(k, len)).collect();
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        Self {
            len,
            forward,
            inverse,
            twiddles,
            alphas,
            scratch_len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn buffers(&self) -> (Vec<Complex<f64>>, Vec<Complex<f64>>) {
        (
            vec![Complex::default(); self.len],
            vec![Complex::default(); self.scratch_len],
        )
    }

    /// In-place orthonormal DCT-II of `data`.
    fn forward_into(&self, data: &mut [f64], buf: &mut [Complex<f64>], scratch: &mut [Complex<f64>]) {
        let n = self.len;
        // Evens ascending, then odds descending.
        let half = n.div_ceil(2);
        for k in 0..half {
            buf[k] = Complex::new(data[2 * k], 0.0);
        }
        for k in 0..n / 2 {
            buf[n - 1 - k] = Complex::new(data[2 * k + 1], 0.0);
        }
        self.forward.process_with_scratch(buf, scratch);
        for k in 0..n {
            data[k] = (buf[k] * self.twiddles[k]).re * self.alphas[k];
        }
    }

    /// In-place orthonormal DCT-III (inverse of [`Self::forward_into`]).
    fn inverse_into(&self, data: &mut [f64], buf: &mut [Complex<f64>], scratch: &mut [Complex<f64>]) {
        let n = self.len;
        // Undo the normalisation, then rebuild the FFT of the reordered
        // sequence: V[k] = conj(w_k) (X[k] - i X[n-k]), X[n] = 0.
        for k in 0..n {
            let x = data[k] / self.alphas[k];
            let x_mirror = if k == 0 { 0.0 } else { data[n - k] / self.alphas[n - k] };
            buf[k] = self.twiddles[k].conj() * Complex::new(x, -x_mirror);
        }
        self.inverse.process_with_scratch(buf, scratch);
        let scale = 1.0 / n as f64;
        let half = n.div_ceil(2);
        for k in 0..half {
            data[2 * k] = buf[k].re * scale;
        }
        for k in 0..n / 2 {
            data[2 * k + 1] = buf[n - 1 - k].re * scale;
        }
    }

    /// Orthonormal DCT-II of `signal`.
    pub fn forward(&self, signal: &[f64]) -> Vec<f64> {
        assert_eq!(signal.len(), self.len);
        let mut out = signal.to_vec();
        let (mut buf, mut scratch) = self.buffers();
        self.forward_into(&mut out, &mut buf, &mut scratch);
        out
    }

    /// Orthonormal DCT-III of `coeffs`.
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.len);
        let mut out = coeffs.to_vec();
        let (mut buf, mut scratch) = self.buffers();
        self.inverse_into(&mut out, &mut buf, &mut scratch);
        out
    }
}

/// Row-column 2D transform plan for one `height x width` geometry.
///
/// Plans are immutable once built and can be shared between threads.
pub struct Dct2d {
    height: usize,
    width: usize,
    rows: Dct1d,
    cols: Dct1d,
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Inverse,
}

impl Dct2d {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Empty("DCT geometry"));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            height,
            width,
            rows: Dct1d::new(width, &mut planner),
            cols: Dct1d::new(height, &mut planner),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn check_shape(&self, height: usize, width: usize) -> Result<()> {
        if (height, width) != (self.height, self.width) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{}", self.height, self.width),
                found: format!("{height}x{width}"),
            });
        }
        Ok(())
    }

    fn transform(&self, data: &mut [f64], dir: Direction) {
        let (h, w) = (self.height, self.width);
        let longest = h.max(w);
        let mut buf = vec![Complex::default(); longest];
        let mut scratch = vec![Complex::default(); self.rows.scratch_len.max(self.cols.scratch_len)];
        for row in data.chunks_exact_mut(w) {
            match dir {
                Direction::Forward => self.rows.forward_into(row, &mut buf[..w], &mut scratch),
                Direction::Inverse => self.rows.inverse_into(row, &mut buf[..w], &mut scratch),
            }
        }
        let mut column = vec![0.0; h];
        for c in 0..w {
            for r in 0..h {
                column[r] = data[r * w + c];
            }
            match dir {
                Direction::Forward => self.cols.forward_into(&mut column, &mut buf[..h], &mut scratch),
                Direction::Inverse => self.cols.inverse_into(&mut column, &mut buf[..h], &mut scratch),
            }
            for r in 0..h {
                data[r * w + c] = column[r];
            }
        }
    }

    pub fn forward<T: Scalar>(&self, plane: &ImagePlane<T>) -> Result<CoefficientPlane> {
        self.check_shape(plane.height(), plane.width())?;
        if !plane.is_finite() {
            return Err(Error::NonFinite("image plane"));
        }
        let mut data: Vec<f64> = plane.values().iter().map(|v| v.to_f64_lossy()).collect();
        self.transform(&mut data, Direction::Forward);
        CoefficientPlane::new(self.height, self.width, data)
    }

    pub fn inverse<T: Scalar>(&self, coeffs: &CoefficientPlane) -> Result<ImagePlane<T>> {
        self.check_shape(coeffs.height, coeffs.width)?;
        coeffs.ensure_finite()?;
        let mut data = coeffs.coeffs.clone();
        self.transform(&mut data, Direction::Inverse);
        ImagePlane::new(
            self.height,
            self.width,
            data.into_iter().map(T::from_f64_lossy).collect(),
        )
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<(usize, usize), Rc<Dct2d>>> = RefCell::new(HashMap::new());
}

/// Returns a cached plan for the geometry (one cache per thread).
pub fn plan(height: usize, width: usize) -> Result<Rc<Dct2d>> {
    if let Some(p) = PLANS.with(|cache| cache.borrow().get(&(height, width)).cloned()) {
        return Ok(p);
    }
    let p = Rc::new(Dct2d::new(height, width)?);
    PLANS.with(|cache| cache.borrow_mut().insert((height, width), Rc::clone(&p)));
    Ok(p)
}

/// Forward orthonormal 2D DCT (fast path).
pub fn fdct2<T: Scalar>(plane: &ImagePlane<T>) -> Result<CoefficientPlane> {
    plan(plane.height(), plane.width())?.forward(plane)
}

/// Inverse orthonormal 2D DCT (fast path). The output is not clamped.
pub fn idct2<T: Scalar>(coeffs: &CoefficientPlane) -> Result<ImagePlane<T>> {
    plan(coeffs.height, coeffs.width)?.inverse(coeffs)
}

fn cosine_table(len: usize) -> Vec<f64> {
    // table[k * len + n] = cos(pi (2n+1) k / 2 len)
    let mut table = Vec::with_capacity(len * len);
    for k in 0..len {
        for n in 0..len {
            table.push((PI * (2 * n + 1) as f64 * k as f64 / (2.0 * len as f64)).cos());
        }
    }
    table
}

/// Direct `O(M^2 N^2)` evaluation of the forward double sum.
pub fn fdct2_naive<T: Scalar>(plane: &ImagePlane<T>) -> Result<CoefficientPlane> {
    if !plane.is_finite() {
        return Err(Error::NonFinite("image plane"));
    }
    let (m_len, n_len) = (plane.height(), plane.width());
    let cos_m = cosine_table(m_len);
    let cos_n = cosine_table(n_len);
    let a = plane.values();
    let mut out = Vec::with_capacity(m_len * n_len);
    for p in 0..m_len {
        for q in 0..n_len {
            let mut acc = 0.0;
            for m in 0..m_len {
                for n in 0..n_len {
                    acc += a[m * n_len + n].to_f64_lossy() * cos_m[p * m_len + m] * cos_n[q * n_len + n];
                }
            }
            out.push(alpha(p, m_len) * alpha(q, n_len) * acc);
        }
    }
    CoefficientPlane::new(m_len, n_len, out)
}

/// Direct `O(M^2 N^2)` evaluation of the inverse double sum.
pub fn idct2_naive<T: Scalar>(coeffs: &CoefficientPlane) -> Result<ImagePlane<T>> {
    coeffs.ensure_finite()?;
    let (m_len, n_len) = (coeffs.height, coeffs.width);
    let cos_m = cosine_table(m_len);
    let cos_n = cosine_table(n_len);
    let b = &coeffs.coeffs;
    let mut out = Vec::with_capacity(m_len * n_len);
    for m in 0..m_len {
        for n in 0..n_len {
            let mut acc = 0.0;
            for p in 0..m_len {
                for q in 0..n_len {
                    acc += alpha(p, m_len)
                        * alpha(q, n_len)
                        * b[p * n_len + q]
                        * cos_m[p * m_len + m]
                        * cos_n[q * n_len + n];
                }
            }
            out.push(T::from_f64_lossy(acc));
        }
    }
    ImagePlane::new(m_len, n_len, out)
}
