//! Dense complex three-way arrays stored row-major.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A complex array indexed `(i, j, k)` with the last index fastest.
///
/// Serializes as its shape plus a flat `data` array of interleaved
/// `re, im` 64-bit floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "RawTensor", try_from = "RawTensor")]
pub struct Tensor3 {
    shape: [usize; 3],
    data: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    shape: [usize; 3],
    data: Vec<f64>,
}

impl From<Tensor3> for RawTensor {
    fn from(t: Tensor3) -> Self {
        let mut data = Vec::with_capacity(2 * t.data.len());
        for z in &t.data {
            data.push(z.re);
            data.push(z.im);
        }
        RawTensor {
            shape: t.shape,
            data,
        }
    }
}

impl TryFrom<RawTensor> for Tensor3 {
    type Error = String;

    fn try_from(raw: RawTensor) -> std::result::Result<Self, String> {
        let len: usize = raw.shape.iter().product();
        if raw.data.len() != 2 * len {
            return Err(format!(
                "tensor of shape {:?} needs {} floats, found {}",
                raw.shape,
                2 * len,
                raw.data.len()
            ));
        }
        let data = raw
            .data
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0], p[1]))
            .collect();
        Ok(Tensor3 {
            shape: raw.shape,
            data,
        })
    }
}

impl Tensor3 {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Tensor3 {
            shape,
            data: vec![Complex64::new(0.0, 0.0); shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(shape.iter().product());
        for i in 0..shape[0] {
            for j in 0..shape[1] {
                for k in 0..shape[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Tensor3 { shape, data }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<Complex64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(Error::DimensionMismatch {
                what: "tensor data length",
                expected: vec![len],
                actual: vec![data.len()],
            });
        }
        Ok(Tensor3 { shape, data })
    }

    #[inline]
    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> Complex64 {
        self.data[self.offset(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: Complex64) {
        let o = self.offset(i, j, k);
        self.data[o] = value;
    }

    /// The contiguous innermost fibre at `(i, j)`.
    #[inline]
    pub fn fibre(&self, i: usize, j: usize) -> &[Complex64] {
        let o = self.offset(i, j, 0);
        &self.data[o..o + self.shape[2]]
    }

    #[inline]
    pub fn fibre_mut(&mut self, i: usize, j: usize) -> &mut [Complex64] {
        let o = self.offset(i, j, 0);
        let n = self.shape[2];
        &mut self.data[o..o + n]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Swaps the first two axes.
    pub fn swap_leading_axes(&self) -> Tensor3 {
        let [a, b, c] = self.shape;
        Tensor3::from_fn([b, a, c], |j, i, k| self.get(i, j, k))
    }

    pub fn scale(&mut self, factor: Complex64) {
        for z in &mut self.data {
            *z *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Tensor3) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sub_assign(&mut self, other: &Tensor3) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
    }

    pub fn expect_shape(&self, what: &'static str, shape: [usize; 3]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::DimensionMismatch {
                what,
                expected: shape.to_vec(),
                actual: self.shape.to_vec(),
            });
        }
        Ok(())
    }
}
