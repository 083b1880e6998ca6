//! Embedding vectors and the dot-product kernels every scorer shares.
//!
//! Vectors are stored as `f32` (the width of the embedding files) while
//! every reduction accumulates in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms strictly below this are treated as zero.
pub const ZERO_NORM_THRESHOLD: f64 = 1e-12;

/// A dense embedding of dimension `D >= 2` with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::DimensionTooSmall(values.len()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self(values))
    }

    /// Builds from `f64` components, rounding to `f32` storage.
    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Unit-norm components in `f64`, used as the query side of every scan.
    pub fn unit_f64(&self) -> Result<Vec<f64>> {
        let n = self.norm();
        if n < ZERO_NORM_THRESHOLD {
            return Err(Error::ZeroVector);
        }
        Ok(self.0.iter().map(|&v| f64::from(v) / n).collect())
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

impl AsRef<[f32]> for EmbeddingVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

pub(crate) fn ensure_same_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// `f32 x f32` dot product with four `f64` lanes, summed in a fixed order.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for lane in 0..4 {
            acc[lane] += f64::from(x[lane]) * f64::from(y[lane]);
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += f64::from(*x) * f64::from(*y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Dot product of an `f64` query against an `f32` record.
#[inline]
pub fn dot_mixed(query: &[f64], record: &[f32]) -> f64 {
    debug_assert_eq!(query.len(), record.len());
    let mut acc = [0.0f64; 4];
    let mut cq = query.chunks_exact(4);
    let mut cr = record.chunks_exact(4);
    for (q, r) in (&mut cq).zip(&mut cr) {
        for lane in 0..4 {
            acc[lane] += q[lane] * f64::from(r[lane]);
        }
    }
    let mut tail = 0.0;
    for (q, r) in cq.remainder().iter().zip(cr.remainder()) {
        tail += q * f64::from(*r);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm(v: &[f32]) -> f64 {
    dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_and_non_finite() {
        assert!(matches!(
            EmbeddingVector::new(vec![1.0]),
            Err(Error::DimensionTooSmall(1))
        ));
        assert!(matches!(
            EmbeddingVector::new(vec![1.0, f32::NAN, 0.0]),
            Err(Error::NonFinite(1))
        ));
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f32> = (0..7).map(|i| i as f32).collect();
        let naive: f64 = a.iter().map(|&v| f64::from(v) * f64::from(v)).sum();
        assert_eq!(dot(&a, &a), naive);
        let q: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
        assert_eq!(dot_mixed(&q, &a), naive);
    }

    #[test]
    fn serde_round_trip_validates() {
        let v = EmbeddingVector::new(vec![0.5, -0.25]).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, "[0.5,-0.25]");
        let back: EmbeddingVector = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
        assert!(serde_json::from_str::<EmbeddingVector>("[1.0]").is_err());
    }
}
