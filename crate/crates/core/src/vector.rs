//! Unit vectors and the dot-product kernel shared by retrieval and scoring.

use std::ops::Deref;

use crate::error::{CimError, Result};

/// Norms below this are treated as a missing or corrupt embedding.
pub const ZERO_NORM_FLOOR: f64 = 1e-12;

/// Tolerance on `‖v‖₂ − 1` for a vector to count as unit length.
pub const UNIT_TOLERANCE: f64 = 1e-6;

// Inputs already this close to unit length are stored verbatim, which makes
// normalization idempotent on its own f32 output (one f32 rounding moves the
// norm by at most ~6e-8).
const PASSTHROUGH_TOLERANCE: f64 = 1e-7;

const LANES: usize = 8;

/// An `f32` vector with unit ℓ2 norm (within [`UNIT_TOLERANCE`]).
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f32>);

impl UnitVector {
    /// Wraps a vector that is already unit length, without rescaling it.
    pub fn try_from_unit(values: Vec<f32>) -> Result<Self> {
        let norm = norm(&values);
        if values.is_empty() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(CimError::InvalidParams(format!(
                "vector is not unit length (norm {norm})"
            )));
        }
        Ok(UnitVector(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl Deref for UnitVector {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl AsRef<[f32]> for UnitVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// Scales `values` to unit ℓ2 norm. The norm is accumulated in `f64` and the
/// result is rounded once to `f32`.
pub fn normalize<T: Copy + Into<f64>>(values: &[T]) -> Result<UnitVector> {
    let out = match unit_divisor(values)? {
        None => values.iter().map(|&v| v.into() as f32).collect(),
        Some(norm) => values.iter().map(|&v| (v.into() / norm) as f32).collect(),
    };
    Ok(UnitVector(out))
}

/// In-place variant of [`normalize`] used at ingest. Rounds identically.
pub(crate) fn normalize_in_place(row: &mut [f32]) -> Result<()> {
    if let Some(norm) = unit_divisor(row)? {
        for v in row.iter_mut() {
            *v = (*v as f64 / norm) as f32;
        }
    }
    Ok(())
}

/// `None` when the vector is already unit length and is kept verbatim.
fn unit_divisor<T: Copy + Into<f64>>(values: &[T]) -> Result<Option<f64>> {
    let mut sum_sq = 0.0f64;
    for &v in values {
        let v: f64 = v.into();
        if !v.is_finite() {
            return Err(CimError::InvalidParams(
                "non-finite vector component".into(),
            ));
        }
        sum_sq += v * v;
    }
    let norm = sum_sq.sqrt();
    if norm < ZERO_NORM_FLOOR {
        return Err(CimError::ZeroVector { row: None });
    }
    Ok(((norm - 1.0).abs() > PASSTHROUGH_TOLERANCE).then_some(norm))
}

/// ℓ2 norm accumulated in `f64`.
pub fn norm(v: &[f32]) -> f64 {
    dot_unchecked(v, v).sqrt()
}

/// Dot product with `f64` accumulation. The summation order is fixed, so the
/// result for a given pair of slices is bitwise reproducible.
pub fn dot(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CimError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(dot_unchecked(a, b))
}

/// Cosine of two unit vectors: their dot product clamped to `[-1, 1]`.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    dot(a, b).map(clamp_unit)
}

#[inline]
pub(crate) fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Caller guarantees `a.len() == b.len()`.
#[inline]
pub(crate) fn dot_unchecked(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2.
            return unsafe { dot_avx2(a, b) };
        }
    }
    dot_lanes(a, b)
}

// Same arithmetic as `dot_lanes`, only compiled with wider registers. There is
// no FMA contraction, so both paths round identically.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn dot_avx2(a: &[f32], b: &[f32]) -> f64 {
    dot_lanes(a, b)
}

#[inline(always)]
fn dot_lanes(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for j in 0..LANES {
            acc[j] += xa[j] as f64 * xb[j] as f64;
        }
    }
    for (j, (&x, &y)) in ca.remainder().iter().zip(cb.remainder()).enumerate() {
        acc[j] += x as f64 * y as f64;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}
