//! Embedding vectors and the distance functions defined on them.
//!
//! Values are stored in single precision (the on-disk format is f32);
//! every reduction accumulates in double precision. Squared L2 is the
//! canonical metric everywhere in this crate: it preserves all rankings of
//! plain L2 and is what thresholds and stored hit distances are expressed in.

use crate::error::{Error, Result};
use crate::kernel::squared_l2_raw;

/// A fixed-dimension embedding vector. Every value is finite and the
/// dimension is at least 1; construction enforces both.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "embedding must have at least one dimension".into(),
            ));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "embedding contains non-finite value {} at position {i}",
                values[i]
            )));
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

fn check_dims(a: &Embedding, b: &Embedding) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

/// Squared L2 distance `Σ (a_i − b_i)²`, accumulated in double precision.
pub fn squared_l2(a: &Embedding, b: &Embedding) -> Result<f64> {
    check_dims(a, b)?;
    Ok(squared_l2_raw(a.values(), b.values()))
}

/// Plain L2 distance, `sqrt` of [`squared_l2`].
pub fn l2(a: &Embedding, b: &Embedding) -> Result<f64> {
    Ok(squared_l2(a, b)?.sqrt())
}

/// Returns `a / ‖a‖₂`. The division runs in double precision before the
/// result is rounded back to storage precision, so the stored vector is unit
/// length up to f32 granularity (~1e-7), not exactly.
pub fn normalize(a: &Embedding) -> Result<Embedding> {
    let norm_sq: f64 = a.values().iter().map(|&v| (v as f64) * (v as f64)).sum();
    if norm_sq == 0.0 {
        return Err(Error::InvalidArgument(
            "cannot normalize a zero vector".into(),
        ));
    }
    let norm = norm_sq.sqrt();
    let values = a
        .values()
        .iter()
        .map(|&v| ((v as f64) / norm) as f32)
        .collect();
    Embedding::new(values)
}
