//! Rotation augmentations on paired input coordinates.
//!
//! A raw input of even length `m` is read as `m / 2` planar pairs
//! `(x[2i], x[2i+1])`. Augmentation `a` turns every pair by `a` quarter
//! turns counterclockwise, which is exact and invertible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("paired rotations need an even input length, got {0}")]
    OddLength(usize),
    #[error("an augmentation family must start with the identity")]
    NoIdentity,
}

/// Ordered list of quarter-turn rotations; entry 0 is always the identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationFamily {
    quarter_turns: Vec<u8>,
}

impl Default for AugmentationFamily {
    /// Rotations by 0, 90, 180 and 270 degrees.
    fn default() -> Self {
        Self {
            quarter_turns: vec![0, 1, 2, 3],
        }
    }
}

impl AugmentationFamily {
    pub fn new(quarter_turns: Vec<u8>) -> Result<Self, AugmentError> {
        match quarter_turns.first() {
            Some(t) if t % 4 == 0 => Ok(Self {
                quarter_turns: quarter_turns.into_iter().map(|t| t % 4).collect(),
            }),
            _ => Err(AugmentError::NoIdentity),
        }
    }

    pub fn identity() -> Self {
        Self {
            quarter_turns: vec![0],
        }
    }

    pub fn len(&self) -> usize {
        self.quarter_turns.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn quarter_turns(&self) -> &[u8] {
        &self.quarter_turns
    }

    pub fn check_input(&self, m: usize) -> Result<(), AugmentError> {
        if m % 2 == 0 || self.quarter_turns.iter().all(|t| *t == 0) {
            Ok(())
        } else {
            Err(AugmentError::OddLength(m))
        }
    }

    /// Applies member `a` to `x`.
    pub fn apply(&self, a: usize, x: &[f64]) -> Result<Vec<f64>, AugmentError> {
        let turns = self.quarter_turns[a];
        if turns == 0 {
            return Ok(x.to_vec());
        }
        if x.len() % 2 != 0 {
            return Err(AugmentError::OddLength(x.len()));
        }
        let mut out = x.to_vec();
        for pair in out.chunks_exact_mut(2) {
            let (u, v) = (pair[0], pair[1]);
            let (u, v) = match turns {
                1 => (-v, u),
                2 => (-u, -v),
                _ => (v, -u),
            };
            pair[0] = u;
            pair[1] = v;
        }
        Ok(out)
    }

    /// Every member applied to `x`, in family order.
    pub fn views(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, AugmentError> {
        (0..self.len()).map(|a| self.apply(a, x)).collect()
    }
}
