//! Convex nondecreasing distortion cost functions `f(d)`.

use serde::{Deserialize, Serialize};

/// A convex, nondecreasing cost applied to a node's distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistortionCost {
    /// `f(d) = d`.
    #[default]
    Linear,
    /// `f(d) = d^exponent` with `exponent >= 1`.
    Power { exponent: f64 },
    /// `f(d) = value`; used for relays, which carry no distortion cost.
    Constant { value: f64 },
}

impl DistortionCost {
    pub fn value(&self, d: f64) -> f64 {
        match *self {
            DistortionCost::Linear => d,
            DistortionCost::Power { exponent } => d.powf(exponent),
            DistortionCost::Constant { value } => value,
        }
    }

    pub fn derivative(&self, d: f64) -> f64 {
        match *self {
            DistortionCost::Linear => 1.0,
            DistortionCost::Power { exponent } => exponent * d.powf(exponent - 1.0),
            DistortionCost::Constant { .. } => 0.0,
        }
    }

    pub fn second_derivative(&self, d: f64) -> f64 {
        match *self {
            DistortionCost::Linear | DistortionCost::Constant { .. } => 0.0,
            DistortionCost::Power { exponent } => {
                exponent * (exponent - 1.0) * d.powf(exponent - 2.0)
            }
        }
    }

    /// Returns true when the cost does not depend on `d`.
    pub fn is_constant(&self) -> bool {
        matches!(self, DistortionCost::Constant { .. })
    }

    /// Checks convexity and monotonicity requirements and finiteness on `[lo, hi]`.
    pub fn validate(&self, lo: f64, hi: f64) -> bool {
        let ok_shape = match *self {
            DistortionCost::Power { exponent } => exponent >= 1.0 && exponent.is_finite(),
            DistortionCost::Constant { value } => value.is_finite(),
            DistortionCost::Linear => true,
        };
        ok_shape && self.value(lo).is_finite() && self.value(hi).is_finite()
    }
}
