//! Scalar abstraction so the core runs at f32 or f64 precision.

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar the whole toolkit is generic over.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + core::fmt::Debug
    + core::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts a literal; named tersely because call sites are dense.
    fn of(v: f64) -> Self;
    /// Widens (f64) or narrows (f32) to f64 for reporting.
    fn to_f64_lossy(self) -> f64;
    /// Largest representable value strictly below `self`.
    fn next_down(self) -> Self;
}

impl Scalar for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn to_f64_lossy(self) -> f64 {
        self
    }

    fn next_down(self) -> Self {
        if !self.is_finite() || self == f64::NEG_INFINITY {
            return self;
        }
        if self == 0.0 {
            return -f64::from_bits(1);
        }
        let bits = self.to_bits();
        f64::from_bits(if self > 0.0 { bits - 1 } else { bits + 1 })
    }
}

impl Scalar for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

    fn to_f64_lossy(self) -> f64 {
        self as f64
    }

    fn next_down(self) -> Self {
        if !self.is_finite() || self == f32::NEG_INFINITY {
            return self;
        }
        if self == 0.0 {
            return -f32::from_bits(1);
        }
        let bits = self.to_bits();
        f32::from_bits(if self > 0.0 { bits - 1 } else { bits + 1 })
    }
}

pub const SECONDS_PER_HOUR: f64 = 3600.0;

/// Converts a veh/h rate to veh/s.
pub fn per_second<S: Scalar>(rate_vph: S) -> S {
    rate_vph / S::of(SECONDS_PER_HOUR)
}
