//! Scalar abstraction for the simulator's real arithmetic.
//!
//! Everything numerical in this crate is generic over [`Float`], so the same
//! state-vector and probability code runs in `f32` or `f64`. The concrete
//! aliases at the crate root pin `f64`, which is what the CLI and all golden
//! tolerances use.

use std::fmt;

/// Real scalar type: `f32` or `f64`.
///
/// Bundles the `num-traits` capabilities the simulator needs plus `Display`
/// formatting for the text output formats.
pub trait Float:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + num_traits::NumAssignOps
    + fmt::Debug
    + fmt::Display
    + fmt::LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, for constants and tolerances.
    fn of(x: f64) -> Self {
        num_traits::NumCast::from(x).expect("finite f64 converts to any Float")
    }

    /// Lossy conversion to `f64`, for reporting and serialization.
    fn f64(self) -> f64 {
        num_traits::NumCast::from(self).expect("Float converts to f64")
    }
}

impl Float for f32 {}
impl Float for f64 {}
