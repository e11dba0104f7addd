use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating point element type of tensors and graphs.
///
/// Training runs in `f32`; gradient checks run the same code in `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Default + Debug + Display + Send + Sync + 'static
{
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }

    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("representable count")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
