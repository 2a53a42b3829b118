//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point type the consensus, droop and dispatch math is written over.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 literal representable in scalar type")
    }

    fn of_usize(value: usize) -> Self {
        Self::from_usize(value).expect("count representable in scalar type")
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
}


pub(crate) fn clamp<T: Scalar>(value: T, lo: T, hi: T) -> T {
    if value > hi {
        hi
    } else if value < lo {
        lo
    } else {
        value
    }
}

/// Sum with the slice order fixed so results are reproducible.
pub(crate) fn sum<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    values.into_iter().fold(T::zero(), |acc, v| acc + v)
}

/// Mean of a non-empty slice.
pub(crate) fn mean<T: Scalar>(values: &[T]) -> T {
    sum(values.iter().copied()) / T::of_usize(values.len())
}

/// Spread (max minus min); zero for empty input.
pub(crate) fn spread<T: Scalar>(values: &[T]) -> T {
    let mut it = values.iter().copied();
    let Some(first) = it.next() else {
        return T::zero();
    };
    let (lo, hi) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo
}
