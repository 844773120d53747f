//! Scalar abstractions: a real floating-point trait the meshes, quadrature and
//! profile solves are generic over, and a field scalar that additionally covers
//! complex arithmetic for the eigenvalue machinery.

use num_complex::Complex;
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Real floating-point scalar (f32 or f64).
///
/// Everything geometric and every profile solve is generic over this; the
/// bit-string hooks give checkpoints an exact text round trip.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + Sum
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
    + Scalar<Re = Self>
{
    /// Width of the IEEE bit pattern in hex digits (8 for f32, 16 for f64).
    const HEX_DIGITS: usize;

    /// Lowercase fixed-width hex encoding of the IEEE bit pattern.
    fn to_bit_hex(self) -> String;

    /// Inverse of [`to_bit_hex`]; `None` on malformed input.
    fn from_bit_hex(s: &str) -> Option<Self>;

    /// Shorthand for converting an f64 constant (exact for f64, rounded for f32).
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant converts")
    }
}

impl Real for f32 {
    const HEX_DIGITS: usize = 8;

    fn to_bit_hex(self) -> String {
        format!("{:08x}", self.to_bits())
    }

    fn from_bit_hex(s: &str) -> Option<Self> {
        if s.len() != 8 {
            return None;
        }
        u32::from_str_radix(s, 16).ok().map(f32::from_bits)
    }
}

impl Real for f64 {
    const HEX_DIGITS: usize = 16;

    fn to_bit_hex(self) -> String {
        format!("{:016x}", self.to_bits())
    }

    fn from_bit_hex(s: &str) -> Option<Self> {
        if s.len() != 16 {
            return None;
        }
        u64::from_str_radix(s, 16).ok().map(f64::from_bits)
    }
}

/// Field scalar for linear algebra: real or complex over a [`Real`] base.
pub trait Scalar:
    Copy
    + PartialEq
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + num_traits::Zero
    + num_traits::One
{
    type Re: Real;

    fn from_re(x: Self::Re) -> Self;
    fn re(self) -> Self::Re;
    fn im(self) -> Self::Re;
    fn conj(self) -> Self;
    /// Modulus. Named to avoid clashing with `Float::abs` on real scalars.
    fn modulus(self) -> Self::Re;
    /// Squared modulus.
    fn modulus_sqr(self) -> Self::Re;
    fn scale(self, x: Self::Re) -> Self;
    fn finite(self) -> bool;
}

macro_rules! impl_scalar_real {
    ($t:ty) => {
        impl Scalar for $t {
            type Re = $t;

            fn from_re(x: $t) -> Self {
                x
            }
            fn re(self) -> $t {
                self
            }
            fn im(self) -> $t {
                0.0
            }
            fn conj(self) -> Self {
                self
            }
            fn modulus(self) -> $t {
                <$t>::abs(self)
            }
            fn modulus_sqr(self) -> $t {
                self * self
            }
            fn scale(self, x: $t) -> Self {
                self * x
            }
            fn finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_scalar_real!(f32);
impl_scalar_real!(f64);

impl<T: Real> Scalar for Complex<T> {
    type Re = T;

    fn from_re(x: T) -> Self {
        Complex::new(x, T::zero())
    }
    fn re(self) -> T {
        self.re
    }
    fn im(self) -> T {
        self.im
    }
    fn conj(self) -> Self {
        Complex::new(self.re, -self.im)
    }
    fn modulus(self) -> T {
        self.norm()
    }
    fn modulus_sqr(self) -> T {
        self.re * self.re + self.im * self.im
    }
    fn scale(self, x: T) -> Self {
        Complex::new(self.re * x, self.im * x)
    }
    fn finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}
