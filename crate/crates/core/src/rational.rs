//! Exact fractions for durations and temporal offsets.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

fn gcd(mut a: i128, mut b: i128) -> i128 {
    while b != 0 {
        let t = b;
        b = a % b;
        a = t;
    }
    a.abs()
}

/// A reduced fraction with a strictly positive denominator. Arithmetic
/// goes through 128-bit intermediates, so single operations on any two
/// in-range values cannot overflow; accumulating walks bound their
/// denominators before chains can grow past range.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational {
    numer: i64,
    denom: i64,
}

impl Rational {
    /// Build a reduced fraction. Panics when `denom` is zero.
    pub fn new(numer: i64, denom: i64) -> Self {
        Self::from_wide(numer as i128, denom as i128)
    }

    fn from_wide(numer: i128, denom: i128) -> Self {
        assert!(denom != 0, "zero denominator");
        let sign = denom.signum();
        let g = gcd(numer, denom).max(1);
        let numer = sign * numer / g;
        let denom = sign * denom / g;
        assert!(
            i64::try_from(numer).is_ok() && i64::try_from(denom).is_ok(),
            "rational out of range: {numer}/{denom}"
        );
        Rational {
            numer: numer as i64,
            denom: denom as i64,
        }
    }

    pub const ZERO: Rational = Rational { numer: 0, denom: 1 };
    pub const ONE: Rational = Rational { numer: 1, denom: 1 };

    pub fn from_integer(n: i64) -> Self {
        Rational { numer: n, denom: 1 }
    }

    pub fn numer(&self) -> i64 {
        self.numer
    }

    pub fn denom(&self) -> i64 {
        self.denom
    }

    pub fn is_zero(&self) -> bool {
        self.numer == 0
    }

    pub fn to_f64(&self) -> f64 {
        self.numer as f64 / self.denom as f64
    }
}

impl Add for Rational {
    type Output = Rational;
    fn add(self, rhs: Rational) -> Rational {
        Rational::from_wide(
            self.numer as i128 * rhs.denom as i128 + rhs.numer as i128 * self.denom as i128,
            self.denom as i128 * rhs.denom as i128,
        )
    }
}

impl AddAssign for Rational {
    fn add_assign(&mut self, rhs: Rational) {
        *self = *self + rhs;
    }
}

impl Sub for Rational {
    type Output = Rational;
    fn sub(self, rhs: Rational) -> Rational {
        Rational::from_wide(
            self.numer as i128 * rhs.denom as i128 - rhs.numer as i128 * self.denom as i128,
            self.denom as i128 * rhs.denom as i128,
        )
    }
}

impl Mul for Rational {
    type Output = Rational;
    fn mul(self, rhs: Rational) -> Rational {
        Rational::from_wide(
            self.numer as i128 * rhs.numer as i128,
            self.denom as i128 * rhs.denom as i128,
        )
    }
}

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational {
            numer: -self.numer,
            denom: self.denom,
        }
    }
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.numer as i128 * other.denom as i128).cmp(&(other.numer as i128 * self.denom as i128))
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom == 1 {
            write!(f, "{}", self.numer)
        } else {
            write!(f, "{}/{}", self.numer, self.denom)
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer, self.denom)
    }
}
