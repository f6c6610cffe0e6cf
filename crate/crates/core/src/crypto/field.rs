//! Arithmetic in the prime field GF(2^61 - 1).
//!
//! The Mersenne prime keeps every product inside u128 and leaves headroom
//! for 32-bit aggregation sums.

use std::ops::{Add, Mul, Neg, Sub};

/// Field modulus, the Mersenne prime 2^61 - 1.
pub const FIELD_PRIME: u64 = (1u64 << 61) - 1;

/// An element of GF(2^61 - 1), always held reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldElement(u64);

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);
    pub const ONE: FieldElement = FieldElement(1);

    pub fn new(v: u64) -> Self {
        FieldElement(v % FIELD_PRIME)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn pow(self, mut e: u64) -> Self {
        let mut base = self;
        let mut acc = FieldElement::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse. Panics on zero.
    pub fn inv(self) -> Self {
        assert!(self.0 != 0, "inverse of zero");
        self.pow(FIELD_PRIME - 2)
    }
}

impl Add for FieldElement {
    type Output = FieldElement;
    fn add(self, rhs: Self) -> Self {
        let s = self.0 + rhs.0; // < 2^62, no overflow
        FieldElement(if s >= FIELD_PRIME { s - FIELD_PRIME } else { s })
    }
}

impl Sub for FieldElement {
    type Output = FieldElement;
    fn sub(self, rhs: Self) -> Self {
        FieldElement(if self.0 >= rhs.0 {
            self.0 - rhs.0
        } else {
            self.0 + FIELD_PRIME - rhs.0
        })
    }
}

impl Neg for FieldElement {
    type Output = FieldElement;
    fn neg(self) -> Self {
        FieldElement::ZERO - self
    }
}

impl Mul for FieldElement {
    type Output = FieldElement;
    fn mul(self, rhs: Self) -> Self {
        FieldElement(((self.0 as u128 * rhs.0 as u128) % FIELD_PRIME as u128) as u64)
    }
}
