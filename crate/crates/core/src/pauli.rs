use std::fmt;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Single-site Pauli label. On a three-level site it acts on `{|0>, |1>}` and fixes `|W>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

/// Power `k` of the imaginary unit, `i^k`.
pub fn i_pow<T: Real>(k: u8) -> Complex<T> {
    match k % 4 {
        0 => Complex::new(T::one(), T::zero()),
        1 => Complex::new(T::zero(), T::one()),
        2 => Complex::new(-T::one(), T::zero()),
        _ => Complex::new(T::zero(), -T::one()),
    }
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    /// True for the labels with a bit-flip component.
    pub fn flips(self) -> bool {
        matches!(self, Pauli::X | Pauli::Y)
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Pauli {
        Pauli::ALL[k & 3]
    }

    pub fn from_char(c: char) -> Option<Pauli> {
        match c {
            'I' => Some(Pauli::I),
            'X' => Some(Pauli::X),
            'Y' => Some(Pauli::Y),
            'Z' => Some(Pauli::Z),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        ['I', 'X', 'Y', 'Z'][self.index()]
    }

    /// Image of a basis digit as `(digit, k)` with phase `i^k`.
    pub fn act(self, digit: u8) -> (u8, u8) {
        if digit > 1 {
            return (digit, 0);
        }
        match (self, digit) {
            (Pauli::I, d) => (d, 0),
            (Pauli::X, d) => (1 - d, 0),
            (Pauli::Y, 0) => (1, 1),
            (Pauli::Y, _) => (0, 3),
            (Pauli::Z, 0) => (0, 0),
            (Pauli::Z, _) => (1, 2),
        }
    }

    /// Product `self * other = i^k * P`, returned as `(k, P)`.
    pub fn mul(self, other: Pauli) -> (u8, Pauli) {
        use Pauli::*;
        match (self, other) {
            (I, p) | (p, I) => (0, p),
            (a, b) if a == b => (0, I),
            (X, Y) => (1, Z),
            (Y, X) => (3, Z),
            (Y, Z) => (1, X),
            (Z, Y) => (3, X),
            (Z, X) => (1, Y),
            (X, Z) => (3, Y),
            _ => unreachable!(),
        }
    }

    pub fn commutes(self, other: Pauli) -> bool {
        self == Pauli::I || other == Pauli::I || self == other
    }

    /// Dense matrix on a site of radix `dim` (2 or 3), row-major.
    pub fn matrix<T: Real>(self, dim: usize) -> Vec<Complex<T>> {
        let mut m = vec![Complex::new(T::zero(), T::zero()); dim * dim];
        for col in 0..dim {
            let (row, k) = self.act(col as u8);
            m[row as usize * dim + col] = i_pow(k);
        }
        m
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Parses a string such as `"XIZ"` into labels.
pub fn parse_string(s: &str) -> Option<Vec<Pauli>> {
    s.chars().map(Pauli::from_char).collect()
}

pub fn format_string(ps: &[Pauli]) -> String {
    ps.iter().map(|p| p.as_char()).collect()
}
