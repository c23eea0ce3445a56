//! Exact significance levels.
//!
//! A level is kept as a reduced rational `num / den` parsed from its decimal
//! text, so boundary comparisons such as `R / (B + 1) <= alpha` or
//! `floor(alpha * (B + 1))` never depend on binary rounding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Alpha {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Alpha {
    /// Builds `num / den`, requiring the value to lie strictly inside (0, 1).
    pub fn from_ratio(num: u64, den: u64) -> Result<Self> {
        if den == 0 || num == 0 || num >= den {
            return Err(Error::DomainError(format!(
                "alpha must lie in (0, 1), got {num}/{den}"
            )));
        }
        let g = gcd(num, den);
        Ok(Alpha {
            num: num / g,
            den: den / g,
        })
    }

    /// Parses a plain decimal such as `0.05` or `.01`.
    pub fn parse_decimal(text: &str) -> Result<Self> {
        let t = text.trim();
        let bad = || Error::InvalidInput(format!("alpha '{text}' is not a plain decimal in (0, 1)"));
        let (int_part, frac_part) = match t.split_once('.') {
            Some((i, f)) => (i, f),
            None => (t, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return Err(bad());
        }
        let frac_part = frac_part.trim_end_matches('0');
        if frac_part.len() > 18 {
            return Err(bad());
        }
        let int_val: u64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| bad())?
        };
        if int_val != 0 {
            return Err(Error::DomainError(format!("alpha must lie in (0, 1), got {t}")));
        }
        let den = 10u64.pow(frac_part.len() as u32);
        let num: u64 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|_| bad())?
        };
        Alpha::from_ratio(num, den)
    }

    /// Converts a float through its shortest round-trip decimal representation.
    pub fn from_f64(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::DomainError(format!("alpha must be finite, got {value}")));
        }
        let text = format!("{value}");
        if text.contains('e') || text.contains('E') {
            return Err(Error::DomainError(format!(
                "alpha {value} has no short decimal form; pass it as text"
            )));
        }
        Alpha::parse_decimal(&text)
    }

    pub fn numerator(&self) -> u64 {
        self.num
    }

    pub fn denominator(&self) -> u64 {
        self.den
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `rank / total <= alpha`, evaluated exactly.
    pub fn admits(&self, rank: u128, total: u128) -> bool {
        rank * self.den as u128 <= self.num as u128 * total
    }

    /// `floor(alpha * (b + 1))`: the largest rank that still rejects with `b` permutations.
    pub fn max_rejecting_rank(&self, b: u64) -> u64 {
        ((self.num as u128 * (b as u128 + 1)) / self.den as u128) as u64
    }

    /// `floor(alpha * (b + 1) - 1)`, the largest binomial count that still rejects;
    /// `None` when no count can reject.
    pub fn rejection_threshold(&self, b: u64) -> Option<u64> {
        self.max_rejecting_rank(b).checked_sub(1)
    }

    /// Smallest `B` for which rejection is possible, i.e. `1 / (B + 1) <= alpha`.
    pub fn min_feasible_b(&self) -> u64 {
        // ceil(den / num) - 1
        self.den.div_ceil(self.num) - 1
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_f64())
    }
}

impl FromStr for Alpha {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Alpha::parse_decimal(s)
    }
}

impl Serialize for Alpha {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Number(f64),
        }
        let parsed = match Repr::deserialize(deserializer)? {
            Repr::Text(s) => Alpha::parse_decimal(&s),
            Repr::Number(x) => Alpha::from_f64(x),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_common_levels() {
        let a = Alpha::parse_decimal("0.05").unwrap();
        assert_eq!((a.numerator(), a.denominator()), (1, 20));
        let a = Alpha::parse_decimal(".010").unwrap();
        assert_eq!((a.numerator(), a.denominator()), (1, 100));
        assert_eq!(Alpha::from_f64(0.05).unwrap(), Alpha::parse_decimal("0.05").unwrap());
    }

    #[test]
    fn rejects_out_of_range_and_garbage() {
        for s in ["0", "1", "1.5", "-0.1", "abc", "", ".", "0.0"] {
            assert!(Alpha::parse_decimal(s).is_err(), "{s}");
        }
    }

    #[test]
    fn boundary_is_exact() {
        let a = Alpha::parse_decimal("0.05").unwrap();
        // 0.05 * 20 == 1 exactly, so B = 19 can reject only with Z = 0.
        assert_eq!(a.max_rejecting_rank(19), 1);
        assert_eq!(a.rejection_threshold(19), Some(0));
        assert_eq!(a.rejection_threshold(18), None);
        assert_eq!(a.max_rejecting_rank(199), 10);
        assert!(a.admits(1, 20));
        assert!(!a.admits(2, 20));
        assert!(a.admits(10, 200));
        assert!(!a.admits(11, 200));
        assert_eq!(a.min_feasible_b(), 19);
        let a = Alpha::parse_decimal("0.03").unwrap();
        assert_eq!(a.min_feasible_b(), 33);
    }
}
