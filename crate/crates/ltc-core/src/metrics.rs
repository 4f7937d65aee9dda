//! Deterministic patch similarity metrics over exact rational arithmetic.

use alloc::string::{String, ToString};
use core::cmp::Ordering;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::diff::{file_set, patch_size, Patch};

/// An exact rational number, normalized so gcd(num, den) = 1 and den > 0.
/// Serialized as the string `"num/den"` so persisted values stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    num: i128,
    den: i128,
}

impl Rational {
    pub const ZERO: Rational = Rational { num: 0, den: 1 };
    pub const ONE: Rational = Rational { num: 1, den: 1 };

    pub fn new(num: i128, den: i128) -> Rational {
        assert!(den != 0, "zero denominator");
        let sign = if den < 0 { -1 } else { 1 };
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()) as i128;
        Rational {
            num: sign * num / g,
            den: sign * den / g,
        }
    }

    pub fn from_int(v: i128) -> Rational {
        Rational { num: v, den: 1 }
    }

    pub fn numerator(&self) -> i128 {
        self.num
    }

    pub fn denominator(&self) -> i128 {
        self.den
    }

    pub fn abs(self) -> Rational {
        Rational {
            num: self.num.abs(),
            den: self.den,
        }
    }

    pub fn is_negative(&self) -> bool {
        self.num < 0
    }

    /// Mean of a nonempty slice.
    pub fn mean(values: &[Rational]) -> Rational {
        assert!(!values.is_empty(), "mean of empty slice");
        let sum = values.iter().fold(Rational::ZERO, |acc, v| acc + *v);
        sum / Rational::from_int(values.len() as i128)
    }

    /// Rounds to the nearest integer, half away from zero.
    pub fn round_half_away(&self) -> i128 {
        let q = self.num / self.den;
        let r = self.num % self.den;
        if 2 * r.abs() >= self.den {
            q + self.num.signum()
        } else {
            q
        }
    }

    /// Value × 100 rounded half-away-from-zero, for percentage display.
    pub fn to_percent(&self) -> i128 {
        Rational::new(self.num * 100, self.den).round_half_away()
    }

    /// Fixed-point decimal string with `places` digits, half-away rounding
    /// (e.g. 568/10 at 1 place → "56.8").
    pub fn to_decimal_string(&self, places: u32) -> String {
        let scale = 10i128.pow(places);
        let scaled = Rational::new(self.num * scale, self.den).round_half_away();
        let sign = if scaled < 0 { "-" } else { "" };
        let mag = scaled.abs();
        let whole = mag / scale;
        if places == 0 {
            return alloc::format!("{sign}{whole}");
        }
        let frac = mag % scale;
        alloc::format!("{sign}{whole}.{frac:0width$}", width = places as usize)
    }

    fn cmp_key(&self, other: &Rational) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

impl core::ops::Add for Rational {
    type Output = Rational;
    fn add(self, other: Rational) -> Rational {
        Rational::new(self.num * other.den + other.num * self.den, self.den * other.den)
    }
}

impl core::ops::Sub for Rational {
    type Output = Rational;
    fn sub(self, other: Rational) -> Rational {
        Rational::new(self.num * other.den - other.num * self.den, self.den * other.den)
    }
}

impl core::ops::Mul for Rational {
    type Output = Rational;
    fn mul(self, other: Rational) -> Rational {
        Rational::new(self.num * other.num, self.den * other.den)
    }
}

impl core::ops::Div for Rational {
    type Output = Rational;
    fn div(self, other: Rational) -> Rational {
        assert!(other.num != 0, "division by zero");
        Rational::new(self.num * other.den, self.den * other.num)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    if a == 0 && b == 0 {
        return 1;
    }
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

impl PartialOrd for Rational {
    fn partial_cmp(&self, other: &Rational) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Rational {
    fn cmp(&self, other: &Rational) -> Ordering {
        self.cmp_key(other)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        let (n, d) = s
            .split_once('/')
            .ok_or_else(|| serde::de::Error::custom("expected \"num/den\""))?;
        let num: i128 = n.trim().parse().map_err(serde::de::Error::custom)?;
        let den: i128 = d.trim().parse().map_err(serde::de::Error::custom)?;
        if den == 0 {
            return Err(serde::de::Error::custom("zero denominator"));
        }
        Ok(Rational::new(num, den))
    }
}

// ── Metrics ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricError {
    /// Line deviation is undefined for an empty oracle patch; the ≥10
    /// modified-lines prefilter guarantees mined oracles are nonempty, so
    /// hitting this means a pipeline invariant was violated upstream.
    EmptyOraclePatch,
}

impl fmt::Display for MetricError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricError::EmptyOraclePatch => write!(f, "oracle patch has size 0"),
        }
    }
}

impl core::error::Error for MetricError {}

/// Jaccard similarity between the file sets of two patches. Both sets
/// empty is defined as 1 (vacuously perfect localisation).
pub fn file_iou(agent_patch: &Patch, oracle_patch: &Patch) -> Rational {
    let a = file_set(agent_patch);
    let b = file_set(oracle_patch);
    if a.is_empty() && b.is_empty() {
        return Rational::ONE;
    }
    let intersection = a.intersection(&b).count() as i128;
    let union = a.union(&b).count() as i128;
    Rational::new(intersection, union)
}

/// Signed patch-bloat ratio `(|agent| − |oracle|) / |oracle|`. 0 means
/// size-matched; the minimum is −1 (empty agent patch).
pub fn line_deviation(agent_patch: &Patch, oracle_patch: &Patch) -> Result<Rational, MetricError> {
    let oracle = patch_size(oracle_patch) as i128;
    if oracle == 0 {
        return Err(MetricError::EmptyOraclePatch);
    }
    let agent = patch_size(agent_patch) as i128;
    Ok(Rational::new(agent - oracle, oracle))
}
