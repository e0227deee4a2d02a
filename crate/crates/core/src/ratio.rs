use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A non-negative quantity that may be unbounded.
///
/// Serialized as a plain number, or as the string `"inf"` for the unbounded
/// case, so that JSON and CSV output never carry a float infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ratio {
    Finite(f64),
    Infinite,
}

impl Ratio {
    /// `num / den` with `x / 0 = inf` for `x > 0` and `0 / 0 = 0`.
    pub fn of(num: f64, den: f64) -> Self {
        if den > 0.0 {
            Ratio::Finite(num / den)
        } else if num > 0.0 {
            Ratio::Infinite
        } else {
            Ratio::Finite(0.0)
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Ratio::Infinite)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Ratio::Finite(v) => Some(v),
            Ratio::Infinite => None,
        }
    }

    /// `true` when `self >= bound`; an unbounded ratio exceeds every bound.
    pub fn at_least(&self, bound: f64) -> bool {
        match *self {
            Ratio::Finite(v) => v >= bound,
            Ratio::Infinite => true,
        }
    }

    pub fn as_f64(&self) -> f64 {
        match *self {
            Ratio::Finite(v) => v,
            Ratio::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Finite(v) => write!(f, "{v}"),
            Ratio::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match *self {
            Ratio::Finite(v) => serializer.serialize_f64(v),
            Ratio::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) => Ok(Ratio::Finite(v)),
            Repr::Text(s) if s == "inf" => Ok(Ratio::Infinite),
            Repr::Text(s) => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn division_conventions() {
        assert_eq!(Ratio::of(1.0, 2.0), Ratio::Finite(0.5));
        assert_eq!(Ratio::of(1.0, 0.0), Ratio::Infinite);
        assert_eq!(Ratio::of(0.0, 0.0), Ratio::Finite(0.0));
    }

    #[test]
    fn serializes_infinity_as_text() {
        assert_eq!(serde_json::to_string(&Ratio::Infinite).unwrap(), "\"inf\"");
        assert_eq!(serde_json::to_string(&Ratio::Finite(2.5)).unwrap(), "2.5");
        let back: Ratio = serde_json::from_str("\"inf\"").unwrap();
        assert!(back.is_infinite());
    }
}
