//! Serde helpers for floats that may be infinite or NaN, which plain JSON
//! numbers cannot carry. Non-finite values are written as strings.

use num_traits::{Float, FromPrimitive};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serializer};

pub fn serialize<F: Float, S: Serializer>(value: &F, serializer: S) -> Result<S::Ok, S::Error> {
    let v = value.to_f64().unwrap_or(f64::NAN);
    if v.is_finite() {
        serializer.serialize_f64(v)
    } else if v.is_nan() {
        serializer.serialize_str("nan")
    } else if v > 0.0 {
        serializer.serialize_str("inf")
    } else {
        serializer.serialize_str("-inf")
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Repr {
    Number(f64),
    Text(String),
}

pub fn deserialize<'de, F: Float + FromPrimitive, D: Deserializer<'de>>(deserializer: D) -> Result<F, D::Error> {
    let v = match Repr::deserialize(deserializer)? {
        Repr::Number(v) => v,
        Repr::Text(s) => match s.as_str() {
            "inf" => f64::INFINITY,
            "-inf" => f64::NEG_INFINITY,
            "nan" => f64::NAN,
            other => return Err(D::Error::custom(format!("invalid float `{other}`"))),
        },
    };
    F::from_f64(v).ok_or_else(|| D::Error::custom("float out of range"))
}

pub mod option {
    use super::*;
    use serde::Serialize;

    pub fn serialize<F: Float, S: Serializer>(value: &Option<F>, serializer: S) -> Result<S::Ok, S::Error> {
        struct Wrap<'a, F>(&'a F);
        impl<F: Float> Serialize for Wrap<'_, F> {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                super::serialize(self.0, s)
            }
        }
        match value {
            Some(v) => serializer.serialize_some(&Wrap(v)),
            None => serializer.serialize_none(),
        }
    }

    pub fn deserialize<'de, F: Float + FromPrimitive, D: Deserializer<'de>>(
        deserializer: D,
    ) -> Result<Option<F>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(deserialize_with = "super::deserialize")] f64);
        Ok(match Option::<Wrap>::deserialize(deserializer)? {
            Some(Wrap(v)) => Some(F::from_f64(v).ok_or_else(|| D::Error::custom("float out of range"))?),
            None => None,
        })
    }
}
