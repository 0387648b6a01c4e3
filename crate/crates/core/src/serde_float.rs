//! Serde adapters that keep non-finite floats representable in JSON:
//! `inf`, `-inf` and `NaN` are written as strings and read back from either
//! strings or numbers.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::scalar::Scalar;

#[derive(Deserialize)]
#[serde(untagged)]
enum Repr<T> {
    Num(T),
    Text(String),
}

fn encode<T: Scalar, S: Serializer>(x: T, s: S) -> Result<S::Ok, S::Error> {
    if x.is_finite() {
        x.serialize(s)
    } else if x.is_nan() {
        s.serialize_str("NaN")
    } else if x > T::zero() {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn decode<T: Scalar, E: serde::de::Error>(r: Repr<T>) -> Result<T, E> {
    match r {
        Repr::Num(x) => Ok(x),
        Repr::Text(t) => match t.as_str() {
            "inf" | "+inf" | "Infinity" => Ok(T::infinity()),
            "-inf" | "-Infinity" => Ok(T::neg_infinity()),
            "NaN" | "nan" => Ok(T::nan()),
            other => Err(E::custom(format!("expected a number, got `{other}`"))),
        },
    }
}

struct Wrap<T>(T);

impl<T: Scalar> Serialize for Wrap<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        encode(self.0, s)
    }
}

pub fn serialize<T: Scalar, S: Serializer>(x: &T, s: S) -> Result<S::Ok, S::Error> {
    encode(*x, s)
}

pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> Result<T, D::Error> {
    decode(Repr::deserialize(d)?)
}

/// The same encoding for `Vec<T>`.
pub mod vec {
    use super::*;

    pub fn serialize<T: Scalar, S: Serializer>(xs: &[T], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(xs.iter().map(|&x| Wrap(x)))
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> Result<Vec<T>, D::Error> {
        Vec::<Repr<T>>::deserialize(d)?
            .into_iter()
            .map(decode::<T, D::Error>)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Probe {
        #[serde(with = "crate::serde_float")]
        x: f64,
        #[serde(with = "crate::serde_float::vec")]
        xs: Vec<f32>,
    }

    #[test]
    fn non_finite_values_round_trip() {
        let p = Probe {
            x: f64::NEG_INFINITY,
            xs: vec![1.5, f32::INFINITY, 0.1],
        };
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"x":"-inf","xs":[1.5,"inf",0.1]}"#);
        assert_eq!(serde_json::from_str::<Probe>(&json).unwrap(), p);
        let nan: Probe = serde_json::from_str(r#"{"x":"NaN","xs":[]}"#).unwrap();
        assert!(nan.x.is_nan());
        assert!(serde_json::from_str::<Probe>(r#"{"x":"lots","xs":[]}"#).is_err());
    }

    #[test]
    fn finite_values_are_exact() {
        let p = Probe {
            x: 0.1 + 0.2,
            xs: vec![],
        };
        let back: Probe = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back.x.to_bits(), p.x.to_bits());
    }
}
