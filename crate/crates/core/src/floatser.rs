//! Serde helpers that keep non-finite floats representable in JSON.
//!
//! `serde_json` writes `inf` and `NaN` as `null`, which loses the difference
//! between "infinite" and "absent". These helpers encode them as the strings
//! `"inf"`, `"-inf"` and `"nan"` instead.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Repr {
    Num(f64),
    Str(String),
}

fn encode(v: f64) -> Repr {
    if v.is_nan() {
        Repr::Str("nan".into())
    } else if v == f64::INFINITY {
        Repr::Str("inf".into())
    } else if v == f64::NEG_INFINITY {
        Repr::Str("-inf".into())
    } else {
        Repr::Num(v)
    }
}

fn decode<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
    match r {
        Repr::Num(v) => Ok(v),
        Repr::Str(s) => match s.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(E::custom(format!("not a float: {other:?}"))),
        },
    }
}

pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    encode(*v).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    decode(Repr::deserialize(d)?)
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(encode).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<Repr>::deserialize(d)?.map(decode).transpose()
    }
}
