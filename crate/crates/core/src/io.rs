//! Number formatting shared by the CSV and JSON writers. Non-finite values
//! are spelled out as `-inf` / `inf`; NaN is never written.

use serde::Serializer;

/// Text form used in CSV files: shortest round-trip representation.
pub fn fmt_num(x: f64) -> String {
    if x == f64::NEG_INFINITY {
        "-inf".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else {
        format!("{x:e}")
    }
}

pub(crate) fn ser_f64<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if x.is_nan() {
        Err(serde::ser::Error::custom("refusing to serialize NaN"))
    } else {
        s.serialize_str(&fmt_num(*x))
    }
}

pub(crate) fn ser_f64_vec<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(xs.len()))?;
    for x in xs {
        seq.serialize_element(&Num(*x))?;
    }
    seq.end()
}

struct Num(f64);

impl serde::Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ser_f64(&self.0, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(serde::Serialize)]
    struct Row {
        #[serde(serialize_with = "ser_f64")]
        a: f64,
        #[serde(serialize_with = "ser_f64_vec")]
        b: Vec<f64>,
    }

    #[test]
    fn infinities_become_tokens() {
        let r = Row { a: f64::NEG_INFINITY, b: vec![1.5, f64::NEG_INFINITY] };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"a":"-inf","b":[1.5,"-inf"]}"#);
        let r = Row { a: f64::NAN, b: vec![] };
        assert!(serde_json::to_string(&r).is_err());
        assert_eq!(fmt_num(0.25), "2.5e-1");
    }
}
