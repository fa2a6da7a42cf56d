//! Serde adapters for non-finite floats and nalgebra containers.

/// Serialize `f64` values that may be non-finite. Finite values are plain
/// JSON numbers; infinities and NaN become the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("invalid number `{other}`"))),
            },
        }
    }
}

/// `Option<f64>` counterpart of [`extended_f64`]; `None` is `null`.
pub mod extended_f64_opt {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Wrap(#[serde(with = "super::extended_f64")] f64);

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(Wrap).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

/// `DMatrix<f64>` as row-major nested arrays.
pub mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }

    /// `cols_if_empty` fixes the column count of a matrix with no rows.
    pub fn from_rows(rows: &[Vec<f64>], cols_if_empty: usize) -> Result<DMatrix<f64>, String> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(cols_if_empty, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows, 0).map_err(de::Error::custom)
    }
}

/// `DVector<f64>` as a flat array.
pub mod vector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Probe {
        #[serde(with = "super::extended_f64")]
        a: f64,
        #[serde(with = "super::extended_f64_opt")]
        b: Option<f64>,
    }

    #[test]
    fn non_finite_values_round_trip() {
        for p in [
            Probe { a: f64::INFINITY, b: None },
            Probe { a: 1.5, b: Some(f64::NEG_INFINITY) },
            Probe { a: -0.25, b: Some(3.0) },
        ] {
            let text = serde_json::to_string(&p).unwrap();
            assert_eq!(serde_json::from_str::<Probe>(&text).unwrap(), p);
        }
        assert_eq!(
            serde_json::to_string(&Probe { a: f64::INFINITY, b: Some(2.0) }).unwrap(),
            r#"{"a":"inf","b":2.0}"#
        );
    }

    #[test]
    fn matrices_are_row_major() {
        #[derive(Serialize, Deserialize)]
        struct M(#[serde(with = "super::matrix_rows")] nalgebra::DMatrix<f64>);
        let m = M(nalgebra::DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(text, "[[1.0,2.0,3.0],[4.0,5.0,6.0]]");
        assert_eq!(serde_json::from_str::<M>(&text).unwrap().0, m.0);
        assert!(serde_json::from_str::<M>("[[1.0],[2.0,3.0]]").is_err());
    }
}
