//! Row-major JSON representation for `DMatrix<f64>`.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Repr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl From<&DMatrix<f64>> for Repr {
    fn from(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows())
            .flat_map(|r| (0..m.ncols()).map(move |c| (r, c)))
            .map(|rc| m[rc])
            .collect();
        Repr {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

impl Repr {
    fn into_matrix<E: serde::de::Error>(self) -> Result<DMatrix<f64>, E> {
        if self.data.len() != self.rows * self.cols {
            return Err(E::custom(format!(
                "matrix data has {} values, expected {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    Repr::from(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    Repr::deserialize(d)?.into_matrix()
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(Repr::from).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            Some(r) => r.into_matrix().map(Some),
            None => Ok(None),
        }
    }
}
