//! JSON schema for the set types, used by the CLI's scenario and model-set
//! files.
//!
//! Field names: `center`, `generators`, `eq_A`, `eq_b`, `H`, `h`. Matrices are
//! row-major nested arrays; generator lists of matrix (constrained) zonotopes
//! are arrays of matrices. Constrained sets are re-certified nonempty on
//! deserialization.

use super::{
    ConstrainedMatrixZonotope, ConstrainedZonotope, ConstraintBlocks, IntervalBox,
    MatrixZonotope, Polytope, Zonotope,
};
use nalgebra::{DMatrix, DVector};
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub(crate) fn mat_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

pub(crate) fn rows_to_mat(rows: &[Vec<f64>], ncols_hint: usize) -> Result<DMatrix<f64>, String> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, ncols_hint));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

#[derive(Serialize, Deserialize)]
struct ZonotopeRepr {
    center: Vec<f64>,
    generators: Vec<Vec<f64>>,
}

impl Serialize for Zonotope {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ZonotopeRepr {
            center: self.center().iter().copied().collect(),
            generators: mat_to_rows(self.generators()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Zonotope {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = ZonotopeRepr::deserialize(d)?;
        let c = DVector::from_vec(r.center);
        let g = rows_to_mat(&r.generators, 0).map_err(D::Error::custom)?;
        let g = if g.nrows() == 0 {
            DMatrix::zeros(c.len(), 0)
        } else {
            g
        };
        Zonotope::new(c, g).map_err(D::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct ConstrainedZonotopeRepr {
    center: Vec<f64>,
    generators: Vec<Vec<f64>>,
    #[serde(rename = "eq_A")]
    eq_a: Vec<Vec<f64>>,
    eq_b: Vec<f64>,
}

impl Serialize for ConstrainedZonotope {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ConstrainedZonotopeRepr {
            center: self.center().iter().copied().collect(),
            generators: mat_to_rows(self.generators()),
            eq_a: mat_to_rows(self.eq_a()),
            eq_b: self.eq_b().iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConstrainedZonotope {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = ConstrainedZonotopeRepr::deserialize(d)?;
        let c = DVector::from_vec(r.center);
        let g = rows_to_mat(&r.generators, 0).map_err(D::Error::custom)?;
        let s = g.ncols();
        let a = rows_to_mat(&r.eq_a, s).map_err(D::Error::custom)?;
        ConstrainedZonotope::new(g, c, a, DVector::from_vec(r.eq_b)).map_err(D::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixZonotopeRepr {
    center: Vec<Vec<f64>>,
    generators: Vec<Vec<Vec<f64>>>,
}

impl Serialize for MatrixZonotope {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MatrixZonotopeRepr {
            center: mat_to_rows(self.center()),
            generators: self.blocks().iter().map(mat_to_rows).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MatrixZonotope {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = MatrixZonotopeRepr::deserialize(d)?;
        let c = rows_to_mat(&r.center, 0).map_err(D::Error::custom)?;
        let blocks = r
            .generators
            .iter()
            .map(|g| rows_to_mat(g, c.ncols()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(D::Error::custom)?;
        MatrixZonotope::new(c, blocks).map_err(D::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct ConstrainedMatrixZonotopeRepr {
    center: Vec<Vec<f64>>,
    generators: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "eq_A")]
    eq_a: Vec<Vec<Vec<f64>>>,
    eq_b: Vec<Vec<f64>>,
}

impl Serialize for ConstrainedMatrixZonotope {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ConstrainedMatrixZonotopeRepr {
            center: mat_to_rows(self.center()),
            generators: self.blocks().iter().map(mat_to_rows).collect(),
            eq_a: self
                .constraints()
                .a_blocks()
                .iter()
                .map(mat_to_rows)
                .collect(),
            eq_b: mat_to_rows(self.constraints().rhs()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConstrainedMatrixZonotope {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = ConstrainedMatrixZonotopeRepr::deserialize(d)?;
        let c = rows_to_mat(&r.center, 0).map_err(D::Error::custom)?;
        let blocks = r
            .generators
            .iter()
            .map(|g| rows_to_mat(g, c.ncols()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(D::Error::custom)?;
        let rhs = rows_to_mat(&r.eq_b, 0).map_err(D::Error::custom)?;
        let a_blocks = r
            .eq_a
            .iter()
            .map(|g| rows_to_mat(g, rhs.ncols()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(D::Error::custom)?;
        let cons = if rhs.nrows() == 0 {
            ConstraintBlocks::none(blocks.len())
        } else {
            ConstraintBlocks::new(a_blocks, rhs).map_err(D::Error::custom)?
        };
        ConstrainedMatrixZonotope::new(c, blocks, cons).map_err(D::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct PolytopeRepr {
    #[serde(rename = "H")]
    h_mat: Vec<Vec<f64>>,
    h: Vec<f64>,
}

impl Serialize for Polytope {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PolytopeRepr {
            h_mat: mat_to_rows(self.h_mat()),
            h: self.h_vec().iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polytope {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PolytopeRepr::deserialize(d)?;
        let h = rows_to_mat(&r.h_mat, 0).map_err(D::Error::custom)?;
        Polytope::new(h, DVector::from_vec(r.h)).map_err(D::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct IntervalBoxRepr {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Serialize for IntervalBox {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        IntervalBoxRepr {
            lower: self.lower().iter().copied().collect(),
            upper: self.upper().iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for IntervalBox {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = IntervalBoxRepr::deserialize(d)?;
        IntervalBox::new(DVector::from_vec(r.lower), DVector::from_vec(r.upper))
            .map_err(D::Error::custom)
    }
}
