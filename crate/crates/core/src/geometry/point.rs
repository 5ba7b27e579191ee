use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Which of the supported homogeneous manifolds a value lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ManifoldKind {
    Sphere,
    Disk,
    Spd,
}

const SPHERE_NORM_TOL: f64 = 1e-12;
const SPD_SYM_TOL: f64 = 1e-12;

/// A point on the unit sphere, the Poincaré disk or the SPD cone.
#[derive(Debug, Clone, PartialEq)]
pub enum ManifoldPoint {
    Sphere(DVector<f64>),
    Disk(Complex64),
    Spd(DMatrix<f64>),
}

impl ManifoldPoint {
    pub fn sphere(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::InvalidPoint(
                "sphere points need at least 2 coordinates".into(),
            ));
        }
        let v = DVector::from_vec(coords);
        let norm = v.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > SPHERE_NORM_TOL {
            return Err(Error::InvalidPoint(format!(
                "sphere point has norm {norm}, expected 1"
            )));
        }
        Ok(ManifoldPoint::Sphere(v))
    }

    /// Projects a nonzero vector onto the sphere.
    pub fn sphere_normalized(v: DVector<f64>) -> Result<Self> {
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() || v.len() < 2 {
            return Err(Error::InvalidPoint("cannot normalize vector".into()));
        }
        Ok(ManifoldPoint::Sphere(v / norm))
    }

    pub fn disk(re: f64, im: f64) -> Result<Self> {
        Self::disk_from(Complex64::new(re, im))
    }

    pub fn disk_from(z: Complex64) -> Result<Self> {
        if !z.re.is_finite() || !z.im.is_finite() || z.norm_sqr() >= 1.0 {
            return Err(Error::InvalidPoint(format!(
                "disk point {z} must satisfy |z| < 1"
            )));
        }
        Ok(ManifoldPoint::Disk(z))
    }

    pub fn spd(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::InvalidPoint("SPD point must be a square matrix".into()));
        }
        let n = m.nrows();
        for i in 0..n {
            for j in 0..i {
                if (m[(i, j)] - m[(j, i)]).abs() > SPD_SYM_TOL * (1.0 + m[(i, j)].abs()) {
                    return Err(Error::InvalidPoint("SPD point is not symmetric".into()));
                }
            }
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPoint("SPD point has non-finite entries".into()));
        }
        let sym = symmetrize(&m);
        if sym.clone().cholesky().is_none() {
            return Err(Error::InvalidPoint("matrix is not positive definite".into()));
        }
        Ok(ManifoldPoint::Spd(sym))
    }

    pub fn kind(&self) -> ManifoldKind {
        match self {
            ManifoldPoint::Sphere(_) => ManifoldKind::Sphere,
            ManifoldPoint::Disk(_) => ManifoldKind::Disk,
            ManifoldPoint::Spd(_) => ManifoldKind::Spd,
        }
    }

    /// Ambient dimension: vector length for spheres, 2 for the disk, matrix
    /// order for SPD.
    pub fn dim(&self) -> usize {
        match self {
            ManifoldPoint::Sphere(v) => v.len(),
            ManifoldPoint::Disk(_) => 2,
            ManifoldPoint::Spd(m) => m.nrows(),
        }
    }

    pub fn as_sphere(&self) -> Option<&DVector<f64>> {
        match self {
            ManifoldPoint::Sphere(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_disk(&self) -> Option<Complex64> {
        match self {
            ManifoldPoint::Disk(z) => Some(*z),
            _ => None,
        }
    }

    pub fn as_spd(&self) -> Option<&DMatrix<f64>> {
        match self {
            ManifoldPoint::Spd(m) => Some(m),
            _ => None,
        }
    }

    /// Flat coordinates used by the CSV format (disk: re, im; SPD: row-major).
    pub fn coords(&self) -> Vec<f64> {
        match self {
            ManifoldPoint::Sphere(v) => v.iter().copied().collect(),
            ManifoldPoint::Disk(z) => vec![z.re, z.im],
            ManifoldPoint::Spd(m) => {
                let n = m.nrows();
                let mut out = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        out.push(m[(i, j)]);
                    }
                }
                out
            }
        }
    }

    /// Inverse of [`coords`](Self::coords).
    pub fn from_coords(kind: ManifoldKind, dim: usize, c: &[f64]) -> Result<Self> {
        match kind {
            ManifoldKind::Sphere => {
                if c.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: c.len() });
                }
                ManifoldPoint::sphere(c.to_vec())
            }
            ManifoldKind::Disk => {
                if c.len() != 2 {
                    return Err(Error::DimensionMismatch { expected: 2, found: c.len() });
                }
                ManifoldPoint::disk(c[0], c[1])
            }
            ManifoldKind::Spd => {
                if c.len() != dim * dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim * dim,
                        found: c.len(),
                    });
                }
                ManifoldPoint::spd(DMatrix::from_row_slice(dim, dim, c))
            }
        }
    }

    pub(crate) fn ensure_compatible(&self, other: &ManifoldPoint) -> Result<()> {
        if self.kind() != other.kind() {
            return Err(Error::ManifoldMismatch {
                expected: self.kind(),
                found: other.kind(),
            });
        }
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: other.dim(),
            });
        }
        Ok(())
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Pulls a computed disk value back inside the open disk if rounding pushed
/// it onto the boundary.
pub(crate) fn disk_clamped(z: Complex64) -> ManifoldPoint {
    let r = z.norm();
    const MAX_R: f64 = 1.0 - 1e-15;
    if r >= MAX_R {
        ManifoldPoint::Disk(z * (MAX_R / r))
    } else {
        ManifoldPoint::Disk(z)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PointRepr {
    Disk { re: f64, im: f64 },
    Spd(Vec<Vec<f64>>),
    Sphere(Vec<f64>),
}

impl Serialize for ManifoldPoint {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            ManifoldPoint::Sphere(v) => PointRepr::Sphere(v.iter().copied().collect()),
            ManifoldPoint::Disk(z) => PointRepr::Disk { re: z.re, im: z.im },
            ManifoldPoint::Spd(m) => PointRepr::Spd(
                (0..m.nrows())
                    .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                    .collect(),
            ),
        };
        repr.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ManifoldPoint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let repr = PointRepr::deserialize(d)?;
        let point = match repr {
            PointRepr::Disk { re, im } => ManifoldPoint::disk(re, im),
            PointRepr::Sphere(v) => ManifoldPoint::sphere(v),
            PointRepr::Spd(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(D::Error::custom("SPD point must be a square nested array"));
                }
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                ManifoldPoint::spd(DMatrix::from_row_slice(n, n, &flat))
            }
        };
        point.map_err(D::Error::custom)
    }
}
