use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::point::{disk_clamped, symmetrize, ManifoldKind, ManifoldPoint};
use super::spd;
use crate::error::{Error, Result};

const ORTHOGONALITY_TOL: f64 = 1e-10;

/// An element of the isometry group acting transitively on a manifold.
#[derive(Debug, Clone, PartialEq)]
pub enum Isometry {
    /// O(d) acting on the sphere by matrix multiplication.
    Orthogonal(DMatrix<f64>),
    /// z ↦ (az + b)/(b̄z + ā) with |a|² − |b|² = 1.
    Mobius { a: Complex64, b: Complex64 },
    /// GL(d) acting on SPD matrices by y ↦ g y gᵀ.
    Congruence(DMatrix<f64>),
}

impl Isometry {
    pub fn orthogonal(q: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::InvalidIsometry("orthogonal matrix must be square".into()));
        }
        let n = q.nrows();
        let dev = (q.transpose() * &q - DMatrix::identity(n, n)).abs().max();
        if dev > ORTHOGONALITY_TOL {
            return Err(Error::InvalidIsometry(format!(
                "matrix is not orthogonal (max |QᵀQ − I| = {dev:e})"
            )));
        }
        Ok(Isometry::Orthogonal(q))
    }

    /// Möbius map; `(a, b)` is rescaled so that |a|² − |b|² = 1.
    pub fn mobius(a: Complex64, b: Complex64) -> Result<Self> {
        let det = a.norm_sqr() - b.norm_sqr();
        if !(det > 1e-300) || !det.is_finite() {
            return Err(Error::InvalidIsometry(
                "Möbius parameters need |a|² > |b|²".into(),
            ));
        }
        let s = det.sqrt();
        Ok(Isometry::Mobius { a: a / s, b: b / s })
    }

    pub fn congruence(g: DMatrix<f64>) -> Result<Self> {
        if !g.is_square() {
            return Err(Error::InvalidIsometry("congruence matrix must be square".into()));
        }
        let det = g.determinant();
        if !det.is_finite() || det.abs() < 1e-300 || g.clone().try_inverse().is_none() {
            return Err(Error::InvalidIsometry("matrix is not invertible".into()));
        }
        Ok(Isometry::Congruence(g))
    }

    pub fn identity(kind: ManifoldKind, dim: usize) -> Self {
        match kind {
            ManifoldKind::Sphere => Isometry::Orthogonal(DMatrix::identity(dim, dim)),
            ManifoldKind::Disk => Isometry::Mobius {
                a: Complex64::new(1.0, 0.0),
                b: Complex64::new(0.0, 0.0),
            },
            ManifoldKind::Spd => Isometry::Congruence(DMatrix::identity(dim, dim)),
        }
    }

    pub fn kind(&self) -> ManifoldKind {
        match self {
            Isometry::Orthogonal(_) => ManifoldKind::Sphere,
            Isometry::Mobius { .. } => ManifoldKind::Disk,
            Isometry::Congruence(_) => ManifoldKind::Spd,
        }
    }

    pub fn apply(&self, y: &ManifoldPoint) -> Result<ManifoldPoint> {
        match (self, y) {
            (Isometry::Orthogonal(q), ManifoldPoint::Sphere(v)) => {
                check_dim(q.nrows(), v.len())?;
                let w: DVector<f64> = q * v;
                Ok(ManifoldPoint::Sphere(w.normalize()))
            }
            (Isometry::Mobius { a, b }, ManifoldPoint::Disk(z)) => {
                let w = (a * z + b) / (b.conj() * z + a.conj());
                Ok(disk_clamped(w))
            }
            (Isometry::Congruence(g), ManifoldPoint::Spd(m)) => {
                check_dim(g.nrows(), m.nrows())?;
                Ok(ManifoldPoint::Spd(symmetrize(&(g * m * g.transpose()))))
            }
            _ => Err(Error::ManifoldMismatch {
                expected: self.kind(),
                found: y.kind(),
            }),
        }
    }

    pub fn inverse(&self) -> Self {
        match self {
            Isometry::Orthogonal(q) => Isometry::Orthogonal(q.transpose()),
            Isometry::Mobius { a, b } => Isometry::Mobius { a: a.conj(), b: -b },
            Isometry::Congruence(g) => Isometry::Congruence(
                g.clone().try_inverse().expect("congruence is invertible by construction"),
            ),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Isometry) -> Result<Self> {
        match (self, other) {
            (Isometry::Orthogonal(p), Isometry::Orthogonal(q)) => {
                check_dim(p.nrows(), q.nrows())?;
                Ok(Isometry::Orthogonal(p * q))
            }
            (Isometry::Mobius { a: a1, b: b1 }, Isometry::Mobius { a: a2, b: b2 }) => {
                // matrices [[a, b], [b̄, ā]] multiply
                let a = a1 * a2 + b1 * b2.conj();
                let b = a1 * b2 + b1 * a2.conj();
                Isometry::mobius(a, b)
            }
            (Isometry::Congruence(g), Isometry::Congruence(h)) => {
                check_dim(g.nrows(), h.nrows())?;
                Ok(Isometry::Congruence(g * h))
            }
            _ => Err(Error::ManifoldMismatch {
                expected: self.kind(),
                found: other.kind(),
            }),
        }
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// The canonical base point: e₁ on the sphere, 0 in the disk, I for SPD.
pub fn base_point(kind: ManifoldKind, dim: usize) -> ManifoldPoint {
    match kind {
        ManifoldKind::Sphere => {
            let mut v = DVector::zeros(dim);
            v[0] = 1.0;
            ManifoldPoint::Sphere(v)
        }
        ManifoldKind::Disk => ManifoldPoint::Disk(Complex64::new(0.0, 0.0)),
        ManifoldKind::Spd => ManifoldPoint::Spd(DMatrix::identity(dim, dim)),
    }
}

/// An isometry sending the canonical base point to `target`.
///
/// Sphere: the rotation in the plane spanned by e₁ and the target. Disk:
/// z ↦ (z + w)/(w̄z + 1). SPD: congruence by the symmetric square root.
pub fn isometry_to(target: &ManifoldPoint) -> Isometry {
    match target {
        ManifoldPoint::Sphere(v) => Isometry::Orthogonal(rotation_from_e1(v)),
        ManifoldPoint::Disk(w) => {
            let s = (1.0 - w.norm_sqr()).sqrt();
            Isometry::Mobius {
                a: Complex64::new(1.0 / s, 0.0),
                b: w / s,
            }
        }
        ManifoldPoint::Spd(m) => Isometry::Congruence(spd::sqrt(m)),
    }
}

fn rotation_from_e1(v: &DVector<f64>) -> DMatrix<f64> {
    let d = v.len();
    let mut u = DVector::zeros(d);
    u[0] = 1.0;
    let c = v[0].clamp(-1.0, 1.0);
    let mut w = v - &u * c;
    let wn = w.norm();
    if wn < 1e-300 {
        if c > 0.0 {
            return DMatrix::identity(d, d);
        }
        // antipode: rotate by π in the (e₁, e₂) plane
        w = DVector::zeros(d);
        w[1] = 1.0;
    } else {
        w /= wn;
    }
    let s = if wn < 1e-300 { 0.0 } else { wn.min(1.0) };
    let uu = &u * u.transpose();
    let ww = &w * w.transpose();
    let wu = &w * u.transpose();
    let uw = &u * w.transpose();
    DMatrix::identity(d, d) + (uu + ww) * (c - 1.0) + (wu - uw) * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::riemannian_distance;

    #[test]
    fn identity_elements_fix_points() {
        let d = ManifoldPoint::disk(0.3, -0.2).unwrap();
        let g = Isometry::mobius(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)).unwrap();
        assert_eq!(g.apply(&d).unwrap(), d);
        let s = ManifoldPoint::sphere(vec![0.0, 0.6, 0.8]).unwrap();
        let id = Isometry::identity(ManifoldKind::Sphere, 3);
        assert_eq!(id.apply(&s).unwrap(), s);
        let m = ManifoldPoint::spd(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        assert_eq!(Isometry::identity(ManifoldKind::Spd, 2).apply(&m).unwrap(), m);
    }

    #[test]
    fn isometry_to_base_point_is_identity() {
        for kind in [ManifoldKind::Sphere, ManifoldKind::Disk, ManifoldKind::Spd] {
            let dim = if kind == ManifoldKind::Disk { 2 } else { 3 };
            let b = base_point(kind, dim);
            assert_eq!(isometry_to(&b), Isometry::identity(kind, dim));
        }
    }

    #[test]
    fn disk_isometry_to_maps_origin() {
        let w = Complex64::new(0.29, 0.82);
        let g = isometry_to(&ManifoldPoint::Disk(w));
        let img = g.apply(&base_point(ManifoldKind::Disk, 2)).unwrap();
        assert!((img.as_disk().unwrap() - w).norm() < 1e-12);
        let p = ManifoldPoint::disk(-0.4, 0.1).unwrap();
        let q = ManifoldPoint::disk(0.2, 0.5).unwrap();
        let d0 = riemannian_distance(&p, &q).unwrap();
        let d1 = riemannian_distance(&g.apply(&p).unwrap(), &g.apply(&q).unwrap()).unwrap();
        assert!((d0 - d1).abs() < 1e-12);
    }

    #[test]
    fn sphere_e2_is_plane_rotation() {
        let e2 = ManifoldPoint::sphere(vec![0.0, 1.0, 0.0]).unwrap();
        let Isometry::Orthogonal(q) = isometry_to(&e2) else { panic!() };
        let expected = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((q - expected).abs().max() < 1e-15);
        let anti = ManifoldPoint::sphere(vec![-1.0, 0.0, 0.0]).unwrap();
        let img = isometry_to(&anti).apply(&base_point(ManifoldKind::Sphere, 3)).unwrap();
        assert!((img.as_sphere().unwrap() - anti.as_sphere().unwrap()).norm() < 1e-12);
    }

    #[test]
    fn invalid_elements_rejected() {
        assert!(Isometry::orthogonal(DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0])).is_err());
        assert!(Isometry::congruence(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0])).is_err());
        assert!(Isometry::mobius(Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0)).is_err());
    }

    #[test]
    fn mismatch_is_an_error() {
        let g = Isometry::identity(ManifoldKind::Disk, 2);
        let s = ManifoldPoint::sphere(vec![1.0, 0.0]).unwrap();
        assert!(matches!(g.apply(&s), Err(Error::ManifoldMismatch { .. })));
    }

    #[test]
    fn compose_and_inverse() {
        let g = Isometry::mobius(Complex64::new(1.2, 0.3), Complex64::new(0.4, -0.5)).unwrap();
        let h = Isometry::mobius(Complex64::new(0.9, -0.2), Complex64::new(-0.1, 0.3)).unwrap();
        let p = ManifoldPoint::disk(0.1, 0.7).unwrap();
        let gh = g.compose(&h).unwrap().apply(&p).unwrap();
        let seq = g.apply(&h.apply(&p).unwrap()).unwrap();
        assert!((gh.as_disk().unwrap() - seq.as_disk().unwrap()).norm() < 1e-12);
        let back = g.inverse().apply(&g.apply(&p).unwrap()).unwrap();
        assert!((back.as_disk().unwrap() - p.as_disk().unwrap()).norm() < 1e-12);
    }
}
