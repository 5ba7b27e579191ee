//! Points, distances and isometries on the sphere, the Poincaré disk and the
//! SPD cone, plus the location-scale families built on them.

pub mod disk;
mod family;
mod isometry;
mod point;
pub mod spd;

pub use family::{
    check_sigma, disk_log_normalizer, spd2_log_normalizer, Family, SIGMA_MAX, SIGMA_MIN,
};
pub use isometry::{base_point, isometry_to, Isometry};
pub use point::{ManifoldKind, ManifoldPoint};

pub(crate) use point::disk_clamped;

use crate::error::Result;

/// Geodesic distance between two points of the same manifold.
///
/// Sphere: great-circle angle. Disk: hyperbolic distance with curvature −1.
/// SPD: affine-invariant distance `sqrt(tr[(log(y⁻¹z))²])`.
pub fn riemannian_distance(y: &ManifoldPoint, z: &ManifoldPoint) -> Result<f64> {
    y.ensure_compatible(z)?;
    Ok(match (y, z) {
        (ManifoldPoint::Sphere(a), ManifoldPoint::Sphere(b)) => {
            2.0 * (a - b).norm().atan2((a + b).norm())
        }
        (ManifoldPoint::Disk(a), ManifoldPoint::Disk(b)) => disk::distance(*a, *b),
        (ManifoldPoint::Spd(a), ManifoldPoint::Spd(b)) => spd::distance_sq(a, b).sqrt(),
        _ => unreachable!("compatibility checked"),
    })
}

pub fn riemannian_distance_sq(y: &ManifoldPoint, z: &ManifoldPoint) -> Result<f64> {
    y.ensure_compatible(z)?;
    Ok(match (y, z) {
        (ManifoldPoint::Spd(a), ManifoldPoint::Spd(b)) => spd::distance_sq(a, b),
        _ => {
            let d = riemannian_distance(y, z)?;
            d * d
        }
    })
}

pub(crate) fn sphere_inner(y: &ManifoldPoint, z: &ManifoldPoint) -> f64 {
    match (y, z) {
        (ManifoldPoint::Sphere(a), ManifoldPoint::Sphere(b)) => a.dot(b),
        _ => panic!("sphere_inner on non-sphere points"),
    }
}
