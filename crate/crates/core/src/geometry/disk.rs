//! Poincaré disk helpers (curvature −1, metric 4|dz|²/(1−|z|²)²).
//!
//! Tangent vectors at `p` are represented in the frame transported from the
//! origin by the Möbius map sending 0 to `p`; in that frame the complex
//! modulus of a tangent vector is its Riemannian norm.

use num_complex::Complex64;

/// Möbius map sending `p` to the origin.
pub fn to_origin(p: Complex64, z: Complex64) -> Complex64 {
    (z - p) / (Complex64::new(1.0, 0.0) - p.conj() * z)
}

/// Möbius map sending the origin to `p`.
pub fn from_origin(p: Complex64, w: Complex64) -> Complex64 {
    (w + p) / (Complex64::new(1.0, 0.0) + p.conj() * w)
}

/// Geodesic distance, `2 atanh |(y − z)/(1 − z̄ y)|`.
pub fn distance(y: Complex64, z: Complex64) -> f64 {
    let num = (y - z).norm();
    if num == 0.0 {
        return 0.0;
    }
    let den = (Complex64::new(1.0, 0.0) - z.conj() * y).norm();
    2.0 * (num / den).min(1.0).atanh()
}

/// The closed-form distance `acosh[1 + 2|y−z|²/((1−|y|²)(1−|z|²))]`.
pub fn distance_acosh(y: Complex64, z: Complex64) -> f64 {
    let num = 2.0 * (y - z).norm_sqr();
    let den = (1.0 - y.norm_sqr()) * (1.0 - z.norm_sqr());
    (1.0 + num / den).acosh()
}

pub fn log_at(p: Complex64, z: Complex64) -> Complex64 {
    let w = to_origin(p, z);
    let r = w.norm();
    if r == 0.0 {
        return Complex64::new(0.0, 0.0);
    }
    w * (2.0 * r.min(1.0).atanh() / r)
}

pub fn exp_at(p: Complex64, v: Complex64) -> Complex64 {
    let n = v.norm();
    if n == 0.0 {
        return p;
    }
    let w = v * ((0.5 * n).tanh() / n);
    from_origin(p, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_distance_formulas_agree() {
        let pts = [
            Complex64::new(0.0, 0.0),
            Complex64::new(0.5, 0.0),
            Complex64::new(0.29, 0.82),
            Complex64::new(-0.7, -0.1),
            Complex64::new(0.0, -0.95),
        ];
        for &a in &pts {
            for &b in &pts {
                let d1 = distance(a, b);
                let d2 = distance_acosh(a, b);
                assert!((d1 - d2).abs() < 1e-10 * (1.0 + d1), "{a} {b}: {d1} {d2}");
            }
        }
    }

    #[test]
    fn exp_inverts_log() {
        let p = Complex64::new(0.3, -0.4);
        let z = Complex64::new(-0.5, 0.6);
        let v = log_at(p, z);
        assert!((v.norm() - distance(p, z)).abs() < 1e-12);
        assert!((exp_at(p, v) - z).norm() < 1e-12);
    }
}
