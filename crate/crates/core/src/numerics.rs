//! Solvers shared by the M-steps: inversion of ψ′, weighted Fréchet means,
//! and quadrature normalizers used as independent checks.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{disk, disk_clamped, spd, Family, ManifoldKind, ManifoldPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootSolveConfig {
    /// Tolerance on |ψ′(η) − target|: absolute for |target| ≥ 1, relative
    /// below, so tiny targets (small σ) are still resolved.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Search interval in η; defaults to the family's admissible interval.
    pub bracket: Option<(f64, f64)>,
}

impl Default for RootSolveConfig {
    fn default() -> Self {
        RootSolveConfig {
            tolerance: 1e-10,
            max_iter: 100,
            bracket: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampSide {
    Lower,
    Upper,
}

/// Result of inverting ψ′. `clamped` is set when the target lies outside the
/// range of ψ′ on the search interval and the boundary was returned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootSolution {
    pub eta: f64,
    pub clamped: Option<ClampSide>,
}

/// Solves ψ′(η) = target by safeguarded Newton iteration.
///
/// Bisection is geometric (ψ′ is evaluated over many orders of magnitude of
/// η); Newton uses a central-difference ψ″.
pub fn inverse_psi_prime(family: &Family, target: f64, cfg: &RootSolveConfig) -> Result<RootSolution> {
    if !target.is_finite() {
        return Err(Error::Domain(format!("ψ′ target {target} is not finite")));
    }
    let (mut lo, mut hi) = cfg.bracket.unwrap_or_else(|| family.eta_bounds());
    if !(lo < hi) || hi >= 0.0 {
        return Err(Error::Domain(format!("invalid η bracket [{lo}, {hi}]")));
    }
    let tol = if target == 0.0 {
        cfg.tolerance
    } else {
        cfg.tolerance * target.abs().min(1.0)
    };
    let f_lo = family.psi_prime(lo)? - target;
    let f_hi = family.psi_prime(hi)? - target;
    if f_lo.abs() <= tol {
        return Ok(RootSolution { eta: lo, clamped: None });
    }
    if f_hi.abs() <= tol {
        return Ok(RootSolution { eta: hi, clamped: None });
    }
    if f_lo > 0.0 {
        return Ok(RootSolution { eta: lo, clamped: Some(ClampSide::Lower) });
    }
    if f_hi < 0.0 {
        return Ok(RootSolution { eta: hi, clamped: Some(ClampSide::Upper) });
    }

    let mut eta = -((-lo) * (-hi)).sqrt();
    for _ in 0..cfg.max_iter.max(1) * 4 {
        let f = family.psi_prime(eta)? - target;
        if f.abs() <= tol {
            return Ok(RootSolution { eta, clamped: None });
        }
        if f < 0.0 {
            lo = eta;
        } else {
            hi = eta;
        }
        if (hi - lo) <= 4.0 * f64::EPSILON * hi.abs() {
            return Ok(RootSolution { eta: 0.5 * (lo + hi), clamped: None });
        }
        let h = 1e-6 * eta.abs();
        let slope = (family.psi_prime(eta + h)? - family.psi_prime(eta - h)?) / (2.0 * h);
        let newton = eta - f / slope;
        eta = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else if hi / lo < 0.5 {
            // bracket spans orders of magnitude
            -((-lo) * (-hi)).sqrt()
        } else {
            0.5 * (lo + hi)
        };
    }
    let f = family.psi_prime(eta)? - target;
    if f.abs() <= tol * 1e3 {
        return Ok(RootSolution { eta, clamped: None });
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iter,
        grad_norm: f.abs(),
    })
}

/// A table of ψ′ values on a uniform η grid, inverted by binary search and
/// linear interpolation within the bracketing cell.
#[derive(Debug, Clone)]
pub struct PsiPrimeTable {
    etas: Vec<f64>,
    values: Vec<f64>,
}

impl PsiPrimeTable {
    pub fn new(family: &Family, lo: f64, hi: f64, size: usize) -> Result<Self> {
        if size < 2 || !(lo < hi) || hi >= 0.0 {
            return Err(Error::Domain(format!(
                "table needs size ≥ 2 and lo < hi < 0 (got {size}, [{lo}, {hi}])"
            )));
        }
        let step = (hi - lo) / (size - 1) as f64;
        let etas: Vec<f64> = (0..size)
            .map(|i| if i == size - 1 { hi } else { lo + step * i as f64 })
            .collect();
        let values = etas
            .iter()
            .map(|&e| family.psi_prime(e))
            .collect::<Result<Vec<_>>>()?;
        Ok(PsiPrimeTable { etas, values })
    }

    /// Grid spacing in η.
    pub fn cell_width(&self) -> f64 {
        self.etas[1] - self.etas[0]
    }

    pub fn lookup(&self, target: f64) -> RootSolution {
        let n = self.values.len();
        if target <= self.values[0] {
            let clamped = (target < self.values[0]).then_some(ClampSide::Lower);
            return RootSolution { eta: self.etas[0], clamped };
        }
        if target >= self.values[n - 1] {
            let clamped = (target > self.values[n - 1]).then_some(ClampSide::Upper);
            return RootSolution { eta: self.etas[n - 1], clamped };
        }
        let i = self.values.partition_point(|&v| v <= target).max(1) - 1;
        let (v0, v1) = (self.values[i], self.values[i + 1]);
        let frac = if v1 > v0 { (target - v0) / (v1 - v0) } else { 0.0 };
        RootSolution {
            eta: self.etas[i] + frac * (self.etas[i + 1] - self.etas[i]),
            clamped: None,
        }
    }
}

/// Table-based inverse of ψ′ on the family's admissible interval.
pub fn table_inverse_psi_prime(family: &Family, target: f64, table_size: usize) -> Result<RootSolution> {
    let (lo, hi) = family.eta_bounds();
    Ok(PsiPrimeTable::new(family, lo, hi, table_size)?.lookup(target))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// Unit Riemannian step along the weight-normalized mean log vector.
    Karcher,
    /// Fixed fraction of the Karcher step.
    Scaled(f64),
    /// Riemannian Newton step. The Hessian of ½d² is known in closed form on
    /// both spaces (r coth r across the geodesic), so this converges
    /// quadratically even when the unit step contracts slowly on spread data.
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrechetConfig {
    pub step: StepRule,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for FrechetConfig {
    fn default() -> Self {
        FrechetConfig {
            step: StepRule::Karcher,
            tolerance: 1e-9,
            max_iter: 200,
        }
    }
}

/// Outcome of a weighted mean computation. `grad_norm` is the Riemannian
/// norm of Σω log_y(yᵢ) / Σω at the returned point (zero for the sphere's
/// closed form).
#[derive(Debug, Clone, PartialEq)]
pub struct FrechetMean {
    pub point: ManifoldPoint,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizer of Σ ωᵢ D(yᵢ, y) over the manifold.
///
/// Sphere (vMF statistic): the normalized resultant. Disk and SPD: Riemannian
/// gradient descent from a Euclidean-average starting point.
pub fn weighted_frechet_mean(
    kind: ManifoldKind,
    points: &[ManifoldPoint],
    weights: &[f64],
    cfg: &FrechetConfig,
) -> Result<FrechetMean> {
    weighted_frechet_mean_from(kind, points, weights, None, cfg)
}

/// As [`weighted_frechet_mean`], starting the descent at `init` when given.
pub fn weighted_frechet_mean_from(
    kind: ManifoldKind,
    points: &[ManifoldPoint],
    weights: &[f64],
    init: Option<&ManifoldPoint>,
    cfg: &FrechetConfig,
) -> Result<FrechetMean> {
    if points.len() != weights.len() {
        return Err(Error::LengthMismatch {
            expected: points.len(),
            found: weights.len(),
        });
    }
    if points.is_empty() {
        return Err(Error::ZeroWeight);
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParams("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroWeight);
    }
    for p in points {
        if p.kind() != kind {
            return Err(Error::ManifoldMismatch { expected: kind, found: p.kind() });
        }
        if p.dim() != points[0].dim() {
            return Err(Error::DimensionMismatch { expected: points[0].dim(), found: p.dim() });
        }
    }
    if let Some(i) = init {
        points[0].ensure_compatible(i)?;
    }
    let scale = match cfg.step {
        StepRule::Scaled(s) => s,
        StepRule::Karcher | StepRule::Newton => 1.0,
    };
    match kind {
        ManifoldKind::Sphere => sphere_mean(points, weights),
        ManifoldKind::Disk => disk_mean(points, weights, total, init, scale, cfg),
        ManifoldKind::Spd => spd_mean(points, weights, total, init, scale, cfg),
    }
}

fn sphere_mean(points: &[ManifoldPoint], weights: &[f64]) -> Result<FrechetMean> {
    let d = points[0].dim();
    let mut r = DVector::zeros(d);
    for (p, &w) in points.iter().zip(weights) {
        r.axpy(w, p.as_sphere().expect("kind checked"), 1.0);
    }
    let norm = r.norm();
    let total: f64 = weights.iter().sum();
    if norm < 1e-12 * total.max(1.0) {
        return Err(Error::DegenerateMean(norm));
    }
    Ok(FrechetMean {
        point: ManifoldPoint::Sphere(r / norm),
        grad_norm: 0.0,
        iterations: 0,
        converged: true,
    })
}

/// Near the optimum the objective decrease drops below its rounding error,
/// so a step that stays flat to rounding is judged by the gradient instead.
fn descent_accepted(obj: f64, obj_new: f64, grad: f64, grad_new: f64) -> bool {
    obj_new < obj || (obj_new <= obj + 64.0 * f64::EPSILON * obj.abs() && grad_new < grad)
}

/// Mean log vector and objective Σω d²/(2W) at `y`.
fn disk_mean_log(points: &[ManifoldPoint], weights: &[f64], total: f64, y: Complex64) -> (Complex64, f64) {
    let mut v = Complex64::new(0.0, 0.0);
    let mut obj = 0.0;
    for (p, &w) in points.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let l = disk::log_at(y, p.as_disk().expect("kind checked"));
        v += l * w;
        obj += w * l.norm_sqr();
    }
    (v / total, obj / (2.0 * total))
}

/// s coth s, continued by 1 at the origin.
fn coth_factor(s: f64) -> f64 {
    if s.abs() < 1e-4 {
        1.0 + s * s / 3.0
    } else {
        s / s.tanh()
    }
}

/// H⁻¹v with H = Σω [uuᵀ + r coth r (I − uuᵀ)] / Σω, in the orthonormal
/// frame where log vectors live. H ⪰ I, so the step never exceeds `v`.
fn disk_newton_direction(points: &[ManifoldPoint], weights: &[f64], y: Complex64, v: Complex64) -> Complex64 {
    let mut h = nalgebra::Matrix2::<f64>::zeros();
    let mut total = 0.0;
    for (p, &w) in points.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        total += w;
        let l = disk::log_at(y, p.as_disk().expect("kind checked"));
        let r = l.norm();
        let c = coth_factor(r);
        h += nalgebra::Matrix2::identity() * (w * c);
        if r > 0.0 {
            let u = nalgebra::Vector2::new(l.re / r, l.im / r);
            h += u * u.transpose() * (w * (1.0 - c));
        }
    }
    h /= total;
    match h.cholesky() {
        Some(ch) => {
            let d = ch.solve(&nalgebra::Vector2::new(v.re, v.im));
            Complex64::new(d[0], d[1])
        }
        None => v,
    }
}

fn disk_mean(
    points: &[ManifoldPoint],
    weights: &[f64],
    total: f64,
    init: Option<&ManifoldPoint>,
    scale: f64,
    cfg: &FrechetConfig,
) -> Result<FrechetMean> {
    let mut y = match init {
        Some(p) => p.as_disk().expect("kind checked"),
        None => {
            let mut m = Complex64::new(0.0, 0.0);
            for (p, &w) in points.iter().zip(weights) {
                m += p.as_disk().expect("kind checked") * w;
            }
            m / total
        }
    };
    let (mut v, mut obj) = disk_mean_log(points, weights, total, y);
    let mut iterations = 0;
    while v.norm() >= cfg.tolerance && iterations < cfg.max_iter {
        iterations += 1;
        let dir = match cfg.step {
            StepRule::Newton => disk_newton_direction(points, weights, y, v),
            _ => v,
        };
        let mut step = scale;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = match disk_clamped(disk::exp_at(y, dir * step)) {
                ManifoldPoint::Disk(z) => z,
                _ => unreachable!(),
            };
            let (v_new, obj_new) = disk_mean_log(points, weights, total, cand);
            if descent_accepted(obj, obj_new, v.norm(), v_new.norm()) {
                y = cand;
                v = v_new;
                obj = obj_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(FrechetMean {
        point: ManifoldPoint::Disk(y),
        grad_norm: v.norm(),
        iterations,
        converged: v.norm() < cfg.tolerance,
    })
}

fn spd_mean_log(
    points: &[ManifoldPoint],
    weights: &[f64],
    total: f64,
    y: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>, f64) {
    let y_inv_sqrt = spd::inv_sqrt(y);
    let n = y.nrows();
    let mut v = DMatrix::zeros(n, n);
    let mut obj = 0.0;
    for (p, &w) in points.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let l = spd::log_whitened(&y_inv_sqrt, p.as_spd().expect("kind checked"));
        obj += w * l.norm_squared();
        v += l * w;
    }
    (v / total, spd::sqrt(y), obj / (2.0 * total))
}

/// Orthonormal basis of symmetric n × n matrices under tr(AB).
fn sym_basis(n: usize) -> Vec<DMatrix<f64>> {
    let mut b = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let mut e = DMatrix::zeros(n, n);
            if i == j {
                e[(i, i)] = 1.0;
            } else {
                e[(i, j)] = std::f64::consts::FRAC_1_SQRT_2;
                e[(j, i)] = std::f64::consts::FRAC_1_SQRT_2;
            }
            b.push(e);
        }
    }
    b
}

/// Newton direction in the whitened frame. For a log vector L = U diag(λ) Uᵀ
/// the Hessian of ½d² acts as A ↦ U[(UᵀAU) ∘ G]Uᵀ with G_ij = g((λᵢ−λⱼ)/2),
/// g(s) = s coth s.
fn spd_newton_direction(
    points: &[ManifoldPoint],
    weights: &[f64],
    y: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = y.nrows();
    let y_inv_sqrt = spd::inv_sqrt(y);
    let basis = sym_basis(n);
    let m = basis.len();
    let mut h = DMatrix::<f64>::zeros(m, m);
    let mut total = 0.0;
    for (p, &w) in points.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        total += w;
        let l = spd::log_whitened(&y_inv_sqrt, p.as_spd().expect("kind checked"));
        let eig = l.symmetric_eigen();
        let (u, lam) = (&eig.eigenvectors, &eig.eigenvalues);
        let g = DMatrix::from_fn(n, n, |i, j| coth_factor(0.5 * (lam[i] - lam[j])));
        for (b, e) in basis.iter().enumerate() {
            let he = u * (u.transpose() * e * u).component_mul(&g) * u.transpose();
            for (a, f) in basis.iter().enumerate() {
                h[(a, b)] += w * f.dot(&he);
            }
        }
    }
    h /= total;
    let rhs = DVector::from_iterator(m, basis.iter().map(|e| e.dot(v)));
    match h.cholesky() {
        Some(ch) => {
            let c = ch.solve(&rhs);
            basis.iter().zip(c.iter()).fold(DMatrix::zeros(n, n), |acc, (e, x)| acc + e * *x)
        }
        None => v.clone(),
    }
}

fn spd_mean(
    points: &[ManifoldPoint],
    weights: &[f64],
    total: f64,
    init: Option<&ManifoldPoint>,
    scale: f64,
    cfg: &FrechetConfig,
) -> Result<FrechetMean> {
    let n = points[0].dim();
    let mut y = match init {
        Some(p) => p.as_spd().expect("kind checked").clone(),
        None => {
            let mut m = DMatrix::zeros(n, n);
            for (p, &w) in points.iter().zip(weights) {
                m += p.as_spd().expect("kind checked") * w;
            }
            m / total
        }
    };
    let (mut v, mut y_sqrt, mut obj) = spd_mean_log(points, weights, total, &y);
    let mut iterations = 0;
    while v.norm() >= cfg.tolerance && iterations < cfg.max_iter {
        iterations += 1;
        let dir = match cfg.step {
            StepRule::Newton => spd_newton_direction(points, weights, &y, &v),
            _ => v.clone(),
        };
        let mut step = scale;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = spd::exp_whitened(&y_sqrt, &(&dir * step));
            let (v_new, sqrt_new, obj_new) = spd_mean_log(points, weights, total, &cand);
            if descent_accepted(obj, obj_new, v.norm(), v_new.norm()) {
                y = cand;
                v = v_new;
                y_sqrt = sqrt_new;
                obj = obj_new;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let grad_norm = v.norm();
    Ok(FrechetMean {
        point: ManifoldPoint::Spd(y),
        grad_norm,
        iterations,
        converged: grad_norm < cfg.tolerance,
    })
}

fn simpson_weights(n: usize) -> impl Fn(usize) -> f64 {
    move |i| {
        if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    }
}

/// Numerical ∫ exp[η(σ) D(y, ȳ)] dvol(y) with ȳ at the base point.
///
/// Disk: Simpson in the Euclidean radius with area element
/// 4r/(1−r²)² dr dθ. Sphere (d = 3): Simpson in the polar angle, trapezoid in
/// azimuth; other d use the polar reduction with |S^{d−2}|. SPD (2×2):
/// eigen-coordinates with volume element 2√2 sinh(|r₁−r₂|/2) dr₁ dr₂ dφ.
pub fn quadrature_normalizer(family: &Family, sigma: f64, resolution: usize) -> Result<f64> {
    if resolution < 64 {
        return Err(Error::Domain("quadrature resolution must be ≥ 64".into()));
    }
    let n = resolution + resolution % 2;
    let eta = family.eta(sigma)?;
    let w = simpson_weights(n);
    match *family {
        Family::DiskGaussian => {
            let d_max = sigma * sigma + 12.0 * sigma;
            let r_max = (0.5 * d_max).tanh().min(1.0 - 1e-12);
            let h = r_max / n as f64;
            let m = n;
            let dtheta = 2.0 * PI / m as f64;
            let center = Complex64::new(0.0, 0.0);
            let mut total = 0.0;
            for j in 0..m {
                let dir = Complex64::from_polar(1.0, j as f64 * dtheta);
                let mut radial = 0.0;
                for i in 0..=n {
                    let r = i as f64 * h;
                    let d = disk::distance(dir * r, center);
                    let jac = 4.0 * r / ((1.0 - r * r) * (1.0 - r * r));
                    radial += w(i) * (eta * d * d).exp() * jac;
                }
                total += radial * h / 3.0 * dtheta;
            }
            Ok(total)
        }
        Family::VonMisesFisher { dim } => {
            let kappa = -eta;
            let h = PI / n as f64;
            if dim == 3 {
                let m = n;
                let dphi = 2.0 * PI / m as f64;
                let mut total = 0.0;
                for j in 0..m {
                    let phi = j as f64 * dphi;
                    let mut col = 0.0;
                    for i in 0..=n {
                        let th = i as f64 * h;
                        let y = [th.cos(), th.sin() * phi.cos(), th.sin() * phi.sin()];
                        // statistic −⟨y, e₁⟩
                        let stat = -y[0];
                        col += w(i) * (eta * stat).exp() * th.sin();
                    }
                    total += col * h / 3.0 * dphi;
                }
                Ok(total)
            } else {
                let k = dim as f64 - 1.0;
                let sphere_area = 2.0 * PI.powf(k / 2.0) / libm::tgamma(k / 2.0);
                let mut s = 0.0;
                for i in 0..=n {
                    let th = i as f64 * h;
                    s += w(i) * (kappa * th.cos()).exp() * th.sin().powi(dim as i32 - 2);
                }
                Ok(s * h / 3.0 * sphere_area)
            }
        }
        Family::SpdGaussian { dim } => {
            if dim != 2 {
                return Err(Error::Unsupported("SPD quadrature for 2×2 matrices only".into()));
            }
            // r₁ > r₂ half-plane in rotated coordinates u = (r₁+r₂)/√2,
            // v = (r₁−r₂)/√2 ≥ 0; φ ∈ [0, π) contributes π
            let l = 12.0 * sigma + sigma * sigma;
            let hu = 2.0 * l / n as f64;
            let hv = l / n as f64;
            let mut total = 0.0;
            for i in 0..=n {
                let u = -l + i as f64 * hu;
                let mut row = 0.0;
                for j in 0..=n {
                    let v = j as f64 * hv;
                    let d2 = u * u + v * v;
                    row += w(j) * (eta * d2).exp() * (v / std::f64::consts::SQRT_2).sinh();
                }
                total += w(i) * row * hv / 3.0;
            }
            total *= hu / 3.0;
            Ok(2.0 * std::f64::consts::SQRT_2 * PI * total)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::riemannian_distance;

    fn families() -> Vec<Family> {
        vec![
            Family::DiskGaussian,
            Family::VonMisesFisher { dim: 3 },
            Family::VonMisesFisher { dim: 5 },
            Family::SpdGaussian { dim: 2 },
        ]
    }

    #[test]
    fn newton_round_trip() {
        for fam in families() {
            for &sigma in &[1e-3, 0.05, 0.3, 1.0, 4.0, 50.0] {
                let eta0 = fam.eta(sigma).unwrap();
                let target = fam.psi_prime(eta0).unwrap();
                let sol = inverse_psi_prime(&fam, target, &RootSolveConfig::default()).unwrap();
                assert!(sol.clamped.is_none());
                assert!(
                    ((sol.eta - eta0) / eta0).abs() < 1e-8,
                    "{fam:?} σ={sigma}: {} vs {eta0}",
                    sol.eta
                );
            }
        }
    }

    #[test]
    fn out_of_range_targets_clamp() {
        let fam = Family::DiskGaussian;
        let sol = inverse_psi_prime(&fam, 0.0, &RootSolveConfig::default()).unwrap();
        assert_eq!(sol.clamped, Some(ClampSide::Lower));
        assert_eq!(sol.eta, fam.eta_bounds().0);
        let vmf = Family::VonMisesFisher { dim: 3 };
        let sol = inverse_psi_prime(&vmf, -1.0, &RootSolveConfig::default()).unwrap();
        assert_eq!(sol.clamped, Some(ClampSide::Lower));
        assert!((vmf.sigma_of_eta(sol.eta) - crate::geometry::SIGMA_MAX).abs() < 1e-9);
        let sol = inverse_psi_prime(&vmf, 0.5, &RootSolveConfig::default()).unwrap();
        assert_eq!(sol.clamped, Some(ClampSide::Upper));
    }

    #[test]
    fn monotone_targets_give_monotone_eta() {
        let fam = Family::DiskGaussian;
        let cfg = RootSolveConfig::default();
        let mut prev = f64::NEG_INFINITY;
        for k in 1..40 {
            let target = 0.05 * k as f64;
            let eta = inverse_psi_prime(&fam, target, &cfg).unwrap().eta;
            assert!(eta > prev);
            prev = eta;
        }
    }

    #[test]
    fn table_agrees_with_newton() {
        let fam = Family::DiskGaussian;
        let table = PsiPrimeTable::new(&fam, -50.0, -1e-2, 10_000).unwrap();
        let cfg = RootSolveConfig { bracket: Some((-50.0, -1e-2)), ..Default::default() };
        let mut max_diff: f64 = 0.0;
        for k in 0..100 {
            let eta0 = -50.0 + (50.0 - 1e-2) * (k as f64 + 0.37) / 100.0;
            let target = fam.psi_prime(eta0).unwrap();
            let a = table.lookup(target).eta;
            let b = inverse_psi_prime(&fam, target, &cfg).unwrap().eta;
            max_diff = max_diff.max((a - b).abs());
        }
        assert!(max_diff < 1e-3, "max diff {max_diff}");
        assert!(max_diff < table.cell_width());
        let lo = table.lookup(-1.0);
        assert_eq!(lo.eta, -50.0);
        assert_eq!(lo.clamped, Some(ClampSide::Lower));
        let hi = table.lookup(1e9);
        assert_eq!(hi.eta, -1e-2);
    }

    #[test]
    fn frechet_single_point() {
        let p = ManifoldPoint::disk(0.4, -0.3).unwrap();
        let m = weighted_frechet_mean(ManifoldKind::Disk, std::slice::from_ref(&p), &[1.0], &FrechetConfig::default()).unwrap();
        assert!(riemannian_distance(&m.point, &p).unwrap() < 1e-12);
    }

    #[test]
    fn frechet_disk_symmetric_pair() {
        let pts = [ManifoldPoint::disk(-0.6, 0.0).unwrap(), ManifoldPoint::disk(0.6, 0.0).unwrap()];
        let m = weighted_frechet_mean(ManifoldKind::Disk, &pts, &[1.0, 1.0], &FrechetConfig::default()).unwrap();
        assert!(m.point.as_disk().unwrap().norm() < 1e-12);
        assert!(m.converged);
    }

    #[test]
    fn frechet_sphere_closed_form() {
        let pts = [
            ManifoldPoint::sphere(vec![1.0, 0.0, 0.0]).unwrap(),
            ManifoldPoint::sphere(vec![0.0, 1.0, 0.0]).unwrap(),
        ];
        let m = weighted_frechet_mean(ManifoldKind::Sphere, &pts, &[2.0, 2.0], &FrechetConfig::default()).unwrap();
        let s = 0.5f64.sqrt();
        let v = m.point.as_sphere().unwrap();
        assert!((v[0] - s).abs() < 1e-15 && (v[1] - s).abs() < 1e-15 && v[2] == 0.0);
    }

    #[test]
    fn frechet_errors() {
        let pts = [
            ManifoldPoint::sphere(vec![1.0, 0.0]).unwrap(),
            ManifoldPoint::sphere(vec![-1.0, 0.0]).unwrap(),
        ];
        assert!(matches!(
            weighted_frechet_mean(ManifoldKind::Sphere, &pts, &[1.0, 1.0], &FrechetConfig::default()),
            Err(Error::DegenerateMean(_))
        ));
        let d = [ManifoldPoint::disk(0.1, 0.0).unwrap()];
        assert!(matches!(
            weighted_frechet_mean(ManifoldKind::Disk, &d, &[0.0], &FrechetConfig::default()),
            Err(Error::ZeroWeight)
        ));
    }

    #[test]
    fn frechet_spd_commuting_points() {
        // diagonal matrices: the mean is the geometric mean entrywise
        let a = ManifoldPoint::spd(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]))).unwrap();
        let b = ManifoldPoint::spd(DMatrix::from_diagonal(&DVector::from_vec(vec![9.0, 1.0]))).unwrap();
        let m = weighted_frechet_mean(ManifoldKind::Spd, &[a, b], &[1.0, 1.0], &FrechetConfig::default()).unwrap();
        let y = m.point.as_spd().unwrap();
        assert!((y[(0, 0)] - 3.0).abs() < 1e-9 && (y[(1, 1)] - 2.0).abs() < 1e-9);
        assert!(y[(0, 1)].abs() < 1e-9);
    }

    #[test]
    fn newton_agrees_with_unit_steps() {
        let newton = FrechetConfig { step: StepRule::Newton, ..FrechetConfig::default() };
        let slow = FrechetConfig { max_iter: 20_000, ..FrechetConfig::default() };
        let disk: Vec<ManifoldPoint> = [(0.95, 0.0), (-0.6, 0.7), (0.1, -0.9), (0.2, 0.2)]
            .iter()
            .map(|&(a, b)| ManifoldPoint::disk(a, b).unwrap())
            .collect();
        let w = [1.0, 2.0, 0.5, 1.5];
        let a = weighted_frechet_mean(ManifoldKind::Disk, &disk, &w, &newton).unwrap();
        let b = weighted_frechet_mean(ManifoldKind::Disk, &disk, &w, &slow).unwrap();
        assert!(a.converged && b.converged);
        assert!(a.iterations < 20 && a.iterations < b.iterations);
        assert!(crate::geometry::riemannian_distance(&a.point, &b.point).unwrap() < 1e-8);

        let spd: Vec<ManifoldPoint> = [[4.0, 1.9, 1.0], [0.1, 0.0, 5.0], [1.0, -0.9, 1.0]]
            .iter()
            .map(|c| ManifoldPoint::spd(DMatrix::from_row_slice(2, 2, &[c[0], c[1], c[1], c[2]])).unwrap())
            .collect();
        let a = weighted_frechet_mean(ManifoldKind::Spd, &spd, &[1.0; 3], &newton).unwrap();
        let b = weighted_frechet_mean(ManifoldKind::Spd, &spd, &[1.0; 3], &slow).unwrap();
        assert!(a.converged && b.converged);
        assert!(a.iterations < 20);
        assert!(crate::geometry::riemannian_distance(&a.point, &b.point).unwrap() < 1e-8);
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        let z = quadrature_normalizer(&Family::DiskGaussian, 1.0, 512).unwrap();
        let exact = crate::geometry::disk_log_normalizer(1.0).exp();
        assert!((z - exact).abs() < 1e-4, "{z} vs {exact}");
        let vmf = Family::VonMisesFisher { dim: 3 };
        let s = quadrature_normalizer(&vmf, 2.0, 512).unwrap();
        let exact = 4.0 * PI * 2f64.sinh() / 2.0;
        assert!((s - exact).abs() < 1e-6, "{s} vs {exact}");
        let spd2 = Family::SpdGaussian { dim: 2 };
        for &sigma in &[0.3, 1.0] {
            let q = quadrature_normalizer(&spd2, sigma, 512).unwrap();
            let exact = crate::geometry::spd2_log_normalizer(sigma).exp();
            assert!(((q - exact) / exact).abs() < 1e-6, "σ={sigma}: {q} vs {exact}");
        }
    }

    #[test]
    fn quadrature_small_sigma_trend() {
        // Z(σ)/(2πσ²)^{dim/2} → 1 from above, monotonically
        let mut prev = f64::INFINITY;
        for &s in &[0.4, 0.2, 0.1, 0.05] {
            let z = quadrature_normalizer(&Family::DiskGaussian, s, 512).unwrap();
            let ratio = z / (2.0 * PI * s * s);
            assert!(ratio > 1.0 && ratio < prev, "σ={s}: {ratio}");
            prev = ratio;
        }
        assert!(prev - 1.0 < 0.01);
    }

    #[test]
    fn quadrature_resolution_guard() {
        assert!(quadrature_normalizer(&Family::DiskGaussian, 1.0, 16).is_err());
    }
}
