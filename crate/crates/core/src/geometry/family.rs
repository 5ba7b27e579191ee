//! Location-scale exponential families f(y | ȳ, σ) = exp[η(σ) D(y, ȳ) − ψ(η(σ))].
//!
//! All families store η < 0 with D oriented accordingly. For von Mises-Fisher
//! the statistic is D = −⟨y, ȳ⟩ and η = −κ, where κ is the usual
//! concentration, which is the scale σ exposed publicly.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::point::{ManifoldKind, ManifoldPoint};
use super::{riemannian_distance_sq, sphere_inner};
use crate::error::{Error, Result};
use crate::special::{bessel_i_ratio, erf, ln_bessel_i};

/// Smallest admissible scale.
pub const SIGMA_MIN: f64 = 1e-4;
/// Largest admissible scale.
pub const SIGMA_MAX: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// von Mises-Fisher on S^{dim−1} ⊂ ℝ^dim.
    VonMisesFisher { dim: usize },
    /// Riemannian Gaussian on the Poincaré disk (curvature −1).
    DiskGaussian,
    /// Riemannian Gaussian on dim×dim SPD matrices (normalizer for dim = 2).
    SpdGaussian { dim: usize },
}

impl Family {
    pub fn kind(&self) -> ManifoldKind {
        match self {
            Family::VonMisesFisher { .. } => ManifoldKind::Sphere,
            Family::DiskGaussian => ManifoldKind::Disk,
            Family::SpdGaussian { .. } => ManifoldKind::Spd,
        }
    }

    /// Ambient dimension of points (2 for the disk).
    pub fn dim(&self) -> usize {
        match *self {
            Family::VonMisesFisher { dim } | Family::SpdGaussian { dim } => dim,
            Family::DiskGaussian => 2,
        }
    }

    /// The name used in model files.
    pub fn tag(&self) -> &'static str {
        match self {
            Family::VonMisesFisher { .. } => "vmf",
            Family::DiskGaussian => "disk_gaussian",
            Family::SpdGaussian { .. } => "spd_gaussian",
        }
    }

    pub fn from_tag(tag: &str, dim: usize) -> Result<Self> {
        match tag {
            "vmf" => {
                if dim < 2 {
                    return Err(Error::InvalidParams("vMF needs dimension ≥ 2".into()));
                }
                Ok(Family::VonMisesFisher { dim })
            }
            "disk_gaussian" => Ok(Family::DiskGaussian),
            "spd_gaussian" => Ok(Family::SpdGaussian { dim }),
            other => Err(Error::InvalidParams(format!("unknown family '{other}'"))),
        }
    }

    pub fn check_point(&self, y: &ManifoldPoint) -> Result<()> {
        if y.kind() != self.kind() {
            return Err(Error::ManifoldMismatch {
                expected: self.kind(),
                found: y.kind(),
            });
        }
        if y.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: y.dim(),
            });
        }
        Ok(())
    }

    /// The sign-absorbed statistic D(y, ȳ).
    pub fn statistic(&self, y: &ManifoldPoint, ybar: &ManifoldPoint) -> Result<f64> {
        self.check_point(y)?;
        self.check_point(ybar)?;
        match self {
            Family::VonMisesFisher { .. } => Ok(-sphere_inner(y, ybar)),
            _ => riemannian_distance_sq(y, ybar),
        }
    }

    /// Natural parameter η(σ) < 0.
    pub fn eta(&self, sigma: f64) -> Result<f64> {
        check_sigma(sigma)?;
        Ok(self.eta_unchecked(sigma))
    }

    pub(crate) fn eta_unchecked(&self, sigma: f64) -> f64 {
        match self {
            Family::VonMisesFisher { .. } => -sigma,
            _ => -0.5 / (sigma * sigma),
        }
    }

    /// Inverse of [`eta`](Self::eta).
    pub fn sigma_of_eta(&self, eta: f64) -> f64 {
        match self {
            Family::VonMisesFisher { .. } => -eta,
            _ => (-2.0 * eta).sqrt().recip(),
        }
    }

    /// Closed admissible η interval, the image of [SIGMA_MIN, SIGMA_MAX].
    pub fn eta_bounds(&self) -> (f64, f64) {
        let a = self.eta_unchecked(SIGMA_MIN);
        let b = self.eta_unchecked(SIGMA_MAX);
        (a.min(b), a.max(b))
    }

    fn check_eta(&self, eta: f64) -> Result<()> {
        if !(eta < 0.0) || !eta.is_finite() {
            return Err(Error::Domain(format!("natural parameter η = {eta} must be < 0")));
        }
        if let Family::SpdGaussian { dim } = self {
            if *dim != 2 {
                return Err(Error::Unsupported(format!(
                    "SPD normalizer is available for 2×2 matrices only (got {dim}×{dim})"
                )));
            }
        }
        Ok(())
    }

    /// Log-partition ψ(η) = log ∫ exp[η D(y, ȳ)] dvol(y).
    pub fn log_partition(&self, eta: f64) -> Result<f64> {
        self.check_eta(eta)?;
        Ok(match *self {
            Family::VonMisesFisher { dim } => {
                let nu = dim as f64 / 2.0;
                let kappa = -eta;
                nu * (2.0 * PI).ln() + (1.0 - nu) * kappa.ln() + ln_bessel_i(nu - 1.0, kappa)
            }
            Family::DiskGaussian => {
                let s = self.sigma_of_eta(eta);
                disk_log_normalizer(s)
            }
            Family::SpdGaussian { .. } => {
                let s = self.sigma_of_eta(eta);
                spd2_log_normalizer(s)
            }
        })
    }

    /// ψ′(η), the expected statistic under scale σ(η).
    pub fn psi_prime(&self, eta: f64) -> Result<f64> {
        self.check_eta(eta)?;
        Ok(match *self {
            Family::VonMisesFisher { dim } => {
                let nu = dim as f64 / 2.0;
                -bessel_i_ratio(nu, -eta)
            }
            Family::DiskGaussian => {
                // dσ/dη = σ³
                let s = self.sigma_of_eta(eta);
                let s2 = s * s;
                let x = s / std::f64::consts::SQRT_2;
                let tail = (2.0 / PI).sqrt() * (-0.5 * s2).exp() / erf(x);
                s2 + s2 * s2 + s2 * s * tail
            }
            Family::SpdGaussian { .. } => {
                let s = self.sigma_of_eta(eta);
                let s2 = s * s;
                let tail = (-0.25 * s2).exp() / (PI.sqrt() * erf(0.5 * s));
                2.0 * s2 + 0.5 * s2 * s2 + s2 * s * tail
            }
        })
    }

    /// log f(y | ȳ, σ).
    pub fn log_density(&self, y: &ManifoldPoint, ybar: &ManifoldPoint, sigma: f64) -> Result<f64> {
        let eta = self.eta(sigma)?;
        let d = self.statistic(y, ybar)?;
        Ok(eta * d - self.log_partition(eta)?)
    }

    /// Natural parameter and log-partition for a scale, for repeated density
    /// evaluation.
    pub fn density_constants(&self, sigma: f64) -> Result<(f64, f64)> {
        let eta = self.eta(sigma)?;
        Ok((eta, self.log_partition(eta)?))
    }
}

pub fn check_sigma(sigma: f64) -> Result<()> {
    if !(SIGMA_MIN..=SIGMA_MAX).contains(&sigma) {
        return Err(Error::Domain(format!(
            "scale σ = {sigma} outside the admissible interval [{SIGMA_MIN}, {SIGMA_MAX}]"
        )));
    }
    Ok(())
}

/// log Z(σ) for the disk: Z(σ) = ½ (2π)^{3/2} σ e^{σ²/2} erf(σ/√2), the
/// integral of exp(−d²/2σ²) against the area element sinh(d) dd dθ.
pub fn disk_log_normalizer(sigma: f64) -> f64 {
    1.5 * (2.0 * PI).ln() - std::f64::consts::LN_2
        + sigma.ln()
        + 0.5 * sigma * sigma
        + erf(sigma / std::f64::consts::SQRT_2).ln()
}

/// log Z(σ) for 2×2 SPD matrices: Z(σ) = 2√2 π² σ² e^{σ²/4} erf(σ/2).
pub fn spd2_log_normalizer(sigma: f64) -> f64 {
    (2.0 * std::f64::consts::SQRT_2 * PI * PI).ln()
        + 2.0 * sigma.ln()
        + 0.25 * sigma * sigma
        + erf(0.5 * sigma).ln()
}
