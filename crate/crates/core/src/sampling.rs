//! Seeded simulation of hidden chains, manifold-valued emissions and small
//! Gibbs fields.
//!
//! Emissions are drawn at the base point, where each family is invariant
//! under the isotropy group, and then moved to ȳ by `isometry_to(ȳ)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::geometry::{check_sigma, disk_clamped, isometry_to, Family, Isometry, ManifoldPoint};
use crate::hmm::HmmParams;
use crate::mrf::{configuration_probabilities, FieldParams, GridGraph};

/// Nodes of the inverse-CDF grid for radial laws.
pub const RADIAL_NODES: usize = 1 << 14;

/// A seed plus a stream index. Streams of one seed are independent
/// ChaCha20 keystreams, so parallel runs can share a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    pub stream: u64,
}

impl SimConfig {
    pub fn new(seed: u64) -> Self {
        SimConfig { seed, stream: 0 }
    }

    pub fn with_stream(self, stream: u64) -> Self {
        SimConfig { stream, ..self }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Inverse CDF of the hyperbolic radial law with density proportional to
/// exp(−d²/2σ²) sinh d on [0, σ² + 12σ].
#[derive(Debug, Clone)]
pub struct RadialTable {
    d: Vec<f64>,
    cdf: Vec<f64>,
}

impl RadialTable {
    pub fn new(sigma: f64) -> Self {
        let n = RADIAL_NODES;
        // the mode sits near σ² for large σ
        let d_max = sigma * sigma + 12.0 * sigma;
        let h = d_max / (n - 1) as f64;
        let d: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        let log_dens: Vec<f64> = d
            .iter()
            .map(|&x| {
                if x == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    -x * x / (2.0 * sigma * sigma) + x + (-(-2.0 * x).exp_m1()).ln()
                }
            })
            .collect();
        let m = log_dens.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dens: Vec<f64> = log_dens.iter().map(|l| (l - m).exp()).collect();
        let mut cdf = Vec::with_capacity(n);
        cdf.push(0.0);
        for i in 1..n {
            let prev = cdf[i - 1];
            cdf.push(prev + 0.5 * h * (dens[i - 1] + dens[i]));
        }
        let total = cdf[n - 1];
        cdf.iter_mut().for_each(|c| *c /= total);
        RadialTable { d, cdf }
    }

    /// Radius with CDF value `u` ∈ [0, 1].
    pub fn quantile(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let frac = if c1 > c0 { ((u - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.0 };
        self.d[i - 1] + frac * (self.d[i] - self.d[i - 1])
    }
}

/// Exact CDF of the radial law, ∫₀^d exp(−x²/2σ²) sinh x dx normalized.
pub fn disk_radial_cdf(sigma: f64, d: f64) -> f64 {
    use crate::special::erf;
    let k = sigma * std::f64::consts::SQRT_2;
    let a = sigma / std::f64::consts::SQRT_2;
    let s2 = sigma * sigma;
    (erf((d - s2) / k) + 2.0 * erf(a) - erf((d + s2) / k)) / (2.0 * erf(a))
}

#[derive(Debug, Clone)]
enum Base {
    Disk(RadialTable),
    Vmf { dim: usize, kappa: f64, b: f64, x0: f64, c: f64, beta: Beta<f64> },
    Spd2 { sigma: f64, table: RadialTable },
}

/// Draws from f(· | ȳ, σ) for one (ȳ, σ), reusing precomputed tables.
#[derive(Debug, Clone)]
pub struct EmissionSampler {
    base: Base,
    to_ybar: Isometry,
}

impl EmissionSampler {
    pub fn new(family: &Family, ybar: &ManifoldPoint, sigma: f64) -> Result<Self> {
        family.check_point(ybar)?;
        check_sigma(sigma)?;
        let base = match *family {
            Family::DiskGaussian => Base::Disk(RadialTable::new(sigma)),
            Family::VonMisesFisher { dim } => {
                let kappa = sigma;
                let m = (dim - 1) as f64;
                let b = m / (2.0 * kappa + (4.0 * kappa * kappa + m * m).sqrt());
                let x0 = (1.0 - b) / (1.0 + b);
                let c = kappa * x0 + m * (1.0 - x0 * x0).ln();
                let beta = Beta::new(m / 2.0, m / 2.0)
                    .map_err(|e| Error::InvalidParams(format!("beta law: {e}")))?;
                Base::Vmf { dim, kappa, b, x0, c, beta }
            }
            Family::SpdGaussian { dim } => {
                if dim != 2 {
                    return Err(Error::Unsupported(format!(
                        "SPD sampling is available for 2×2 matrices only (got {dim}×{dim})"
                    )));
                }
                Base::Spd2 {
                    sigma,
                    table: RadialTable::new(sigma / std::f64::consts::SQRT_2),
                }
            }
        };
        Ok(EmissionSampler {
            base,
            to_ybar: isometry_to(ybar),
        })
    }

    /// A draw centered at the base point.
    pub fn sample_at_base<R: Rng + ?Sized>(&self, rng: &mut R) -> ManifoldPoint {
        match &self.base {
            Base::Disk(table) => ManifoldPoint::Disk(disk_radial_point(table, rng)),
            Base::Vmf { dim, kappa, b, x0, c, beta } => {
                let m = (*dim - 1) as f64;
                let w = loop {
                    let z = beta.sample(rng);
                    let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
                    let u: f64 = rng.gen();
                    if kappa * w + m * (1.0 - x0 * w).ln() - c >= u.ln() {
                        break w;
                    }
                };
                let mut v = DVector::<f64>::zeros(*dim);
                let tangent = loop {
                    let g: Vec<f64> = (1..*dim).map(|_| rng.sample(StandardNormal)).collect();
                    let n = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if n > 1e-300 {
                        break g.into_iter().map(|x| x / n).collect::<Vec<_>>();
                    }
                };
                let r = (1.0 - w * w).max(0.0).sqrt();
                v[0] = w;
                for (i, t) in tangent.iter().enumerate() {
                    v[i + 1] = r * t;
                }
                let norm = v.norm();
                ManifoldPoint::Sphere(v / norm)
            }
            Base::Spd2 { sigma, table } => {
                let n: f64 = rng.sample(StandardNormal);
                let s = n * sigma / std::f64::consts::SQRT_2;
                let u = unit_det_from_disk(disk_radial_point(table, rng));
                ManifoldPoint::Spd(u * s.exp())
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ManifoldPoint {
        let y = self.sample_at_base(rng);
        self.to_ybar.apply(&y).expect("sampler isometry matches its manifold")
    }
}

fn disk_radial_point<R: Rng + ?Sized>(table: &RadialTable, rng: &mut R) -> Complex64 {
    let d = table.quantile(rng.gen());
    let theta = rng.gen::<f64>() * std::f64::consts::TAU;
    match disk_clamped(Complex64::from_polar((0.5 * d).tanh(), theta)) {
        ManifoldPoint::Disk(z) => z,
        _ => unreachable!(),
    }
}

/// The isometry from the disk onto unit-determinant 2×2 SPD matrices (up to
/// the factor √2 in distance): w ↦ τ = i(1+w)/(1−w) ↦ (1/Im τ)[[|τ|², Re τ], [Re τ, 1]].
pub fn unit_det_from_disk(w: Complex64) -> DMatrix<f64> {
    let one = Complex64::new(1.0, 0.0);
    let tau = Complex64::new(0.0, 1.0) * (one + w) / (one - w);
    let (x, y) = (tau.re, tau.im);
    DMatrix::from_row_slice(2, 2, &[(x * x + y * y) / y, x / y, x / y, 1.0 / y])
}

/// One draw from f(· | ȳ, σ).
pub fn sample_emission<R: Rng + ?Sized>(
    family: &Family,
    ybar: &ManifoldPoint,
    sigma: f64,
    rng: &mut R,
) -> Result<ManifoldPoint> {
    Ok(EmissionSampler::new(family, ybar, sigma)?.sample(rng))
}

fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the last partial sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// A hidden path of length `t`: q₁ ~ π₁, then transitions by P.
pub fn sample_chain<R: Rng + ?Sized>(params: &HmmParams, t: usize, rng: &mut R) -> Vec<usize> {
    let mut q = Vec::with_capacity(t);
    if t == 0 {
        return q;
    }
    q.push(categorical(&params.pi1, rng));
    for i in 1..t {
        let prev = q[i - 1];
        q.push(categorical(&params.p[prev], rng));
    }
    q
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub states: Vec<usize>,
    pub obs: Vec<ManifoldPoint>,
}

/// Hidden path and conditionally independent emissions.
pub fn simulate_hmm(params: &HmmParams, t: usize, cfg: SimConfig) -> Result<Simulation> {
    let mut rng = cfg.rng();
    let states = sample_chain(params, t, &mut rng);
    let samplers = params
        .emissions
        .iter()
        .map(|e| EmissionSampler::new(&params.family, &e.ybar, e.sigma))
        .collect::<Result<Vec<_>>>()?;
    let obs = states.iter().map(|&s| samplers[s].sample(&mut rng)).collect();
    Ok(Simulation { states, obs })
}

/// Exact draw of a field configuration by inverse CDF over all
/// configurations (site 0 varies slowest).
pub fn sample_field_exact<R: Rng + ?Sized>(
    field: &FieldParams,
    grid: &GridGraph,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let probs = configuration_probabilities(field, grid)?;
    Ok(decode_configuration(field.n_states(), grid.sites(), categorical(&probs, rng)))
}

/// Configurations and emissions for a field, drawn with one generator.
pub fn simulate_field(field: &FieldParams, grid: &GridGraph, cfg: SimConfig) -> Result<Simulation> {
    let mut rng = cfg.rng();
    let states = sample_field_exact(field, grid, &mut rng)?;
    let samplers = field
        .emissions
        .iter()
        .map(|e| EmissionSampler::new(&field.family, &e.ybar, e.sigma))
        .collect::<Result<Vec<_>>>()?;
    let obs = states.iter().map(|&s| samplers[s].sample(&mut rng)).collect();
    Ok(Simulation { states, obs })
}

fn decode_configuration(n_states: usize, sites: usize, mut index: usize) -> Vec<usize> {
    let mut q = vec![0; sites];
    for z in (0..sites).rev() {
        q[z] = index % n_states;
        index /= n_states;
    }
    q
}
