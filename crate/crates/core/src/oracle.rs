//! Self-checks against independent computations: path and configuration
//! enumeration, quadrature, and random perturbation of M-step estimates.

use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{disk, disk_log_normalizer, Family, ManifoldPoint};
use crate::hmm::{
    bruteforce_posteriors, fit_emission, m_step, posteriors, q_value, Emission, HmmParams,
    Posteriors,
};
use crate::mrf::{
    conditional_from_joint, conditional_local, configuration_probabilities, field_em_fit,
    field_m_step, field_posteriors_exact, FieldEmConfig, FieldParams, FieldPosteriors,
    GibbsFitConfig, GridGraph,
};
use crate::numerics::{quadrature_normalizer, FrechetConfig, RootSolveConfig};
use crate::sampling::{simulate_field, simulate_hmm, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    FbBruteforce,
    Normalizers,
    MstepOptimality,
    MrfExact,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::FbBruteforce,
        Suite::Normalizers,
        Suite::MstepOptimality,
        Suite::MrfExact,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::FbBruteforce => "fb-bruteforce",
            Suite::Normalizers => "normalizers",
            Suite::MstepOptimality => "mstep-optimality",
            Suite::MrfExact => "mrf-exact",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown oracle suite '{s}'")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, max_deviation: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            max_deviation,
            tolerance,
            passed: max_deviation <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
}

pub fn run_suite(suite: Suite, seed: u64) -> Result<OracleReport> {
    let checks = match suite {
        Suite::FbBruteforce => fb_bruteforce(seed, 100)?,
        Suite::Normalizers => normalizers()?,
        Suite::MstepOptimality => mstep_optimality(seed, 100)?,
        Suite::MrfExact => mrf_exact(seed)?,
    };
    Ok(OracleReport {
        suite: suite.name().into(),
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

/// A point drawn uniformly by radius in the disk of radius `max_r`.
pub fn random_disk_point<R: Rng + ?Sized>(rng: &mut R, max_r: f64) -> ManifoldPoint {
    let r = max_r * rng.gen::<f64>();
    let th = rng.gen::<f64>() * std::f64::consts::TAU;
    ManifoldPoint::Disk(Complex64::from_polar(r, th))
}

/// A probability vector with entries bounded away from zero.
pub fn random_distribution<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| 0.05 + rng.gen::<f64>()).collect();
    let s: f64 = w.iter().sum();
    let mut p: Vec<f64> = w.iter().map(|x| x / s).collect();
    // make the sum exactly representable as 1 within the validation tolerance
    let rest: f64 = p[1..].iter().sum();
    p[0] = 1.0 - rest;
    p
}

/// Random disk-Gaussian chain with locations within radius 0.8 and σ in
/// [0.2, 1].
pub fn random_disk_hmm<R: Rng + ?Sized>(rng: &mut R, n: usize) -> HmmParams {
    let p = (0..n).map(|_| random_distribution(rng, n)).collect();
    let pi1 = random_distribution(rng, n);
    let emissions = (0..n)
        .map(|_| Emission {
            ybar: random_disk_point(rng, 0.8),
            sigma: 0.2 + 0.8 * rng.gen::<f64>(),
        })
        .collect();
    HmmParams::new(Family::DiskGaussian, p, pi1, emissions).expect("valid random model")
}

fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

/// Worst deviations between forward-backward and path enumeration over
/// random disk instances with 2–3 states and 3–7 observations.
pub fn fb_bruteforce(seed: u64, instances: usize) -> Result<Vec<Check>> {
    let mut rng = SimConfig::new(seed).rng();
    let (mut dl, mut dw, mut dn) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..instances {
        let n = rng.gen_range(2..=3);
        let t = rng.gen_range(3..=7);
        let params = random_disk_hmm(&mut rng, n);
        let obs = simulate_hmm(&params, t, SimConfig::new(seed).with_stream(i as u64 + 1))?.obs;
        let fb = posteriors(&params, &obs)?;
        let bf = bruteforce_posteriors(&params, &obs)?;
        dl = dl.max((fb.loglik - bf.loglik).abs());
        dw = dw.max(max_abs_diff(&fb.omega, &bf.omega));
        dn = dn.max(max_abs_diff(&fb.nu, &bf.nu));
    }
    Ok(vec![
        Check::new("loglik", dl, 1e-10),
        Check::new("state posteriors", dw, 1e-10),
        Check::new("pair posteriors", dn, 1e-10),
    ])
}

/// Closed-form normalizers against quadrature and ψ′ against finite
/// differences of ψ.
pub fn normalizers() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let mut dev: f64 = 0.0;
    let mut ratio_dev: f64 = 0.0;
    for sigma in [0.2, 0.5, 1.0] {
        let z = disk_log_normalizer(sigma).exp();
        let q = quadrature_normalizer(&Family::DiskGaussian, sigma, 512)?;
        dev = dev.max((z - q).abs());
        // (2π)^{3/2} σ e^{σ²/2} erf(σ/√2), the integral against the doubled
        // area element, is exactly twice the volume integral
        let doubled = (2.0 * std::f64::consts::PI).powf(1.5)
            * sigma
            * (0.5 * sigma * sigma).exp()
            * crate::special::erf(sigma / std::f64::consts::SQRT_2);
        ratio_dev = ratio_dev.max((doubled / q - 2.0).abs());
    }
    checks.push(Check::new("disk Z vs quadrature", dev, 1e-4));
    checks.push(Check::new("doubled disk Z / quadrature − 2", ratio_dev, 1e-4));

    let vmf = Family::VonMisesFisher { dim: 3 };
    let mut dev: f64 = 0.0;
    for k in [0.1f64, 0.5, 2.0, 10.0, 50.0] {
        let exact = (4.0 * std::f64::consts::PI * k.sinh() / k).ln();
        dev = dev.max((vmf.log_partition(-k)? - exact).abs());
    }
    checks.push(Check::new("sphere d=3 ψ vs log(4π sinh κ / κ)", dev, 1e-6));

    let mut dev: f64 = 0.0;
    for sigma in [0.3, 0.7, 1.2] {
        let z = quadrature_normalizer(&vmf, sigma, 512)?;
        dev = dev.max((z.ln() - vmf.log_partition(-sigma)?).abs());
    }
    checks.push(Check::new("sphere d=3 ψ vs quadrature", dev, 1e-6));

    let spd = Family::SpdGaussian { dim: 2 };
    let mut dev: f64 = 0.0;
    for sigma in [0.3, 0.7, 1.2] {
        let z = quadrature_normalizer(&spd, sigma, 512)?;
        dev = dev.max((z / spd.log_partition(spd.eta(sigma)?)?.exp() - 1.0).abs());
    }
    checks.push(Check::new("SPD 2×2 Z vs quadrature (relative)", dev, 1e-4));

    let mut dev: f64 = 0.0;
    for fam in [Family::DiskGaussian, vmf, Family::VonMisesFisher { dim: 5 }, spd] {
        for sigma in [0.3, 0.7, 1.2, 2.5] {
            let eta = fam.eta(sigma)?;
            let h = 1e-5 * eta.abs();
            let fd = (fam.log_partition(eta + h)? - fam.log_partition(eta - h)?) / (2.0 * h);
            let d = fam.psi_prime(eta)?;
            dev = dev.max((fd - d).abs() / d.abs().max(1.0));
        }
    }
    checks.push(Check::new("ψ′ vs central difference", dev, 1e-6));
    Ok(checks)
}

/// Random posterior weights for `t` observations and `n` states.
pub fn random_posteriors<R: Rng + ?Sized>(rng: &mut R, n: usize, t: usize) -> Posteriors {
    let omega = (0..t).map(|_| random_distribution(rng, n)).collect();
    let nu = (0..n)
        .map(|_| (0..n).map(|_| rng.gen::<f64>() * (t as f64) / (n * n) as f64).collect())
        .collect();
    Posteriors { omega, nu, loglik: f64::NAN }
}

fn perturb_row<R: Rng + ?Sized>(rng: &mut R, row: &[f64], eps: f64) -> Vec<f64> {
    let r = random_distribution(rng, row.len());
    row.iter().zip(&r).map(|(a, b)| (1.0 - eps) * a + eps * b).collect()
}

/// Worst improvement of Q achieved by random feasible perturbations of each
/// parameter block around the M-step estimate (non-positive means optimal).
pub fn mstep_optimality(seed: u64, instances: usize) -> Result<Vec<Check>> {
    let mut rng = SimConfig::new(seed).with_stream(1 << 32).rng();
    let frechet = FrechetConfig::default();
    let root = RootSolveConfig::default();
    let (mut gp, mut gy, mut gs) = (f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut vmf_dev: f64 = 0.0;
    let mut grad: f64 = 0.0;
    for i in 0..instances {
        let n = rng.gen_range(2..=3);
        let t = rng.gen_range(20..=40);
        let vmf = i % 2 == 1;
        let truth = random_disk_hmm(&mut rng, n);
        let (prev, obs) = if vmf {
            let family = Family::VonMisesFisher { dim: 3 };
            let emissions: Vec<Emission> = (0..n)
                .map(|_| Emission {
                    ybar: random_sphere_point(&mut rng, 3),
                    sigma: 1.0 + 9.0 * rng.gen::<f64>(),
                })
                .collect();
            let prev = HmmParams::new(family, truth.p.clone(), truth.pi1.clone(), emissions)?;
            let obs = simulate_hmm(&prev, t, SimConfig::new(seed).with_stream(i as u64 + 1))?.obs;
            (prev, obs)
        } else {
            let obs = simulate_hmm(&truth, t, SimConfig::new(seed).with_stream(i as u64 + 1))?.obs;
            (truth, obs)
        };
        let post = random_posteriors(&mut rng, n, t);
        let est = m_step(&obs, &post, &prev, &frechet, &root)?.params;
        let q0 = q_value(&est, &obs, &post)?;
        let slack = 1e-12 * q0.abs().max(1.0);
        for _ in 0..50 {
            let eps = 10f64.powf(-3.0 * rng.gen::<f64>());
            let mut p = est.clone();
            let a = rng.gen_range(0..n);
            p.p[a] = perturb_row(&mut rng, &est.p[a], eps);
            gp = gp.max(q_value(&p, &obs, &post)? - q0 - slack);

            let mut y = est.clone();
            y.emissions[a].ybar = perturb_point(&mut rng, &est.emissions[a].ybar, eps);
            gy = gy.max(q_value(&y, &obs, &post)? - q0 - slack);

            let mut s = est.clone();
            let f = (eps * (2.0 * rng.gen::<f64>() - 1.0)).exp();
            s.emissions[a].sigma = (est.emissions[a].sigma * f)
                .clamp(crate::geometry::SIGMA_MIN, crate::geometry::SIGMA_MAX);
            gs = gs.max(q_value(&s, &obs, &post)? - q0 - slack);
        }
        for a in 0..n {
            let w: Vec<f64> = post.omega.iter().map(|r| r[a]).collect();
            if vmf {
                let mut r = nalgebra::DVector::zeros(3);
                for (yk, &wk) in obs.iter().zip(&w) {
                    r += yk.as_sphere().unwrap() * wk;
                }
                let closed = &r / r.norm();
                let got = est.emissions[a].ybar.as_sphere().unwrap();
                vmf_dev = vmf_dev.max((got - closed).abs().max());
            } else {
                grad = grad.max(disk_gradient_norm(&obs, &w, &est.emissions[a].ybar));
            }
        }
    }
    Ok(vec![
        Check::new("transition block: best Q gain", gp.max(0.0), 0.0),
        Check::new("location block: best Q gain", gy.max(0.0), 0.0),
        Check::new("scale block: best Q gain", gs.max(0.0), 0.0),
        Check::new("vMF mean vs normalized resultant", vmf_dev, 1e-15),
        Check::new("disk mean Riemannian gradient norm", grad, 1e-8),
    ])
}

/// ‖Σ w_t log_ȳ(y_t)‖ / Σ w_t at a disk point, in the Riemannian norm.
pub fn disk_gradient_norm(obs: &[ManifoldPoint], w: &[f64], ybar: &ManifoldPoint) -> f64 {
    let p = ybar.as_disk().unwrap();
    let mut g = Complex64::new(0.0, 0.0);
    for (y, &wk) in obs.iter().zip(w) {
        g += disk::log_at(p, y.as_disk().unwrap()) * wk;
    }
    g.norm() / w.iter().sum::<f64>()
}

pub fn random_sphere_point<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> ManifoldPoint {
    let v: Vec<f64> = (0..dim).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    ManifoldPoint::sphere_normalized(nalgebra::DVector::from_vec(v)).unwrap()
}

fn perturb_point<R: Rng + ?Sized>(rng: &mut R, y: &ManifoldPoint, eps: f64) -> ManifoldPoint {
    match y {
        ManifoldPoint::Disk(p) => {
            let v = Complex64::from_polar(eps, rng.gen::<f64>() * std::f64::consts::TAU);
            crate::geometry::disk_clamped(disk::exp_at(*p, v))
        }
        ManifoldPoint::Sphere(v) => {
            let d: Vec<f64> = (0..v.len()).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
            let w = v + nalgebra::DVector::from_vec(d) * eps;
            ManifoldPoint::sphere_normalized(w).unwrap()
        }
        ManifoldPoint::Spd(m) => {
            let g = nalgebra::DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
                if i == j { 1.0 } else { 0.0 }
            }) + nalgebra::DMatrix::from_fn(m.nrows(), m.ncols(), |_, _| eps * (rng.gen::<f64>() - 0.5));
            ManifoldPoint::spd(&g * m * g.transpose()).unwrap_or_else(|_| y.clone())
        }
    }
}

/// Random two-state disk field with moderate potentials.
pub fn random_disk_field<R: Rng + ?Sized>(rng: &mut R, n: usize) -> FieldParams {
    let v = (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
    let mut j = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a..n {
            let x = rng.gen::<f64>() * 2.0 - 1.0;
            j[a][b] = x;
            j[b][a] = x;
        }
    }
    let emissions = (0..n)
        .map(|_| Emission {
            ybar: random_disk_point(rng, 0.8),
            sigma: 0.3 + 0.5 * rng.gen::<f64>(),
        })
        .collect();
    FieldParams::new(Family::DiskGaussian, v, j, emissions).expect("valid random field")
}

/// Markov property: conditionals from the joint law equal those from the
/// neighborhood potentials, for every configuration and site.
pub fn markov_property_deviation(field: &FieldParams, grid: &GridGraph) -> Result<f64> {
    let probs = configuration_probabilities(field, grid)?;
    let n = field.n_states();
    let mut dev: f64 = 0.0;
    crate::hmm::for_each_config(n, grid.sites(), |q| {
        for z in 0..grid.sites() {
            let a = conditional_from_joint(field, &probs, q, z);
            let b = conditional_local(field, grid, q, z);
            for (x, y) in a.iter().zip(&b) {
                dev = dev.max((x - y).abs());
            }
        }
    });
    Ok(dev)
}

/// Gap between data moments (ω, ν) and model moments after a potentials fit.
pub fn moment_matching_deviation(field: &FieldParams, grid: &GridGraph, post: &FieldPosteriors) -> Result<f64> {
    let n = field.n_states();
    let probs = configuration_probabilities(field, grid)?;
    let edges = grid.edges();
    let mut counts = vec![0.0; n];
    let mut pairs = vec![vec![0.0; n]; n];
    let mut k = 0;
    crate::hmm::for_each_config(n, grid.sites(), |q| {
        let p = probs[k];
        k += 1;
        for &s in q {
            counts[s] += p;
        }
        for &(z, w) in &edges {
            pairs[q[z]][q[w]] += p;
            pairs[q[w]][q[z]] += p;
        }
    });
    let mut dev: f64 = 0.0;
    for a in 0..n {
        dev = dev.max((counts[a] - post.omega[a]).abs());
        for b in 0..n {
            dev = dev.max((pairs[a][b] - post.nu[a][b]).abs());
        }
    }
    Ok(dev)
}

/// Plain EM for an i.i.d. mixture with weights π, written independently of
/// the field code; used as the reference for fields with J ≡ 0.
pub fn mixture_em(
    family: &Family,
    obs: &[ManifoldPoint],
    weights0: &[f64],
    emissions0: &[Emission],
    iterations: usize,
) -> Result<(Vec<f64>, Vec<Emission>)> {
    let n = weights0.len();
    let frechet = FrechetConfig::default();
    let root = RootSolveConfig::default();
    let mut pi = weights0.to_vec();
    let mut em = emissions0.to_vec();
    for _ in 0..iterations {
        let mut resp = Vec::with_capacity(obs.len());
        for y in obs {
            let l: Vec<f64> = (0..n)
                .map(|a| Ok(pi[a].ln() + family.log_density(y, &em[a].ybar, em[a].sigma)?))
                .collect::<Result<_>>()?;
            let m = crate::hmm::log_sum_exp(&l);
            resp.push(l.iter().map(|x| (x - m).exp()).collect::<Vec<f64>>());
        }
        for a in 0..n {
            let w: Vec<f64> = resp.iter().map(|r| r[a]).collect();
            pi[a] = w.iter().sum::<f64>() / obs.len() as f64;
            if let Some((e, _)) = fit_emission(family, obs, &w, &em[a], &frechet, &root)? {
                em[a] = e;
            }
        }
    }
    Ok((pi, em))
}

/// Markov property, moment matching, EM monotonicity and the J ≡ 0
/// reduction on 2×2 and 3×3 two-state grids.
pub fn mrf_exact(seed: u64) -> Result<Vec<Check>> {
    let mut rng = SimConfig::new(seed).with_stream(2 << 32).rng();
    let mut markov: f64 = 0.0;
    let mut moments: f64 = 0.0;
    let mut drop: f64 = 0.0;
    let mut reduction: f64 = 0.0;
    for (k, (w, h)) in [(2, 2), (3, 3), (2, 3)].into_iter().enumerate() {
        let grid = GridGraph::new(w, h)?;
        let truth = random_disk_field(&mut rng, 2);
        markov = markov.max(markov_property_deviation(&truth, &grid)?);
        if (w, h) == (2, 3) {
            continue;
        }
        let data = simulate_field(&truth, &grid, SimConfig::new(seed).with_stream(k as u64 + 10))?;
        let post = field_posteriors_exact(&truth, &grid, &data.obs)?;
        let fitted = field_m_step(
            &data.obs,
            &post,
            &grid,
            &truth,
            &GibbsFitConfig::default(),
            &FrechetConfig::default(),
            &RootSolveConfig::default(),
        )?;
        moments = moments.max(moment_matching_deviation(&fitted.params, &grid, &post)?);

        let init = uniform_field_init(&truth, &data.obs);
        let cfg = FieldEmConfig { max_iter: 20, tol: 0.0, ..Default::default() };
        let res = field_em_fit(&init, &grid, &data.obs, &cfg)?;
        for pair in res.loglik_trace.windows(2) {
            drop = drop.max(pair[0] - pair[1]);
        }

        let frozen = FieldEmConfig {
            max_iter: 20,
            tol: 0.0,
            gibbs: GibbsFitConfig { freeze_j: true, ..Default::default() },
            ..Default::default()
        };
        let res = field_em_fit(&init, &grid, &data.obs, &frozen)?;
        let (pi, em) = mixture_em(&init.family, &data.obs, &[0.5, 0.5], &init.emissions, 20)?;
        let v = &res.params.v;
        let lse = crate::hmm::log_sum_exp(v);
        for a in 0..2 {
            reduction = reduction.max(((v[a] - lse).exp() - pi[a]).abs());
            let e = &res.params.emissions[a];
            reduction = reduction.max(crate::geometry::riemannian_distance(&e.ybar, &em[a].ybar)?);
            reduction = reduction.max((e.sigma - em[a].sigma).abs());
        }
    }
    Ok(vec![
        Check::new("Markov property", markov, 1e-12),
        Check::new("moment matching", moments, 1e-6),
        Check::new("field EM loglik decrease", drop.max(0.0), 1e-9),
        Check::new("J ≡ 0 vs mixture EM", reduction, 1e-8),
    ])
}

/// Zero potentials with emissions spread over two observations far apart.
pub fn uniform_field_init(template: &FieldParams, obs: &[ManifoldPoint]) -> FieldParams {
    let n = template.n_states();
    let mut far = (0, 0, -1.0);
    for i in 0..obs.len() {
        for j in i + 1..obs.len() {
            let d = crate::geometry::riemannian_distance(&obs[i], &obs[j]).unwrap_or(0.0);
            if d > far.2 {
                far = (i, j, d);
            }
        }
    }
    let picks = [far.0, far.1];
    let emissions = (0..n)
        .map(|a| Emission {
            ybar: obs[picks[a % 2]].clone(),
            sigma: 0.5,
        })
        .collect();
    FieldParams {
        family: template.family,
        v: vec![0.0; n],
        j: vec![vec![0.0; n]; n],
        emissions,
    }
}
