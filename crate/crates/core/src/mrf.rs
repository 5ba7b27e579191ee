//! Hidden Markov fields on small square grids, solved exactly by enumerating
//! every configuration.
//!
//! The Gibbs energy of a configuration q is Σ_z V(q_z) + ½ Σ_{w∼z} J(q_z, q_w),
//! where the inner sum runs over ordered adjacent pairs, so each edge
//! contributes J once.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Family, ManifoldPoint};
use crate::hmm::{
    check_emissions, fit_emission, for_each_config, guard, log_emissions_for, log_sum_exp,
    Emission, MStepFlag,
};
use crate::numerics::{FrechetConfig, RootSolveConfig};

/// A width × height grid with 4-neighborhoods and no wraparound. Site
/// (x, y) has index y·width + x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GridGraph {
    pub width: usize,
    pub height: usize,
}

impl GridGraph {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParams("grid needs at least one site".into()));
        }
        Ok(GridGraph { width, height })
    }

    pub fn sites(&self) -> usize {
        self.width * self.height
    }

    pub fn coords(&self, z: usize) -> (usize, usize) {
        (z % self.width, z / self.width)
    }

    pub fn neighbors(&self, z: usize) -> Vec<usize> {
        let (x, y) = self.coords(z);
        let mut out = Vec::with_capacity(4);
        if x > 0 {
            out.push(z - 1);
        }
        if x + 1 < self.width {
            out.push(z + 1);
        }
        if y > 0 {
            out.push(z - self.width);
        }
        if y + 1 < self.height {
            out.push(z + self.width);
        }
        out
    }

    /// Unordered edges (z, w) with z < w.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.sites())
            .flat_map(|z| {
                self.neighbors(z)
                    .into_iter()
                    .filter(move |&w| w > z)
                    .map(move |w| (z, w))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams {
    pub family: Family,
    pub v: Vec<f64>,
    /// Symmetric pair potential.
    pub j: Vec<Vec<f64>>,
    pub emissions: Vec<Emission>,
}

impl FieldParams {
    pub fn new(family: Family, v: Vec<f64>, j: Vec<Vec<f64>>, emissions: Vec<Emission>) -> Result<Self> {
        let n = emissions.len();
        if n == 0 {
            return Err(Error::InvalidParams("at least one state is required".into()));
        }
        if v.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: v.len() });
        }
        if j.len() != n || j.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidParams(format!("J must be {n}×{n}")));
        }
        for a in 0..n {
            for b in 0..n {
                if !j[a][b].is_finite() || j[a][b] != j[b][a] {
                    return Err(Error::InvalidParams("J must be finite and symmetric".into()));
                }
            }
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams("V must be finite".into()));
        }
        check_emissions(&family, &emissions)?;
        Ok(FieldParams { family, v, j, emissions })
    }

    pub fn n_states(&self) -> usize {
        self.v.len()
    }
}

/// Gibbs energy of a configuration.
pub fn energy(field: &FieldParams, grid: &GridGraph, q: &[usize]) -> f64 {
    energy_with(field, &grid.edges(), q)
}

fn check_guard(field: &FieldParams, grid: &GridGraph) -> Result<()> {
    guard(field.n_states(), grid.sites())
}

/// Ψ = log Σ_q exp(energy(q)).
pub fn log_partition_exact(field: &FieldParams, grid: &GridGraph) -> Result<f64> {
    check_guard(field, grid)?;
    let mut e = Vec::new();
    let edges = grid.edges();
    for_each_config(field.n_states(), grid.sites(), |q| e.push(energy_with(field, &edges, q)));
    Ok(log_sum_exp(&e))
}

fn energy_with(field: &FieldParams, edges: &[(usize, usize)], q: &[usize]) -> f64 {
    let mut e: f64 = q.iter().map(|&s| field.v[s]).sum();
    for &(z, w) in edges {
        e += field.j[q[z]][q[w]];
    }
    e
}

/// Probability of every configuration, in lexicographic order.
pub fn configuration_probabilities(field: &FieldParams, grid: &GridGraph) -> Result<Vec<f64>> {
    check_guard(field, grid)?;
    let edges = grid.edges();
    let mut e = Vec::new();
    for_each_config(field.n_states(), grid.sites(), |q| e.push(energy_with(field, &edges, q)));
    let psi = log_sum_exp(&e);
    Ok(e.into_iter().map(|x| (x - psi).exp()).collect())
}

/// Lexicographic index of a configuration (site 0 most significant).
pub fn configuration_index(n_states: usize, q: &[usize]) -> usize {
    q.iter().fold(0, |acc, &s| acc * n_states + s)
}

/// P(q_z = · | q_w, w ≠ z) from the normalized joint law.
pub fn conditional_from_joint(
    field: &FieldParams,
    probs: &[f64],
    q: &[usize],
    z: usize,
) -> Vec<f64> {
    let n = field.n_states();
    let mut qq = q.to_vec();
    let mut w: Vec<f64> = (0..n)
        .map(|a| {
            qq[z] = a;
            probs[configuration_index(n, &qq)]
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

/// P(q_z = · | q_w, w ∼ z) from the local potentials only.
pub fn conditional_local(field: &FieldParams, grid: &GridGraph, q: &[usize], z: usize) -> Vec<f64> {
    let n = field.n_states();
    let nb = grid.neighbors(z);
    let e: Vec<f64> = (0..n)
        .map(|a| field.v[a] + nb.iter().map(|&w| field.j[a][q[w]]).sum::<f64>())
        .collect();
    let m = log_sum_exp(&e);
    e.into_iter().map(|x| (x - m).exp()).collect()
}

/// Exact E-step quantities for a field.
#[derive(Debug, Clone)]
pub struct FieldPosteriors {
    /// ω_α^z = P(q_z = α | y).
    pub site: Vec<Vec<f64>>,
    /// ω_α = Σ_z ω_α^z.
    pub omega: Vec<f64>,
    /// ν_αβ = Σ over ordered adjacent pairs (z, w) of P(q_z = α, q_w = β | y).
    pub nu: Vec<Vec<f64>>,
    /// Observed-data log-likelihood.
    pub loglik: f64,
}

fn observations_for(grid: &GridGraph, obs: &[ManifoldPoint]) -> Result<()> {
    if obs.len() != grid.sites() {
        return Err(Error::LengthMismatch {
            expected: grid.sites(),
            found: obs.len(),
        });
    }
    Ok(())
}

/// Posterior site marginals and pair sums by enumeration.
pub fn field_posteriors_exact(
    field: &FieldParams,
    grid: &GridGraph,
    obs: &[ManifoldPoint],
) -> Result<FieldPosteriors> {
    check_guard(field, grid)?;
    observations_for(grid, obs)?;
    let n = field.n_states();
    let sites = grid.sites();
    let edges = grid.edges();
    let loge = log_emissions_for(&field.family, &field.emissions, obs)?;
    let mut prior = Vec::new();
    let mut joint = Vec::new();
    for_each_config(n, sites, |q| {
        let e = energy_with(field, &edges, q);
        prior.push(e);
        joint.push(e + q.iter().enumerate().map(|(z, &s)| loge[z][s]).sum::<f64>());
    });
    let psi = log_sum_exp(&prior);
    let lz = log_sum_exp(&joint);
    if !lz.is_finite() {
        return Err(Error::Degenerate {
            t: 0,
            reason: "field evidence vanishes".into(),
        });
    }
    let mut site = vec![vec![0.0; n]; sites];
    let mut nu = vec![vec![0.0; n]; n];
    let mut k = 0;
    for_each_config(n, sites, |q| {
        let p = (joint[k] - lz).exp();
        k += 1;
        for (z, &s) in q.iter().enumerate() {
            site[z][s] += p;
        }
        for &(z, w) in &edges {
            nu[q[z]][q[w]] += p;
            nu[q[w]][q[z]] += p;
        }
    });
    let omega = (0..n).map(|a| site.iter().map(|r| r[a]).sum()).collect();
    Ok(FieldPosteriors {
        site,
        omega,
        nu,
        loglik: lz - psi,
    })
}

/// Observed-data log-likelihood log Σ_q p(q) Π_z f(y_z | q_z).
pub fn field_loglik_exact(field: &FieldParams, grid: &GridGraph, obs: &[ManifoldPoint]) -> Result<f64> {
    Ok(field_posteriors_exact(field, grid, obs)?.loglik)
}

/// Index of a Gibbs sufficient statistic: site counts n_α, then pair
/// statistics c_αβ (α ≤ β) with c_αα = ½ m_αα and c_αβ = m_αβ, m counting
/// ordered adjacent pairs. The energy is ⟨n, V⟩ + Σ_{α≤β} c_αβ J_αβ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    V(usize),
    J(usize, usize),
}

fn all_coordinates(n: usize) -> Vec<Coordinate> {
    let mut c: Vec<Coordinate> = (0..n).map(Coordinate::V).collect();
    for a in 0..n {
        for b in a..n {
            c.push(Coordinate::J(a, b));
        }
    }
    c
}

fn statistics(n: usize, edges: &[(usize, usize)], q: &[usize]) -> Vec<f64> {
    let mut pos = vec![vec![0; n]; n];
    let mut k = n;
    for a in 0..n {
        for b in a..n {
            pos[a][b] = k;
            pos[b][a] = k;
            k += 1;
        }
    }
    let mut s = vec![0.0; k];
    for &a in q {
        s[a] += 1.0;
    }
    for &(z, w) in edges {
        s[pos[q[z]][q[w]]] += 1.0;
    }
    s
}

fn data_statistics(n: usize, post: &FieldPosteriors) -> Vec<f64> {
    let mut s: Vec<f64> = post.omega.clone();
    for a in 0..n {
        for b in a..n {
            s.push(if a == b { 0.5 * post.nu[a][a] } else { post.nu[a][b] });
        }
    }
    s
}

fn coordinate_value(field: &FieldParams, c: Coordinate) -> f64 {
    match c {
        Coordinate::V(a) => field.v[a],
        Coordinate::J(a, b) => field.j[a][b],
    }
}

fn set_coordinate(v: &mut [f64], j: &mut [Vec<f64>], c: Coordinate, x: f64) {
    match c {
        Coordinate::V(a) => v[a] = x,
        Coordinate::J(a, b) => {
            j[a][b] = x;
            j[b][a] = x;
        }
    }
}

/// Mean and covariance of the sufficient statistics under the Gibbs law,
/// together with Ψ.
fn moments(field: &FieldParams, grid: &GridGraph) -> (f64, DVector<f64>, DMatrix<f64>) {
    let n = field.n_states();
    let edges = grid.edges();
    let dim = all_coordinates(n).len();
    let mut stats = Vec::new();
    let mut e = Vec::new();
    for_each_config(n, grid.sites(), |q| {
        let s = statistics(n, &edges, q);
        e.push(energy_with(field, &edges, q));
        stats.push(s);
    });
    let psi = log_sum_exp(&e);
    let mut mean = DVector::zeros(dim);
    let mut second = DMatrix::zeros(dim, dim);
    for (s, &ek) in stats.iter().zip(&e) {
        let p = (ek - psi).exp();
        let sv = DVector::from_column_slice(s);
        mean += &sv * p;
        second += &sv * sv.transpose() * p;
    }
    let cov = second - &mean * mean.transpose();
    (psi, mean, cov)
}

/// Coordinates left free by the gauge: V₁ is always fixed; each further
/// coordinate is kept only if its statistic is not an affine function of
/// those already kept. Candidates are tried in the order V₂.., then J_αβ
/// with α ≥ 2, then J₁β, so on regular graphs the fixed set is V₁ = J₁β = 0
/// and on the 3×3 grid with two states it is V₁ = J₁₂ = 0.
pub fn free_coordinates(n_states: usize, grid: &GridGraph) -> Result<Vec<Coordinate>> {
    guard(n_states, grid.sites())?;
    let uniform = FieldParams {
        family: Family::DiskGaussian,
        v: vec![0.0; n_states],
        j: vec![vec![0.0; n_states]; n_states],
        emissions: Vec::new(),
    };
    let (_, _, cov) = moments(&uniform, grid);
    let all = all_coordinates(n_states);
    let index = |c: Coordinate| all.iter().position(|&x| x == c).unwrap();
    let mut order: Vec<Coordinate> = (1..n_states).map(Coordinate::V).collect();
    for a in 1..n_states {
        for b in a..n_states {
            order.push(Coordinate::J(a, b));
        }
    }
    for b in 0..n_states {
        order.push(Coordinate::J(0, b));
    }
    let mut kept: Vec<Coordinate> = Vec::new();
    for c in order {
        let mut trial = kept.clone();
        trial.push(c);
        let idx: Vec<usize> = trial.iter().map(|&c| index(c)).collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |i, j| cov[(idx[i], idx[j])]);
        let eig = sub.symmetric_eigenvalues();
        let scale = eig.max().max(1e-300);
        if eig.min() > 1e-9 * scale {
            kept = trial;
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, Copy)]
pub struct GibbsFitConfig {
    /// Target norm of the gradient of the concave objective.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Keep J at its current value and fit V only.
    pub freeze_j: bool,
}

impl Default for GibbsFitConfig {
    fn default() -> Self {
        GibbsFitConfig {
            grad_tol: 1e-10,
            max_iter: 200,
            freeze_j: false,
        }
    }
}

/// ⟨ω, V⟩ + ½⟨ν, J⟩ − Ψ(V, J).
pub fn gibbs_objective(field: &FieldParams, grid: &GridGraph, post: &FieldPosteriors) -> Result<f64> {
    let n = field.n_states();
    let psi = log_partition_exact(field, grid)?;
    let mut q: f64 = (0..n).map(|a| post.omega[a] * field.v[a]).sum();
    for a in 0..n {
        for b in 0..n {
            q += 0.5 * post.nu[a][b] * field.j[a][b];
        }
    }
    Ok(q - psi)
}

/// Maximizes the Gibbs part of Q over gauge-fixed (V, J) by damped Newton
/// steps; the Hessian is minus the covariance of the free statistics.
pub fn fit_potentials(
    field: &FieldParams,
    grid: &GridGraph,
    post: &FieldPosteriors,
    cfg: &GibbsFitConfig,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = field.n_states();
    check_guard(field, grid)?;
    let all = all_coordinates(n);
    let index = |c: Coordinate| all.iter().position(|&x| x == c).unwrap();
    let free: Vec<Coordinate> = if cfg.freeze_j {
        (1..n).map(Coordinate::V).collect()
    } else {
        free_coordinates(n, grid)?
    };
    let mut cur = field.clone();
    // move fixed coordinates to the gauge
    if cfg.freeze_j {
        let v0 = cur.v[0];
        cur.v.iter_mut().for_each(|x| *x -= v0);
    } else {
        for c in all.iter().copied().filter(|c| !free.contains(c)) {
            let (v, j) = (&mut cur.v, &mut cur.j);
            set_coordinate(v, j, c, 0.0);
        }
    }
    let target = data_statistics(n, post);
    let idx: Vec<usize> = free.iter().map(|&c| index(c)).collect();
    let objective = |f: &FieldParams| gibbs_objective(f, grid, post);
    let mut obj = objective(&cur)?;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        let (_, mean, cov) = moments(&cur, grid);
        let g = DVector::from_iterator(idx.len(), idx.iter().map(|&i| target[i] - mean[i]));
        grad_norm = g.norm();
        if grad_norm < cfg.grad_tol {
            return Ok((cur.v, cur.j));
        }
        let h = DMatrix::from_fn(idx.len(), idx.len(), |a, b| cov[(idx[a], idx[b])]);
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => g.clone(),
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = cur.clone();
            for (k, &c) in free.iter().enumerate() {
                let x = coordinate_value(&cur, c) + t * step[k];
                let (v, j) = (&mut trial.v, &mut trial.j);
                set_coordinate(v, j, c, x);
            }
            let o = objective(&trial)?;
            if o >= obj - 1e-12 * obj.abs().max(1.0) {
                cur = trial;
                obj = o;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let (_, mean, _) = moments(&cur, grid);
    let g = DVector::from_iterator(idx.len(), idx.iter().map(|&i| target[i] - mean[i]));
    grad_norm = grad_norm.min(g.norm());
    if g.norm() < cfg.grad_tol.max(1e-8) {
        return Ok((cur.v, cur.j));
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iter,
        grad_norm,
    })
}

#[derive(Debug, Clone)]
pub struct FieldMStepOutput {
    pub params: FieldParams,
    pub flags: Vec<MStepFlag>,
}

/// Potentials by exact concave maximization; emissions by the same
/// weighted Fréchet mean and scale equation as the chain, weighted by ω_α^z.
pub fn field_m_step(
    obs: &[ManifoldPoint],
    post: &FieldPosteriors,
    grid: &GridGraph,
    prev: &FieldParams,
    gibbs: &GibbsFitConfig,
    frechet: &FrechetConfig,
    root: &RootSolveConfig,
) -> Result<FieldMStepOutput> {
    observations_for(grid, obs)?;
    let (v, j) = fit_potentials(prev, grid, post, gibbs)?;
    let mut flags = Vec::new();
    let mut emissions = Vec::with_capacity(prev.n_states());
    for a in 0..prev.n_states() {
        let w: Vec<f64> = post.site.iter().map(|r| r[a]).collect();
        match fit_emission(&prev.family, obs, &w, &prev.emissions[a], frechet, root)? {
            Some((e, clamp)) => {
                if let Some(side) = clamp {
                    flags.push(MStepFlag::ScaleClamped { state: a, side });
                }
                emissions.push(e);
            }
            None => {
                flags.push(MStepFlag::EmptyState { state: a });
                emissions.push(prev.emissions[a].clone());
            }
        }
    }
    Ok(FieldMStepOutput {
        params: FieldParams {
            family: prev.family,
            v,
            j,
            emissions,
        },
        flags,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct FieldEmConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub gibbs: GibbsFitConfig,
    pub frechet: FrechetConfig,
    pub root: RootSolveConfig,
}

impl Default for FieldEmConfig {
    fn default() -> Self {
        FieldEmConfig {
            max_iter: 100,
            tol: 1e-6,
            gibbs: GibbsFitConfig::default(),
            frechet: FrechetConfig::default(),
            root: RootSolveConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FieldEmResult {
    pub params: FieldParams,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub flags: Vec<(usize, MStepFlag)>,
}

fn field_change(a: &FieldParams, b: &FieldParams) -> Result<f64> {
    let n = a.n_states();
    // compare potentials modulo the constant shift of V
    let mut m: f64 = 0.0;
    for k in 0..n {
        m = m.max(((a.v[k] - a.v[0]) - (b.v[k] - b.v[0])).abs());
        for l in 0..n {
            m = m.max((a.j[k][l] - b.j[k][l]).abs());
        }
    }
    for (ea, eb) in a.emissions.iter().zip(&b.emissions) {
        m = m.max(crate::geometry::riemannian_distance(&ea.ybar, &eb.ybar)?);
        m = m.max((ea.sigma - eb.sigma).abs());
    }
    Ok(m)
}

/// EM for a hidden field with exact E-step.
pub fn field_em_fit(
    field0: &FieldParams,
    grid: &GridGraph,
    obs: &[ManifoldPoint],
    cfg: &FieldEmConfig,
) -> Result<FieldEmResult> {
    if cfg.max_iter == 0 {
        return Err(Error::InvalidParams("max_iter must be at least 1".into()));
    }
    let at = |iteration: usize| move |e: Error| Error::AtIteration { iteration, source: Box::new(e) };
    let mut params = field0.clone();
    let mut trace = Vec::new();
    let mut flags = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=cfg.max_iter {
        let post = field_posteriors_exact(&params, grid, obs).map_err(at(k))?;
        trace.push(post.loglik);
        let out = field_m_step(obs, &post, grid, &params, &cfg.gibbs, &cfg.frechet, &cfg.root)
            .map_err(at(k))?;
        flags.extend(out.flags.into_iter().map(|f| (k, f)));
        let change = field_change(&params, &out.params).map_err(at(k))?;
        params = out.params;
        iterations = k;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    trace.push(field_loglik_exact(&params, grid, obs).map_err(at(iterations + 1))?);
    Ok(FieldEmResult {
        params,
        loglik_trace: trace,
        iterations,
        converged,
        flags,
    })
}
