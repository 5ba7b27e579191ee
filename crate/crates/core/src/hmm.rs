//! Hidden Markov chains with manifold-valued emissions: normalized
//! forward-backward, EM, and enumeration oracles for small instances.

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{riemannian_distance, riemannian_distance_sq, Family, ManifoldPoint};
use crate::numerics::{
    inverse_psi_prime, weighted_frechet_mean_from, ClampSide, FrechetConfig, RootSolveConfig,
};

/// Largest number of paths or configurations any enumeration will visit.
pub const ENUMERATION_LIMIT: f64 = 1e6;

const STOCHASTIC_TOL: f64 = 1e-12;
const EMPTY_STATE_WEIGHT: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Emission {
    pub ybar: ManifoldPoint,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmParams {
    pub family: Family,
    /// Row-stochastic transition matrix, `p[α][β] = P(q_{t+1} = β | q_t = α)`.
    pub p: Vec<Vec<f64>>,
    pub pi1: Vec<f64>,
    pub emissions: Vec<Emission>,
}

pub(crate) fn check_distribution(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParams(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::InvalidParams(format!("{what} sums to {s}, expected 1")));
    }
    Ok(())
}

pub(crate) fn check_emissions(family: &Family, emissions: &[Emission]) -> Result<()> {
    for e in emissions {
        family.check_point(&e.ybar)?;
        crate::geometry::check_sigma(e.sigma)?;
    }
    Ok(())
}

impl HmmParams {
    pub fn new(
        family: Family,
        p: Vec<Vec<f64>>,
        pi1: Vec<f64>,
        emissions: Vec<Emission>,
    ) -> Result<Self> {
        let n = emissions.len();
        if n == 0 {
            return Err(Error::InvalidParams("at least one state is required".into()));
        }
        if p.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: p.len() });
        }
        if pi1.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: pi1.len() });
        }
        for (i, row) in p.iter().enumerate() {
            if row.len() != n {
                return Err(Error::LengthMismatch { expected: n, found: row.len() });
            }
            check_distribution(row, &format!("row {i} of P"))?;
        }
        check_distribution(&pi1, "π₁")?;
        check_emissions(&family, &emissions)?;
        Ok(HmmParams { family, p, pi1, emissions })
    }

    pub fn n_states(&self) -> usize {
        self.emissions.len()
    }

    /// Relabels states so that new state `i` is old state `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> HmmParams {
        HmmParams {
            family: self.family,
            p: perm
                .iter()
                .map(|&a| perm.iter().map(|&b| self.p[a][b]).collect())
                .collect(),
            pi1: perm.iter().map(|&a| self.pi1[a]).collect(),
            emissions: perm.iter().map(|&a| self.emissions[a].clone()).collect(),
        }
    }
}

/// log f(y_t | ȳ_α, σ_α) for every t and α.
pub fn log_emissions(params: &HmmParams, obs: &[ManifoldPoint]) -> Result<Vec<Vec<f64>>> {
    log_emissions_for(&params.family, &params.emissions, obs)
}

pub(crate) fn log_emissions_for(
    family: &Family,
    emissions: &[Emission],
    obs: &[ManifoldPoint],
) -> Result<Vec<Vec<f64>>> {
    let consts = emissions
        .iter()
        .map(|e| family.density_constants(e.sigma))
        .collect::<Result<Vec<_>>>()?;
    obs.iter()
        .map(|y| {
            emissions
                .iter()
                .zip(&consts)
                .map(|(e, &(eta, psi))| Ok(eta * family.statistic(y, &e.ybar)? - psi))
                .collect()
        })
        .collect()
}

/// Output of the forward recursion.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Φ_t(α) = P(q_t = α | y_1..y_t).
    pub phi: Vec<Vec<f64>>,
    /// log of the normalizer that produced Φ_t; entry 0 is the initial one.
    pub log_normalizers: Vec<f64>,
    pub loglik: f64,
}

/// Forward and backward variables together.
#[derive(Debug, Clone)]
pub struct FbCache {
    pub phi: Vec<Vec<f64>>,
    /// B_t(α), scaled so that Σ_α Φ_t(α) B_t(α) = 1.
    pub beta: Vec<Vec<f64>>,
    pub log_normalizers: Vec<f64>,
    pub loglik: f64,
    pub log_emission: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct Posteriors {
    /// ω_α^t = P(q_t = α | y).
    pub omega: Vec<Vec<f64>>,
    /// ν_αβ = Σ_t P(q_t = α, q_{t+1} = β | y).
    pub nu: Vec<Vec<f64>>,
    pub loglik: f64,
}

fn shifted_exp(row: &[f64], t: usize) -> Result<(Vec<f64>, f64)> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::Degenerate {
            t,
            reason: "all emission densities vanish".into(),
        });
    }
    Ok((row.iter().map(|&l| (l - m).exp()).collect(), m))
}

fn forward_from(params: &HmmParams, loge: &[Vec<f64>]) -> Result<Forward> {
    let n = params.n_states();
    let tlen = loge.len();
    if tlen == 0 {
        return Err(Error::InvalidParams("observation sequence is empty".into()));
    }
    let mut phi = Vec::with_capacity(tlen);
    let mut log_normalizers = Vec::with_capacity(tlen);
    let mut pred = params.pi1.clone();
    for (t, row) in loge.iter().enumerate() {
        if t > 0 {
            let prev: &Vec<f64> = &phi[t - 1];
            pred = (0..n)
                .map(|b| (0..n).map(|a| prev[a] * params.p[a][b]).sum())
                .collect();
        }
        let (e, m) = shifted_exp(row, t)?;
        let mut cur: Vec<f64> = pred.iter().zip(&e).map(|(p, e)| p * e).collect();
        let c: f64 = cur.iter().sum();
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Degenerate {
                t,
                reason: format!("forward normalizer is {c}"),
            });
        }
        cur.iter_mut().for_each(|x| *x /= c);
        phi.push(cur);
        log_normalizers.push(c.ln() + m);
    }
    let loglik = log_normalizers.iter().sum();
    Ok(Forward { phi, log_normalizers, loglik })
}

/// Normalized forward recursion; `loglik` is the observed-data log-likelihood.
pub fn forward_pass(params: &HmmParams, obs: &[ManifoldPoint]) -> Result<Forward> {
    forward_from(params, &log_emissions(params, obs)?)
}

fn backward_from(params: &HmmParams, loge: &[Vec<f64>], log_norms: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = params.n_states();
    let tlen = loge.len();
    if log_norms.len() != tlen {
        return Err(Error::LengthMismatch {
            expected: tlen,
            found: log_norms.len(),
        });
    }
    let mut beta = vec![vec![1.0; n]; tlen];
    for t in (0..tlen.saturating_sub(1)).rev() {
        // B_t(α) = Σ_β P_αβ f(y_{t+1}|β) B_{t+1}(β) / c_{t+1}
        let ln_c = log_norms[t + 1];
        let w: Vec<f64> = (0..n)
            .map(|b| (loge[t + 1][b] - ln_c).exp() * beta[t + 1][b])
            .collect();
        for a in 0..n {
            beta[t][a] = (0..n).map(|b| params.p[a][b] * w[b]).sum();
        }
        if beta[t].iter().any(|x| !x.is_finite()) {
            return Err(Error::Degenerate {
                t,
                reason: "backward variable overflow".into(),
            });
        }
    }
    Ok(beta)
}

/// Backward recursion using the normalizers of a forward pass on `obs`.
pub fn backward_pass(
    params: &HmmParams,
    obs: &[ManifoldPoint],
    log_normalizers: &[f64],
) -> Result<Vec<Vec<f64>>> {
    backward_from(params, &log_emissions(params, obs)?, log_normalizers)
}

pub fn forward_backward(params: &HmmParams, obs: &[ManifoldPoint]) -> Result<FbCache> {
    let loge = log_emissions(params, obs)?;
    let fwd = forward_from(params, &loge)?;
    let beta = backward_from(params, &loge, &fwd.log_normalizers)?;
    Ok(FbCache {
        phi: fwd.phi,
        beta,
        log_normalizers: fwd.log_normalizers,
        loglik: fwd.loglik,
        log_emission: loge,
    })
}

impl FbCache {
    pub fn posteriors(&self, params: &HmmParams) -> Posteriors {
        let n = params.n_states();
        let tlen = self.phi.len();
        let omega = (0..tlen)
            .map(|t| {
                let mut w: Vec<f64> = (0..n).map(|a| self.phi[t][a] * self.beta[t][a]).collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= s);
                w
            })
            .collect();
        let mut nu = vec![vec![0.0; n]; n];
        for t in 0..tlen.saturating_sub(1) {
            let ln_c = self.log_normalizers[t + 1];
            let w: Vec<f64> = (0..n)
                .map(|b| (self.log_emission[t + 1][b] - ln_c).exp() * self.beta[t + 1][b])
                .collect();
            for a in 0..n {
                let fa = self.phi[t][a];
                if fa == 0.0 {
                    continue;
                }
                for b in 0..n {
                    nu[a][b] += fa * params.p[a][b] * w[b];
                }
            }
        }
        Posteriors { omega, nu, loglik: self.loglik }
    }
}

/// Smoothed state and pair posteriors.
pub fn posteriors(params: &HmmParams, obs: &[ManifoldPoint]) -> Result<Posteriors> {
    Ok(forward_backward(params, obs)?.posteriors(params))
}

/// Warnings raised by an M-step that did not perform a plain update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MStepFlag {
    /// Posterior weight of the state vanished; its emission was kept.
    EmptyState { state: usize },
    /// ν had a zero row; the previous transition row was kept.
    ZeroTransitionRow { state: usize },
    /// The scale equation had no interior solution; σ sits at a bound.
    ScaleClamped { state: usize, side: ClampSide },
}

impl std::fmt::Display for MStepFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MStepFlag::EmptyState { state } => write!(f, "state {state}: empty, emission kept"),
            MStepFlag::ZeroTransitionRow { state } => {
                write!(f, "state {state}: no outgoing transitions, row kept")
            }
            MStepFlag::ScaleClamped { state, side } => {
                write!(f, "state {state}: scale clamped at {side:?} bound")
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct MStepOutput {
    pub params: HmmParams,
    pub flags: Vec<MStepFlag>,
}

/// Location and scale maximizing Σ_t w_t log f(y_t | ȳ, σ), warm-started at
/// `prev`. Returns `None` when the weights vanish.
pub(crate) fn fit_emission(
    family: &Family,
    obs: &[ManifoldPoint],
    weights: &[f64],
    prev: &Emission,
    frechet: &FrechetConfig,
    root: &RootSolveConfig,
) -> Result<Option<(Emission, Option<ClampSide>)>> {
    let total: f64 = weights.iter().sum();
    if !(total >= EMPTY_STATE_WEIGHT) {
        return Ok(None);
    }
    let mean = weighted_frechet_mean_from(family.kind(), obs, weights, Some(&prev.ybar), frechet)?;
    let mut target = 0.0;
    for (y, &w) in obs.iter().zip(weights) {
        if w > 0.0 {
            target += w * family.statistic(y, &mean.point)?;
        }
    }
    target /= total;
    let sol = inverse_psi_prime(family, target, root)?;
    let sigma = family.sigma_of_eta(sol.eta).clamp(crate::geometry::SIGMA_MIN, crate::geometry::SIGMA_MAX);
    Ok(Some((Emission { ybar: mean.point, sigma }, sol.clamped)))
}

/// Maximizes Q(θ | θ_prev) given posteriors.
///
/// P̂ is ν normalized by rows, π̂₁ = ω¹, and each emission is the weighted
/// Fréchet mean with σ̂ solving ψ′(η(σ̂)) = weighted mean statistic.
pub fn m_step(
    obs: &[ManifoldPoint],
    post: &Posteriors,
    prev: &HmmParams,
    frechet: &FrechetConfig,
    root: &RootSolveConfig,
) -> Result<MStepOutput> {
    let n = prev.n_states();
    if post.omega.len() != obs.len() {
        return Err(Error::LengthMismatch {
            expected: obs.len(),
            found: post.omega.len(),
        });
    }
    let mut flags = Vec::new();
    let mut p = Vec::with_capacity(n);
    for a in 0..n {
        let s: f64 = post.nu[a].iter().sum();
        if s > 0.0 && s.is_finite() {
            p.push(post.nu[a].iter().map(|v| v / s).collect());
        } else {
            p.push(prev.p[a].clone());
            if obs.len() > 1 {
                flags.push(MStepFlag::ZeroTransitionRow { state: a });
            }
        }
    }
    let pi1 = post.omega[0].clone();
    let mut emissions = Vec::with_capacity(n);
    for a in 0..n {
        let w: Vec<f64> = post.omega.iter().map(|row| row[a]).collect();
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
    Ok(MStepOutput {
        params: HmmParams { family: prev.family, p, pi1, emissions },
        flags,
    })
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Q(θ | θ′) = Σ ν_αβ log P_αβ + Σ_t Σ_α ω_α^t log f(y_t | ȳ_α, σ_α), with
/// posteriors computed at θ′. The initial-law term is omitted.
pub fn q_value(params: &HmmParams, obs: &[ManifoldPoint], post: &Posteriors) -> Result<f64> {
    let n = params.n_states();
    let mut q = 0.0;
    for a in 0..n {
        for b in 0..n {
            q += xlogy(post.nu[a][b], params.p[a][b]);
        }
    }
    let loge = log_emissions(params, obs)?;
    for (row, w) in loge.iter().zip(&post.omega) {
        for a in 0..n {
            if w[a] != 0.0 {
                q += w[a] * row[a];
            }
        }
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy)]
pub struct EmConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub frechet: FrechetConfig,
    pub root: RootSolveConfig,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 300,
            tol: 1e-6,
            frechet: FrechetConfig::default(),
            root: RootSolveConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmResult {
    pub params: HmmParams,
    /// ℓ(y | θ^k) for k = 0..=iterations.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Flags from every M-step, tagged with the 1-based iteration.
    pub flags: Vec<(usize, MStepFlag)>,
}

/// Largest change between two parameter sets: transition entries and
/// scales in absolute value, locations in Riemannian distance.
pub fn parameter_change(a: &HmmParams, b: &HmmParams) -> Result<f64> {
    let mut m: f64 = 0.0;
    for (ra, rb) in a.p.iter().zip(&b.p) {
        for (x, y) in ra.iter().zip(rb) {
            m = m.max((x - y).abs());
        }
    }
    for (ea, eb) in a.emissions.iter().zip(&b.emissions) {
        m = m.max(riemannian_distance(&ea.ybar, &eb.ybar)?);
        m = m.max((ea.sigma - eb.sigma).abs());
    }
    Ok(m)
}

/// Expectation-maximization from `params0`.
pub fn em_fit(params0: &HmmParams, obs: &[ManifoldPoint], cfg: &EmConfig) -> Result<EmResult> {
    if cfg.max_iter == 0 {
        return Err(Error::InvalidParams("max_iter must be at least 1".into()));
    }
    let at = |iteration: usize| move |e: Error| Error::AtIteration { iteration, source: Box::new(e) };
    let mut params = params0.clone();
    let mut trace = Vec::with_capacity(cfg.max_iter + 1);
    let mut flags = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=cfg.max_iter {
        let post = posteriors(&params, obs).map_err(at(k))?;
        trace.push(post.loglik);
        let out = m_step(obs, &post, &params, &cfg.frechet, &cfg.root).map_err(at(k))?;
        flags.extend(out.flags.into_iter().map(|f| (k, f)));
        let change = parameter_change(&params, &out.params).map_err(at(k))?;
        params = out.params;
        iterations = k;
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    let last = forward_pass(&params, obs).map_err(at(iterations + 1))?;
    trace.push(last.loglik);
    Ok(EmResult {
        params,
        loglik_trace: trace,
        iterations,
        converged,
        flags,
    })
}

/// Seeded initial guess: uniform P and π₁, centers picked k-means++ style
/// among the observations, one Voronoi sweep, then per-cell Fréchet mean
/// and scale.
pub fn default_init(
    family: &Family,
    obs: &[ManifoldPoint],
    n_states: usize,
    seed: u64,
    frechet: &FrechetConfig,
    root: &RootSolveConfig,
) -> Result<HmmParams> {
    if n_states == 0 {
        return Err(Error::InvalidParams("at least one state is required".into()));
    }
    if obs.len() < n_states {
        return Err(Error::InvalidParams(format!(
            "{} observations cannot seed {n_states} states",
            obs.len()
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centers: Vec<ManifoldPoint> = vec![obs.choose(&mut rng).unwrap().clone()];
    let mut d2: Vec<f64> = obs
        .iter()
        .map(|y| riemannian_distance_sq(y, &centers[0]))
        .collect::<Result<_>>()?;
    while centers.len() < n_states {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = d2.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.gen_range(0..obs.len())
        };
        let c = obs[pick].clone();
        for (d, y) in d2.iter_mut().zip(obs) {
            *d = d.min(riemannian_distance_sq(y, &c)?);
        }
        centers.push(c);
    }
    let mut assign = vec![0usize; obs.len()];
    for (t, y) in obs.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (a, c) in centers.iter().enumerate() {
            let d = riemannian_distance_sq(y, c)?;
            if d < best {
                best = d;
                assign[t] = a;
            }
        }
    }
    let all = vec![1.0; obs.len()];
    let mut emissions = Vec::with_capacity(n_states);
    for (a, c) in centers.iter().enumerate() {
        let w: Vec<f64> = assign.iter().map(|&s| if s == a { 1.0 } else { 0.0 }).collect();
        let seed_emission = Emission { ybar: c.clone(), sigma: 1.0 };
        // cells too small for a scale estimate borrow the global spread
        let enough = w.iter().sum::<f64>() >= 2.0;
        let cell = if enough { &w } else { &all };
        let (mut e, _) = fit_emission(family, obs, cell, &seed_emission, frechet, root)?
            .expect("cell has positive weight");
        if !enough {
            e.ybar = c.clone();
        }
        emissions.push(e);
    }
    let u = 1.0 / n_states as f64;
    HmmParams::new(*family, vec![vec![u; n_states]; n_states], vec![u; n_states], emissions)
}

/// Permutation `perm` minimizing Σ_i d(ȳ̂_{perm[i]}, reference_i); the
/// relabeled estimate is `params.permuted(&perm)`.
pub fn align_labels(params: &HmmParams, reference: &[ManifoldPoint]) -> Result<Vec<usize>> {
    let n = params.n_states();
    if reference.len() != n {
        return Err(Error::LengthMismatch { expected: n, found: reference.len() });
    }
    if n > 8 {
        return Err(Error::Unsupported("label alignment is limited to 8 states".into()));
    }
    let mut cost = vec![vec![0.0; n]; n];
    for (i, r) in reference.iter().enumerate() {
        for (j, e) in params.emissions.iter().enumerate() {
            cost[i][j] = riemannian_distance(&e.ybar, r)?;
        }
    }
    let mut best = (f64::INFINITY, (0..n).collect::<Vec<_>>());
    for perm in (0..n).permutations(n) {
        let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if c < best.0 {
            best = (c, perm);
        }
    }
    Ok(best.1)
}

/// A hidden path together with its observations.
#[derive(Debug, Clone, PartialEq)]
pub struct CompleteData {
    pub states: Vec<usize>,
    pub obs: Vec<ManifoldPoint>,
}

impl CompleteData {
    /// N_αβ, the number of α → β transitions along the path.
    pub fn transition_counts(&self, n_states: usize) -> Vec<Vec<usize>> {
        let mut n = vec![vec![0; n_states]; n_states];
        for w in self.states.windows(2) {
            n[w[0]][w[1]] += 1;
        }
        n
    }
}

/// Σ N_αβ log P_αβ + Σ_t log f(y_t | ȳ_{q_t}, σ_{q_t}); −∞ when the path
/// uses a forbidden transition.
pub fn complete_loglik(params: &HmmParams, data: &CompleteData) -> Result<f64> {
    let n = params.n_states();
    if data.states.len() != data.obs.len() {
        return Err(Error::LengthMismatch {
            expected: data.obs.len(),
            found: data.states.len(),
        });
    }
    if let Some(&bad) = data.states.iter().find(|&&s| s >= n) {
        return Err(Error::InvalidParams(format!("state {bad} out of range")));
    }
    let counts = data.transition_counts(n);
    let mut l = 0.0;
    for a in 0..n {
        for b in 0..n {
            if counts[a][b] > 0 {
                if params.p[a][b] == 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                l += counts[a][b] as f64 * params.p[a][b].ln();
            }
        }
    }
    for (&s, y) in data.states.iter().zip(&data.obs) {
        let e = &params.emissions[s];
        l += params.family.log_density(y, &e.ybar, e.sigma)?;
    }
    Ok(l)
}

pub(crate) fn guard(states: usize, sites: usize) -> Result<()> {
    let count = (states as f64).powi(sites as i32);
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationGuard {
            configurations: count,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// Visits every element of {0..n}^len in lexicographic order.
pub(crate) fn for_each_config(n: usize, len: usize, mut f: impl FnMut(&[usize])) {
    let mut q = vec![0usize; len];
    loop {
        f(&q);
        let mut i = len;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            q[i] += 1;
            if q[i] < n {
                break;
            }
            q[i] = 0;
        }
    }
}

fn path_log_weight(params: &HmmParams, loge: &[Vec<f64>], q: &[usize]) -> f64 {
    let mut lw = params.pi1[q[0]].ln() + loge[0][q[0]];
    for t in 1..q.len() {
        lw += params.p[q[t - 1]][q[t]].ln() + loge[t][q[t]];
    }
    lw
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// ℓ(y | θ) by summing over every hidden path.
pub fn bruteforce_loglik(params: &HmmParams, obs: &[ManifoldPoint]) -> Result<f64> {
    Ok(bruteforce_posteriors(params, obs)?.loglik)
}

/// Exact posteriors by enumerating all |S|^T paths.
pub fn bruteforce_posteriors(params: &HmmParams, obs: &[ManifoldPoint]) -> Result<Posteriors> {
    let n = params.n_states();
    let tlen = obs.len();
    if tlen == 0 {
        return Err(Error::InvalidParams("observation sequence is empty".into()));
    }
    guard(n, tlen)?;
    let loge = log_emissions(params, obs)?;
    let mut weights = Vec::new();
    for_each_config(n, tlen, |q| weights.push(path_log_weight(params, &loge, q)));
    let loglik = log_sum_exp(&weights);
    let mut omega = vec![vec![0.0; n]; tlen];
    let mut nu = vec![vec![0.0; n]; n];
    let mut k = 0;
    for_each_config(n, tlen, |q| {
        let p = (weights[k] - loglik).exp();
        k += 1;
        for t in 0..tlen {
            omega[t][q[t]] += p;
            if t + 1 < tlen {
                nu[q[t]][q[t + 1]] += p;
            }
        }
    });
    Ok(Posteriors { omega, nu, loglik })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{simulate_hmm, SimConfig};

    fn disk(re: f64, im: f64) -> ManifoldPoint {
        ManifoldPoint::disk(re, im).unwrap()
    }

    fn two_state() -> HmmParams {
        HmmParams::new(
            Family::DiskGaussian,
            vec![vec![0.7, 0.3], vec![0.4, 0.6]],
            vec![0.5, 0.5],
            vec![
                Emission { ybar: disk(0.2, 0.0), sigma: 0.5 },
                Emission { ybar: disk(-0.3, 0.4), sigma: 0.8 },
            ],
        )
        .unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    #[test]
    fn validation() {
        let p = two_state();
        let bad = HmmParams::new(p.family, vec![vec![0.7, 0.2], vec![0.4, 0.6]], p.pi1.clone(), p.emissions.clone());
        assert!(matches!(bad, Err(Error::InvalidParams(_))));
        let short = HmmParams::new(p.family, p.p.clone(), vec![1.0], p.emissions.clone());
        assert!(matches!(short, Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn single_state_loglik_is_sum_of_densities() {
        let e = Emission { ybar: disk(0.1, 0.1), sigma: 0.6 };
        let p = HmmParams::new(Family::DiskGaussian, vec![vec![1.0]], vec![1.0], vec![e.clone()]).unwrap();
        let obs = simulate_hmm(&p, 12, SimConfig::new(4)).unwrap().obs;
        let want: f64 = obs.iter().map(|y| p.family.log_density(y, &e.ybar, e.sigma).unwrap()).sum();
        let post = posteriors(&p, &obs).unwrap();
        assert!(close(post.loglik, want, 1e-12));
        assert!(post.omega.iter().all(|w| (w[0] - 1.0).abs() < 1e-14));
        assert!((post.nu[0][0] - 11.0).abs() < 1e-11);
    }

    #[test]
    fn one_observation() {
        let p = two_state();
        let obs = vec![disk(0.1, 0.2)];
        let post = posteriors(&p, &obs).unwrap();
        let le = log_emissions(&p, &obs).unwrap();
        let want = log_sum_exp(&[0.5f64.ln() + le[0][0], 0.5f64.ln() + le[0][1]]);
        assert!(close(post.loglik, want, 1e-13));
        assert!(post.nu.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn pair_posteriors_by_hand() {
        let p = two_state();
        let obs = vec![disk(0.1, 0.2), disk(-0.4, 0.3)];
        let le = log_emissions(&p, &obs).unwrap();
        let mut joint = vec![vec![0.0; 2]; 2];
        let mut z = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                joint[a][b] = p.pi1[a] * le[0][a].exp() * p.p[a][b] * le[1][b].exp();
                z += joint[a][b];
            }
        }
        let post = posteriors(&p, &obs).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert!(close(post.nu[a][b], joint[a][b] / z, 1e-13));
            }
        }
        assert!(close(post.loglik, z.ln(), 1e-13));
    }

    #[test]
    fn matches_enumeration() {
        let p = two_state();
        let obs = simulate_hmm(&p, 9, SimConfig::new(11)).unwrap().obs;
        let fb = posteriors(&p, &obs).unwrap();
        let bf = bruteforce_posteriors(&p, &obs).unwrap();
        assert!(close(fb.loglik, bf.loglik, 1e-12));
        for (x, y) in fb.omega.iter().flatten().zip(bf.omega.iter().flatten()) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in fb.nu.iter().flatten().zip(bf.nu.iter().flatten()) {
            assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn normalizers_sum_to_loglik() {
        let p = two_state();
        let obs = simulate_hmm(&p, 50, SimConfig::new(2)).unwrap().obs;
        let fwd = forward_pass(&p, &obs).unwrap();
        assert_eq!(fwd.log_normalizers.len(), 50);
        assert_eq!(fwd.loglik, fwd.log_normalizers.iter().sum::<f64>());
        for row in &fwd.phi {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn deterministic_chain_pins_posteriors() {
        let mut p = two_state();
        p.p = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        p.pi1 = vec![1.0, 0.0];
        let obs = simulate_hmm(&p, 8, SimConfig::new(5)).unwrap().obs;
        let post = posteriors(&p, &obs).unwrap();
        for (t, w) in post.omega.iter().enumerate() {
            assert!((w[t % 2] - 1.0).abs() < 1e-14);
        }
        assert!((post.nu[0][1] - 4.0).abs() < 1e-12);
        assert!((post.nu[1][0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn m_step_normalizes_pair_counts() {
        let p = two_state();
        let obs = vec![disk(0.0, 0.0), disk(0.1, 0.0), disk(0.2, 0.0), disk(0.0, 0.1), disk(0.1, 0.1), disk(0.3, 0.0), disk(0.0, 0.2), disk(0.2, 0.2), disk(0.1, 0.3)];
        let post = Posteriors {
            omega: vec![vec![0.5, 0.5]; 9],
            nu: vec![vec![3.0, 1.0], vec![2.0, 2.0]],
            loglik: 0.0,
        };
        let out = m_step(&obs, &post, &p, &FrechetConfig::default(), &RootSolveConfig::default()).unwrap();
        assert_eq!(out.params.p, vec![vec![0.75, 0.25], vec![0.5, 0.5]]);
        assert_eq!(out.params.pi1, vec![0.5, 0.5]);
        assert!(out.flags.is_empty());
    }

    #[test]
    fn m_step_flags() {
        let p = two_state();
        let obs = vec![disk(0.1, 0.0), disk(0.1, 0.0), disk(0.1, 0.0)];
        let post = Posteriors {
            omega: vec![vec![1.0, 0.0]; 3],
            nu: vec![vec![2.0, 0.0], vec![0.0, 0.0]],
            loglik: 0.0,
        };
        let out = m_step(&obs, &post, &p, &FrechetConfig::default(), &RootSolveConfig::default()).unwrap();
        assert!(out.flags.contains(&MStepFlag::ZeroTransitionRow { state: 1 }));
        assert!(out.flags.contains(&MStepFlag::EmptyState { state: 1 }));
        assert!(out.flags.contains(&MStepFlag::ScaleClamped { state: 0, side: ClampSide::Lower }));
        assert_eq!(out.params.p[1], p.p[1]);
        assert_eq!(out.params.emissions[1], p.emissions[1]);
        assert_eq!(out.params.emissions[0].sigma, crate::geometry::SIGMA_MIN);
    }

    #[test]
    fn complete_loglik_cases() {
        let p = two_state();
        let obs = vec![disk(0.1, 0.0), disk(0.0, 0.3), disk(-0.2, 0.1)];
        let data = CompleteData { states: vec![0, 0, 1], obs: obs.clone() };
        assert_eq!(data.transition_counts(2), vec![vec![1, 1], vec![0, 0]]);
        let mut want = 0.7f64.ln() + 0.3f64.ln();
        for (s, y) in [0, 0, 1].iter().zip(&obs) {
            let e = &p.emissions[*s];
            want += p.family.log_density(y, &e.ybar, e.sigma).unwrap();
        }
        assert!(close(complete_loglik(&p, &data).unwrap(), want, 1e-14));

        let mut q = p.clone();
        q.p[0] = vec![1.0, 0.0];
        assert_eq!(complete_loglik(&q, &data).unwrap(), f64::NEG_INFINITY);
        let bad = CompleteData { states: vec![0, 2, 1], obs };
        assert!(complete_loglik(&p, &bad).is_err());
    }

    #[test]
    fn em_single_state_is_one_step() {
        let e = Emission { ybar: disk(0.0, 0.0), sigma: 1.0 };
        let p = HmmParams::new(Family::DiskGaussian, vec![vec![1.0]], vec![1.0], vec![e]).unwrap();
        let obs = simulate_hmm(&p, 200, SimConfig::new(9)).unwrap().obs;
        let res = em_fit(&p, &obs, &EmConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.iterations <= 2);
        assert_eq!(res.loglik_trace.len(), res.iterations + 1);
        assert!(res.loglik_trace.last().unwrap() >= &res.loglik_trace[0]);
    }

    #[test]
    fn em_trace_is_monotone() {
        let truth = two_state();
        let obs = simulate_hmm(&truth, 300, SimConfig::new(21)).unwrap().obs;
        let init = default_init(&truth.family, &obs, 2, 1, &FrechetConfig::default(), &RootSolveConfig::default()).unwrap();
        let cfg = EmConfig { max_iter: 40, ..EmConfig::default() };
        let res = em_fit(&init, &obs, &cfg).unwrap();
        for w in res.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn permutation_and_alignment() {
        let p = two_state();
        let swapped = p.permuted(&[1, 0]);
        assert_eq!(swapped.p, vec![vec![0.6, 0.4], vec![0.3, 0.7]]);
        let reference: Vec<ManifoldPoint> = p.emissions.iter().map(|e| e.ybar.clone()).collect();
        let perm = align_labels(&swapped, &reference).unwrap();
        assert_eq!(perm, vec![1, 0]);
        assert_eq!(swapped.permuted(&perm), p);
    }

    #[test]
    fn enumeration_guard() {
        let p = two_state();
        let obs = vec![disk(0.0, 0.0); 21];
        assert!(matches!(bruteforce_loglik(&p, &obs), Err(Error::EnumerationGuard { .. })));
        assert!(guard(10, 6).is_ok());
        assert!(guard(10, 7).is_err());
    }

    #[test]
    fn config_order() {
        let mut seen = Vec::new();
        for_each_config(2, 2, |q| seen.push(q.to_vec()));
        assert_eq!(seen, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    }
}
