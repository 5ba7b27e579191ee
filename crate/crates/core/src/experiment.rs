//! The three-state Poincaré-disk "face" experiment and Monte-Carlo studies
//! of the EM estimator.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Family, ManifoldPoint};
use crate::hmm::{align_labels, default_init, em_fit, EmConfig, Emission, HmmParams};
use crate::io::{FlagRecord, ModelFile};
use crate::sampling::{simulate_hmm, SimConfig};

pub const PAPER_FACE: &str = "paper-face";

/// Three states on the disk: a tight center and two "eyes".
pub fn paper_face() -> HmmParams {
    let ybar = paper_face_locations();
    let sigma = [0.1, 0.4, 0.4];
    HmmParams::new(
        Family::DiskGaussian,
        vec![
            vec![0.4, 0.3, 0.3],
            vec![0.2, 0.6, 0.2],
            vec![0.1, 0.1, 0.8],
        ],
        vec![1.0, 0.0, 0.0],
        ybar.into_iter()
            .zip(sigma)
            .map(|(ybar, sigma)| Emission { ybar, sigma })
            .collect(),
    )
    .expect("preset is valid")
}

pub fn paper_face_locations() -> Vec<ManifoldPoint> {
    [(0.0, 0.0), (0.29, 0.82), (-0.29, 0.82)]
        .iter()
        .map(|&(re, im)| ManifoldPoint::disk(re, im).expect("inside the disk"))
        .collect()
}

pub fn preset(name: &str) -> Result<HmmParams> {
    match name {
        PAPER_FACE => Ok(paper_face()),
        other => Err(Error::InvalidParams(format!("unknown preset '{other}'"))),
    }
}

/// Multiplies every scale by `factor`.
pub fn with_sigma_scale(params: &HmmParams, factor: f64) -> Result<HmmParams> {
    let emissions = params
        .emissions
        .iter()
        .map(|e| Emission {
            ybar: e.ybar.clone(),
            sigma: e.sigma * factor,
        })
        .collect();
    HmmParams::new(params.family, params.p.clone(), params.pi1.clone(), emissions)
}

/// A fitted model with its EM diagnostics, relabeled against a reference
/// when one is given.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: HmmParams,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub flags: Vec<FlagRecord>,
    pub permutation: Vec<usize>,
}

impl FitOutcome {
    pub fn to_model_file(&self) -> ModelFile {
        let mut m = ModelFile::from_hmm(&self.params);
        m.loglik_trace = Some(self.loglik_trace.clone());
        m.iterations = Some(self.iterations);
        m.converged = Some(self.converged);
        m.flags = Some(self.flags.clone());
        m
    }
}

pub fn fit(
    init: &HmmParams,
    obs: &[ManifoldPoint],
    cfg: &EmConfig,
    reference: Option<&[ManifoldPoint]>,
) -> Result<FitOutcome> {
    let res = em_fit(init, obs, cfg)?;
    let permutation = match reference {
        Some(r) => align_labels(&res.params, r)?,
        None => (0..res.params.n_states()).collect(),
    };
    // flags keep the labels used during fitting
    Ok(FitOutcome {
        params: res.params.permuted(&permutation),
        loglik_trace: res.loglik_trace,
        iterations: res.iterations,
        converged: res.converged,
        flags: res.flags.iter().map(|(k, f)| FlagRecord::new(*k, f)).collect(),
        permutation,
    })
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub truth: HmmParams,
    pub t: usize,
    pub n_mc: usize,
    pub em: EmConfig,
    pub seed: u64,
    /// Common initial guess; by default it is derived once from the first
    /// run's data with [`default_init`] and shared by every run.
    pub init: Option<HmmParams>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub run: usize,
    pub loglik_initial: f64,
    pub loglik_final: f64,
    pub iterations: usize,
    pub converged: bool,
    pub estimate: ModelFile,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailedRun {
    pub run: usize,
    pub error: String,
}

/// Monte-Carlo mean and variance (1/N) of each parameter across runs.
/// Location statistics use the Euclidean coordinates of the points.
#[derive(Debug, Clone, Serialize)]
pub struct StudySummary {
    pub n_mc: usize,
    pub completed: usize,
    pub failed: Vec<FailedRun>,
    #[serde(rename = "P_mean")]
    pub p_mean: Vec<Vec<f64>>,
    #[serde(rename = "P_var")]
    pub p_var: Vec<Vec<f64>>,
    pub ybar_mean: Vec<Vec<f64>>,
    /// E|ȳ − E ȳ|² per state.
    pub ybar_var: Vec<f64>,
    pub sigma_mean: Vec<f64>,
    pub sigma_var: Vec<f64>,
    pub max_var_p: f64,
    pub max_var_ybar: f64,
    pub max_var_sigma: f64,
    pub init: ModelFile,
    pub runs: Vec<RunRecord>,
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n)
}

/// Re-simulates data for each run (stream r of the seed), fits from the
/// common initial guess, aligns labels to the truth and summarizes.
pub fn mc_study(cfg: &StudyConfig) -> Result<StudySummary> {
    if cfg.n_mc == 0 {
        return Err(Error::InvalidParams("n_mc must be at least 1".into()));
    }
    let sim = SimConfig::new(cfg.seed);
    let init = match &cfg.init {
        Some(p) => p.clone(),
        None => {
            let data = simulate_hmm(&cfg.truth, cfg.t, sim.with_stream(0))?;
            default_init(
                &cfg.truth.family,
                &data.obs,
                cfg.truth.n_states(),
                cfg.seed,
                &cfg.em.frechet,
                &cfg.em.root,
            )?
        }
    };
    let reference: Vec<ManifoldPoint> = cfg.truth.emissions.iter().map(|e| e.ybar.clone()).collect();
    let results: Vec<(usize, Result<FitOutcome>)> = (0..cfg.n_mc)
        .into_par_iter()
        .map(|r| {
            let out = simulate_hmm(&cfg.truth, cfg.t, sim.with_stream(r as u64))
                .and_then(|d| fit(&init, &d.obs, &cfg.em, Some(&reference)));
            (r, out)
        })
        .collect();

    let mut runs = Vec::new();
    let mut failed = Vec::new();
    let mut fits = Vec::new();
    for (r, res) in results {
        match res {
            Ok(f) => {
                runs.push(RunRecord {
                    run: r,
                    loglik_initial: f.loglik_trace[0],
                    loglik_final: *f.loglik_trace.last().unwrap(),
                    iterations: f.iterations,
                    converged: f.converged,
                    estimate: f.to_model_file(),
                });
                fits.push(f.params);
            }
            Err(e) => failed.push(FailedRun { run: r, error: e.to_string() }),
        }
    }
    if fits.is_empty() {
        return Err(Error::InvalidParams(format!(
            "all {} runs failed; first error: {}",
            cfg.n_mc, failed[0].error
        )));
    }
    let n = cfg.truth.n_states();
    let mut p_mean = vec![vec![0.0; n]; n];
    let mut p_var = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in 0..n {
            let xs: Vec<f64> = fits.iter().map(|f| f.p[a][b]).collect();
            (p_mean[a][b], p_var[a][b]) = mean_var(&xs);
        }
    }
    let mut ybar_mean = Vec::with_capacity(n);
    let mut ybar_var = Vec::with_capacity(n);
    let mut sigma_mean = Vec::with_capacity(n);
    let mut sigma_var = Vec::with_capacity(n);
    for a in 0..n {
        let coords: Vec<Vec<f64>> = fits.iter().map(|f| f.emissions[a].ybar.coords()).collect();
        let k = coords[0].len();
        let mut means = Vec::with_capacity(k);
        let mut var = 0.0;
        for i in 0..k {
            let xs: Vec<f64> = coords.iter().map(|c| c[i]).collect();
            let (m, v) = mean_var(&xs);
            means.push(m);
            var += v;
        }
        ybar_mean.push(means);
        ybar_var.push(var);
        let (m, v) = mean_var(&fits.iter().map(|f| f.emissions[a].sigma).collect::<Vec<_>>());
        sigma_mean.push(m);
        sigma_var.push(v);
    }
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    Ok(StudySummary {
        n_mc: cfg.n_mc,
        completed: fits.len(),
        max_var_p: max(&p_var.concat()),
        max_var_ybar: max(&ybar_var),
        max_var_sigma: max(&sigma_var),
        failed,
        p_mean,
        p_var,
        ybar_mean,
        ybar_var,
        sigma_mean,
        sigma_var,
        init: ModelFile::from_hmm(&init),
        runs,
    })
}
