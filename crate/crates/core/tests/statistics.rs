#![allow(clippy::needless_range_loop)]

use manifold_hmm::experiment::paper_face;
use manifold_hmm::geometry::{base_point, isometry_to, riemannian_distance, Family, ManifoldKind, ManifoldPoint, SIGMA_MIN};
use manifold_hmm::hmm::{default_init, em_fit, m_step, posteriors, q_value, EmConfig, Emission, HmmParams};
use manifold_hmm::numerics::{inverse_psi_prime, FrechetConfig, RootSolveConfig};
use manifold_hmm::sampling::{sample_chain, simulate_hmm, EmissionSampler, SimConfig};

fn disk(re: f64, im: f64) -> ManifoldPoint {
    ManifoldPoint::disk(re, im).unwrap()
}

fn single(sigma: f64) -> HmmParams {
    HmmParams::new(Family::DiskGaussian, vec![vec![1.0]], vec![1.0], vec![Emission { ybar: disk(0.0, 0.0), sigma }]).unwrap()
}

#[test]
fn scale_equation_recovers_sigma_from_draws() {
    let family = Family::DiskGaussian;
    let s = EmissionSampler::new(&family, &disk(0.0, 0.0), 0.5).unwrap();
    let mut rng = SimConfig::new(1).rng();
    let n = 100_000;
    let d: Vec<f64> = (0..n).map(|_| family.statistic(&s.sample(&mut rng), &disk(0.0, 0.0)).unwrap()).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let se = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64 / n as f64).sqrt();
    let eta = inverse_psi_prime(&family, mean, &RootSolveConfig::default()).unwrap().eta;
    // propagate 3 standard errors through the slope of ψ′ at η = −2
    let slope = (family.psi_prime(-2.0 + 1e-6).unwrap() - family.psi_prime(-2.0 - 1e-6).unwrap()) / 2e-6;
    assert!((eta + 2.0).abs() < 3.0 * se / slope, "η̂ = {eta}");
}

#[test]
fn single_state_scale_is_consistent() {
    let truth = single(0.4);
    let obs = simulate_hmm(&truth, 10_000, SimConfig::new(2)).unwrap().obs;
    let start = single(1.0);
    let res = em_fit(&start, &obs, &EmConfig::default()).unwrap();
    assert!((res.params.emissions[0].sigma - 0.4).abs() < 0.02);
    assert!(riemannian_distance(&res.params.emissions[0].ybar, &disk(0.0, 0.0)).unwrap() < 0.02);
}

#[test]
fn truth_is_nearly_a_fixed_point() {
    let truth = paper_face();
    let obs = simulate_hmm(&truth, 10_000, SimConfig::new(3)).unwrap().obs;
    let cfg = EmConfig { max_iter: 1, ..EmConfig::default() };
    let res = em_fit(&truth, &obs, &cfg).unwrap();
    for (a, b) in res.params.emissions.iter().zip(&truth.emissions) {
        assert!(riemannian_distance(&a.ybar, &b.ybar).unwrap() < 0.05);
    }
}

#[test]
fn face_fit_rises_then_settles() {
    let truth = paper_face();
    let obs = simulate_hmm(&truth, 10_000, SimConfig::new(4)).unwrap().obs;
    let init = default_init(&truth.family, &obs, 3, 4, &FrechetConfig::default(), &RootSolveConfig::default()).unwrap();
    let res = em_fit(&init, &obs, &EmConfig { max_iter: 1000, ..EmConfig::default() }).unwrap();
    assert!(res.converged && res.iterations < 1000);
    let rises = res.loglik_trace.windows(2).take_while(|w| w[1] > w[0]).count();
    assert!(rises >= res.iterations.min(10), "trace {:?}", res.loglik_trace);
}

#[test]
fn q_is_concave_in_eta() {
    let truth = paper_face();
    let obs = simulate_hmm(&truth, 400, SimConfig::new(5)).unwrap().obs;
    let post = posteriors(&truth, &obs).unwrap();
    let est = m_step(&obs, &post, &truth, &FrechetConfig::default(), &RootSolveConfig::default()).unwrap().params;
    for a in 0..3 {
        let eta0 = truth.family.eta(est.emissions[a].sigma).unwrap();
        let q: Vec<f64> = (0..41)
            .map(|i| {
                let mut p = est.clone();
                let eta = eta0 * (0.5f64).powf(1.0 - i as f64 / 20.0);
                p.emissions[a].sigma = p.family.sigma_of_eta(eta);
                q_value(&p, &obs, &post).unwrap()
            })
            .collect();
        // the grid is geometric in η; compare slopes instead of raw differences
        let etas: Vec<f64> = (0..41).map(|i| eta0 * (0.5f64).powf(1.0 - i as f64 / 20.0)).collect();
        for k in 1..40 {
            let s0 = (q[k] - q[k - 1]) / (etas[k] - etas[k - 1]);
            let s1 = (q[k + 1] - q[k]) / (etas[k + 1] - etas[k]);
            assert!(s1 - s0 >= -1e-9 * (1.0 + s0.abs()), "state {a}, step {k}: {s0} then {s1}");
        }
    }
}

#[test]
fn psi_prime_is_increasing() {
    for family in [Family::DiskGaussian, Family::VonMisesFisher { dim: 3 }, Family::SpdGaussian { dim: 2 }] {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..200 {
            let sigma = 0.01 * (1.04f64).powi(i);
            let v = family.psi_prime(family.eta(sigma).unwrap()).unwrap();
            // the vMF scale is κ, so η and ψ′ fall as it grows
            let v = if matches!(family, Family::VonMisesFisher { .. }) { -v } else { v };
            assert!(v > prev, "{family:?} at σ = {sigma}");
            prev = v;
        }
    }
}

#[test]
fn chain_edge_cases() {
    let mut p = paper_face();
    p.p = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    let mut rng = SimConfig::new(6).rng();
    assert!(sample_chain(&p, 500, &mut rng).iter().all(|&s| s == 0));

    let p = paper_face();
    let q = sample_chain(&p, 100_000, &mut rng);
    assert_eq!(q[0], 0);
    let mut n = vec![vec![0.0; 3]; 3];
    for w in q.windows(2) {
        n[w[0]][w[1]] += 1.0;
    }
    for a in 0..3 {
        let row: f64 = n[a].iter().sum();
        for b in 0..3 {
            assert!((n[a][b] / row - p.p[a][b]).abs() < 0.01);
        }
    }
}

#[test]
fn tiny_scale_concentrates() {
    let ybar = disk(0.3, -0.2);
    let s = EmissionSampler::new(&Family::DiskGaussian, &ybar, SIGMA_MIN).unwrap();
    let mut rng = SimConfig::new(7).rng();
    let mut d: Vec<f64> = (0..2001).map(|_| riemannian_distance(&s.sample(&mut rng), &ybar).unwrap()).collect();
    d.sort_by(f64::total_cmp);
    assert!(d[1000] < 3.0 * SIGMA_MIN);
}

/// Energy distance between two samples, in the manifold metric.
fn energy_statistic(a: &[ManifoldPoint], b: &[ManifoldPoint]) -> f64 {
    let mean = |x: &[ManifoldPoint], y: &[ManifoldPoint]| {
        let mut s = 0.0;
        for p in x {
            for q in y {
                s += riemannian_distance(p, q).unwrap();
            }
        }
        s / (x.len() * y.len()) as f64
    };
    2.0 * mean(a, b) - mean(a, a) - mean(b, b)
}

#[test]
fn sampling_at_ybar_matches_transported_base_draws() {
    for family in [Family::DiskGaussian, Family::VonMisesFisher { dim: 3 }, Family::SpdGaussian { dim: 2 }] {
        let ybar = match family.kind() {
            ManifoldKind::Disk => disk(-0.4, 0.5),
            ManifoldKind::Sphere => ManifoldPoint::sphere(vec![0.6, 0.0, -0.8]).unwrap(),
            ManifoldKind::Spd => ManifoldPoint::spd(nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap(),
        };
        let at = EmissionSampler::new(&family, &ybar, 0.7).unwrap();
        let base = EmissionSampler::new(&family, &base_point(family.kind(), family.dim()), 0.7).unwrap();
        let g = isometry_to(&ybar);
        let mut rng = SimConfig::new(8).rng();
        let n = 300;
        let x: Vec<ManifoldPoint> = (0..n).map(|_| at.sample(&mut rng)).collect();
        let y: Vec<ManifoldPoint> = (0..n).map(|_| g.apply(&base.sample(&mut rng)).unwrap()).collect();
        let observed = energy_statistic(&x, &y);
        // permutation null at the 5% level
        let mut pool: Vec<ManifoldPoint> = x.iter().chain(&y).cloned().collect();
        use rand::seq::SliceRandom;
        let mut exceed = 0;
        let rounds = 99;
        for _ in 0..rounds {
            pool.shuffle(&mut rng);
            if energy_statistic(&pool[..n], &pool[n..]) >= observed {
                exceed += 1;
            }
        }
        let p_value = (exceed + 1) as f64 / (rounds + 1) as f64;
        assert!(p_value > 0.05, "{family:?}: p = {p_value}");
    }
}
