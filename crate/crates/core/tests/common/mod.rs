#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use rsma_ee::rates::BeamformerSet;
use rsma_ee::scenario::{pathloss, ChannelMatrix, Scenario, SystemConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random extended-similarity-like matrix with entries in (0, 1].
pub fn random_r_ext(rng: &mut impl Rng, k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| (0..k).map(|_| rng.random_range(1e-6..1.0)).collect())
        .collect()
}

pub fn complex_gaussian(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Users on the x axis at random distances with real Gaussian fading.
pub fn real_scenario(rng: &mut impl Rng, cfg: SystemConfig, min_fade: f64) -> Scenario {
    let mut positions = Vec::new();
    let mut columns = Vec::new();
    for _ in 0..cfg.n_users {
        let d: f64 = rng.random_range(20.0..250.0);
        let gain = pathloss(d, cfg.min_bs_distance_m).unwrap();
        let col: Vec<f64> = (0..cfg.n_tx)
            .map(|_| loop {
                let g: f64 = rng.sample(StandardNormal);
                if g.abs() >= min_fade {
                    break g * gain.sqrt();
                }
            })
            .collect();
        positions.push([d, 0.0]);
        columns.push(col);
    }
    let noise = vec![cfg.noise_w(); cfg.n_users];
    let ch = ChannelMatrix::from_real_columns(&columns).unwrap();
    Scenario::from_parts(cfg, positions, ch, noise).unwrap()
}

/// Complex Gaussian beams with per-beam powers log-uniform in
/// `[p_min, p_max]` W; each private beam is switched off with probability
/// `p_off`.
pub fn random_beams(rng: &mut impl Rng, k: usize, n: usize, p_min: f64, p_max: f64, p_off: f64) -> BeamformerSet {
    let mut out = BeamformerSet::zeros(k, n);
    for u in 0..k {
        let wp = random_beam(rng, n, p_min, p_max);
        let wc = random_beam(rng, n, p_min, p_max);
        out.set_common(u, wc);
        if rng.random_range(0.0..1.0) < p_off {
            out.deactivate_private(u);
        } else {
            out.set_private(u, wp);
        }
    }
    out
}

fn random_beam(rng: &mut impl Rng, n: usize, p_min: f64, p_max: f64) -> Vec<Complex64> {
    let power = p_min * (p_max / p_min).powf(rng.random_range(0.0..1.0));
    let v: Vec<Complex64> = (0..n).map(|_| complex_gaussian(rng)).collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|z| z * (power.sqrt() / norm)).collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}
