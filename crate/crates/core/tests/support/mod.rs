//! Shared fixtures and statistics helpers for integration tests.

use epi_smc_core::model::{
    seir_spec, simulate, sis_spec, Covariates, ModelSpec, SeirParams, SisParams, Trajectory,
};
use epi_smc_core::observe::{observe, ObservationMatrix, ReportingRates};
use epi_smc_core::rng::stream_rng;

pub struct Scenario {
    pub spec: ModelSpec,
    pub covariates: Covariates,
    pub trajectory: Trajectory,
    pub y: ObservationMatrix,
    pub q: ReportingRates,
}

/// SIS population with standard-normal covariates, simulated and observed
/// under constant reporting rates.
pub fn sis_scenario(n: usize, t: usize, params: &SisParams, q: &[f64; 2], seed: u64) -> Scenario {
    let mut rng = stream_rng(seed, 0xC0F);
    let cov = Covariates::standard(n, &mut rng);
    let spec = sis_spec(params, &cov).unwrap();
    let trajectory = simulate(&spec, t, &mut rng);
    let rates = ReportingRates::constant(q, t).unwrap();
    let y = observe(&trajectory, &rates, &mut rng).unwrap();
    Scenario {
        spec,
        covariates: cov,
        trajectory,
        y,
        q: rates,
    }
}

/// SEIR counterpart of `sis_scenario`.
pub fn seir_scenario(
    n: usize,
    t: usize,
    params: &SeirParams,
    q: &[f64; 4],
    seed: u64,
) -> Scenario {
    let mut rng = stream_rng(seed, 0xC0F);
    let cov = Covariates::standard(n, &mut rng);
    let spec = seir_spec(params, &cov).unwrap();
    let trajectory = simulate(&spec, t, &mut rng);
    let rates = ReportingRates::constant(q, t).unwrap();
    let y = observe(&trajectory, &rates, &mut rng).unwrap();
    Scenario {
        spec,
        covariates: cov,
        trajectory,
        y,
        q: rates,
    }
}

/// Data-generating parameters used across the experiment suite: infection
/// scale calibrated so one expected initial infection, moderate recovery.
pub fn dgp_sis_params(n: usize) -> SisParams {
    SisParams {
        beta0: vec![-((n - 1) as f64).ln(), 0.0],
        beta_lambda: vec![-1.0, 2.0],
        beta_gamma: vec![-1.0, -1.0],
    }
}

/// SEIR analog: a tenth of the population starts infectious and exposure
/// pressure is strong enough for reliable outbreaks.
pub fn dgp_seir_params(n: usize) -> SeirParams {
    SeirParams {
        beta0: vec![-((n as f64) / 10.0 - 1.0).ln(), 0.0],
        beta_lambda: vec![1.0, 2.0],
        rho: 0.2,
        beta_gamma: vec![-1.0, -1.0],
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    var.sqrt()
}

pub fn standard_error(xs: &[f64]) -> f64 {
    std_dev(xs) / (xs.len() as f64).sqrt()
}

/// Two-sample Kolmogorov-Smirnov test. Returns `(statistic, p_value)` using
/// the asymptotic Kolmogorov distribution with the effective sample size.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut xs: Vec<f64> = a.to_vec();
    let mut ys: Vec<f64> = b.to_vec();
    xs.sort_by(|u, v| u.partial_cmp(v).unwrap());
    ys.sort_by(|u, v| u.partial_cmp(v).unwrap());
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let mut d: f64 = 0.0;
    let (mut i, mut j) = (0usize, 0usize);
    while i < xs.len() && j < ys.len() {
        if xs[i] <= ys[j] {
            i += 1;
        } else {
            j += 1;
        }
        let fa = i as f64 / na;
        let fb = j as f64 / nb;
        d = d.max((fa - fb).abs());
    }
    let n_eff = na * nb / (na + nb);
    let lambda = (n_eff.sqrt() + 0.12 + 0.11 / n_eff.sqrt()) * d;
    // Kolmogorov survival function, alternating series.
    let mut p = 0.0;
    for k in 1..=100 {
        let sign = if k % 2 == 1 { 2.0 } else { -2.0 };
        p += sign * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
    }
    (d, p.clamp(0.0, 1.0))
}
