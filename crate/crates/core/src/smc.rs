//! Particle filters over individual-based epidemic models.
//!
//! One engine drives three proposal families. The bootstrap filter samples
//! transitions from the model and weighs by the emission. The adapted
//! filters fold the current reports, and optionally a lookahead guide table,
//! into per-individual proposal masses; the mass totals double as twist
//! factors that tilt the resampling distribution toward particles whose
//! next-step reports remain reachable.
//!
//! Likelihood bookkeeping stays unbiased under any twist: resampled
//! particles carry weight `w[a] / (P * r[a])` for ancestor `a` drawn with
//! probability `r[a]`, and the time-zero normalizer is part of the product.
//! Particle `p` at step `s` draws from its own counter stream, so outputs
//! are bitwise reproducible for a seed regardless of thread count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lookahead::{
    self, check_observation_dims, initial_mass_into, proposal_mass_into, LookaheadTables,
};
use crate::math::{normalize_log_weights, sample_unnormalized, CategoricalCdf};
use crate::model::{count_into_f64, ModelSpec};
use crate::observe::{individual_emission_logprob, ObservationMatrix, ReportingRates};
use crate::rng::{particle_stream, resample_stream, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Prior transitions, emission weights.
    Bpf,
    /// Report-adapted proposals and predictive twist; identical to
    /// `Lookahead { window: 0 }`.
    Apf,
    /// Report-adapted proposals guided `window` steps ahead.
    Lookahead { window: usize },
}

impl Method {
    /// Guide window, or `None` when transitions are proposed blind.
    fn guide_window(self) -> Option<usize> {
        match self {
            Method::Bpf => None,
            Method::Apf => Some(0),
            Method::Lookahead { window } => Some(window),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleScheme {
    Multinomial,
    Systematic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResamplePolicy {
    EveryStep,
    /// Resample when the effective sample size of the (twisted) resampling
    /// distribution drops below this fraction of the particle count.
    EssThreshold(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    pub particles: usize,
    pub method: Method,
    pub policy: ResamplePolicy,
    pub scheme: ResampleScheme,
    pub seed: u64,
    /// Record states, ancestries and weight increments for diagnostics.
    pub record_history: bool,
}

impl FilterConfig {
    pub fn new(particles: usize, method: Method, seed: u64) -> Self {
        FilterConfig {
            particles,
            method,
            policy: ResamplePolicy::EveryStep,
            scheme: ResampleScheme::Multinomial,
            seed,
            record_history: false,
        }
    }
}

/// Per-step particle internals, recorded on request.
#[derive(Debug, Clone, Serialize)]
pub struct FilterHistory {
    /// Entry `s` is the flattened `P x N` state matrix after step `s`.
    pub states: Vec<Vec<u8>>,
    /// Entry `s - 1` maps particle to ancestor at step `s`; identity when no
    /// resampling happened.
    pub ancestors: Vec<Vec<usize>>,
    pub resampled: Vec<bool>,
    /// Entry `s` holds the per-particle log weight increments of step `s`
    /// (entry 0: initialization weights).
    pub log_increments: Vec<Vec<f64>>,
    /// Normalized weights after each step.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FilterOutput {
    /// Estimated data log-likelihood; `-inf` when the filter degenerated.
    pub log_likelihood: f64,
    /// Per-step log normalizers summing to the log-likelihood. Entry 0 is
    /// the initialization factor, entry `s` the increment of step `s`.
    pub step_log_normalizers: Vec<f64>,
    /// Effective sample size of the resampling distribution entering each
    /// step; the final entry is the ESS of the terminal weights.
    pub ess_trace: Vec<f64>,
    /// Weighted compartment-count means per time step.
    pub filtering_count_means: Vec<Vec<f64>>,
    /// First step at which every particle weight vanished, if any; later
    /// trace entries are padding.
    pub degenerate_at: Option<usize>,
    pub history: Option<FilterHistory>,
}

/// Effective sample size `1 / sum p_i^2` of a normalized distribution; zero
/// for an all-zero vector.
pub fn ess(probs: &[f64]) -> f64 {
    let s2: f64 = probs.iter().map(|p| p * p).sum();
    if s2 > 0.0 {
        1.0 / s2
    } else {
        0.0
    }
}

struct ParticleStep {
    state: Vec<u8>,
    counts: Vec<f64>,
    log_incr: f64,
    log_twist: f64,
}

#[inline]
fn fallback_compartment(u: f64, m: usize) -> usize {
    ((u * m as f64) as usize).min(m - 1)
}

/// Twist factor toward the next step: the summed proposal mass the particle
/// will see for each individual, multiplied in log space. `-inf` marks a
/// particle with no continuation compatible with the next reports.
#[allow(clippy::too_many_arguments)]
fn log_twist_for(
    spec: &ModelSpec,
    tables: &LookaheadTables,
    state: &[u8],
    counts: &[f64],
    y_next: &[u8],
    q_next: &[f64],
    s_next: usize,
    kernel: &mut [f64],
    mass: &mut [f64],
) -> f64 {
    let m = spec.compartments();
    let mut log_twist = 0.0;
    for (ind, &x) in state.iter().enumerate() {
        spec.kernel_into(ind, counts, kernel);
        let row = &kernel[(x as usize - 1) * m..x as usize * m];
        let total = proposal_mass_into(row, y_next[ind], q_next, tables.xi_row(s_next, ind), mass);
        log_twist += total.ln();
        if log_twist == f64::NEG_INFINITY {
            break;
        }
    }
    log_twist
}

fn systematic_ancestors(r: &[f64], u: f64, out: &mut [usize]) {
    let pc = out.len() as f64;
    let total: f64 = r.iter().sum();
    let last = r.iter().rposition(|&v| v > 0.0).expect("positive mass");
    let mut idx = 0;
    let mut cum = r[0];
    for (p, slot) in out.iter_mut().enumerate() {
        let pos = (p as f64 + u) / pc * total;
        while cum <= pos && idx < r.len() - 1 {
            idx += 1;
            cum += r[idx];
        }
        *slot = idx.min(last);
    }
}

/// Runs the configured filter over the reports. Degeneracy (all weights
/// zero) is reported through `degenerate_at`, not as an error.
pub fn run_filter(
    spec: &ModelSpec,
    y: &ObservationMatrix,
    q: &ReportingRates,
    config: &FilterConfig,
) -> Result<FilterOutput> {
    let n = spec.population();
    let m = spec.compartments();
    let t = y.horizon();
    let pc = config.particles;
    if pc == 0 {
        return Err(Error::InvalidValue {
            what: "particle count",
            details: "need at least one particle".into(),
        });
    }
    if let ResamplePolicy::EssThreshold(frac) = config.policy {
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(Error::InvalidValue {
                what: "resampling threshold",
                details: format!("fraction {frac} outside (0, 1]"),
            });
        }
    }
    check_observation_dims(spec, y, q)?;
    let tables = match config.method.guide_window() {
        Some(window) => Some(lookahead::build(spec, y, q, window)?),
        None => None,
    };
    let tables = tables.as_ref();
    let seed = config.seed;

    let mut normalizers = vec![f64::NEG_INFINITY; t + 1];
    let mut ess_trace = vec![0.0; t + 1];
    let mut count_means = vec![vec![0.0; m]; t + 1];
    let mut history = config.record_history.then(|| FilterHistory {
        states: Vec::with_capacity(t + 1),
        ancestors: Vec::with_capacity(t),
        resampled: Vec::with_capacity(t),
        log_increments: Vec::with_capacity(t + 1),
        weights: Vec::with_capacity(t + 1),
    });

    // Initialization: sample every individual from its (possibly guided)
    // initial distribution, one uniform per individual.
    let init: Vec<ParticleStep> = (0..pc)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream_rng(seed, particle_stream(0, p));
            let mut kernel = vec![0.0; m * m];
            let mut mass = vec![0.0; m];
            let mut state = vec![0u8; n];
            let mut log_incr = 0.0;
            for ind in 0..n {
                let u: f64 = rng.random();
                let row = spec.initial_row(ind);
                let j = match tables {
                    Some(tb) => {
                        let xi_row = tb.xi_row(0, ind);
                        let total = initial_mass_into(row, xi_row, &mut mass);
                        if total > 0.0 {
                            let j = sample_unnormalized(&mass, u).expect("positive mass");
                            log_incr += total.ln() - xi_row[j].ln();
                            j
                        } else {
                            log_incr = f64::NEG_INFINITY;
                            fallback_compartment(u, m)
                        }
                    }
                    None => sample_unnormalized(row, u)
                        .unwrap_or_else(|| fallback_compartment(u, m)),
                };
                state[ind] = (j + 1) as u8;
            }
            let mut counts = vec![0.0; m];
            count_into_f64(&state, &mut counts);
            let log_twist = match (tables, t > 0 && log_incr > f64::NEG_INFINITY) {
                (Some(tb), true) => log_twist_for(
                    spec,
                    tb,
                    &state,
                    &counts,
                    y.at_time(1),
                    q.at_time(1),
                    1,
                    &mut kernel,
                    &mut mass,
                ),
                _ => 0.0,
            };
            ParticleStep {
                state,
                counts,
                log_incr,
                log_twist,
            }
        })
        .collect();

    let mut states = vec![0u8; pc * n];
    let mut counts = vec![0.0; pc * m];
    let mut log_w = vec![0.0; pc];
    let mut log_twist = vec![0.0; pc];
    let mut weights = vec![0.0; pc];
    for (p, step) in init.iter().enumerate() {
        states[p * n..(p + 1) * n].copy_from_slice(&step.state);
        counts[p * m..(p + 1) * m].copy_from_slice(&step.counts);
        log_w[p] = step.log_incr;
        log_twist[p] = step.log_twist;
    }

    let mut degenerate_at = None;
    let finish_step = |s: usize,
                           log_w: &[f64],
                           counts: &[f64],
                           weights: &mut [f64],
                           count_means: &mut [Vec<f64>],
                           history: &mut Option<FilterHistory>,
                           states: &[u8],
                           increments: &[f64]|
     -> f64 {
        let normalizer = normalize_log_weights(log_w, weights);
        for (p, w) in weights.iter().enumerate() {
            for (cm, c) in count_means[s].iter_mut().zip(&counts[p * m..(p + 1) * m]) {
                *cm += w * c;
            }
        }
        if let Some(h) = history {
            h.states.push(states.to_vec());
            h.log_increments.push(increments.to_vec());
            h.weights.push(weights.to_vec());
        }
        normalizer
    };

    let ln_pc = (pc as f64).ln();
    // The initialization weights are raw density ratios, so their Monte
    // Carlo average carries a 1/P; later steps absorb it into the
    // resampling correction.
    let increments: Vec<f64> = init.iter().map(|s| s.log_incr).collect();
    normalizers[0] = finish_step(
        0,
        &log_w,
        &counts,
        &mut weights,
        &mut count_means,
        &mut history,
        &states,
        &increments,
    ) - ln_pc;
    if normalizers[0] == f64::NEG_INFINITY {
        degenerate_at = Some(0);
    }

    let mut r = vec![0.0; pc];
    let mut lr = vec![0.0; pc];
    let mut ancestors: Vec<usize> = (0..pc).collect();
    let mut base = vec![0.0; pc];

    for s in 1..=t {
        if degenerate_at.is_some() {
            break;
        }
        // Resampling distribution entering step s: weights tilted by the
        // twist factors computed at the end of the previous step.
        if tables.is_some() {
            for p in 0..pc {
                lr[p] = weights[p].ln() + log_twist[p];
            }
            normalize_log_weights(&lr, &mut r);
        } else {
            r.copy_from_slice(&weights);
        }
        let ess_r = ess(&r);
        ess_trace[s - 1] = ess_r;

        let do_resample = ess_r > 0.0
            && match config.policy {
                ResamplePolicy::EveryStep => true,
                ResamplePolicy::EssThreshold(frac) => ess_r < frac * pc as f64,
            };
        if do_resample {
            let mut rng = stream_rng(seed, resample_stream(s));
            match config.scheme {
                ResampleScheme::Multinomial => {
                    let cdf = CategoricalCdf::new(&r);
                    for a in ancestors.iter_mut() {
                        *a = cdf.sample(rng.random());
                    }
                }
                ResampleScheme::Systematic => {
                    systematic_ancestors(&r, rng.random(), &mut ancestors);
                }
            }
            for p in 0..pc {
                let a = ancestors[p];
                base[p] = weights[a].ln() - r[a].ln() - ln_pc;
            }
        } else {
            for (a, p) in ancestors.iter_mut().zip(0..) {
                *a = p;
            }
            for p in 0..pc {
                base[p] = weights[p].ln();
            }
        }

        let y_row = y.at_time(s);
        let q_row = q.at_time(s);
        let next = (s < t).then(|| (y.at_time(s + 1), q.at_time(s + 1)));
        let stepped: Vec<ParticleStep> = (0..pc)
            .into_par_iter()
            .map(|p| {
                let a = ancestors[p];
                let prev_state = &states[a * n..(a + 1) * n];
                let prev_counts = &counts[a * m..(a + 1) * m];
                let mut rng = stream_rng(seed, particle_stream(s, p));
                let mut kernel = vec![0.0; m * m];
                let mut mass = vec![0.0; m];
                let mut state = vec![0u8; n];
                let mut log_incr = 0.0;
                for ind in 0..n {
                    spec.kernel_into(ind, prev_counts, &mut kernel);
                    let x_prev = prev_state[ind] as usize;
                    let row = &kernel[(x_prev - 1) * m..x_prev * m];
                    let u: f64 = rng.random();
                    let j = match tables {
                        Some(tb) => {
                            let xi_row = tb.xi_row(s, ind);
                            let total =
                                proposal_mass_into(row, y_row[ind], q_row, xi_row, &mut mass);
                            if total > 0.0 {
                                let j = sample_unnormalized(&mass, u).expect("positive mass");
                                log_incr += total.ln() - xi_row[j].ln();
                                j
                            } else {
                                log_incr = f64::NEG_INFINITY;
                                fallback_compartment(u, m)
                            }
                        }
                        None => {
                            let j = sample_unnormalized(row, u)
                                .unwrap_or_else(|| fallback_compartment(u, m));
                            log_incr +=
                                individual_emission_logprob((j + 1) as u8, y_row[ind], q_row);
                            j
                        }
                    };
                    state[ind] = (j + 1) as u8;
                }
                let mut cnts = vec![0.0; m];
                count_into_f64(&state, &mut cnts);
                let log_twist = match (tables, next) {
                    (Some(tb), Some((ny, nq))) if log_incr > f64::NEG_INFINITY => log_twist_for(
                        spec,
                        tb,
                        &state,
                        &cnts,
                        ny,
                        nq,
                        s + 1,
                        &mut kernel,
                        &mut mass,
                    ),
                    _ => 0.0,
                };
                ParticleStep {
                    state,
                    counts: cnts,
                    log_incr,
                    log_twist,
                }
            })
            .collect();

        for (p, step) in stepped.iter().enumerate() {
            states[p * n..(p + 1) * n].copy_from_slice(&step.state);
            counts[p * m..(p + 1) * m].copy_from_slice(&step.counts);
            log_w[p] = base[p] + step.log_incr;
            log_twist[p] = step.log_twist;
        }
        if let Some(h) = &mut history {
            h.ancestors.push(ancestors.clone());
            h.resampled.push(do_resample);
        }
        let increments: Vec<f64> = stepped.iter().map(|st| st.log_incr).collect();
        normalizers[s] = finish_step(
            s,
            &log_w,
            &counts,
            &mut weights,
            &mut count_means,
            &mut history,
            &states,
            &increments,
        );
        if normalizers[s] == f64::NEG_INFINITY {
            degenerate_at = Some(s);
        }
    }

    if degenerate_at.is_none() {
        ess_trace[t] = ess(&weights);
    }
    let log_likelihood = if degenerate_at.is_some() {
        f64::NEG_INFINITY
    } else {
        normalizers.iter().sum()
    };
    Ok(FilterOutput {
        log_likelihood,
        step_log_normalizers: normalizers,
        ess_trace,
        filtering_count_means: count_means,
        degenerate_at,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, sis_spec, Covariates, SisParams};
    use crate::observe::observe;
    use crate::rng::stream_rng;
    use approx::assert_relative_eq;

    fn sis(n: usize, seed: u64) -> ModelSpec {
        let mut rng = stream_rng(seed, 900);
        let cov = Covariates::standard(n, &mut rng);
        let params = SisParams {
            beta0: vec![-1.0, 0.0],
            beta_lambda: vec![-0.5, 0.5],
            beta_gamma: vec![-1.0, 0.2],
        };
        sis_spec(&params, &cov).unwrap()
    }

    fn scenario(n: usize, t: usize, q: f64, seed: u64) -> (ModelSpec, ObservationMatrix, ReportingRates) {
        let spec = sis(n, seed);
        let mut rng = stream_rng(seed, 901);
        let traj = simulate(&spec, t, &mut rng);
        let rates = ReportingRates::constant(&[q, q], t).unwrap();
        let y = observe(&traj, &rates, &mut rng).unwrap();
        (spec, y, rates)
    }

    #[test]
    fn bootstrap_likelihood_is_exactly_zero_without_reporting() {
        let (spec, y, rates) = scenario(20, 20, 0.0, 5);
        let out = run_filter(&spec, &y, &rates, &FilterConfig::new(64, Method::Bpf, 9)).unwrap();
        assert_eq!(out.log_likelihood, 0.0);
        assert!(out.step_log_normalizers.iter().all(|&z| z == 0.0));
        assert_eq!(out.degenerate_at, None);
    }

    #[test]
    fn guided_likelihoods_are_tiny_without_reporting() {
        let (spec, y, rates) = scenario(20, 20, 0.0, 6);
        for method in [Method::Apf, Method::Lookahead { window: 3 }] {
            let out = run_filter(&spec, &y, &rates, &FilterConfig::new(64, method, 9)).unwrap();
            assert!(
                out.log_likelihood.abs() < 1e-12,
                "{method:?}: {}",
                out.log_likelihood
            );
        }
    }

    #[test]
    fn adapted_filter_equals_zero_window_lookahead_bitwise() {
        let (spec, y, rates) = scenario(15, 12, 0.7, 11);
        let mut ca = FilterConfig::new(64, Method::Apf, 21);
        ca.record_history = true;
        let mut cl = FilterConfig::new(64, Method::Lookahead { window: 0 }, 21);
        cl.record_history = true;
        let a = run_filter(&spec, &y, &rates, &ca).unwrap();
        let l = run_filter(&spec, &y, &rates, &cl).unwrap();
        assert_eq!(a.log_likelihood.to_bits(), l.log_likelihood.to_bits());
        for (x, z) in a.step_log_normalizers.iter().zip(&l.step_log_normalizers) {
            assert_eq!(x.to_bits(), z.to_bits());
        }
        for (x, z) in a.ess_trace.iter().zip(&l.ess_trace) {
            assert_eq!(x.to_bits(), z.to_bits());
        }
        for (cm_a, cm_l) in a.filtering_count_means.iter().zip(&l.filtering_count_means) {
            assert_eq!(cm_a, cm_l);
        }
        assert_eq!(
            a.history.unwrap().states,
            l.history.unwrap().states
        );
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let (spec, y, rates) = scenario(20, 10, 0.6, 13);
        let config = FilterConfig::new(128, Method::Lookahead { window: 2 }, 31);
        let run_with = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_filter(&spec, &y, &rates, &config).unwrap())
        };
        let one = run_with(1);
        let four = run_with(4);
        assert_eq!(one.log_likelihood.to_bits(), four.log_likelihood.to_bits());
        assert_eq!(one.ess_trace, four.ess_trace);
        assert_eq!(one.filtering_count_means, four.filtering_count_means);
    }

    /// Model whose individuals can never enter compartment 2, observed with
    /// a compartment-2 report at time 1.
    fn impossible_scenario(n: usize, t: usize) -> (ModelSpec, ObservationMatrix, ReportingRates) {
        let cov = Covariates::new(n, 2, (0..n).flat_map(|_| [1.0, 0.0]).collect()).unwrap();
        let params = SisParams {
            beta0: vec![-800.0, 0.0],
            beta_lambda: vec![-800.0, 0.0],
            beta_gamma: vec![-1.0, 0.0],
        };
        let spec = sis_spec(&params, &cov).unwrap();
        let mut data = vec![0u8; t * n];
        data[0] = 2;
        let y = ObservationMatrix::new(t, n, 2, data).unwrap();
        let rates = ReportingRates::constant(&[0.5, 0.5], t).unwrap();
        (spec, y, rates)
    }

    #[test]
    fn bootstrap_degenerates_on_contradictory_reports() {
        let (spec, y, rates) = impossible_scenario(10, 4);
        let out = run_filter(&spec, &y, &rates, &FilterConfig::new(32, Method::Bpf, 3)).unwrap();
        assert_eq!(out.degenerate_at, Some(1));
        assert_eq!(out.log_likelihood, f64::NEG_INFINITY);
        assert!(out.ess_trace[0] > 31.0);
        assert!(out.ess_trace[1..].iter().all(|&e| e == 0.0));
        assert!(out.step_log_normalizers[1..]
            .iter()
            .all(|&z| z == f64::NEG_INFINITY));
        assert!(out.filtering_count_means[1].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn lookahead_detects_contradictory_reports_at_initialization() {
        let (spec, y, rates) = impossible_scenario(10, 4);
        let config = FilterConfig::new(32, Method::Lookahead { window: 3 }, 3);
        let out = run_filter(&spec, &y, &rates, &config).unwrap();
        assert_eq!(out.degenerate_at, Some(0));
        assert_eq!(out.log_likelihood, f64::NEG_INFINITY);
    }

    #[test]
    fn increments_match_twist_over_guide_ratio() {
        let (spec, y, rates) = scenario(8, 10, 0.6, 17);
        let n = spec.population();
        let m = spec.compartments();
        let window = 2;
        let mut config = FilterConfig::new(16, Method::Lookahead { window }, 23);
        config.record_history = true;
        let out = run_filter(&spec, &y, &rates, &config).unwrap();
        assert_eq!(out.degenerate_at, None);
        let h = out.history.unwrap();
        let tables = lookahead::build(&spec, &y, &rates, window).unwrap();

        let mut kernel = vec![0.0; m * m];
        let mut mass = vec![0.0; m];
        for p in 0..16 {
            // Initialization: total initial mass over guide value at the
            // sampled compartment.
            let state = &h.states[0][p * n..(p + 1) * n];
            let mut expected = 0.0;
            for ind in 0..n {
                let total =
                    initial_mass_into(spec.initial_row(ind), tables.xi_row(0, ind), &mut mass);
                expected += total.ln() - tables.xi_row(0, ind)[state[ind] as usize - 1].ln();
            }
            assert_relative_eq!(h.log_increments[0][p], expected, epsilon = 1e-10);
        }
        for s in 1..=y.horizon() {
            for p in 0..16 {
                let a = h.ancestors[s - 1][p];
                let prev = &h.states[s - 1][a * n..(a + 1) * n];
                let cur = &h.states[s][p * n..(p + 1) * n];
                let mut prev_counts = vec![0.0; m];
                count_into_f64(prev, &mut prev_counts);
                let mut expected = 0.0;
                for ind in 0..n {
                    spec.kernel_into(ind, &prev_counts, &mut kernel);
                    let x_prev = prev[ind] as usize;
                    let row = &kernel[(x_prev - 1) * m..x_prev * m];
                    let xi_row = tables.xi_row(s, ind);
                    let total = proposal_mass_into(
                        row,
                        y.at_time(s)[ind],
                        rates.at_time(s),
                        xi_row,
                        &mut mass,
                    );
                    expected += total.ln() - xi_row[cur[ind] as usize - 1].ln();
                }
                let got = h.log_increments[s][p];
                if expected == f64::NEG_INFINITY {
                    assert_eq!(got, f64::NEG_INFINITY);
                } else {
                    assert_relative_eq!(got, expected, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn ess_trace_is_well_formed_under_each_policy_and_scheme() {
        let (spec, y, rates) = scenario(12, 15, 0.5, 19);
        for policy in [ResamplePolicy::EveryStep, ResamplePolicy::EssThreshold(0.5)] {
            for scheme in [ResampleScheme::Multinomial, ResampleScheme::Systematic] {
                let config = FilterConfig {
                    particles: 64,
                    method: Method::Lookahead { window: 2 },
                    policy,
                    scheme,
                    seed: 41,
                    record_history: false,
                };
                let out = run_filter(&spec, &y, &rates, &config).unwrap();
                assert_eq!(out.ess_trace.len(), 16);
                assert!(out.log_likelihood.is_finite());
                for &e in &out.ess_trace {
                    assert!(e > 0.0 && e <= 64.0 * (1.0 + 1e-9), "ess {e}");
                }
            }
        }
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let (spec, y, rates) = scenario(10, 8, 0.4, 29);
        let config = FilterConfig::new(32, Method::Apf, 77);
        let a = run_filter(&spec, &y, &rates, &config).unwrap();
        let b = run_filter(&spec, &y, &rates, &config).unwrap();
        assert_eq!(a.log_likelihood.to_bits(), b.log_likelihood.to_bits());
    }

    #[test]
    fn rejects_zero_particles_and_bad_thresholds() {
        let (spec, y, rates) = scenario(5, 3, 0.5, 31);
        assert!(run_filter(&spec, &y, &rates, &FilterConfig::new(0, Method::Bpf, 1)).is_err());
        let mut config = FilterConfig::new(8, Method::Bpf, 1);
        config.policy = ResamplePolicy::EssThreshold(1.5);
        assert!(run_filter(&spec, &y, &rates, &config).is_err());
    }
}
