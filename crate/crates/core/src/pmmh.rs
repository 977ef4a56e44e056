//! Particle marginal Metropolis-Hastings over model parameters.
//!
//! The chain walks an unconstrained transform of the parameter vector
//! (identity for normal priors, logit for uniform ones) in blocks, accepting
//! against the sum of the estimated data log-likelihood and the transformed
//! prior density. Any unbiased likelihood estimator keeps the invariant
//! distribution exact; the estimate for the current state is carried along,
//! never recomputed. Proposal scales adapt per block toward a target
//! acceptance rate during burn-in and stay frozen afterwards.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::logistic;
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Prior {
    Normal { mean: f64, variance: f64 },
    Uniform { lo: f64, hi: f64 },
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Prior {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Prior::Normal { mean, variance } => mean.is_finite() && variance > 0.0,
            Prior::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidValue {
                what: "prior",
                details: format!("{self:?}"),
            })
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Prior::Normal { mean, variance } => {
                mean + variance.sqrt() * rng.sample::<f64, _>(StandardNormal)
            }
            Prior::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    /// Log density in the original parameter space.
    pub fn log_density(&self, theta: f64) -> f64 {
        match *self {
            Prior::Normal { mean, variance } => {
                -0.5 * (2.0 * std::f64::consts::PI * variance).ln()
                    - (theta - mean).powi(2) / (2.0 * variance)
            }
            Prior::Uniform { lo, hi } => {
                if theta >= lo && theta <= hi {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    fn to_unconstrained(&self, theta: f64) -> f64 {
        match *self {
            Prior::Normal { .. } => theta,
            Prior::Uniform { lo, hi } => {
                let u = ((theta - lo) / (hi - lo)).clamp(1e-12, 1.0 - 1e-12);
                (u / (1.0 - u)).ln()
            }
        }
    }

    fn to_constrained(&self, z: f64) -> f64 {
        match *self {
            Prior::Normal { .. } => z,
            Prior::Uniform { lo, hi } => lo + (hi - lo) * logistic(z),
        }
    }

    /// Log prior density in the unconstrained space, change of variables
    /// included; for the logit transform this is `log u + log(1 - u)`.
    fn log_density_unconstrained(&self, z: f64) -> f64 {
        match *self {
            Prior::Normal { .. } => self.log_density(z),
            Prior::Uniform { .. } => -softplus(z) - softplus(-z),
        }
    }
}

/// One scalar parameter: its prior and the update block it belongs to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub prior: Prior,
    pub block: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PmmhConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub initial_scale: f64,
    pub target_acceptance: f64,
}

impl PmmhConfig {
    pub fn new(iterations: usize, burn_in: usize, seed: u64) -> Self {
        PmmhConfig {
            iterations,
            burn_in,
            seed,
            initial_scale: 0.5,
            target_acceptance: 0.23,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Chain {
    /// Parameter vector after each sweep, original space; includes burn-in.
    pub samples: Vec<Vec<f64>>,
    pub log_likelihoods: Vec<f64>,
    pub log_priors: Vec<f64>,
    /// Per sweep, per block: whether the block move was accepted.
    pub accepted: Vec<Vec<bool>>,
    /// Per sweep: proposal scales after any adaptation in that sweep.
    pub scale_history: Vec<Vec<f64>>,
    /// Post-burn-in acceptance rate per block.
    pub block_acceptance: Vec<f64>,
    /// Frozen proposal scales per block.
    pub scales: Vec<f64>,
    pub burn_in: usize,
}

/// Sum of component log prior densities at `theta`, in the original space;
/// `-inf` outside any component's support.
pub fn log_prior(params: &[ParamSpec], theta: &[f64]) -> f64 {
    debug_assert_eq!(params.len(), theta.len());
    params
        .iter()
        .zip(theta)
        .map(|(p, &v)| p.prior.log_density(v))
        .sum()
}

/// Runs the chain. `log_lik(theta, seed)` must return an unbiased
/// natural-scale likelihood estimate on the log scale for the given
/// evaluation seed (or an exact value, ignoring the seed); `-inf` proposals
/// are rejected outright.
pub fn run_pmmh<F>(
    params: &[ParamSpec],
    init: Option<&[f64]>,
    log_lik: F,
    config: &PmmhConfig,
) -> Result<Chain>
where
    F: Fn(&[f64], u64) -> f64,
{
    if params.is_empty() {
        return Err(Error::InvalidValue {
            what: "parameter list",
            details: "empty".into(),
        });
    }
    for p in params {
        p.prior.validate()?;
    }
    if config.burn_in >= config.iterations {
        return Err(Error::InvalidValue {
            what: "burn-in",
            details: format!(
                "burn-in {} must be below iteration count {}",
                config.burn_in, config.iterations
            ),
        });
    }
    let dim = params.len();
    let n_blocks = params.iter().map(|p| p.block).max().unwrap() + 1;
    let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); n_blocks];
    for (i, p) in params.iter().enumerate() {
        blocks[p.block].push(i);
    }
    if blocks.iter().any(|b| b.is_empty()) {
        return Err(Error::InvalidValue {
            what: "parameter blocks",
            details: "block ids must be contiguous from zero".into(),
        });
    }

    let mut rng = stream_rng(config.seed, 0x504D_4D48);
    let mut theta: Vec<f64> = match init {
        Some(v) => {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    what: "initial parameter vector",
                    expected: dim,
                    found: v.len(),
                });
            }
            v.to_vec()
        }
        None => params.iter().map(|p| p.prior.sample(&mut rng)).collect(),
    };
    let mut z: Vec<f64> = params
        .iter()
        .zip(&theta)
        .map(|(p, &v)| p.prior.to_unconstrained(v))
        .collect();

    let mut eval: u64 = 0;
    let mut next_seed = || {
        let s = derive_seed(config.seed, eval);
        eval += 1;
        s
    };
    let mut cur_ll = log_lik(&theta, next_seed());
    let mut cur_lp: f64 = params
        .iter()
        .zip(&z)
        .map(|(p, &zi)| p.prior.log_density_unconstrained(zi))
        .sum();

    let mut scales = vec![config.initial_scale; n_blocks];
    let mut post_accepts = vec![0u64; n_blocks];
    let mut post_total = vec![0u64; n_blocks];
    let mut samples = Vec::with_capacity(config.iterations);
    let mut log_likelihoods = Vec::with_capacity(config.iterations);
    let mut log_priors = Vec::with_capacity(config.iterations);
    let mut accepted_flags = Vec::with_capacity(config.iterations);
    let mut scale_history = Vec::with_capacity(config.iterations);

    let mut z_prop = z.clone();
    let mut theta_prop = theta.clone();
    for iter in 0..config.iterations {
        let mut sweep_accepted = vec![false; n_blocks];
        for (b, idx) in blocks.iter().enumerate() {
            z_prop.copy_from_slice(&z);
            for &i in idx {
                z_prop[i] += scales[b] * rng.sample::<f64, _>(StandardNormal);
            }
            for (i, p) in params.iter().enumerate() {
                theta_prop[i] = p.prior.to_constrained(z_prop[i]);
            }
            let prop_lp: f64 = params
                .iter()
                .zip(&z_prop)
                .map(|(p, &zi)| p.prior.log_density_unconstrained(zi))
                .sum();
            let prop_ll = if prop_lp == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                log_lik(&theta_prop, next_seed())
            };
            let prop_target = prop_ll + prop_lp;
            let cur_target = cur_ll + cur_lp;
            let accepted = if prop_target == f64::NEG_INFINITY {
                false
            } else if cur_target == f64::NEG_INFINITY {
                true
            } else {
                rng.random::<f64>().ln() < prop_target - cur_target
            };
            if accepted {
                z.copy_from_slice(&z_prop);
                theta.copy_from_slice(&theta_prop);
                cur_ll = prop_ll;
                cur_lp = prop_lp;
            }
            sweep_accepted[b] = accepted;
            if iter < config.burn_in {
                let step = 1.0 / (1.0 + iter as f64).powf(0.6);
                let dir = (accepted as u8 as f64) - config.target_acceptance;
                scales[b] = (scales[b] * (step * dir).exp()).clamp(1e-6, 1e6);
            } else {
                post_accepts[b] += accepted as u64;
                post_total[b] += 1;
            }
        }
        samples.push(theta.clone());
        log_likelihoods.push(cur_ll);
        log_priors.push(log_prior(params, &theta));
        accepted_flags.push(sweep_accepted);
        scale_history.push(scales.clone());
    }

    let block_acceptance = post_accepts
        .iter()
        .zip(&post_total)
        .map(|(&a, &t)| if t > 0 { a as f64 / t as f64 } else { 0.0 })
        .collect();
    Ok(Chain {
        samples,
        log_likelihoods,
        log_priors,
        accepted: accepted_flags,
        scale_history,
        block_acceptance,
        scales,
        burn_in: config.burn_in,
    })
}

/// Empirical quantile by linear interpolation on the sorted values.
pub fn quantile(sorted: &[f64], prob: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = prob.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
