//! Individual-based compartmental models.
//!
//! A population of `N` individuals moves between `M` compartments in discrete
//! time. Compartments are labelled `1..=M` (0 is reserved by the observation
//! layer for "unreported"). Transition kernels are per-individual `M x M`
//! row-stochastic matrices that may depend on the current compartment counts,
//! which is the only coupling between individuals.

use crate::error::{Error, Result};
use crate::math::{dot, logistic, sample_unnormalized};
use rand::Rng;
use rand_distr::StandardNormal;

/// Per-individual covariate rows (`N x d`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl Covariates {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                what: "covariate matrix",
                expected: n * d,
                found: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidValue {
                what: "covariate matrix",
                details: "non-finite entry".into(),
            });
        }
        Ok(Self { n, d, data })
    }

    /// Rows `[1, z_n]` with `z_n` standard normal: the experiment default.
    pub fn standard<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut data = Vec::with_capacity(n * 2);
        for _ in 0..n {
            data.push(1.0);
            data.push(rng.sample(StandardNormal));
        }
        Self { n, d: 2, data }
    }

    pub fn individuals(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.d..(n + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SisParams {
    pub beta0: Vec<f64>,
    pub beta_lambda: Vec<f64>,
    pub beta_gamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeirParams {
    pub beta0: Vec<f64>,
    pub beta_lambda: Vec<f64>,
    /// Rate of leaving the exposed compartment; dwell is geometric with
    /// stay probability exp(-rho).
    pub rho: f64,
    pub beta_gamma: Vec<f64>,
}

pub type KernelFn = Box<dyn Fn(usize, &[f64], &mut [f64]) + Send + Sync>;

/// A complete model: initial distribution per individual plus the
/// count-conditional transition kernel.
pub struct ModelSpec {
    population: usize,
    compartments: usize,
    initial_probs: Vec<f64>,
    kernel: KernelFn,
}

impl ModelSpec {
    /// `initial_probs` is `N x M` row-major; every row must lie on the
    /// simplex within 1e-12. The kernel is spot-checked for row-stochastic
    /// output at the count-simplex corners and centroid.
    pub fn new(
        population: usize,
        compartments: usize,
        initial_probs: Vec<f64>,
        kernel: KernelFn,
    ) -> Result<Self> {
        if population == 0 || compartments == 0 {
            return Err(Error::InvalidValue {
                what: "model dimensions",
                details: format!("N={population}, M={compartments}"),
            });
        }
        if initial_probs.len() != population * compartments {
            return Err(Error::DimensionMismatch {
                what: "initial probability matrix",
                expected: population * compartments,
                found: initial_probs.len(),
            });
        }
        for (n, row) in initial_probs.chunks_exact(compartments).enumerate() {
            check_simplex_row(row, 1e-12).map_err(|details| Error::InvalidValue {
                what: "initial probability row",
                details: format!("individual {n}: {details}"),
            })?;
        }
        let spec = Self {
            population,
            compartments,
            initial_probs,
            kernel,
        };
        spec.spot_check_kernel()?;
        Ok(spec)
    }

    fn spot_check_kernel(&self) -> Result<()> {
        let m = self.compartments;
        let nf = self.population as f64;
        let mut probe_counts: Vec<Vec<f64>> = (0..m)
            .map(|i| {
                let mut c = vec![0.0; m];
                c[i] = nf;
                c
            })
            .collect();
        probe_counts.push(vec![nf / m as f64; m]);
        let mut row_buf = vec![0.0; m * m];
        let probe_individuals = [0, self.population - 1];
        for c in &probe_counts {
            for &n in &probe_individuals {
                self.kernel_into(n, c, &mut row_buf);
                for (i, row) in row_buf.chunks_exact(m).enumerate() {
                    check_simplex_row(row, 1e-12).map_err(|details| Error::InvalidValue {
                        what: "kernel row",
                        details: format!("individual {n}, source {}, c={c:?}: {details}", i + 1),
                    })?;
                }
            }
        }
        Ok(())
    }

    pub fn population(&self) -> usize {
        self.population
    }

    pub fn compartments(&self) -> usize {
        self.compartments
    }

    /// Initial distribution of individual `n` over compartments `1..=M`.
    pub fn initial_row(&self, n: usize) -> &[f64] {
        &self.initial_probs[n * self.compartments..(n + 1) * self.compartments]
    }

    /// Writes the `M x M` transition matrix of individual `n` at counts `c`
    /// into `out` (row-major; row = source compartment - 1).
    #[inline]
    pub fn kernel_into(&self, n: usize, c: &[f64], out: &mut [f64]) {
        debug_assert_eq!(c.len(), self.compartments);
        debug_assert_eq!(out.len(), self.compartments * self.compartments);
        (self.kernel)(n, c, out);
    }

    pub fn kernel_matrix(&self, n: usize, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.compartments * self.compartments];
        self.kernel_into(n, c, &mut out);
        out
    }
}

impl std::fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelSpec")
            .field("population", &self.population)
            .field("compartments", &self.compartments)
            .finish_non_exhaustive()
    }
}

fn check_simplex_row(row: &[f64], tol: f64) -> std::result::Result<(), String> {
    let mut sum = 0.0;
    for &p in row {
        if !(p >= 0.0) || p > 1.0 + tol {
            return Err(format!("entry {p} outside [0, 1]"));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > tol {
        return Err(format!("row sums to {sum}"));
    }
    Ok(())
}

/// Compartment assignment of every individual at one time point; values in
/// `1..=M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PopulationState {
    values: Vec<u8>,
}

impl PopulationState {
    pub fn new(values: Vec<u8>, compartments: usize) -> Result<Self> {
        if let Some(&bad) = values.iter().find(|&&v| v == 0 || v as usize > compartments) {
            return Err(Error::InvalidValue {
                what: "population state",
                details: format!("compartment {bad} outside 1..={compartments}"),
            });
        }
        Ok(Self { values })
    }

    pub(crate) fn from_raw(values: Vec<u8>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }
}

/// Integer tallies per compartment; sums to `N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompartmentCounts {
    counts: Vec<u32>,
}

impl CompartmentCounts {
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }

    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }
}

/// Tallies `state` into `M` compartment counts.
pub fn count_compartments(state: &PopulationState, compartments: usize) -> CompartmentCounts {
    let mut counts = vec![0u32; compartments];
    for &v in state.values() {
        counts[v as usize - 1] += 1;
    }
    CompartmentCounts { counts }
}

/// Engine-facing variant writing real-valued counts into `out`.
#[inline]
pub(crate) fn count_into_f64(values: &[u8], out: &mut [f64]) {
    out.fill(0.0);
    for &v in values {
        out[v as usize - 1] += 1.0;
    }
}

/// A simulated latent path: states and counts at times `0..=t`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<PopulationState>,
    pub counts: Vec<CompartmentCounts>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }
}

/// Draws a latent path of length `horizon` (so `horizon + 1` states).
/// Consumes exactly `N * (horizon + 1)` uniforms from `rng` in individual
/// order, making the draw a pure function of the rng state.
pub fn simulate<R: Rng>(spec: &ModelSpec, horizon: usize, rng: &mut R) -> Trajectory {
    let n = spec.population();
    let m = spec.compartments();
    let mut states = Vec::with_capacity(horizon + 1);
    let mut counts = Vec::with_capacity(horizon + 1);

    let mut values = Vec::with_capacity(n);
    for ind in 0..n {
        let u: f64 = rng.random();
        let j = sample_unnormalized(spec.initial_row(ind), u).expect("initial row has zero mass");
        values.push(j as u8 + 1);
    }
    let state = PopulationState::from_raw(values);
    counts.push(count_compartments(&state, m));
    states.push(state);

    let mut kmat = vec![0.0; m * m];
    for s in 1..=horizon {
        let prev = states[s - 1].values().to_vec();
        let c_prev = counts[s - 1].as_f64();
        let mut values = Vec::with_capacity(n);
        for (ind, &x_prev) in prev.iter().enumerate() {
            spec.kernel_into(ind, &c_prev, &mut kmat);
            let row = &kmat[(x_prev as usize - 1) * m..x_prev as usize * m];
            let u: f64 = rng.random();
            let j = sample_unnormalized(row, u).expect("kernel row has zero mass");
            values.push(j as u8 + 1);
        }
        let state = PopulationState::from_raw(values);
        counts.push(count_compartments(&state, m));
        states.push(state);
    }
    Trajectory { states, counts }
}

/// SIS model: compartments 1=susceptible, 2=infected. Infection probability
/// for a susceptible individual is `logistic(beta_lambda . w_n) * c2 / N`;
/// recovery returns the individual to compartment 1.
pub fn sis_spec(params: &SisParams, covariates: &Covariates) -> Result<ModelSpec> {
    let n = covariates.individuals();
    let d = covariates.dim();
    for (name, beta) in [
        ("beta0", &params.beta0),
        ("beta_lambda", &params.beta_lambda),
        ("beta_gamma", &params.beta_gamma),
    ] {
        check_beta(name, beta, d)?;
    }

    let mut initial_probs = Vec::with_capacity(n * 2);
    let mut lambda = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    for w in covariates.rows() {
        let p0 = logistic(dot(&params.beta0, w));
        initial_probs.push(1.0 - p0);
        initial_probs.push(p0);
        lambda.push(logistic(dot(&params.beta_lambda, w)));
        gamma.push(logistic(dot(&params.beta_gamma, w)));
    }

    let nf = n as f64;
    let kernel: KernelFn = Box::new(move |ind, c, out| {
        let infect = lambda[ind] * (c[1] / nf);
        out[0] = 1.0 - infect;
        out[1] = infect;
        out[2] = gamma[ind];
        out[3] = 1.0 - gamma[ind];
    });
    ModelSpec::new(n, 2, initial_probs, kernel)
}

/// SEIR model: compartments 1=S, 2=E, 3=I, 4=R. Exposure pressure comes from
/// compartment 3; the exposed dwell has stay probability `exp(-rho)`; the
/// removed compartment is absorbing. Initially infected individuals start
/// in compartment 3.
pub fn seir_spec(params: &SeirParams, covariates: &Covariates) -> Result<ModelSpec> {
    let n = covariates.individuals();
    let d = covariates.dim();
    for (name, beta) in [
        ("beta0", &params.beta0),
        ("beta_lambda", &params.beta_lambda),
        ("beta_gamma", &params.beta_gamma),
    ] {
        check_beta(name, beta, d)?;
    }
    if !(params.rho > 0.0 && params.rho.is_finite()) {
        return Err(Error::InvalidValue {
            what: "rho",
            details: format!("{} is not a positive rate", params.rho),
        });
    }

    let mut initial_probs = Vec::with_capacity(n * 4);
    let mut lambda = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    for w in covariates.rows() {
        let p0 = logistic(dot(&params.beta0, w));
        initial_probs.extend_from_slice(&[1.0 - p0, 0.0, p0, 0.0]);
        lambda.push(logistic(dot(&params.beta_lambda, w)));
        gamma.push(logistic(dot(&params.beta_gamma, w)));
    }
    let stay_exposed = (-params.rho).exp();

    let nf = n as f64;
    let kernel: KernelFn = Box::new(move |ind, c, out| {
        out.fill(0.0);
        let expose = lambda[ind] * (c[2] / nf);
        out[0] = 1.0 - expose;
        out[1] = expose;
        out[5] = stay_exposed;
        out[6] = 1.0 - stay_exposed;
        out[10] = 1.0 - gamma[ind];
        out[11] = gamma[ind];
        out[15] = 1.0;
    });
    ModelSpec::new(n, 4, initial_probs, kernel)
}

fn check_beta(name: &'static str, beta: &[f64], d: usize) -> Result<()> {
    if beta.len() != d {
        return Err(Error::DimensionMismatch {
            what: name,
            expected: d,
            found: beta.len(),
        });
    }
    if beta.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidValue {
            what: name,
            details: "non-finite entry".into(),
        });
    }
    Ok(())
}
