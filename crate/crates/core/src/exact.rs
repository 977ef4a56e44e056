//! Exact inference by joint-state enumeration.
//!
//! For tiny populations the joint chain over all `M^N` assignments is small
//! enough to run the forward algorithm and optimal-proposal recursions
//! exactly. These routines are the reference the particle methods are
//! validated against; they favour clarity over speed and hold
//! `(t + 1) * M^N` filtering values plus an `N * M^N` decode cache in memory.

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::observe::{ObservationMatrix, ReportingRates};

/// Default cap on the joint state count `M^N`.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

/// Mixed-radix codec between joint assignments `(x_1, ..., x_N)` with
/// `x_n in 1..=M` and indices in `0..M^N`; individual 0 is the least
/// significant digit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointStateIndex {
    individuals: usize,
    compartments: usize,
    states: usize,
}

impl JointStateIndex {
    pub fn new(individuals: usize, compartments: usize, cap: usize) -> Result<Self> {
        let mut states: u128 = 1;
        for _ in 0..individuals {
            states = states.saturating_mul(compartments as u128);
            if states > cap as u128 {
                return Err(Error::StateSpaceTooLarge { states, cap });
            }
        }
        Ok(Self {
            individuals,
            compartments,
            states: states as usize,
        })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn individuals(&self) -> usize {
        self.individuals
    }

    pub fn encode(&self, values: &[u8]) -> usize {
        debug_assert_eq!(values.len(), self.individuals);
        let mut idx = 0usize;
        for &v in values.iter().rev() {
            debug_assert!((1..=self.compartments as u8).contains(&v));
            idx = idx * self.compartments + (v as usize - 1);
        }
        idx
    }

    pub fn decode_into(&self, mut idx: usize, out: &mut [u8]) {
        debug_assert_eq!(out.len(), self.individuals);
        for v in out.iter_mut() {
            *v = (idx % self.compartments) as u8 + 1;
            idx /= self.compartments;
        }
    }
}

/// Dense enumeration caches shared by the exact routines.
struct Enumeration {
    index: JointStateIndex,
    /// Joint assignments, `states x N`.
    values: Vec<u8>,
    /// Compartment counts per joint state, `states x M`.
    counts: Vec<f64>,
}

impl Enumeration {
    fn build(spec: &ModelSpec, cap: usize) -> Result<Self> {
        let n = spec.population();
        let m = spec.compartments();
        let index = JointStateIndex::new(n, m, cap)?;
        let states = index.states();
        let mut values = vec![0u8; states * n];
        let mut counts = vec![0.0; states * m];
        for i in 0..states {
            let row = &mut values[i * n..(i + 1) * n];
            index.decode_into(i, row);
            let crow = &mut counts[i * m..(i + 1) * m];
            for &v in row.iter() {
                crow[v as usize - 1] += 1.0;
            }
        }
        Ok(Self {
            index,
            values,
            counts,
        })
    }

    fn values(&self, i: usize) -> &[u8] {
        let n = self.index.individuals;
        &self.values[i * n..(i + 1) * n]
    }

    fn counts(&self, i: usize) -> &[f64] {
        let m = self.index.compartments;
        &self.counts[i * m..(i + 1) * m]
    }

    /// Per-individual kernels at counts `c`, concatenated `N x M x M`.
    fn kernels_at(&self, spec: &ModelSpec, c: &[f64], out: &mut [f64]) {
        let m = self.index.compartments;
        for n in 0..self.index.individuals {
            spec.kernel_into(n, c, &mut out[n * m * m..(n + 1) * m * m]);
        }
    }

    /// Joint transition probability using the kernels in `kmats`.
    fn transition(&self, kmats: &[f64], from: usize, to: usize) -> f64 {
        let m = self.index.compartments;
        let src = self.values(from);
        let dst = self.values(to);
        let mut p = 1.0;
        for n in 0..src.len() {
            p *= kmats[n * m * m + (src[n] as usize - 1) * m + (dst[n] as usize - 1)];
            if p == 0.0 {
                return 0.0;
            }
        }
        p
    }

    /// Linear-scale emission weight of one report row at joint state `i`.
    fn emission(&self, i: usize, y_row: &[u8], q_row: &[f64]) -> f64 {
        let mut w = 1.0;
        for (&x, &y) in self.values(i).iter().zip(y_row) {
            let q = q_row[x as usize - 1];
            w *= if y == 0 {
                1.0 - q
            } else if y == x {
                q
            } else {
                0.0
            };
            if w == 0.0 {
                return 0.0;
            }
        }
        w
    }
}

/// Exact filtering distributions and likelihood.
pub struct ExactForward {
    pub log_likelihood: f64,
    /// One factor per observation time `1..=t`.
    pub step_log_normalizers: Vec<f64>,
    /// Filtering distribution over joint states at each time `0..=t`. Rows
    /// after a zero-likelihood step are all zero.
    pub filtering: Vec<Vec<f64>>,
    index: JointStateIndex,
    counts: Vec<f64>,
}

impl ExactForward {
    pub fn index(&self) -> &JointStateIndex {
        &self.index
    }

    /// Mean compartment counts under the filtering distribution at time `s`.
    pub fn filtering_count_mean(&self, s: usize) -> Vec<f64> {
        let m = self.index.compartments;
        let mut mean = vec![0.0; m];
        for (i, &p) in self.filtering[s].iter().enumerate() {
            if p > 0.0 {
                for k in 0..m {
                    mean[k] += p * self.counts[i * m + k];
                }
            }
        }
        mean
    }

    /// Filtering marginal of individual `n` at time `s`.
    pub fn individual_marginal(&self, s: usize, n: usize) -> Vec<f64> {
        let m = self.index.compartments;
        let nn = self.index.individuals;
        let mut marg = vec![0.0; m];
        let mut buf = vec![0u8; nn];
        for (i, &p) in self.filtering[s].iter().enumerate() {
            if p > 0.0 {
                self.index.decode_into(i, &mut buf);
                marg[buf[n] as usize - 1] += p;
            }
        }
        marg
    }
}

/// Runs the forward algorithm on the joint chain. Errors only on dimension
/// or state-cap violations; data with zero likelihood yields
/// `log_likelihood = -inf`.
pub fn exact_forward(
    spec: &ModelSpec,
    y: &ObservationMatrix,
    q: &ReportingRates,
    cap: usize,
) -> Result<ExactForward> {
    let n = spec.population();
    let m = spec.compartments();
    check_data_dims(spec, y, q)?;
    let enumeration = Enumeration::build(spec, cap)?;
    let states = enumeration.index.states();
    let t = y.horizon();

    let mut alpha = vec![0.0; states];
    for (i, a) in alpha.iter_mut().enumerate() {
        let mut p = 1.0;
        for (ind, &v) in enumeration.values(i).iter().enumerate() {
            p *= spec.initial_row(ind)[v as usize - 1];
        }
        *a = p;
    }

    let mut filtering = Vec::with_capacity(t + 1);
    filtering.push(alpha.clone());
    let mut step_log_normalizers = Vec::with_capacity(t);
    let mut log_likelihood = 0.0;
    let mut kmats = vec![0.0; n * m * m];
    let mut pred = vec![0.0; states];

    for s in 1..=t {
        pred.fill(0.0);
        for i in 0..states {
            if alpha[i] == 0.0 {
                continue;
            }
            enumeration.kernels_at(spec, enumeration.counts(i), &mut kmats);
            for (j, pj) in pred.iter_mut().enumerate() {
                let p = enumeration.transition(&kmats, i, j);
                if p > 0.0 {
                    *pj += alpha[i] * p;
                }
            }
        }
        let y_row = y.at_time(s);
        let q_row = q.at_time(s);
        for (j, pj) in pred.iter_mut().enumerate() {
            if *pj > 0.0 {
                *pj *= enumeration.emission(j, y_row, q_row);
            }
        }
        let z: f64 = pred.iter().sum();
        if !(z > 0.0) {
            log_likelihood = f64::NEG_INFINITY;
            step_log_normalizers.push(f64::NEG_INFINITY);
            for _ in s..=t {
                filtering.push(vec![0.0; states]);
            }
            break;
        }
        step_log_normalizers.push(z.ln());
        log_likelihood += z.ln();
        for (a, &p) in alpha.iter_mut().zip(pred.iter()) {
            *a = p / z;
        }
        filtering.push(alpha.clone());
    }

    Ok(ExactForward {
        log_likelihood,
        step_log_normalizers,
        filtering,
        index: enumeration.index,
        counts: enumeration.counts,
    })
}

/// Exact conditional `p(x_s | x_{s-1}, y_{[s : s+window]})` over joint
/// states, by backward enumeration over the window.
///
/// The transition out of `x_prev` always uses the exact counts of `x_prev`.
/// Inside the window the kernels use each enumerated state's own counts
/// unless `counts_by_time` is given, in which case the kernel at source time
/// `tau` uses `counts_by_time[tau]` for every state (the fixed-rate
/// conditional the lookahead proposal targets).
pub fn exact_optimal_proposal(
    spec: &ModelSpec,
    y: &ObservationMatrix,
    q: &ReportingRates,
    x_prev: &crate::model::PopulationState,
    s: usize,
    window: usize,
    counts_by_time: Option<&[Vec<f64>]>,
    cap: usize,
) -> Result<Vec<f64>> {
    let n = spec.population();
    let m = spec.compartments();
    check_data_dims(spec, y, q)?;
    let t = y.horizon();
    if s == 0 || s > t {
        return Err(Error::InvalidValue {
            what: "proposal step",
            details: format!("s={s} outside 1..={t}"),
        });
    }
    if x_prev.len() != n {
        return Err(Error::DimensionMismatch {
            what: "previous state",
            expected: n,
            found: x_prev.len(),
        });
    }
    let enumeration = Enumeration::build(spec, cap)?;
    let states = enumeration.index.states();
    let w_eff = window.min(t - s);
    if let Some(counts) = counts_by_time {
        if counts.len() < s + w_eff {
            return Err(Error::DimensionMismatch {
                what: "counts_by_time",
                expected: s + w_eff,
                found: counts.len(),
            });
        }
    }

    let mut beta = vec![1.0; states];
    let mut next = vec![0.0; states];
    let mut kmats = vec![0.0; n * m * m];
    for tau in (s..s + w_eff).rev() {
        let y_row = y.at_time(tau + 1);
        let q_row = q.at_time(tau + 1);
        for i in 0..states {
            let c = counts_by_time.map_or_else(|| enumeration.counts(i), |o| o[tau].as_slice());
            enumeration.kernels_at(spec, c, &mut kmats);
            let mut acc = 0.0;
            for (j, &b) in beta.iter().enumerate() {
                if b > 0.0 {
                    let e = enumeration.emission(j, y_row, q_row);
                    if e > 0.0 {
                        acc += enumeration.transition(&kmats, i, j) * e * b;
                    }
                }
            }
            next[i] = acc;
        }
        std::mem::swap(&mut beta, &mut next);
    }

    let mut c_prev = vec![0.0; m];
    crate::model::count_into_f64(x_prev.values(), &mut c_prev);
    enumeration.kernels_at(spec, &c_prev, &mut kmats);
    let from = enumeration.index.encode(x_prev.values());
    let y_row = y.at_time(s);
    let q_row = q.at_time(s);
    let mut mass = vec![0.0; states];
    for (j, mj) in mass.iter_mut().enumerate() {
        if beta[j] > 0.0 {
            let e = enumeration.emission(j, y_row, q_row);
            if e > 0.0 {
                *mj = enumeration.transition(&kmats, from, j) * e * beta[j];
            }
        }
    }
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidValue {
            what: "exact proposal",
            details: format!("zero conditional mass at step {s}"),
        });
    }
    for mj in mass.iter_mut() {
        *mj /= total;
    }
    Ok(mass)
}

fn check_data_dims(spec: &ModelSpec, y: &ObservationMatrix, q: &ReportingRates) -> Result<()> {
    if y.individuals() != spec.population() {
        return Err(Error::DimensionMismatch {
            what: "observation individuals",
            expected: spec.population(),
            found: y.individuals(),
        });
    }
    if q.horizon() != y.horizon() {
        return Err(Error::DimensionMismatch {
            what: "reporting-rate horizon",
            expected: y.horizon(),
            found: q.horizon(),
        });
    }
    if q.compartments() != spec.compartments() {
        return Err(Error::DimensionMismatch {
            what: "reporting-rate compartments",
            expected: spec.compartments(),
            found: q.compartments(),
        });
    }
    Ok(())
}
