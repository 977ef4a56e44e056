//! Guide tables for lookahead proposals and twisted resampling.
//!
//! `xi[s][n][j]` approximates the probability of individual `n`'s next
//! `window` observations given that it sits in compartment `j + 1` at time
//! `s`. The tables are built by a per-individual backward recursion whose
//! kernels are evaluated at smoothed mean-field count estimates, so the
//! coupling between individuals enters only through those counts. Proposal
//! masses combine one exact kernel row at the particle's own counts with the
//! table for the target time.

use crate::error::{Error, Result};
use crate::meanfield::{backward_pass, forward_pass, mean_model};
use crate::model::ModelSpec;
use crate::observe::{aggregate_counts, ObservationMatrix, ReportingRates};

/// Probability that compartment index `j` produces report `y` under `q_row`.
#[inline]
pub fn emission_factor(j: usize, y: u8, q_row: &[f64]) -> f64 {
    if y == 0 {
        1.0 - q_row[j]
    } else if (y - 1) as usize == j {
        q_row[j]
    } else {
        0.0
    }
}

/// Unnormalized per-individual proposal mass over target compartments:
/// `out[j] = kernel_row[j] * emission_factor(j, y, q_row) * xi_row[j]`.
/// Returns the total mass, which is also the twist factor for the source
/// state the kernel row belongs to. A zero total means no target compartment
/// is compatible with the report.
pub fn proposal_mass_into(
    kernel_row: &[f64],
    y: u8,
    q_row: &[f64],
    xi_row: &[f64],
    out: &mut [f64],
) -> f64 {
    let mut total = 0.0;
    for j in 0..out.len() {
        let v = kernel_row[j] * emission_factor(j, y, q_row) * xi_row[j];
        out[j] = v;
        total += v;
    }
    total
}

/// Unnormalized time-zero mass: `out[j] = initial_row[j] * xi_row[j]`.
/// There is no report at time zero, so no emission factor enters.
pub fn initial_mass_into(initial_row: &[f64], xi_row: &[f64], out: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for j in 0..out.len() {
        let v = initial_row[j] * xi_row[j];
        out[j] = v;
        total += v;
    }
    total
}

/// Guide tables for every time step, plus the count estimates they were
/// evaluated at.
pub struct LookaheadTables {
    horizon: usize,
    individuals: usize,
    compartments: usize,
    window: usize,
    /// `(t + 1) x N x M`.
    xi: Vec<f64>,
    /// Count estimates per time, `t + 1` rows of length `M`.
    counts: Vec<Vec<f64>>,
}

impl LookaheadTables {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn individuals(&self) -> usize {
        self.individuals
    }

    pub fn compartments(&self) -> usize {
        self.compartments
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Full table at time `s` (`N x M`).
    pub fn xi(&self, s: usize) -> &[f64] {
        debug_assert!(s <= self.horizon);
        let nm = self.individuals * self.compartments;
        &self.xi[s * nm..(s + 1) * nm]
    }

    /// Row of individual `n` at time `s`.
    pub fn xi_row(&self, s: usize, n: usize) -> &[f64] {
        let m = self.compartments;
        &self.xi(s)[n * m..(n + 1) * m]
    }

    /// Count estimates the recursion kernels were evaluated at.
    pub fn counts(&self) -> &[Vec<f64>] {
        &self.counts
    }
}

/// Builds guide tables with kernels at the given per-time count vectors.
/// `counts_by_time[tau]` is the count vector for transitions leaving time
/// `tau`; rows `0..t` are used.
pub fn xi_tables(
    spec: &ModelSpec,
    y: &ObservationMatrix,
    q: &ReportingRates,
    counts_by_time: &[Vec<f64>],
    window: usize,
) -> Result<Vec<f64>> {
    let n = spec.population();
    let m = spec.compartments();
    let t = y.horizon();
    check_observation_dims(spec, y, q)?;
    if t > 0 && counts_by_time.len() < t {
        return Err(Error::DimensionMismatch {
            what: "count rows for kernel evaluation",
            expected: t,
            found: counts_by_time.len(),
        });
    }

    // One kernel matrix per (source time, individual).
    let mm = m * m;
    let mut kernels = vec![0.0; t * n * mm];
    for tau in 0..t {
        let c = &counts_by_time[tau];
        if c.len() != m {
            return Err(Error::DimensionMismatch {
                what: "count vector length",
                expected: m,
                found: c.len(),
            });
        }
        for ind in 0..n {
            let block = &mut kernels[(tau * n + ind) * mm..(tau * n + ind + 1) * mm];
            spec.kernel_into(ind, c, block);
        }
    }

    let nm = n * m;
    let mut xi = vec![1.0; (t + 1) * nm];
    let mut cur = vec![0.0; nm];
    let mut next = vec![0.0; nm];
    let mut weighted = vec![0.0; m];
    for s in 0..t {
        let h_eff = window.min(t - s);
        next.fill(1.0);
        for tau in (s..s + h_eff).rev() {
            let y_next = y.at_time(tau + 1);
            let q_next = q.at_time(tau + 1);
            for ind in 0..n {
                let kern = &kernels[(tau * n + ind) * mm..(tau * n + ind + 1) * mm];
                let xi_next = &next[ind * m..(ind + 1) * m];
                for i in 0..m {
                    weighted[i] = emission_factor(i, y_next[ind], q_next) * xi_next[i];
                }
                let out = &mut cur[ind * m..(ind + 1) * m];
                for j in 0..m {
                    out[j] = (0..m).map(|i| kern[j * m + i] * weighted[i]).sum();
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        xi[s * nm..(s + 1) * nm].copy_from_slice(&next);
    }
    Ok(xi)
}

/// Builds guide tables from the data alone: aggregates the reports, runs the
/// mean-field smoother, and evaluates the recursion at the smoothed count
/// estimates.
pub fn build(
    spec: &ModelSpec,
    y: &ObservationMatrix,
    q: &ReportingRates,
    window: usize,
) -> Result<LookaheadTables> {
    check_observation_dims(spec, y, q)?;
    let o = aggregate_counts(y, spec.compartments());
    let mean = mean_model(spec);
    let fwd = forward_pass(&mean, &o, q)?;
    let smoothed = backward_pass(&mean, &fwd);
    let counts = smoothed.count_sequence(spec.population());
    let xi = xi_tables(spec, y, q, &counts, window)?;
    Ok(LookaheadTables {
        horizon: y.horizon(),
        individuals: spec.population(),
        compartments: spec.compartments(),
        window,
        xi,
        counts,
    })
}

pub(crate) fn check_observation_dims(
    spec: &ModelSpec,
    y: &ObservationMatrix,
    q: &ReportingRates,
) -> Result<()> {
    if y.individuals() != spec.population() {
        return Err(Error::DimensionMismatch {
            what: "observed individuals",
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
