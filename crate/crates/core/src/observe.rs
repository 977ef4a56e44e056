//! Per-individual reporting.
//!
//! At each time `s >= 1` individual `n` in compartment `x` reports its
//! compartment with probability `q_s^(x)` and is otherwise recorded as 0.
//! Observed values therefore live in `0..=M` with 0 meaning "unreported".

use crate::error::{Error, Result};
use crate::model::{PopulationState, Trajectory};
use rand::Rng;

/// Reporting probabilities per time and compartment (`t x M`); row `s - 1`
/// applies at time `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportingRates {
    horizon: usize,
    compartments: usize,
    data: Vec<f64>,
}

impl ReportingRates {
    pub fn new(horizon: usize, compartments: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != horizon * compartments {
            return Err(Error::DimensionMismatch {
                what: "reporting rates",
                expected: horizon * compartments,
                found: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|&&q| !(0.0..=1.0).contains(&q)) {
            return Err(Error::InvalidValue {
                what: "reporting rates",
                details: format!("rate {bad} outside [0, 1]"),
            });
        }
        Ok(Self {
            horizon,
            compartments,
            data,
        })
    }

    /// The same rate vector repeated at every time.
    pub fn constant(q: &[f64], horizon: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(horizon * q.len());
        for _ in 0..horizon {
            data.extend_from_slice(q);
        }
        Self::new(horizon, q.len(), data)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn compartments(&self) -> usize {
        self.compartments
    }

    /// Rates in effect at time `s` (1-based, `1..=t`).
    pub fn at_time(&self, s: usize) -> &[f64] {
        debug_assert!((1..=self.horizon).contains(&s));
        &self.data[(s - 1) * self.compartments..s * self.compartments]
    }
}

/// Observed values per time and individual (`t x N`); row `s - 1` holds the
/// reports at time `s`. Entries are `0..=M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMatrix {
    horizon: usize,
    individuals: usize,
    data: Vec<u8>,
}

impl ObservationMatrix {
    pub fn new(
        horizon: usize,
        individuals: usize,
        compartments: usize,
        data: Vec<u8>,
    ) -> Result<Self> {
        if data.len() != horizon * individuals {
            return Err(Error::DimensionMismatch {
                what: "observation matrix",
                expected: horizon * individuals,
                found: data.len(),
            });
        }
        if let Some(&bad) = data.iter().find(|&&y| y as usize > compartments) {
            return Err(Error::InvalidValue {
                what: "observation matrix",
                details: format!("value {bad} outside 0..={compartments}"),
            });
        }
        Ok(Self {
            horizon,
            individuals,
            data,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn individuals(&self) -> usize {
        self.individuals
    }

    /// Reports at time `s` (1-based, `1..=t`).
    pub fn at_time(&self, s: usize) -> &[u8] {
        debug_assert!((1..=self.horizon).contains(&s));
        &self.data[(s - 1) * self.individuals..s * self.individuals]
    }
}

/// Reported-count tallies per time and compartment (`t x M`), ignoring zeros.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateCounts {
    horizon: usize,
    compartments: usize,
    data: Vec<u32>,
}

impl AggregateCounts {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Reported counts at time `s` (1-based).
    pub fn at_time(&self, s: usize) -> &[u32] {
        debug_assert!((1..=self.horizon).contains(&s));
        &self.data[(s - 1) * self.compartments..s * self.compartments]
    }

    pub fn at_time_f64(&self, s: usize) -> Vec<f64> {
        self.at_time(s).iter().map(|&c| c as f64).collect()
    }
}

/// Draws observations for a simulated trajectory. Consumes one uniform per
/// (time, individual) pair in row-major order.
pub fn observe<R: Rng>(
    trajectory: &Trajectory,
    rates: &ReportingRates,
    rng: &mut R,
) -> Result<ObservationMatrix> {
    let t = trajectory.horizon();
    if rates.horizon() != t {
        return Err(Error::DimensionMismatch {
            what: "reporting-rate horizon",
            expected: t,
            found: rates.horizon(),
        });
    }
    let n = trajectory.states[0].len();
    let mut data = Vec::with_capacity(t * n);
    for s in 1..=t {
        let q = rates.at_time(s);
        for &x in trajectory.states[s].values() {
            let u: f64 = rng.random();
            data.push(if u < q[x as usize - 1] { x } else { 0 });
        }
    }
    ObservationMatrix::new(t, n, rates.compartments(), data)
}

/// Log-probability of one individual's report given its compartment:
/// `log q^(x)` when reported, `log(1 - q^(x))` when not, `-inf` when the
/// report contradicts the compartment.
#[inline]
pub fn individual_emission_logprob(x: u8, y: u8, q_row: &[f64]) -> f64 {
    let q = q_row[x as usize - 1];
    if y == 0 {
        (1.0 - q).ln()
    } else if y == x {
        q.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Log-probability of one time slice of reports given the latent state:
/// `sum_n log(q^(x_n))` over reported individuals plus `log(1 - q^(x_n))`
/// over unreported ones; `-inf` when any report contradicts the state.
pub fn emission_logprob(state: &PopulationState, y_row: &[u8], q_row: &[f64]) -> f64 {
    debug_assert_eq!(state.len(), y_row.len());
    let mut lp = 0.0;
    for (&x, &y) in state.values().iter().zip(y_row) {
        lp += individual_emission_logprob(x, y, q_row);
        if lp == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
    }
    lp
}

/// Collapses per-individual reports to per-compartment reported counts.
pub fn aggregate_counts(y: &ObservationMatrix, compartments: usize) -> AggregateCounts {
    let t = y.horizon();
    let mut data = vec![0u32; t * compartments];
    for s in 1..=t {
        let row = &mut data[(s - 1) * compartments..s * compartments];
        for &v in y.at_time(s) {
            if v > 0 {
                row[v as usize - 1] += 1;
            }
        }
    }
    AggregateCounts {
        horizon: t,
        compartments,
        data,
    }
}
