//! Multinomial mean-field smoothing over compartment counts.
//!
//! The count process is approximated by propagating a single probability
//! vector through the population-averaged kernel, updating it against the
//! reported aggregate counts, and running a reverse-kernel backward pass.
//! Count estimates are `N` times the smoothed vectors. These marginals feed
//! the lookahead tables; they are an approximation, not a filter.

use crate::error::{Error, Result};
use crate::math::dot;
use crate::model::ModelSpec;
use crate::observe::{AggregateCounts, ReportingRates};

/// Population-averaged initial distribution and kernel.
pub struct MeanModel<'a> {
    spec: &'a ModelSpec,
    initial: Vec<f64>,
}

impl MeanModel<'_> {
    pub fn population(&self) -> usize {
        self.spec.population()
    }

    pub fn compartments(&self) -> usize {
        self.spec.compartments()
    }

    /// Average initial distribution over individuals.
    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Writes the average kernel at counts `c` into `out` (`M x M`).
    pub fn kbar_into(&self, c: &[f64], out: &mut [f64]) {
        let m = self.spec.compartments();
        let n = self.spec.population();
        out.fill(0.0);
        let mut scratch = vec![0.0; m * m];
        for ind in 0..n {
            self.spec.kernel_into(ind, c, &mut scratch);
            for (o, &k) in out.iter_mut().zip(&scratch) {
                *o += k;
            }
        }
        let inv = 1.0 / n as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
    }
}

/// Averages the model over individuals.
pub fn mean_model(spec: &ModelSpec) -> MeanModel<'_> {
    let m = spec.compartments();
    let mut initial = vec![0.0; m];
    for ind in 0..spec.population() {
        for (acc, &p) in initial.iter_mut().zip(spec.initial_row(ind)) {
            *acc += p;
        }
    }
    let inv = 1.0 / spec.population() as f64;
    for acc in initial.iter_mut() {
        *acc *= inv;
    }
    MeanModel { spec, initial }
}

/// Filtered and one-step-predicted mean vectors.
#[derive(Debug, Clone)]
pub struct ForwardMarginals {
    horizon: usize,
    compartments: usize,
    /// `(t + 1) x M`; row `s` is `m_{s|s}`.
    filtered: Vec<f64>,
    /// `t x M`; row `s - 1` is the prediction for time `s`.
    predicted: Vec<f64>,
}

impl ForwardMarginals {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn filtered(&self, s: usize) -> &[f64] {
        debug_assert!(s <= self.horizon);
        &self.filtered[s * self.compartments..(s + 1) * self.compartments]
    }

    /// Prediction for time `s` (1-based).
    pub fn predicted(&self, s: usize) -> &[f64] {
        debug_assert!((1..=self.horizon).contains(&s));
        &self.predicted[(s - 1) * self.compartments..s * self.compartments]
    }
}

/// Filtered, predicted and smoothed mean vectors plus the reverse kernels.
#[derive(Debug, Clone)]
pub struct SmoothingMarginals {
    horizon: usize,
    compartments: usize,
    filtered: Vec<f64>,
    predicted: Vec<f64>,
    /// `(t + 1) x M`; row `s` is `m_{s|t}`.
    smoothed: Vec<f64>,
    /// `t x M x M`; block `s` is the reverse kernel from time `s + 1` back
    /// to time `s`, rows indexed by the time-`s + 1` compartment.
    reverse: Vec<f64>,
}

impl SmoothingMarginals {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn compartments(&self) -> usize {
        self.compartments
    }

    pub fn filtered(&self, s: usize) -> &[f64] {
        debug_assert!(s <= self.horizon);
        &self.filtered[s * self.compartments..(s + 1) * self.compartments]
    }

    pub fn predicted(&self, s: usize) -> &[f64] {
        debug_assert!((1..=self.horizon).contains(&s));
        &self.predicted[(s - 1) * self.compartments..s * self.compartments]
    }

    pub fn smoothed(&self, s: usize) -> &[f64] {
        debug_assert!(s <= self.horizon);
        &self.smoothed[s * self.compartments..(s + 1) * self.compartments]
    }

    pub fn reverse_kernel(&self, s: usize) -> &[f64] {
        debug_assert!(s < self.horizon);
        let mm = self.compartments * self.compartments;
        &self.reverse[s * mm..(s + 1) * mm]
    }

    /// Smoothed count estimates `N * m_{s|t}` for every time, the sequence
    /// the lookahead kernels are evaluated at.
    pub fn count_sequence(&self, population: usize) -> Vec<Vec<f64>> {
        (0..=self.horizon)
            .map(|s| count_estimate(self, population, s))
            .collect()
    }
}

/// Forward pass of the count approximation. `o` must tally the same data the
/// rates describe.
pub fn forward_pass(
    mean: &MeanModel,
    o: &AggregateCounts,
    q: &ReportingRates,
) -> Result<ForwardMarginals> {
    let m = mean.compartments();
    let n = mean.population() as f64;
    let t = o.horizon();
    if q.horizon() != t {
        return Err(Error::DimensionMismatch {
            what: "reporting-rate horizon",
            expected: t,
            found: q.horizon(),
        });
    }
    if q.compartments() != m {
        return Err(Error::DimensionMismatch {
            what: "reporting-rate compartments",
            expected: m,
            found: q.compartments(),
        });
    }

    let mut filtered = Vec::with_capacity((t + 1) * m);
    let mut predicted = Vec::with_capacity(t * m);
    filtered.extend_from_slice(mean.initial());

    let mut kbar = vec![0.0; m * m];
    let mut counts = vec![0.0; m];
    let mut pred = vec![0.0; m];
    for s in 1..=t {
        let prev = &filtered[(s - 1) * m..s * m];
        for (c, &p) in counts.iter_mut().zip(prev) {
            *c = n * p;
        }
        mean.kbar_into(&counts, &mut kbar);
        for j in 0..m {
            pred[j] = (0..m).map(|i| prev[i] * kbar[i * m + j]).sum();
        }
        predicted.extend_from_slice(&pred);

        let o_row = o.at_time(s);
        let q_row = q.at_time(s);
        let reported: u32 = o_row.iter().sum();
        let a = reported as f64 / n;
        let coeff = 1.0 - a;
        let denom = 1.0 - dot(&pred, q_row);
        let base = filtered.len();
        filtered.extend(o_row.iter().map(|&c| c as f64 / n));
        let row = &mut filtered[base..];
        if coeff > 0.0 && denom > 0.0 {
            for j in 0..m {
                row[j] += coeff * pred[j] * (1.0 - q_row[j]) / denom;
            }
        } else if coeff > 0.0 {
            // Exhausted predictive reporting mass with unreported individuals
            // left over: the update is 0/0. Keep the observed part, scaled
            // back to the simplex, or fall back to the prediction.
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                for v in row.iter_mut() {
                    *v /= total;
                }
            } else {
                row.copy_from_slice(&pred);
            }
        }
    }

    Ok(ForwardMarginals {
        horizon: t,
        compartments: m,
        filtered,
        predicted,
    })
}

/// Backward pass building reverse kernels from the filtered vectors and the
/// average kernel evaluated at the filtered count estimates. Unreachable
/// target compartments (zero predicted mass) get a uniform reverse row.
pub fn backward_pass(mean: &MeanModel, fwd: &ForwardMarginals) -> SmoothingMarginals {
    let m = fwd.compartments;
    let n = mean.population() as f64;
    let t = fwd.horizon;

    let mut smoothed = vec![0.0; (t + 1) * m];
    let mut reverse = vec![0.0; t * m * m];
    smoothed[t * m..].copy_from_slice(fwd.filtered(t));

    let mut kbar = vec![0.0; m * m];
    let mut counts = vec![0.0; m];
    for s in (0..t).rev() {
        let filt = fwd.filtered(s);
        for (c, &p) in counts.iter_mut().zip(filt) {
            *c = n * p;
        }
        mean.kbar_into(&counts, &mut kbar);
        let block = &mut reverse[s * m * m..(s + 1) * m * m];
        for j in 0..m {
            let denom: f64 = (0..m).map(|i| filt[i] * kbar[i * m + j]).sum();
            let row = &mut block[j * m..(j + 1) * m];
            if denom > 0.0 {
                for i in 0..m {
                    row[i] = filt[i] * kbar[i * m + j] / denom;
                }
            } else {
                row.fill(1.0 / m as f64);
            }
        }
        let (head, tail) = smoothed.split_at_mut((s + 1) * m);
        let cur = &mut head[s * m..];
        let next = &tail[..m];
        for i in 0..m {
            cur[i] = (0..m).map(|j| next[j] * block[j * m + i]).sum();
        }
    }

    SmoothingMarginals {
        horizon: t,
        compartments: m,
        filtered: fwd.filtered.clone(),
        predicted: fwd.predicted.clone(),
        smoothed,
        reverse,
    }
}

/// Smoothed compartment-count estimate at time `s`.
pub fn count_estimate(marginals: &SmoothingMarginals, population: usize, s: usize) -> Vec<f64> {
    marginals
        .smoothed(s)
        .iter()
        .map(|&p| p * population as f64)
        .collect()
}
