//! File formats for scenarios, rates, observations, and results.
//!
//! Scenarios are JSON objects `{model, N, d, params, covariates?, seed}`;
//! when `covariates` is omitted the rows `[1, z_n]` are drawn from the
//! scenario seed, so a scenario file pins the population exactly. Reporting
//! rates are a JSON `t x M` array of arrays. Observations travel as CSV with
//! columns `time,individual,value` (times 1-based, individuals 0-based,
//! value 0 meaning unreported); `#` starts a comment line. All readers
//! return errors, never panic, on malformed input.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{seir_spec, sis_spec, Covariates, ModelSpec, SeirParams, SisParams};
use crate::observe::{ObservationMatrix, ReportingRates};
use crate::pmmh::{Chain, ParamSpec};
use crate::rng::stream_rng;
use crate::smc::FilterOutput;

/// Guards against absurd allocations from hostile inputs.
const MAX_POPULATION: usize = 1_000_000;
const MAX_COVARIATE_DIM: usize = 1_024;
const MAX_CELLS: usize = 1 << 26;

const COVARIATE_STREAM: u64 = 0x636f76;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Sis,
    Seir,
}

/// Coefficient block of a scenario; `rho` is present exactly when the model
/// is SEIR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParams {
    pub beta0: Vec<f64>,
    pub beta_lambda: Vec<f64>,
    pub beta_gamma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

/// A self-contained model description, loadable from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: ModelKind,
    #[serde(rename = "N")]
    pub population: usize,
    #[serde(rename = "d")]
    pub covariate_dim: usize,
    pub params: ScenarioParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| Error::InvalidValue {
            what: "scenario JSON",
            details: e.to_string(),
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn compartments(&self) -> usize {
        match self.model {
            ModelKind::Sis => 2,
            ModelKind::Seir => 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |details: String| Error::InvalidValue {
            what: "scenario",
            details,
        };
        if self.population == 0 || self.population > MAX_POPULATION {
            return Err(bad(format!("population {} out of range", self.population)));
        }
        if self.covariate_dim == 0 || self.covariate_dim > MAX_COVARIATE_DIM {
            return Err(bad(format!(
                "covariate dimension {} out of range",
                self.covariate_dim
            )));
        }
        for (name, beta) in [
            ("beta0", &self.params.beta0),
            ("beta_lambda", &self.params.beta_lambda),
            ("beta_gamma", &self.params.beta_gamma),
        ] {
            if beta.len() != self.covariate_dim {
                return Err(bad(format!(
                    "{name} has {} entries, expected {}",
                    beta.len(),
                    self.covariate_dim
                )));
            }
            if beta.iter().any(|x| !x.is_finite()) {
                return Err(bad(format!("{name} has a non-finite entry")));
            }
        }
        match (self.model, self.params.rho) {
            (ModelKind::Sis, Some(_)) => {
                return Err(bad("rho is not an SIS parameter".into()));
            }
            (ModelKind::Seir, None) => {
                return Err(bad("SEIR requires rho".into()));
            }
            (ModelKind::Seir, Some(rho)) if !(rho > 0.0 && rho.is_finite()) => {
                return Err(bad(format!("rho {rho} is not a positive rate")));
            }
            _ => {}
        }
        match &self.covariates {
            Some(rows) => {
                if rows.len() != self.population {
                    return Err(bad(format!(
                        "{} covariate rows for population {}",
                        rows.len(),
                        self.population
                    )));
                }
                for (n, row) in rows.iter().enumerate() {
                    if row.len() != self.covariate_dim {
                        return Err(bad(format!("covariate row {n} has {} entries", row.len())));
                    }
                    if row.iter().any(|x| !x.is_finite()) {
                        return Err(bad(format!("covariate row {n} has a non-finite entry")));
                    }
                    if row[0] != 1.0 {
                        return Err(bad(format!(
                            "covariate row {n} lacks the intercept 1 in column 0"
                        )));
                    }
                }
            }
            None => {
                if self.covariate_dim != 2 {
                    return Err(bad(
                        "generated covariates are [1, z]; explicit rows are required for d != 2"
                            .into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Stored covariates, or the `[1, z_n]` rows drawn from the scenario
    /// seed; deterministic per scenario.
    pub fn covariates(&self) -> Result<Covariates> {
        match &self.covariates {
            Some(rows) => Covariates::new(
                self.population,
                self.covariate_dim,
                rows.iter().flatten().copied().collect(),
            ),
            None => Ok(Covariates::standard(
                self.population,
                &mut stream_rng(self.seed, COVARIATE_STREAM),
            )),
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        self.validate()?;
        let cov = self.covariates()?;
        match self.model {
            ModelKind::Sis => sis_spec(
                &SisParams {
                    beta0: self.params.beta0.clone(),
                    beta_lambda: self.params.beta_lambda.clone(),
                    beta_gamma: self.params.beta_gamma.clone(),
                },
                &cov,
            ),
            ModelKind::Seir => seir_spec(
                &SeirParams {
                    beta0: self.params.beta0.clone(),
                    beta_lambda: self.params.beta_lambda.clone(),
                    rho: self.params.rho.unwrap(),
                    beta_gamma: self.params.beta_gamma.clone(),
                },
                &cov,
            ),
        }
    }
}

/// Parses a `t x M` array-of-arrays of reporting probabilities.
pub fn rates_from_json(text: &str) -> Result<ReportingRates> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(text).map_err(|e| Error::InvalidValue {
        what: "rates JSON",
        details: e.to_string(),
    })?;
    let compartments = match rows.first() {
        Some(first) if !first.is_empty() => first.len(),
        _ => {
            return Err(Error::InvalidValue {
                what: "rates JSON",
                details: "needs at least one nonempty row".into(),
            })
        }
    };
    if let Some(s) = rows.iter().position(|r| r.len() != compartments) {
        return Err(Error::InvalidValue {
            what: "rates JSON",
            details: format!("row {s} has {} entries, expected {compartments}", rows[s].len()),
        });
    }
    if rows.len().checked_mul(compartments).is_none_or(|n| n > MAX_CELLS) {
        return Err(Error::InvalidValue {
            what: "rates JSON",
            details: "too large".into(),
        });
    }
    ReportingRates::new(
        rows.len(),
        compartments,
        rows.iter().flatten().copied().collect(),
    )
}

pub fn rates_to_json(rates: &ReportingRates) -> String {
    let rows: Vec<&[f64]> = (1..=rates.horizon()).map(|s| rates.at_time(s)).collect();
    serde_json::to_string(&rows).expect("plain data serializes")
}

/// Expected shape of an observation CSV; readers without one infer the shape
/// from the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationDims {
    pub horizon: usize,
    pub individuals: usize,
    pub compartments: usize,
}

/// Writes every cell of the matrix as `time,individual,value` rows.
pub fn write_observations<W: Write>(out: W, y: &ObservationMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "individual", "value"]).map_err(csv_err)?;
    for s in 1..=y.horizon() {
        for (n, &v) in y.at_time(s).iter().enumerate() {
            w.write_record([s.to_string(), n.to_string(), v.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an observation CSV. Cells may appear in any order and unlisted
/// cells are unreported; a duplicate cell is an error. With `dims` the
/// records are checked against the declared shape, otherwise the shape is
/// the smallest one covering the data (compartment count = largest value).
pub fn read_observations<R: Read>(
    input: R,
    dims: Option<ObservationDims>,
) -> Result<ObservationMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = reader.headers().map_err(csv_err)?;
    if headers != vec!["time", "individual", "value"] {
        return Err(Error::InvalidValue {
            what: "observation CSV",
            details: format!("header {headers:?}, expected time,individual,value"),
        });
    }
    let mut cells: Vec<(usize, usize, u8)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let field = |i: usize| -> Result<usize> {
            record[i].parse().map_err(|_| Error::InvalidValue {
                what: "observation CSV",
                details: format!("bad field {:?} in record {record:?}", &record[i]),
            })
        };
        let (time, individual, value) = (field(0)?, field(1)?, field(2)?);
        let bad = |details: String| Error::InvalidValue {
            what: "observation CSV",
            details,
        };
        if time == 0 {
            return Err(bad(format!("time 0 in record {record:?}; times are 1-based")));
        }
        if value > u8::MAX as usize {
            return Err(bad(format!("value {value} too large")));
        }
        if let Some(d) = dims {
            if time > d.horizon || individual >= d.individuals || value > d.compartments {
                return Err(bad(format!(
                    "record {record:?} outside declared shape {d:?}"
                )));
            }
        }
        cells.push((time, individual, value as u8));
    }
    let (horizon, individuals, compartments) = match dims {
        Some(d) => (d.horizon, d.individuals, d.compartments),
        None => (
            cells.iter().map(|c| c.0).max().unwrap_or(0),
            cells.iter().map(|c| c.1 + 1).max().unwrap_or(0),
            cells.iter().map(|c| c.2 as usize).max().unwrap_or(0).max(1),
        ),
    };
    let total = horizon
        .checked_mul(individuals)
        .filter(|&n| n <= MAX_CELLS)
        .ok_or(Error::InvalidValue {
            what: "observation CSV",
            details: "too large".into(),
        })?;
    let mut data = vec![0u8; total];
    let mut seen = vec![false; total];
    for (time, individual, value) in cells {
        let idx = (time - 1) * individuals + individual;
        if seen[idx] {
            return Err(Error::InvalidValue {
                what: "observation CSV",
                details: format!("duplicate cell time {time}, individual {individual}"),
            });
        }
        seen[idx] = true;
        data[idx] = value;
    }
    ObservationMatrix::new(horizon, individuals, compartments, data)
}

pub fn filter_output_to_json(output: &FilterOutput) -> String {
    // Non-finite floats (a degenerate run's -inf) serialize as null.
    serde_json::to_string_pretty(output).expect("filter output serializes")
}

/// Writes `step,ess,ess_pct` rows; the percentage is relative to the
/// particle count.
pub fn write_ess_trace<W: Write>(out: W, particles: usize, ess: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "ess", "ess_pct"]).map_err(csv_err)?;
    for (step, &e) in ess.iter().enumerate() {
        let pct = 100.0 * e / particles as f64;
        w.write_record([step.to_string(), format!("{e}"), format!("{pct}")])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one row per sweep: iteration, parameter values, log-likelihood,
/// log-prior, and the number of accepted block moves.
pub fn write_chain<W: Write>(out: W, params: &[ParamSpec], chain: &Chain) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iteration".to_string()];
    header.extend(params.iter().map(|p| p.name.clone()));
    header.extend(["log_lik".into(), "log_prior".into(), "accepted".into()]);
    w.write_record(&header).map_err(csv_err)?;
    for (i, sample) in chain.samples.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(sample.iter().map(|v| format!("{v}")));
        row.push(format!("{}", chain.log_likelihoods[i]));
        row.push(format!("{}", chain.log_priors[i]));
        row.push(chain.accepted[i].iter().filter(|&&a| a).count().to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}
