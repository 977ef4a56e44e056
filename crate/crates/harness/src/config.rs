//! Experiment configuration: scenario references, data sources, and
//! per-command settings, all loadable from one JSON document.
//!
//! A config names a scenario (inline, a file path, or one of the builtin
//! generators), how the dataset is obtained (simulated from the scenario or
//! read from files), and settings for whichever command is run. Desk-scale
//! defaults keep every command fast; `--paper-scale` switches the builtin
//! SEIR population and the default replicate counts to full size.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use epi_smc_core::error::{Error, Result};
use epi_smc_core::io::{rates_from_json, read_observations, ModelKind, Scenario, ScenarioParams};
use epi_smc_core::model::Trajectory;
use epi_smc_core::observe::{ObservationMatrix, ReportingRates};
use epi_smc_core::rng::derive_seed;
use epi_smc_core::smc::Method;

fn bad(details: String) -> Error {
    Error::InvalidValue {
        what: "experiment config",
        details,
    }
}

/// How the model is specified: a known generator name, a scenario file, or
/// the scenario object inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Builtin(String),
    Path { path: String },
    Inline(Box<Scenario>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// Simulate a trajectory from the scenario and observe it at these
    /// per-compartment reporting rates.
    Simulate { q: Vec<f64> },
    /// Load observations and rates from files (CSV and JSON respectively).
    Files { observations: String, rates: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSettings {
    pub method: Method,
    pub particles: usize,
    #[serde(default)]
    pub record_history: bool,
}

impl FilterSettings {
    pub fn default_for(paper_scale: bool) -> Self {
        FilterSettings {
            method: Method::Lookahead { window: 5 },
            particles: if paper_scale { 512 } else { 128 },
            record_history: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EssSettings {
    pub methods: Vec<Method>,
    pub particles: usize,
    pub replicates: usize,
}

impl EssSettings {
    pub fn default_for(paper_scale: bool) -> Self {
        let h = |window| Method::Lookahead { window };
        EssSettings {
            methods: if paper_scale {
                vec![Method::Bpf, Method::Apf, h(1), h(5), h(10), h(20), h(50)]
            } else {
                vec![Method::Bpf, Method::Apf, h(1), h(5)]
            },
            particles: if paper_scale { 512 } else { 128 },
            replicates: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StddevSettings {
    pub methods: Vec<Method>,
    pub particle_counts: Vec<usize>,
    pub replicates: usize,
    /// Additional labeled parameter settings evaluated against the same
    /// dataset, e.g. a non-data-generating variant. Population and
    /// compartment structure must match the main scenario.
    #[serde(default)]
    pub extra_models: Vec<LabeledScenario>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledScenario {
    pub label: String,
    pub scenario: ScenarioRef,
}

impl StddevSettings {
    /// Defaults cover the data-generating model only; variants under other
    /// parameters are listed explicitly in the config.
    pub fn default_for(paper_scale: bool) -> Self {
        let h = |window| Method::Lookahead { window };
        StddevSettings {
            methods: vec![Method::Apf, h(5), h(10), h(20)],
            particle_counts: if paper_scale {
                vec![128, 512, 2048]
            } else {
                vec![64, 256]
            },
            replicates: if paper_scale { 100 } else { 25 },
            extra_models: vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridParam {
    BetaLambda,
    BetaGamma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    pub param: GridParam,
    pub lo: f64,
    pub hi: f64,
    pub resolution: usize,
    pub method: Method,
    pub particles: usize,
}

impl GridSettings {
    pub fn default_for(paper_scale: bool) -> Self {
        GridSettings {
            param: GridParam::BetaLambda,
            lo: -4.0,
            hi: 4.0,
            resolution: if paper_scale { 21 } else { 9 },
            method: Method::Lookahead { window: 5 },
            particles: if paper_scale { 512 } else { 128 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QsensSettings {
    /// Assumed scalar reporting rate, applied to every compartment whose
    /// data rate is nonzero.
    pub q_values: Vec<f64>,
    pub methods: Vec<Method>,
    pub particles: usize,
    pub replicates: usize,
}

impl QsensSettings {
    pub fn default_for(paper_scale: bool) -> Self {
        let h = |window| Method::Lookahead { window };
        QsensSettings {
            q_values: (1..=9).map(|i| f64::from(i) / 10.0).collect(),
            methods: if paper_scale {
                vec![Method::Apf, h(1), h(5), h(10), h(20)]
            } else {
                vec![Method::Apf, h(1), h(5)]
            },
            particles: if paper_scale { 512 } else { 128 },
            replicates: if paper_scale { 100 } else { 10 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmmhSettings {
    pub iterations: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thinning")]
    pub thinning: usize,
    pub method: Method,
    pub particles: usize,
    /// Posterior draws re-simulated for the predictive bands.
    #[serde(default = "default_predictive_draws")]
    pub predictive_draws: usize,
}

fn default_burn_in() -> usize {
    10_000
}

fn default_thinning() -> usize {
    10
}

fn default_predictive_draws() -> usize {
    50
}

impl PmmhSettings {
    pub fn default_for(paper_scale: bool) -> Self {
        if paper_scale {
            PmmhSettings {
                iterations: 100_000,
                burn_in: 10_000,
                thinning: 10,
                method: Method::Lookahead { window: 5 },
                particles: 512,
                predictive_draws: 200,
            }
        } else {
            PmmhSettings {
                iterations: 2_000,
                burn_in: 500,
                thinning: 5,
                method: Method::Lookahead { window: 3 },
                particles: 128,
                predictive_draws: 50,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactCheckSettings {
    pub methods: Vec<Method>,
    pub particles: usize,
    pub replicates: usize,
    #[serde(default = "default_state_cap")]
    pub state_cap: usize,
}

fn default_state_cap() -> usize {
    1 << 20
}

impl ExactCheckSettings {
    pub fn default_for(paper_scale: bool) -> Self {
        let h = |window| Method::Lookahead { window };
        ExactCheckSettings {
            methods: vec![Method::Bpf, Method::Apf, h(1), h(3)],
            particles: if paper_scale { 512 } else { 128 },
            replicates: if paper_scale { 50 } else { 10 },
            state_cap: default_state_cap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioRef,
    pub seed: u64,
    pub horizon: usize,
    pub data: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess: Option<EssSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stddev: Option<StddevSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qsens: Option<QsensSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pmmh: Option<PmmhSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_check: Option<ExactCheckSettings>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(bad("horizon must be positive".into()));
        }
        if let ScenarioRef::Inline(s) = &self.scenario {
            s.validate()?;
        }
        if let ScenarioRef::Builtin(name) = &self.scenario {
            if !matches!(name.as_str(), "builtin:sis-dgp" | "builtin:sis-ndgp" | "builtin:seir-dgp")
            {
                return Err(bad(format!("unknown builtin scenario {name:?}")));
            }
        }
        if let DataSource::Simulate { q } = &self.data {
            if q.is_empty() || q.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(bad(format!("reporting rates {q:?} outside [0, 1]")));
            }
        }
        if let Some(s) = &self.filter {
            if s.particles == 0 {
                return Err(bad("filter particle count must be positive".into()));
            }
        }
        if let Some(s) = &self.ess {
            if s.methods.is_empty() || s.particles == 0 || s.replicates == 0 {
                return Err(bad("ess needs methods, particles, and replicates".into()));
            }
        }
        if let Some(s) = &self.stddev {
            if s.methods.is_empty() || s.particle_counts.is_empty() {
                return Err(bad("stddev needs methods and particle counts".into()));
            }
            if s.replicates < 2 {
                return Err(bad("stddev needs at least two replicates".into()));
            }
            if s.particle_counts.iter().any(|&p| p == 0) {
                return Err(bad("stddev particle counts must be positive".into()));
            }
        }
        if let Some(s) = &self.grid {
            if s.resolution < 2 {
                return Err(bad("grid resolution must be at least 2 per axis".into()));
            }
            if !(s.lo < s.hi) {
                return Err(bad(format!("grid bounds [{}, {}] are empty", s.lo, s.hi)));
            }
            if s.particles == 0 {
                return Err(bad("grid particle count must be positive".into()));
            }
        }
        if let Some(s) = &self.qsens {
            if s.q_values.is_empty() || s.q_values.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
                return Err(bad("qsens rates must lie strictly inside (0, 1)".into()));
            }
            if s.methods.is_empty() || s.particles == 0 || s.replicates == 0 {
                return Err(bad("qsens needs methods, particles, and replicates".into()));
            }
        }
        if let Some(s) = &self.pmmh {
            if s.burn_in >= s.iterations {
                return Err(bad("pmmh burn-in must be below the iteration count".into()));
            }
            if s.thinning == 0 || s.particles == 0 {
                return Err(bad("pmmh thinning and particles must be positive".into()));
            }
        }
        if let Some(s) = &self.exact_check {
            if s.methods.is_empty() || s.particles == 0 || s.replicates == 0 {
                return Err(bad("exact-check needs methods, particles, and replicates".into()));
            }
        }
        Ok(())
    }

    /// Materializes the scenario reference. Builtin generators use the
    /// master seed for their covariates; `--paper-scale` grows the builtin
    /// SEIR population to full size.
    pub fn resolve_scenario(&self, paper_scale: bool) -> Result<Scenario> {
        resolve_ref(&self.scenario, self.seed, paper_scale)
    }

    /// Simulates the dataset this config describes (trajectory, reports,
    /// rates); the data stream is derived from the master seed so every
    /// command sees the same draw. Errors when data come from files.
    pub fn simulate_dataset(
        &self,
        scenario: &Scenario,
    ) -> Result<(Trajectory, ObservationMatrix, ReportingRates)> {
        let DataSource::Simulate { q } = &self.data else {
            return Err(bad("data source is files, nothing to simulate".into()));
        };
        if q.len() != scenario.compartments() {
            return Err(bad(format!(
                "{} reporting rates for {} compartments",
                q.len(),
                scenario.compartments()
            )));
        }
        let spec = scenario.build()?;
        let mut rng = epi_smc_core::rng::stream_rng(derive_seed(self.seed, 0xDA7A), 0);
        let trajectory = epi_smc_core::model::simulate(&spec, self.horizon, &mut rng);
        let rates = ReportingRates::constant(q, self.horizon)?;
        let y = epi_smc_core::observe::observe(&trajectory, &rates, &mut rng)?;
        Ok((trajectory, y, rates))
    }

    /// The dataset for this run: either simulated from the scenario (with a
    /// data stream derived from the master seed) or loaded from files.
    pub fn load_data(&self, scenario: &Scenario) -> Result<(ObservationMatrix, ReportingRates)> {
        match &self.data {
            DataSource::Simulate { .. } => {
                let (_, y, rates) = self.simulate_dataset(scenario)?;
                Ok((y, rates))
            }
            DataSource::Files { observations, rates } => {
                let rates = rates_from_json(&fs::read_to_string(rates)?)?;
                let file = fs::File::open(observations)?;
                let y = read_observations(
                    file,
                    Some(epi_smc_core::io::ObservationDims {
                        horizon: rates.horizon(),
                        individuals: scenario.population,
                        compartments: scenario.compartments(),
                    }),
                )?;
                Ok((y, rates))
            }
        }
    }
}

pub fn resolve_ref(reference: &ScenarioRef, seed: u64, paper_scale: bool) -> Result<Scenario> {
    match reference {
        ScenarioRef::Inline(s) => {
            s.validate()?;
            Ok((**s).clone())
        }
        ScenarioRef::Path { path } => Scenario::from_json(&fs::read_to_string(path)?),
        ScenarioRef::Builtin(name) => builtin_scenario(name, seed, paper_scale),
    }
}

/// The experiment populations: SIS with one expected initial infection, its
/// low-transmission variant, and SEIR with a tenth initially infectious.
pub fn builtin_scenario(name: &str, seed: u64, paper_scale: bool) -> Result<Scenario> {
    let sis = |beta_lambda: Vec<f64>| Scenario {
        model: ModelKind::Sis,
        population: 100,
        covariate_dim: 2,
        params: ScenarioParams {
            beta0: vec![-99.0_f64.ln(), 0.0],
            beta_lambda,
            beta_gamma: vec![-1.0, -1.0],
            rho: None,
        },
        covariates: None,
        seed,
    };
    match name {
        "builtin:sis-dgp" => Ok(sis(vec![-1.0, 2.0])),
        "builtin:sis-ndgp" => Ok(sis(vec![-3.0, 0.0])),
        "builtin:seir-dgp" => {
            let n: usize = if paper_scale { 1000 } else { 300 };
            Ok(Scenario {
                model: ModelKind::Seir,
                population: n,
                covariate_dim: 2,
                params: ScenarioParams {
                    beta0: vec![-((n as f64) / 10.0 - 1.0).ln(), 0.0],
                    beta_lambda: vec![1.0, 2.0],
                    beta_gamma: vec![-1.0, -1.0],
                    rho: Some(0.2),
                },
                covariates: None,
                seed,
            })
        }
        other => Err(bad(format!("unknown builtin scenario {other:?}"))),
    }
}
