//! Experiment commands. Each command resolves the scenario, materializes
//! the dataset, fans replicates or grid cells across the rayon pool, and
//! writes CSV artifacts in a deterministic order. Per-task seeds are derived
//! from the master seed and the task index, so outputs are byte-identical
//! across reruns and worker counts.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use epi_smc_core::error::{Error, Result};
use epi_smc_core::io::{
    filter_output_to_json, rates_to_json, write_chain, write_ess_trace, write_observations,
    ModelKind, Scenario,
};
use epi_smc_core::model::{simulate, ModelSpec, SisParams};
use epi_smc_core::observe::{observe, ReportingRates};
use epi_smc_core::pmmh::{quantile, run_pmmh, ParamSpec, PmmhConfig, Prior};
use epi_smc_core::rng::{derive_seed, stream_rng};
use epi_smc_core::smc::{run_filter, FilterConfig, Method};

use crate::config::{resolve_ref, ExperimentConfig, GridParam};
use crate::csvout::{fmt, Artifact};

// Stream tags keep the dataset draw and each command's filter seeds in
// disjoint parts of the master seed's space.
const STREAM_FILTER: u64 = 0xF117;
const STREAM_ESS: u64 = 0xE55;
const STREAM_STDDEV: u64 = 0x57DD;
const STREAM_GRID: u64 = 0x6F1D;
const STREAM_QSENS: u64 = 0x5E45;
const STREAM_PMMH: u64 = 0x9347;
const STREAM_EXACT: u64 = 0xE8AC;
const STREAM_PREDICTIVE: u64 = 0x93ED;

pub struct RunContext {
    pub config: ExperimentConfig,
    pub paper_scale: bool,
    pub out_dir: PathBuf,
    pub provenance: String,
}

impl RunContext {
    fn artifact(&self, name: &str, header: &str) -> Artifact {
        Artifact::new(&self.out_dir, name, &self.provenance, header)
    }

    fn create(&self, name: &str) -> Result<(PathBuf, fs::File)> {
        let path = self.out_dir.join(name);
        let file = fs::File::create(&path)?;
        Ok((path, file))
    }
}

pub fn method_label(method: Method) -> String {
    match method {
        Method::Bpf => "bpf".into(),
        Method::Apf => "apf".into(),
        Method::Lookahead { window } => format!("h={window}"),
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation over the finite entries; `None` below two.
fn completed_std(logliks: &[f64]) -> Option<f64> {
    let finite: Vec<f64> = logliks.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < 2 {
        return None;
    }
    let m = mean(&finite);
    let var = finite.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (finite.len() - 1) as f64;
    Some(var.sqrt())
}

fn degenerate_count(logliks: &[f64]) -> usize {
    logliks.iter().filter(|v| !v.is_finite()).count()
}

/// Runs `tasks` filter configurations in parallel, preserving order.
fn run_many<T, F>(count: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    (0..count).into_par_iter().map(|i| job(i)).collect()
}

pub fn cmd_simulate(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let mut scenario = ctx.config.resolve_scenario(ctx.paper_scale)?;
    let (trajectory, y, rates) = ctx.config.simulate_dataset(&scenario)?;

    // Persist the covariates so the scenario file reproduces the dataset on
    // its own, independent of the generator stream.
    let covariates = scenario.covariates()?;
    scenario.covariates = Some(covariates.rows().map(<[f64]>::to_vec).collect());

    let mut written = Vec::new();

    let (path, mut file) = ctx.create("scenario.json")?;
    writeln!(file, "{}", scenario.to_json())?;
    written.push(path);

    let (path, mut file) = ctx.create("rates.json")?;
    writeln!(file, "{}", rates_to_json(&rates))?;
    written.push(path);

    let (path, mut file) = ctx.create("observations.csv")?;
    writeln!(file, "# {}", ctx.provenance)?;
    write_observations(&mut file, &y)?;
    written.push(path);

    let m = scenario.compartments();
    let header: String = std::iter::once("step".to_string())
        .chain((1..=m).map(|c| format!("c{c}")))
        .collect::<Vec<_>>()
        .join(",");
    let mut counts = ctx.artifact("counts.csv", &header);
    for (s, row) in trajectory.counts.iter().enumerate() {
        let cells: Vec<String> = std::iter::once(s.to_string())
            .chain(row.counts().iter().map(u32::to_string))
            .collect();
        counts.push(cells.join(","));
    }
    written.push(counts.write()?);

    Ok(written)
}

pub fn cmd_filter(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let settings = ctx
        .config
        .filter
        .clone()
        .unwrap_or_else(|| crate::config::FilterSettings::default_for(ctx.paper_scale));
    let scenario = ctx.config.resolve_scenario(ctx.paper_scale)?;
    let spec = scenario.build()?;
    let (y, rates) = ctx.config.load_data(&scenario)?;

    let mut filter_config = FilterConfig::new(
        settings.particles,
        settings.method,
        derive_seed(ctx.config.seed, STREAM_FILTER),
    );
    filter_config.record_history = settings.record_history;
    let output = run_filter(&spec, &y, &rates, &filter_config)?;

    let mut written = Vec::new();
    let (path, mut file) = ctx.create("filter.json")?;
    writeln!(file, "{}", filter_output_to_json(&output))?;
    written.push(path);

    let (path, mut file) = ctx.create("ess.csv")?;
    writeln!(file, "# {}", ctx.provenance)?;
    write_ess_trace(&mut file, settings.particles, &output.ess_trace)?;
    written.push(path);

    Ok(written)
}

pub fn cmd_ess(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let settings = ctx
        .config
        .ess
        .clone()
        .unwrap_or_else(|| crate::config::EssSettings::default_for(ctx.paper_scale));
    let scenario = ctx.config.resolve_scenario(ctx.paper_scale)?;
    let spec = scenario.build()?;
    let (y, rates) = ctx.config.load_data(&scenario)?;

    let base = derive_seed(ctx.config.seed, STREAM_ESS);
    let reps = settings.replicates;
    let outputs = run_many(settings.methods.len() * reps, |task| {
        let method = settings.methods[task / reps];
        let config = FilterConfig::new(settings.particles, method, derive_seed(base, task as u64));
        run_filter(&spec, &y, &rates, &config)
    })?;

    let mut artifact = ctx.artifact("ess.csv", "method,replicate,step,ess,ess_pct");
    let p = settings.particles as f64;
    for (task, output) in outputs.iter().enumerate() {
        let label = method_label(settings.methods[task / reps]);
        let rep = task % reps;
        for (step, &e) in output.ess_trace.iter().enumerate() {
            artifact.push(format!(
                "{label},{rep},{step},{},{}",
                fmt(e),
                fmt(100.0 * e / p)
            ));
        }
    }
    Ok(vec![artifact.write()?])
}

/// Labeled evaluation models for the stddev table: the scenario itself plus
/// any configured variants, all scored against the one dataset.
fn evaluation_models(
    ctx: &RunContext,
    scenario: &Scenario,
    extras: &[crate::config::LabeledScenario],
) -> Result<Vec<(String, ModelSpec)>> {
    let mut models = vec![("dgp".to_string(), scenario.build()?)];
    for labeled in extras {
        let variant = resolve_ref(&labeled.scenario, ctx.config.seed, ctx.paper_scale)?;
        if variant.population != scenario.population
            || variant.compartments() != scenario.compartments()
        {
            return Err(Error::InvalidValue {
                what: "experiment config",
                details: format!(
                    "variant {:?} does not match the dataset's population or compartments",
                    labeled.label
                ),
            });
        }
        models.push((labeled.label.clone(), variant.build()?));
    }
    Ok(models)
}

pub fn cmd_stddev(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let settings = ctx
        .config
        .stddev
        .clone()
        .unwrap_or_else(|| crate::config::StddevSettings::default_for(ctx.paper_scale));
    let scenario = ctx.config.resolve_scenario(ctx.paper_scale)?;
    let (y, rates) = ctx.config.load_data(&scenario)?;
    let models = evaluation_models(ctx, &scenario, &settings.extra_models)?;

    let base = derive_seed(ctx.config.seed, STREAM_STDDEV);
    let reps = settings.replicates;
    let mut cells = Vec::new();
    for mi in 0..settings.methods.len() {
        for pi in 0..settings.particle_counts.len() {
            for vi in 0..models.len() {
                cells.push((mi, pi, vi));
            }
        }
    }

    let results = run_many(cells.len() * reps, |task| {
        let (mi, pi, vi) = cells[task / reps];
        let config = FilterConfig::new(
            settings.particle_counts[pi],
            settings.methods[mi],
            derive_seed(base, task as u64),
        );
        let start = Instant::now();
        let output = run_filter(&models[vi].1, &y, &rates, &config)?;
        Ok((output.log_likelihood, start.elapsed().as_secs_f64()))
    })?;

    let mut table = ctx.artifact(
        "stddev.csv",
        "method,particles,model,std,n_degenerate,replicates",
    );
    let mut timings = ctx.artifact("timings.csv", "method,particles,model,mean_step_seconds");
    let horizon = y.horizon() as f64;
    for (cell, &(mi, pi, vi)) in cells.iter().enumerate() {
        let slice = &results[cell * reps..(cell + 1) * reps];
        let logliks: Vec<f64> = slice.iter().map(|r| r.0).collect();
        let std = completed_std(&logliks).map(fmt).unwrap_or_default();
        table.push(format!(
            "{},{},{},{std},{},{reps}",
            method_label(settings.methods[mi]),
            settings.particle_counts[pi],
            models[vi].0,
            degenerate_count(&logliks),
        ));
        let step_seconds: Vec<f64> = slice.iter().map(|r| r.1 / horizon).collect();
        timings.push(format!(
            "{},{},{},{}",
            method_label(settings.methods[mi]),
            settings.particle_counts[pi],
            models[vi].0,
            fmt(mean(&step_seconds)),
        ));
    }
    Ok(vec![table.write()?, timings.write()?])
}

pub fn cmd_grid(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let settings = ctx
        .config
        .grid
        .clone()
        .unwrap_or_else(|| crate::config::GridSettings::default_for(ctx.paper_scale));
    let scenario = ctx.config.resolve_scenario(ctx.paper_scale)?;
    if scenario.covariate_dim != 2 {
        return Err(Error::InvalidValue {
            what: "experiment config",
            details: "the parameter grid sweeps a two-component coefficient vector".into(),
        });
    }
    let (y, rates) = ctx.config.load_data(&scenario)?;

    let axis: Vec<f64> = (0..settings.resolution)
        .map(|i| {
            settings.lo + (settings.hi - settings.lo) * i as f64 / (settings.resolution - 1) as f64
        })
        .collect();

    let base = derive_seed(ctx.config.seed, STREAM_GRID);
    let logliks = run_many(axis.len() * axis.len(), |cell| {
        let mut variant = scenario.clone();
        let value = vec![axis[cell / axis.len()], axis[cell % axis.len()]];
        match settings.param {
            GridParam::BetaLambda => variant.params.beta_lambda = value,
            GridParam::BetaGamma => variant.params.beta_gamma = value,
        }
        let spec = variant.build()?;
        let config = FilterConfig::new(
            settings.particles,
            settings.method,
            derive_seed(base, cell as u64),
        );
        Ok(run_filter(&spec, &y, &rates, &config)?.log_likelihood)
    })?;

    // Export relative to the best finite cell so the maximum is 0 exactly.
    let best = logliks.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let mut artifact = ctx.artifact("grid.csv", "param1,param2,loglik,degenerate");
    for (cell, &ll) in logliks.iter().enumerate() {
        let p1 = axis[cell / axis.len()];
        let p2 = axis[cell % axis.len()];
        if ll.is_finite() {
            artifact.push(format!("{},{},{},0", fmt(p1), fmt(p2), fmt(ll - best)));
        } else {
            artifact.push(format!("{},{},,1", fmt(p1), fmt(p2)));
        }
    }
    Ok(vec![artifact.write()?])
}

/// Histogram mode of pooled ESS percentages: 2-point bins over [0, 100],
/// ties broken toward the lower bin.
fn ess_mode(pool: &[f64]) -> f64 {
    let mut bins = [0usize; 50];
    for &p in pool {
        let idx = ((p / 2.0) as usize).min(49);
        bins[idx] += 1;
    }
    let best = bins.iter().enumerate().max_by_key(|&(i, &c)| (c, usize::MAX - i)).unwrap().0;
    2.0 * best as f64 + 1.0
}

pub fn cmd_qsens(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let settings = ctx
        .config
        .qsens
        .clone()
        .unwrap_or_else(|| crate::config::QsensSettings::default_for(ctx.paper_scale));
    let scenario = ctx.config.resolve_scenario(ctx.paper_scale)?;
    let spec = scenario.build()?;
    let (y, data_rates) = ctx.config.load_data(&scenario)?;

    // The sweep scalar replaces the rate of every reported compartment and
    // leaves unreported ones at zero.
    let baseline = data_rates.at_time(1).to_vec();
    let assumed = |q: f64| -> Result<ReportingRates> {
        let row: Vec<f64> = baseline.iter().map(|&b| if b > 0.0 { q } else { 0.0 }).collect();
        ReportingRates::constant(&row, y.horizon())
    };

    let base = derive_seed(ctx.config.seed, STREAM_QSENS);
    let reps = settings.replicates;
    let pairs = settings.q_values.len() * settings.methods.len();
    let outputs = run_many(pairs * reps, |task| {
        let pair = task / reps;
        let rates = assumed(settings.q_values[pair / settings.methods.len()])?;
        let config = FilterConfig::new(
            settings.particles,
            settings.methods[pair % settings.methods.len()],
            derive_seed(base, task as u64),
        );
        run_filter(&spec, &y, &rates, &config)
    })?;

    let mut artifact = ctx.artifact(
        "qsens.csv",
        "q,method,std,ess_mode,ess_q05,ess_q95,n_degenerate,replicates",
    );
    let p = settings.particles as f64;
    for pair in 0..pairs {
        let slice = &outputs[pair * reps..(pair + 1) * reps];
        let logliks: Vec<f64> = slice.iter().map(|o| o.log_likelihood).collect();
        let std = completed_std(&logliks).map(fmt).unwrap_or_default();
        let mut pool: Vec<f64> = slice
            .iter()
            .flat_map(|o| o.ess_trace.iter().map(|&e| 100.0 * e / p))
            .collect();
        pool.sort_by(f64::total_cmp);
        artifact.push(format!(
            "{},{},{std},{},{},{},{},{reps}",
            fmt(settings.q_values[pair / settings.methods.len()]),
            method_label(settings.methods[pair % settings.methods.len()]),
            fmt(ess_mode(&pool)),
            fmt(quantile(&pool, 0.05)),
            fmt(quantile(&pool, 0.95)),
            degenerate_count(&logliks),
        ));
    }
    Ok(vec![artifact.write()?])
}

/// The SIS parameter layout: six Gaussian regression coefficients updated in
/// pairs, then the two reporting rates as one uniform block.
fn sis_param_specs() -> Vec<ParamSpec> {
    let names = ["beta0_1", "beta0_2", "beta_lambda_1", "beta_lambda_2", "beta_gamma_1", "beta_gamma_2"];
    let mut params: Vec<ParamSpec> = names
        .iter()
        .enumerate()
        .map(|(i, name)| ParamSpec {
            name: (*name).into(),
            prior: Prior::Normal { mean: 0.0, variance: 3.0 },
            block: i / 2,
        })
        .collect();
    for name in ["q_1", "q_2"] {
        params.push(ParamSpec {
            name: name.into(),
            prior: Prior::Uniform { lo: 0.0, hi: 1.0 },
            block: 3,
        });
    }
    params
}

fn sis_spec_from_theta(scenario: &Scenario, theta: &[f64]) -> Result<ModelSpec> {
    let params = SisParams {
        beta0: vec![theta[0], theta[1]],
        beta_lambda: vec![theta[2], theta[3]],
        beta_gamma: vec![theta[4], theta[5]],
    };
    epi_smc_core::model::sis_spec(&params, &scenario.covariates()?)
}

pub fn cmd_pmmh(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let settings = ctx
        .config
        .pmmh
        .clone()
        .unwrap_or_else(|| crate::config::PmmhSettings::default_for(ctx.paper_scale));
    let scenario = ctx.config.resolve_scenario(ctx.paper_scale)?;
    if scenario.model != ModelKind::Sis {
        return Err(Error::InvalidValue {
            what: "experiment config",
            details: "the pmmh command implements the SIS parameter layout only".into(),
        });
    }
    let (y, _) = ctx.config.load_data(&scenario)?;
    let horizon = y.horizon();

    let params = sis_param_specs();
    let log_lik = |theta: &[f64], seed: u64| -> f64 {
        let Ok(spec) = sis_spec_from_theta(&scenario, theta) else {
            return f64::NEG_INFINITY;
        };
        let Ok(rates) = ReportingRates::constant(&[theta[6], theta[7]], horizon) else {
            return f64::NEG_INFINITY;
        };
        let config = FilterConfig::new(settings.particles, settings.method, seed);
        match run_filter(&spec, &y, &rates, &config) {
            Ok(output) => output.log_likelihood,
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let pmmh_config = PmmhConfig::new(
        settings.iterations,
        settings.burn_in,
        derive_seed(ctx.config.seed, STREAM_PMMH),
    );
    let chain = run_pmmh(&params, None, log_lik, &pmmh_config)?;

    let mut written = Vec::new();
    let (path, mut file) = ctx.create("chain.csv")?;
    writeln!(file, "# {}", ctx.provenance)?;
    write_chain(&mut file, &params, &chain)?;
    written.push(path);

    // Post-burn-in draws, thinned.
    let kept: Vec<usize> =
        (settings.burn_in..settings.iterations).step_by(settings.thinning).collect();
    let names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
    let mut posterior = ctx.artifact("posterior.csv", &format!("iteration,{}", names.join(",")));
    for &i in &kept {
        let cells: Vec<String> = chain.samples[i].iter().map(|&v| fmt(v)).collect();
        posterior.push(format!("{i},{}", cells.join(",")));
    }
    written.push(posterior.write()?);

    // Predictive bands: evenly spaced posterior draws, each re-simulated
    // once; quantiles of latent and reported counts per step.
    let draws = settings.predictive_draws.min(kept.len());
    let m = scenario.compartments();
    let mut latent = vec![vec![Vec::with_capacity(draws); m]; horizon + 1];
    let mut reported = vec![vec![Vec::with_capacity(draws); m]; horizon + 1];
    for d in 0..draws {
        let theta = &chain.samples[kept[d * kept.len() / draws]];
        let spec = sis_spec_from_theta(&scenario, theta)?;
        let rates = ReportingRates::constant(&[theta[6], theta[7]], horizon)?;
        let mut rng = stream_rng(derive_seed(ctx.config.seed, STREAM_PREDICTIVE), d as u64);
        let trajectory = simulate(&spec, horizon, &mut rng);
        let sampled = observe(&trajectory, &rates, &mut rng)?;
        let observed = epi_smc_core::observe::aggregate_counts(&sampled, m);
        for s in 0..=horizon {
            for c in 0..m {
                latent[s][c].push(f64::from(trajectory.counts[s].counts()[c]));
                if s >= 1 {
                    reported[s][c].push(f64::from(observed.at_time(s)[c]));
                }
            }
        }
    }
    let mut predictive = ctx.artifact(
        "predictive.csv",
        "step,compartment,latent_q05,latent_q50,latent_q95,reported_q05,reported_q50,reported_q95",
    );
    for s in 0..=horizon {
        for c in 0..m {
            latent[s][c].sort_by(f64::total_cmp);
            reported[s][c].sort_by(f64::total_cmp);
            let band = |v: &[f64], p: f64| if v.is_empty() { String::new() } else { fmt(quantile(v, p)) };
            predictive.push(format!(
                "{s},{},{},{},{},{},{},{}",
                c + 1,
                band(&latent[s][c], 0.05),
                band(&latent[s][c], 0.5),
                band(&latent[s][c], 0.95),
                band(&reported[s][c], 0.05),
                band(&reported[s][c], 0.5),
                band(&reported[s][c], 0.95),
            ));
        }
    }
    written.push(predictive.write()?);

    Ok(written)
}

pub fn cmd_exact_check(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let settings = ctx
        .config
        .exact_check
        .clone()
        .unwrap_or_else(|| crate::config::ExactCheckSettings::default_for(ctx.paper_scale));
    let scenario = ctx.config.resolve_scenario(ctx.paper_scale)?;
    let spec = scenario.build()?;
    let (y, rates) = ctx.config.load_data(&scenario)?;

    let exact = epi_smc_core::exact::exact_forward(&spec, &y, &rates, settings.state_cap)?;

    let base = derive_seed(ctx.config.seed, STREAM_EXACT);
    let reps = settings.replicates;
    let logliks = run_many(settings.methods.len() * reps, |task| {
        let config = FilterConfig::new(
            settings.particles,
            settings.methods[task / reps],
            derive_seed(base, task as u64),
        );
        Ok(run_filter(&spec, &y, &rates, &config)?.log_likelihood)
    })?;

    let mut artifact = ctx.artifact("exact_check.csv", "method,replicate,loglik,exact_loglik");
    for (task, &ll) in logliks.iter().enumerate() {
        artifact.push(format!(
            "{},{},{},{}",
            method_label(settings.methods[task / reps]),
            task % reps,
            fmt(ll),
            fmt(exact.log_likelihood),
        ));
    }
    Ok(vec![artifact.write()?])
}
