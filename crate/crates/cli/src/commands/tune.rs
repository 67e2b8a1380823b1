use std::time::Instant;

use anyhow::{Context, Result};
use boltzmann_core::beta::{estimate_moments, solve, BetaState, SolveStatus, SolverConfig, Target};
use boltzmann_core::criteria::CriterionFn;
use boltzmann_core::flows::FlowModel;
use boltzmann_core::oracles::{top_quantile_threshold, RejectionSampler};
use boltzmann_core::stats::mean;
use boltzmann_core::vi::{fit_q, TunedModel};
use boltzmann_core::{rng_stream, Error};
use log::info;
use serde_json::json;

use super::{moments_row, Outcome, MOMENT_COLUMNS};
use crate::config::{RunConfig, Seeds};
use crate::manifest::{BaselineReport, FinalResult, IterationRecord, RunManifest};
use crate::output::{fmt_f64, write_json, OutDir, Table};
use crate::problem::{AnyCriterion, Problem};

pub fn run(cfg: &RunConfig, seeds: Seeds, out: &OutDir) -> Result<Outcome> {
    let start = Instant::now();
    let problem = Problem::from_config(cfg)?;
    let section = cfg.criterion.as_ref().context("tune: config needs a `criterion`")?;
    let f = problem.criterion(cfg, section, seeds.normalize())?;
    let dim = problem.p.dim();
    let init = FlowModel::init_identity(dim, &cfg.flow, seeds.init)?;
    let tune = cfg.optimizer.tune_config(seeds.sampling);
    let solver = cfg.solver.solver_config(cfg.optimizer.warm_steps, seeds.moments());
    let mut manifest = RunManifest::new("tune", cfg, seeds);
    manifest.normalization = f.normalization();

    let (model, state, status) = match (cfg.beta, &cfg.target) {
        (Some(beta), _) => {
            let (model, state) = pinned(&problem, &f, beta, init, &tune, &solver)?;
            (model, state, "pinned")
        }
        (None, Some(spec)) => {
            let target: Target<f64> = spec.target()?;
            let sol = solve(&problem.p, &f, &target, init, &tune, &solver)?;
            let status = match sol.status {
                SolveStatus::Converged => "converged",
                SolveStatus::IterationCap => "iteration_cap",
            };
            (sol.model, sol.state, status)
        }
        (None, None) => anyhow::bail!("tune: config needs a `target` or a fixed `beta`"),
    };
    let fit_secs = start.elapsed().as_secs_f64();
    info!("tune: {status} at beta = {}", state.beta);

    manifest.status = status.to_string();
    manifest.iterations = IterationRecord::from_history(&state.history, &state.steps);
    let last = state.latest().context("no iterations recorded")?;
    manifest.result = Some(FinalResult::new(last.beta, &last.moments));

    write_beta_trace(&state, out)?;
    manifest.file("beta_trace", "beta_trace.csv");
    write_objective_trace(&model, out)?;
    manifest.file("objective_trace", "objective_trace.csv");
    write_json(&out.path("flow.json"), &model.flow)?;
    manifest.file("flow", "flow.json");
    let dump_f = write_samples(&model, &f, &problem, cfg.output.samples, seeds.dump(), out)?;
    manifest.file("samples", "samples.csv");

    let baseline_start = Instant::now();
    let mut baseline_error = None;
    if let Some(b) = &cfg.baseline {
        match baseline(&problem, &f, b, &dump_f, last.moments.mean_f, seeds) {
            Ok(report) => manifest.baseline = Some(report),
            Err(e) => baseline_error = Some(e),
        }
    }
    let baseline_secs = baseline_start.elapsed().as_secs_f64();

    manifest.file("timings", "timings.json");
    write_json(
        &out.path("timings.json"),
        &json!({
            "fit_seconds": fit_secs,
            "baseline_seconds": baseline_secs,
            "total_seconds": start.elapsed().as_secs_f64(),
        }),
    )?;
    write_json(&out.path("manifest.json"), &manifest)?;
    if let Some(e) = baseline_error {
        return Err(e.context("rejection baseline"));
    }
    println!(
        "status={} beta={} E_q[f]={} (se {}) D_KL={} (se {})",
        status, last.beta, last.moments.mean_f, last.moments.se_mean, last.moments.dkl, last.moments.se_dkl
    );
    Ok(if status == "iteration_cap" {
        Outcome::NotConverged
    } else {
        Outcome::Done
    })
}

fn pinned(
    problem: &Problem,
    f: &AnyCriterion,
    beta: f64,
    init: FlowModel<f64>,
    tune: &boltzmann_core::vi::TuneConfig<f64>,
    solver: &SolverConfig<f64>,
) -> Result<(TunedModel<f64>, BetaState<f64>)> {
    let model = if beta > 0.0 {
        fit_q(&problem.p, f, beta, init, tune)?
    } else {
        TunedModel::untuned(problem.p.clone(), init)
    };
    let moments = estimate_moments(&model, f, solver.moment_samples, solver.moment_seed)?;
    let mut state = BetaState::new(beta);
    // residual against E_q f itself: the pinned run has no target
    state.record(moments, &Target::expectation(moments.mean_f));
    Ok((model, state))
}

fn write_beta_trace(state: &BetaState<f64>, out: &OutDir) -> Result<()> {
    let mut header = vec!["iter", "beta"];
    header.extend(MOMENT_COLUMNS);
    header.extend(["residual", "log_z", "step"]);
    let mut t = Table::new(header);
    for (i, r) in state.history.iter().enumerate() {
        let mut row = vec![i.to_string(), fmt_f64(r.beta)];
        row.extend(moments_row(&r.moments));
        row.push(fmt_f64(r.residual));
        row.push(fmt_f64(r.log_z));
        row.push(
            state
                .steps
                .get(i)
                .map(|s| serde_json::to_value(s).unwrap().as_str().unwrap_or_default().to_string())
                .unwrap_or_default(),
        );
        t.push(row);
    }
    t.write(&out.path("beta_trace.csv"))
}

fn write_objective_trace(model: &TunedModel<f64>, out: &OutDir) -> Result<()> {
    let mut t = Table::new(["step", "objective", "mean_f", "dkl"]);
    for r in &model.trace {
        t.push(vec![r.step.to_string(), fmt_f64(r.objective), fmt_f64(r.mean_f), fmt_f64(r.dkl)]);
    }
    t.write(&out.path("objective_trace.csv"))
}

/// Writes the sample dump and returns the criterion values of its rows.
fn write_samples(
    model: &TunedModel<f64>,
    f: &AnyCriterion,
    problem: &Problem,
    n: usize,
    seed: u64,
    out: &OutDir,
) -> Result<Vec<f64>> {
    let draws = model.draws(n, seed)?;
    let dim = model.dim();
    let mut crit_rng = rng_stream(seed, 1);
    let mut decode_rng = rng_stream(seed, 2);
    let latent = problem.decoder.as_ref();
    let mut header = vec!["index".to_string()];
    match latent {
        None => header.extend((0..dim).map(|j| format!("x{j}"))),
        Some(dec) => {
            header.extend((0..dim).map(|j| format!("z{j}")));
            header.extend((0..dec.data_dim()).map(|j| format!("x{j}")));
        }
    }
    header.extend(["f".to_string(), "log_ratio".to_string()]);
    let mut t = Table::new(header);
    let mut values = Vec::with_capacity(n);
    for (i, d) in draws.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(d.value.iter().map(|&v| fmt_f64(v)));
        if let Some(dec) = latent {
            row.extend(dec.decode(&d.value, &mut decode_rng).iter().map(|&v| fmt_f64(v)));
        }
        let fv = f.value(&d.value, &mut crit_rng);
        values.push(fv);
        row.push(fmt_f64(fv));
        row.push(fmt_f64(d.log_ratio(&model.base)));
        t.push(row);
    }
    t.write(&out.path("samples.csv"))?;
    Ok(values)
}

fn baseline(
    problem: &Problem,
    f: &AnyCriterion,
    spec: &crate::config::BaselineSpec,
    tuned_f: &[f64],
    tuned_mean: f64,
    seeds: Seeds,
) -> Result<BaselineReport> {
    let c = f.data().context("baseline needs a data-space criterion")?.clone();
    let threshold = top_quantile_threshold(&problem.p, &c, spec.rho, spec.quantile_samples, seeds.baseline())?;
    let mut rs = RejectionSampler::new(problem.p.clone(), c, Some(threshold))?;
    rs.max_attempts = spec.max_attempts;
    let outcome = rs.sample(spec.samples, seeds.baseline().wrapping_add(1)).map_err(|e| match e {
        Error::RareEvent { .. } => anyhow::anyhow!("{e}; the target fraction is too rare for rejection sampling"),
        other => other.into(),
    })?;
    let rejection_mean = mean(&outcome.f_values);
    let above = tuned_f.iter().filter(|&&v| v >= threshold).count();
    Ok(BaselineReport {
        rho: spec.rho,
        threshold,
        accepted: outcome.samples.len(),
        attempts: outcome.attempts,
        acceptance_rate: outcome.acceptance_rate(),
        draws_per_sample: outcome.draws_per_sample(),
        tuned_draws_per_sample: 1.0,
        rejection_mean_f: rejection_mean,
        tuned_mean_f: tuned_mean,
        mean_f_relative_gap: (tuned_mean - rejection_mean).abs() / rejection_mean.abs(),
        tuned_mass_above_threshold: above as f64 / tuned_f.len().max(1) as f64,
        metrics: vec![
            "mean_f_relative_gap".to_string(),
            "tuned_mass_above_threshold".to_string(),
            "draws_per_sample".to_string(),
        ],
    })
}
