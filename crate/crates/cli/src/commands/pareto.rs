use std::time::Instant;

use anyhow::{Context, Result};
use boltzmann_core::beta::pareto_sweep;
use boltzmann_core::diagnostics::{audit_run, importance_curves};
use boltzmann_core::flows::FlowModel;
use serde_json::json;

use super::{curves_table, ensure_finite, is_monotone, moments_row, Outcome, MOMENT_COLUMNS};
use crate::config::{check_grid, RunConfig, Seeds};
use crate::manifest::{RunManifest, SweepRecord};
use crate::output::{fmt_f64, write_json, OutDir, Table};
use crate::problem::Problem;

pub fn run(cfg: &RunConfig, seeds: Seeds, out: &OutDir) -> Result<Outcome> {
    let start = Instant::now();
    let grid = &cfg.sweep.as_ref().context("pareto: config needs a `sweep` section")?.grid;
    check_grid(grid)?;
    let problem = Problem::from_config(cfg)?;
    let section = cfg.criterion.as_ref().context("pareto: config needs a `criterion`")?;
    let f = problem.criterion(cfg, section, seeds.normalize())?;
    let init = FlowModel::init_identity(problem.p.dim(), &cfg.flow, seeds.init)?;
    let tune = cfg.optimizer.tune_config(seeds.sampling);
    let solver = cfg.solver.solver_config(cfg.optimizer.warm_steps, seeds.moments());
    let points = pareto_sweep(&problem.p, &f, grid, init, &tune, &solver)?;
    let sweep_secs = start.elapsed().as_secs_f64();

    let mut manifest = RunManifest::new("pareto", cfg, seeds);
    manifest.normalization = f.normalization();
    manifest.status = "completed".to_string();
    let mut header = vec!["beta"];
    header.extend(MOMENT_COLUMNS);
    let mut t = Table::new(header);
    for pt in &points {
        ensure_finite(&[pt.moments.mean_f, pt.moments.dkl])?;
        let mut row = vec![fmt_f64(pt.beta)];
        row.extend(moments_row(&pt.moments));
        t.push(row);
        manifest.sweep.push(SweepRecord {
            beta: pt.beta,
            moments: pt.moments,
        });
    }
    t.write(&out.path("sweep.csv"))?;
    manifest.file("sweep", "sweep.csv");
    let means: Vec<(f64, f64)> = points.iter().map(|p| (p.moments.mean_f, p.moments.se_mean)).collect();
    let kls: Vec<(f64, f64)> = points.iter().map(|p| (p.moments.dkl, p.moments.se_dkl)).collect();
    manifest.monotone = Some(is_monotone(&means, 3.0) && is_monotone(&kls, 3.0));

    if cfg.diagnostics.audit {
        let curve = importance_curves(&f, &problem.p, grid, cfg.diagnostics.curve_samples, seeds.curves())?;
        curves_table(&curve).write(&out.path("curves.csv"))?;
        manifest.file("curves", "curves.csv");
        let pairs: Vec<_> = points.iter().map(|p| (p.beta, p.moments)).collect();
        manifest.audit = Some(audit_run(&pairs, &curve)?);
    }

    manifest.file("timings", "timings.json");
    write_json(
        &out.path("timings.json"),
        &json!({ "sweep_seconds": sweep_secs, "total_seconds": start.elapsed().as_secs_f64() }),
    )?;
    write_json(&out.path("manifest.json"), &manifest)?;
    for pt in &points {
        println!("beta={} E_q[f]={} D_KL={}", pt.beta, pt.moments.mean_f, pt.moments.dkl);
    }
    Ok(Outcome::Done)
}
