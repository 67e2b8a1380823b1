use anyhow::Result;
use boltzmann_core::diagnostics::{compare_criteria, importance_curves};

use super::{curves_table, Outcome};
use crate::config::{RunConfig, Seeds};
use crate::manifest::{RankEntry, RunManifest};
use crate::output::{fmt_f64, write_json, OutDir, Table};
use crate::problem::Problem;

pub fn run(cfg: &RunConfig, seeds: Seeds, out: &OutDir) -> Result<Outcome> {
    let problem = Problem::from_config(cfg)?;
    let candidates = cfg
        .candidates
        .iter()
        .map(|s| {
            let c = problem.criterion(cfg, s, seeds.normalize())?;
            Ok((c.label().to_string(), c))
        })
        .collect::<Result<Vec<_>>>()?;
    let d = &cfg.diagnostics;
    let report = compare_criteria(&candidates, &problem.p, d.samples, d.bins, seeds.diagnostics)?;

    let mut manifest = RunManifest::new("diagnose", cfg, seeds);
    manifest.status = "completed".to_string();
    for c in &report.candidates {
        let mut t = Table::new(["bin_lower", "bin_upper", "count"]);
        for (i, &n) in c.profile.counts.iter().enumerate() {
            t.push(vec![
                fmt_f64(c.profile.bin_edges[i]),
                fmt_f64(c.profile.bin_edges[i + 1]),
                n.to_string(),
            ]);
        }
        let name = format!("histogram_{}.csv", c.position);
        t.write(&out.path(&name))?;
        manifest.file(&format!("histogram_{}", c.position), &name);
    }
    write_json(&out.path("report.json"), &report)?;
    manifest.file("report", "report.json");
    manifest.ranking = Some(
        report
            .ranking
            .iter()
            .enumerate()
            .map(|(rank, &i)| {
                let c = &report.candidates[i];
                RankEntry {
                    rank: rank + 1,
                    position: i,
                    label: c.label.clone(),
                    regularity_score: c.profile.regularity_score,
                    zero_mass_fraction: c.profile.zero_mass_fraction,
                }
            })
            .collect(),
    );

    if let (Some(grid), Some(section)) = (&d.curve_grid, &cfg.criterion) {
        let f = problem.criterion(cfg, section, seeds.normalize())?;
        let curve = importance_curves(&f, &problem.p, grid, d.curve_samples, seeds.curves())?;
        curves_table(&curve).write(&out.path("curves.csv"))?;
        manifest.file("curves", "curves.csv");
    }
    write_json(&out.path("manifest.json"), &manifest)?;
    for e in manifest.ranking.iter().flatten() {
        println!(
            "{}. {} score={} zero_mass={}",
            e.rank, e.label, e.regularity_score, e.zero_mass_fraction
        );
    }
    Ok(Outcome::Done)
}
