pub mod diagnose;
pub mod oracle;
pub mod pareto;
pub mod tune;

use anyhow::Result;
use boltzmann_core::beta::MomentEstimates;
use boltzmann_core::diagnostics::TheoreticalCurve;

use crate::output::{fmt_f64, Table};

/// How a command finished; errors are reported separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Done,
    NotConverged,
}

pub(crate) fn moments_row(m: &MomentEstimates<f64>) -> Vec<String> {
    [m.mean_f, m.se_mean, m.var_f, m.se_var, m.third_central_f, m.se_third, m.dkl, m.se_dkl]
        .iter()
        .map(|&v| fmt_f64(v))
        .collect()
}

pub(crate) const MOMENT_COLUMNS: [&str; 8] = [
    "mean_f",
    "se_mean_f",
    "var_f",
    "se_var_f",
    "third_central_f",
    "se_third_central_f",
    "dkl",
    "se_dkl",
];

pub(crate) fn curves_table(c: &TheoreticalCurve<f64>) -> Table {
    let mut t = Table::new(["beta", "log_z", "mean_f", "se_mean_f", "dkl", "se_dkl", "ess", "reliable"]);
    for i in 0..c.len() {
        t.push(vec![
            fmt_f64(c.betas[i]),
            fmt_f64(c.log_z[i]),
            fmt_f64(c.mean_f[i]),
            fmt_f64(c.se_mean[i]),
            fmt_f64(c.dkl[i]),
            fmt_f64(c.se_dkl[i]),
            fmt_f64(c.ess[i]),
            c.reliable[i].to_string(),
        ]);
    }
    t
}

/// Non-decreasing up to `k` combined standard errors between neighbours.
pub(crate) fn is_monotone(values: &[(f64, f64)], k: f64) -> bool {
    values
        .windows(2)
        .all(|w| w[1].0 >= w[0].0 - k * (w[0].1 * w[0].1 + w[1].1 * w[1].1).sqrt())
}

pub(crate) fn ensure_finite(values: &[f64]) -> Result<()> {
    anyhow::ensure!(values.iter().all(|v| v.is_finite()), "non-finite value in results");
    Ok(())
}
