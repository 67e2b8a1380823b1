use anyhow::Result;
use boltzmann_core::criteria::Criterion;
use boltzmann_core::dist::{Distribution, LatentDecoder};
use boltzmann_core::oracles::{
    discrete_qbeta_values, latent_kl_bound_check, tilt_closed_form, top_quantile_threshold, RejectionSampler,
};
use boltzmann_core::{rng_from_seed, stats::mean};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde_json::{json, Value};

use super::Outcome;
use crate::config::{OracleSpec, Seeds};
use crate::output::{write_json, OutDir};

fn vec_or_scalar(v: &[f64]) -> String {
    match v {
        [x] => format!("{x}"),
        _ => format!("{v:?}"),
    }
}

/// Evaluates an oracle, returning printable lines and a JSON record.
pub fn evaluate(spec: &OracleSpec, seeds: Seeds) -> Result<(Vec<String>, Value)> {
    match spec {
        OracleSpec::Tilt { mean, var, a, beta } => {
            let m = tilt_closed_form(mean, var, a, *beta)?;
            let line = if *beta == 0.0 {
                format!("q=p (identity) D_KL={}", m.dkl)
            } else {
                format!("q=N({},{}) D_KL={}", vec_or_scalar(&m.q.mean), vec_or_scalar(&m.q.var), m.dkl)
            };
            Ok((
                vec![line, format!("E_q[f]={} Var_q[f]={} log_Z={}", m.mean_f, m.var_f, m.log_z)],
                serde_json::to_value(&m)?,
            ))
        }
        OracleSpec::KlBound {
            trials,
            latent_dim,
            data_dim,
        } => {
            anyhow::ensure!(*trials >= 1 && *latent_dim >= 1 && *data_dim >= 1, "kl_bound: sizes must be positive");
            let mut rng = rng_from_seed(seeds.diagnostics);
            let mut min_margin = f64::INFINITY;
            let mut holds = 0;
            for _ in 0..*trials {
                let (dec, m, v) = random_trial(&mut rng, *latent_dim, *data_dim)?;
                let c = latent_kl_bound_check(&dec, &m, &v)?;
                min_margin = min_margin.min(c.margin);
                holds += c.bound_holds as usize;
            }
            let verdict = if holds == *trials { "bound holds" } else { "bound violated" };
            Ok((
                vec![format!("{verdict} in {holds}/{trials} trials, min margin {min_margin}")],
                json!({ "trials": trials, "holds": holds, "min_margin": min_margin }),
            ))
        }
        OracleSpec::Quantile { rho, samples } => {
            let p = Distribution::<f64>::standard_normal(1);
            let t = top_quantile_threshold(&p, &Criterion::linear(vec![1.0]), *rho, *samples, seeds.diagnostics)?;
            Ok((
                vec![format!("threshold={t} (N(0,1), f=x, rho={rho})")],
                json!({ "rho": rho, "threshold": t, "samples": samples }),
            ))
        }
        OracleSpec::Rejection {
            rho,
            samples,
            max_attempts,
        } => {
            let p = Distribution::<f64>::standard_normal(1);
            let f = Criterion::linear(vec![1.0]);
            let t = top_quantile_threshold(&p, &f, *rho, 1_000_000.max((100.0 / rho).ceil() as usize), seeds.diagnostics)?;
            let mut rs = RejectionSampler::new(p, f, Some(t))?;
            rs.max_attempts = *max_attempts;
            let out = rs.sample(*samples, seeds.diagnostics.wrapping_add(1))?;
            let m = mean(&out.f_values);
            Ok((
                vec![format!(
                    "accepted={} attempts={} acceptance_rate={} mean_f={m}",
                    out.samples.len(),
                    out.attempts,
                    out.acceptance_rate()
                )],
                json!({
                    "rho": rho, "threshold": t, "accepted": out.samples.len(),
                    "attempts": out.attempts, "acceptance_rate": out.acceptance_rate(), "mean_f": m,
                }),
            ))
        }
        OracleSpec::Discrete { support, probs, beta } => {
            boltzmann_core::oracles::FiniteDistribution::new(support.iter().map(|&x| vec![x]).collect(), probs.clone())?;
            let t = discrete_qbeta_values(probs, support, *beta);
            Ok((
                vec![format!(
                    "Z={} E_q[f]={} Var={} third={} D_KL={}",
                    t.log_z.exp(),
                    t.mean_f,
                    t.var_f,
                    t.third_central_f,
                    t.dkl
                )],
                serde_json::to_value(&t)?,
            ))
        }
    }
}

/// Random linear-Gaussian decoder with a random diagonal latent Gaussian.
pub fn random_trial(
    rng: &mut boltzmann_core::Rng,
    latent_dim: usize,
    data_dim: usize,
) -> Result<(LatentDecoder<f64>, Vec<f64>, Vec<f64>)> {
    let weights = (0..data_dim)
        .map(|_| (0..latent_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let noise = rng.random_range(0.05..2.0);
    let m = (0..latent_dim).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    let v = (0..latent_dim).map(|_| rng.random_range(0.1..3.0)).collect();
    Ok((LatentDecoder::new(weights, noise)?, m, v))
}

pub fn run(spec: &OracleSpec, seeds: Seeds, out: Option<&OutDir>) -> Result<Outcome> {
    let (lines, record) = evaluate(spec, seeds)?;
    for l in &lines {
        println!("{l}");
    }
    if let Some(dir) = out {
        write_json(&dir.path("oracle.json"), &json!({ "oracle": spec, "seeds": seeds, "result": record }))?;
    }
    Ok(Outcome::Done)
}
