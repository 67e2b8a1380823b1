//! Record of a run: configuration echo, results, and the files produced.

use std::collections::BTreeMap;

use boltzmann_core::beta::{BetaRecord, MomentEstimates, StepKind};
use boltzmann_core::criteria::Affine;
use boltzmann_core::diagnostics::AuditReport;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Seeds};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub seeds: Seeds,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<Affine<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub iterations: Vec<IterationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<FinalResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monotone: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditReport<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranking: Option<Vec<RankEntry>>,
    /// Output files relative to the output directory.
    pub files: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, seeds: Seeds) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            seeds,
            status: String::new(),
            normalization: None,
            iterations: Vec::new(),
            result: None,
            sweep: Vec::new(),
            monotone: None,
            audit: None,
            baseline: None,
            ranking: None,
            files: BTreeMap::new(),
        }
    }

    pub fn file(&mut self, key: &str, name: &str) {
        self.files.insert(key.to_string(), name.to_string());
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub beta: f64,
    pub moments: MomentEstimates<f64>,
    pub residual: f64,
    pub log_z: f64,
    /// Step taken after this iteration, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<StepKind>,
}

impl IterationRecord {
    pub fn from_history(history: &[BetaRecord<f64>], steps: &[StepKind]) -> Vec<Self> {
        history
            .iter()
            .enumerate()
            .map(|(i, r)| Self {
                iter: i,
                beta: r.beta,
                moments: r.moments,
                residual: r.residual,
                log_z: r.log_z,
                step: steps.get(i).copied(),
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalResult {
    pub beta: f64,
    pub mean_f: f64,
    pub se_mean_f: f64,
    pub var_f: f64,
    pub dkl: f64,
    pub se_dkl: f64,
}

impl FinalResult {
    pub fn new(beta: f64, m: &MomentEstimates<f64>) -> Self {
        Self {
            beta,
            mean_f: m.mean_f,
            se_mean_f: m.se_mean,
            var_f: m.var_f,
            dkl: m.dkl,
            se_dkl: m.se_dkl,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub beta: f64,
    pub moments: MomentEstimates<f64>,
}

/// Rejection sampling at a matched budget. The tilted and truncated laws
/// differ, so only the declared metrics are compared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub rho: f64,
    pub threshold: f64,
    pub accepted: usize,
    pub attempts: u64,
    pub acceptance_rate: f64,
    pub draws_per_sample: f64,
    /// One base draw per tuned sample.
    pub tuned_draws_per_sample: f64,
    pub rejection_mean_f: f64,
    pub tuned_mean_f: f64,
    /// `|tuned − rejection| / |rejection|` of the criterion means.
    pub mean_f_relative_gap: f64,
    /// Fraction of tuned samples at or above the threshold.
    pub tuned_mass_above_threshold: f64,
    pub metrics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub rank: usize,
    pub position: usize,
    pub label: String,
    pub regularity_score: f64,
    pub zero_mass_fraction: f64,
}
