//! Run configuration, read from JSON and validated before any computation.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use boltzmann_core::beta::{SolverConfig, Target, TargetMode};
use boltzmann_core::criteria::{Classifier, ClassifierForm};
use boltzmann_core::dist::{Distribution, LatentDecoder};
use boltzmann_core::flows::FlowSpec;
use boltzmann_core::vi::TuneConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Base model `p`; mutually exclusive with `latent`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<Distribution<f64>>,
    /// Tune the standard-normal prior of a frozen decoder instead of `p`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<LatentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<CriterionSection>,
    #[serde(default)]
    pub flow: FlowSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetSpec>,
    /// Fixed β; the search is skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<CriterionSection>,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineSpec>,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentSpec {
    pub decoder: LatentDecoder<f64>,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
}

fn default_mc_samples() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionSection {
    pub function: CriterionSpec,
    #[serde(default = "yes")]
    pub normalize: bool,
    #[serde(default = "default_normalize_samples")]
    pub normalize_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

fn yes() -> bool {
    true
}

fn default_normalize_samples() -> usize {
    10_000
}

/// Criterion constructors available from configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "constructor", rename_all = "snake_case", deny_unknown_fields)]
pub enum CriterionSpec {
    Linear {
        weights: Vec<f64>,
        #[serde(default)]
        offset: f64,
    },
    Quadratic {
        center: Vec<f64>,
        weights: Vec<f64>,
    },
    Classifier {
        classifier: Classifier<f64>,
        target: usize,
        form: ClassifierForm,
    },
    Entropy {
        classifier: Classifier<f64>,
    },
    /// `log p_data − log p`, with `p` the configured distribution.
    Adversarial {
        data: Distribution<f64>,
    },
    Peak {
        start: usize,
        end: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        temperature: Option<f64>,
    },
    WindowContrast {
        start: usize,
        end: usize,
    },
}

/// Optimizer settings; the batch seed comes from `seeds.sampling`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub warm_steps: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub window: usize,
    pub rel_tol: f64,
    pub early_stop: bool,
    pub average_window: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let t = TuneConfig::<f64>::default();
        Self {
            batch_size: t.batch_size,
            steps: t.steps,
            warm_steps: SolverConfig::<f64>::default().warm_steps,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            window: t.window,
            rel_tol: t.rel_tol,
            early_stop: t.early_stop,
            average_window: t.average_window,
        }
    }
}

impl OptimizerConfig {
    pub fn tune_config(&self, seed: u64) -> TuneConfig<f64> {
        TuneConfig {
            batch_size: self.batch_size,
            steps: self.steps,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            seed,
            window: self.window,
            rel_tol: self.rel_tol,
            early_stop: self.early_stop,
            average_window: self.average_window,
        }
    }
}

/// β-search settings; the moment seed comes from `seeds.sampling`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub max_iters: usize,
    pub moment_samples: usize,
    pub initial_beta: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub se_mult: f64,
    pub trust_region: bool,
    pub trust_floor: f64,
    pub flat_var: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::<f64>::default();
        Self {
            max_iters: s.max_iters,
            moment_samples: s.moment_samples,
            initial_beta: s.initial_beta,
            abs_tol: s.abs_tol,
            rel_tol: s.rel_tol,
            se_mult: s.se_mult,
            trust_region: s.trust_region,
            trust_floor: s.trust_floor,
            flat_var: s.flat_var,
        }
    }
}

impl SolverSection {
    pub fn solver_config(&self, warm_steps: usize, moment_seed: u64) -> SolverConfig<f64> {
        SolverConfig {
            max_iters: self.max_iters,
            moment_samples: self.moment_samples,
            moment_seed,
            initial_beta: self.initial_beta,
            warm_steps,
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            se_mult: self.se_mult,
            trust_region: self.trust_region,
            trust_floor: self.trust_floor,
            flat_var: self.flat_var,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub mode: TargetMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    /// Divergence budget given as the kept fraction, `value = −ln ρ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl TargetSpec {
    pub fn target(&self) -> Result<Target<f64>> {
        let t = match (self.mode, self.value, self.rho) {
            (_, Some(_), Some(_)) => bail!("target: give either value or rho, not both"),
            (TargetMode::Expectation, _, Some(_)) => bail!("target: rho only applies to divergence mode"),
            (TargetMode::Divergence, None, Some(rho)) => Target::quantile(rho)?,
            (mode, Some(value), None) => Target { mode, value, rho: None },
            (_, None, None) => bail!("target: value (or rho) is required"),
        };
        t.validate()?;
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub samples: usize,
    pub bins: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plot_cap: Option<f64>,
    pub curve_samples: usize,
    /// Grid for importance curves in `diagnose`; `pareto` uses the sweep grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curve_grid: Option<Vec<f64>>,
    /// Compare sweeps with importance curves.
    pub audit: bool,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            samples: 10_000,
            bins: 50,
            plot_cap: None,
            curve_samples: 100_000,
            curve_grid: None,
            audit: true,
        }
    }
}

/// Rejection-sampling comparison run after `tune`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    pub rho: f64,
    #[serde(default = "default_baseline_samples")]
    pub samples: usize,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u64,
    #[serde(default = "default_quantile_samples")]
    pub quantile_samples: usize,
}

fn default_baseline_samples() -> usize {
    100
}

fn default_max_attempts() -> u64 {
    boltzmann_core::oracles::DEFAULT_MAX_ATTEMPTS
}

fn default_quantile_samples() -> usize {
    1_000_000
}

/// The three sources of randomness of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    /// Flow initialization.
    pub init: u64,
    /// Training batches, moment estimates, normalization, sample dumps.
    pub sampling: u64,
    /// Gradient profiles, importance curves, rejection baseline.
    pub diagnostics: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self {
            init: 0,
            sampling: 1,
            diagnostics: 2,
        }
    }
}

impl Seeds {
    /// Seeds derived from a single override value.
    pub fn from_override(n: u64) -> Self {
        Self {
            init: n,
            sampling: n.wrapping_add(1),
            diagnostics: n.wrapping_add(2),
        }
    }

    pub fn moments(&self) -> u64 {
        self.sampling.wrapping_add(1000)
    }

    pub fn dump(&self) -> u64 {
        self.sampling.wrapping_add(2000)
    }

    pub fn normalize(&self) -> u64 {
        self.sampling.wrapping_add(3000)
    }

    pub fn curves(&self) -> u64 {
        self.diagnostics.wrapping_add(1)
    }

    pub fn baseline(&self) -> u64 {
        self.diagnostics.wrapping_add(2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Used when `--out` is not given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Rows of the sample dump.
    pub samples: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            samples: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    Tilt {
        mean: Vec<f64>,
        var: Vec<f64>,
        a: Vec<f64>,
        beta: f64,
    },
    KlBound {
        #[serde(default = "one")]
        trials: usize,
        #[serde(default = "one")]
        latent_dim: usize,
        #[serde(default = "one")]
        data_dim: usize,
    },
    Quantile {
        rho: f64,
        #[serde(default = "default_quantile_samples")]
        samples: usize,
    },
    Rejection {
        rho: f64,
        #[serde(default = "default_baseline_samples")]
        samples: usize,
        #[serde(default = "default_max_attempts")]
        max_attempts: u64,
    },
    /// Finite support on the real line with `f(x) = x`.
    Discrete {
        support: Vec<f64>,
        probs: Vec<f64>,
        beta: f64,
    },
}

fn one() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Tune,
    Pareto,
    Diagnose,
    Oracle,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Data-space dimension of the tuned variable.
    pub fn tuned_dim(&self) -> Option<usize> {
        match (&self.distribution, &self.latent) {
            (Some(d), None) => Some(d.dim()),
            (None, Some(l)) => Some(l.decoder.latent_dim()),
            _ => None,
        }
    }

    /// Checks everything `cmd` needs before any sampling happens.
    pub fn validate(&self, cmd: Command) -> Result<()> {
        if cmd == Command::Oracle {
            ensure!(self.oracle.is_some(), "oracle: config needs an `oracle` section");
            return Ok(());
        }
        match (&self.distribution, &self.latent) {
            (Some(d), None) => d.validate()?,
            (None, Some(l)) => {
                l.decoder.validate()?;
                ensure!(l.mc_samples >= 1, "latent.mc_samples must be at least 1");
            }
            (Some(_), Some(_)) => bail!("give either `distribution` or `latent`, not both"),
            (None, None) => bail!("config needs a `distribution` or a `latent` section"),
        }
        if matches!(self.distribution, Some(Distribution::FlowPushforward { .. })) {
            bail!("flow-pushforward base distributions have no score and cannot be tuned");
        }
        let opt = &self.optimizer;
        opt.tune_config(0).validate()?;
        ensure!(opt.warm_steps >= 1, "optimizer.warm_steps must be at least 1");
        self.solver.solver_config(opt.warm_steps, 0).validate()?;
        let d = &self.diagnostics;
        ensure!(d.bins >= 1, "diagnostics.bins must be at least 1");
        match cmd {
            Command::Tune => {
                ensure!(self.criterion.is_some(), "tune: config needs a `criterion`");
                match (&self.target, self.beta) {
                    (Some(t), None) => {
                        t.target()?;
                    }
                    (None, Some(b)) => ensure!(b.is_finite() && b >= 0.0, "beta must be finite and nonnegative"),
                    (Some(_), Some(_)) => bail!("tune: give either `target` or a fixed `beta`, not both"),
                    (None, None) => bail!("tune: config needs a `target` or a fixed `beta`"),
                }
                ensure!(self.output.samples >= 1, "output.samples must be at least 1");
                if let Some(b) = &self.baseline {
                    ensure!(self.latent.is_none(), "baseline: rejection sampling needs a data-space distribution");
                    ensure!(b.rho > 0.0 && b.rho < 1.0, "baseline.rho must lie in (0, 1)");
                    ensure!(b.samples >= 1, "baseline.samples must be at least 1");
                }
            }
            Command::Pareto => {
                ensure!(self.criterion.is_some(), "pareto: config needs a `criterion`");
                let s = self.sweep.as_ref().context("pareto: config needs a `sweep` section")?;
                check_grid(&s.grid)?;
                if d.audit {
                    ensure!(d.curve_samples >= 10_000, "diagnostics.curve_samples must be at least 10^4");
                }
            }
            Command::Diagnose => {
                ensure!(self.candidates.len() >= 2, "diagnose: config needs at least two `candidates`");
                ensure!(d.samples >= 1000, "diagnostics.samples must be at least 1000");
                if let Some(g) = &d.curve_grid {
                    ensure!(self.criterion.is_some(), "diagnostics.curve_grid needs a `criterion`");
                    ensure!(!g.is_empty() && g.iter().all(|b| b.is_finite()), "curve_grid must be finite and nonempty");
                    ensure!(d.curve_samples >= 10_000, "diagnostics.curve_samples must be at least 10^4");
                }
            }
            Command::Oracle => {}
        }
        Ok(())
    }
}

pub fn check_grid(grid: &[f64]) -> Result<()> {
    ensure!(!grid.is_empty(), "sweep grid is empty");
    ensure!(grid[0] == 0.0, "sweep grid must start at 0");
    ensure!(grid.iter().all(|b| b.is_finite()), "sweep grid must be finite");
    ensure!(grid.windows(2).all(|w| w[1] > w[0]), "sweep grid must be strictly increasing");
    Ok(())
}
