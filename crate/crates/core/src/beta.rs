//! Searching the inverse temperature β.
//!
//! Along the tilted family, `E_{q_β} f` and `KL(q_β‖p)` are increasing in β
//! with closed-form derivatives in the moments of `f` under `q_β`:
//!
//! | quantity | d/dβ | d²/dβ² |
//! |----------|------|--------|
//! | `E f`    | `Var f` | `κ₃` |
//! | `KL`     | `β Var f` | `Var f + β κ₃` |
//!
//! where `κ₃ = E(f − E f)³`. [`solve`] alternates a flow fit at the current
//! β, a Monte-Carlo estimate of those moments, and a second-order step on the
//! residual, safeguarded by a trust region and a sign-change bracket.

use serde::{Deserialize, Serialize};

use crate::criteria::CriterionFn;
use crate::dist::Distribution;
use crate::flows::FlowModel;
use crate::stats::{batch_means_se, mean, third_central, variance};
use crate::vi::{fit_q, TuneConfig, TunedModel};
use crate::{rng_from_seed, Error, Result, Scalar};

/// Number of batches used for batch-means standard errors.
pub const SE_BATCHES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MomentEstimates<T> {
    pub mean_f: T,
    pub var_f: T,
    pub third_central_f: T,
    pub dkl: T,
    pub n: usize,
    pub se_mean: T,
    pub se_var: T,
    pub se_third: T,
    pub se_dkl: T,
}

impl<T: Scalar> MomentEstimates<T> {
    /// Moments of `f_values` plus the mean of per-sample `log q/p` values.
    pub fn from_samples(f_values: &[T], log_ratios: &[T]) -> Result<Self> {
        let n = f_values.len();
        if n < 2 {
            return Err(Error::invalid("moment estimates need at least 2 samples"));
        }
        crate::error::check_dim(n, log_ratios.len())?;
        Ok(Self {
            mean_f: mean(f_values),
            var_f: variance(f_values),
            third_central_f: third_central(f_values),
            dkl: mean(log_ratios),
            n,
            se_mean: batch_means_se(f_values, SE_BATCHES, mean),
            se_var: batch_means_se(f_values, SE_BATCHES, variance),
            se_third: batch_means_se(f_values, SE_BATCHES, third_central),
            se_dkl: batch_means_se(log_ratios, SE_BATCHES, mean),
        })
    }

    /// Exact moments, zero standard errors.
    pub fn exact(mean_f: T, var_f: T, third_central_f: T, dkl: T) -> Self {
        Self {
            mean_f,
            var_f,
            third_central_f,
            dkl,
            n: usize::MAX,
            se_mean: T::zero(),
            se_var: T::zero(),
            se_third: T::zero(),
            se_dkl: T::zero(),
        }
    }
}

/// Moments of `f` under the tuned model from `n ≥ 100` fresh draws.
pub fn estimate_moments<T: Scalar, C: CriterionFn<T> + ?Sized>(
    q: &TunedModel<T>,
    f: &C,
    n: usize,
    seed: u64,
) -> Result<MomentEstimates<T>> {
    if n < 100 {
        return Err(Error::invalid("moment estimation needs at least 100 samples"));
    }
    let draws = q.draws(n, seed)?;
    let mut rng = rng_from_seed(seed ^ 0x5eed_f00d);
    let fv: Vec<T> = draws.iter().map(|d| f.value(&d.value, &mut rng)).collect();
    let lr: Vec<T> = draws.iter().map(|d| d.log_ratio(&q.base)).collect();
    MomentEstimates::from_samples(&fv, &lr)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Drive `E_q f` to the target value.
    Expectation,
    /// Drive `KL(q‖p)` to the target value.
    Divergence,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct Target<T> {
    pub mode: TargetMode,
    pub value: T,
    /// Mass of the desired top fraction when the budget came from `−ln ρ`.
    #[serde(default)]
    pub rho: Option<T>,
}

impl<T: Scalar> Target<T> {
    pub fn expectation(value: T) -> Self {
        Self {
            mode: TargetMode::Expectation,
            value,
            rho: None,
        }
    }

    pub fn divergence(value: T) -> Self {
        Self {
            mode: TargetMode::Divergence,
            value,
            rho: None,
        }
    }

    /// Divergence budget `−ln ρ` for keeping roughly a fraction `ρ` of `p`.
    pub fn quantile(rho: T) -> Result<Self> {
        if !(rho > T::zero() && rho <= T::one()) {
            return Err(Error::invalid("rho must lie in (0, 1]"));
        }
        Ok(Self {
            mode: TargetMode::Divergence,
            value: -rho.ln(),
            rho: Some(rho),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !self.value.is_finite() {
            return Err(Error::invalid("target value must be finite"));
        }
        if self.mode == TargetMode::Divergence && self.value < T::zero() {
            return Err(Error::invalid("divergence target must be nonnegative"));
        }
        if let Some(r) = self.rho {
            if !(r > T::zero() && r <= T::one()) {
                return Err(Error::invalid("rho must lie in (0, 1]"));
            }
        }
        Ok(())
    }

    /// Current value of the targeted quantity, its standard error, and its
    /// first two β-derivatives.
    fn model(&self, beta: T, m: &MomentEstimates<T>) -> (T, T, T, T) {
        match self.mode {
            TargetMode::Expectation => (m.mean_f, m.se_mean, m.var_f, m.third_central_f),
            TargetMode::Divergence => (
                m.dkl,
                m.se_dkl,
                beta * m.var_f,
                m.var_f + beta * m.third_central_f,
            ),
        }
    }

    pub fn residual(&self, m: &MomentEstimates<T>) -> T {
        match self.mode {
            TargetMode::Expectation => m.mean_f - self.value,
            TargetMode::Divergence => m.dkl - self.value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    /// Root of the local quadratic model.
    SecondOrder,
    /// Root of the local linear model (quadratic had no usable root).
    Newton,
    /// `√(−2r / curvature)`: the slope vanishes, as for divergence at β = 0.
    CurvatureOnly,
    /// Midpoint of the sign-change bracket.
    Bisection,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BetaRecord<T> {
    pub beta: T,
    pub moments: MomentEstimates<T>,
    pub residual: T,
    /// `log Z(β) = β E_q f − KL(q‖p)`.
    pub log_z: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BetaState<T> {
    pub beta: T,
    pub history: Vec<BetaRecord<T>>,
    /// Largest β with negative residual and smallest β with positive residual.
    pub bracket: (Option<T>, Option<T>),
    pub steps: Vec<StepKind>,
}

impl<T: Scalar> BetaState<T> {
    pub fn new(beta: T) -> Self {
        Self {
            beta,
            history: Vec::new(),
            bracket: (None, None),
            steps: Vec::new(),
        }
    }

    /// Stores the moments measured at the current β and updates the bracket.
    pub fn record(&mut self, moments: MomentEstimates<T>, target: &Target<T>) {
        let residual = target.residual(&moments);
        let beta = self.beta;
        if residual < T::zero() {
            self.bracket.0 = Some(self.bracket.0.map_or(beta, |lo: T| lo.max(beta)));
        } else if residual > T::zero() {
            self.bracket.1 = Some(self.bracket.1.map_or(beta, |hi: T| hi.min(beta)));
        }
        self.history.push(BetaRecord {
            beta,
            moments,
            residual,
            log_z: beta * moments.mean_f - moments.dkl,
        });
    }

    pub fn latest(&self) -> Option<&BetaRecord<T>> {
        self.history.last()
    }

    pub fn bracket_interval(&self) -> Option<(T, T)> {
        match self.bracket {
            (Some(lo), Some(hi)) if lo < hi => Some((lo, hi)),
            (Some(lo), Some(hi)) => Some((hi, lo)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound = "T: Scalar")]
pub struct SolverConfig<T> {
    pub max_iters: usize,
    pub moment_samples: usize,
    pub moment_seed: u64,
    pub initial_beta: T,
    /// Training steps of warm-started fits; the first fit uses the tuning
    /// config's `steps`.
    pub warm_steps: usize,
    pub abs_tol: T,
    pub rel_tol: T,
    /// Multiple of the standard error accepted as the Monte-Carlo noise floor.
    pub se_mult: T,
    pub trust_region: bool,
    /// Steps are limited to `max(trust_floor, |β|)`.
    pub trust_floor: T,
    /// Variance of `f` at or below which β is declared to have no effect.
    pub flat_var: T,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            max_iters: 20,
            moment_samples: 10_000,
            moment_seed: 1,
            initial_beta: T::zero(),
            warm_steps: 500,
            abs_tol: T::lit(1e-3),
            rel_tol: T::lit(1e-2),
            se_mult: T::lit(3.0),
            trust_region: true,
            trust_floor: T::one(),
            flat_var: T::lit(1e-10),
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if self.moment_samples < 100 {
            return Err(Error::invalid("moment_samples must be at least 100"));
        }
        if self.initial_beta < T::zero() {
            return Err(Error::invalid("initial beta must be nonnegative"));
        }
        if !(self.trust_floor > T::zero()) {
            return Err(Error::invalid("trust_floor must be positive"));
        }
        Ok(())
    }

    /// Acceptance band on the residual.
    pub fn tolerance(&self, target: &Target<T>, se: T) -> T {
        self.abs_tol
            .max(self.rel_tol * target.value.abs())
            .max(self.se_mult * se)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StepProposal<T> {
    pub beta: T,
    /// Model step before trust-region clamping and bracketing.
    pub raw_delta: T,
    pub kind: StepKind,
}

/// Second-order β update from the latest moments in `state`.
pub fn propose_step<T: Scalar>(
    state: &BetaState<T>,
    target: &Target<T>,
    cfg: &SolverConfig<T>,
) -> Result<StepProposal<T>> {
    let rec = state
        .latest()
        .ok_or_else(|| Error::invalid("no moment estimates recorded at the current beta"))?;
    let m = &rec.moments;
    let floor = cfg.flat_var * T::one().max(m.mean_f * m.mean_f);
    if !(m.var_f > floor) {
        return Err(Error::FlatCriterion {
            variance: m.var_f.as_f64(),
        });
    }
    let beta = state.beta;
    let (value, _, d1, d2) = target.model(beta, m);
    let r = value - target.value;
    let two = T::lit(2.0);
    let zero = T::zero();

    let (mut delta, mut kind) = if d1 > zero {
        let disc = d1 * d1 - two * d2 * r;
        if d2 != zero && disc >= zero {
            // stable form of the root nearest the Newton step
            let d = -two * r / (d1 + disc.sqrt());
            // the model must stay increasing along the step
            if d1 + d2 * d > zero {
                (d, StepKind::SecondOrder)
            } else {
                (-r / d1, StepKind::Newton)
            }
        } else {
            (-r / d1, StepKind::Newton)
        }
    } else if d2 > zero && r < zero {
        ((-two * r / d2).sqrt(), StepKind::CurvatureOnly)
    } else {
        // no usable local information: move by the trust radius toward the target
        let sign = if r < zero { T::one() } else { -T::one() };
        (sign * cfg.trust_floor.max(beta.abs()), StepKind::Newton)
    };
    let raw_delta = delta;
    if cfg.trust_region {
        let radius = cfg.trust_floor.max(beta.abs());
        delta = delta.max(-radius).min(radius);
    }
    let mut next = beta + delta;
    if next < zero {
        next = beta * T::lit(0.5);
    }
    if let Some((lo, hi)) = state.bracket_interval() {
        if !(next > lo && next < hi) {
            next = T::lit(0.5) * (lo + hi);
            kind = StepKind::Bisection;
        }
    }
    Ok(StepProposal {
        beta: next,
        raw_delta,
        kind,
    })
}

/// [`propose_step`] with the default safeguards, returning only the new β.
pub fn newton_step<T: Scalar>(state: &BetaState<T>, target: &Target<T>) -> Result<T> {
    propose_step(state, target, &SolverConfig::default()).map(|s| s.beta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    IterationCap,
}

#[derive(Clone, Debug)]
pub struct Solution<T> {
    pub model: TunedModel<T>,
    pub state: BetaState<T>,
    pub status: SolveStatus,
}

/// Inverse-temperature search: fit, measure, step, until the targeted
/// quantity is within tolerance of its target.
///
/// Fits at β = 0 are skipped since the initial (identity) flow is `p` itself.
/// Returns [`SolveStatus::IterationCap`] with the full trajectory when
/// `max_iters` fits did not reach the target.
pub fn solve<T: Scalar, C: CriterionFn<T> + ?Sized>(
    p: &Distribution<T>,
    f: &C,
    target: &Target<T>,
    init: FlowModel<T>,
    tune: &TuneConfig<T>,
    cfg: &SolverConfig<T>,
) -> Result<Solution<T>> {
    target.validate()?;
    cfg.validate()?;
    tune.validate()?;
    let mut state = BetaState::new(cfg.initial_beta);
    let mut model = TunedModel::untuned(p.clone(), init);
    let mut fitted_once = false;
    for iter in 0..cfg.max_iters {
        let beta = state.beta;
        if beta > T::zero() || fitted_once {
            let mut run = tune.clone();
            run.seed = tune.seed.wrapping_add(iter as u64);
            if fitted_once {
                run.steps = cfg.warm_steps.max(1);
            }
            model = fit_q(p, f, beta, model.flow.clone(), &run)?;
            fitted_once = true;
        }
        let moments = estimate_moments(&model, f, cfg.moment_samples, cfg.moment_seed.wrapping_add(iter as u64))?;
        state.record(moments, target);
        let (value, se, _, _) = target.model(beta, &moments);
        let r = value - target.value;
        let satisfied_at_zero = beta == T::zero() && r >= T::zero();
        if r.abs() <= cfg.tolerance(target, se) || satisfied_at_zero {
            return Ok(Solution {
                model,
                state,
                status: SolveStatus::Converged,
            });
        }
        let step = propose_step(&state, target, cfg)?;
        state.steps.push(step.kind);
        state.beta = step.beta;
    }
    Ok(Solution {
        model,
        state,
        status: SolveStatus::IterationCap,
    })
}

#[derive(Clone, Debug)]
pub struct SweepPoint<T> {
    pub beta: T,
    pub moments: MomentEstimates<T>,
    pub model: TunedModel<T>,
}

/// Warm-started fits along an increasing β grid starting at 0.
pub fn pareto_sweep<T: Scalar, C: CriterionFn<T> + ?Sized>(
    p: &Distribution<T>,
    f: &C,
    grid: &[T],
    init: FlowModel<T>,
    tune: &TuneConfig<T>,
    cfg: &SolverConfig<T>,
) -> Result<Vec<SweepPoint<T>>> {
    if grid.is_empty() || grid[0] != T::zero() {
        return Err(Error::invalid("beta grid must start at 0"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("beta grid must be strictly increasing"));
    }
    tune.validate()?;
    cfg.validate()?;
    let mut model = TunedModel::untuned(p.clone(), init);
    let mut out = Vec::with_capacity(grid.len());
    for (i, &beta) in grid.iter().enumerate() {
        if i > 0 {
            let mut run = tune.clone();
            run.seed = tune.seed.wrapping_add(i as u64);
            if i > 1 {
                run.steps = cfg.warm_steps.max(1);
            }
            model = fit_q(p, f, beta, model.flow.clone(), &run)?;
        }
        let moments = estimate_moments(&model, f, cfg.moment_samples, cfg.moment_seed.wrapping_add(i as u64))?;
        out.push(SweepPoint {
            beta,
            moments,
            model: model.clone(),
        });
    }
    Ok(out)
}
