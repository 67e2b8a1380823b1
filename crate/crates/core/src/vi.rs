//! Fitting `q_β` by pushing base samples through a flow.
//!
//! For fixed β the tilted distribution maximizes
//! `E_{x̂~p}[β f(g(x̂)) + log p(g(x̂)) + log|det J_g(x̂)|]` over invertible
//! perturbations `g`. The batch estimate of that objective and its exact
//! gradient come from [`elbo_objective`]; [`fit_q`] runs Adam on it.

use serde::{Deserialize, Serialize};

use crate::criteria::CriterionFn;
use crate::dist::Distribution;
use crate::flows::{FlowGradients, FlowModel};
use crate::stats::{batch_means_se, mean};
use crate::{rng_from_seed, rng_stream, Error, Result, Rng, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default, bound = "T: Scalar")]
pub struct TuneConfig<T> {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: T,
    pub adam_beta1: T,
    pub adam_beta2: T,
    pub adam_eps: T,
    pub seed: u64,
    /// Moving-average window of the objective trace.
    pub window: usize,
    /// Stop once the windowed improvement falls below this fraction of the
    /// objective's magnitude.
    pub rel_tol: T,
    pub early_stop: bool,
    /// Return the mean of the last this-many iterates (0 keeps the final one).
    pub average_window: usize,
}

impl<T: Scalar> Default for TuneConfig<T> {
    fn default() -> Self {
        Self {
            batch_size: 256,
            steps: 2000,
            learning_rate: T::lit(1e-3),
            adam_beta1: T::lit(0.9),
            adam_beta2: T::lit(0.999),
            adam_eps: T::lit(1e-8),
            seed: 0,
            window: 50,
            rel_tol: T::lit(1e-4),
            early_stop: true,
            average_window: 0,
        }
    }
}

impl<T: Scalar> TuneConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if !(self.learning_rate > T::zero()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.window == 0 {
            return Err(Error::invalid("window must be positive"));
        }
        Ok(())
    }
}

/// One optimizer step worth of batch statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TraceRow<T> {
    pub step: usize,
    pub objective: T,
    pub mean_f: T,
    pub dkl: T,
}

/// `q_β` in its variational form: `x = g(x̂)` with `x̂ ~ base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TunedModel<T> {
    pub base: Distribution<T>,
    pub flow: FlowModel<T>,
    pub beta: T,
    pub trace: Vec<TraceRow<T>>,
}

/// A tuned draw together with the base sample it came from.
#[derive(Clone, Debug)]
pub struct TunedDraw<T> {
    pub base: Vec<T>,
    pub value: Vec<T>,
    pub logdet: T,
}

impl<T: Scalar> TunedDraw<T> {
    /// `log q(x) − log p(x)` at the draw, from the change of variables
    /// `q(g(x̂)) = p(x̂) / |det J_g(x̂)|`; its mean over draws estimates
    /// `KL(q‖p)` with no flow inversion.
    pub fn log_ratio(&self, p: &Distribution<T>) -> T {
        p.log_density_unchecked(&self.base)
            - self.logdet
            - p.log_density_unchecked(&self.value)
    }
}

impl<T: Scalar> TunedModel<T> {
    /// The untuned model: identity flow at β = 0.
    pub fn untuned(base: Distribution<T>, flow: FlowModel<T>) -> Self {
        Self {
            base,
            flow,
            beta: T::zero(),
            trace: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn draw(&self, rng: &mut Rng) -> Result<TunedDraw<T>> {
        let base = self.base.draw(rng);
        let (value, logdet) = self.flow.forward(&base)?;
        Ok(TunedDraw {
            base,
            value,
            logdet,
        })
    }

    pub fn draws(&self, n: usize, seed: u64) -> Result<Vec<TunedDraw<T>>> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }

    /// `n` samples of `q`; identical to pushing `base.sample(n, seed)` through the flow.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<T>>> {
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        Ok(self.draws(n, seed)?.into_iter().map(|d| d.value).collect())
    }

    /// `log q(x) = log p(g⁻¹(x)) − log|det J_g(g⁻¹(x))|`.
    pub fn log_density(&self, x: &[T]) -> Result<T> {
        let (xhat, ld) = self.flow.inverse(x)?;
        Ok(self.base.log_density(&xhat)? - ld)
    }

    pub fn as_distribution(&self) -> Distribution<T> {
        Distribution::FlowPushforward {
            base: Box::new(self.base.clone()),
            flow: self.flow.clone(),
        }
    }

    /// Monte-Carlo `KL(q ‖ reference)` with its standard error, sampling `q`.
    pub fn kl_to(&self, reference: &Distribution<T>, n: usize, seed: u64) -> Result<(T, T)> {
        let terms: Vec<T> = self
            .draws(n, seed)?
            .iter()
            .map(|d| {
                self.base.log_density_unchecked(&d.base)
                    - d.logdet
                    - reference.log_density_unchecked(&d.value)
            })
            .collect();
        let se = (crate::stats::variance(&terms) / T::from_usize_lossy(n)).sqrt();
        Ok((mean(&terms), se))
    }

    /// Pathwise `KL(q ‖ p)` estimate and its batch-means standard error.
    pub fn kl_to_base(&self, n: usize, seed: u64) -> Result<(T, T)> {
        let terms: Vec<T> = self
            .draws(n, seed)?
            .iter()
            .map(|d| d.log_ratio(&self.base))
            .collect();
        Ok((mean(&terms), batch_means_se(&terms, 20, mean)))
    }
}

/// Batch estimate of the tuning objective and its flow-parameter gradient.
#[derive(Clone, Debug)]
pub struct ElboEval<T> {
    pub objective: T,
    pub mean_f: T,
    pub dkl: T,
    pub grads: FlowGradients<T>,
}

/// Evaluates `mean_i [β f(g(x̂ᵢ)) + log p(g(x̂ᵢ)) + log|det J_g(x̂ᵢ)|]` over
/// `batch` together with its exact gradient in the flow parameters.
pub fn elbo_objective<T: Scalar, C: CriterionFn<T> + ?Sized>(
    p: &Distribution<T>,
    f: &C,
    flow: &FlowModel<T>,
    beta: T,
    batch: &[Vec<T>],
    rng: &mut Rng,
) -> Result<ElboEval<T>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let inv_n = T::one() / T::from_usize_lossy(batch.len());
    let mut grads = FlowGradients::zeros_like(flow);
    let (mut obj, mut sum_f, mut sum_kl) = (T::zero(), T::zero(), T::zero());
    for xhat in batch {
        let trace = flow.trace(xhat)?;
        let y = trace.output();
        let (fv, fg) = f.value_grad(y, rng);
        if !fv.is_finite() || fg.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteTerm { term: "criterion" });
        }
        let lp = p.log_density_unchecked(y);
        let score = p.score_unchecked(y)?;
        if !lp.is_finite() || score.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteTerm {
                term: "log-density",
            });
        }
        let ld = trace.logdet;
        if !ld.is_finite() {
            return Err(Error::NonFiniteTerm {
                term: "log-determinant",
            });
        }
        obj += beta * fv + lp + ld;
        sum_f += fv;
        sum_kl += p.log_density_unchecked(xhat) - ld - lp;
        let gy: Vec<T> = fg
            .iter()
            .zip(&score)
            .map(|(&a, &b)| (beta * a + b) * inv_n)
            .collect();
        flow.accumulate_backward(&trace, &gy, inv_n, &mut grads);
    }
    Ok(ElboEval {
        objective: obj * inv_n,
        mean_f: sum_f * inv_n,
        dkl: sum_kl * inv_n,
        grads,
    })
}

/// Adam, written for ascent.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    lr: T,
    b1: T,
    b2: T,
    eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize, cfg: &TuneConfig<T>) -> Self {
        Self {
            lr: cfg.learning_rate,
            b1: cfg.adam_beta1,
            b2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn ascend(&mut self, params: &mut [T], grad: &[T]) {
        self.t += 1;
        let c1 = T::one() - self.b1.powi(self.t);
        let c2 = T::one() - self.b2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.b1 * self.m[i] + (T::one() - self.b1) * g;
            self.v[i] = self.b2 * self.v[i] + (T::one() - self.b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] += self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

fn windowed_improvement<T: Scalar>(trace: &[TraceRow<T>], w: usize) -> Option<(T, T)> {
    let n = trace.len();
    if n < 2 * w {
        return None;
    }
    let avg = |rows: &[TraceRow<T>]| {
        rows.iter().map(|r| r.objective).sum::<T>() / T::from_usize_lossy(rows.len())
    };
    let now = avg(&trace[n - w..]);
    let before = avg(&trace[n - 2 * w..n - w]);
    Some((now - before, now))
}

/// Fits `q_β` starting from `init` (the identity for a cold start, the
/// previous solution for a warm start).
pub fn fit_q<T: Scalar, C: CriterionFn<T> + ?Sized>(
    p: &Distribution<T>,
    f: &C,
    beta: T,
    init: FlowModel<T>,
    cfg: &TuneConfig<T>,
) -> Result<TunedModel<T>> {
    cfg.validate()?;
    init.validate()?;
    crate::error::check_dim(p.dim(), init.dim())?;
    let mut flow = init;
    let mut params = flow.params();
    let mut adam = Adam::new(params.len(), cfg);
    let mut batch_rng = rng_stream(cfg.seed, 0);
    let mut crit_rng = rng_stream(cfg.seed, 1);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut tail: std::collections::VecDeque<Vec<T>> = std::collections::VecDeque::new();
    for step in 0..cfg.steps {
        let batch = p.sample_rng(cfg.batch_size, &mut batch_rng);
        let eval = elbo_objective(p, f, &flow, beta, &batch, &mut crit_rng)?;
        if !eval.objective.is_finite() {
            return Err(Error::Diverged {
                step,
                trace: trace.iter().map(|r: &TraceRow<T>| r.objective.as_f64()).collect(),
            });
        }
        trace.push(TraceRow {
            step,
            objective: eval.objective,
            mean_f: eval.mean_f,
            dkl: eval.dkl,
        });
        adam.ascend(&mut params, &eval.grads.flat());
        flow.set_params(&params)?;
        if cfg.average_window > 0 {
            tail.push_back(params.clone());
            if tail.len() > cfg.average_window {
                tail.pop_front();
            }
        }
        if cfg.early_stop {
            if let Some((gain, level)) = windowed_improvement(&trace, cfg.window) {
                if gain < cfg.rel_tol * level.abs() {
                    break;
                }
            }
        }
    }
    if !tail.is_empty() {
        let k = T::from_usize_lossy(tail.len());
        let mean: Vec<T> = (0..params.len())
            .map(|i| tail.iter().map(|v| v[i]).sum::<T>() / k)
            .collect();
        flow.set_params(&mean)?;
    }
    Ok(TunedModel {
        base: p.clone(),
        flow,
        beta,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::Criterion;
    use crate::flows::{FlowSpec, Layer};
    use approx::assert_relative_eq;

    fn shift_flow(t: f64) -> FlowModel<f64> {
        FlowModel::new(
            1,
            vec![Layer::AffineDiagonal {
                log_scale: vec![0.0],
                shift: vec![t],
            }],
        )
        .unwrap()
    }

    #[test]
    fn beta_zero_identity_is_mean_log_density() {
        let p = Distribution::<f64>::standard_normal(2);
        let f = Criterion::linear(vec![1.0, 1.0]);
        let flow = FlowModel::init_identity(2, &FlowSpec::default(), 0).unwrap();
        let batch = p.sample(64, 3).unwrap();
        let mut rng = rng_from_seed(0);
        let e = elbo_objective(&p, &f, &flow, 0.0, &batch, &mut rng).unwrap();
        let want = mean(
            &batch
                .iter()
                .map(|x| p.log_density(x).unwrap())
                .collect::<Vec<_>>(),
        );
        assert_relative_eq!(e.objective, want, epsilon = 1e-12);
        assert_eq!(e.dkl, 0.0);
    }

    #[test]
    fn optimal_shift_gains_half_beta_squared() {
        // N(0,1), f = x: objective(t) = β t − t²/2 + E log p exactly in expectation,
        // and exactly on a batch whose first two moments are (0, 1).
        let beta = 1.7;
        let mut batch: Vec<Vec<f64>> = Distribution::standard_normal(1).sample(1000, 2).unwrap();
        let vals: Vec<f64> = batch.iter().map(|x| x[0]).collect();
        let (m, s) = (mean(&vals), crate::stats::variance(&vals).sqrt());
        let n = vals.len() as f64;
        let s = s * ((n - 1.0) / n).sqrt();
        for x in &mut batch {
            x[0] = (x[0] - m) / s;
        }
        let p = Distribution::standard_normal(1);
        let f = Criterion::linear(vec![1.0]);
        let mut rng = rng_from_seed(0);
        let at = |t: f64, rng: &mut Rng| {
            elbo_objective(&p, &f, &shift_flow(t), beta, &batch, rng)
                .unwrap()
                .objective
        };
        let gap = at(beta, &mut rng) - at(0.0, &mut rng);
        assert_relative_eq!(gap, beta * beta / 2.0, epsilon = 1e-10);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let p = Distribution::<f64>::standard_normal(2);
        let f = Criterion::linear(vec![1.0, -0.5]);
        let spec = FlowSpec {
            coupling_layers: 2,
            hidden_width: 6,
            monotone_layers: 1,
            monotone_bumps: 3,
            ..FlowSpec::default()
        };
        let mut flow = FlowModel::init_identity(2, &spec, 4).unwrap();
        let mut r = rng_from_seed(8);
        let params: Vec<f64> = flow
            .params()
            .iter()
            .map(|v| v + 0.4 * crate::dist::std_normal::<f64>(&mut r))
            .collect();
        flow.set_params(&params).unwrap();
        let batch = p.sample(16, 5).unwrap();
        let beta = 1.3;
        let mut rng = rng_from_seed(0);
        let eval = elbo_objective(&p, &f, &flow, beta, &batch, &mut rng).unwrap();
        let analytic = eval.grads.flat();
        let h = 1e-5;
        for i in 0..params.len() {
            let mut pp = params.clone();
            pp[i] += h;
            let mut fp = flow.clone();
            fp.set_params(&pp).unwrap();
            pp[i] -= 2.0 * h;
            let mut fm = flow.clone();
            fm.set_params(&pp).unwrap();
            let op = elbo_objective(&p, &f, &fp, beta, &batch, &mut rng).unwrap().objective;
            let om = elbo_objective(&p, &f, &fm, beta, &batch, &mut rng).unwrap().objective;
            let fd = (op - om) / (2.0 * h);
            assert!(
                (fd - analytic[i]).abs() <= 1e-4 * fd.abs().max(analytic[i].abs()) + 1e-8,
                "param {i}: {fd} vs {}",
                analytic[i]
            );
        }
    }

    #[test]
    fn non_finite_criterion_is_named() {
        let p = Distribution::<f64>::standard_normal(1);
        let f = Criterion::new(
            crate::criteria::CriterionKind::Quadratic {
                center: vec![-1.0],
                weights: vec![1e308],
            },
            "huge",
        )
        .unwrap();
        let flow = shift_flow(0.0);
        let batch = vec![vec![1.0]];
        let mut rng = rng_from_seed(0);
        let err = elbo_objective(&p, &f, &flow, 1.0, &batch, &mut rng).unwrap_err();
        assert!(matches!(err, Error::NonFiniteTerm { term: "criterion" }));
    }

    #[test]
    fn sample_is_flow_of_base_sample() {
        let p = Distribution::<f64>::standard_normal(1);
        let q = TunedModel::untuned(p.clone(), shift_flow(0.5));
        let xs = q.sample(10, 3).unwrap();
        let base = p.sample(10, 3).unwrap();
        for (x, b) in xs.iter().zip(&base) {
            assert_relative_eq!(x[0], b[0] + 0.5, epsilon = 1e-15);
        }
        assert_relative_eq!(
            q.log_density(&[1.0]).unwrap(),
            p.log_density(&[0.5]).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn config_validation() {
        let c = TuneConfig::<f64> { steps: 0, ..TuneConfig::default() };
        assert!(c.validate().is_err());
        let c = TuneConfig::<f64> { batch_size: 1, ..TuneConfig::default() };
        assert!(c.validate().is_err());
    }
}
