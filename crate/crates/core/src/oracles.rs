//! Ground truth for testing: closed-form Gaussian tilts, rejection sampling,
//! exhaustive tilts of finite distributions, and the latent KL bound.

use serde::{Deserialize, Serialize};

use crate::criteria::{Criterion, CriterionFn};
use crate::dist::{DiagGaussian, Distribution, LatentDecoder};
use crate::error::check_dim;
use crate::linalg::{dot, gaussian_kl, gram_plus_diag, mat_vec};
use crate::stats::{log_sum_exp, quantile_sorted, sorted};
use crate::{rng_from_seed, Error, Result, Scalar};

/// Default attempt budget of a [`RejectionSampler`].
pub const DEFAULT_MAX_ATTEMPTS: u64 = 10_000_000;

/// Tilt of a diagonal Gaussian by a linear criterion `f(x) = a·x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TiltOracle<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub a: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TiltMoments<T> {
    pub beta: T,
    pub q: DiagGaussian<T>,
    pub mean_f: T,
    pub var_f: T,
    pub dkl: T,
    pub log_z: T,
}

impl<T: Scalar> TiltOracle<T> {
    pub fn new(mean: Vec<T>, var: Vec<T>, a: Vec<T>) -> Result<Self> {
        DiagGaussian::new(mean.clone(), var.clone())?;
        check_dim(mean.len(), a.len())?;
        Ok(Self { mean, var, a })
    }

    /// `aᵀΣa`, the (β-independent) variance of `f`.
    pub fn spread(&self) -> T {
        self.a.iter().zip(&self.var).map(|(&a, &v)| a * a * v).sum()
    }

    pub fn at(&self, beta: T) -> TiltMoments<T> {
        let s = self.spread();
        let half = T::lit(0.5);
        let q_mean = self
            .mean
            .iter()
            .zip(&self.var)
            .zip(&self.a)
            .map(|((&m, &v), &a)| m + beta * v * a)
            .collect();
        let am = dot(&self.a, &self.mean);
        TiltMoments {
            beta,
            q: DiagGaussian {
                mean: q_mean,
                var: self.var.clone(),
            },
            mean_f: am + beta * s,
            var_f: s,
            dkl: half * beta * beta * s,
            log_z: beta * am + half * beta * beta * s,
        }
    }

    /// β with `KL(q_β‖p) = c`.
    pub fn beta_for_divergence(&self, c: T) -> T {
        (T::lit(2.0) * c / self.spread()).sqrt()
    }

    /// β with `E_{q_β} f = c`.
    pub fn beta_for_expectation(&self, c: T) -> T {
        (c - dot(&self.a, &self.mean)) / self.spread()
    }

    pub fn base(&self) -> Distribution<T> {
        Distribution::DiagGaussian(DiagGaussian {
            mean: self.mean.clone(),
            var: self.var.clone(),
        })
    }

    pub fn criterion(&self) -> Criterion<T> {
        Criterion::linear(self.a.clone())
    }
}

/// Closed-form tilt of `N(μ, diag Σ)` by `f(x) = a·x`.
pub fn tilt_closed_form<T: Scalar>(mu: &[T], sigma: &[T], a: &[T], beta: T) -> Result<TiltMoments<T>> {
    Ok(TiltOracle::new(mu.to_vec(), sigma.to_vec(), a.to_vec())?.at(beta))
}

/// Empirical `(1 − ρ)`-quantile of `f` under `p`.
pub fn top_quantile_threshold<T: Scalar, C: CriterionFn<T> + ?Sized>(
    p: &Distribution<T>,
    f: &C,
    rho: T,
    n: usize,
    seed: u64,
) -> Result<T> {
    if !(rho > T::zero() && rho < T::one()) {
        return Err(Error::invalid("rho must lie in (0, 1)"));
    }
    if T::from_usize_lossy(n) * rho < T::lit(100.0) {
        return Err(Error::invalid("n * rho must be at least 100"));
    }
    let xs = p.sample(n, seed)?;
    let mut rng = rng_from_seed(seed ^ 0x0ac1e);
    let fv: Vec<T> = xs.iter().map(|x| f.value(x, &mut rng)).collect();
    Ok(quantile_sorted(&sorted(&fv), T::one() - rho))
}

/// Draws from `source` until `criterion(x) ≥ threshold`.
#[derive(Clone, Debug)]
pub struct RejectionSampler<T> {
    pub source: Distribution<T>,
    pub criterion: Criterion<T>,
    /// `None` accepts every draw.
    pub threshold: Option<T>,
    pub max_attempts: u64,
}

#[derive(Clone, Debug)]
pub struct RejectionOutcome<T> {
    pub samples: Vec<Vec<T>>,
    pub f_values: Vec<T>,
    pub attempts: u64,
}

impl<T: Scalar> RejectionOutcome<T> {
    pub fn acceptance_rate(&self) -> f64 {
        self.samples.len() as f64 / self.attempts as f64
    }

    /// Source draws spent per accepted sample.
    pub fn draws_per_sample(&self) -> f64 {
        self.attempts as f64 / self.samples.len() as f64
    }
}

impl<T: Scalar> RejectionSampler<T> {
    pub fn new(source: Distribution<T>, criterion: Criterion<T>, threshold: Option<T>) -> Result<Self> {
        source.validate()?;
        criterion.validate()?;
        criterion.check_input_dim(source.dim())?;
        Ok(Self {
            source,
            criterion,
            threshold,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        })
    }

    pub fn accepts(&self, x: &[T]) -> (bool, T) {
        let v = self.criterion.eval(x);
        (self.threshold.is_none_or(|t| v >= t), v)
    }

    pub fn sample(&self, m: usize, seed: u64) -> Result<RejectionOutcome<T>> {
        if m == 0 {
            return Err(Error::invalid("rejection sampling needs m >= 1"));
        }
        let mut rng = rng_from_seed(seed);
        let mut out = RejectionOutcome {
            samples: Vec::with_capacity(m),
            f_values: Vec::with_capacity(m),
            attempts: 0,
        };
        while out.samples.len() < m {
            if out.attempts >= self.max_attempts {
                return Err(Error::RareEvent {
                    requested: m,
                    accepted: out.samples.len(),
                    attempts: out.attempts,
                });
            }
            out.attempts += 1;
            let x = self.source.draw(&mut rng);
            let (ok, v) = self.accepts(&x);
            if ok {
                out.samples.push(x);
                out.f_values.push(v);
            }
        }
        Ok(out)
    }
}

/// `m` accepted samples; see [`RejectionSampler::sample`].
pub fn rejection_sample<T: Scalar>(rs: &RejectionSampler<T>, m: usize, seed: u64) -> Result<RejectionOutcome<T>> {
    rs.sample(m, seed)
}

/// Distribution with finite support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FiniteDistribution<T> {
    pub support: Vec<Vec<T>>,
    pub probs: Vec<T>,
}

impl<T: Scalar> FiniteDistribution<T> {
    pub fn new(support: Vec<Vec<T>>, probs: Vec<T>) -> Result<Self> {
        check_dim(support.len(), probs.len())?;
        if support.is_empty() || support.len() > 1_000_000 {
            return Err(Error::invalid("finite support must have between 1 and 10^6 points"));
        }
        if probs.iter().any(|&p| !(p >= T::zero())) {
            return Err(Error::invalid("probabilities must be nonnegative"));
        }
        let total: T = probs.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::invalid("probabilities must sum to 1"));
        }
        Ok(Self { support, probs })
    }

    /// Uniform over the given points.
    pub fn uniform(support: Vec<Vec<T>>) -> Result<Self> {
        let w = T::one() / T::from_usize_lossy(support.len().max(1));
        let probs = vec![w; support.len()];
        Self::new(support, probs)
    }
}

/// Exact tilt of a [`FiniteDistribution`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DiscreteTilt<T> {
    pub beta: T,
    pub probs: Vec<T>,
    pub f_values: Vec<T>,
    pub log_z: T,
    pub mean_f: T,
    pub var_f: T,
    pub third_central_f: T,
    pub dkl: T,
}

/// `q_β(x) = p(x) e^{βf(x)} / Z` by exhaustive summation.
pub fn discrete_qbeta<T: Scalar>(p: &FiniteDistribution<T>, f: impl Fn(&[T]) -> T, beta: T) -> DiscreteTilt<T> {
    let fv: Vec<T> = p.support.iter().map(|x| f(x)).collect();
    discrete_qbeta_values(&p.probs, &fv, beta)
}

/// [`discrete_qbeta`] with `f` already evaluated on the support.
pub fn discrete_qbeta_values<T: Scalar>(probs: &[T], f_values: &[T], beta: T) -> DiscreteTilt<T> {
    let logw: Vec<T> = probs
        .iter()
        .zip(f_values)
        .map(|(&p, &f)| if p > T::zero() { p.ln() + beta * f } else { T::neg_infinity() })
        .collect();
    let log_z = log_sum_exp(&logw);
    let q: Vec<T> = logw.iter().map(|&l| (l - log_z).exp()).collect();
    let mean_f: T = q.iter().zip(f_values).map(|(&q, &f)| q * f).sum();
    let mut var_f = T::zero();
    let mut third = T::zero();
    let mut dkl = T::zero();
    for ((&qi, &pi), &fi) in q.iter().zip(probs).zip(f_values) {
        let c = fi - mean_f;
        var_f += qi * c * c;
        third += qi * c * c * c;
        if qi > T::zero() {
            dkl += qi * (qi.ln() - pi.ln());
        }
    }
    DiscreteTilt {
        beta,
        probs: q,
        f_values: f_values.to_vec(),
        log_z,
        mean_f,
        var_f,
        third_central_f: third,
        dkl,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct KlBoundCheck<T> {
    pub kl_latent: T,
    pub kl_marginal: T,
    pub bound_holds: bool,
    /// `kl_latent − kl_marginal`
    pub margin: T,
}

/// Compares `KL(q_z‖N(0,I))` with the KL between the decoded marginals, for a
/// diagonal Gaussian `q_z = N(m, diag v)`.
pub fn latent_kl_bound_check<T: Scalar>(dec: &LatentDecoder<T>, q_mean: &[T], q_var: &[T]) -> Result<KlBoundCheck<T>> {
    dec.validate()?;
    let k = dec.latent_dim();
    check_dim(k, q_mean.len())?;
    check_dim(k, q_var.len())?;
    if q_var.iter().any(|&v| !(v > T::zero())) {
        return Err(Error::invalid("latent variances must be positive"));
    }
    let half = T::lit(0.5);
    let kl_latent = half
        * q_mean
            .iter()
            .zip(q_var)
            .map(|(&m, &v)| v + m * m - T::one() - v.ln())
            .sum::<T>();
    let cov_q = gram_plus_diag(&dec.weights, q_var, dec.noise_var);
    let cov_p = gram_plus_diag(&dec.weights, &vec![T::one(); k], dec.noise_var);
    let mean_q = mat_vec(&dec.weights, q_mean);
    let zeros = vec![T::zero(); dec.data_dim()];
    let kl_marginal = gaussian_kl(&mean_q, &cov_q, &zeros, &cov_p)
        .map_err(|_| Error::invalid("decoded marginal covariance is singular; use positive noise"))?;
    Ok(KlBoundCheck {
        kl_latent,
        kl_marginal,
        bound_holds: kl_marginal <= kl_latent + T::lit(1e-10),
        margin: kl_latent - kl_marginal,
    })
}
