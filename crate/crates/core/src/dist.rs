//! Base distributions: evaluable in log space, differentiable, and sampleable
//! from an explicit seed.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::check_dim;
use crate::flows::FlowModel;
use crate::linalg;
use crate::stats::log_sum_exp;
use crate::{rng_from_seed, Error, Result, Rng, Scalar};

pub(crate) fn std_normal<T: Scalar>(rng: &mut Rng) -> T {
    T::lit(rng.sample::<f64, _>(StandardNormal))
}

fn ln_2pi<T: Scalar>() -> T {
    T::lit((2.0 * std::f64::consts::PI).ln())
}

/// Gaussian with diagonal covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct DiagGaussian<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> DiagGaussian<T> {
    pub fn new(mean: Vec<T>, var: Vec<T>) -> Result<Self> {
        let g = Self { mean, var };
        g.validate()?;
        Ok(g)
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            var: vec![T::one(); dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.is_empty() {
            return Err(Error::invalid("gaussian dimension must be positive"));
        }
        check_dim(self.mean.len(), self.var.len())?;
        if self.var.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
            return Err(Error::invalid("gaussian variances must be finite and positive"));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("gaussian mean must be finite"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &[T]) -> T {
        let half = T::lit(0.5);
        let mut acc = T::zero();
        for ((&xi, &m), &v) in x.iter().zip(&self.mean).zip(&self.var) {
            let d = xi - m;
            acc += ln_2pi::<T>() + v.ln() + d * d / v;
        }
        -half * acc
    }

    pub fn score(&self, x: &[T]) -> Vec<T> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((&xi, &m), &v)| -(xi - m) / v)
            .collect()
    }

    pub fn draw(&self, rng: &mut Rng) -> Vec<T> {
        self.mean
            .iter()
            .zip(&self.var)
            .map(|(&m, &v)| m + v.sqrt() * std_normal::<T>(rng))
            .collect()
    }

    /// Differential entropy `½ Σ ln(2πe σᵢ²)`.
    pub fn entropy(&self) -> T {
        let half = T::lit(0.5);
        self.var
            .iter()
            .map(|&v| half * (ln_2pi::<T>() + T::one() + v.ln()))
            .sum()
    }
}

/// Finite mixture of diagonal Gaussians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct GaussianMixture<T> {
    pub weights: Vec<T>,
    pub components: Vec<DiagGaussian<T>>,
}

impl<T: Scalar> GaussianMixture<T> {
    pub fn new(weights: Vec<T>, components: Vec<DiagGaussian<T>>) -> Result<Self> {
        let m = Self { weights, components };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        check_dim(self.components.len(), self.weights.len())?;
        let dim = self.components[0].dim();
        for c in &self.components {
            c.validate()?;
            check_dim(dim, c.dim())?;
        }
        if self.weights.iter().any(|&w| w < T::zero() || !w.is_finite()) {
            return Err(Error::invalid("mixture weights must be nonnegative"));
        }
        let total: f64 = self.weights.iter().map(|w| w.as_f64()).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "mixture weights must sum to 1 (got {total})"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// Per-component `ln wₖ + ln Nₖ(x)`.
    pub fn joint_log_densities(&self, x: &[T]) -> Vec<T> {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(&w, c)| w.ln() + c.log_density(x))
            .collect()
    }

    /// Posterior component probabilities `p(k | x)`.
    pub fn responsibilities(&self, x: &[T]) -> Vec<T> {
        let joint = self.joint_log_densities(x);
        let lse = log_sum_exp(&joint);
        joint.iter().map(|&j| (j - lse).exp()).collect()
    }

    pub fn log_density(&self, x: &[T]) -> T {
        log_sum_exp(&self.joint_log_densities(x))
    }

    pub fn score(&self, x: &[T]) -> Vec<T> {
        let resp = self.responsibilities(x);
        let mut out = vec![T::zero(); x.len()];
        for (r, c) in resp.iter().zip(&self.components) {
            if *r == T::zero() {
                continue;
            }
            for (o, s) in out.iter_mut().zip(c.score(x)) {
                *o += *r * s;
            }
        }
        out
    }

    /// Draws a component index by inverse CDF on the weights.
    pub fn draw_component(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w.as_f64();
            if u < acc {
                return k;
            }
        }
        self.weights
            .iter()
            .rposition(|&w| w > T::zero())
            .unwrap_or(self.weights.len() - 1)
    }

    pub fn draw_labeled(&self, rng: &mut Rng) -> (usize, Vec<T>) {
        let k = self.draw_component(rng);
        (k, self.components[k].draw(rng))
    }
}

/// Linear-Gaussian decoder `x = A z + σ ε` with `z ~ N(0, I)`.
///
/// `noise_var = 0` gives a deterministic decoder; the marginal density then
/// exists only when `A Aᵀ` is nonsingular.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct LatentDecoder<T> {
    /// `data_dim` rows of `latent_dim` entries.
    pub weights: Vec<Vec<T>>,
    pub noise_var: T,
}

impl<T: Scalar> LatentDecoder<T> {
    pub fn new(weights: Vec<Vec<T>>, noise_var: T) -> Result<Self> {
        let d = Self { weights, noise_var };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights[0].is_empty() {
            return Err(Error::invalid("decoder dimensions must be positive"));
        }
        let k = self.weights[0].len();
        for row in &self.weights {
            check_dim(k, row.len())?;
        }
        if !(self.noise_var >= T::zero()) || !self.noise_var.is_finite() {
            return Err(Error::invalid("decoder noise variance must be nonnegative"));
        }
        Ok(())
    }

    pub fn data_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.weights[0].len()
    }

    pub fn is_deterministic(&self) -> bool {
        self.noise_var == T::zero()
    }

    /// Decoder mean `A z`.
    pub fn mean(&self, z: &[T]) -> Vec<T> {
        linalg::mat_vec(&self.weights, z)
    }

    /// Draws `x ~ p(x | z)` pathwise as `A z + σ ε`.
    pub fn decode(&self, z: &[T], rng: &mut Rng) -> Vec<T> {
        let mut x = self.mean(z);
        if !self.is_deterministic() {
            let s = self.noise_var.sqrt();
            for xi in &mut x {
                *xi += s * std_normal::<T>(rng);
            }
        }
        x
    }

    /// Pulls a data-space gradient back to latent space: `Aᵀ g`.
    pub fn pullback(&self, g: &[T]) -> Vec<T> {
        linalg::mat_t_vec(&self.weights, g, self.latent_dim())
    }

    /// Marginal covariance `A Σ_z Aᵀ + σ² I` for a diagonal latent covariance.
    pub fn marginal_cov(&self, latent_var: &[T]) -> Vec<Vec<T>> {
        linalg::gram_plus_diag(&self.weights, latent_var, self.noise_var)
    }

    fn marginal_chol(&self) -> Result<Vec<Vec<T>>> {
        let ones = vec![T::one(); self.latent_dim()];
        linalg::cholesky(&self.marginal_cov(&ones))
            .map_err(|_| Error::invalid("decoder marginal covariance is singular"))
    }
}

/// Probability model used as the base `p` or as a tuned `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Distribution<T> {
    DiagGaussian(DiagGaussian<T>),
    GaussianMixture(GaussianMixture<T>),
    /// Data-space marginal of a linear-Gaussian decoder under a standard
    /// normal prior, `N(0, A Aᵀ + σ² I)`.
    LatentDecoder(LatentDecoder<T>),
    /// Law of `g(x̂)` with `x̂ ~ base`.
    FlowPushforward {
        base: Box<Distribution<T>>,
        flow: FlowModel<T>,
    },
}

impl<T: Scalar> Distribution<T> {
    pub fn standard_normal(dim: usize) -> Self {
        Distribution::DiagGaussian(DiagGaussian::standard(dim))
    }

    pub fn gaussian(mean: Vec<T>, var: Vec<T>) -> Result<Self> {
        Ok(Distribution::DiagGaussian(DiagGaussian::new(mean, var)?))
    }

    pub fn mixture(weights: Vec<T>, components: Vec<DiagGaussian<T>>) -> Result<Self> {
        Ok(Distribution::GaussianMixture(GaussianMixture::new(
            weights, components,
        )?))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Distribution::DiagGaussian(g) => g.validate(),
            Distribution::GaussianMixture(m) => m.validate(),
            Distribution::LatentDecoder(d) => {
                d.validate()?;
                d.marginal_chol().map(|_| ())
            }
            Distribution::FlowPushforward { base, flow } => {
                base.validate()?;
                flow.validate()?;
                check_dim(base.dim(), flow.dim())
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Distribution::DiagGaussian(g) => g.dim(),
            Distribution::GaussianMixture(m) => m.dim(),
            Distribution::LatentDecoder(d) => d.data_dim(),
            Distribution::FlowPushforward { base, .. } => base.dim(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Distribution::DiagGaussian(_) => "diag_gaussian",
            Distribution::GaussianMixture(_) => "gaussian_mixture",
            Distribution::LatentDecoder(_) => "latent_decoder",
            Distribution::FlowPushforward { .. } => "flow_pushforward",
        }
    }

    pub fn log_density(&self, x: &[T]) -> Result<T> {
        check_dim(self.dim(), x.len())?;
        Ok(self.log_density_unchecked(x))
    }

    /// `log_density` without the length check, for hot loops whose inputs are
    /// already known to have the right dimension.
    pub(crate) fn log_density_unchecked(&self, x: &[T]) -> T {
        match self {
            Distribution::DiagGaussian(g) => g.log_density(x),
            Distribution::GaussianMixture(m) => m.log_density(x),
            Distribution::LatentDecoder(d) => match d.marginal_chol() {
                Ok(l) => {
                    let w = linalg::forward_sub(&l, x);
                    let half = T::lit(0.5);
                    -half
                        * (T::from_usize_lossy(x.len()) * ln_2pi::<T>()
                            + linalg::chol_logdet(&l)
                            + linalg::dot(&w, &w))
                }
                Err(_) => T::nan(),
            },
            Distribution::FlowPushforward { base, flow } => match flow.inverse(x) {
                Ok((xhat, logdet)) => base.log_density_unchecked(&xhat) - logdet,
                Err(_) => T::nan(),
            },
        }
    }

    /// Gradient of the log-density with respect to `x`.
    pub fn score(&self, x: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim(), x.len())?;
        self.score_unchecked(x)
    }

    pub(crate) fn score_unchecked(&self, x: &[T]) -> Result<Vec<T>> {
        match self {
            Distribution::DiagGaussian(g) => Ok(g.score(x)),
            Distribution::GaussianMixture(m) => Ok(m.score(x)),
            Distribution::LatentDecoder(d) => {
                let l = d.marginal_chol()?;
                Ok(linalg::chol_solve(&l, x).into_iter().map(|v| -v).collect())
            }
            Distribution::FlowPushforward { .. } => Err(Error::Unsupported(
                "analytic score of a flow pushforward".into(),
            )),
        }
    }

    pub fn draw(&self, rng: &mut Rng) -> Vec<T> {
        match self {
            Distribution::DiagGaussian(g) => g.draw(rng),
            Distribution::GaussianMixture(m) => m.draw_labeled(rng).1,
            Distribution::LatentDecoder(d) => {
                let z: Vec<T> = (0..d.latent_dim()).map(|_| std_normal::<T>(rng)).collect();
                d.decode(&z, rng)
            }
            Distribution::FlowPushforward { base, flow } => {
                let xhat = base.draw(rng);
                flow.forward(&xhat).map(|(y, _)| y).unwrap_or(xhat)
            }
        }
    }

    pub fn sample_rng(&self, n: usize, rng: &mut Rng) -> Vec<Vec<T>> {
        (0..n).map(|_| self.draw(rng)).collect()
    }

    /// `n` draws from a generator seeded with `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<T>>> {
        if n == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let mut rng = rng_from_seed(seed);
        Ok(self.sample_rng(n, &mut rng))
    }
}
