//! Differentiable criteria `f`, their affine normalization, and the lift of a
//! data-space criterion to the latent space of a frozen decoder.

use serde::{Deserialize, Serialize};

use crate::dist::{Distribution, GaussianMixture, LatentDecoder};
use crate::error::check_dim;
use crate::stats::{log_sum_exp, mean, variance};
use crate::{rng_from_seed, Error, Result, Rng, Scalar};

/// Floor applied to `log h(ℓ|x)`; below it the criterion is flat.
pub const LOG_PROB_FLOOR: f64 = -30.0;

/// Anything that can act as the criterion of a tuning run.
///
/// Criteria that need randomness (latent lifting through a noisy decoder)
/// draw it from the supplied generator; deterministic criteria ignore it.
pub trait CriterionFn<T: Scalar>: Send + Sync {
    fn value(&self, x: &[T], rng: &mut Rng) -> T;

    fn value_grad(&self, x: &[T], rng: &mut Rng) -> (T, Vec<T>);

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Probabilistic classifier given analytically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Classifier<T> {
    /// Two classes; class 1 has probability `σ(w·x + b)`.
    Logistic {
        weights: Vec<T>,
        #[serde(default)]
        bias: T,
    },
    /// Exact component posterior `p(k|x)` of a Gaussian mixture.
    BayesPosterior { mixture: GaussianMixture<T> },
}

impl<T: Scalar> Classifier<T> {
    pub fn classes(&self) -> usize {
        match self {
            Classifier::Logistic { .. } => 2,
            Classifier::BayesPosterior { mixture } => mixture.weights.len(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Classifier::Logistic { weights, .. } => {
                if weights.is_empty() {
                    return Err(Error::invalid("logistic classifier needs weights"));
                }
                Ok(())
            }
            Classifier::BayesPosterior { mixture } => mixture.validate(),
        }
    }

    /// Unnormalized log-probabilities and their input gradients.
    pub fn logits(&self, x: &[T]) -> (Vec<T>, Vec<Vec<T>>) {
        match self {
            Classifier::Logistic { weights, bias } => {
                let z = crate::linalg::dot(weights, x) + *bias;
                (
                    vec![T::zero(), z],
                    vec![vec![T::zero(); x.len()], weights.clone()],
                )
            }
            Classifier::BayesPosterior { mixture } => (
                mixture.joint_log_densities(x),
                mixture.components.iter().map(|c| c.score(x)).collect(),
            ),
        }
    }

    pub fn probabilities(&self, x: &[T]) -> Vec<T> {
        let (z, _) = self.logits(x);
        let lse = log_sum_exp(&z);
        z.iter().map(|&v| (v - lse).exp()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierForm {
    /// `h(ℓ|x)`
    Prob,
    /// `log h(ℓ|x)`, floored at [`LOG_PROB_FLOOR`].
    LogProb,
}

/// The raw (unnormalized) function behind a [`Criterion`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum CriterionKind<T> {
    /// `w·x + offset`
    Linear {
        weights: Vec<T>,
        #[serde(default)]
        offset: T,
    },
    /// `Σᵢ wᵢ (xᵢ − cᵢ)²`
    Quadratic { center: Vec<T>, weights: Vec<T> },
    Classifier {
        classifier: Classifier<T>,
        target: usize,
        form: ClassifierForm,
    },
    /// Entropy of the classifier's prediction, high near decision boundaries.
    Entropy { classifier: Classifier<T> },
    /// `log p_data(x) − log p_model(x)`
    Adversarial {
        model: Distribution<T>,
        data: Distribution<T>,
    },
    /// Smoothed maximum over `x[start..end]`: `τ · logsumexp(x/τ)`.
    Peak {
        start: usize,
        end: usize,
        #[serde(default)]
        temperature: Option<T>,
    },
    /// `mean(x[start..end]) − mean(x)`
    WindowContrast { start: usize, end: usize },
}

/// Affine map applied on top of a raw criterion: `(raw − shift) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct Affine<T> {
    pub shift: T,
    pub scale: T,
}

/// A differentiable criterion over data space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct Criterion<T> {
    pub function: CriterionKind<T>,
    #[serde(default)]
    pub normalization: Option<Affine<T>>,
    #[serde(default)]
    pub label: String,
}

impl<T: Scalar> Criterion<T> {
    pub fn new(function: CriterionKind<T>, label: impl Into<String>) -> Result<Self> {
        let c = Self {
            function,
            normalization: None,
            label: label.into(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn linear(weights: Vec<T>) -> Self {
        Self {
            function: CriterionKind::Linear {
                weights,
                offset: T::zero(),
            },
            normalization: None,
            label: "linear".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.function {
            CriterionKind::Linear { weights, .. } => {
                if weights.is_empty() {
                    return Err(Error::invalid("linear criterion needs weights"));
                }
            }
            CriterionKind::Quadratic { center, weights } => check_dim(center.len(), weights.len())?,
            CriterionKind::Classifier {
                classifier, target, ..
            } => {
                classifier.validate()?;
                if *target >= classifier.classes() {
                    return Err(Error::invalid(format!(
                        "target class {target} out of range for {} classes",
                        classifier.classes()
                    )));
                }
            }
            CriterionKind::Entropy { classifier } => classifier.validate()?,
            CriterionKind::Adversarial { model, data } => {
                model.validate()?;
                data.validate()?;
                check_dim(model.dim(), data.dim())?;
            }
            CriterionKind::Peak {
                start,
                end,
                temperature,
            } => {
                if end <= start {
                    return Err(Error::invalid("empty criterion window"));
                }
                match temperature {
                    Some(t) if *t > T::zero() && t.is_finite() => {}
                    Some(_) => return Err(Error::invalid("peak temperature must be positive")),
                    None => {
                        return Err(Error::invalid(
                            "peak temperature unresolved; use peak_criterion_auto",
                        ))
                    }
                }
            }
            CriterionKind::WindowContrast { start, end } => {
                if end <= start {
                    return Err(Error::invalid("empty criterion window"));
                }
            }
        }
        if let Some(a) = &self.normalization {
            if !(a.scale > T::zero()) {
                return Err(Error::invalid("normalization scale must be positive"));
            }
        }
        Ok(())
    }

    /// Input dimension the criterion requires, when it fixes one.
    pub fn required_dim(&self) -> Option<usize> {
        match &self.function {
            CriterionKind::Linear { weights, .. } => Some(weights.len()),
            CriterionKind::Quadratic { center, .. } => Some(center.len()),
            CriterionKind::Classifier { classifier, .. }
            | CriterionKind::Entropy { classifier } => match classifier {
                Classifier::Logistic { weights, .. } => Some(weights.len()),
                Classifier::BayesPosterior { mixture } => Some(mixture.dim()),
            },
            CriterionKind::Adversarial { model, .. } => Some(model.dim()),
            CriterionKind::Peak { .. } | CriterionKind::WindowContrast { .. } => None,
        }
    }

    /// Checks that the criterion can be evaluated on `dim`-dimensional inputs.
    pub fn check_input_dim(&self, dim: usize) -> Result<()> {
        if let Some(d) = self.required_dim() {
            return check_dim(d, dim);
        }
        match &self.function {
            CriterionKind::Peak { end, .. } | CriterionKind::WindowContrast { end, .. }
                if *end > dim =>
            {
                Err(Error::invalid(format!(
                    "window end {end} exceeds curve length {dim}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// The criterion before any normalization.
    pub fn raw_value_grad(&self, x: &[T]) -> (T, Vec<T>) {
        let n = x.len();
        match &self.function {
            CriterionKind::Linear { weights, offset } => {
                (crate::linalg::dot(weights, x) + *offset, weights.clone())
            }
            CriterionKind::Quadratic { center, weights } => {
                let two = T::lit(2.0);
                let mut v = T::zero();
                let g = x
                    .iter()
                    .zip(center)
                    .zip(weights)
                    .map(|((&xi, &c), &w)| {
                        let d = xi - c;
                        v += w * d * d;
                        two * w * d
                    })
                    .collect();
                (v, g)
            }
            CriterionKind::Classifier {
                classifier,
                target,
                form,
            } => {
                let (z, dz) = classifier.logits(x);
                let lse = log_sum_exp(&z);
                let probs: Vec<T> = z.iter().map(|&v| (v - lse).exp()).collect();
                let log_h = z[*target] - lse;
                // ∇ log h_ℓ = ∇z_ℓ − Σ_k h_k ∇z_k
                let mut g = dz[*target].clone();
                for (pk, dzk) in probs.iter().zip(&dz) {
                    for (gi, &d) in g.iter_mut().zip(dzk) {
                        *gi -= *pk * d;
                    }
                }
                match form {
                    ClassifierForm::LogProb => {
                        let floor = T::lit(LOG_PROB_FLOOR);
                        if log_h < floor {
                            (floor, vec![T::zero(); n])
                        } else {
                            (log_h, g)
                        }
                    }
                    ClassifierForm::Prob => {
                        let h = log_h.exp();
                        (h, g.into_iter().map(|v| v * h).collect())
                    }
                }
            }
            CriterionKind::Entropy { classifier } => {
                let (z, dz) = classifier.logits(x);
                let lse = log_sum_exp(&z);
                let logp: Vec<T> = z.iter().map(|&v| v - lse).collect();
                let h: T = logp
                    .iter()
                    .map(|&l| {
                        let p = l.exp();
                        if p > T::zero() {
                            -p * l
                        } else {
                            T::zero()
                        }
                    })
                    .sum();
                // ∂H/∂z_j = −p_j (log p_j + H)
                let mut g = vec![T::zero(); n];
                for (lj, dzj) in logp.iter().zip(&dz) {
                    let pj = lj.exp();
                    if pj == T::zero() {
                        continue;
                    }
                    let c = -pj * (*lj + h);
                    for (gi, &d) in g.iter_mut().zip(dzj) {
                        *gi += c * d;
                    }
                }
                (h, g)
            }
            CriterionKind::Adversarial { model, data } => {
                let v = data.log_density_unchecked(x) - model.log_density_unchecked(x);
                let sd = data.score_unchecked(x).unwrap_or_else(|_| vec![T::nan(); n]);
                let sm = model.score_unchecked(x).unwrap_or_else(|_| vec![T::nan(); n]);
                (v, sd.iter().zip(&sm).map(|(&a, &b)| a - b).collect())
            }
            CriterionKind::Peak {
                start,
                end,
                temperature,
            } => {
                let tau = temperature.unwrap_or(T::one());
                let scaled: Vec<T> = x[*start..*end].iter().map(|&v| v / tau).collect();
                let lse = log_sum_exp(&scaled);
                let mut g = vec![T::zero(); n];
                for (gi, &s) in g[*start..*end].iter_mut().zip(&scaled) {
                    *gi = (s - lse).exp();
                }
                (tau * lse, g)
            }
            CriterionKind::WindowContrast { start, end } => {
                let w = T::from_usize_lossy(end - start);
                let all = T::from_usize_lossy(n);
                let v = mean(&x[*start..*end]) - mean(x);
                let mut g = vec![-T::one() / all; n];
                for gi in &mut g[*start..*end] {
                    *gi += T::one() / w;
                }
                (v, g)
            }
        }
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.eval_grad(x).0
    }

    pub fn grad(&self, x: &[T]) -> Vec<T> {
        self.eval_grad(x).1
    }

    pub fn eval_grad(&self, x: &[T]) -> (T, Vec<T>) {
        let (v, g) = self.raw_value_grad(x);
        match &self.normalization {
            None => (v, g),
            Some(a) => (
                (v - a.shift) / a.scale,
                g.into_iter().map(|gi| gi / a.scale).collect(),
            ),
        }
    }

    /// Standardizes the criterion under `p` from `n` samples: the result has
    /// empirical mean 0 and standard deviation 1 on those samples. Applied to
    /// an already normalized criterion, the new map composes with the old.
    pub fn normalize_affine(&self, p: &Distribution<T>, n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("normalization needs at least 2 samples"));
        }
        self.check_input_dim(p.dim())?;
        let xs = p.sample(n, seed)?;
        let values: Vec<T> = xs.iter().map(|x| self.eval(x)).collect();
        let m = mean(&values);
        let s = variance(&values).sqrt();
        if !(s > T::epsilon() * T::lit(16.0) * (T::one() + m.abs())) {
            return Err(Error::DegenerateCriterion(format!(
                "criterion '{}' has zero variance under the base distribution",
                self.label
            )));
        }
        let composed = match self.normalization {
            None => Affine { shift: m, scale: s },
            Some(a) => Affine {
                shift: a.shift + a.scale * m,
                scale: a.scale * s,
            },
        };
        Ok(Self {
            normalization: Some(composed),
            ..self.clone()
        })
    }
}

impl<T: Scalar> CriterionFn<T> for Criterion<T> {
    fn value(&self, x: &[T], _rng: &mut Rng) -> T {
        self.eval(x)
    }

    fn value_grad(&self, x: &[T], _rng: &mut Rng) -> (T, Vec<T>) {
        self.eval_grad(x)
    }
}

/// `h(ℓ|x)` or `log h(ℓ|x)` for a fixed analytic classifier.
pub fn classifier_criterion<T: Scalar>(
    classifier: Classifier<T>,
    target: usize,
    form: ClassifierForm,
) -> Result<Criterion<T>> {
    let label = match form {
        ClassifierForm::Prob => format!("h({target}|x)"),
        ClassifierForm::LogProb => format!("log h({target}|x)"),
    };
    Criterion::new(
        CriterionKind::Classifier {
            classifier,
            target,
            form,
        },
        label,
    )
}

/// `log p_data − log p_model`: tilting `p_model` by it with weight β gives
/// `p_model^{1−β} p_data^β` up to normalization.
pub fn adversarial_criterion<T: Scalar>(
    model: Distribution<T>,
    data: Distribution<T>,
) -> Result<Criterion<T>> {
    Criterion::new(
        CriterionKind::Adversarial { model, data },
        "log p_data/p_model",
    )
}

pub fn peak_criterion<T: Scalar>(
    window: std::ops::Range<usize>,
    temperature: T,
) -> Result<Criterion<T>> {
    Criterion::new(
        CriterionKind::Peak {
            start: window.start,
            end: window.end,
            temperature: Some(temperature),
        },
        "soft peak",
    )
}

/// Default smoothing scale of [`peak_criterion`]: 5% of the pooled
/// per-coordinate standard deviation of curves drawn from `p`.
pub fn default_peak_temperature<T: Scalar>(p: &Distribution<T>, n: usize, seed: u64) -> Result<T> {
    if n < 2 {
        return Err(Error::invalid("temperature estimate needs at least 2 samples"));
    }
    let xs = p.sample(n, seed)?;
    let d = p.dim();
    let pooled = (0..d)
        .map(|j| {
            let col: Vec<T> = xs.iter().map(|x| x[j]).collect();
            variance(&col)
        })
        .sum::<T>()
        / T::from_usize_lossy(d);
    let t = T::lit(0.05) * pooled.sqrt();
    if !(t > T::zero()) {
        return Err(Error::DegenerateCriterion(
            "curves have zero spread under the base distribution".into(),
        ));
    }
    Ok(t)
}

pub fn peak_criterion_auto<T: Scalar>(
    window: std::ops::Range<usize>,
    p: &Distribution<T>,
    n: usize,
    seed: u64,
) -> Result<Criterion<T>> {
    peak_criterion(window, default_peak_temperature(p, n, seed)?)
}

pub fn window_contrast_criterion<T: Scalar>(window: std::ops::Range<usize>) -> Result<Criterion<T>> {
    Criterion::new(
        CriterionKind::WindowContrast {
            start: window.start,
            end: window.end,
        },
        "window contrast",
    )
}

/// `f̂(z) = E_{x ~ p(x|z)} f(x)` for a frozen decoder, estimated with
/// `mc_samples` pathwise draws `x = A z + σ ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "T: Scalar")]
pub struct LatentCriterion<T> {
    pub base: Criterion<T>,
    pub decoder: LatentDecoder<T>,
    pub mc_samples: usize,
}

pub fn lift_to_latent<T: Scalar>(
    base: Criterion<T>,
    decoder: LatentDecoder<T>,
    mc_samples: usize,
) -> Result<LatentCriterion<T>> {
    if mc_samples == 0 {
        return Err(Error::invalid("latent lifting needs at least one sample"));
    }
    decoder.validate()?;
    base.check_input_dim(decoder.data_dim())?;
    Ok(LatentCriterion {
        base,
        decoder,
        mc_samples,
    })
}

impl<T: Scalar> LatentCriterion<T> {
    fn draws(&self) -> usize {
        if self.decoder.is_deterministic() {
            1
        } else {
            self.mc_samples
        }
    }

    /// Normalizes the data-space criterion against the decoder's marginal,
    /// which is the law of `f̂(z)` inputs under the standard normal prior.
    pub fn normalize_affine(&self, n: usize, seed: u64) -> Result<Self> {
        let marginal = Distribution::LatentDecoder(self.decoder.clone());
        Ok(Self {
            base: self.base.normalize_affine(&marginal, n, seed)?,
            ..self.clone()
        })
    }

    pub fn prior(&self) -> Distribution<T> {
        Distribution::standard_normal(self.decoder.latent_dim())
    }
}

impl<T: Scalar> CriterionFn<T> for LatentCriterion<T> {
    fn value(&self, z: &[T], rng: &mut Rng) -> T {
        let m = self.draws();
        let total: T = (0..m)
            .map(|_| self.base.eval(&self.decoder.decode(z, rng)))
            .sum();
        total / T::from_usize_lossy(m)
    }

    fn value_grad(&self, z: &[T], rng: &mut Rng) -> (T, Vec<T>) {
        let m = self.draws();
        let mut v = T::zero();
        let mut gx = vec![T::zero(); self.decoder.data_dim()];
        for _ in 0..m {
            let x = self.decoder.decode(z, rng);
            let (fv, fg) = self.base.eval_grad(&x);
            v += fv;
            for (a, b) in gx.iter_mut().zip(fg) {
                *a += b;
            }
        }
        let inv = T::one() / T::from_usize_lossy(m);
        gx.iter_mut().for_each(|g| *g *= inv);
        (v * inv, self.decoder.pullback(&gx))
    }

    fn is_deterministic(&self) -> bool {
        self.decoder.is_deterministic()
    }
}

/// Evaluates `f` on a batch with a generator seeded from `seed`.
pub fn evaluate_batch<T: Scalar, C: CriterionFn<T> + ?Sized>(
    f: &C,
    xs: &[Vec<T>],
    seed: u64,
) -> Vec<T> {
    let mut rng = rng_from_seed(seed);
    xs.iter().map(|x| f.value(x, &mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DiagGaussian;
    use approx::assert_relative_eq;

    fn sigmoid(z: f64) -> f64 {
        1.0 / (1.0 + (-z).exp())
    }

    fn fd_check(c: &Criterion<f64>, x: &[f64], rel: f64) {
        let g = c.grad(x);
        for j in 0..x.len() {
            let h = 1e-5;
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fd = (c.eval(&xp) - c.eval(&xm)) / (2.0 * h);
            assert!(
                (fd - g[j]).abs() <= rel * fd.abs().max(g[j].abs()) + 1e-9,
                "{}: coordinate {j}: fd {fd} vs grad {}",
                c.label,
                g[j]
            );
        }
    }

    fn two_mode() -> GaussianMixture<f64> {
        GaussianMixture::new(
            vec![0.5, 0.5],
            vec![
                DiagGaussian::new(vec![-2.0], vec![1.0]).unwrap(),
                DiagGaussian::new(vec![2.0], vec![1.0]).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn log_sigmoid_gradient() {
        let w = vec![1.5, -0.5];
        let c = classifier_criterion(
            Classifier::Logistic {
                weights: w.clone(),
                bias: 0.0,
            },
            1,
            ClassifierForm::LogProb,
        )
        .unwrap();
        let x = [0.4, 1.0];
        let s = sigmoid(1.5 * 0.4 - 0.5);
        let g = c.grad(&x);
        assert_relative_eq!(g[0], (1.0 - s) * 1.5, epsilon = 1e-14);
        assert_relative_eq!(g[1], (1.0 - s) * -0.5, epsilon = 1e-14);
        assert_relative_eq!(c.eval(&x), s.ln(), epsilon = 1e-14);
    }

    #[test]
    fn saturated_sigmoid_has_vanishing_gradient() {
        let c = classifier_criterion::<f64>(
            Classifier::Logistic {
                weights: vec![1.0],
                bias: 0.0,
            },
            1,
            ClassifierForm::Prob,
        )
        .unwrap();
        assert!(c.grad(&[40.0])[0].abs() < 1e-15);
        assert!((c.eval(&[40.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_prob_floor_is_flat() {
        let c = classifier_criterion(
            Classifier::Logistic {
                weights: vec![1.0],
                bias: 0.0,
            },
            1,
            ClassifierForm::LogProb,
        )
        .unwrap();
        assert_eq!(c.eval(&[-100.0]), LOG_PROB_FLOOR);
        assert_eq!(c.grad(&[-100.0]), vec![0.0]);
    }

    #[test]
    fn bayes_posterior_of_two_modes_is_logistic() {
        // log-odds of the right component: ((x+2)² − (x−2)²)/2 = 4x
        let c = classifier_criterion(
            Classifier::BayesPosterior {
                mixture: two_mode(),
            },
            1,
            ClassifierForm::LogProb,
        )
        .unwrap();
        for &x in &[-1.5, 0.0, 0.3, 2.0] {
            assert_relative_eq!(c.eval(&[x]), sigmoid(4.0 * x).ln(), epsilon = 1e-12);
        }
        fd_check(&c, &[0.2], 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mix = two_mode();
        let crits = vec![
            Criterion::linear(vec![1.0, -2.0, 0.5]),
            Criterion::new(
                CriterionKind::Quadratic {
                    center: vec![1.0, 0.0, -1.0],
                    weights: vec![0.5, 2.0, 1.0],
                },
                "quad",
            )
            .unwrap(),
            Criterion::new(
                CriterionKind::Entropy {
                    classifier: Classifier::Logistic {
                        weights: vec![1.0, 0.5, -0.3],
                        bias: 0.2,
                    },
                },
                "entropy",
            )
            .unwrap(),
            peak_criterion(0..2, 0.3).unwrap(),
            window_contrast_criterion(1..3).unwrap(),
        ];
        let x = [0.3, -0.7, 1.2];
        for c in &crits {
            fd_check(c, &x, 1e-4);
        }
        let ent = Criterion::new(
            CriterionKind::Entropy {
                classifier: Classifier::BayesPosterior { mixture: mix.clone() },
            },
            "entropy-bayes",
        )
        .unwrap();
        fd_check(&ent, &[0.4], 1e-4);
        let prob = classifier_criterion(
            Classifier::BayesPosterior { mixture: mix },
            0,
            ClassifierForm::Prob,
        )
        .unwrap();
        fd_check(&prob, &[-0.3], 1e-4);
    }

    #[test]
    fn entropy_peaks_at_the_boundary() {
        let c = Criterion::new(
            CriterionKind::Entropy {
                classifier: Classifier::Logistic {
                    weights: vec![2.0],
                    bias: 0.0,
                },
            },
            "entropy",
        )
        .unwrap();
        assert_relative_eq!(c.eval(&[0.0]), 2f64.ln(), epsilon = 1e-14);
        assert!(c.eval(&[5.0]) < 0.01);
        assert!(c.grad(&[0.0])[0].abs() < 1e-14);
    }

    #[test]
    fn adversarial_of_unit_gaussians_is_shifted_linear() {
        let c = adversarial_criterion(
            Distribution::standard_normal(1),
            Distribution::gaussian(vec![1.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        for &x in &[-2.0, 0.0, 0.5, 3.0] {
            assert_relative_eq!(c.eval(&[x]), x - 0.5, epsilon = 1e-12);
            assert_relative_eq!(c.grad(&[x])[0], 1.0, epsilon = 1e-12);
        }
        let same = adversarial_criterion(
            Distribution::<f64>::standard_normal(2),
            Distribution::standard_normal(2),
        )
        .unwrap();
        assert_eq!(same.eval(&[0.3, 4.0]), 0.0);
        assert_eq!(same.grad(&[0.3, 4.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn peak_and_contrast_on_simple_curves() {
        let tau = 1e-3;
        let c = peak_criterion(2..6, tau).unwrap();
        let x = vec![1.7; 8];
        assert_relative_eq!(c.eval(&x), 1.7 + tau * 4f64.ln(), epsilon = 1e-12);
        let curve = [0.0, 1.0, 5.0, 2.0];
        assert!(peak_criterion(0..4, 0.5).unwrap().eval(&curve) >= 5.0);

        let f2 = window_contrast_criterion(2..5).unwrap();
        assert_eq!(f2.eval(&[3.0; 7]), 0.0);
        let ind: Vec<f64> = (0..7).map(|i| if (2..5).contains(&i) { 1.0 } else { 0.0 }).collect();
        assert_relative_eq!(f2.eval(&ind), 1.0 - 3.0 / 7.0, epsilon = 1e-14);
        assert!(window_contrast_criterion::<f64>(3..3).is_err());
        assert!(f2.check_input_dim(4).is_err());
    }

    #[test]
    fn normalization_examples() {
        let p = Distribution::<f64>::standard_normal(1);
        let n = 20_000;
        let f = Criterion::linear(vec![1.0]);
        let nf = f.normalize_affine(&p, n, 1).unwrap();
        let a = nf.normalization.unwrap();
        let tol = 5.0 / (n as f64).sqrt();
        assert!(a.shift.abs() < tol && (a.scale - 1.0).abs() < tol);

        let g = Criterion {
            function: CriterionKind::Linear {
                weights: vec![2.0],
                offset: 7.0,
            },
            normalization: None,
            label: "2x+7".into(),
        };
        let ng = g.normalize_affine(&p, n, 1).unwrap();
        let a = ng.normalization.unwrap();
        assert!((a.shift - 7.0).abs() < 2.0 * tol && (a.scale - 2.0).abs() < 2.0 * tol);
        assert_relative_eq!(ng.grad(&[0.3])[0], 2.0 / a.scale);

        // normalized values under fresh samples
        let xs = p.sample(n, 99).unwrap();
        let vals: Vec<f64> = xs.iter().map(|x| ng.eval(x)).collect();
        assert!(mean(&vals).abs() < tol);
        assert!((variance(&vals).sqrt() - 1.0).abs() < tol);

        // idempotent up to noise
        let again = ng.normalize_affine(&p, n, 2).unwrap().normalization.unwrap();
        assert!((again.shift - a.shift).abs() < 2.0 * tol);
        assert!((again.scale / a.scale - 1.0).abs() < 2.0 * tol);

        let constant = Criterion::linear(vec![0.0]);
        assert!(matches!(
            constant.normalize_affine(&p, 100, 1),
            Err(Error::DegenerateCriterion(_))
        ));
        assert!(f.normalize_affine(&p, 1, 1).is_err());
    }

    #[test]
    fn normalization_preserves_order_and_direction() {
        let p = Distribution::<f64>::standard_normal(2);
        let f = Criterion::new(
            CriterionKind::Quadratic {
                center: vec![0.5, -0.5],
                weights: vec![1.0, 3.0],
            },
            "q",
        )
        .unwrap();
        let nf = f.normalize_affine(&p, 500, 3).unwrap();
        let xs = p.sample(200, 4).unwrap();
        for w in xs.windows(2) {
            assert_eq!(f.eval(&w[0]) < f.eval(&w[1]), nf.eval(&w[0]) < nf.eval(&w[1]));
            let (g, h) = (f.grad(&w[0]), nf.grad(&w[0]));
            let cos = crate::linalg::dot(&g, &h) / (crate::stats::norm(&g) * crate::stats::norm(&h));
            assert!((cos - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_lift_is_composition() {
        let dec = LatentDecoder::new(vec![vec![1.0, 0.5], vec![-0.3, 2.0], vec![0.0, 1.0]], 0.0).unwrap();
        let base = Criterion::new(
            CriterionKind::Quadratic {
                center: vec![0.1, 0.2, 0.3],
                weights: vec![1.0, 0.5, 2.0],
            },
            "q",
        )
        .unwrap();
        let lifted = lift_to_latent(base.clone(), dec.clone(), 5).unwrap();
        let mut rng = rng_from_seed(0);
        let z = [0.7, -0.2];
        let x = dec.mean(&z);
        let (v, g) = lifted.value_grad(&z, &mut rng);
        assert_eq!(v, base.eval(&x));
        for j in 0..2 {
            let mut zp = z;
            let mut zm = z;
            zp[j] += 1e-6;
            zm[j] -= 1e-6;
            let fd = (lifted.value(&zp, &mut rng) - lifted.value(&zm, &mut rng)) / 2e-6;
            assert_relative_eq!(g[j], fd, max_relative = 1e-6);
        }
        assert!(lift_to_latent(base, dec, 0).is_err());
    }

    #[test]
    fn identity_decoder_lift() {
        let dec = LatentDecoder::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 0.0).unwrap();
        let base = Criterion::linear(vec![2.0, -1.0]);
        let lifted = lift_to_latent(base.clone(), dec, 1).unwrap();
        let mut rng = rng_from_seed(0);
        assert_eq!(lifted.value(&[0.4, 0.1], &mut rng), base.eval(&[0.4, 0.1]));
        assert!(lifted.is_deterministic());
    }

    #[test]
    fn linear_lift_is_unbiased_and_mc_shrinks_variance() {
        let dec = LatentDecoder::new(vec![vec![1.0], vec![2.0]], 0.5).unwrap();
        let lin = lift_to_latent(Criterion::linear(vec![1.0, 1.0]), dec.clone(), 1).unwrap();
        let mut rng = rng_from_seed(5);
        let z = [0.8];
        let vals: Vec<f64> = (0..20_000).map(|_| lin.value(&z, &mut rng)).collect();
        // E = aᵀ A z = 3·0.8, sd of one draw √(2·0.5)
        assert!((mean(&vals) - 2.4).abs() < 4.0 * (1.0f64 / 20_000.0).sqrt());

        let quad = Criterion::new(
            CriterionKind::Quadratic {
                center: vec![0.0, 0.0],
                weights: vec![1.0, 1.0],
            },
            "q",
        )
        .unwrap();
        let one = lift_to_latent(quad.clone(), dec.clone(), 1).unwrap();
        let hundred = lift_to_latent(quad, dec, 100).unwrap();
        let v1: Vec<f64> = (0..4000).map(|_| one.value(&z, &mut rng)).collect();
        let v100: Vec<f64> = (0..4000).map(|_| hundred.value(&z, &mut rng)).collect();
        let ratio = variance(&v1) / variance(&v100);
        assert!(ratio > 80.0 && ratio < 125.0, "variance ratio {ratio}");
    }

    #[test]
    fn config_form_round_trips() {
        let c = classifier_criterion(
            Classifier::Logistic {
                weights: vec![1.0, 2.0],
                bias: -0.5,
            },
            1,
            ClassifierForm::LogProb,
        )
        .unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: Criterion<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        let parsed: Criterion<f64> =
            serde_json::from_str(r#"{"function":{"kind":"linear","weights":[1,0]}}"#).unwrap();
        assert_eq!(parsed.eval(&[3.0, 4.0]), 3.0);
    }
}
