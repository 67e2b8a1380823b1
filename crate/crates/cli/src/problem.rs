//! Turning a [`RunConfig`] into a base distribution and a criterion.

use anyhow::{Context, Result};
use boltzmann_core::criteria::{
    adversarial_criterion, classifier_criterion, lift_to_latent, peak_criterion, peak_criterion_auto,
    window_contrast_criterion, Affine, Criterion, CriterionFn, CriterionKind, LatentCriterion,
};
use boltzmann_core::dist::{Distribution, LatentDecoder};
use boltzmann_core::Rng;

use crate::config::{CriterionSection, CriterionSpec, RunConfig};

/// Criterion on the tuned variable: data space, or latent space through a
/// frozen decoder.
#[derive(Clone, Debug)]
pub enum AnyCriterion {
    Data(Criterion<f64>),
    Latent(LatentCriterion<f64>),
}

impl AnyCriterion {
    pub fn label(&self) -> &str {
        match self {
            AnyCriterion::Data(c) => &c.label,
            AnyCriterion::Latent(c) => &c.base.label,
        }
    }

    pub fn normalization(&self) -> Option<Affine<f64>> {
        match self {
            AnyCriterion::Data(c) => c.normalization,
            AnyCriterion::Latent(c) => c.base.normalization,
        }
    }

    pub fn data(&self) -> Option<&Criterion<f64>> {
        match self {
            AnyCriterion::Data(c) => Some(c),
            AnyCriterion::Latent(_) => None,
        }
    }
}

impl CriterionFn<f64> for AnyCriterion {
    fn value(&self, x: &[f64], rng: &mut Rng) -> f64 {
        match self {
            AnyCriterion::Data(c) => c.value(x, rng),
            AnyCriterion::Latent(c) => c.value(x, rng),
        }
    }

    fn value_grad(&self, x: &[f64], rng: &mut Rng) -> (f64, Vec<f64>) {
        match self {
            AnyCriterion::Data(c) => c.value_grad(x, rng),
            AnyCriterion::Latent(c) => c.value_grad(x, rng),
        }
    }

    fn is_deterministic(&self) -> bool {
        match self {
            AnyCriterion::Data(c) => c.is_deterministic(),
            AnyCriterion::Latent(c) => c.is_deterministic(),
        }
    }
}

pub struct Problem {
    /// Distribution being tuned (the latent prior when lifting).
    pub p: Distribution<f64>,
    /// Data-space distribution, for criteria that need it.
    pub data_space: Distribution<f64>,
    pub decoder: Option<LatentDecoder<f64>>,
}

impl Problem {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        match (&cfg.distribution, &cfg.latent) {
            (Some(d), _) => Ok(Self {
                p: d.clone(),
                data_space: d.clone(),
                decoder: None,
            }),
            (None, Some(l)) => Ok(Self {
                p: Distribution::standard_normal(l.decoder.latent_dim()),
                data_space: Distribution::LatentDecoder(l.decoder.clone()),
                decoder: Some(l.decoder.clone()),
            }),
            (None, None) => anyhow::bail!("config needs a `distribution` or a `latent` section"),
        }
    }

    /// Builds and, unless disabled, standardizes a criterion under the
    /// data-space distribution.
    pub fn criterion(&self, cfg: &RunConfig, section: &CriterionSection, seed: u64) -> Result<AnyCriterion> {
        let mut base = build(section, &self.data_space, seed)?;
        if section.normalize {
            base = base
                .normalize_affine(&self.data_space, section.normalize_samples, seed)
                .with_context(|| format!("normalizing criterion '{}'", base.label))?;
        }
        match &self.decoder {
            None => Ok(AnyCriterion::Data(base)),
            Some(dec) => {
                let mc = cfg.latent.as_ref().map_or(1, |l| l.mc_samples);
                Ok(AnyCriterion::Latent(lift_to_latent(base, dec.clone(), mc)?))
            }
        }
    }
}

fn build(section: &CriterionSection, data: &Distribution<f64>, seed: u64) -> Result<Criterion<f64>> {
    let mut c = match &section.function {
        CriterionSpec::Linear { weights, offset } => Criterion::new(
            CriterionKind::Linear {
                weights: weights.clone(),
                offset: *offset,
            },
            "linear",
        )?,
        CriterionSpec::Quadratic { center, weights } => Criterion::new(
            CriterionKind::Quadratic {
                center: center.clone(),
                weights: weights.clone(),
            },
            "quadratic",
        )?,
        CriterionSpec::Classifier {
            classifier,
            target,
            form,
        } => classifier_criterion(classifier.clone(), *target, *form)?,
        CriterionSpec::Entropy { classifier } => Criterion::new(
            CriterionKind::Entropy {
                classifier: classifier.clone(),
            },
            "entropy",
        )?,
        CriterionSpec::Adversarial { data: target } => adversarial_criterion(data.clone(), target.clone())?,
        CriterionSpec::Peak {
            start,
            end,
            temperature,
        } => match temperature {
            Some(t) => peak_criterion(*start..*end, *t)?,
            None => peak_criterion_auto(*start..*end, data, 10_000, seed)?,
        },
        CriterionSpec::WindowContrast { start, end } => window_contrast_criterion(*start..*end)?,
    };
    if let Some(l) = &section.label {
        c.label = l.clone();
    }
    c.check_input_dim(data.dim())?;
    Ok(c)
}
