//! Assessing criteria before tuning and auditing runs afterwards.
//!
//! A criterion whose gradient norms are concentrated is easier to tune than
//! one with heavy tails or large flat regions, since `∇ log(q_β/p) = β ∇f`
//! at the optimum. [`compare_criteria`] ranks candidates by a regularity
//! score computed from [`GradNormProfile`]s.
//!
//! [`importance_curves`] reweights samples of `p` by `e^{βf}` to predict
//! `E_{q_β} f` and `KL(q_β‖p)` without fitting anything; [`audit_run`]
//! compares those predictions with what a sweep actually achieved.

use serde::{Deserialize, Serialize};

use crate::beta::MomentEstimates;
use crate::criteria::CriterionFn;
use crate::dist::Distribution;
use crate::stats::{log_sum_exp, mean, norm, quantile_sorted, sorted};
use crate::{rng_from_seed, Error, Result, Scalar};

/// Norms below this fraction of the largest norm count as zero.
pub const ZERO_MASS_EPS: f64 = 1e-3;
/// Importance estimates with fewer effective samples are unreliable.
pub const MIN_ESS: f64 = 50.0;
/// Relative shortfall of the achieved `E_q f` that raises an undershoot flag.
pub const UNDERSHOOT_MARGIN: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GradNormProfile<T> {
    pub n: usize,
    pub bin_edges: Vec<T>,
    pub counts: Vec<usize>,
    pub median: T,
    pub p90: T,
    pub p99: T,
    pub max: T,
    pub zero_mass_fraction: T,
    /// Norms above the plot cap are counted in the last bin.
    pub truncated: bool,
    pub overflow: usize,
    pub plot_cap: Option<T>,
    /// p99/median over the norms outside the zero mass; lower is more regular.
    pub regularity_score: T,
}

impl<T: Scalar> GradNormProfile<T> {
    pub fn from_norms(norms: &[T], bins: usize, plot_cap: Option<T>) -> Result<Self> {
        if norms.is_empty() {
            return Err(Error::invalid("profile needs at least one norm"));
        }
        if bins == 0 {
            return Err(Error::invalid("profile needs at least one bin"));
        }
        let s = sorted(norms);
        let max = *s.last().unwrap();
        let thresh = T::lit(ZERO_MASS_EPS) * max;
        let zeros = s.iter().filter(|&&v| v < thresh).count();
        let nonzero = &s[zeros..];
        let regularity_score = if nonzero.is_empty() {
            T::one()
        } else {
            let med = quantile_sorted(nonzero, T::lit(0.5));
            if med > T::zero() {
                quantile_sorted(nonzero, T::lit(0.99)) / med
            } else {
                T::one()
            }
        };
        let truncated = plot_cap.is_some_and(|c| max > c);
        let mut hi = plot_cap.map_or(max, |c| c.min(max));
        if !(hi > T::zero()) {
            hi = T::one();
        }
        let width = hi / T::from_usize_lossy(bins);
        let bin_edges = (0..=bins).map(|i| width * T::from_usize_lossy(i)).collect();
        let mut counts = vec![0usize; bins];
        let mut overflow = 0;
        for &v in norms {
            if v > hi {
                overflow += 1;
            }
            let b = (v / width).floor().to_usize().unwrap_or(bins).min(bins - 1);
            counts[b] += 1;
        }
        let n = norms.len();
        Ok(Self {
            n,
            bin_edges,
            counts,
            median: quantile_sorted(&s, T::lit(0.5)),
            p90: quantile_sorted(&s, T::lit(0.9)),
            p99: quantile_sorted(&s, T::lit(0.99)),
            max,
            zero_mass_fraction: T::from_usize_lossy(zeros) / T::from_usize_lossy(n),
            truncated,
            overflow,
            plot_cap,
            regularity_score,
        })
    }

    /// Profile of `β‖∇f‖`, the norm of `∇ log(q_β/p)` at the optimum.
    pub fn scaled(&self, beta: T) -> Self {
        let b = beta.abs();
        Self {
            bin_edges: self.bin_edges.iter().map(|&e| e * b).collect(),
            median: self.median * b,
            p90: self.p90 * b,
            p99: self.p99 * b,
            max: self.max * b,
            plot_cap: self.plot_cap.map(|c| c * b),
            ..self.clone()
        }
    }
}

/// Histogram and quantiles of `‖∇f(x)‖` over `n ≥ 1000` draws from `p`.
pub fn grad_norm_profile<T: Scalar, C: CriterionFn<T> + ?Sized>(
    f: &C,
    p: &Distribution<T>,
    n: usize,
    bins: usize,
    plot_cap: Option<T>,
    seed: u64,
) -> Result<GradNormProfile<T>> {
    if n < 1000 {
        return Err(Error::invalid("gradient-norm profile needs at least 1000 samples"));
    }
    let xs = p.sample(n, seed)?;
    let mut rng = rng_from_seed(seed ^ 0xd1a6);
    let norms: Vec<T> = xs.iter().map(|x| norm(&f.value_grad(x, &mut rng).1)).collect();
    GradNormProfile::from_norms(&norms, bins, plot_cap)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TheoreticalCurve<T> {
    pub betas: Vec<T>,
    pub log_z: Vec<T>,
    pub mean_f: Vec<T>,
    pub dkl: Vec<T>,
    pub ess: Vec<T>,
    pub se_mean: Vec<T>,
    pub se_dkl: Vec<T>,
    pub reliable: Vec<bool>,
    /// First β whose effective sample size fell below [`MIN_ESS`].
    pub unreliable_from: Option<T>,
    /// Number of samples; `None` for exact (weighted finite support) curves.
    pub n: Option<usize>,
}

impl<T: Scalar> TheoreticalCurve<T> {
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn index_of(&self, beta: T) -> Option<usize> {
        let tol = T::lit(1e-12) * T::one().max(beta.abs());
        self.betas.iter().position(|&b| (b - beta).abs() <= tol)
    }
}

/// Self-normalized importance estimates from `n ≥ 10⁴` draws of `p`.
pub fn importance_curves<T: Scalar, C: CriterionFn<T> + ?Sized>(
    f: &C,
    p: &Distribution<T>,
    grid: &[T],
    n: usize,
    seed: u64,
) -> Result<TheoreticalCurve<T>> {
    if n < 10_000 {
        return Err(Error::invalid("importance curves need at least 10^4 samples"));
    }
    let xs = p.sample(n, seed)?;
    let mut rng = rng_from_seed(seed ^ 0x1c0);
    let fv: Vec<T> = xs.iter().map(|x| f.value(x, &mut rng)).collect();
    importance_curves_from_values(&fv, grid)
}

/// [`importance_curves`] on criterion values of draws from `p`.
pub fn importance_curves_from_values<T: Scalar>(f_values: &[T], grid: &[T]) -> Result<TheoreticalCurve<T>> {
    if f_values.is_empty() {
        return Err(Error::invalid("importance curves need samples"));
    }
    let n = f_values.len();
    let log_base = vec![-T::from_usize_lossy(n).ln(); n];
    let mut c = curves(f_values, &log_base, grid, true)?;
    c.n = Some(n);
    Ok(c)
}

/// Exact curves for a finite support with probabilities `probs`.
pub fn importance_curves_weighted<T: Scalar>(f_values: &[T], probs: &[T], grid: &[T]) -> Result<TheoreticalCurve<T>> {
    crate::error::check_dim(f_values.len(), probs.len())?;
    let log_base: Vec<T> = probs.iter().map(|&p| p.ln()).collect();
    curves(f_values, &log_base, grid, false)
}

fn curves<T: Scalar>(f: &[T], log_base: &[T], grid: &[T], sampled: bool) -> Result<TheoreticalCurve<T>> {
    if grid.iter().any(|b| !b.is_finite()) {
        return Err(Error::invalid("beta grid must be finite"));
    }
    let nf = T::from_usize_lossy(f.len());
    let mut out = TheoreticalCurve {
        betas: grid.to_vec(),
        log_z: Vec::new(),
        mean_f: Vec::new(),
        dkl: Vec::new(),
        ess: Vec::new(),
        se_mean: Vec::new(),
        se_dkl: Vec::new(),
        reliable: Vec::new(),
        unreliable_from: None,
        n: None,
    };
    for &beta in grid {
        let logw: Vec<T> = f.iter().zip(log_base).map(|(&v, &l)| l + beta * v).collect();
        let log_z = log_sum_exp(&logw);
        let w: Vec<T> = logw.iter().map(|&l| (l - log_z).exp()).collect();
        let e: T = w.iter().zip(f).map(|(&w, &v)| w * v).sum();
        let d = beta * e - log_z;
        let ess = T::one() / w.iter().map(|&w| w * w).sum::<T>();
        let (se_e, se_d) = if sampled {
            // influence functions of the ratio estimator and of log Z
            let (mut se, mut sd) = (T::zero(), T::zero());
            for (&wi, &fi) in w.iter().zip(f) {
                let r = wi * nf;
                let pe = r * (fi - e);
                let pd = beta * pe - (r - T::one());
                se += pe * pe;
                sd += pd * pd;
            }
            (se.sqrt() / nf, sd.sqrt() / nf)
        } else {
            (T::zero(), T::zero())
        };
        let ok = !sampled || ess >= T::lit(MIN_ESS);
        if !ok && out.unreliable_from.is_none() {
            out.unreliable_from = Some(beta);
        }
        out.reliable.push(ok && out.unreliable_from.is_none());
        out.log_z.push(log_z);
        out.mean_f.push(e);
        out.dkl.push(d);
        out.ess.push(ess);
        out.se_mean.push(se_e);
        out.se_dkl.push(se_d);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CandidateReport<T> {
    pub position: usize,
    pub label: String,
    pub profile: GradNormProfile<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ComparisonReport<T> {
    pub candidates: Vec<CandidateReport<T>>,
    /// Candidate positions, most regular first.
    pub ranking: Vec<usize>,
}

impl<T: Scalar> ComparisonReport<T> {
    pub fn best(&self) -> &CandidateReport<T> {
        &self.candidates[self.ranking[0]]
    }
}

/// Ranks candidates by regularity score, then zero-mass fraction, then input
/// order. All candidates are profiled on the same draws of `p`.
pub fn compare_criteria<T: Scalar, C: CriterionFn<T>>(
    candidates: &[(String, C)],
    p: &Distribution<T>,
    n: usize,
    bins: usize,
    seed: u64,
) -> Result<ComparisonReport<T>> {
    if candidates.len() < 2 {
        return Err(Error::invalid("comparison needs at least two candidates"));
    }
    let reports = candidates
        .iter()
        .enumerate()
        .map(|(i, (label, f))| {
            Ok(CandidateReport {
                position: i,
                label: label.clone(),
                profile: grad_norm_profile(f, p, n, bins, None, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ranking: Vec<usize> = (0..reports.len()).collect();
    ranking.sort_by(|&a, &b| {
        let (pa, pb) = (&reports[a].profile, &reports[b].profile);
        pa.regularity_score
            .partial_cmp(&pb.regularity_score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(
                pa.zero_mass_fraction
                    .partial_cmp(&pb.zero_mass_fraction)
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
    });
    Ok(ComparisonReport {
        candidates: reports,
        ranking,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AuditPoint<T> {
    pub beta: T,
    pub empirical_mean_f: T,
    pub theoretical_mean_f: T,
    pub empirical_dkl: T,
    pub theoretical_dkl: T,
    /// `(empirical − theoretical) / max(|theoretical|, 1)`
    pub gap_mean_f: T,
    pub gap_dkl: T,
    pub reliable: bool,
    pub undershoot: bool,
    pub stagnation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AuditReport<T> {
    pub points: Vec<AuditPoint<T>>,
    pub undershoot: bool,
    pub stagnation: bool,
    /// Largest absolute gap over reliable points.
    pub max_gap: T,
}

/// Compares achieved moments of a sweep with importance predictions.
///
/// Undershoot: achieved `E_q f` below the prediction by more than
/// [`UNDERSHOOT_MARGIN`] (relative to `max(|prediction|, 1)`). Stagnation:
/// achieved KL grows by less than half the predicted growth since the
/// previous point. Only points with a reliable prediction are flagged.
pub fn audit_run<T: Scalar>(sweep: &[(T, MomentEstimates<T>)], curve: &TheoreticalCurve<T>) -> Result<AuditReport<T>> {
    let mut points: Vec<AuditPoint<T>> = Vec::with_capacity(sweep.len());
    let one = T::one();
    let margin = T::lit(UNDERSHOOT_MARGIN);
    let mut max_gap = T::zero();
    for (k, (beta, m)) in sweep.iter().enumerate() {
        let i = curve
            .index_of(*beta)
            .ok_or_else(|| Error::invalid(format!("beta {beta} missing from the theoretical curve")))?;
        let (te, td) = (curve.mean_f[i], curve.dkl[i]);
        let gap_mean_f = (m.mean_f - te) / te.abs().max(one);
        let gap_dkl = (m.dkl - td) / td.abs().max(one);
        let reliable = curve.reliable[i];
        let stagnation = reliable
            && k > 0
            && points[k - 1].reliable
            && {
                let prev = &points[k - 1];
                let grow = td - prev.theoretical_dkl;
                grow > T::zero() && m.dkl - prev.empirical_dkl < T::lit(0.5) * grow
            };
        let undershoot = reliable && gap_mean_f < -margin;
        if reliable {
            max_gap = max_gap.max(gap_mean_f.abs()).max(gap_dkl.abs());
        }
        points.push(AuditPoint {
            beta: *beta,
            empirical_mean_f: m.mean_f,
            theoretical_mean_f: te,
            empirical_dkl: m.dkl,
            theoretical_dkl: td,
            gap_mean_f,
            gap_dkl,
            reliable,
            undershoot,
            stagnation,
        });
    }
    Ok(AuditReport {
        undershoot: points.iter().any(|p| p.undershoot),
        stagnation: points.iter().any(|p| p.stagnation),
        points,
        max_gap,
    })
}

/// Mean of `f` over fresh draws of `p`, the β = 0 end of every curve.
pub fn base_mean<T: Scalar, C: CriterionFn<T> + ?Sized>(f: &C, p: &Distribution<T>, n: usize, seed: u64) -> Result<T> {
    let xs = p.sample(n, seed)?;
    let mut rng = rng_from_seed(seed ^ 0x1c0);
    Ok(mean(&xs.iter().map(|x| f.value(x, &mut rng)).collect::<Vec<_>>()))
}
