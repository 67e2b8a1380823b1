mod common;

use boltzmann_core::beta::{estimate_moments, pareto_sweep, solve, SolveStatus, SolverConfig, Target};
use boltzmann_core::criteria::{adversarial_criterion, lift_to_latent, Criterion};
use boltzmann_core::dist::{Distribution, LatentDecoder};
use boltzmann_core::flows::{FlowModel, FlowSpec};
use boltzmann_core::oracles::TiltOracle;
use boltzmann_core::vi::{fit_q, TuneConfig};
use common::{num, oracles};

fn tune() -> TuneConfig<f64> {
    TuneConfig {
        learning_rate: 2e-2,
        steps: 600,
        early_stop: false,
        average_window: 150,
        ..TuneConfig::default()
    }
}

#[test]
fn divergence_target_on_one_dimensional_tilt() {
    let fx = oracles();
    let p = Distribution::<f64>::standard_normal(1);
    let f = Criterion::linear(vec![1.0]);
    let init = FlowModel::init_identity(1, &FlowSpec::affine_only(), 0).unwrap();
    let cfg = SolverConfig { moment_samples: 20_000, warm_steps: 300, ..SolverConfig::default() };
    let s = solve(&p, &f, &Target::divergence(4.61), init, &tune(), &cfg).unwrap();
    assert_eq!(s.status, SolveStatus::Converged);
    let expected = num(&fx, "gaussian_tilt.beta");
    assert!((s.state.beta - expected).abs() / expected < 0.03, "beta {}", s.state.beta);
    let oracle = TiltOracle::new(vec![0.0], vec![1.0], vec![1.0]).unwrap().at(s.state.beta);
    let (kl, _) = s.model.kl_to(&Distribution::DiagGaussian(oracle.q), 20_000, 2).unwrap();
    assert!(kl < 1e-2, "kl {kl}");
}

#[test]
fn expectation_target_lands_on_shift() {
    let p = Distribution::<f64>::standard_normal(1);
    let f = Criterion::linear(vec![1.0]);
    let init = FlowModel::init_identity(1, &FlowSpec::affine_only(), 0).unwrap();
    let cfg = SolverConfig { moment_samples: 20_000, warm_steps: 300, ..SolverConfig::default() };
    let s = solve(&p, &f, &Target::expectation(1.5), init, &tune(), &cfg).unwrap();
    assert_eq!(s.status, SolveStatus::Converged);
    assert!((s.state.beta - 1.5).abs() < 0.05, "beta {}", s.state.beta);
}

#[test]
fn adversarial_tilt_interpolates_geometrically() {
    let fx = oracles();
    let p = Distribution::<f64>::standard_normal(1);
    let data = Distribution::gaussian(vec![num(&fx, "adversarial.data_mean")], vec![1.0]).unwrap();
    let f = adversarial_criterion(p.clone(), data).unwrap();
    let init = FlowModel::init_identity(1, &FlowSpec::affine_only(), 0).unwrap();
    let q = fit_q(&p, &f, num(&fx, "adversarial.beta"), init, &tune()).unwrap();
    let xs = q.sample(20_000, 4).unwrap();
    let m: f64 = xs.iter().map(|x| x[0]).sum::<f64>() / xs.len() as f64;
    assert!((m - num(&fx, "adversarial.mean")).abs() < 0.03, "mean {m}");
}

#[test]
fn latent_lifting_tilts_the_prior() {
    // x = A z with A = [2], f(x) = x, so f̂(z) = 2z and q_β(z) = N(2β, 1)
    let dec = LatentDecoder::new(vec![vec![2.0]], 0.0).unwrap();
    let lifted = lift_to_latent(Criterion::linear(vec![1.0]), dec, 4).unwrap();
    let prior = lifted.prior();
    let init = FlowModel::init_identity(1, &FlowSpec::affine_only(), 0).unwrap();
    let q = fit_q(&prior, &lifted, 0.5, init, &tune()).unwrap();
    let m = estimate_moments(&q, &lifted, 20_000, 3).unwrap();
    assert!((m.mean_f - 2.0).abs() < 4.0 * m.se_mean + 0.02, "{m:?}");
    assert!((m.dkl - 0.5).abs() < 4.0 * m.se_dkl + 0.02, "{m:?}");
}

#[test]
fn sweep_is_monotone_on_tilt() {
    let p = Distribution::<f64>::standard_normal(1);
    let f = Criterion::linear(vec![1.0]);
    let init = FlowModel::init_identity(1, &FlowSpec::affine_only(), 0).unwrap();
    let cfg = SolverConfig { moment_samples: 20_000, warm_steps: 300, ..SolverConfig::default() };
    let pts = pareto_sweep(&p, &f, &[0.0, 0.5, 1.0, 2.0], init, &tune(), &cfg).unwrap();
    for w in pts.windows(2) {
        let (a, b) = (&w[0].moments, &w[1].moments);
        assert!(b.mean_f + 3.0 * b.se_mean >= a.mean_f - 3.0 * a.se_mean);
        assert!(b.dkl + 3.0 * b.se_dkl >= a.dkl - 3.0 * a.se_dkl);
    }
    assert!((pts[3].moments.mean_f - 2.0).abs() < 0.05);
}

#[test]
fn single_precision_pipeline_runs() {
    let p = Distribution::<f32>::standard_normal(1);
    let f = Criterion::linear(vec![1.0f32]);
    let init = FlowModel::init_identity(1, &FlowSpec::affine_only(), 0).unwrap();
    let cfg = TuneConfig::<f32> {
        learning_rate: 2e-2,
        steps: 600,
        early_stop: false,
        average_window: 150,
        ..TuneConfig::default()
    };
    let q = fit_q(&p, &f, 1.0, init, &cfg).unwrap();
    let m = estimate_moments(&q, &f, 10_000, 1).unwrap();
    assert!((m.mean_f - 1.0).abs() < 0.05, "{m:?}");
}
