use super::*;
use crate::ensembles::{GaussianMixtureModel, GpOptions, NflowsBaseModel};
use crate::flows::FlowConfig;
use crate::gaussian::DiagGaussian;
use crate::numeric::STD_NORMAL_ENTROPY;
use ndarray::Array2;
use std::f64::consts::{E, LN_2};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn n1(mu: f64, sigma: f64) -> DiagGaussian {
    DiagGaussian::new(vec![mu], vec![sigma])
}

fn fixed(comps: Vec<DiagGaussian>) -> GaussianMixtureModel {
    GaussianMixtureModel::constant(1, comps)
}

#[test]
fn total_entropy_of_standard_normal() {
    let e = total_entropy_mc(&fixed(vec![n1(0.0, 1.0)]), &[0.0], 100_000, &mut rng(1)).unwrap();
    assert!((e.value - STD_NORMAL_ENTROPY).abs() < 0.01, "{e:?}");
    assert_eq!(e.n_samples, 100_000);
}

#[test]
fn total_entropy_of_separated_mixture() {
    let e = total_entropy_mc(&fixed(vec![n1(0.0, 1.0), n1(100.0, 1.0)]), &[0.0], 100_000, &mut rng(2)).unwrap();
    assert!((e.value - 2.1121).abs() < 0.02, "{e:?}");
}

#[test]
fn degenerate_mixture_matches_single() {
    let e = total_entropy_mc(&fixed(vec![n1(1.0, 2.0); 3]), &[0.0], 50_000, &mut rng(3)).unwrap();
    let truth = STD_NORMAL_ENTROPY + 2f64.ln();
    assert!((e.value - truth).abs() < 3.0 * e.stderr, "{e:?} vs {truth}");
}

#[test]
fn too_few_samples_rejected() {
    assert!(total_entropy_mc(&fixed(vec![n1(0.0, 1.0)]), &[0.0], 99, &mut rng(0)).is_err());
}

#[test]
fn aleatoric_mc_examples() {
    let e = aleatoric_entropy_mc(&fixed(vec![n1(0.0, 1.0); 2]), &[0.0], 50_000, &mut rng(4)).unwrap();
    assert!((e.value - STD_NORMAL_ENTROPY).abs() < 0.01, "{e:?}");
    let e = aleatoric_entropy_mc(&fixed(vec![n1(0.0, 1.0), n1(0.0, E * E)]), &[0.0], 50_000, &mut rng(5)).unwrap();
    assert!((e.value - 2.4189).abs() < 0.02, "{e:?}");
    assert_eq!(e.n_samples, 100_000);
}

#[test]
fn aleatoric_analytic_examples() {
    let h = aleatoric_entropy_analytic(&fixed(vec![n1(0.0, 1.0); 4]), &[0.0]).unwrap();
    assert!((h - 1.418_938_533_204_672_7).abs() < 1e-10);
    let g2 = DiagGaussian::new(vec![0.0, 0.0], vec![1.0, 2.0]);
    let h = aleatoric_entropy_analytic(&GaussianMixtureModel::constant(1, vec![g2]), &[0.0]).unwrap();
    let closed = 0.5 * ((2.0 * std::f64::consts::PI * E).powi(2) * 4.0).ln();
    assert!((h - closed).abs() < 1e-10);
    let h = aleatoric_entropy_analytic(&fixed(vec![n1(0.0, 1.0), n1(3.0, E)]), &[0.0]).unwrap();
    assert!((h - (STD_NORMAL_ENTROPY + 0.5)).abs() < 1e-10);
}

#[test]
fn identical_components_have_no_epistemic() {
    for model in [fixed(vec![n1(0.5, 1.5); 3]), fixed(vec![n1(0.5, 1.5); 3]).with_sampled_aleatoric()] {
        let cfg = SamplingConfig::for_model(&model);
        let r = epistemic_mi(&model, &[0.0], &cfg, 11).unwrap();
        assert!(r.epistemic.abs() <= 2.0 * r.epistemic_stderr().max(1e-12), "{r:?}");
        assert_eq!(r.epistemic, r.total - r.aleatoric);
    }
}

#[test]
fn separated_components_give_log_two() {
    let comps = vec![n1(-100.0, 1.0), n1(100.0, 1.0)];
    for model in [fixed(comps.clone()), fixed(comps).with_sampled_aleatoric()] {
        let cfg = SamplingConfig {
            n_total: 50_000,
            n_per_component: 25_000,
            n_base: 1000,
            force_output_space: false,
        };
        let r = epistemic_mi(&model, &[0.0], &cfg, 12).unwrap();
        assert!((r.epistemic - LN_2).abs() < 0.02, "{r:?}");
        assert_eq!(r.n_total_samples, cfg.planned_samples(&model));
    }
}

#[test]
fn epistemic_not_significantly_negative() {
    let model = GaussianMixtureModel::new(1, 1, 3, |x| {
        (0..3).map(|w| n1(x[0] * w as f64 * 0.1, 1.0 + 0.2 * w as f64)).collect()
    })
    .with_sampled_aleatoric();
    let cfg = SamplingConfig::for_model(&model);
    for i in 0..20 {
        let r = epistemic_mi(&model, &[i as f64 * 0.5], &cfg, i).unwrap();
        assert!(r.epistemic >= -2.0 * r.epistemic_stderr(), "{r:?}");
    }
}

#[test]
fn total_entropy_unbiased_over_seeds() {
    let model = fixed(vec![n1(0.0, 1.0)]);
    let (vals, ses): (Vec<f64>, Vec<f64>) = (0..200)
        .map(|s| {
            let e = total_entropy_mc(&model, &[0.0], 1000, &mut rng(1000 + s)).unwrap();
            (e.value, e.stderr)
        })
        .unzip();
    let mean = vals.iter().sum::<f64>() / 200.0;
    let pooled = (ses.iter().map(|s| s * s).sum::<f64>() / 200.0).sqrt() / (200f64).sqrt();
    assert!((mean - STD_NORMAL_ENTROPY).abs() < 3.0 * pooled, "{mean} ± {pooled}");
}

fn identity_base_model(seed: u64) -> NflowsBaseModel {
    NflowsBaseModel::new(FlowConfig::new(1, 1, 1, 10, 1), 5, 0.5, &mut rng(seed)).unwrap()
}

#[test]
fn analytic_and_mc_aleatoric_agree_at_identity() {
    let model = identity_base_model(20);
    for (i, x) in [-2.0, 0.0, 3.0].into_iter().enumerate() {
        let a = aleatoric_entropy_analytic(&model, &[x]).unwrap();
        let mc = aleatoric_entropy_mc(&model, &[x], 20_000, &mut rng(21 + i as u64)).unwrap();
        assert!((a - mc.value).abs() < 3.0 * mc.stderr, "{a} vs {mc:?}");
    }
}

#[test]
fn base_route_counts_and_agrees_with_output_route() {
    let model = identity_base_model(22);
    let cfg = SamplingConfig::for_model(&model);
    let r = epistemic_mi(&model, &[0.5], &cfg, 3).unwrap();
    assert_eq!(r.estimator, EstimatorKind::AnalyticBase);
    assert_eq!(r.n_total_samples, 1000);
    assert_eq!(r.n_total_samples, cfg.planned_samples(&model));
    let out = epistemic_mi(&model, &[0.5], &SamplingConfig { force_output_space: true, ..cfg }, 3).unwrap();
    assert_eq!(out.estimator, EstimatorKind::McOutputSpace);
    assert_eq!(out.n_total_samples, 5000);
    let (mi_base, mi_out) = epistemic_base_vs_output_check(&model, &[0.5], 20_000, &mut rng(4)).unwrap();
    assert!((mi_base - mi_out).abs() < 0.02, "{mi_base} vs {mi_out}");
}

#[test]
fn gp_route_is_closed_form() {
    let xs = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
    let ys = xs.mapv(f64::sin);
    let gp = crate::ensembles::gp_fit(&xs, &ys, &GpOptions::default()).unwrap();
    let r = epistemic_mi(&gp, &[4.5], &SamplingConfig::for_model(&gp), 0).unwrap();
    assert_eq!(r.estimator, EstimatorKind::GpClosedForm);
    assert_eq!(r.n_total_samples, 0);
    assert!(r.epistemic > 0.0);
}

#[test]
fn budget_examples() {
    assert_eq!(sample_budget(BudgetMode::Out, 50, 1000, 5), 250_000);
    assert_eq!(sample_budget(BudgetMode::Base, 50, 1000, 5), 50_000);
    assert_eq!(
        sample_budget(BudgetMode::Out, 50, 1000, 5) / sample_budget(BudgetMode::Base, 50, 1000, 5),
        5
    );
}

#[test]
fn evaluate_points_is_deterministic_and_indexed() {
    let model = fixed(vec![n1(0.0, 1.0), n1(1.0, 2.0)]).with_sampled_aleatoric();
    let xs = Array2::from_shape_fn((6, 1), |(i, _)| i as f64);
    let cfg = SamplingConfig::for_model(&model);
    let a: Vec<_> = evaluate_points(&model, &xs, &cfg, 9).into_iter().map(|r| r.unwrap()).collect();
    let b: Vec<_> = evaluate_points(&model, &xs, &cfg, 9).into_iter().map(|r| r.unwrap()).collect();
    assert_eq!(a, b);
    assert!(a.iter().enumerate().all(|(i, r)| r.x_index == i));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u.csv");
    write_reports_csv(&path, &a).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), UncertaintyReport::CSV_HEADER);
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn dim_study_columns() {
    let cfg = DimStudyConfig {
        dims: vec![4, 1, 2],
        n_samples: 1000,
        seeds: 5,
        random_scaling: false,
        base_seed: 0,
    };
    let res = mc_dimension_study(&cfg).unwrap();
    assert_eq!(res.rows.iter().map(|r| r.d).collect::<Vec<_>>(), vec![1, 2, 4]);
    for r in &res.rows {
        assert!((r.analytic_entropy - r.d as f64 * STD_NORMAL_ENTROPY).abs() < 1e-10);
    }
    let easy = mc_dimension_study(&DimStudyConfig {
        dims: vec![1],
        n_samples: 100_000,
        seeds: 3,
        random_scaling: true,
        base_seed: 1,
    })
    .unwrap();
    assert!(easy.rows[0].mc_entropy_err < 0.01);
    assert!(mc_dimension_study(&DimStudyConfig {
        dims: vec![65],
        ..DimStudyConfig::default()
    })
    .is_err());
}

#[test]
fn batched_gaussians_match_point_path() {
    use crate::ensembles::{McDropoutModel, PneModel};
    let xs = Array2::from_shape_fn((7, 1), |(i, _)| i as f64 - 3.0);
    let pne = PneModel::new(1, 1, 2, 16, 5, 0.5, &mut rng(30)).unwrap();
    let mcd = McDropoutModel::new(1, 1, 2, 16, 20, 0.5, &mut rng(31)).unwrap();
    let models: [&dyn ConditionalDensity; 2] = [&pne, &mcd];
    for model in models {
        let cfg = SamplingConfig::for_model(model);
        let batched: Vec<_> = evaluate_points(model, &xs, &cfg, 4).into_iter().map(|r| r.unwrap()).collect();
        for (i, b) in batched.iter().enumerate() {
            let p = epistemic_mi(model, &[xs[[i, 0]]], &cfg, derive_seed(4, i as u64)).unwrap();
            assert!((p.total - b.total).abs() < 1e-9 && (p.aleatoric - b.aleatoric).abs() < 1e-9, "{p:?} vs {b:?}");
        }
    }
}
