use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use rand::RngCore;

use super::*;
use crate::ensembles::{GaussianMixtureModel, ModelKind};
use crate::gaussian::DiagGaussian;

fn column(v: &[f64]) -> Mat {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
}

fn sampling() -> SamplingConfig {
    SamplingConfig {
        n_total: 2000,
        n_per_component: 1000,
        n_base: 1000,
        force_output_space: false,
    }
}

#[test]
fn criterion_names_round_trip() {
    for c in AcquisitionCriterion::ALL {
        assert_eq!(c.as_str().parse::<AcquisitionCriterion>().unwrap(), c);
    }
    assert!("bald".parse::<AcquisitionCriterion>().is_err());
}

#[test]
fn degenerate_scores_follow_index_order() {
    let single = GaussianMixtureModel::constant(1, vec![DiagGaussian::standard(1)]).with_sampled_aleatoric();
    let cands = column(&[3.0, 1.0, 2.0, 0.0, 5.0]);
    let sel = score_and_select(&single, &cands, AcquisitionCriterion::Epistemic, 3, &sampling(), 1).unwrap();
    assert_eq!(sel.indices, vec![0, 1, 2]);
    assert!(sel.scores.iter().all(|&s| s == 0.0));

    let twins = GaussianMixtureModel::constant(1, vec![DiagGaussian::standard(1); 2]).with_sampled_aleatoric();
    let sel = score_and_select(&twins, &cands, AcquisitionCriterion::Epistemic, 5, &sampling(), 1).unwrap();
    assert!(sel.scores.iter().all(|s| s.abs() < 1e-12));
}

#[test]
fn disagreement_point_is_picked_first() {
    let model = GaussianMixtureModel::new(1, 1, 2, |x| {
        let spread = if (x[0] - 1.0).abs() < 1e-9 { 100.0 } else { 0.0 };
        vec![DiagGaussian::new(vec![-spread], vec![1.0]), DiagGaussian::new(vec![spread], vec![1.0])]
    })
    .with_sampled_aleatoric();
    let cands = column(&[0.0, 0.5, 1.0, 2.0, -1.0]);
    for seed in 0..3 {
        let sel = score_and_select(&model, &cands, AcquisitionCriterion::Epistemic, 2, &sampling(), seed).unwrap();
        assert_eq!(sel.indices[0], 2);
        assert!((sel.scores[0] - std::f64::consts::LN_2).abs() < 0.05);
    }
}

/// Counts every density call.
struct Counting {
    inner: GaussianMixtureModel,
    calls: AtomicUsize,
}

impl ConditionalDensity for Counting {
    fn kind(&self) -> ModelKind {
        ModelKind::Fixed
    }
    fn x_dim(&self) -> usize {
        self.inner.x_dim()
    }
    fn y_dim(&self) -> usize {
        self.inner.y_dim()
    }
    fn n_components(&self) -> usize {
        self.inner.n_components()
    }
    fn component_log_prob(&self, w: usize, x: &[f64], ys: &Mat) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.component_log_prob(w, x, ys)
    }
    fn component_sample(&self, w: usize, x: &[f64], n: usize, rng: &mut dyn RngCore) -> Result<Mat> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.component_sample(w, x, n, rng)
    }
}

#[test]
fn random_criterion_is_reproducible_and_model_free() {
    let model = Counting {
        inner: GaussianMixtureModel::constant(1, vec![DiagGaussian::standard(1); 3]),
        calls: AtomicUsize::new(0),
    };
    let cands = Array2::from_shape_fn((100, 1), |(i, _)| i as f64);
    let a = score_and_select(&model, &cands, AcquisitionCriterion::Random, 10, &sampling(), 5).unwrap();
    let b = score_and_select(&model, &cands, AcquisitionCriterion::Random, 10, &sampling(), 5).unwrap();
    assert_eq!(a.indices, b.indices);
    let mut uniq = a.indices.clone();
    uniq.sort_unstable();
    uniq.dedup();
    assert_eq!(uniq.len(), 10);
    assert_eq!(model.calls.load(Ordering::SeqCst), 0);
    score_and_select(&model, &cands, AcquisitionCriterion::Epistemic, 10, &sampling(), 5).unwrap();
    assert!(model.calls.load(Ordering::SeqCst) > 0);
}

#[test]
fn selection_errors() {
    let model = GaussianMixtureModel::constant(1, vec![DiagGaussian::standard(1)]);
    let cands = column(&[0.0, 1.0]);
    assert!(score_and_select(&model, &cands, AcquisitionCriterion::Total, 3, &sampling(), 0).is_err());
    assert!(score_and_select(&model, &cands, AcquisitionCriterion::EpistemicBase, 1, &sampling(), 0).is_err());
}

fn tiny_config(seed: u64) -> ALConfig {
    ALConfig {
        candidates_per_epoch: 40,
        acquire_per_epoch: 5,
        epochs: 4,
        eval_every: 2,
        initial_train: TrainConfig {
            steps: 100,
            batch_size: 32,
            lr: 1e-3,
        },
        retrain: TrainConfig {
            steps: 20,
            batch_size: 32,
            lr: 1e-3,
        },
        sampling: Some(SamplingConfig {
            n_total: 200,
            n_per_component: 100,
            n_base: 200,
            force_output_space: false,
        }),
        test_n: 60,
        kl_inputs: 5,
        kl_samples: 200,
        seed,
        ..ALConfig::default()
    }
}

#[test]
fn bookkeeping_and_determinism() {
    let mut spec = ModelSpec::for_env(ModelKind::Pne, EnvKind::Hetero);
    spec.arch.hidden_units = 16;
    let cfg = tiny_config(3);
    let a = run_active_learning(EnvKind::Hetero, &spec, AcquisitionCriterion::Epistemic, &cfg).unwrap();
    assert_eq!(a.dataset.len(), 100 + 4 * 5);
    assert_eq!(a.metrics.len(), 2);
    assert_eq!(a.metrics.iter().map(|r| r.epoch).collect::<Vec<_>>(), vec![2, 4]);
    assert_eq!(a.metrics[1].n_train, 120);
    assert_eq!(a.acquisitions.len(), 4);
    let b = run_active_learning(EnvKind::Hetero, &spec, AcquisitionCriterion::Epistemic, &cfg).unwrap();
    let strip = |rows: &[MetricsRow]| rows.iter().map(|r| MetricsRow { wall_ms: 0, ..r.clone() }).collect::<Vec<_>>();
    assert_eq!(strip(&a.metrics), strip(&b.metrics));
    assert_eq!(a.dataset, b.dataset);
}

#[test]
fn every_kind_runs_a_short_loop() {
    for kind in ModelKind::ALL {
        let mut spec = ModelSpec::for_env(kind, EnvKind::Bimodal);
        spec.arch.hidden_units = spec.arch.hidden_units.min(16);
        let mut cfg = tiny_config(1);
        cfg.epochs = 2;
        cfg.eval_initial = true;
        let criterion = if kind == ModelKind::NflowsBase {
            AcquisitionCriterion::EpistemicBase
        } else {
            AcquisitionCriterion::Total
        };
        let r = run_active_learning(EnvKind::Bimodal, &spec, criterion, &cfg).unwrap();
        assert_eq!(r.metrics.len(), 2, "{kind}");
        assert!(r.metrics.iter().all(|m| m.kl.is_finite() && m.rmse >= 0.0), "{kind}");
    }
}

#[test]
fn epistemic_base_requires_base_model() {
    let spec = ModelSpec::for_env(ModelKind::Pne, EnvKind::Hetero);
    assert!(matches!(
        run_active_learning(EnvKind::Hetero, &spec, AcquisitionCriterion::EpistemicBase, &tiny_config(0)),
        Err(Error::Config(_))
    ));
}
