use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ExperimentConfig, RunOutputs};
use crate::activelearn::{run_active_learning, ALResult, AcquisitionCriterion};
use crate::ensembles::{load_model, save_model, train_ensemble, AnyModel, ModelKind};
use crate::environments::{collect, sidecar_path, Dataset, Policy};
use crate::error::{Error, Result};
use crate::evalmetrics::{eval_kl, eval_loglik, eval_rmse, select_rows, MetricsRow};
use crate::numeric::derive_seed;
use crate::uncertainty::{
    epistemic_base_vs_output_check, evaluate_points, mc_dimension_study, sample_budget, write_reports_csv, BudgetMode,
};

// Seed streams of the single-run subcommands.
const S_TRAIN_DATA: u64 = 1;
const S_TEST_DATA: u64 = 2;
const S_INIT: u64 = 3;
const S_SELECT: u64 = 4;
const S_ESTIMATE: u64 = 5;

pub(super) fn run(sub: &str, cfg: &ExperimentConfig) -> Result<()> {
    match sub {
        "gen-data" => gen_data(cfg),
        "train" => train(cfg),
        "active-learn" => active_learn(cfg),
        "evaluate" => evaluate(cfg),
        "dim-study" => dim_study(cfg),
        "mi-check" => mi_check(cfg),
        "budget-report" => budget_report(cfg),
        other => Err(Error::Usage(format!("unknown subcommand `{other}`"))),
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

fn gen_data(cfg: &ExperimentConfig) -> Result<()> {
    let mut out = RunOutputs::create(&cfg.out)?;
    let data = collect(cfg.env, cfg.policy, cfg.n, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let path = out.path("data.csv");
    data.write_csv(&path, Some(cfg.seed))?;
    out.record(&path)?;
    out.record(&sidecar_path(&path))?;
    out.finish("gen-data", cfg, &[cfg.seed])
}

/// The `data` file if given (its environment wins), otherwise fresh rows
/// from `policy`.
fn dataset(cfg: &mut ExperimentConfig, policy: Policy, n: usize, stream: u64) -> Result<Dataset> {
    match &cfg.data {
        Some(p) => {
            let d = Dataset::read_csv(p)?;
            if d.is_empty() {
                return Err(Error::Usage(format!("{} has no rows", p.display())));
            }
            cfg.env = d.env;
            Ok(d)
        }
        None => collect(cfg.env, policy, n, &mut rng(cfg.seed, stream)),
    }
}

fn fit(cfg: &ExperimentConfig, kind: ModelKind, data: &Dataset) -> Result<(AnyModel, Vec<f64>)> {
    let spec = cfg.model_spec(kind)?;
    let mut r = rng(cfg.seed, S_INIT);
    let mut model = AnyModel::build(&spec, &mut r)?;
    let losses = train_ensemble(&mut model, data, &cfg.initial_train(), &mut r)?;
    Ok((model, losses))
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    let initial_n = cfg.initial_n.unwrap_or_else(|| cfg.env.initial_n());
    let data = dataset(&mut cfg, Policy::Random, initial_n, S_TRAIN_DATA)?;
    for &kind in &cfg.models {
        cfg.model_spec(kind)?;
    }
    let mut out = RunOutputs::create(&cfg.out)?;
    let mut loss_csv = String::from("model,step,loss\n");
    for &kind in &cfg.models {
        let (model, losses) = fit(&cfg, kind, &data)?;
        for (i, l) in losses.iter().enumerate() {
            loss_csv.push_str(&format!("{kind},{i},{l}\n"));
        }
        let path = out.path(&format!("{kind}.ckpt"));
        save_model(&model, &path)?;
        out.record_checkpoint(&path)?;
    }
    out.write("train_loss.csv", &loss_csv)?;
    out.finish("train", &cfg, &[cfg.seed])
}

fn load_checkpoint(cfg: &ExperimentConfig) -> Result<AnyModel> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("a checkpoint is required (--checkpoint)".into()))?;
    let model = load_model(path)?;
    let spec = model.spec();
    if spec.x_dim != cfg.env.x_dim() || spec.y_dim != cfg.env.y_dim() {
        return Err(Error::Config(format!(
            "{} has dimensions {}/{}, which do not fit {}",
            path.display(),
            spec.x_dim,
            spec.y_dim,
            cfg.env
        )));
    }
    Ok(model)
}

fn evaluate(cfg: &ExperimentConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    let test_n = cfg.test_n;
    let test = dataset(&mut cfg, Policy::Heuristic, test_n, S_TEST_DATA)?;
    let model = load_checkpoint(&cfg)?;
    let spec = model.spec();
    let d = model.density()?;
    let mut out = RunOutputs::create(&cfg.out)?;

    let t0 = Instant::now();
    let (kl_x, kl_y) = select_rows(&test, cfg.kl_inputs.min(test.len()), derive_seed(cfg.seed, S_SELECT))?;
    let (kl, kl_stderr) = eval_kl(d, cfg.env, &kl_x, cfg.kl_samples, derive_seed(cfg.seed, S_ESTIMATE))?;
    let rmse = eval_rmse(d, &kl_x, &kl_y, cfg.rmse_draws, derive_seed(cfg.seed, S_ESTIMATE + 1))?;
    let ll = eval_loglik(d, &test.x, &test.y)?;
    if ll.n_floored > 0 {
        log::warn!("{} test densities floored", ll.n_floored);
    }
    let row = MetricsRow {
        seed: cfg.seed,
        env: cfg.env.to_string(),
        model: spec.kind.to_string(),
        criterion: "none".into(),
        epoch: 0,
        n_train: 0,
        kl,
        kl_stderr,
        rmse,
        loglik: ll.mean,
        wall_ms: t0.elapsed().as_millis() as u64,
    };
    out.write("metrics.csv", &MetricsRow::to_csv(&[row]))?;

    let reports = evaluate_points(d, &kl_x, &cfg.sampling(&spec), derive_seed(cfg.seed, S_ESTIMATE + 2))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let path = out.path("uncertainty.csv");
    write_reports_csv(&path, &reports)?;
    out.record(&path)?;
    if let Some(p) = &cfg.checkpoint {
        out.record_checkpoint(p)?;
    }
    out.finish("evaluate", &cfg, &[cfg.seed])
}

struct Run {
    kind: ModelKind,
    criterion: AcquisitionCriterion,
    seed: u64,
}

fn active_learn(cfg: &ExperimentConfig) -> Result<()> {
    let mut runs = Vec::new();
    for &kind in &cfg.models {
        let spec = cfg.model_spec(kind)?;
        for &criterion in &cfg.criteria {
            if criterion == AcquisitionCriterion::EpistemicBase && kind != ModelKind::NflowsBase {
                return Err(Error::Config(format!("epistemic_base needs nflows_base, not {kind}")));
            }
            for &seed in &cfg.seeds {
                cfg.al_config(&spec, seed)?;
                runs.push(Run { kind, criterion, seed });
            }
        }
    }
    let mut out = RunOutputs::create(&cfg.out)?;
    let results: Vec<Result<ALResult>> = runs
        .par_iter()
        .map(|r| {
            let spec = cfg.model_spec(r.kind)?;
            let al = cfg.al_config(&spec, r.seed)?;
            log::info!("start {} {} seed {}", r.kind, r.criterion, r.seed);
            run_active_learning(cfg.env, &spec, r.criterion, &al)
        })
        .collect();

    let x_cols: Vec<String> = (0..cfg.env.x_dim()).map(|i| format!("x{i}")).collect();
    let mut acq_csv = format!("seed,env,model,criterion,epoch,rank,score,failed,{}\n", x_cols.join(","));
    let mut metrics = Vec::new();
    let mut first_err = None;
    for (r, res) in runs.iter().zip(results) {
        let res = match res {
            Ok(res) => res,
            Err(e) => {
                eprintln!("error: {} {} seed {}: {e}", r.kind, r.criterion, r.seed);
                first_err.get_or_insert(e);
                continue;
            }
        };
        metrics.extend(res.metrics.iter().cloned());
        for a in &res.acquisitions {
            for (rank, (x, score)) in a.x.rows().into_iter().zip(&a.scores).enumerate() {
                let xs: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                acq_csv.push_str(&format!(
                    "{},{},{},{},{},{rank},{score},{},{}\n",
                    r.seed,
                    cfg.env,
                    r.kind,
                    r.criterion,
                    a.epoch,
                    a.failed,
                    xs.join(",")
                ));
            }
        }
        let path = out.path(&format!("models/{}_{}_s{}.ckpt", r.kind, r.criterion, r.seed));
        let dir = path.parent().expect("checkpoint has a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_model(&res.model, &path)?;
        out.record_checkpoint(&path)?;
    }
    out.write("metrics.csv", &MetricsRow::to_csv(&metrics))?;
    out.write("acquisitions.csv", &acq_csv)?;
    out.finish("active-learn", cfg, &cfg.seeds)?;
    first_err.map_or(Ok(()), Err)
}

fn dim_study(cfg: &ExperimentConfig) -> Result<()> {
    let mut out = RunOutputs::create(&cfg.out)?;
    let result = mc_dimension_study(&cfg.dim_study())?;
    out.write("dim_study.csv", &result.to_csv())?;
    out.finish("dim-study", cfg, &[cfg.seed])
}

fn mi_check(cfg: &ExperimentConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    let mut out = RunOutputs::create(&cfg.out)?;
    let model = if let Some(ckpt) = cfg.checkpoint.clone() {
        let m = load_checkpoint(&cfg)?;
        out.record_checkpoint(&ckpt)?;
        m
    } else {
        let initial_n = cfg.initial_n.unwrap_or_else(|| cfg.env.initial_n());
        let data = dataset(&mut cfg, Policy::Random, initial_n, S_TRAIN_DATA)?;
        let (m, _) = fit(&cfg, ModelKind::NflowsBase, &data)?;
        let path = out.path("nflows_base.ckpt");
        save_model(&m, &path)?;
        out.record_checkpoint(&path)?;
        m
    };
    let d = model.density()?;
    if d.base_space().is_none() {
        return Err(Error::Config(format!("mi-check needs a base-space model, not {}", d.kind())));
    }
    let points = collect(cfg.env, Policy::Heuristic, cfg.mi_points, &mut rng(cfg.seed, S_TEST_DATA))?.x;
    let rows: Vec<Result<(f64, f64)>> = (0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let x = points.row(i).to_vec();
            epistemic_base_vs_output_check(d, &x, cfg.mi_n, &mut rng(cfg.seed, S_ESTIMATE + 100 + i as u64))
        })
        .collect();
    let mut csv = String::from("x_index,mi_base,mi_output,abs_diff,tolerance,within\n");
    for (i, r) in rows.into_iter().enumerate() {
        let (base, output) = r?;
        let diff = (base - output).abs();
        let tol = (0.1 * base.abs()).max(0.05);
        csv.push_str(&format!("{i},{base},{output},{diff},{tol},{}\n", diff < tol));
    }
    out.write("mi_check.csv", &csv)?;
    out.finish("mi-check", &cfg, &[cfg.seed])
}

fn budget_report(cfg: &ExperimentConfig) -> Result<()> {
    let mut out = RunOutputs::create(&cfg.out)?;
    let mut csv = String::from("model,n_x,n_w,m,out_samples,base_samples,ratio\n");
    for &kind in &cfg.models {
        let m = cfg.model_spec(kind)?.components;
        for &nx in &cfg.budget_nx {
            let o = sample_budget(BudgetMode::Out, nx, cfg.budget_nw, m);
            let b = sample_budget(BudgetMode::Base, nx, cfg.budget_nw, m);
            let ratio = if b == 0 { f64::NAN } else { o as f64 / b as f64 };
            csv.push_str(&format!("{kind},{nx},{},{m},{o},{b},{ratio}\n", cfg.budget_nw));
        }
    }
    out.write("budget_report.csv", &csv)?;
    out.finish("budget-report", cfg, &[cfg.seed])
}
