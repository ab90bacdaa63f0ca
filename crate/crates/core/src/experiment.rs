//! End-to-end runs: cross-validated training or tuning on one graph, the
//! optional CMF baseline, and the output directory layout.
//!
//! ```text
//! out/
//!   config.json          resolved configuration
//!   diagnostics.json     per-entity input statistics and parameter counts
//!   metrics.jsonl        one MetricRecord per line
//!   history.jsonl        per-epoch task losses of every fold
//!   bo_trace.jsonl       tuning steps (tune mode only)
//!   embeddings/<e>.csv   encodings of the first fold's model
//!   reconstructions/<v>.csv
//!   weights.bin          encoder/decoder tensors of the first fold's model
//!   summary.json         deterministic results for a fixed seed
//!   timing.json          wall-clock times
//!   FAILED               present only when the run aborted
//! ```

use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::autoencoder::Activation;
use crate::bench::{fixed_test_subset, generate_synthetic, make_folds_over, mean_recall_at_n, nonzero_coords, rmse_values, Coord, MetricRecord};
use crate::cmf::{cmf_reconstruct, cmf_train};
use crate::config::{load_graph_file, parse_config, CmfConfig, Mode, ModelConfig, RunConfig};
use crate::engine::{build_network, reconstruct_matrix, train, DcmfNetwork, HoldOut, ParamCount, TaskLossVector, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::{entity_diagnostics, max_abs_scale, EntityDiagnostics, RelationGraph};
use crate::hyperopt::{run_bo, BoTrace, Evaluation, HyperParams, ParamValue};
use crate::io::{atomic_write, encode_tensors, weights_to_tensors, write_matrix_csv};
use crate::numerics::{Matrix, RealMatrix};
use crate::seed::{child_seed, stream};

/// Name of the marker file written when a run aborts.
pub const FAILED_MARKER: &str = "FAILED";

/// Override model and training settings with tuned values. Unknown names are
/// rejected so a typo in a search space cannot silently do nothing.
pub fn apply_hyperparams(model: &ModelConfig, train: &TrainConfig, hp: &HyperParams) -> Result<(ModelConfig, TrainConfig)> {
    let mut m = model.clone();
    let mut t = train.clone();
    for (name, value) in &hp.0 {
        let real = || hp.real(name).ok_or_else(|| bad_value(name, value));
        let count = || {
            hp.int(name)
                .filter(|v| *v >= 1)
                .map(|v| v as usize)
                .ok_or_else(|| bad_value(name, value))
        };
        match name.as_str() {
            "learning_rate" => t.learning_rate = real()?,
            "weight_decay" => t.weight_decay = real()?,
            "convergence_threshold" => t.convergence_threshold = real()?,
            "matrix_loss_weight" => t.matrix_loss_weight = real()?,
            "batch_count" => t.batch_count = count()?,
            "max_epochs" => t.max_epochs = count()?,
            "f_k" => m.f_k = real()?,
            "k" => m.k = count()?,
            "activation" => {
                m.activation = hp.cat(name).ok_or_else(|| bad_value(name, value))?.parse::<Activation>()?;
            }
            "pretrain" => t.pretrain = parse_flag(hp.cat(name)).ok_or_else(|| bad_value(name, value))?,
            other => return Err(Error::Domain(format!("unknown hyperparameter `{other}`"))),
        }
    }
    Ok((m, t))
}

fn parse_flag(v: Option<&str>) -> Option<bool> {
    match v? {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn bad_value(name: &str, v: &ParamValue) -> Error {
    Error::Domain(format!("hyperparameter `{name}` cannot take {v:?}"))
}

/// Zero `coords` of `view` in place and return the removed values.
pub fn mask_view(g: &mut RelationGraph, view: &str, coords: &[Coord]) -> Result<Vec<f64>> {
    let v = g.view_mut(view)?;
    let mut dense = v.data.to_dense();
    let (r, c) = dense.dim();
    let mut removed = Vec::with_capacity(coords.len());
    for &(i, j) in coords {
        if i >= r || j >= c {
            return Err(Error::Domain(format!("coordinate ({i}, {j}) outside {r}x{c}")));
        }
        removed.push(std::mem::replace(&mut dense[[i, j]], 0.0));
    }
    v.data = RealMatrix::Dense(dense);
    Ok(removed)
}

/// Train one dCMF model. With `hold_out`, the returned RMSE is in the
/// network's (possibly scaled) units.
pub fn fit_dcmf(
    g: &RelationGraph,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    hold_out: Option<&HoldOut>,
) -> Result<(DcmfNetwork, Vec<TaskLossVector>, Option<f64>)> {
    let mut net = build_network(g, model.k, model.f_k, model.activation, train_cfg.seed)?;
    let out = train(&mut net, train_cfg, hold_out)?;
    Ok((net, out.history, out.validation_rmse))
}

/// CMF baseline with explicit hyperparameters.
fn fit_cmf(g: &RelationGraph, k: usize, lambda: f64, lr: f64, cfg: &CmfConfig, seed: u64) -> Result<crate::cmf::CmfFactors> {
    let tc = TrainConfig {
        learning_rate: lr,
        max_epochs: cfg.max_epochs,
        convergence_threshold: cfg.convergence_threshold,
        seed,
        ..TrainConfig::default()
    };
    Ok(cmf_train(g, k, lambda, &tc)?.factors)
}

/// Results of one fold. RMSE values are in the input data's units.
#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub test_size: usize,
    pub dcmf_rmse: Option<f64>,
    pub cmf_rmse: Option<f64>,
    /// `(N, dCMF recall, CMF recall)`.
    pub recall: Vec<(usize, Option<f64>, Option<f64>)>,
    pub best_params: Option<HyperParams>,
    /// Validation RMSE of the selected tuning step.
    pub validation_rmse: Option<f64>,
    pub cmf_params: Option<(f64, f64)>,
    pub trace: Option<BoTrace>,
    pub history: Vec<TaskLossVector>,
    pub net: DcmfNetwork,
    /// Multiply network outputs by these to get original units (per view).
    pub scale: Vec<f64>,
    pub seconds: f64,
}

/// Everything the center view's test split needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub view: String,
    pub test: Vec<Coord>,
}

fn validation_coords(g: &RelationGraph, view: &str, fraction: f64, seed: u64) -> Result<Vec<Coord>> {
    let coords = nonzero_coords(&g.view(view)?.data);
    let size = ((coords.len() as f64 * fraction).round() as usize).max(1);
    if size >= coords.len() {
        return Err(Error::Fold(format!("view `{view}` has too few entries for a validation split")));
    }
    fixed_test_subset(&coords, size, child_seed(seed, stream::TEST_SUBSET))
}

fn per_row_sets(rows: usize, coords: impl IntoIterator<Item = Coord>) -> Vec<HashSet<usize>> {
    let mut sets = vec![HashSet::new(); rows];
    for (i, j) in coords {
        sets[i].insert(j);
    }
    sets
}

/// Train (or tune, then train) on `g` with `split.test` hidden, and score.
/// `fixed` replaces tuning with known hyperparameters.
pub fn evaluate_fold(
    cfg: &RunConfig,
    g: &RelationGraph,
    split: Option<&FoldSplit>,
    fold: usize,
    fixed: Option<(&HyperParams, Option<(f64, f64)>)>,
) -> Result<FoldResult> {
    let started = Instant::now();
    let seed = child_seed(cfg.seed, fold as u64);
    let mut train_graph = g.clone();
    let truth = match split {
        Some(s) => mask_view(&mut train_graph, &s.view, &s.test)?,
        None => Vec::new(),
    };
    let (work, scale) = if cfg.scale {
        max_abs_scale(&train_graph)
    } else {
        (train_graph.clone(), vec![1.0; train_graph.views.len()])
    };
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = child_seed(seed, stream::INIT_WEIGHTS);
    let center = work
        .center()
        .map(|v| v.id.clone())
        .ok_or_else(|| Error::Config { path: "graph".into(), msg: "no center view".into() })?;
    let center_scale = scale[work.view_index(&center)?];

    let tuning = cfg.mode == Mode::Tune && fixed.is_none();
    let (best_params, validation_rmse, trace) = if tuning {
        let space = cfg.tune.search_space()?;
        let hold = HoldOut {
            view: center.clone(),
            coords: validation_coords(&work, &center, cfg.eval.validation_fraction, seed)?,
        };
        let mut bo = cfg.tune.bo.clone();
        bo.seed = child_seed(seed, stream::BO_INIT);
        let out = run_bo(&space, &bo, |hp| {
            let (m, t) = apply_hyperparams(&cfg.model, &train_cfg, hp)?;
            let (_, history, val) = fit_dcmf(&work, &m, &t, Some(&hold))?;
            Ok(Evaluation {
                losses: history.last().expect("initial loss").to_vec(),
                validation: val.map(|v| v * center_scale),
                artifact: (),
            })
        })?;
        log::info!("fold {fold}: best step {} of {}", out.best_step, out.trace.steps.len());
        let val = out.trace.steps[out.best_step].validation;
        (Some(out.best), val, Some(out.trace))
    } else {
        (fixed.map(|f| f.0.clone()), None, None)
    };

    let (model, tc) = match &best_params {
        Some(hp) => apply_hyperparams(&cfg.model, &train_cfg, hp)?,
        None => (cfg.model.clone(), train_cfg.clone()),
    };
    // the final model sees every training entry, validation ones included
    let (net, history, _) = fit_dcmf(&work, &model, &tc, None)?;

    let mut result = FoldResult {
        fold,
        test_size: truth.len(),
        dcmf_rmse: None,
        cmf_rmse: None,
        recall: Vec::new(),
        best_params,
        validation_rmse,
        cmf_params: None,
        trace,
        history,
        net,
        scale,
        seconds: 0.0,
    };

    let cmf_k = cfg.cmf.k.unwrap_or(model.k);
    let cmf_pred = if cfg.cmf.enabled {
        let params = match fixed {
            Some((_, Some(p))) => p,
            _ if tuning => tune_cmf(cfg, &work, &center, center_scale, cmf_k, seed)?,
            _ => (cfg.cmf.learning_rate, cfg.cmf.lambda),
        };
        result.cmf_params = Some(params);
        let f = fit_cmf(&work, cmf_k, params.1, params.0, &cfg.cmf, child_seed(seed, stream::CMF_INIT))?;
        Some(cmf_reconstruct(&f, &center)? * center_scale)
    } else {
        None
    };

    if let Some(s) = split {
        let pred = reconstruct_matrix(&result.net, &s.view)? * center_scale;
        result.dcmf_rmse = Some(rmse_values(&truth, &pred, &s.test)?);
        if let Some(cp) = &cmf_pred {
            result.cmf_rmse = Some(rmse_values(&truth, cp, &s.test)?);
        }
        if !cfg.eval.recall_at.is_empty() {
            let rows = pred.nrows();
            let train_sets = per_row_sets(rows, nonzero_coords(&train_graph.view(&s.view)?.data));
            let test_sets = per_row_sets(rows, s.test.iter().copied());
            for &n in &cfg.eval.recall_at {
                let d = mean_recall_at_n(&pred, &train_sets, &test_sets, n);
                let c = cmf_pred.as_ref().and_then(|cp| mean_recall_at_n(cp, &train_sets, &test_sets, n));
                result.recall.push((n, d, c));
            }
        }
    }
    result.seconds = started.elapsed().as_secs_f64();
    Ok(result)
}

/// BO over the CMF learning rate and regularization; returns `(lr, lambda)`.
fn tune_cmf(cfg: &RunConfig, work: &RelationGraph, center: &str, center_scale: f64, k: usize, seed: u64) -> Result<(f64, f64)> {
    let space = cfg.cmf.search_space()?;
    let val = validation_coords(work, center, cfg.eval.validation_fraction, seed)?;
    let mut masked = work.clone();
    let truth = mask_view(&mut masked, center, &val)?;
    let mut bo = cfg.tune.bo.clone();
    bo.seed = child_seed(seed, stream::BO_PROPOSE);
    let cmf_seed = child_seed(seed, stream::CMF_INIT);
    let out = run_bo(&space, &bo, |hp| {
        let lr = hp.real("learning_rate").unwrap_or(cfg.cmf.learning_rate);
        let lambda = hp.real("lambda").unwrap_or(cfg.cmf.lambda);
        let tc = TrainConfig {
            learning_rate: lr,
            max_epochs: cfg.cmf.max_epochs,
            convergence_threshold: cfg.cmf.convergence_threshold,
            seed: cmf_seed,
            ..TrainConfig::default()
        };
        let o = cmf_train(&masked, k, lambda, &tc)?;
        let pred = cmf_reconstruct(&o.factors, center)?;
        // truth is in scaled units like the prediction
        Ok(Evaluation {
            losses: o.history.last().expect("initial epoch").view_rmse.clone(),
            validation: Some(rmse_values(&truth, &pred, &val)? * center_scale),
            artifact: (),
        })
    })?;
    Ok((
        out.best.real("learning_rate").unwrap_or(cfg.cmf.learning_rate),
        out.best.real("lambda").unwrap_or(cfg.cmf.lambda),
    ))
}

/// Test splits for the configured cross-validation; empty when `folds == 0`.
pub fn make_splits(cfg: &RunConfig, g: &RelationGraph) -> Result<Vec<FoldSplit>> {
    if cfg.eval.folds == 0 {
        return Ok(Vec::new());
    }
    let center = g
        .center()
        .ok_or_else(|| Error::Config { path: "graph".into(), msg: "cross-validation needs a center view".into() })?;
    let mut coords = nonzero_coords(&center.data);
    if let Some(n) = cfg.eval.test_size {
        coords = fixed_test_subset(&coords, n, cfg.seed)?;
    }
    let folds = make_folds_over(center.data.shape(), &coords, cfg.eval.folds, cfg.seed)?;
    Ok(folds
        .folds
        .into_iter()
        .map(|test| FoldSplit { view: center.id.clone(), test })
        .collect())
}

/// Run every fold; folds after the first reuse its hyperparameters when
/// `tune.once` is set. Results come back in fold order.
pub fn run_cv(cfg: &RunConfig, g: &RelationGraph) -> Result<Vec<FoldResult>> {
    let splits = make_splits(cfg, g)?;
    if splits.is_empty() {
        return Ok(vec![evaluate_fold(cfg, g, None, 0, None)?]);
    }
    let once = cfg.mode == Mode::Tune && cfg.tune.once;
    let mut results = Vec::with_capacity(splits.len());
    let rest = if once {
        results.push(evaluate_fold(cfg, g, Some(&splits[0]), 0, None)?);
        1
    } else {
        0
    };
    let shared = results.first().map(|r: &FoldResult| (r.best_params.clone().unwrap_or_default(), r.cmf_params));
    let fixed = shared.as_ref().map(|(hp, c)| (hp, *c));
    let todo: Vec<usize> = (rest..splits.len()).collect();
    if cfg.eval.folds_parallel {
        let splits = &splits;
        let outs: Vec<Result<FoldResult>> = std::thread::scope(|s| {
            let handles: Vec<_> = todo
                .iter()
                .map(|&f| s.spawn(move || evaluate_fold(cfg, g, Some(&splits[f]), f, fixed)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Domain("fold worker panicked".into()))))
                .collect()
        });
        for o in outs {
            results.push(o?);
        }
    } else {
        for f in todo {
            results.push(evaluate_fold(cfg, g, Some(&splits[f]), f, fixed)?);
        }
    }
    Ok(results)
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub test_size: usize,
    pub epochs: usize,
    pub final_loss: f64,
    pub dcmf_rmse: Option<f64>,
    pub cmf_rmse: Option<f64>,
    pub validation_rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_params: Option<HyperParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cmf_params: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config: RunConfig,
    pub folds: Vec<FoldSummary>,
    pub mean_dcmf_rmse: Option<f64>,
    pub mean_cmf_rmse: Option<f64>,
    pub dcmf_params: ParamCount,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub entities: Vec<EntityDiagnostics>,
    pub dcmf_params: ParamCount,
    pub cmf_params: ParamCount,
}

/// In-memory results of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub summary: Summary,
    pub folds: Vec<FoldResult>,
    pub metrics: Vec<MetricRecord>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let xs: Vec<f64> = v.collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// The graph a config describes.
pub fn resolve_graph(cfg: &RunConfig) -> Result<RelationGraph> {
    match (&cfg.graph, &cfg.synth) {
        (Some(p), None) => load_graph_file(p),
        (None, Some(s)) => Ok(generate_synthetic(s)?.0),
        _ => Err(Error::Config { path: "graph".into(), msg: "set exactly one of `graph` or `[synth]`".into() }),
    }
}

/// Run a configuration on `g` and write the output directory.
pub fn run_on_graph(cfg: &RunConfig, g: &RelationGraph) -> Result<ReportBundle> {
    let out = &cfg.output;
    std::fs::create_dir_all(out)?;
    let _ = std::fs::remove_file(out.join(FAILED_MARKER));
    match run_inner(cfg, g, out) {
        Ok(b) => Ok(b),
        Err(e) => {
            let _ = std::fs::write(out.join(FAILED_MARKER), format!("{e}\n"));
            Err(e)
        }
    }
}

/// Parse a config file, build its graph and run it.
pub fn run_experiment(cfg: &RunConfig) -> Result<ReportBundle> {
    let g = match resolve_graph(cfg) {
        Ok(g) => g,
        Err(e) => {
            std::fs::create_dir_all(&cfg.output)?;
            let _ = std::fs::write(cfg.output.join(FAILED_MARKER), format!("{e}\n"));
            return Err(e);
        }
    };
    run_on_graph(cfg, &g)
}

/// [`parse_config`] followed by [`run_experiment`].
pub fn run_config_file(path: &Path) -> Result<ReportBundle> {
    run_experiment(&parse_config(path)?)
}

fn jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(&r)?);
        s.push('\n');
    }
    Ok(s)
}

fn run_inner(cfg: &RunConfig, g: &RelationGraph, out: &Path) -> Result<ReportBundle> {
    let started = Instant::now();
    atomic_write(&out.join("config.json"), serde_json::to_string_pretty(cfg)?.as_bytes())?;

    let folds = run_cv(cfg, g)?;
    let first = &folds[0];
    let diagnostics = Diagnostics {
        entities: g.entities.iter().map(|e| entity_diagnostics(g, &e.id)).collect::<Result<_>>()?,
        dcmf_params: first.net.param_count(),
        cmf_params: crate::engine::cmf_param_count(
            &g.entities.iter().map(|e| e.size).collect::<Vec<_>>(),
            cfg.cmf.k.unwrap_or(cfg.model.k),
        ),
    };
    atomic_write(&out.join("diagnostics.json"), serde_json::to_string_pretty(&diagnostics)?.as_bytes())?;

    let mut metrics = Vec::new();
    for f in &folds {
        let mut rec = |metric: &str, n: Option<usize>, v: Option<f64>| {
            if let Some(value) = v {
                metrics.push(MetricRecord { metric: metric.into(), n, fold: f.fold, value });
            }
        };
        rec("rmse", None, f.dcmf_rmse);
        rec("cmf_rmse", None, f.cmf_rmse);
        for (n, d, c) in &f.recall {
            rec("recall", Some(*n), *d);
            rec("cmf_recall", Some(*n), *c);
        }
    }
    atomic_write(&out.join("metrics.jsonl"), jsonl(&metrics)?.as_bytes())?;

    #[derive(Serialize)]
    struct HistoryRow<'a> {
        fold: usize,
        #[serde(flatten)]
        loss: &'a TaskLossVector,
    }
    let rows = folds.iter().flat_map(|f| f.history.iter().map(move |l| HistoryRow { fold: f.fold, loss: l }));
    atomic_write(&out.join("history.jsonl"), jsonl(rows)?.as_bytes())?;

    if cfg.mode == Mode::Tune {
        #[derive(Serialize)]
        struct TraceRow<'a> {
            fold: usize,
            #[serde(flatten)]
            step: &'a crate::hyperopt::BoStep,
        }
        let rows = folds
            .iter()
            .filter_map(|f| f.trace.as_ref().map(|t| (f.fold, t)))
            .flat_map(|(fold, t)| t.steps.iter().map(move |step| TraceRow { fold, step }));
        atomic_write(&out.join("bo_trace.jsonl"), jsonl(rows)?.as_bytes())?;
    }

    std::fs::create_dir_all(out.join("embeddings"))?;
    for e in &first.net.entities {
        write_matrix_csv(&out.join("embeddings").join(format!("{}.csv", e.entity)), &first.net.encoding(&e.entity)?)?;
    }
    std::fs::create_dir_all(out.join("reconstructions"))?;
    for (v, factor) in first.net.graph.views.iter().zip(&first.scale) {
        if cfg.eval.reconstruct.is_empty() || cfg.eval.reconstruct.contains(&v.id) {
            let r: Matrix = reconstruct_matrix(&first.net, &v.id)? * *factor;
            write_matrix_csv(&out.join("reconstructions").join(format!("{}.csv", v.id)), &r)?;
        }
    }
    let tensors: Vec<_> = first
        .net
        .entities
        .iter()
        .flat_map(|e| weights_to_tensors(&e.entity, &e.weights))
        .collect();
    atomic_write(&out.join("weights.bin"), &encode_tensors(&tensors))?;

    let summary = Summary {
        config: cfg.clone(),
        folds: folds
            .iter()
            .map(|f| FoldSummary {
                fold: f.fold,
                test_size: f.test_size,
                epochs: f.history.len() - 1,
                final_loss: f.history.last().map_or(f64::NAN, |l| l.scalar()),
                dcmf_rmse: f.dcmf_rmse,
                cmf_rmse: f.cmf_rmse,
                validation_rmse: f.validation_rmse,
                best_params: f.best_params.clone(),
                cmf_params: f.cmf_params,
            })
            .collect(),
        mean_dcmf_rmse: mean(folds.iter().filter_map(|f| f.dcmf_rmse)),
        mean_cmf_rmse: mean(folds.iter().filter_map(|f| f.cmf_rmse)),
        dcmf_params: diagnostics.dcmf_params,
    };
    atomic_write(&out.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;

    let timing = serde_json::json!({
        "total_seconds": started.elapsed().as_secs_f64(),
        "fold_seconds": folds.iter().map(|f| f.seconds).collect::<Vec<_>>(),
        "bo_step_seconds": folds
            .iter()
            .map(|f| f.trace.as_ref().map(|t| t.steps.iter().map(|s| s.wall_time).collect::<Vec<_>>()))
            .collect::<Vec<_>>(),
    });
    atomic_write(&out.join("timing.json"), serde_json::to_string_pretty(&timing)?.as_bytes())?;

    Ok(ReportBundle { summary, folds, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{SyntheticSpec, Topology};
    use crate::config::parse_config_str;
    use crate::hyperopt::ParamSpec;

    fn small_cfg(extra: &str, out: &Path) -> RunConfig {
        let text = format!(
            "output = {:?}\nseed = 3\nscale = true\n\
             [synth]\ntopology = \"recommendation\"\nsizes = [12, 16, 5, 6]\nrank = 3\nseed = 1\n\
             [model]\nk = 3\nf_k = 0.5\nactivation = \"identity\"\n\
             [train]\nlearning_rate = 0.05\nmax_epochs = 30\n{extra}",
            out.display().to_string()
        );
        parse_config_str(&text, Path::new("/tmp/x.toml")).unwrap()
    }

    #[test]
    fn cmf_tuning_ignores_output_scale() {
        // selection must not depend on the factor that maps back to input units
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg("[tune]\ninit_count = 4\nsteps = 2\ncandidates = 30\n", dir.path());
        cfg.cmf.max_epochs = 200;
        let (g, _) = crate::bench::generate_synthetic(cfg.synth.as_ref().unwrap()).unwrap();
        let (work, _) = max_abs_scale(&g);
        let a = tune_cmf(&cfg, &work, "x1", 1.0, 3, 5).unwrap();
        let b = tune_cmf(&cfg, &work, "x1", 10.0, 3, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn hyperparams_override_defaults() {
        let mut hp = HyperParams::default();
        hp.set("k", ParamValue::Int(7));
        hp.set("learning_rate", ParamValue::Real(0.01));
        hp.set("activation", ParamValue::Cat("relu".into()));
        hp.set("pretrain", ParamValue::Cat("true".into()));
        let (m, t) = apply_hyperparams(&ModelConfig::default(), &TrainConfig::default(), &hp).unwrap();
        assert_eq!((m.k, m.activation), (7, Activation::Relu));
        assert_eq!(t.learning_rate, 0.01);
        assert!(t.pretrain);
        hp.set("depth", ParamValue::Int(2));
        assert!(apply_hyperparams(&ModelConfig::default(), &TrainConfig::default(), &hp).is_err());
        let mut bad = HyperParams::default();
        bad.set("k", ParamValue::Int(0));
        assert!(apply_hyperparams(&ModelConfig::default(), &TrainConfig::default(), &bad).is_err());
    }

    #[test]
    fn masking_hides_and_returns_values() {
        let (mut g, _) = generate_synthetic(&SyntheticSpec::new(Topology::MultiView, &[3, 4, 5], 2, 0)).unwrap();
        let before = g.view("x1").unwrap().data.to_dense();
        let removed = mask_view(&mut g, "x1", &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(removed, vec![before[[0, 1]], before[[2, 3]]]);
        let after = g.view("x1").unwrap().data.to_dense();
        assert_eq!((after[[0, 1]], after[[2, 3]]), (0.0, 0.0));
        assert_eq!(after[[1, 1]], before[[1, 1]]);
        assert!(mask_view(&mut g, "x1", &[(9, 0)]).is_err());
    }

    #[test]
    fn cv_run_writes_outputs_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_cfg("[eval]\nfolds = 3\nrecall_at = [2]\n[cmf]\nenabled = true\nmax_epochs = 50\n", dir.path());
        let a = run_experiment(&cfg).unwrap();
        assert_eq!(a.folds.len(), 3);
        assert!(a.folds.iter().all(|f| f.dcmf_rmse.unwrap().is_finite() && f.cmf_rmse.is_some()));
        for name in ["config.json", "diagnostics.json", "metrics.jsonl", "history.jsonl", "weights.bin", "summary.json", "timing.json"] {
            assert!(dir.path().join(name).exists(), "{name}");
        }
        assert!(dir.path().join("embeddings/e1.csv").exists());
        assert!(dir.path().join("reconstructions/x1.csv").exists());
        assert!(!dir.path().join(FAILED_MARKER).exists());
        let s1 = std::fs::read(dir.path().join("summary.json")).unwrap();
        run_experiment(&cfg).unwrap();
        assert_eq!(s1, std::fs::read(dir.path().join("summary.json")).unwrap());
        let lines = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
        assert!(lines.lines().all(|l| serde_json::from_str::<MetricRecord>(l).is_ok()));
    }

    #[test]
    fn parallel_folds_match_sequential() {
        let dir = tempfile::tempdir().unwrap();
        let seq = run_experiment(&small_cfg("[eval]\nfolds = 2\n", dir.path())).unwrap();
        let par = run_experiment(&small_cfg("[eval]\nfolds = 2\nfolds_parallel = true\n", dir.path())).unwrap();
        let r = |b: &ReportBundle| b.folds.iter().map(|f| f.dcmf_rmse).collect::<Vec<_>>();
        assert_eq!(r(&seq), r(&par));
    }

    #[test]
    fn tune_once_shares_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg(
            "[tune]\ninit_count = 2\nsteps = 1\ncandidates = 20\nonce = true\n\
             [eval]\nfolds = 2\nvalidation_fraction = 0.2\n",
            dir.path(),
        );
        cfg.mode = Mode::Tune;
        cfg.tune.space = vec![ParamSpec::log("learning_rate", 1e-3, 1e-1)];
        cfg.tune.bo.fit.restarts = 1;
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(b.folds[0].trace.as_ref().unwrap().steps.len(), 3);
        assert!(b.folds[1].trace.is_none());
        assert_eq!(b.folds[0].best_params, b.folds[1].best_params);
        assert!(dir.path().join("bo_trace.jsonl").exists());
    }

    #[test]
    fn failure_writes_marker() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg("", dir.path());
        cfg.train.learning_rate = 1e200;
        assert!(run_experiment(&cfg).is_err());
        assert!(dir.path().join(FAILED_MARKER).exists());
        cfg.train.learning_rate = 0.05;
        run_experiment(&cfg).unwrap();
        assert!(!dir.path().join(FAILED_MARKER).exists());
    }
}
