//! Tune dCMF hyperparameters on one cross-validation fold with the
//! multi-task surrogate, then score the tuned model on the fold's test set.
//!
//! cargo run --release --example tune_fold

use dcmf::bench::{generate_synthetic, make_cv_folds, SyntheticSpec};
use dcmf::config::{Mode, RunConfig};
use dcmf::experiment::{evaluate_fold, FoldSplit};

fn main() -> dcmf::Result<()> {
    let (g, _) = generate_synthetic(&SyntheticSpec::sparsity_preset(0.5, 5, 10, 2))?;
    let folds = make_cv_folds(&g.view("x1")?.data, 5, 2)?;
    let split = FoldSplit { view: "x1".into(), test: folds.test(0).to_vec() };

    let mut cfg = RunConfig::in_memory();
    cfg.mode = Mode::Tune;
    cfg.scale = true;
    cfg.model.k = 10;
    cfg.tune.bo.init_count = 4;
    cfg.tune.bo.steps = 6;
    let r = evaluate_fold(&cfg, &g, Some(&split), 0, None)?;
    if let Some(trace) = &r.trace {
        for (i, s) in trace.steps.iter().enumerate() {
            println!("step {i:>2}: validation RMSE {:?}", s.validation);
        }
    }
    println!("best parameters: {:?}", r.best_params);
    println!("test RMSE {:.4?} in {:.1}s", r.dcmf_rmse, r.seconds);
    Ok(())
}
