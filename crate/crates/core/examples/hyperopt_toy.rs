//! Multi-task Bayesian optimization of two one-dimensional functions whose
//! sum is the objective. Compares the multi-task surrogate with random search.
//!
//! cargo run --release --example hyperopt_toy

use dcmf::hyperopt::{run_bo, BoConfig, Evaluation, ParamSpec, SearchSpace, SurrogateKind};

fn f1(x: f64) -> f64 {
    x.sin() + (10.0 / 3.0 * x).sin()
}

fn f2(x: f64) -> f64 {
    2.0 * x.cos() + (2.0 * x).cos()
}

fn main() -> dcmf::Result<()> {
    let space = SearchSpace::new(vec![ParamSpec::continuous("x", 2.5, 7.5)])?;
    for kind in [SurrogateKind::Mtgp, SurrogateKind::Random] {
        let cfg = BoConfig { init_count: 5, steps: 20, surrogate: kind, seed: 1, ..BoConfig::default() };
        let out = run_bo(&space, &cfg, |hp| {
            let x = hp.real("x").expect("x is in the space");
            Ok(Evaluation { losses: vec![f1(x), f2(x)], validation: None, artifact: () })
        })?;
        let best = out.trace.best_so_far();
        println!("{kind:?}: best f1+f2 = {:.4} after {} evaluations", best.last().unwrap(), best.len());
    }
    Ok(())
}
