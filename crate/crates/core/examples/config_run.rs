//! Drive a complete cross-validated run from a TOML configuration, the
//! same way the command-line tool does.
//!
//! cargo run --release --example config_run

use std::path::Path;

use dcmf::config::parse_config_str;
use dcmf::experiment::run_experiment;

const CONFIG: &str = r#"
seed = 11
output = "target/config_run"
scale = true

[synth]
topology = "recommendation"
sizes = [60, 80, 12, 16]
rank = 8
seed = 11
sparsity = [["x1", 0.3]]

[model]
k = 8
f_k = 0.3
activation = "tanh"

[train]
learning_rate = 0.01
max_epochs = 150
convergence_threshold = 1e-7

[cmf]
enabled = true

[eval]
folds = 3
recall_at = [5, 10]
"#;

fn main() -> dcmf::Result<()> {
    let cfg = parse_config_str(CONFIG, Path::new("inline.toml"))?;
    let report = run_experiment(&cfg)?;
    for f in &report.summary.folds {
        println!("fold {}: dCMF {:.4?} CMF {:.4?}", f.fold, f.dcmf_rmse, f.cmf_rmse);
    }
    println!("outputs written to {}", cfg.output.display());
    Ok(())
}
