//! Command-line front end. Every failure leaves a `FAILED` marker in the
//! output directory, and the exit status is nonzero exactly then.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dcmf::bench::{generate_synthetic, nonzero_coords, rmse_values, mean_recall_at_n, MetricRecord, SyntheticFactors, SyntheticSpec};
use dcmf::config::{parse_config, write_graph_dir, Mode, RunConfig};
use dcmf::experiment::{run_experiment, FAILED_MARKER};
use dcmf::hyperopt::SurrogateKind;
use dcmf::io::{atomic_write, load_matrix, write_matrix_csv, MatrixFormat};
use dcmf::{Error, Result};

#[derive(Parser)]
#[command(name = "dcmf", version, about = "Deep collective matrix factorization")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train with fixed hyperparameters and complete the matrices.
    Run(RunArgs),
    /// Tune hyperparameters with Bayesian optimization, then train.
    Tune(TuneArgs),
    /// Generate a synthetic benchmark dataset.
    Synth(SynthArgs),
    /// Score a prediction file against a truth file.
    Eval(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    /// Run cross-validation folds on separate threads.
    #[arg(long)]
    folds_parallel: bool,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Initial random evaluations.
    #[arg(long)]
    init: Option<usize>,
    /// Guided evaluations after the initial ones.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    surrogate: Option<SurrogateKind>,
    /// Tune on the first fold only.
    #[arg(long)]
    once: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetKind {
    Sparsity,
    Size,
    Shape,
    Augmented,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    preset: PresetKind,
    /// Sparsity level, size multiplier or imbalance ratio, by preset.
    #[arg(long, default_value_t = 0.0)]
    level: f64,
    /// Divide every preset size by this.
    #[arg(long, default_value_t = 1)]
    scale: usize,
    #[arg(long, default_value_t = 20)]
    rank: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synth")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Format of the truth file; predictions are always dense CSV.
    #[arg(long, value_enum, default_value = "sparse-triples")]
    format: FormatArg,
    /// Training matrix whose non-zeros are excluded from rankings.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Comma-separated Recall@N cut-offs.
    #[arg(long, value_delimiter = ',')]
    recall_at: Vec<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    DenseCsv,
    SparseTriples,
    Movielens,
}

impl From<FormatArg> for MatrixFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::DenseCsv => MatrixFormat::DenseCsv,
            FormatArg::SparseTriples => MatrixFormat::SparseTriples,
            FormatArg::Movielens => MatrixFormat::Movielens,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (out, result) = match cli.cmd {
        Command::Run(a) => run(&a, None),
        Command::Tune(a) => run(&a.run, Some(&a)),
        Command::Synth(a) => (a.out.clone(), synth(&a)),
        Command::Eval(a) => (a.out.clone(), eval(&a)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let _ = std::fs::create_dir_all(&out);
            let _ = std::fs::write(out.join(FAILED_MARKER), format!("{e}\n"));
            ExitCode::FAILURE
        }
    }
}

fn run(a: &RunArgs, tune: Option<&TuneArgs>) -> (PathBuf, Result<()>) {
    let cfg = match parse_config(&a.config) {
        Ok(c) => c,
        Err(e) => return (a.output.clone().unwrap_or_else(|| PathBuf::from("out")), Err(e)),
    };
    let cfg = apply_overrides(cfg, a, tune);
    let out = cfg.output.clone();
    let result = cfg.validate().and_then(|_| {
        let b = run_experiment(&cfg)?;
        for f in &b.summary.folds {
            match f.dcmf_rmse {
                Some(r) => log::info!("fold {}: rmse {r:.6}", f.fold),
                None => log::info!("fold {}: trained, final loss {:.6}", f.fold, f.final_loss),
            }
        }
        log::info!("outputs in {}", out.display());
        Ok(())
    });
    (out, result)
}

fn apply_overrides(mut cfg: RunConfig, a: &RunArgs, tune: Option<&TuneArgs>) -> RunConfig {
    if let Some(o) = &a.output {
        cfg.output = o.clone();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(f) = a.folds {
        cfg.eval.folds = f;
    }
    cfg.eval.folds_parallel |= a.folds_parallel;
    match tune {
        None => cfg.mode = Mode::Train,
        Some(t) => {
            cfg.mode = Mode::Tune;
            if let Some(m) = t.init {
                cfg.tune.bo.init_count = m;
            }
            if let Some(n) = t.steps {
                cfg.tune.bo.steps = n;
            }
            if let Some(s) = t.surrogate {
                cfg.tune.bo.surrogate = s;
            }
            cfg.tune.once |= t.once;
        }
    }
    cfg
}

fn synth(a: &SynthArgs) -> Result<()> {
    let spec = match a.preset {
        PresetKind::Sparsity => SyntheticSpec::sparsity_preset(a.level, a.scale, a.rank, a.seed),
        PresetKind::Size => SyntheticSpec::size_preset(a.level.max(1.0) as usize, a.scale, a.rank, a.seed),
        PresetKind::Shape => SyntheticSpec::shape_preset(a.level, a.scale, a.rank, a.seed),
        PresetKind::Augmented => SyntheticSpec::augmented_preset(a.scale, a.rank, a.seed),
    };
    let (g, factors) = generate_synthetic(&spec)?;
    let graph = write_graph_dir(&a.out, &g)?;
    let _ = std::fs::remove_file(a.out.join(FAILED_MARKER));
    write_factors(&a.out.join("factors"), &factors)?;
    atomic_write(&a.out.join("spec.json"), serde_json::to_string_pretty(&spec)?.as_bytes())?;
    log::info!("wrote {}", graph.display());
    Ok(())
}

fn write_factors(dir: &Path, f: &SyntheticFactors) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, m) in f.factors.iter().enumerate() {
        write_matrix_csv(&dir.join(format!("{}.csv", SyntheticFactors::entity_id(i))), m)?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let truth = load_matrix(&a.truth, a.format.into())?;
    let pred = load_matrix(&a.pred, MatrixFormat::DenseCsv)?.to_dense();
    if truth.shape() != pred.dim() {
        return Err(Error::Shape { op: "eval", left: truth.shape(), right: pred.dim() });
    }
    let test = nonzero_coords(&truth);
    let dense = truth.to_dense();
    let values: Vec<f64> = test.iter().map(|c| dense[[c.0, c.1]]).collect();
    let mut records = vec![MetricRecord { metric: "rmse".into(), n: None, fold: 0, value: rmse_values(&values, &pred, &test)? }];
    if !a.recall_at.is_empty() {
        let rows = pred.nrows();
        let sets = |coords: Vec<(usize, usize)>| {
            let mut s = vec![std::collections::HashSet::new(); rows];
            for (i, j) in coords {
                s[i].insert(j);
            }
            s
        };
        let train = match &a.train {
            Some(p) => sets(nonzero_coords(&load_matrix(p, a.format.into())?)),
            None => sets(Vec::new()),
        };
        let test_sets = sets(test.clone());
        for &n in &a.recall_at {
            if let Some(value) = mean_recall_at_n(&pred, &train, &test_sets, n) {
                records.push(MetricRecord { metric: "recall".into(), n: Some(n), fold: 0, value });
            }
        }
    }
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    std::fs::create_dir_all(&a.out)?;
    let _ = std::fs::remove_file(a.out.join(FAILED_MARKER));
    atomic_write(&a.out.join("metrics.jsonl"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}
