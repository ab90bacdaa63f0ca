//! TOML graph descriptions and run configurations.
//!
//! Graph file:
//!
//! ```toml
//! center = "x1"
//!
//! [[entities]]
//! id = "users"
//! size = 943
//!
//! [[views]]
//! id = "x1"
//! row = "users"
//! col = "items"
//! path = "ratings.csv"        # relative to the graph file
//! format = "sparse-triples"   # dense-csv | sparse-triples | movielens
//! datatype = "binary"         # real | binary
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::Activation;
use crate::bench::SyntheticSpec;
use crate::engine::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::{validate_graph, Datatype, EntityDecl, RelationGraph, ViewDecl};
use crate::hyperopt::{BoConfig, ParamSpec, SearchSpace};
use crate::io::{atomic_write, load_matrix, write_matrix_csv, MatrixFormat};

/// Overrides the default acquisition candidate count when a config leaves it unset.
pub const CANDIDATES_ENV: &str = "DCMF_CANDIDATES";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    #[serde(default)]
    pub center: Option<String>,
    pub entities: Vec<EntityEntry>,
    pub views: Vec<ViewEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityEntry {
    pub id: String,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub id: String,
    pub row: String,
    pub col: String,
    pub path: PathBuf,
    #[serde(default)]
    pub format: MatrixFormat,
    #[serde(default)]
    pub datatype: Datatype,
}

fn config_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(String, T)> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(path, e.to_string()))?;
    let parsed = toml::from_str(&text).map_err(|e| config_err(path, e.to_string()))?;
    Ok((text, parsed))
}

/// Load every view file and validate the resulting graph.
pub fn load_graph_file(path: &Path) -> Result<RelationGraph> {
    let (_, gf): (_, GraphFile) = read_toml(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let entities = gf.entities.iter().map(|e| EntityDecl::new(&e.id, e.size)).collect();
    let mut views = Vec::with_capacity(gf.views.len());
    for v in &gf.views {
        let data = load_matrix(&base.join(&v.path), v.format)?;
        views.push(ViewDecl::new(&v.id, &v.row, &v.col, data).with_datatype(v.datatype));
    }
    let mut g = RelationGraph::new(entities, views);
    g.center_view = gf.center;
    validate_graph(&g).into_result()?;
    Ok(g)
}

/// Write every view as a dense CSV plus a `graph.toml` that loads them back.
/// Returns the graph file path.
pub fn write_graph_dir(dir: &Path, g: &RelationGraph) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut views = Vec::with_capacity(g.views.len());
    for v in &g.views {
        let file = PathBuf::from(format!("{}.csv", v.id));
        write_matrix_csv(&dir.join(&file), &v.data.to_dense())?;
        views.push(ViewEntry {
            id: v.id.clone(),
            row: v.row_entity.clone(),
            col: v.col_entity.clone(),
            path: file,
            format: MatrixFormat::DenseCsv,
            datatype: v.datatype,
        });
    }
    let gf = GraphFile {
        center: g.center_view.clone(),
        entities: g.entities.iter().map(|e| EntityEntry { id: e.id.clone(), size: e.size }).collect(),
        views,
    };
    let path = dir.join("graph.toml");
    let text = toml::to_string(&gf).map_err(|e| config_err(&path, e.to_string()))?;
    atomic_write(&path, text.as_bytes())?;
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Train,
    Tune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Ml100k,
    Gda,
}

impl Preset {
    fn table(self) -> toml::Table {
        let text = match self {
            Preset::Ml100k => {
                "[model]\nk = 200\nf_k = 0.01\nactivation = \"tanh\"\n\
                 [train]\nbatch_count = 2\npretrain = true\nlearning_rate = 1e-4\nconvergence_threshold = 1e-5\n"
            }
            Preset::Gda => {
                "[model]\nk = 100\nf_k = 0.6\nactivation = \"tanh\"\n\
                 [train]\nbatch_count = 1\npretrain = false\nlearning_rate = 2e-4\nconvergence_threshold = 6e-4\n"
            }
        };
        text.parse().expect("preset tables are valid TOML")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub k: usize,
    pub f_k: f64,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 100,
            f_k: 0.5,
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    #[serde(flatten)]
    pub bo: BoConfig,
    /// Empty means [`default_dcmf_space`].
    pub space: Vec<ParamSpec>,
    /// Tune on the first fold only and reuse its best hyperparameters.
    pub once: bool,
}

impl TuneConfig {
    pub fn search_space(&self) -> Result<SearchSpace> {
        if self.space.is_empty() {
            Ok(default_dcmf_space())
        } else {
            SearchSpace::new(self.space.clone())
        }
    }
}

/// Hyperparameters searched when a config names none.
pub fn default_dcmf_space() -> SearchSpace {
    SearchSpace::new(vec![
        ParamSpec::log("learning_rate", 1e-4, 1.0),
        ParamSpec::continuous("f_k", 0.05, 0.6),
        ParamSpec::integer("k", 2, 100),
        ParamSpec::categorical("activation", &["tanh", "relu", "sigmoid", "identity"]),
        ParamSpec::integer("max_epochs", 10, 300),
        ParamSpec::integer("batch_count", 1, 4),
        ParamSpec::log("weight_decay", 1e-8, 1e-2),
        ParamSpec::categorical("pretrain", &["false", "true"]),
        ParamSpec::log("convergence_threshold", 1e-7, 1e-3),
    ])
    .expect("default space is valid")
}

/// Hyperparameters searched for the linear baseline when tuning.
pub fn default_cmf_space() -> SearchSpace {
    SearchSpace::new(vec![
        ParamSpec::log("learning_rate", 0.1, 100.0),
        ParamSpec::log("lambda", 1e-6, 1e-1),
    ])
    .expect("default space is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmfConfig {
    pub enabled: bool,
    /// Defaults to the model's K.
    pub k: Option<usize>,
    pub lambda: f64,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub convergence_threshold: f64,
    /// Empty means [`default_cmf_space`]; used in tune mode only.
    pub space: Vec<ParamSpec>,
}

impl Default for CmfConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            k: None,
            lambda: 1e-4,
            learning_rate: 10.0,
            max_epochs: 2000,
            convergence_threshold: 1e-9,
            space: Vec::new(),
        }
    }
}

impl CmfConfig {
    pub fn search_space(&self) -> Result<SearchSpace> {
        if self.space.is_empty() {
            Ok(default_cmf_space())
        } else {
            SearchSpace::new(self.space.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Cross-validation folds over the center view's non-zeros; 0 trains on everything.
    pub folds: usize,
    /// Split only a fixed random subset of this many non-zeros into folds.
    pub test_size: Option<usize>,
    /// Share of the remaining center non-zeros held out for tuning.
    pub validation_fraction: f64,
    pub folds_parallel: bool,
    /// Views whose reconstructions are exported; empty means all.
    pub reconstruct: Vec<String>,
    /// Recall@N cut-offs scored on the center view's test entries.
    pub recall_at: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            folds: 0,
            test_size: None,
            validation_fraction: 0.1,
            folds_parallel: false,
            reconstruct: Vec::new(),
            recall_at: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub preset: Option<Preset>,
    /// Graph file; relative paths resolve against the config file.
    #[serde(default)]
    pub graph: Option<PathBuf>,
    #[serde(default)]
    pub synth: Option<SyntheticSpec>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Divide every view by its largest magnitude before training.
    #[serde(default)]
    pub scale: bool,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub tune: TuneConfig,
    #[serde(default)]
    pub cmf: CmfConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Configuration for an in-memory graph; everything else at defaults.
    pub fn in_memory() -> Self {
        toml::from_str("").expect("all fields default")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::Config { path: field.to_string(), msg: msg.to_string() });
        if self.model.k == 0 {
            return bad("model.k", "must be >= 1");
        }
        if !(self.model.f_k > 0.0 && self.model.f_k < 1.0) {
            return bad("model.f_k", "must be in (0, 1)");
        }
        self.train.validate().map_err(|e| Error::Config { path: "train".into(), msg: e.to_string() })?;
        if self.eval.folds == 1 {
            return bad("eval.folds", "must be 0 or >= 2");
        }
        if !(0.0..1.0).contains(&self.eval.validation_fraction) {
            return bad("eval.validation_fraction", "must be in [0, 1)");
        }
        if self.mode == Mode::Tune {
            if self.tune.bo.init_count < 2 {
                return bad("tune.init_count", "must be >= 2");
            }
            if self.tune.bo.candidates == 0 {
                return bad("tune.candidates", "must be >= 1");
            }
            if self.eval.validation_fraction == 0.0 {
                return bad("eval.validation_fraction", "tuning needs a validation share > 0");
            }
            self.tune
                .search_space()
                .map_err(|e| Error::Config { path: "tune.space".into(), msg: e.to_string() })?;
        }
        if self.cmf.enabled && !(self.cmf.lambda >= 0.0 && self.cmf.learning_rate > 0.0 && self.cmf.max_epochs > 0) {
            return bad("cmf", "needs lambda >= 0, learning_rate > 0, max_epochs >= 1");
        }
        match (&self.graph, &self.synth) {
            (Some(_), Some(_)) => bad("graph", "set either `graph` or `[synth]`, not both"),
            (None, Some(s)) => s.validate().map_err(|e| Error::Config { path: "synth".into(), msg: e.to_string() }),
            _ => Ok(()),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parse, apply the preset under explicit settings, resolve paths and validate.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(path, e.to_string()))?;
    parse_config_str(&text, path)
}

/// As [`parse_config`] for text already in memory; `origin` anchors relative paths.
pub fn parse_config_str(text: &str, origin: &Path) -> Result<RunConfig> {
    // strict pass first: schema errors carry line numbers
    let plain: RunConfig = toml::from_str(text).map_err(|e| config_err(origin, e.to_string()))?;
    let user: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err(origin, e.to_string()))?;

    let mut cfg = match plain.preset {
        Some(p) => {
            let mut merged = p.table();
            merge(&mut merged, user.clone());
            toml::Value::Table(merged)
                .try_into::<RunConfig>()
                .map_err(|e| config_err(origin, e.to_string()))?
        }
        None => plain,
    };

    let sets_candidates = user
        .get("tune")
        .and_then(|t| t.as_table())
        .is_some_and(|t| t.contains_key("candidates"));
    if !sets_candidates {
        if let Ok(v) = std::env::var(CANDIDATES_ENV) {
            cfg.tune.bo.candidates = v
                .parse()
                .map_err(|_| config_err(origin, format!("{CANDIDATES_ENV}=`{v}` is not a count")))?;
        }
    }

    let base = origin.parent().unwrap_or(Path::new("."));
    if let Some(g) = &cfg.graph {
        if g.is_relative() {
            cfg.graph = Some(base.join(g));
        }
    }
    cfg.validate().map_err(|e| match e {
        Error::Config { path: field, msg } => config_err(origin, format!("{field}: {msg}")),
        other => other,
    })?;
    Ok(cfg)
}
