//! Multi-task Bayesian optimization of model hyperparameters.

pub mod bo;
pub mod gp;
pub mod space;

pub use bo::{
    ei_scalarized, expected_improvement, propose_next, run_bo, BoConfig, BoOutcome, BoStep, BoTrace,
    Evaluation, SigmaSum, SurrogateKind,
};
pub use gp::{fit_kernel_hyperparams, gp_posterior, mtgp_posterior, FitConfig, MtgpPosterior, SeKernel, SurrogateState};
pub use space::{HyperParams, ParamKind, ParamSpec, ParamValue, SearchSpace};
