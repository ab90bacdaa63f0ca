//! Scalarized expected improvement and the Bayesian-optimization loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::gp::{fit_kernel_hyperparams, FitConfig, MtgpPosterior, SurrogateState};
use super::space::{HyperParams, SearchSpace};
use crate::error::{Error, Result};
use crate::numerics::std_normal;
use crate::seed::{child_seed, rng_for, stream};

/// How per-task uncertainties combine into one spread.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSum {
    /// `Σ_t √var_t`
    #[default]
    StdDevs,
    /// `√(Σ_t var_t)`
    Variances,
}

impl SigmaSum {
    pub fn combine(self, vars: &[f64]) -> f64 {
        match self {
            SigmaSum::StdDevs => vars.iter().map(|v| v.max(0.0).sqrt()).sum(),
            SigmaSum::Variances => vars.iter().map(|v| v.max(0.0)).sum::<f64>().sqrt(),
        }
    }
}

/// Expected improvement of a normal `(mu, sigma)` below `best`; 0 when `sigma` is 0.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    if !(sigma > 0.0) {
        return 0.0;
    }
    let gamma = (best - mu) / sigma;
    let (pdf, cdf) = std_normal(gamma);
    (sigma * (gamma * cdf + pdf)).max(0.0)
}

/// EI of the task-summed posterior at `query` against `best_scalar`.
pub fn ei_scalarized(post: &MtgpPosterior, query: &[f64], best_scalar: f64, mode: SigmaSum) -> f64 {
    let (means, vars) = post.predict(query);
    expected_improvement(means.iter().sum(), mode.combine(&vars), best_scalar)
}

/// Decoded argmax of EI over `n_candidates` uniform draws; ties keep the
/// lowest index. Returns the encoded point and its EI too.
pub fn propose_next(
    post: &MtgpPosterior,
    space: &SearchSpace,
    best_scalar: f64,
    n_candidates: usize,
    mode: SigmaSum,
    seed: u64,
) -> Result<(HyperParams, Vec<f64>, f64)> {
    if n_candidates == 0 {
        return Err(Error::Domain("n_candidates must be >= 1".into()));
    }
    let mut rng = rng_for(seed, stream::BO_PROPOSE);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..n_candidates {
        let x = space.sample_encoded(&mut rng);
        let ei = ei_scalarized(post, &x, best_scalar, mode);
        if best.as_ref().is_none_or(|(_, b)| ei > *b) {
            best = Some((x, ei));
        }
    }
    let (x, ei) = best.expect("at least one candidate");
    Ok((space.decode(&x)?, x, ei))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateKind {
    /// One GP over all task losses with a learned task kernel.
    #[default]
    Mtgp,
    /// One GP on the summed loss.
    GpOnScalar,
    /// Uniform sampling; no surrogate.
    Random,
}

impl std::str::FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mtgp" => Ok(Self::Mtgp),
            "gp-on-scalar" | "gp" => Ok(Self::GpOnScalar),
            "random" => Ok(Self::Random),
            other => Err(Error::Domain(format!("unknown surrogate `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    pub init_count: usize,
    pub steps: usize,
    pub surrogate: SurrogateKind,
    pub candidates: usize,
    pub sigma_sum: SigmaSum,
    pub fit: FitConfig,
    pub seed: u64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            init_count: 10,
            steps: 200,
            surrogate: SurrogateKind::Mtgp,
            candidates: 1000,
            sigma_sum: SigmaSum::StdDevs,
            fit: FitConfig::default(),
            seed: 0,
        }
    }
}

/// What one objective call reports.
#[derive(Debug, Clone)]
pub struct Evaluation<A> {
    pub losses: Vec<f64>,
    /// Lower is better.
    pub validation: Option<f64>,
    pub artifact: A,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoStep {
    pub step: usize,
    pub params: HyperParams,
    /// Empty for failed evaluations before the task count was known.
    pub losses: Vec<f64>,
    pub scalar: f64,
    pub validation: Option<f64>,
    /// `None` for initial-design and random steps.
    pub acquisition: Option<f64>,
    pub wall_time: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoTrace {
    pub steps: Vec<BoStep>,
}

impl BoTrace {
    pub fn push(&mut self, mut s: BoStep) {
        s.step = self.steps.len();
        self.steps.push(s);
    }

    /// Running minimum of the scalarized loss.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut acc = f64::INFINITY;
        self.steps
            .iter()
            .map(|s| {
                if s.scalar < acc {
                    acc = s.scalar;
                }
                acc
            })
            .collect()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Outcome of a tuning run. Only the best artifact is kept.
#[derive(Debug, Clone)]
pub struct BoOutcome<A> {
    pub best: HyperParams,
    pub best_step: usize,
    pub best_artifact: Option<A>,
    pub trace: BoTrace,
}

fn rank_key(s: &BoStep) -> (f64, f64) {
    let v = s.validation.filter(|v| v.is_finite()).unwrap_or(f64::INFINITY);
    (v, s.scalar)
}

// lexicographic: validation first when present, then the scalar loss
fn better(a: &BoStep, b: &BoStep, use_validation: bool) -> bool {
    if use_validation {
        let (ka, kb) = (rank_key(a), rank_key(b));
        ka.0 < kb.0 || (ka.0 == kb.0 && ka.1 < kb.1)
    } else {
        a.scalar < b.scalar
    }
}

/// Surrogate targets; failed or non-finite losses take the task's worst finite value.
fn surrogate_rows(trace: &BoTrace, tasks: usize, kind: SurrogateKind) -> Vec<Vec<f64>> {
    let width = if kind == SurrogateKind::GpOnScalar { 1 } else { tasks };
    let raw: Vec<Vec<f64>> = trace
        .steps
        .iter()
        .map(|s| match kind {
            SurrogateKind::GpOnScalar => vec![s.scalar],
            _ if s.losses.len() == tasks => s.losses.clone(),
            _ => vec![f64::INFINITY; tasks],
        })
        .collect();
    let mut worst = vec![0.0f64; width];
    for t in 0..width {
        let finite = raw.iter().map(|r| r[t]).filter(|v| v.is_finite());
        worst[t] = finite.fold(f64::NEG_INFINITY, f64::max);
        if !worst[t].is_finite() {
            worst[t] = 0.0;
        }
    }
    raw.into_iter()
        .map(|r| {
            r.into_iter()
                .enumerate()
                .map(|(t, v)| if v.is_finite() { v } else { worst[t] })
                .collect()
        })
        .collect()
}

/// Run the tuning loop: `init_count` uniform draws, then `steps` proposals.
///
/// A failing objective is recorded with infinite loss and the loop goes on.
/// The best step is the lowest validation score when the objective reports
/// one, else the lowest scalarized loss.
pub fn run_bo<A, F>(space: &SearchSpace, cfg: &BoConfig, mut objective: F) -> Result<BoOutcome<A>>
where
    F: FnMut(&HyperParams) -> Result<Evaluation<A>>,
{
    space.validate()?;
    if cfg.init_count < 2 {
        return Err(Error::Domain("at least 2 initial points are required".into()));
    }
    if cfg.candidates == 0 {
        return Err(Error::Domain("candidates must be >= 1".into()));
    }
    let mut trace = BoTrace::default();
    let mut encoded: Vec<Vec<f64>> = Vec::new();
    let mut tasks: Option<usize> = None;
    let mut best_artifact: Option<A> = None;
    let mut best_idx: Option<usize> = None;
    let mut kernel: Option<SurrogateState> = None;
    let mut init_rng = rng_for(cfg.seed, stream::BO_INIT);
    let total = cfg.init_count + cfg.steps;

    for step in 0..total {
        let started = Instant::now();
        let proposal = if step < cfg.init_count || cfg.surrogate == SurrogateKind::Random {
            let x = if step < cfg.init_count {
                space.sample_encoded(&mut init_rng)
            } else {
                space.sample_encoded(&mut rng_for(child_seed(cfg.seed, step as u64), stream::BO_PROPOSE))
            };
            (space.decode(&x)?, x, None)
        } else {
            let t = tasks.unwrap_or(1);
            let rows = surrogate_rows(&trace, t, cfg.surrogate);
            let width = rows[0].len();
            let mut state = match kernel.take() {
                Some(mut k) if k.tasks() == width => {
                    k.xs.clear();
                    k.ys.clear();
                    k
                }
                _ => SurrogateState::new(space.encoded_dim(), width),
            };
            for (x, y) in encoded.iter().zip(rows) {
                state.push(x.clone(), y)?;
            }
            state.standardize();
            let fit_cfg = FitConfig {
                seed: child_seed(cfg.seed, step as u64),
                ..cfg.fit.clone()
            };
            let state = fit_kernel_hyperparams(&state, &fit_cfg);
            let post = state.factorize()?;
            let best_scalar = trace
                .steps
                .iter()
                .map(|s| s.scalar)
                .filter(|v| v.is_finite())
                .fold(f64::INFINITY, f64::min);
            let best_scalar = if best_scalar.is_finite() { best_scalar } else { state.shift.iter().sum() };
            let (hp, x, ei) = propose_next(
                &post,
                space,
                best_scalar,
                cfg.candidates,
                cfg.sigma_sum,
                child_seed(cfg.seed, step as u64),
            )?;
            kernel = Some(state);
            (hp, x, Some(ei))
        };
        let (params, x, acquisition) = proposal;

        let (losses, validation, artifact, error) = match objective(&params) {
            Ok(ev) => {
                if *tasks.get_or_insert(ev.losses.len()) != ev.losses.len() {
                    return Err(Error::Surrogate(format!(
                        "objective returned {} losses, expected {}",
                        ev.losses.len(),
                        tasks.unwrap_or(0)
                    )));
                }
                (ev.losses, ev.validation, Some(ev.artifact), None)
            }
            Err(e) => {
                log::warn!("objective failed at step {step}: {e}");
                let l = tasks.map(|t| vec![f64::INFINITY; t]).unwrap_or_default();
                (l, None, None, Some(e.to_string()))
            }
        };
        let scalar = if losses.is_empty() || error.is_some() {
            f64::INFINITY
        } else {
            let s: f64 = losses.iter().sum();
            if s.is_nan() { f64::INFINITY } else { s }
        };
        trace.push(BoStep {
            step,
            params,
            losses,
            scalar,
            validation: validation.filter(|v| !v.is_nan()),
            acquisition,
            wall_time: started.elapsed().as_secs_f64(),
            error,
        });
        encoded.push(x);

        let use_validation = trace.steps.iter().any(|s| s.validation.is_some());
        let cur = trace.steps.last().expect("just pushed");
        let wins = artifact.is_some()
            && best_idx.is_none_or(|b| better(cur, &trace.steps[b], use_validation));
        if wins {
            best_idx = Some(step);
            best_artifact = artifact;
        }
    }

    let best_step = best_idx
        .or_else(|| {
            (0..trace.steps.len()).min_by(|a, b| trace.steps[*a].scalar.total_cmp(&trace.steps[*b].scalar))
        })
        .expect("at least two steps ran");
    Ok(BoOutcome {
        best: trace.steps[best_step].params.clone(),
        best_step,
        best_artifact,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hyperopt::space::ParamSpec;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    // inverse-cdf sampling by bisection on Φ
    fn normal(rng: &mut impl Rng) -> f64 {
        let u: f64 = rng.random_range(1e-12..1.0 - 1e-12);
        let (mut lo, mut hi) = (-12.0, 12.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if std_normal(mid).1 < u {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    fn toy(x: f64) -> (f64, f64) {
        ((x).sin() + (10.0 / 3.0 * x).sin(), 2.0 * x.cos() + (2.0 * x).cos())
    }

    fn toy_space() -> SearchSpace {
        SearchSpace::new(vec![ParamSpec::continuous("x", 2.5, 7.5)]).unwrap()
    }

    fn toy_objective(hp: &HyperParams) -> Result<Evaluation<()>> {
        let (a, b) = toy(hp.real("x").unwrap());
        Ok(Evaluation { losses: vec![a, b], validation: None, artifact: () })
    }

    #[test]
    fn ei_closed_forms() {
        assert_eq!(expected_improvement(1.0, 0.0, 5.0), 0.0);
        assert_abs_diff_eq!(expected_improvement(2.0, 1.0, 2.0), 0.398_942_280_401_432_7, epsilon = 1e-12);
        assert_abs_diff_eq!(expected_improvement(2.0, 3.0, 2.0), 3.0 * 0.398_942_280_401_432_7, epsilon = 1e-12);
        assert_eq!(SigmaSum::StdDevs.combine(&[4.0, 9.0]), 5.0);
        assert_abs_diff_eq!(SigmaSum::Variances.combine(&[4.0, 9.0]), 13f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn ei_agrees_with_monte_carlo() {
        let mut rng = rng_for(3, 0);
        let (mu, sigma, best) = (0.4, 1.7, 1.1);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let v = (best - (mu + sigma * normal(&mut rng))).max(0.0);
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        let ei = expected_improvement(mu, sigma, best);
        assert!((ei - mean).abs() < 3.0 * se, "ei {ei} mc {mean} se {se}");
    }

    #[test]
    fn one_candidate_is_returned_as_is() {
        let space = toy_space();
        let mut s = SurrogateState::new(1, 2);
        s.push(vec![0.2], vec![1.0, 0.0]).unwrap();
        s.push(vec![0.7], vec![-1.0, 0.5]).unwrap();
        let post = s.factorize().unwrap();
        let (hp, x, _) = propose_next(&post, &space, 0.0, 1, SigmaSum::StdDevs, 17).unwrap();
        let expect = space.sample_encoded(&mut rng_for(17, stream::BO_PROPOSE));
        assert_eq!(x, expect);
        assert_eq!(hp, space.decode(&expect).unwrap());
        assert!(propose_next(&post, &space, 0.0, 0, SigmaSum::StdDevs, 17).is_err());
    }

    #[test]
    fn proposal_matches_grid_argmax() {
        let space = toy_space();
        let mut s = SurrogateState::new(1, 2);
        for x in [0.1, 0.35, 0.6, 0.9] {
            let (a, b) = toy(2.5 + 5.0 * x);
            s.push(vec![x], vec![a, b]).unwrap();
        }
        s.standardize();
        let post = s.factorize().unwrap();
        let best = s.ys.iter().map(|y| y[0] + y[1]).fold(f64::INFINITY, f64::min);
        let (_, x, ei) = propose_next(&post, &space, best, 4000, SigmaSum::StdDevs, 1).unwrap();
        let grid_max = (0..=10_000)
            .map(|i| ei_scalarized(&post, &[i as f64 / 10_000.0], best, SigmaSum::StdDevs))
            .fold(0.0, f64::max);
        assert!(ei <= grid_max * (1.0 + 1e-9) + 1e-12);
        assert!(ei >= 0.97 * grid_max, "candidate ei {ei} vs grid {grid_max} at {x:?}");
    }

    #[test]
    fn zero_steps_returns_best_initial_point() {
        let cfg = BoConfig { init_count: 6, steps: 0, ..Default::default() };
        let out = run_bo(&toy_space(), &cfg, toy_objective).unwrap();
        assert_eq!(out.trace.steps.len(), 6);
        let min = out.trace.steps.iter().map(|s| s.scalar).fold(f64::INFINITY, f64::min);
        assert_eq!(out.trace.steps[out.best_step].scalar, min);
    }

    #[test]
    fn toy_two_task_reaches_grid_minimum() {
        let grid_min = (0..10_000)
            .map(|i| {
                let (a, b) = toy(2.5 + 5.0 * i as f64 / 9_999.0);
                a + b
            })
            .fold(f64::INFINITY, f64::min);
        let cfg = BoConfig { init_count: 5, steps: 20, candidates: 500, seed: 4, ..Default::default() };
        let out = run_bo(&toy_space(), &cfg, toy_objective).unwrap();
        let best = out.trace.steps[out.best_step].scalar;
        assert!(best - grid_min < 0.1, "best {best} vs grid {grid_min}");
    }

    #[test]
    fn failures_are_recorded_and_loop_continues() {
        let mut calls = 0;
        let cfg = BoConfig { init_count: 3, steps: 3, candidates: 50, ..Default::default() };
        let out = run_bo(&toy_space(), &cfg, |hp| {
            calls += 1;
            if calls % 2 == 0 {
                Err(Error::Divergence { entity: "e1".into() })
            } else {
                toy_objective(hp)
            }
        })
        .unwrap();
        assert_eq!(out.trace.steps.len(), 6);
        let failed: Vec<_> = out.trace.steps.iter().filter(|s| s.error.is_some()).collect();
        assert_eq!(failed.len(), 3);
        assert!(failed.iter().all(|s| s.scalar == f64::INFINITY));
        assert!(out.trace.steps[out.best_step].error.is_none());
    }

    #[test]
    fn validation_score_decides_best() {
        let cfg = BoConfig { init_count: 4, steps: 0, ..Default::default() };
        let out = run_bo(&toy_space(), &cfg, |hp| {
            let x = hp.real("x").unwrap();
            Ok(Evaluation { losses: vec![x], validation: Some(-x), artifact: x })
        })
        .unwrap();
        let top = out.trace.steps.iter().map(|s| s.scalar).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(out.trace.steps[out.best_step].scalar, top);
        assert_eq!(out.best_artifact, Some(top));
    }

    #[test]
    fn jsonl_has_one_record_per_step() {
        let cfg = BoConfig { init_count: 2, steps: 2, candidates: 20, ..Default::default() };
        let out = run_bo(&toy_space(), &cfg, toy_objective).unwrap();
        let text = out.trace.to_jsonl().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        let v: serde_json::Value = serde_json::from_str(lines[3]).unwrap();
        assert_eq!(v["step"], 3);
        assert!(v["acquisition"].is_number());
        assert_eq!(v["losses"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn rejects_bad_budgets() {
        let cfg = BoConfig { init_count: 1, ..Default::default() };
        assert!(run_bo(&toy_space(), &cfg, toy_objective).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ei_is_never_negative(mu in -50.0f64..50.0, sigma in 0.0f64..20.0, best in -50.0f64..50.0) {
            prop_assert!(expected_improvement(mu, sigma, best) >= 0.0);
        }

        #[test]
        fn trace_is_deterministic_and_best_monotone(seed in 0u64..1000, kind in 0usize..3) {
            let surrogate = [SurrogateKind::Mtgp, SurrogateKind::GpOnScalar, SurrogateKind::Random][kind];
            let cfg = BoConfig { init_count: 3, steps: 4, candidates: 30, surrogate, seed, ..Default::default() };
            let a = run_bo(&toy_space(), &cfg, toy_objective).unwrap();
            let b = run_bo(&toy_space(), &cfg, toy_objective).unwrap();
            let strip = |t: &BoTrace| t.steps.iter().map(|s| (s.params.clone(), s.scalar, s.acquisition)).collect::<Vec<_>>();
            prop_assert_eq!(strip(&a.trace), strip(&b.trace));
            let best = a.trace.best_so_far();
            prop_assert!(best.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}
