//! Linear collective matrix factorization baseline.
//!
//! Every view is approximated by `U(row) · U(col)ᵀ` with one free factor per
//! entity shared across all views, trained by full-batch gradient descent on
//! the per-view mean squared error plus `λ Σ‖U‖²_F`.

use rand::Rng;
use serde::Serialize;

use crate::engine::TrainConfig;
use crate::error::{Error, Result};
use crate::graph::{validate_graph, RelationGraph};
use crate::numerics::{rms, Matrix};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct CmfFactors {
    pub entity_ids: Vec<String>,
    pub factors: Vec<Matrix>,
    pub lambda: f64,
    /// `(view id, row entity index, col entity index)`
    views: Vec<(String, usize, usize)>,
}

impl CmfFactors {
    /// Planted factors, e.g. for tests or for warm starts.
    pub fn from_parts(g: &RelationGraph, factors: Vec<Matrix>, lambda: f64) -> Result<Self> {
        if factors.len() != g.entities.len() {
            return Err(Error::Domain(format!(
                "{} factors for {} entities",
                factors.len(),
                g.entities.len()
            )));
        }
        let k = factors.first().map(|f| f.ncols()).unwrap_or(0);
        for (f, e) in factors.iter().zip(&g.entities) {
            if f.dim() != (e.size, k) {
                return Err(Error::Shape {
                    op: "cmf factor",
                    left: f.dim(),
                    right: (e.size, k),
                });
            }
        }
        Ok(Self {
            entity_ids: g.entities.iter().map(|e| e.id.clone()).collect(),
            factors,
            lambda,
            views: view_ends(g)?,
        })
    }

    pub fn factor(&self, entity: &str) -> Result<&Matrix> {
        self.entity_ids
            .iter()
            .position(|e| e == entity)
            .map(|i| &self.factors[i])
            .ok_or_else(|| Error::Lookup {
                kind: "entity",
                id: entity.to_string(),
            })
    }

    pub fn k(&self) -> usize {
        self.factors.first().map(|f| f.ncols()).unwrap_or(0)
    }
}

fn view_ends(g: &RelationGraph) -> Result<Vec<(String, usize, usize)>> {
    g.views
        .iter()
        .map(|v| {
            Ok((
                v.id.clone(),
                g.entity_index(&v.row_entity)?,
                g.entity_index(&v.col_entity)?,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CmfEpoch {
    pub epoch: usize,
    pub objective: f64,
    pub view_rmse: Vec<f64>,
    pub factor_norm_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmfOutcome {
    pub factors: CmfFactors,
    pub history: Vec<CmfEpoch>,
}

/// Objective value and its gradient with respect to every factor.
pub fn cmf_objective(
    factors: &[Matrix],
    data: &[Matrix],
    ends: &[(usize, usize)],
    lambda: f64,
) -> (f64, Vec<Matrix>, Vec<f64>) {
    let mut grads: Vec<Matrix> = factors.iter().map(|f| f * (2.0 * lambda)).collect();
    let mut obj: f64 = lambda * factors.iter().map(|f| f.iter().map(|v| v * v).sum::<f64>()).sum::<f64>();
    let mut view_rmse = Vec::with_capacity(data.len());
    for (x, &(r, c)) in data.iter().zip(ends) {
        let resid = factors[r].dot(&factors[c].t()) - x;
        let n = resid.len().max(1) as f64;
        let mse = resid.iter().map(|v| v * v).sum::<f64>() / n;
        obj += mse;
        view_rmse.push(mse.sqrt());
        let d = resid * (2.0 / n);
        grads[r] += &d.dot(&factors[c]);
        grads[c] += &d.t().dot(&factors[r]);
    }
    (obj, grads, view_rmse)
}

pub fn cmf_train(g: &RelationGraph, k: usize, lambda: f64, cfg: &TrainConfig) -> Result<CmfOutcome> {
    validate_graph(g).into_result()?;
    cfg.validate()?;
    if !(lambda >= 0.0) {
        return Err(Error::Domain("lambda must be >= 0".into()));
    }
    let mut rng = rng_for(cfg.seed, stream::CMF_INIT);
    let mut factors: Vec<Matrix> = g
        .entities
        .iter()
        .map(|e| Matrix::from_shape_fn((e.size, k), |_| rng.random_range(-0.1..0.1)))
        .collect();
    let views = view_ends(g)?;
    let ends: Vec<(usize, usize)> = views.iter().map(|(_, r, c)| (*r, *c)).collect();
    let data: Vec<Matrix> = g.views.iter().map(|v| v.data.to_dense()).collect();

    let norm_sq = |fs: &[Matrix]| fs.iter().map(|f| f.iter().map(|v| v * v).sum::<f64>()).sum();
    let (mut obj, mut grads, rm) = cmf_objective(&factors, &data, &ends, lambda);
    let mut history = vec![CmfEpoch {
        epoch: 0,
        objective: obj,
        view_rmse: rm,
        factor_norm_sq: norm_sq(&factors),
    }];
    for epoch in 1..=cfg.max_epochs {
        for (f, gr) in factors.iter_mut().zip(&grads) {
            f.scaled_add(-cfg.learning_rate, gr);
        }
        let (next, next_grads, rm) = cmf_objective(&factors, &data, &ends, lambda);
        if !next.is_finite() {
            return Err(Error::Training {
                reason: format!("CMF objective became non-finite at epoch {epoch}"),
                history: Vec::new(),
            });
        }
        history.push(CmfEpoch {
            epoch,
            objective: next,
            view_rmse: rm,
            factor_norm_sq: norm_sq(&factors),
        });
        let improvement = obj - next;
        obj = next;
        grads = next_grads;
        if improvement < cfg.convergence_threshold {
            break;
        }
    }
    Ok(CmfOutcome {
        factors: CmfFactors {
            entity_ids: g.entities.iter().map(|e| e.id.clone()).collect(),
            factors,
            lambda,
            views,
        },
        history,
    })
}

pub fn cmf_reconstruct(f: &CmfFactors, view: &str) -> Result<Matrix> {
    let (_, r, c) = f
        .views
        .iter()
        .find(|(id, _, _)| id == view)
        .ok_or_else(|| Error::Lookup {
            kind: "view",
            id: view.to_string(),
        })?;
    Ok(f.factors[*r].dot(&f.factors[*c].t()))
}

/// Root-mean-square residual of the best rank-`k` approximation of `x`
/// (Eckart–Young: the tail singular values).
pub fn truncated_svd_residual_rms(x: &Matrix, k: usize) -> f64 {
    let svd = crate::numerics::to_nalgebra(x).svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let tail: f64 = sv.iter().skip(k).map(|s| s * s).sum();
    (tail / x.len().max(1) as f64).sqrt()
}

/// Per-view RMS residual of a set of factors.
pub fn cmf_view_rmse(f: &CmfFactors, g: &RelationGraph, view: &str) -> Result<f64> {
    let x = g.view(view)?.data.to_dense();
    Ok(rms(&(cmf_reconstruct(f, view)? - &x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::tests::recommendation_graph;
    use crate::graph::{EntityDecl, ViewDecl};
    use approx::assert_abs_diff_eq;

    fn low_rank(r: usize, c: usize, k: usize, seed: u64) -> Matrix {
        let mut rng = rng_for(seed, 99);
        let a = Matrix::from_shape_fn((r, k), |_| rng.random_range(-1.0..1.0));
        let b = Matrix::from_shape_fn((c, k), |_| rng.random_range(-1.0..1.0));
        a.dot(&b.t())
    }

    fn single(x: Matrix) -> RelationGraph {
        let (r, c) = x.dim();
        RelationGraph::new(
            vec![EntityDecl::new("a", r), EntityDecl::new("b", c)],
            vec![ViewDecl::new("x", "a", "b", x)],
        )
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let g = recommendation_graph(4, 5, 3, 2);
        let data: Vec<Matrix> = g.views.iter().map(|v| v.data.to_dense() / 1000.0).collect();
        let ends = vec![(0, 1), (0, 2), (3, 1)];
        let mut rng = rng_for(1, 0);
        let factors: Vec<Matrix> = g
            .entities
            .iter()
            .map(|e| Matrix::from_shape_fn((e.size, 2), |_| rng.random_range(-1.0..1.0)))
            .collect();
        let lambda = 0.3;
        let (_, grads, _) = cmf_objective(&factors, &data, &ends, lambda);
        let h = 1e-6;
        for (fi, f) in factors.iter().enumerate() {
            for idx in 0..f.len() {
                let (i, j) = (idx / f.ncols(), idx % f.ncols());
                let mut plus = factors.clone();
                plus[fi][[i, j]] += h;
                let mut minus = factors.clone();
                minus[fi][[i, j]] -= h;
                let fd = (cmf_objective(&plus, &data, &ends, lambda).0
                    - cmf_objective(&minus, &data, &ends, lambda).0)
                    / (2.0 * h);
                let an = grads[fi][[i, j]];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                assert!(rel < 1e-6, "factor {fi} ({i},{j}): fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn exact_low_rank_is_recovered() {
        let g = single(low_rank(20, 15, 3, 4));
        let cfg = TrainConfig {
            learning_rate: 2.0,
            max_epochs: 20_000,
            convergence_threshold: 1e-14,
            ..Default::default()
        };
        let out = cmf_train(&g, 3, 0.0, &cfg).unwrap();
        let err = cmf_view_rmse(&out.factors, &g, "x").unwrap();
        assert!(err < 1e-2, "rmse {err}");
    }

    #[test]
    fn heavy_regularization_shrinks_factors() {
        let g = single(low_rank(10, 8, 2, 5));
        let cfg = TrainConfig {
            learning_rate: 0.001,
            max_epochs: 100,
            convergence_threshold: f64::MIN_POSITIVE,
            ..Default::default()
        };
        let out = cmf_train(&g, 2, 100.0, &cfg).unwrap();
        let norms: Vec<f64> = out.history.iter().map(|h| h.factor_norm_sq).collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0]));
        assert!(*norms.last().unwrap() < 1e-3 * norms[0]);
    }

    #[test]
    fn shared_factor_serves_every_incident_view() {
        let g = recommendation_graph(4, 5, 3, 2);
        let cfg = TrainConfig { max_epochs: 2, learning_rate: 1e-6, ..Default::default() };
        let out = cmf_train(&g, 2, 0.1, &cfg).unwrap();
        let u1 = out.factors.factor("e1").unwrap();
        assert_eq!(cmf_reconstruct(&out.factors, "x1").unwrap(), u1.dot(&out.factors.factor("e2").unwrap().t()));
        assert_eq!(cmf_reconstruct(&out.factors, "x2").unwrap(), u1.dot(&out.factors.factor("e3").unwrap().t()));
    }

    #[test]
    fn reconstruct_examples() {
        let g = recommendation_graph(4, 5, 3, 2);
        let zeros: Vec<Matrix> = g.entities.iter().map(|e| Matrix::zeros((e.size, 2))).collect();
        let f = CmfFactors::from_parts(&g, zeros, 0.0).unwrap();
        let r = cmf_reconstruct(&f, "x3").unwrap();
        assert_eq!(r.dim(), (2, 5));
        assert!(r.iter().all(|v| *v == 0.0));

        let planted: Vec<Matrix> = g
            .entities
            .iter()
            .map(|e| Matrix::from_shape_fn((e.size, 2), |(i, j)| (i + 2 * j) as f64))
            .collect();
        let f = CmfFactors::from_parts(&g, planted.clone(), 0.0).unwrap();
        assert_eq!(cmf_reconstruct(&f, "x1").unwrap(), planted[0].dot(&planted[1].t()));
        assert!(cmf_reconstruct(&f, "x9").is_err());
    }

    #[test]
    fn svd_residual_of_exact_rank_is_zero() {
        let x = low_rank(12, 9, 3, 6);
        assert_abs_diff_eq!(truncated_svd_residual_rms(&x, 3), 0.0, epsilon = 1e-12);
        assert!(truncated_svd_residual_rms(&x, 2) > 1e-3);
    }
}
