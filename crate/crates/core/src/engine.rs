//! The collective network: one autoencoder per entity, trained jointly on
//! the sum of autoencoder reconstruction losses and matrix reconstruction
//! losses. A view is reconstructed as the product of the bottleneck
//! encodings of its row and column entities.

use ndarray::Axis;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    accumulate, backward_from, forward_cached, init_weights, plan_architecture, pretrain,
    rms_loss_and_grad, sgd_step, Activation, Activations, AeGradients, AeWeights,
    ArchitecturePlan, PretrainConfig,
};
use crate::error::{Error, Result};
use crate::graph::{
    build_concatenated_matrix, validate_graph, ConcatenatedMatrix, RelationGraph,
};
use crate::numerics::{least_squares_solve, rms, Matrix, RealMatrix};
use crate::seed::{child_seed, rng_for, stream};

/// Per-task losses observed at one point: one entry per entity autoencoder
/// followed by one per view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskLossVector {
    pub ae_losses: Vec<f64>,
    pub matrix_losses: Vec<f64>,
    pub epoch: usize,
}

impl TaskLossVector {
    pub fn len(&self) -> usize {
        self.ae_losses.len() + self.matrix_losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum of all terms (the 1-norm, since every term is non-negative).
    pub fn scalar(&self) -> f64 {
        self.ae_losses.iter().chain(&self.matrix_losses).sum()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.ae_losses
            .iter()
            .chain(&self.matrix_losses)
            .copied()
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.ae_losses
            .iter()
            .chain(&self.matrix_losses)
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_count: usize,
    pub max_epochs: usize,
    pub convergence_threshold: f64,
    pub pretrain: bool,
    pub pretrain_threshold: f64,
    pub pretrain_max_epochs: usize,
    /// Weight on the matrix reconstruction terms relative to the
    /// autoencoder terms.
    pub matrix_loss_weight: f64,
    /// Whether matrix losses backpropagate into the encoders.
    pub inject_matrix_gradients: bool,
    /// Derived from the run seed; never read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            weight_decay: 0.0,
            batch_count: 1,
            max_epochs: 200,
            convergence_threshold: 1e-6,
            pretrain: false,
            pretrain_threshold: 1e-5,
            pretrain_max_epochs: 100,
            matrix_loss_weight: 1.0,
            inject_matrix_gradients: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Domain(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        if self.batch_count == 0 {
            return bad("batch_count must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if !(self.convergence_threshold > 0.0) || !(self.pretrain_threshold > 0.0) {
            return bad("convergence thresholds must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EntityNet {
    pub entity: String,
    pub input: ConcatenatedMatrix,
    pub plan: ArchitecturePlan,
    pub weights: AeWeights,
}

/// Entries of one view hidden from training and scored afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldOut {
    pub view: String,
    pub coords: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct DcmfNetwork {
    /// Training data (held-out entries zeroed).
    pub graph: RelationGraph,
    pub entities: Vec<EntityNet>,
    pub k: usize,
    pub activation: Activation,
    /// Dense view data and (row entity index, col entity index) per view.
    views: Vec<(Matrix, usize, usize)>,
}

pub fn build_network(
    g: &RelationGraph,
    k: usize,
    f_k: f64,
    activation: Activation,
    seed: u64,
) -> Result<DcmfNetwork> {
    validate_graph(g).into_result()?;
    let mut entities = Vec::with_capacity(g.entities.len());
    for (i, e) in g.entities.iter().enumerate() {
        let input = build_concatenated_matrix(g, &e.id)?;
        let plan = plan_architecture(input.data.ncols(), f_k, k, activation)?;
        if plan.encoder_depth() == 1 && plan.input_dim <= k {
            log::warn!(
                "entity `{}`: input width {} does not exceed K={k}; single-layer encoder",
                e.id,
                plan.input_dim
            );
        }
        let weights = init_weights(&plan, child_seed(seed, i as u64));
        entities.push(EntityNet {
            entity: e.id.clone(),
            input,
            plan,
            weights,
        });
    }
    let views = dense_views(g)?;
    Ok(DcmfNetwork {
        graph: g.clone(),
        entities,
        k,
        activation,
        views,
    })
}

fn dense_views(g: &RelationGraph) -> Result<Vec<(Matrix, usize, usize)>> {
    g.views
        .iter()
        .map(|v| {
            Ok((
                v.data.to_dense(),
                g.entity_index(&v.row_entity)?,
                g.entity_index(&v.col_entity)?,
            ))
        })
        .collect()
}

impl DcmfNetwork {
    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    /// Number of loss terms (entities + views).
    pub fn task_count(&self) -> usize {
        self.entity_count() + self.view_count()
    }

    /// Bottleneck encoding of every entity's full concatenated matrix.
    pub fn encodings(&self) -> Result<Vec<Matrix>> {
        self.entities
            .iter()
            .map(|e| {
                let acts = forward_cached(&e.weights, &e.plan, &e.input.data)?;
                check_finite(&acts, &e.entity)?;
                Ok(acts.into_parts().0)
            })
            .collect()
    }

    pub fn encoding(&self, entity: &str) -> Result<Matrix> {
        let i = self.graph.entity_index(entity)?;
        let e = &self.entities[i];
        let acts = forward_cached(&e.weights, &e.plan, &e.input.data)?;
        check_finite(&acts, &e.entity)?;
        Ok(acts.into_parts().0)
    }

    /// Zero the held-out entries in the training data and rebuild the two
    /// affected concatenated matrices. Returns the hidden values.
    pub fn mask_entries(&mut self, hold: &HoldOut) -> Result<Vec<f64>> {
        let vi = self.graph.view_index(&hold.view)?;
        let mut dense = self.views[vi].0.clone();
        let (r, c) = dense.dim();
        let mut truth = Vec::with_capacity(hold.coords.len());
        for &(i, j) in &hold.coords {
            if i >= r || j >= c {
                return Err(Error::Domain(format!(
                    "held-out coordinate ({i}, {j}) outside {r}x{c}"
                )));
            }
            truth.push(dense[[i, j]]);
            dense[[i, j]] = 0.0;
        }
        self.graph.views[vi].data = RealMatrix::Dense(dense.clone());
        self.views[vi].0 = dense;
        let (ri, ci) = (self.views[vi].1, self.views[vi].2);
        for ei in [ri, ci] {
            let id = self.entities[ei].entity.clone();
            self.entities[ei].input = build_concatenated_matrix(&self.graph, &id)?;
        }
        Ok(truth)
    }

    pub fn param_count(&self) -> ParamCount {
        let p_u = self
            .graph
            .entities
            .iter()
            .map(|e| e.size * self.k)
            .sum();
        let p_d = self.entities.iter().map(|e| e.plan.param_count()).sum();
        ParamCount {
            p_u,
            p_d,
            total: p_u + p_d,
        }
    }
}

fn check_finite(acts: &Activations, entity: &str) -> Result<()> {
    if acts
        .encoding()
        .iter()
        .chain(acts.reconstruction().iter())
        .all(|v| v.is_finite())
    {
        Ok(())
    } else {
        Err(Error::Divergence {
            entity: entity.to_string(),
        })
    }
}

/// RMS autoencoder and matrix reconstruction losses on the full data.
pub fn collective_loss(net: &DcmfNetwork) -> Result<TaskLossVector> {
    let mut encs = Vec::with_capacity(net.entities.len());
    let mut ae_losses = Vec::with_capacity(net.entities.len());
    for e in &net.entities {
        let acts = forward_cached(&e.weights, &e.plan, &e.input.data)?;
        check_finite(&acts, &e.entity)?;
        ae_losses.push(rms(&(acts.reconstruction() - &e.input.data)));
        encs.push(acts.into_parts().0);
    }
    let matrix_losses = net
        .views
        .iter()
        .map(|(x, r, c)| rms(&(encs[*r].dot(&encs[*c].t()) - x)))
        .collect();
    Ok(TaskLossVector {
        ae_losses,
        matrix_losses,
        epoch: 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Loss before training (epoch 0) and after each epoch.
    pub history: Vec<TaskLossVector>,
    pub validation_rmse: Option<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> &TaskLossVector {
        self.history.last().expect("history holds the initial loss")
    }

    pub fn epochs(&self) -> usize {
        self.history.len() - 1
    }
}

fn batch_bounds(n: usize, batches: usize, b: usize) -> (usize, usize) {
    (b * n / batches, (b + 1) * n / batches)
}

/// Train all autoencoders jointly with minibatch SGD. Entries listed in
/// `hold_out` are zeroed before training and scored (RMSE) afterwards.
pub fn train(
    net: &mut DcmfNetwork,
    cfg: &TrainConfig,
    hold_out: Option<&HoldOut>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let truth = match hold_out {
        Some(h) => Some(net.mask_entries(h)?),
        None => None,
    };

    if cfg.pretrain {
        let pcfg = PretrainConfig {
            enabled: true,
            learning_rate: cfg.learning_rate,
            convergence_threshold: cfg.pretrain_threshold,
            max_epochs: cfg.pretrain_max_epochs,
            weight_decay: cfg.weight_decay,
        };
        for e in &mut net.entities {
            pretrain(&mut e.weights, &e.plan, &e.input.data, &pcfg)?;
        }
    }

    let mut history = vec![collective_loss(net)?];
    let mut rng = rng_for(cfg.seed, stream::BATCHES);
    let n_ent = net.entities.len();
    let mut is_col_entity = vec![false; n_ent];
    for (_, _, c) in &net.views {
        is_col_entity[*c] = true;
    }

    for epoch in 1..=cfg.max_epochs {
        let perms: Vec<Vec<usize>> = net
            .entities
            .iter()
            .map(|e| {
                let mut p: Vec<usize> = (0..e.input.data.nrows()).collect();
                if cfg.batch_count > 1 {
                    p.shuffle(&mut rng);
                }
                p
            })
            .collect();

        for b in 0..cfg.batch_count {
            if let Err(e) = train_batch(net, cfg, &perms, b, &is_col_entity) {
                return Err(diverged(e, history));
            }
        }

        let mut loss = match collective_loss(net) {
            Ok(l) if l.is_finite() => l,
            Ok(_) => {
                return Err(diverged(
                    Error::Domain("non-finite loss".into()),
                    history,
                ))
            }
            Err(e) => return Err(diverged(e, history)),
        };
        loss.epoch = epoch;
        let improvement = history.last().unwrap().scalar() - loss.scalar();
        history.push(loss);
        if improvement < cfg.convergence_threshold {
            break;
        }
    }

    let validation_rmse = match (hold_out, truth) {
        (Some(h), Some(t)) if !h.coords.is_empty() => {
            let pred = reconstruct_matrix(net, &h.view)?;
            let se: f64 = h
                .coords
                .iter()
                .zip(&t)
                .map(|(&(i, j), v)| (pred[[i, j]] - v).powi(2))
                .sum();
            Some((se / t.len() as f64).sqrt())
        }
        _ => None,
    };
    Ok(TrainOutcome {
        history,
        validation_rmse,
    })
}

fn diverged(e: Error, history: Vec<TaskLossVector>) -> Error {
    match e {
        Error::Training { .. } => e,
        other => Error::Training {
            reason: other.to_string(),
            history,
        },
    }
}

fn train_batch(
    net: &mut DcmfNetwork,
    cfg: &TrainConfig,
    perms: &[Vec<usize>],
    b: usize,
    is_col_entity: &[bool],
) -> Result<()> {
    let n_ent = net.entities.len();
    let single = cfg.batch_count == 1;

    let mut rows: Vec<Vec<usize>> = Vec::with_capacity(n_ent);
    let mut batch_acts: Vec<Option<Activations>> = Vec::with_capacity(n_ent);
    for (e, perm) in net.entities.iter().zip(perms) {
        let (lo, hi) = batch_bounds(perm.len(), cfg.batch_count, b);
        let idx = perm[lo..hi].to_vec();
        let acts = if idx.is_empty() {
            None
        } else {
            let input = if single {
                e.input.data.clone()
            } else {
                e.input.data.select(Axis(0), &idx)
            };
            let a = forward_cached(&e.weights, &e.plan, &input)?;
            check_finite(&a, &e.entity)?;
            Some(a)
        };
        rows.push(idx);
        batch_acts.push(acts);
    }

    // column entities need their encodings over all instances
    let mut full_acts: Vec<Option<Activations>> = Vec::with_capacity(n_ent);
    for (i, e) in net.entities.iter().enumerate() {
        if single || !is_col_entity[i] || !cfg.inject_matrix_gradients {
            full_acts.push(None);
        } else {
            let a = forward_cached(&e.weights, &e.plan, &e.input.data)?;
            check_finite(&a, &e.entity)?;
            full_acts.push(Some(a));
        }
    }

    let mut out_grads: Vec<Option<Matrix>> = vec![None; n_ent];
    for (i, acts) in batch_acts.iter().enumerate() {
        if let Some(a) = acts {
            let (_, g) = rms_loss_and_grad(a.reconstruction(), &a.outputs[0]);
            out_grads[i] = Some(g);
        }
    }

    let mut batch_enc_grads: Vec<Option<Matrix>> = vec![None; n_ent];
    let mut full_enc_grads: Vec<Option<Matrix>> = vec![None; n_ent];
    if cfg.inject_matrix_gradients {
        for (x, r, c) in &net.views {
            let Some(row_acts) = &batch_acts[*r] else {
                continue;
            };
            let u_r = row_acts.encoding();
            let u_c = if single {
                batch_acts[*c].as_ref().expect("single batch covers all rows").encoding()
            } else {
                full_acts[*c].as_ref().expect("column pass computed").encoding()
            };
            let x_b = if single {
                x.clone()
            } else {
                x.select(Axis(0), &rows[*r])
            };
            let (_, d_pred) = rms_loss_and_grad(&u_r.dot(&u_c.t()), &x_b);
            let d_pred = d_pred * cfg.matrix_loss_weight;
            add_grad(&mut batch_enc_grads[*r], d_pred.dot(u_c));
            let g_c = d_pred.t().dot(u_r);
            if single {
                add_grad(&mut batch_enc_grads[*c], g_c);
            } else {
                add_grad(&mut full_enc_grads[*c], g_c);
            }
        }
    }

    for i in 0..n_ent {
        let e = &net.entities[i];
        let mut total: Option<AeGradients> = None;
        if let Some(a) = &batch_acts[i] {
            let g = backward_from(
                &e.weights,
                &e.plan,
                a,
                out_grads[i].as_ref(),
                batch_enc_grads[i].as_ref(),
            )?;
            accumulate(&mut total, g);
        }
        if let (Some(a), Some(eg)) = (&full_acts[i], &full_enc_grads[i]) {
            let g = backward_from(&e.weights, &e.plan, a, None, Some(eg))?;
            accumulate(&mut total, g);
        }
        if let Some(g) = total {
            let e = &mut net.entities[i];
            sgd_step(&mut e.weights, &g, cfg.learning_rate, cfg.weight_decay);
        }
    }
    Ok(())
}

fn add_grad(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(s) => *s += &g,
        None => *slot = Some(g),
    }
}

/// `U(row entity) · U(col entity)ᵀ` for the named view.
pub fn reconstruct_matrix(net: &DcmfNetwork, view: &str) -> Result<Matrix> {
    let vi = net.graph.view_index(view)?;
    let (_, r, c) = &net.views[vi];
    let u_r = net.encoding(&net.entities[*r].entity)?;
    let u_c = net.encoding(&net.entities[*c].entity)?;
    Ok(u_r.dot(&u_c.t()))
}

/// Scores for unseen row instances from their side features:
/// solve `h ≈ u · U_featureᵀ` for `u` (minimum-norm least squares), then
/// return `u · U_itemᵀ`.
pub fn cold_start_scores(u_feature: &Matrix, u_item: &Matrix, h: &Matrix) -> Result<Matrix> {
    if h.ncols() != u_feature.nrows() {
        return Err(Error::Shape {
            op: "cold start features",
            left: h.dim(),
            right: u_feature.dim(),
        });
    }
    let u_new = least_squares_solve(u_feature, &h.t().to_owned())?;
    Ok(u_new.t().dot(&u_item.t()))
}

pub fn predict_cold_start(
    net: &DcmfNetwork,
    side_view: &str,
    target_view: &str,
    h: &Matrix,
) -> Result<Matrix> {
    let side = net.graph.view(side_view)?;
    let target = net.graph.view(target_view)?;
    if side.row_entity != target.row_entity {
        return Err(Error::Topology(format!(
            "views `{side_view}` and `{target_view}` do not share their row entity"
        )));
    }
    let u_feature = net.encoding(&side.col_entity)?;
    let u_item = net.encoding(&target.col_entity)?;
    cold_start_scores(&u_feature, &u_item, h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub p_u: usize,
    pub p_d: usize,
    pub total: usize,
}

/// Parameter count of the linear CMF baseline: one `|e| × K` factor per entity.
pub fn cmf_param_count(entity_sizes: &[usize], k: usize) -> ParamCount {
    let p_u = entity_sizes.iter().map(|s| s * k).sum();
    ParamCount {
        p_u,
        p_d: 0,
        total: p_u,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::Layer;
    use crate::graph::{EntityDecl, ViewDecl};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    fn single_view(x: Matrix) -> RelationGraph {
        let (r, c) = x.dim();
        RelationGraph::new(
            vec![EntityDecl::new("a", r), EntityDecl::new("b", c)],
            vec![ViewDecl::new("x", "a", "b", x)],
        )
    }

    fn augmented_graph() -> RelationGraph {
        let sizes = [8, 9, 4, 5, 6, 3];
        let entities = sizes
            .iter()
            .enumerate()
            .map(|(i, s)| EntityDecl::new(format!("e{}", i + 1), *s))
            .collect();
        let pairs = [(1, 2), (1, 3), (1, 4), (5, 2), (6, 3)];
        let views = pairs
            .iter()
            .enumerate()
            .map(|(m, (r, c))| {
                let data = Matrix::from_shape_fn((sizes[r - 1], sizes[c - 1]), |(i, j)| {
                    ((i * 3 + j * 5 + m) as f64 * 0.37).sin() * 0.5
                });
                ViewDecl::new(format!("x{}", m + 1), format!("e{r}"), format!("e{c}"), data)
            })
            .collect();
        RelationGraph::new(entities, views)
    }

    #[test]
    fn six_entity_network_has_eleven_loss_terms() {
        let net = build_network(&augmented_graph(), 2, 0.5, Activation::Tanh, 0).unwrap();
        assert_eq!(net.entity_count(), 6);
        assert_eq!(collective_loss(&net).unwrap().len(), 11);
        assert!(net.entities.iter().all(|e| e.plan.bottleneck() == 2));
    }

    #[test]
    fn single_view_network() {
        let net = build_network(&single_view(Matrix::ones((4, 3))), 2, 0.5, Activation::Tanh, 0)
            .unwrap();
        assert_eq!(net.entity_count(), 2);
        assert_eq!(collective_loss(&net).unwrap().len(), 3);
    }

    #[test]
    fn oversized_bottleneck_still_builds() {
        let net = build_network(&single_view(Matrix::ones((4, 3))), 10, 0.5, Activation::Tanh, 0)
            .unwrap();
        assert!(net.entities.iter().all(|e| e.plan.encoder_sizes == vec![10]));
    }

    #[test]
    fn invalid_graph_is_rejected() {
        let mut g = single_view(Matrix::ones((4, 3)));
        g.entities[0].size = 5;
        assert!(matches!(
            build_network(&g, 2, 0.5, Activation::Tanh, 0),
            Err(Error::InvalidGraph(_))
        ));
    }

    #[test]
    fn zero_inputs_give_zero_autoencoder_loss() {
        let x = Matrix::zeros((3, 4));
        let mut net = build_network(&single_view(x), 2, 0.5, Activation::Tanh, 1).unwrap();
        // matrix loss with all-zero encodings is the RMS of the (new) data
        let loss = collective_loss(&net).unwrap();
        assert!(loss.ae_losses.iter().all(|v| *v == 0.0));
        assert_eq!(loss.matrix_losses, vec![0.0]);

        net.views[0].0 = array![[1.0, 2.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 2.0]];
        let loss = collective_loss(&net).unwrap();
        assert_abs_diff_eq!(loss.matrix_losses[0], (9.0f64 / 12.0).sqrt(), epsilon = 1e-15);
    }

    /// Identity activation with planted 1-layer encoders `W = I`: encodings
    /// equal the inputs' leading columns.
    fn planted_network() -> DcmfNetwork {
        // a: 2 instances, b: 2 instances, view x (2x2)
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let mut net = build_network(&single_view(x), 2, 0.5, Activation::Identity, 0).unwrap();
        for e in &mut net.entities {
            e.weights = AeWeights {
                layers: vec![
                    Layer { weights: Matrix::eye(2), bias: Array1::zeros(2) },
                    Layer { weights: Matrix::eye(2), bias: Array1::zeros(2) },
                ],
                seed: 0,
            };
        }
        net
    }

    #[test]
    fn hand_computed_matrix_loss() {
        let net = planted_network();
        // U_a = X, U_b = Xᵀ → X' = X·X = [[7,10],[15,22]]
        let loss = collective_loss(&net).unwrap();
        assert_eq!(loss.ae_losses, vec![0.0, 0.0]);
        let expected = (((7.0f64 - 1.0).powi(2) + 8f64.powi(2) + 12f64.powi(2) + 18f64.powi(2)) / 4.0).sqrt();
        assert_abs_diff_eq!(loss.matrix_losses[0], expected, epsilon = 1e-12);
        let recon = reconstruct_matrix(&net, "x").unwrap();
        assert_eq!(recon, array![[7.0, 10.0], [15.0, 22.0]]);
        assert!(reconstruct_matrix(&net, "nope").is_err());
    }

    #[test]
    fn infinite_threshold_runs_one_epoch() {
        let mut net = build_network(&augmented_graph(), 2, 0.5, Activation::Tanh, 3).unwrap();
        let cfg = TrainConfig {
            convergence_threshold: f64::INFINITY,
            ..Default::default()
        };
        let out = train(&mut net, &cfg, None).unwrap();
        assert_eq!(out.epochs(), 1);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = TrainConfig {
            batch_count: 2,
            max_epochs: 15,
            seed: 4,
            ..Default::default()
        };
        let run = || {
            let mut net = build_network(&augmented_graph(), 2, 0.5, Activation::Tanh, 3).unwrap();
            train(&mut net, &cfg, None).unwrap().history
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn without_injection_training_matches_independent_pretraining() {
        let g = augmented_graph();
        let cfg = TrainConfig {
            inject_matrix_gradients: false,
            max_epochs: 10,
            convergence_threshold: 1e-12,
            ..Default::default()
        };
        let mut net = build_network(&g, 2, 0.5, Activation::Tanh, 5).unwrap();
        let hist = train(&mut net, &cfg, None).unwrap().history;

        let fresh = build_network(&g, 2, 0.5, Activation::Tanh, 5).unwrap();
        for (i, e) in fresh.entities.iter().enumerate() {
            let mut w = e.weights.clone();
            let pcfg = PretrainConfig {
                enabled: true,
                learning_rate: cfg.learning_rate,
                convergence_threshold: f64::NEG_INFINITY,
                max_epochs: hist.len() - 1,
                weight_decay: 0.0,
            };
            let losses = pretrain(&mut w, &e.plan, &e.input.data, &pcfg).unwrap();
            let traj: Vec<f64> = hist.iter().map(|h| h.ae_losses[i]).collect();
            assert_eq!(losses, traj);
        }
    }

    #[test]
    fn shared_encodings_feed_every_view() {
        let net = build_network(&augmented_graph(), 2, 0.5, Activation::Tanh, 2).unwrap();
        let u1 = net.encoding("e1").unwrap();
        let u2 = net.encoding("e2").unwrap();
        let u3 = net.encoding("e3").unwrap();
        assert_eq!(reconstruct_matrix(&net, "x1").unwrap(), u1.dot(&u2.t()));
        assert_eq!(reconstruct_matrix(&net, "x2").unwrap(), u1.dot(&u3.t()));
        assert_eq!(reconstruct_matrix(&net, "x1").unwrap().dim(), (8, 9));
    }

    #[test]
    fn hold_out_entries_are_hidden_and_scored() {
        let mut net = build_network(&augmented_graph(), 2, 0.5, Activation::Tanh, 2).unwrap();
        let original = net.graph.view("x1").unwrap().data.to_dense();
        let hold = HoldOut {
            view: "x1".into(),
            coords: vec![(0, 1), (3, 4)],
        };
        let cfg = TrainConfig { max_epochs: 3, ..Default::default() };
        let out = train(&mut net, &cfg, Some(&hold)).unwrap();
        let masked = net.graph.view("x1").unwrap().data.to_dense();
        assert_eq!(masked[[0, 1]], 0.0);
        assert_eq!(masked[[3, 4]], 0.0);
        assert_eq!(masked[[1, 1]], original[[1, 1]]);
        let block = net.entities[0].input.view_block("x1").unwrap();
        assert_eq!(block, masked);
        let pred = reconstruct_matrix(&net, "x1").unwrap();
        let expect = (((pred[[0, 1]] - original[[0, 1]]).powi(2) + (pred[[3, 4]] - original[[3, 4]]).powi(2)) / 2.0).sqrt();
        assert_abs_diff_eq!(out.validation_rmse.unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn divergence_is_reported_with_history() {
        let mut net = build_network(&augmented_graph(), 2, 0.5, Activation::Identity, 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e200,
            max_epochs: 50,
            convergence_threshold: f64::MIN_POSITIVE,
            ..Default::default()
        };
        match train(&mut net, &cfg, None) {
            Err(Error::Training { history, .. }) => assert!(!history.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn cold_start_edge_cases() {
        let net = build_network(&augmented_graph(), 2, 0.5, Activation::Tanh, 2).unwrap();
        let h = Matrix::zeros((1, 4));
        let scores = predict_cold_start(&net, "x2", "x1", &h).unwrap();
        assert_eq!(scores.dim(), (1, 9));
        assert!(scores.iter().all(|v| v.abs() < 1e-15));
        assert!(matches!(
            predict_cold_start(&net, "x4", "x1", &Matrix::zeros((1, 9))),
            Err(Error::Topology(_))
        ));

        // fewer features than K: minimum-norm, no error
        let u_feature = array![[1.0, 2.0]];
        let u_item = array![[1.0, 0.0], [0.0, 1.0]];
        let s = cold_start_scores(&u_feature, &u_item, &array![[5.0]]).unwrap();
        assert_abs_diff_eq!(s[[0, 0]], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s[[0, 1]], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cmf_parameter_counts() {
        assert_eq!(cmf_param_count(&[400, 800, 80, 160], 20).total, 28_800);
        assert_eq!(cmf_param_count(&[400, 800, 80, 160], 94).total, 135_360);
        assert_eq!(cmf_param_count(&[400, 800, 80, 160], 0).p_u, 0);
    }

    #[test]
    fn dcmf_parameter_count_adds_autoencoders() {
        let net = build_network(&augmented_graph(), 2, 0.5, Activation::Tanh, 0).unwrap();
        let pc = net.param_count();
        assert_eq!(pc.p_u, (8 + 9 + 4 + 5 + 6 + 3) * 2);
        let p_d: usize = net.entities.iter().map(|e| e.weights.param_count()).sum();
        assert_eq!(pc.p_d, p_d);
        assert_eq!(pc.total, pc.p_u + p_d);
    }
}
