//! Fully-connected autoencoders with adaptive layer sizing.
//!
//! Each entity gets one network. Encoder widths shrink geometrically from the
//! input width by a fraction until they reach the shared bottleneck width;
//! the decoder mirrors the encoder back to the input width.

use ndarray::{Array1, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{rms, Matrix};
use crate::seed::{rng_for, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sigmoid,
    Identity,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown activation `{s}`")))
    }
}

impl Activation {
    pub const ALL: [Activation; 4] = [
        Activation::Tanh,
        Activation::Relu,
        Activation::Sigmoid,
        Activation::Identity,
    ];

    fn apply(self, z: &mut Matrix) {
        match self {
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::Identity => {}
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitecturePlan {
    pub input_dim: usize,
    pub encoder_sizes: Vec<usize>,
    pub decoder_sizes: Vec<usize>,
    pub activation: Activation,
}

impl ArchitecturePlan {
    pub fn bottleneck(&self) -> usize {
        *self.encoder_sizes.last().expect("plan has a bottleneck")
    }

    pub fn encoder_depth(&self) -> usize {
        self.encoder_sizes.len()
    }

    /// `(fan_in, fan_out)` for every layer, encoder first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(1 + 2 * self.encoder_sizes.len());
        widths.push(self.input_dim);
        widths.extend(&self.encoder_sizes);
        widths.extend(&self.decoder_sizes);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Encoder widths `round(d·f), round(d·f²), …` while they stay above `k`,
/// followed by the bottleneck `k`.
pub fn plan_architecture(
    input_dim: usize,
    f_k: f64,
    k: usize,
    activation: Activation,
) -> Result<ArchitecturePlan> {
    if !(f_k > 0.0 && f_k < 1.0) {
        return Err(Error::Domain(format!("f_k must lie in (0, 1), got {f_k}")));
    }
    if k == 0 {
        return Err(Error::Domain("bottleneck width must be at least 1".into()));
    }
    if input_dim == 0 {
        return Err(Error::Domain("input dimension must be at least 1".into()));
    }
    if k >= input_dim {
        log::warn!("bottleneck {k} is not smaller than input width {input_dim}");
    }

    let mut encoder_sizes = Vec::new();
    let mut prev = input_dim;
    loop {
        let mut next = round_half_up(prev as f64 * f_k);
        if next >= prev {
            next = prev - 1;
        }
        if next <= k {
            break;
        }
        encoder_sizes.push(next);
        prev = next;
    }
    encoder_sizes.push(k);

    let mut decoder_sizes: Vec<usize> = encoder_sizes[..encoder_sizes.len() - 1]
        .iter()
        .rev()
        .copied()
        .collect();
    decoder_sizes.push(input_dim);
    Ok(ArchitecturePlan {
        input_dim,
        encoder_sizes,
        decoder_sizes,
        activation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`
    pub weights: Matrix,
    pub bias: Array1<f64>,
}

/// Parameters of one autoencoder. Gradients use the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct AeWeights {
    pub layers: Vec<Layer>,
    pub seed: u64,
}

pub type AeGradients = AeWeights;

impl AeWeights {
    pub fn zeros_like(plan: &ArchitecturePlan) -> Self {
        let layers = plan
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| Layer {
                weights: Matrix::zeros((i, o)),
                bias: Array1::zeros(o),
            })
            .collect();
        Self { layers, seed: 0 }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn add_assign(&mut self, other: &AeWeights) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_weights(plan: &ArchitecturePlan, seed: u64) -> AeWeights {
    let mut rng = rng_for(seed, stream::INIT_WEIGHTS);
    let layers = plan
        .layer_shapes()
        .into_iter()
        .map(|(i, o)| {
            let bound = (6.0 / (i + o) as f64).sqrt();
            Layer {
                weights: Matrix::from_shape_fn((i, o), |_| rng.random_range(-bound..=bound)),
                bias: Array1::zeros(o),
            }
        })
        .collect();
    AeWeights { layers, seed }
}

/// Per-layer outputs of a forward pass; `outputs[0]` is the input batch.
#[derive(Debug, Clone)]
pub struct Activations {
    pub outputs: Vec<Matrix>,
    encoder_depth: usize,
}

impl Activations {
    pub fn encoding(&self) -> &Matrix {
        &self.outputs[self.encoder_depth]
    }

    pub fn reconstruction(&self) -> &Matrix {
        self.outputs.last().expect("non-empty forward pass")
    }

    pub fn into_parts(mut self) -> (Matrix, Matrix) {
        let recon = self.outputs.pop().expect("non-empty forward pass");
        let enc = self.outputs.swap_remove(self.encoder_depth);
        (enc, recon)
    }
}

fn check_weights(w: &AeWeights, plan: &ArchitecturePlan) -> Result<()> {
    let shapes = plan.layer_shapes();
    if w.layers.len() != shapes.len() {
        return Err(Error::Shape {
            op: "autoencoder weights",
            left: (w.layers.len(), 0),
            right: (shapes.len(), 0),
        });
    }
    for (l, s) in w.layers.iter().zip(shapes) {
        if l.weights.dim() != s || l.bias.len() != s.1 {
            return Err(Error::Shape {
                op: "autoencoder weights",
                left: l.weights.dim(),
                right: s,
            });
        }
    }
    Ok(())
}

pub fn forward_cached(w: &AeWeights, plan: &ArchitecturePlan, batch: &Matrix) -> Result<Activations> {
    if batch.ncols() != plan.input_dim {
        return Err(Error::Shape {
            op: "autoencoder forward",
            left: batch.dim(),
            right: (batch.nrows(), plan.input_dim),
        });
    }
    check_weights(w, plan)?;
    let mut outputs = Vec::with_capacity(w.layers.len() + 1);
    outputs.push(batch.clone());
    for layer in &w.layers {
        let mut z = outputs.last().unwrap().dot(&layer.weights);
        z += &layer.bias;
        plan.activation.apply(&mut z);
        outputs.push(z);
    }
    Ok(Activations {
        outputs,
        encoder_depth: plan.encoder_depth(),
    })
}

/// Returns `(encoding, reconstruction)`.
pub fn forward(w: &AeWeights, plan: &ArchitecturePlan, batch: &Matrix) -> Result<(Matrix, Matrix)> {
    Ok(forward_cached(w, plan, batch)?.into_parts())
}

/// Exact gradients given upstream gradients at the reconstruction and at
/// the bottleneck encoding.
pub fn backward(
    w: &AeWeights,
    plan: &ArchitecturePlan,
    batch: &Matrix,
    output_grad: &Matrix,
    encoding_grad: &Matrix,
) -> Result<AeGradients> {
    let acts = forward_cached(w, plan, batch)?;
    backward_from(w, plan, &acts, Some(output_grad), Some(encoding_grad))
}

/// Backpropagation over cached activations. A `None` upstream gradient is
/// treated as zero.
pub fn backward_from(
    w: &AeWeights,
    plan: &ArchitecturePlan,
    acts: &Activations,
    output_grad: Option<&Matrix>,
    encoding_grad: Option<&Matrix>,
) -> Result<AeGradients> {
    let n_layers = w.layers.len();
    let depth = plan.encoder_depth();
    if let Some(g) = output_grad {
        if g.dim() != acts.reconstruction().dim() {
            return Err(Error::Shape {
                op: "autoencoder backward (output)",
                left: g.dim(),
                right: acts.reconstruction().dim(),
            });
        }
    }
    if let Some(g) = encoding_grad {
        if g.dim() != acts.encoding().dim() {
            return Err(Error::Shape {
                op: "autoencoder backward (encoding)",
                left: g.dim(),
                right: acts.encoding().dim(),
            });
        }
    }

    let mut grads = AeWeights::zeros_like(plan);
    grads.seed = w.seed;
    // gradient w.r.t. the output of layer `l` (i.e. acts.outputs[l + 1])
    let mut upstream: Option<Matrix> = output_grad.cloned();
    for l in (0..n_layers).rev() {
        if l + 1 == depth {
            if let Some(eg) = encoding_grad {
                upstream = Some(match upstream {
                    Some(u) => u + eg,
                    None => eg.clone(),
                });
            }
        }
        let Some(dy) = upstream.take() else {
            continue;
        };
        let y = &acts.outputs[l + 1];
        let mut dz = dy;
        let act = plan.activation;
        Zip::from(&mut dz)
            .and(y)
            .for_each(|d, &yv| *d *= act.derivative_from_output(yv));
        let input = &acts.outputs[l];
        grads.layers[l].weights = input.t().dot(&dz);
        grads.layers[l].bias = dz.sum_axis(Axis(0));
        if l > 0 {
            upstream = Some(dz.dot(&w.layers[l].weights.t()));
        }
    }
    Ok(grads)
}

/// `w ← w − lr·(grad + decay·w)`; biases are not decayed.
pub fn sgd_step(w: &mut AeWeights, grads: &AeGradients, learning_rate: f64, weight_decay: f64) {
    for (layer, g) in w.layers.iter_mut().zip(&grads.layers) {
        Zip::from(&mut layer.weights)
            .and(&g.weights)
            .for_each(|p, &gv| *p -= learning_rate * (gv + weight_decay * *p));
        Zip::from(&mut layer.bias)
            .and(&g.bias)
            .for_each(|p, &gv| *p -= learning_rate * gv);
    }
}

/// Root-mean-square reconstruction loss and its gradient w.r.t. the prediction.
pub fn rms_loss_and_grad(pred: &Matrix, target: &Matrix) -> (f64, Matrix) {
    let diff = pred - target;
    let loss = rms(&diff);
    let grad = if loss > 0.0 {
        diff / (loss * pred.len() as f64)
    } else {
        Matrix::zeros(pred.dim())
    };
    (loss, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub enabled: bool,
    pub learning_rate: f64,
    pub convergence_threshold: f64,
    pub max_epochs: usize,
    pub weight_decay: f64,
}

/// Train one autoencoder on its own reconstruction loss (full batch).
/// Returns the loss before each epoch followed by the final loss.
pub fn pretrain(
    w: &mut AeWeights,
    plan: &ArchitecturePlan,
    data: &Matrix,
    cfg: &PretrainConfig,
) -> Result<Vec<f64>> {
    if data.ncols() != plan.input_dim {
        return Err(Error::Shape {
            op: "pretrain",
            left: data.dim(),
            right: (data.nrows(), plan.input_dim),
        });
    }
    if !cfg.enabled {
        return Ok(Vec::new());
    }
    let mut acts = forward_cached(w, plan, data)?;
    let (mut loss, mut grad) = rms_loss_and_grad(acts.reconstruction(), data);
    let mut losses = vec![loss];
    for _ in 0..cfg.max_epochs {
        let g = backward_from(w, plan, &acts, Some(&grad), None)?;
        sgd_step(w, &g, cfg.learning_rate, cfg.weight_decay);
        acts = forward_cached(w, plan, data)?;
        let (next, next_grad) = rms_loss_and_grad(acts.reconstruction(), data);
        if !next.is_finite() {
            return Err(Error::Training {
                reason: "pretraining loss became non-finite".into(),
                history: Vec::new(),
            });
        }
        losses.push(next);
        let improvement = loss - next;
        loss = next;
        grad = next_grad;
        if improvement < cfg.convergence_threshold {
            break;
        }
    }
    Ok(losses)
}

pub(crate) fn accumulate(total: &mut Option<AeGradients>, g: AeGradients) {
    match total {
        Some(t) => t.add_assign(&g),
        None => *total = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn sizing_rule_examples() {
        let p = plan_architecture(1000, 0.5, 100, Activation::Tanh).unwrap();
        assert_eq!(p.encoder_sizes, vec![500, 250, 125, 100]);
        assert_eq!(p.decoder_sizes, vec![125, 250, 500, 1000]);
        let p = plan_architecture(120, 0.5, 100, Activation::Tanh).unwrap();
        assert_eq!(p.encoder_sizes, vec![100]);
        assert_eq!(p.decoder_sizes, vec![120]);
        let p = plan_architecture(2505, 0.01, 200, Activation::Tanh).unwrap();
        assert_eq!(p.encoder_sizes, vec![200]);
        assert!(plan_architecture(10, 1.0, 2, Activation::Tanh).is_err());
        assert!(plan_architecture(10, 0.0, 2, Activation::Tanh).is_err());
        // input narrower than the bottleneck
        let p = plan_architecture(5, 0.5, 8, Activation::Tanh).unwrap();
        assert_eq!(p.encoder_sizes, vec![8]);
        // f_k close to 1 still terminates with strictly decreasing widths
        let p = plan_architecture(12, 0.99, 3, Activation::Tanh).unwrap();
        assert!(p.encoder_sizes.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn param_count_matches_layer_sum() {
        let p = plan_architecture(6, 0.5, 2, Activation::Tanh).unwrap();
        assert_eq!(p.layer_shapes(), vec![(6, 3), (3, 2), (2, 3), (3, 6)]);
        assert_eq!(p.param_count(), 6 * 3 + 3 + 3 * 2 + 2 + 2 * 3 + 3 + 3 * 6 + 6);
        assert_eq!(init_weights(&p, 0).param_count(), p.param_count());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let p = ArchitecturePlan {
            input_dim: 100,
            encoder_sizes: vec![50],
            decoder_sizes: vec![100],
            activation: Activation::Tanh,
        };
        let a = init_weights(&p, 9);
        assert_eq!(a, init_weights(&p, 9));
        assert_ne!(a, init_weights(&p, 10));
        assert!(a.layers[0].weights.iter().all(|v| v.abs() <= 0.2));
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn identity_inverse_pair_reconstructs() {
        let p = ArchitecturePlan {
            input_dim: 2,
            encoder_sizes: vec![2],
            decoder_sizes: vec![2],
            activation: Activation::Identity,
        };
        let a = array![[2.0, 1.0], [1.0, 1.0]];
        let a_inv = array![[1.0, -1.0], [-1.0, 2.0]];
        let w = AeWeights {
            layers: vec![
                Layer { weights: a, bias: Array1::zeros(2) },
                Layer { weights: a_inv, bias: Array1::zeros(2) },
            ],
            seed: 0,
        };
        let x = array![[0.5, -1.5], [3.0, 2.0], [0.0, 1.0]];
        let (_, recon) = forward(&w, &p, &x).unwrap();
        for (u, v) in recon.iter().zip(x.iter()) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-12);
        }
    }

    #[test]
    fn tanh_range_and_zero_input() {
        let p = plan_architecture(8, 0.5, 2, Activation::Tanh).unwrap();
        let w = init_weights(&p, 1);
        let x = Matrix::from_shape_fn((4, 8), |(i, j)| (i as f64 - j as f64) * 3.0);
        let acts = forward_cached(&w, &p, &x).unwrap();
        assert!(acts.outputs[1..].iter().all(|m| m.iter().all(|v| v.abs() < 1.0)));
        let (enc, _) = forward(&w, &p, &Matrix::zeros((3, 8))).unwrap();
        assert!(enc.iter().all(|v| *v == 0.0));
        assert!(forward(&w, &p, &Matrix::zeros((3, 7))).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = plan_architecture(6, 0.5, 2, Activation::Tanh).unwrap();
        let w = init_weights(&p, 2);
        let x = Matrix::from_shape_fn((5, 6), |(i, j)| ((i * 7 + j) as f64).sin());
        let g = backward(&w, &p, &x, &Matrix::zeros((5, 6)), &Matrix::zeros((5, 2))).unwrap();
        assert!(g.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| *v == 0.0)));
    }

    #[test]
    fn encoding_gradient_leaves_decoder_untouched() {
        let p = plan_architecture(6, 0.5, 2, Activation::Tanh).unwrap();
        let w = init_weights(&p, 3);
        let x = Matrix::from_shape_fn((5, 6), |(i, j)| ((i * 7 + j) as f64).cos());
        let eg = Matrix::from_elem((5, 2), 0.3);
        let g = backward(&w, &p, &x, &Matrix::zeros((5, 6)), &eg).unwrap();
        for l in &g.layers[p.encoder_depth()..] {
            assert!(l.weights.iter().chain(l.bias.iter()).all(|v| *v == 0.0));
        }
        assert!(g.layers[0].weights.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn sgd_step_closed_forms() {
        let p = ArchitecturePlan {
            input_dim: 1,
            encoder_sizes: vec![1],
            decoder_sizes: vec![1],
            activation: Activation::Identity,
        };
        let mut w = init_weights(&p, 4);
        let before = w.clone();
        sgd_step(&mut w, &AeWeights::zeros_like(&p), 0.1, 0.0);
        assert_eq!(w, before);

        sgd_step(&mut w, &AeWeights::zeros_like(&p), 0.1, 0.5);
        assert_abs_diff_eq!(w.layers[0].weights[[0, 0]], before.layers[0].weights[[0, 0]] * 0.95, epsilon = 1e-15);

        let mut w = before.clone();
        let mut g = AeWeights::zeros_like(&p);
        g.layers[0].weights[[0, 0]] = 2.0;
        g.layers[0].bias[0] = 1.0;
        sgd_step(&mut w, &g, 0.1, 0.0);
        assert_abs_diff_eq!(w.layers[0].weights[[0, 0]], before.layers[0].weights[[0, 0]] - 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(w.layers[0].bias[0], -0.1, epsilon = 1e-15);
    }

    #[test]
    fn pretrain_stopping_rules() {
        let p = plan_architecture(6, 0.5, 2, Activation::Tanh).unwrap();
        let x = Matrix::from_shape_fn((5, 6), |(i, j)| ((i * 7 + j) as f64).sin() * 0.5);
        let mut w = init_weights(&p, 5);
        let cfg = PretrainConfig {
            enabled: true,
            learning_rate: 0.1,
            convergence_threshold: f64::INFINITY,
            max_epochs: 50,
            weight_decay: 0.0,
        };
        let losses = pretrain(&mut w, &p, &x, &cfg).unwrap();
        assert_eq!(losses.len(), 2);

        let mut w = init_weights(&p, 5);
        let before = w.clone();
        let off = PretrainConfig { enabled: false, ..cfg };
        pretrain(&mut w, &p, &x, &off).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn pretrain_learns_low_rank_data() {
        // data = A·B with inner dimension 2 = K, linear activation
        let a = Matrix::from_shape_fn((30, 2), |(i, j)| ((i * 3 + j) as f64 * 0.7).sin());
        let b = Matrix::from_shape_fn((2, 8), |(i, j)| ((i * 5 + j) as f64 * 1.3).cos());
        let data = a.dot(&b);
        let p = plan_architecture(8, 0.5, 2, Activation::Identity).unwrap();
        let mut w = init_weights(&p, 6);
        let cfg = PretrainConfig {
            enabled: true,
            learning_rate: 0.01,
            convergence_threshold: 0.0,
            max_epochs: 20000,
            weight_decay: 0.0,
        };
        let losses = pretrain(&mut w, &p, &data, &cfg).unwrap();
        assert!(*losses.last().unwrap() < 0.05, "final loss {} after {} epochs from {}", losses.last().unwrap(), losses.len(), losses[0]);
    }

    proptest! {
        #[test]
        fn smaller_fraction_never_adds_layers(dim in 1usize..3000, k in 1usize..300, f1 in 0.01f64..0.99, f2 in 0.01f64..0.99) {
            let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
            let a = plan_architecture(dim, lo, k, Activation::Tanh).unwrap();
            let b = plan_architecture(dim, hi, k, Activation::Tanh).unwrap();
            prop_assert!(a.encoder_depth() <= b.encoder_depth());
            prop_assert_eq!(a.bottleneck(), k);
            prop_assert!(a.encoder_sizes.windows(2).all(|w| w[0] > w[1]));
        }
    }
}
