//! Gaussian-process surrogates: a single-task GP and the multi-task GP with
//! an intrinsic-coregionalization kernel `K_t ⊗ K_p`, `K_t = G·Gᵀ`.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{backward_substitute, cholesky, forward_substitute, Matrix};
use crate::seed::{rng_for, stream};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Squared-exponential kernel with one lengthscale per input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeKernel {
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
}

impl SeKernel {
    pub fn new(dim: usize) -> Self {
        Self {
            lengthscales: vec![0.3; dim],
            signal_var: 1.0,
        }
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.lengthscales) {
            let d = (x - y) / l;
            r2 += d * d;
        }
        self.signal_var * (-0.5 * r2).exp()
    }

    pub fn gram(&self, xs: &[Vec<f64>]) -> Matrix {
        let n = xs.len();
        let mut k = Matrix::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval(&xs[i], &xs[j]);
                k[[i, j]] = v;
                k[[j, i]] = v;
            }
        }
        k
    }

    pub fn cross(&self, xs: &[Vec<f64>], q: &[f64]) -> Vec<f64> {
        xs.iter().map(|x| self.eval(x, q)).collect()
    }
}

fn jitter_ladder() -> impl Iterator<Item = f64> {
    std::iter::once(0.0).chain(
        std::iter::successors(Some(JITTER_START), |j| Some(j * 10.0))
            .take_while(|j| *j <= JITTER_MAX * 1.0001),
    )
}

/// Exact single-task GP posterior `(mean, latent variance)` at `query`,
/// zero prior mean.
pub fn gp_posterior(
    kernel: &SeKernel,
    noise_var: f64,
    xs: &[Vec<f64>],
    ys: &[f64],
    query: &[f64],
) -> Result<(f64, f64)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Surrogate(format!(
            "need matching non-empty observations, got {} points and {} values",
            xs.len(),
            ys.len()
        )));
    }
    let gram = kernel.gram(xs);
    let mut last = None;
    for jitter in jitter_ladder() {
        let mut k = gram.clone();
        for i in 0..xs.len() {
            k[[i, i]] += noise_var + jitter;
        }
        match cholesky(&k) {
            Ok(l) => {
                let mut alpha = ys.to_vec();
                forward_substitute(&l, &mut alpha);
                backward_substitute(&l, &mut alpha);
                let mut v = kernel.cross(xs, query);
                let mean = v.iter().zip(&alpha).map(|(a, b)| a * b).sum();
                forward_substitute(&l, &mut v);
                let var = kernel.signal_var - v.iter().map(|x| x * x).sum::<f64>();
                return Ok((mean, var.max(0.0)));
            }
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Surrogate(format!(
        "gram matrix not positive definite after jitter {JITTER_MAX}: {}",
        last.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// Observations plus every kernel parameter of the multi-task surrogate.
///
/// Values are modelled after the per-task affine map `(y - shift) / scale`;
/// predictions are mapped back. The default map is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateState {
    pub xs: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
    pub kernel: SeKernel,
    pub noise_var: f64,
    /// Lower-triangular task factor.
    pub g: Matrix,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl SurrogateState {
    /// `K_t = I`, unit signal variance, identity output map.
    pub fn new(input_dim: usize, tasks: usize) -> Self {
        Self {
            xs: Vec::new(),
            ys: Vec::new(),
            kernel: SeKernel::new(input_dim),
            noise_var: 1e-4,
            g: Matrix::eye(tasks),
            shift: vec![0.0; tasks],
            scale: vec![1.0; tasks],
        }
    }

    pub fn tasks(&self) -> usize {
        self.g.nrows()
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn push(&mut self, x: Vec<f64>, y: Vec<f64>) -> Result<()> {
        if y.len() != self.tasks() {
            return Err(Error::Surrogate(format!(
                "observation has {} tasks, surrogate has {}",
                y.len(),
                self.tasks()
            )));
        }
        if x.len() != self.kernel.lengthscales.len() {
            return Err(Error::Surrogate(format!(
                "point has {} coordinates, kernel has {}",
                x.len(),
                self.kernel.lengthscales.len()
            )));
        }
        self.xs.push(x);
        self.ys.push(y);
        Ok(())
    }

    /// Per-task mean and standard deviation (1 when degenerate) as the output map.
    pub fn standardize(&mut self) {
        let n = self.ys.len() as f64;
        for t in 0..self.tasks() {
            if self.ys.is_empty() {
                self.shift[t] = 0.0;
                self.scale[t] = 1.0;
                continue;
            }
            let mean = self.ys.iter().map(|y| y[t]).sum::<f64>() / n;
            let var = self.ys.iter().map(|y| (y[t] - mean).powi(2)).sum::<f64>() / n;
            self.shift[t] = mean;
            self.scale[t] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
    }

    pub fn task_kernel(&self) -> Matrix {
        self.g.dot(&self.g.t())
    }

    fn targets(&self) -> Matrix {
        let (n, t) = (self.len(), self.tasks());
        Matrix::from_shape_fn((n, t), |(i, j)| (self.ys[i][j] - self.shift[j]) / self.scale[j])
    }

    /// Eigendecompose both kernel factors once; the result answers queries.
    pub fn factorize(&self) -> Result<MtgpPosterior> {
        if self.is_empty() {
            return Err(Error::Surrogate("no observations".into()));
        }
        let kp = Eigen::of(&self.kernel.gram(&self.xs));
        self.factorize_with(&kp)
    }

    fn factorize_with(&self, kp: &Eigen) -> Result<MtgpPosterior> {
        let kt_mat = self.task_kernel();
        let kt = Eigen::of(&kt_mat);
        let (n, t) = (self.len(), self.tasks());
        let y = self.targets();

        let dmax = kp.values.iter().cloned().fold(0.0, f64::max)
            * kt.values.iter().cloned().fold(0.0, f64::max)
            + self.noise_var;
        let mut chosen = None;
        for jitter in jitter_ladder() {
            let d = Matrix::from_shape_fn((n, t), |(i, j)| {
                kp.values[i] * kt.values[j] + self.noise_var + jitter
            });
            let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
            if dmin.is_finite() && dmin > 1e-14 * dmax.max(1.0) {
                chosen = Some(d);
                break;
            }
        }
        let d = chosen.ok_or_else(|| {
            Error::Surrogate(format!("kronecker gram singular after jitter {JITTER_MAX}"))
        })?;

        let rotated = kp.vectors.t().dot(&y).dot(&kt.vectors);
        let a = &rotated / &d;
        let alpha = kp.vectors.dot(&a).dot(&kt.vectors.t());
        let fit = (&y * &alpha).sum();
        let log_det: f64 = d.iter().map(|v| v.ln()).sum();
        let lml = -0.5 * fit - 0.5 * log_det - 0.5 * (n * t) as f64 * (2.0 * std::f64::consts::PI).ln();
        if !lml.is_finite() {
            return Err(Error::Surrogate("non-finite log marginal likelihood".into()));
        }
        Ok(MtgpPosterior {
            state: self.clone(),
            kt: kt_mat,
            kt_eig: kt,
            kp_vectors: kp.vectors.clone(),
            denom: d,
            alpha,
            lml,
        })
    }

    pub fn log_marginal_likelihood(&self) -> Result<f64> {
        Ok(self.factorize()?.lml)
    }
}

#[derive(Debug, Clone)]
struct Eigen {
    values: Vec<f64>,
    vectors: Matrix,
}

impl Eigen {
    fn of(m: &Matrix) -> Self {
        let n = m.nrows();
        let dm = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[[i, j]] + m[[j, i]]));
        let e = SymmetricEigen::new(dm);
        Self {
            values: e.eigenvalues.iter().map(|v| v.max(0.0)).collect(),
            vectors: Matrix::from_shape_fn((n, n), |(i, j)| e.eigenvectors[(i, j)]),
        }
    }
}

/// A factorized surrogate; cheap to query repeatedly.
#[derive(Debug, Clone)]
pub struct MtgpPosterior {
    state: SurrogateState,
    kt: Matrix,
    kt_eig: Eigen,
    kp_vectors: Matrix,
    denom: Matrix,
    alpha: Matrix,
    lml: f64,
}

impl MtgpPosterior {
    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    /// Per-task `(means, latent variances)` in the original output units.
    pub fn predict(&self, query: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let s = &self.state;
        let t = s.tasks();
        let kstar = ndarray::Array1::from(s.kernel.cross(&s.xs, query));
        let proj = self.alpha.t().dot(&kstar);
        let means_std = self.kt.dot(&proj);
        let b = self.kp_vectors.t().dot(&kstar);

        let mut means = Vec::with_capacity(t);
        let mut vars = Vec::with_capacity(t);
        for task in 0..t {
            let mut reduce = 0.0;
            for j in 0..t {
                let a = self.kt_eig.values[j] * self.kt_eig.vectors[[task, j]];
                let a2 = a * a;
                if a2 == 0.0 {
                    continue;
                }
                for (i, bi) in b.iter().enumerate() {
                    reduce += a2 * bi * bi / self.denom[[i, j]];
                }
            }
            let var = (self.kt[[task, task]] * s.kernel.signal_var - reduce).max(0.0);
            means.push(s.shift[task] + s.scale[task] * means_std[task]);
            vars.push(s.scale[task] * s.scale[task] * var);
        }
        (means, vars)
    }
}

/// Per-task posterior mean and variance at `query`.
pub fn mtgp_posterior(state: &SurrogateState, query: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok(state.factorize()?.predict(query))
}

/// Budget for the log-marginal-likelihood coordinate search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub restarts: usize,
    pub max_sweeps: usize,
    pub initial_step: f64,
    pub min_step: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            max_sweeps: 30,
            initial_step: 1.0,
            min_step: 1e-2,
            seed: 0,
        }
    }
}

const LOG_LENGTH: (f64, f64) = (-4.6, 2.3);
const LOG_SIGNAL: (f64, f64) = (-6.9, 6.9);
const LOG_NOISE: (f64, f64) = (-18.4, 0.0);
const G_DIAG_MIN: f64 = 1e-6;
const G_ABS_MAX: f64 = 1e3;

// θ = [ln ℓ_1..ln ℓ_d, ln σ_f², ln σ_n², G lower triangle row-major]
fn pack(s: &SurrogateState) -> Vec<f64> {
    let mut th: Vec<f64> = s.kernel.lengthscales.iter().map(|l| l.ln()).collect();
    th.push(s.kernel.signal_var.ln());
    th.push(s.noise_var.ln());
    for i in 0..s.tasks() {
        for j in 0..=i {
            th.push(s.g[[i, j]]);
        }
    }
    th
}

fn clamp_theta(th: &mut [f64], d: usize, t: usize) {
    for v in &mut th[..d] {
        *v = v.clamp(LOG_LENGTH.0, LOG_LENGTH.1);
    }
    th[d] = th[d].clamp(LOG_SIGNAL.0, LOG_SIGNAL.1);
    th[d + 1] = th[d + 1].clamp(LOG_NOISE.0, LOG_NOISE.1);
    let mut at = d + 2;
    for i in 0..t {
        for j in 0..=i {
            th[at] = if i == j {
                th[at].clamp(G_DIAG_MIN, G_ABS_MAX)
            } else {
                th[at].clamp(-G_ABS_MAX, G_ABS_MAX)
            };
            at += 1;
        }
    }
}

fn unpack(base: &SurrogateState, th: &[f64]) -> SurrogateState {
    let d = base.kernel.lengthscales.len();
    let mut s = base.clone();
    for (l, v) in s.kernel.lengthscales.iter_mut().zip(&th[..d]) {
        *l = v.exp();
    }
    s.kernel.signal_var = th[d].exp();
    s.noise_var = th[d + 1].exp();
    let mut at = d + 2;
    for i in 0..s.tasks() {
        for j in 0..=i {
            s.g[[i, j]] = th[at];
            at += 1;
        }
    }
    s
}

/// Caches the input-kernel eigendecomposition across task-factor moves.
struct LmlEval<'a> {
    base: &'a SurrogateState,
    d: usize,
    cached: Option<(Vec<f64>, Eigen)>,
}

impl LmlEval<'_> {
    fn eval(&mut self, th: &[f64]) -> Option<f64> {
        let s = unpack(self.base, th);
        let key = &th[..self.d + 1];
        let hit = matches!(&self.cached, Some((k, _)) if k.as_slice() == key);
        if !hit {
            self.cached = Some((key.to_vec(), Eigen::of(&s.kernel.gram(&s.xs))));
        }
        let kp = &self.cached.as_ref().expect("cache filled above").1;
        s.factorize_with(kp).ok().map(|p| p.lml)
    }
}

fn coordinate_search(ev: &mut LmlEval<'_>, mut th: Vec<f64>, cfg: &FitConfig) -> Option<(Vec<f64>, f64)> {
    let (d, t) = (ev.d, ev.base.tasks());
    clamp_theta(&mut th, d, t);
    let mut best = ev.eval(&th)?;
    let mut step = cfg.initial_step;
    for _ in 0..cfg.max_sweeps {
        let mut improved = false;
        for c in 0..th.len() {
            for dir in [1.0, -1.0] {
                let mut cand = th.clone();
                cand[c] += dir * step;
                clamp_theta(&mut cand, d, t);
                if cand[c] == th[c] {
                    continue;
                }
                if let Some(v) = ev.eval(&cand) {
                    if v > best + 1e-10 {
                        th = cand;
                        best = v;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < cfg.min_step {
                break;
            }
        }
    }
    Some((th, best))
}

/// Maximize the exact log marginal likelihood over all kernel parameters.
///
/// The first start is the incoming state, so the likelihood never
/// decreases. Fewer than two observations return the state unchanged.
pub fn fit_kernel_hyperparams(state: &SurrogateState, cfg: &FitConfig) -> SurrogateState {
    if state.len() < 2 {
        return state.clone();
    }
    let d = state.kernel.lengthscales.len();
    let mut ev = LmlEval { base: state, d, cached: None };
    let incoming = ev.eval(&pack(state));
    let mut rng = rng_for(cfg.seed, stream::BO_FIT);

    let mut best: Option<(Vec<f64>, f64)> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut start = pack(state);
        if r > 0 {
            for v in &mut start[..d + 2] {
                *v += rng.random_range(-1.0..1.0);
            }
            for v in &mut start[d + 2..] {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        if let Some((th, lml)) = coordinate_search(&mut ev, start, cfg) {
            if best.as_ref().is_none_or(|(_, b)| lml > *b) {
                best = Some((th, lml));
            }
        }
    }
    match best {
        Some((th, lml)) if incoming.is_none_or(|i| lml >= i) => unpack(state, &th),
        Some(_) => state.clone(),
        None => {
            warn!("kernel fit failed from every start; keeping previous parameters");
            state.clone()
        }
    }
}
