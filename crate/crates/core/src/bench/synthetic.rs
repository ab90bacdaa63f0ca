//! Planted-factor synthetic datasets.

use std::str::FromStr;

use log::warn;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityDecl, RelationGraph, ViewDecl};
use crate::numerics::Matrix;
use crate::seed::{rng_for, stream};

/// Entity–view wiring of a synthetic dataset. The first view is the center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// `x1(e1,e2)`, `x2(e1,e3)`
    MultiView,
    /// `x1(e1,e2)`, `x2(e1,e3)`, `x3(e4,e2)`
    Recommendation,
    /// `x1(e1,e2)`, `x2(e1,e3)`, `x3(e1,e4)`, `x4(e5,e2)`, `x5(e6,e3)`
    Augmented,
}

impl Topology {
    /// 1-based `(row, col)` entity numbers per view.
    pub fn pairs(self) -> &'static [(usize, usize)] {
        match self {
            Topology::MultiView => &[(1, 2), (1, 3)],
            Topology::Recommendation => &[(1, 2), (1, 3), (4, 2)],
            Topology::Augmented => &[(1, 2), (1, 3), (1, 4), (5, 2), (6, 3)],
        }
    }

    pub fn entity_count(self) -> usize {
        match self {
            Topology::MultiView => 3,
            Topology::Recommendation => 4,
            Topology::Augmented => 6,
        }
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi-view" => Ok(Self::MultiView),
            "recommendation" => Ok(Self::Recommendation),
            "augmented" => Ok(Self::Augmented),
            other => Err(Error::Domain(format!("unknown topology `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub topology: Topology,
    pub sizes: Vec<usize>,
    pub rank: usize,
    /// `(view id, target zero fraction)`, imparted in order.
    #[serde(default)]
    pub sparsity: Vec<(String, f64)>,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(topology: Topology, sizes: &[usize], rank: usize, seed: u64) -> Self {
        Self {
            topology,
            sizes: sizes.to_vec(),
            rank,
            sparsity: Vec::new(),
            seed,
        }
    }

    pub fn with_sparsity(mut self, view: &str, target: f64) -> Self {
        self.sparsity.push((view.to_string(), target));
        self
    }

    /// Fixed dimensions 1000/2000/200/400 divided by `scale`, center sparsity `level`.
    pub fn sparsity_preset(level: f64, scale: usize, rank: usize, seed: u64) -> Self {
        let s = scale.max(1);
        Self::new(Topology::Recommendation, &[1000 / s, 2000 / s, 200 / s, 400 / s], rank, seed)
            .with_sparsity("x1", level)
    }

    /// Base dimensions 400/800/80/160 times `multiplier`, divided by `scale`.
    pub fn size_preset(multiplier: usize, scale: usize, rank: usize, seed: u64) -> Self {
        let s = scale.max(1);
        let dims: Vec<usize> = [400, 800, 80, 160].iter().map(|d| d * multiplier / s).collect();
        Self::new(Topology::Recommendation, &dims, rank, seed)
    }

    /// `n = 2000, u = 200, v = 400` and `m = n·(1 − ratio)`, divided by `scale`.
    pub fn shape_preset(imbalance: f64, scale: usize, rank: usize, seed: u64) -> Self {
        let s = scale.max(1);
        let n = 2000 / s;
        let m = ((n as f64) * (1.0 - imbalance)).round() as usize;
        Self::new(Topology::Recommendation, &[m, n, 200 / s, 400 / s], rank, seed)
    }

    /// Entity sizes 1000/2000/20/150/300/250 divided by `scale`.
    pub fn augmented_preset(scale: usize, rank: usize, seed: u64) -> Self {
        let s = scale.max(1);
        let dims: Vec<usize> = [1000, 2000, 20, 150, 300, 250].iter().map(|d| (d / s).max(1)).collect();
        Self::new(Topology::Augmented, &dims, rank, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() != self.topology.entity_count() {
            return Err(Error::Domain(format!(
                "{:?} needs {} entity sizes, got {}",
                self.topology,
                self.topology.entity_count(),
                self.sizes.len()
            )));
        }
        if self.rank == 0 || self.sizes.contains(&0) {
            return Err(Error::Domain("sizes and rank must be positive".into()));
        }
        for (view, t) in &self.sparsity {
            if !(0.0..1.0).contains(t) {
                return Err(Error::Domain(format!("sparsity {t} for `{view}` not in [0, 1)")));
            }
        }
        if let Some(s) = self.sizes.iter().find(|s| **s < self.rank) {
            warn!("entity size {s} is below the planted rank {}", self.rank);
        }
        Ok(())
    }
}

/// Planted factors, one per entity, non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFactors {
    pub topology: Topology,
    pub factors: Vec<Matrix>,
}

impl SyntheticFactors {
    pub fn entity_id(i: usize) -> String {
        format!("e{}", i + 1)
    }

    pub fn view_id(m: usize) -> String {
        format!("x{}", m + 1)
    }

    /// 0-based entity indices of `view`.
    pub fn view_ends(&self, view: &str) -> Result<(usize, usize)> {
        let pairs = self.topology.pairs();
        (0..pairs.len())
            .find(|m| Self::view_id(*m) == view)
            .map(|m| (pairs[m].0 - 1, pairs[m].1 - 1))
            .ok_or_else(|| Error::Lookup { kind: "view", id: view.to_string() })
    }

    pub fn view(&self, view: &str) -> Result<Matrix> {
        let (r, c) = self.view_ends(view)?;
        Ok(self.factors[r].dot(&self.factors[c].t()))
    }

    pub fn zero_fraction(&self, view: &str) -> Result<f64> {
        let (r, c) = self.view_ends(view)?;
        Ok(SupportMasks::new(&self.factors[r]).zero_fraction(&SupportMasks::new(&self.factors[c])))
    }

    /// Zero random factor entries in blocks of 1% of the factor until the
    /// view's zero fraction reaches `target`, alternating between the row
    /// and column factor. A block that overshoots by more than 0.02 is
    /// undone and retried at half size. Returns the achieved fraction.
    pub fn impart_sparsity(&mut self, view: &str, target: f64, seed: u64) -> Result<f64> {
        if !(0.0..1.0).contains(&target) {
            return Err(Error::Domain(format!("sparsity target {target} not in [0, 1)")));
        }
        let (r, c) = self.view_ends(view)?;
        let mut rng = rng_for(seed, stream::SYNTH_SPARSITY);
        let mut masks = [SupportMasks::new(&self.factors[r]), SupportMasks::new(&self.factors[c])];
        let ends = [r, c];
        let mut frac = masks[0].zero_fraction(&masks[1]);
        let mut block = [0usize; 2];
        for side in 0..2 {
            block[side] = (self.factors[ends[side]].len() / 100).max(1);
        }
        let mut side = 0;
        let mut stalled = 0;
        while frac < target {
            let f = &self.factors[ends[side]];
            let live: Vec<(usize, usize)> = f
                .indexed_iter()
                .filter(|(_, v)| **v != 0.0)
                .map(|(ij, _)| ij)
                .collect();
            if live.is_empty() {
                stalled += 1;
                if stalled >= 2 {
                    warn!("sparsity target {target} unreachable for `{view}`; reached {frac}");
                    break;
                }
                side = 1 - side;
                continue;
            }
            stalled = 0;
            let take = block[side].min(live.len());
            let chosen: Vec<(usize, usize)> =
                sample(&mut rng, live.len(), take).into_iter().map(|i| live[i]).collect();

            let mut trial = masks[side].clone();
            for (i, k) in &chosen {
                trial.clear(*i, *k);
            }
            let next = if side == 0 {
                trial.zero_fraction(&masks[1])
            } else {
                masks[0].zero_fraction(&trial)
            };
            if next > target + 0.02 && take > 1 {
                block[side] = (take / 2).max(1);
                continue;
            }
            let fm = &mut self.factors[ends[side]];
            for (i, k) in chosen {
                fm[[i, k]] = 0.0;
            }
            masks[side] = trial;
            frac = next;
            side = 1 - side;
        }
        if frac > target + 0.02 {
            warn!("sparsity for `{view}` overshot: {frac} vs target {target}");
        }
        Ok(frac)
    }

    pub fn to_graph(&self) -> RelationGraph {
        let entities = self
            .factors
            .iter()
            .enumerate()
            .map(|(i, f)| EntityDecl::new(Self::entity_id(i), f.nrows()))
            .collect();
        let views = self
            .topology
            .pairs()
            .iter()
            .enumerate()
            .map(|(m, (r, c))| {
                let data = self.factors[r - 1].dot(&self.factors[c - 1].t());
                ViewDecl::new(Self::view_id(m), Self::entity_id(r - 1), Self::entity_id(c - 1), data)
            })
            .collect();
        RelationGraph::new(entities, views).with_center("x1")
    }
}

/// Uniform(0, 1) factors of shape `size × rank` per entity.
pub fn generate_factors(spec: &SyntheticSpec) -> Result<SyntheticFactors> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, stream::SYNTH_FACTORS);
    let factors = spec
        .sizes
        .iter()
        .map(|n| Matrix::from_shape_simple_fn((*n, spec.rank), || rng.random::<f64>()))
        .collect();
    Ok(SyntheticFactors { topology: spec.topology, factors })
}

/// Factors, sparsity and the wired graph in one call.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(RelationGraph, SyntheticFactors)> {
    let mut f = generate_factors(spec)?;
    for (i, (view, target)) in spec.sparsity.iter().enumerate() {
        f.impart_sparsity(view, *target, crate::seed::child_seed(spec.seed, i as u64))?;
    }
    Ok((f.to_graph(), f))
}

/// Per-row bitsets of non-zero factor columns. A product entry is zero
/// exactly when the two supports are disjoint (factors are non-negative).
#[derive(Debug, Clone)]
struct SupportMasks {
    words: usize,
    bits: Vec<u64>,
}

impl SupportMasks {
    fn new(f: &Matrix) -> Self {
        let words = f.ncols().div_ceil(64).max(1);
        let mut bits = vec![0u64; f.nrows() * words];
        for ((i, k), v) in f.indexed_iter() {
            if *v != 0.0 {
                bits[i * words + k / 64] |= 1 << (k % 64);
            }
        }
        Self { words, bits }
    }

    fn rows(&self) -> usize {
        self.bits.len() / self.words
    }

    fn clear(&mut self, i: usize, k: usize) {
        self.bits[i * self.words + k / 64] &= !(1 << (k % 64));
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    fn zero_fraction(&self, other: &SupportMasks) -> f64 {
        let (m, n) = (self.rows(), other.rows());
        if m * n == 0 {
            return 0.0;
        }
        let mut zeros = 0usize;
        for i in 0..m {
            let a = self.row(i);
            if a.iter().all(|w| *w == 0) {
                zeros += n;
                continue;
            }
            for j in 0..n {
                if a.iter().zip(other.row(j)).all(|(x, y)| x & y == 0) {
                    zeros += 1;
                }
            }
        }
        zeros as f64 / (m * n) as f64
    }
}
