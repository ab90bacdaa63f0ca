//! Entity–matrix relationship graph and the per-entity concatenated inputs.
//!
//! Every view relates a row entity to a column entity. For each entity, the
//! views it takes part in are stacked column-wise into one matrix whose rows
//! are that entity's instances; views where the entity is the column side
//! contribute their transpose.

use std::collections::{HashMap, HashSet};
use std::fmt;

use ndarray::{s, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Datatype {
    #[default]
    Real,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityDecl {
    pub id: String,
    pub size: usize,
}

impl EntityDecl {
    pub fn new(id: impl Into<String>, size: usize) -> Self {
        Self { id: id.into(), size }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewDecl {
    pub id: String,
    pub row_entity: String,
    pub col_entity: String,
    pub data: RealMatrix,
    pub datatype: Datatype,
}

impl ViewDecl {
    pub fn new(
        id: impl Into<String>,
        row_entity: impl Into<String>,
        col_entity: impl Into<String>,
        data: impl Into<RealMatrix>,
    ) -> Self {
        Self {
            id: id.into(),
            row_entity: row_entity.into(),
            col_entity: col_entity.into(),
            data: data.into(),
            datatype: Datatype::Real,
        }
    }

    pub fn with_datatype(mut self, datatype: Datatype) -> Self {
        self.datatype = datatype;
        self
    }

    pub fn touches(&self, entity: &str) -> bool {
        self.row_entity == entity || self.col_entity == entity
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationGraph {
    pub entities: Vec<EntityDecl>,
    pub views: Vec<ViewDecl>,
    pub center_view: Option<String>,
}

impl RelationGraph {
    pub fn new(entities: Vec<EntityDecl>, views: Vec<ViewDecl>) -> Self {
        Self {
            entities,
            views,
            center_view: None,
        }
    }

    pub fn with_center(mut self, view: impl Into<String>) -> Self {
        self.center_view = Some(view.into());
        self
    }

    pub fn entity(&self, id: &str) -> Result<&EntityDecl> {
        self.entities
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::Lookup {
                kind: "entity",
                id: id.to_string(),
            })
    }

    pub fn entity_index(&self, id: &str) -> Result<usize> {
        self.entities
            .iter()
            .position(|e| e.id == id)
            .ok_or_else(|| Error::Lookup {
                kind: "entity",
                id: id.to_string(),
            })
    }

    pub fn view(&self, id: &str) -> Result<&ViewDecl> {
        self.views.iter().find(|v| v.id == id).ok_or_else(|| Error::Lookup {
            kind: "view",
            id: id.to_string(),
        })
    }

    pub fn view_index(&self, id: &str) -> Result<usize> {
        self.views
            .iter()
            .position(|v| v.id == id)
            .ok_or_else(|| Error::Lookup {
                kind: "view",
                id: id.to_string(),
            })
    }

    pub fn view_mut(&mut self, id: &str) -> Result<&mut ViewDecl> {
        self.views
            .iter_mut()
            .find(|v| v.id == id)
            .ok_or_else(|| Error::Lookup {
                kind: "view",
                id: id.to_string(),
            })
    }

    /// Views incident to `entity`, in declaration order.
    pub fn views_of<'a>(&'a self, entity: &'a str) -> impl Iterator<Item = &'a ViewDecl> + 'a {
        self.views.iter().filter(move |v| v.touches(entity))
    }

    /// The view to evaluate: the declared center, else the first view.
    pub fn center(&self) -> Option<&ViewDecl> {
        match &self.center_view {
            Some(id) => self.view(id).ok(),
            None => self.views.first(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    DuplicateEntityId { id: String },
    DuplicateViewId { id: String },
    ZeroSizeEntity { entity: String },
    DanglingId { view: String, id: String },
    SelfRelation { view: String },
    DimensionMismatch {
        view: String,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    DuplicatePair { first: String, second: String },
    IsolatedEntity { entity: String },
    UnknownCenter { id: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::DuplicateEntityId { id } => write!(f, "duplicate entity id `{id}`"),
            Finding::DuplicateViewId { id } => write!(f, "duplicate view id `{id}`"),
            Finding::ZeroSizeEntity { entity } => write!(f, "entity `{entity}` has size 0"),
            Finding::DanglingId { view, id } => {
                write!(f, "view `{view}` references unknown entity `{id}`")
            }
            Finding::SelfRelation { view } => {
                write!(f, "view `{view}` relates an entity to itself")
            }
            Finding::DimensionMismatch {
                view,
                axis,
                expected,
                actual,
            } => write!(
                f,
                "view `{view}` has {actual} {axis} but its entity has size {expected}"
            ),
            Finding::DuplicatePair { first, second } => {
                write!(f, "views `{first}` and `{second}` relate the same entity pair")
            }
            Finding::IsolatedEntity { entity } => {
                write!(f, "entity `{entity}` is not part of any view")
            }
            Finding::UnknownCenter { id } => write!(f, "center view `{id}` is not declared"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidGraph(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.findings.iter().map(|x| x.to_string()).collect();
        f.write_str(&msgs.join("; "))
    }
}

pub fn validate_graph(g: &RelationGraph) -> ValidationReport {
    let mut findings = Vec::new();
    let mut sizes = HashMap::new();
    for e in &g.entities {
        if sizes.insert(e.id.as_str(), e.size).is_some() {
            findings.push(Finding::DuplicateEntityId { id: e.id.clone() });
        }
        if e.size == 0 {
            findings.push(Finding::ZeroSizeEntity {
                entity: e.id.clone(),
            });
        }
    }

    let mut view_ids = HashSet::new();
    let mut pairs: HashMap<(String, String), String> = HashMap::new();
    for v in &g.views {
        if !view_ids.insert(v.id.as_str()) {
            findings.push(Finding::DuplicateViewId { id: v.id.clone() });
        }
        if v.row_entity == v.col_entity {
            findings.push(Finding::SelfRelation { view: v.id.clone() });
        }
        let (rows, cols) = v.data.shape();
        for (id, axis, actual) in [(&v.row_entity, "rows", rows), (&v.col_entity, "cols", cols)] {
            match sizes.get(id.as_str()) {
                None => findings.push(Finding::DanglingId {
                    view: v.id.clone(),
                    id: id.clone(),
                }),
                Some(&expected) if expected != actual => {
                    findings.push(Finding::DimensionMismatch {
                        view: v.id.clone(),
                        axis,
                        expected,
                        actual,
                    })
                }
                _ => {}
            }
        }
        let key = if v.row_entity <= v.col_entity {
            (v.row_entity.clone(), v.col_entity.clone())
        } else {
            (v.col_entity.clone(), v.row_entity.clone())
        };
        if let Some(first) = pairs.get(&key) {
            findings.push(Finding::DuplicatePair {
                first: first.clone(),
                second: v.id.clone(),
            });
        } else {
            pairs.insert(key, v.id.clone());
        }
    }

    for e in &g.entities {
        if !g.views.iter().any(|v| v.touches(&e.id)) {
            findings.push(Finding::IsolatedEntity {
                entity: e.id.clone(),
            });
        }
    }
    if let Some(c) = &g.center_view {
        if !view_ids.contains(c.as_str()) {
            findings.push(Finding::UnknownCenter { id: c.clone() });
        }
    }
    ValidationReport { findings }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Segment {
    pub view: String,
    pub transposed: bool,
    pub col_offset: usize,
    pub col_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcatenatedMatrix {
    pub entity: String,
    pub data: Matrix,
    pub segments: Vec<Segment>,
}

impl ConcatenatedMatrix {
    /// Recover the original orientation of `view` from its segment.
    pub fn view_block(&self, view: &str) -> Option<Matrix> {
        let seg = self.segments.iter().find(|s| s.view == view)?;
        let block = self
            .data
            .slice(s![.., seg.col_offset..seg.col_offset + seg.col_count]);
        Some(if seg.transposed {
            block.t().to_owned()
        } else {
            block.to_owned()
        })
    }
}

pub fn build_concatenated_matrix(g: &RelationGraph, entity: &str) -> Result<ConcatenatedMatrix> {
    let decl = g.entity(entity)?;
    let incident: Vec<&ViewDecl> = g.views_of(entity).collect();
    if incident.is_empty() {
        return Err(Error::Topology(format!(
            "entity `{entity}` appears in no view"
        )));
    }
    let first_type = incident[0].datatype;
    if incident.iter().any(|v| v.datatype != first_type) {
        log::warn!("entity `{entity}` concatenates views of mixed datatypes");
    }

    let mut blocks = Vec::with_capacity(incident.len());
    let mut segments = Vec::with_capacity(incident.len());
    let mut offset = 0;
    for v in incident {
        let dense = v.data.to_dense();
        let transposed = v.row_entity != entity;
        let block = if transposed { dense.reversed_axes() } else { dense };
        if block.nrows() != decl.size {
            return Err(Error::Shape {
                op: "build_concatenated_matrix",
                left: (decl.size, 0),
                right: block.dim(),
            });
        }
        segments.push(Segment {
            view: v.id.clone(),
            transposed,
            col_offset: offset,
            col_count: block.ncols(),
        });
        offset += block.ncols();
        blocks.push(block);
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    let data = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(ConcatenatedMatrix {
        entity: entity.to_string(),
        data,
        segments,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntityDiagnostics {
    pub entity: String,
    pub size: usize,
    /// `(p, q)`: rows and columns of the concatenated matrix.
    pub shape: (usize, usize),
    pub interactions: usize,
    pub sparsity: f64,
    pub segment_sparsity: Vec<(String, f64)>,
    pub risk: Option<FitRisk>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitRisk {
    /// Many features, few samples (q ≫ p).
    Underfit,
    /// Many samples, few features (p ≫ q).
    Overfit,
}

/// Aspect ratio beyond which an entity shape is flagged.
pub const SHAPE_RISK_RATIO: f64 = 10.0;

pub fn entity_diagnostics(g: &RelationGraph, entity: &str) -> Result<EntityDiagnostics> {
    let c = build_concatenated_matrix(g, entity)?;
    let (p, q) = c.data.dim();
    let zero_frac = |m: ndarray::ArrayView2<f64>| {
        if m.is_empty() {
            1.0
        } else {
            m.iter().filter(|v| **v == 0.0).count() as f64 / m.len() as f64
        }
    };
    let segment_sparsity = c
        .segments
        .iter()
        .map(|s| {
            let block = c.data.slice(s![.., s.col_offset..s.col_offset + s.col_count]);
            (s.view.clone(), zero_frac(block))
        })
        .collect();
    let risk = if q as f64 > SHAPE_RISK_RATIO * p as f64 {
        Some(FitRisk::Underfit)
    } else if p as f64 > SHAPE_RISK_RATIO * q as f64 {
        Some(FitRisk::Overfit)
    } else {
        None
    };
    Ok(EntityDiagnostics {
        entity: entity.to_string(),
        size: p,
        shape: (p, q),
        interactions: c.segments.len(),
        sparsity: zero_frac(c.data.view()),
        segment_sparsity,
        risk,
    })
}

/// `1 − min(m, n) / max(m, n)`.
pub fn imbalance_ratio(m: usize, n: usize) -> Result<f64> {
    if m == 0 || n == 0 {
        return Err(Error::Domain(format!(
            "imbalance ratio needs non-zero dimensions, got {m}x{n}"
        )));
    }
    Ok(1.0 - m.min(n) as f64 / m.max(n) as f64)
}

/// Divide every view by its maximum absolute value. Returns the factors so
/// reconstructions can be mapped back (`original = scaled * factor`).
/// All-zero views keep factor 1.
pub fn max_abs_scale(g: &RelationGraph) -> (RelationGraph, Vec<f64>) {
    let mut out = g.clone();
    let mut factors = Vec::with_capacity(g.views.len());
    for v in &mut out.views {
        let dense = v.data.to_dense();
        let m = dense.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let factor = if m > 0.0 { m } else { 1.0 };
        v.data = RealMatrix::Dense(dense / factor);
        factors.push(factor);
    }
    (out, factors)
}
