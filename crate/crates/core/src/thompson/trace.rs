use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    Reduce,
    GeneralSplit,
    Dominance,
    Strict,
    Complete,
    ZeroDiag,
    SchurHorn,
    /// The closed-form block that ends a halving iteration.
    Terminal,
}

/// One pipeline stage. Cell indices are global rank positions: cell `k`
/// carries the `k`-th largest value of `|A|` and of `μ(T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub kind: StageKind,
    /// Nesting depth inside the pipeline.
    pub depth: usize,
    /// Number of cells the stage acts on.
    pub block: usize,
    /// Named cell sets, e.g. `X`, `Y`, `Z`, `P`, `Q`, `I0`.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cells: BTreeMap<String, Vec<usize>>,
    /// Normalized traces of the stage projections.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub projection_traces: BTreeMap<String, f64>,
    /// Diagonal defect this stage leaves behind, summed over its cells.
    pub truncation: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    /// Halving step index inside a complete-dominance solve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    /// `‖I - U_step‖₂` for the left step unitary, in the normalized 2-norm of
    /// the full algebra.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub increment_l2: Option<f64>,
    /// `τ(|I - U_step|)`, the normalized trace norm of the same increment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub increment_l1: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl StageRecord {
    pub fn new(kind: StageKind, depth: usize, block: usize) -> Self {
        Self {
            kind,
            depth,
            block,
            cells: BTreeMap::new(),
            projection_traces: BTreeMap::new(),
            truncation: 0.0,
            t0: None,
            level: None,
            increment_l2: None,
            increment_l1: None,
            notes: Vec::new(),
        }
    }

    pub fn with_cells(mut self, name: &str, cells: Vec<usize>) -> Self {
        self.cells.insert(name.to_string(), cells);
        self
    }

    pub fn note(mut self, text: impl Into<String>) -> Self {
        self.notes.push(text.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stages: Vec<StageRecord>,
}

impl StageTrace {
    pub fn push(&mut self, record: StageRecord) {
        self.stages.push(record);
    }

    pub fn of_kind(&self, kind: StageKind) -> impl Iterator<Item = &StageRecord> {
        self.stages.iter().filter(move |r| r.kind == kind)
    }

    pub fn count(&self, kind: StageKind) -> usize {
        self.of_kind(kind).count()
    }

    pub fn total_truncation(&self) -> f64 {
        self.stages.iter().map(|r| r.truncation).sum()
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }
}
