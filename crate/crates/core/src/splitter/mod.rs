//! Module graph, split points, transfer sets and head/tail partitions.
//!
//! Split point `k` means "the first `k` steps run on the device". `k = 0`
//! ships the raw point cloud; `k = steps` is monolithic device execution.
//! Transfer sets are derived from the declared step dependencies.

mod latency;

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::detector::pipeline::POINTS;
use crate::detector::{ArchConfig, DetectorError, Step};

pub use latency::{
    estimate_latency, plan_best_split, report_reductions, LatencyEstimate, LinkModel, Profile, StepCost,
    RESULT_RETURN_BYTES,
};

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("split index {index} out of range 0..={max}")]
    Index { index: usize, max: usize },
    #[error("unknown split label {0:?}")]
    UnknownLabel(String),
    #[error("invalid module graph: {0}")]
    Config(String),
    #[error("profile does not cover {0}")]
    MissingProfile(String),
    #[error("baseline must be positive, got {0}")]
    Domain(f64),
    #[error("invalid link model: {0}")]
    Link(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

/// One step of the graph with the tensors it reads and writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleNode {
    pub id: String,
    pub consumes: Vec<String>,
    pub produces: Vec<String>,
}

/// Ordered steps and their tensor dependencies; `points` is the only source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleGraph {
    nodes: Vec<ModuleNode>,
}

/// Label of split `k` over `steps`: `raw_points` for 0, `after_<step>` otherwise.
pub fn split_label(steps: &[impl AsRef<str>], k: usize) -> String {
    if k == 0 {
        "raw_points".to_owned()
    } else {
        format!("after_{}", steps[k - 1].as_ref())
    }
}

impl ModuleGraph {
    pub fn new(nodes: Vec<ModuleNode>) -> Result<Self, SplitError> {
        let g = Self { nodes };
        g.validate()?;
        Ok(g)
    }

    pub fn nodes(&self) -> &[ModuleNode] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&ModuleNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn step_ids(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Every consumed tensor is `points` or produced by an earlier step, and
    /// step ids are unique.
    pub fn validate(&self) -> Result<(), SplitError> {
        let mut available: BTreeSet<&str> = BTreeSet::from([POINTS]);
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(SplitError::Config(format!("duplicate step {:?}", n.id)));
            }
            for c in &n.consumes {
                if !available.contains(c.as_str()) {
                    return Err(SplitError::Config(format!("step {:?} consumes {c:?} before it is produced", n.id)));
                }
            }
            available.extend(n.produces.iter().map(String::as_str));
        }
        Ok(())
    }

    pub fn split_point(&self, index: usize) -> Result<SplitPoint, SplitError> {
        if index > self.nodes.len() {
            return Err(SplitError::Index { index, max: self.nodes.len() });
        }
        Ok(SplitPoint { index, label: split_label(&self.step_ids(), index) })
    }

    pub fn split_points(&self) -> Vec<SplitPoint> {
        (0..=self.nodes.len()).map(|k| self.split_point(k).unwrap()).collect()
    }

    /// Resolves a label; `monolithic` is accepted for the last split.
    pub fn split_by_label(&self, label: &str) -> Result<SplitPoint, SplitError> {
        if label == "monolithic" {
            return self.split_point(self.nodes.len());
        }
        self.split_points()
            .into_iter()
            .find(|s| s.label == label)
            .ok_or_else(|| SplitError::UnknownLabel(label.to_owned()))
    }

    fn check(&self, s: &SplitPoint) -> Result<usize, SplitError> {
        if s.index > self.nodes.len() {
            return Err(SplitError::Index { index: s.index, max: self.nodes.len() });
        }
        Ok(s.index)
    }

    /// Tensors live at the boundary (the source or produced by the head) that
    /// some tail step reads, in production order.
    pub fn transfer_set(&self, s: &SplitPoint) -> Result<Vec<String>, SplitError> {
        let k = self.check(s)?;
        let (head, tail) = self.nodes.split_at(k);
        let mut produced: Vec<&str> = vec![POINTS];
        for n in head {
            for p in &n.produces {
                // Re-produced tensors move to their latest position.
                produced.retain(|q| q != p);
                produced.push(p);
            }
        }
        let needed: BTreeSet<&str> = {
            // A tail step may also consume something produced earlier in the tail.
            let mut needed = BTreeSet::new();
            let mut made_in_tail: BTreeSet<&str> = BTreeSet::new();
            for n in tail {
                for c in &n.consumes {
                    if !made_in_tail.contains(c.as_str()) {
                        needed.insert(c.as_str());
                    }
                }
                made_in_tail.extend(n.produces.iter().map(String::as_str));
            }
            needed
        };
        Ok(produced.into_iter().filter(|t| needed.contains(t)).map(str::to_owned).collect())
    }

    pub fn partition(&self, s: &SplitPoint) -> Result<SplitPlan, SplitError> {
        let k = self.check(s)?;
        let transfer_set = self.transfer_set(s)?;
        Ok(SplitPlan {
            split: s.clone(),
            head_steps: self.nodes[..k].iter().map(|n| n.id.clone()).collect(),
            tail_steps: self.nodes[k..].iter().map(|n| n.id.clone()).collect(),
            transfer_set,
        })
    }
}

/// The detector's step list as a graph.
pub fn build_module_graph(arch: &ArchConfig) -> Result<ModuleGraph, SplitError> {
    arch.validate()?;
    let nodes = Step::ALL
        .iter()
        .map(|s| ModuleNode {
            id: s.id().to_owned(),
            consumes: s.consumes().iter().map(|t| t.to_string()).collect(),
            produces: s.produces().iter().map(|t| t.to_string()).collect(),
        })
        .collect();
    ModuleGraph::new(nodes)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SplitPoint {
    pub index: usize,
    pub label: String,
}

impl fmt::Display for SplitPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (k={})", self.label, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub split: SplitPoint,
    pub head_steps: Vec<String>,
    pub tail_steps: Vec<String>,
    pub transfer_set: Vec<String>,
}

impl SplitPlan {
    fn steps(ids: &[String]) -> Result<Vec<Step>, SplitError> {
        ids.iter()
            .map(|id| Step::from_id(id).ok_or_else(|| SplitError::Config(format!("no executable step {id:?}"))))
            .collect()
    }

    pub fn head(&self) -> Result<Vec<Step>, SplitError> {
        Self::steps(&self.head_steps)
    }

    pub fn tail(&self) -> Result<Vec<Step>, SplitError> {
        Self::steps(&self.tail_steps)
    }

    pub fn is_monolithic(&self) -> bool {
        self.tail_steps.is_empty()
    }
}

/// The split patterns compared in sweeps: raw points, after VFE, after each backbone stage.
pub const STANDARD_SPLITS: [&str; 6] =
    ["raw_points", "after_vfe", "after_conv1", "after_conv2", "after_conv3", "after_conv4"];
