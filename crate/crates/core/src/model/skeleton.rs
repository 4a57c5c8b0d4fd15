use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names of the skeletons shipped with the crate.
pub const BUILTIN_SKELETONS: &[&str] =
    &["coco17", "coco17-dense", "posetrack17", "car24", "animal20"];

const COCO17_JSON: &str = include_str!("../../data/skeletons/coco17.json");
const COCO17_DENSE_JSON: &str = include_str!("../../data/skeletons/coco17-dense.json");
const POSETRACK17_JSON: &str = include_str!("../../data/skeletons/posetrack17.json");
const CAR24_JSON: &str = include_str!("../../data/skeletons/car24.json");
const ANIMAL20_JSON: &str = include_str!("../../data/skeletons/animal20.json");

/// A directed association between two keypoint types. `dense` edges are
/// longer-range redundancies that only participate in decoding when
/// explicitly enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge(pub usize, pub usize, pub bool);

impl Edge {
    pub fn source(&self) -> usize {
        self.0
    }
    pub fn target(&self) -> usize {
        self.1
    }
    pub fn is_dense(&self) -> bool {
        self.2
    }
}

/// A keypoint vocabulary with its spatial and temporal association structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub name: String,
    pub keypoints: Vec<String>,
    pub sigmas: Vec<f32>,
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub temporal_edges: Vec<usize>,
}

/// One violated skeleton invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    SelfLoop { edge: usize },
    DuplicateEdge { edge: usize },
    EdgeIndexOutOfBounds { edge: usize },
    TemporalIndexOutOfBounds { index: usize },
    Disconnected { keypoint: usize },
    SigmaCountMismatch { sigmas: usize, keypoints: usize },
    NonPositiveSigma { keypoint: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SelfLoop { edge } => write!(f, "edge {edge} is a self-loop"),
            Violation::DuplicateEdge { edge } => write!(f, "edge {edge} duplicates an earlier edge"),
            Violation::EdgeIndexOutOfBounds { edge } => {
                write!(f, "edge {edge} references a keypoint index out of bounds")
            }
            Violation::TemporalIndexOutOfBounds { index } => {
                write!(f, "temporal edge {index} references a keypoint index out of bounds")
            }
            Violation::Disconnected { keypoint } => write!(
                f,
                "keypoint {keypoint} is unreachable in the non-dense edge subgraph"
            ),
            Violation::SigmaCountMismatch { sigmas, keypoints } => {
                write!(f, "{sigmas} sigmas for {keypoints} keypoints")
            }
            Violation::NonPositiveSigma { keypoint } => {
                write!(f, "sigma of keypoint {keypoint} is not positive")
            }
        }
    }
}

impl Skeleton {
    pub fn n_keypoints(&self) -> usize {
        self.keypoints.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges with the dense flag cleared.
    pub fn sparse_edges(&self) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(|(_, e)| !e.is_dense())
    }

    pub fn keypoint_index(&self, name: &str) -> Option<usize> {
        self.keypoints.iter().position(|k| k == name)
    }

    /// Parse and validate a skeleton from its JSON representation.
    pub fn from_json_str(json: &str) -> Result<Skeleton> {
        let skeleton: Skeleton = serde_json::from_str(json)?;
        let violations = skeleton.validate();
        if violations.is_empty() {
            Ok(skeleton)
        } else {
            let list: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Err(Error::Domain(format!(
                "skeleton '{}' is invalid: {}",
                skeleton.name,
                list.join("; ")
            )))
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Skeleton> {
        let text = std::fs::read_to_string(path)?;
        Skeleton::from_json_str(&text)
    }

    /// Check every structural invariant and return all violations found.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        let k = self.n_keypoints();

        if self.sigmas.len() != k {
            violations.push(Violation::SigmaCountMismatch {
                sigmas: self.sigmas.len(),
                keypoints: k,
            });
        }
        for (i, &s) in self.sigmas.iter().enumerate() {
            if !(s > 0.0) {
                violations.push(Violation::NonPositiveSigma { keypoint: i });
            }
        }

        let mut seen = std::collections::BTreeSet::new();
        for (i, e) in self.edges.iter().enumerate() {
            if e.source() >= k || e.target() >= k {
                violations.push(Violation::EdgeIndexOutOfBounds { edge: i });
                continue;
            }
            if e.source() == e.target() {
                violations.push(Violation::SelfLoop { edge: i });
            }
            if !seen.insert((e.source(), e.target())) {
                violations.push(Violation::DuplicateEdge { edge: i });
            }
        }
        for (i, &t) in self.temporal_edges.iter().enumerate() {
            if t >= k {
                violations.push(Violation::TemporalIndexOutOfBounds { index: i });
            }
        }

        // Connectivity over the non-dense subgraph, from keypoint 0.
        if k > 0 {
            let mut reachable = vec![false; k];
            let mut stack = vec![0usize];
            reachable[0] = true;
            while let Some(node) = stack.pop() {
                for e in self.edges.iter().filter(|e| !e.is_dense()) {
                    if e.source() >= k || e.target() >= k {
                        continue;
                    }
                    let other = if e.source() == node {
                        e.target()
                    } else if e.target() == node {
                        e.source()
                    } else {
                        continue;
                    };
                    if !reachable[other] {
                        reachable[other] = true;
                        stack.push(other);
                    }
                }
            }
            for (i, &r) in reachable.iter().enumerate() {
                if !r {
                    violations.push(Violation::Disconnected { keypoint: i });
                }
            }
        }

        violations
    }
}

/// Load one of the skeletons listed in [`BUILTIN_SKELETONS`].
pub fn builtin_skeleton(name: &str) -> Result<Skeleton> {
    let json = match name {
        "coco17" => COCO17_JSON,
        "coco17-dense" => COCO17_DENSE_JSON,
        "posetrack17" => POSETRACK17_JSON,
        "car24" => CAR24_JSON,
        "animal20" => ANIMAL20_JSON,
        _ => {
            return Err(Error::NotFound(format!(
                "unknown skeleton '{name}' (builtins: {})",
                BUILTIN_SKELETONS.join(", ")
            )))
        }
    };
    Skeleton::from_json_str(json)
}
