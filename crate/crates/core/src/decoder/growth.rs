//! Greedy pose growth over an association graph.
//!
//! The graph is generic over nodes so that a single-frame pose (one node
//! per keypoint type) and a two-frame spatio-temporal pose (two blocks of
//! nodes bridged by temporal edges) grow through the same machinery.

use std::collections::BinaryHeap;

use crate::fields::HrMap;
use crate::model::Keypoint;

use super::connection::{find_connection, find_connection_unchecked, AssocCell, Connection, Direction};
use super::DecoderConfig;

/// One association edge of the growth graph. `a_kp`/`b_kp` are the
/// keypoint types used for high-resolution lookups; unidirectional edges
/// are only decoded from `a` towards `b`.
pub struct GrowthEdge<'a> {
    pub a: usize,
    pub b: usize,
    pub a_kp: usize,
    pub b_kp: usize,
    pub cells: &'a [AssocCell],
    pub bidirectional: bool,
    pub dense: bool,
}

pub struct GrowthGraph<'a> {
    pub n_nodes: usize,
    pub edges: Vec<GrowthEdge<'a>>,
    incident: Vec<Vec<usize>>,
}

impl<'a> GrowthGraph<'a> {
    pub fn new(n_nodes: usize, edges: Vec<GrowthEdge<'a>>) -> Self {
        let mut incident = vec![Vec::new(); n_nodes];
        for (i, e) in edges.iter().enumerate() {
            incident[e.a].push(i);
            if e.bidirectional {
                incident[e.b].push(i);
            }
        }
        GrowthGraph {
            n_nodes,
            edges,
            incident,
        }
    }
}

struct Entry {
    score: f32,
    target: usize,
    source: usize,
    seq: u64,
    edge: usize,
    dir: Direction,
}

// Max-heap order: higher score first; ties prefer the smaller target node,
// then the smaller source node, then earlier insertion.
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.target.cmp(&self.target))
            .then_with(|| other.source.cmp(&self.source))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}

impl Eq for Entry {}

struct Grower<'a, 'g> {
    graph: &'g GrowthGraph<'a>,
    hr: Option<&'g HrMap>,
    stride: u32,
    cfg: &'g DecoderConfig,
}

impl<'a, 'g> Grower<'a, 'g> {
    /// Outgoing (edge, direction, target node, kp types) tuples from `node`
    /// whose target is still undetected.
    fn open_edges(
        &self,
        nodes: &[Keypoint],
        node: usize,
    ) -> Vec<(usize, Direction, usize, usize, usize)> {
        let mut out = Vec::new();
        for &ei in &self.graph.incident[node] {
            let edge = &self.graph.edges[ei];
            if edge.dense && !self.cfg.use_dense_edges {
                continue;
            }
            let (dir, target, source_kp, target_kp) = if edge.a == node {
                (Direction::Forward, edge.b, edge.a_kp, edge.b_kp)
            } else {
                (Direction::Backward, edge.a, edge.b_kp, edge.a_kp)
            };
            if nodes[target].is_detected() {
                continue;
            }
            out.push((ei, dir, target, source_kp, target_kp));
        }
        out
    }

    fn connect(
        &self,
        nodes: &[Keypoint],
        edge: usize,
        dir: Direction,
        source: usize,
        source_kp: usize,
        target_kp: usize,
    ) -> Option<Connection> {
        let src = &nodes[source];
        find_connection(
            (src.x, src.y),
            self.graph.edges[edge].cells,
            dir,
            self.hr,
            source_kp,
            target_kp,
            self.stride,
            self.cfg,
        )
    }

    fn accept(&self, nodes: &mut [Keypoint], target: usize, conn: &Connection) {
        nodes[target] = Keypoint {
            x: conn.x,
            y: conn.y,
            score: conn.score.clamp(0.0, 1.0),
            size: conn.size,
        };
    }
}

/// Grow detected nodes outwards until no connection can be made. Detected
/// nodes are never revised; a node, once claimed, is final.
///
/// With the frontier, candidate connections from every detected node sit in
/// a priority queue ordered by their future joint score and are re-validated
/// when popped. Without it, nodes are processed one at a time in score
/// order and each node's connections are made immediately.
pub fn grow(
    nodes: &mut [Keypoint],
    graph: &GrowthGraph,
    hr: Option<&HrMap>,
    stride: u32,
    cfg: &DecoderConfig,
) {
    let grower = Grower {
        graph,
        hr,
        stride,
        cfg,
    };
    if cfg.use_frontier {
        grow_frontier(nodes, &grower);
    } else {
        grow_serial(nodes, &grower);
    }
}

const REVALIDATE_EPS: f32 = 1e-6;

fn grow_frontier(nodes: &mut [Keypoint], grower: &Grower) {
    let mut heap: BinaryHeap<Entry> = BinaryHeap::new();
    let mut seq = 0u64;

    let push_from = |nodes: &[Keypoint], node: usize, heap: &mut BinaryHeap<Entry>, seq: &mut u64| {
        for (edge, dir, target, source_kp, target_kp) in grower.open_edges(nodes, node) {
            if let Some(conn) = grower.connect(nodes, edge, dir, node, source_kp, target_kp) {
                heap.push(Entry {
                    score: conn.score,
                    target,
                    source: node,
                    seq: *seq,
                    edge,
                    dir,
                });
                *seq += 1;
            }
        }
    };

    for node in 0..graph_len(grower) {
        if nodes[node].is_detected() {
            push_from(nodes, node, &mut heap, &mut seq);
        }
    }

    while let Some(entry) = heap.pop() {
        if nodes[entry.target].is_detected() {
            continue;
        }
        let edge = &grower.graph.edges[entry.edge];
        let (source_kp, target_kp) = match entry.dir {
            Direction::Forward => (edge.a_kp, edge.b_kp),
            Direction::Backward => (edge.b_kp, edge.a_kp),
        };
        // Re-validate on pop; a stale entry re-enters at its fresh score.
        let Some(conn) = grower.connect(nodes, entry.edge, entry.dir, entry.source, source_kp, target_kp)
        else {
            continue;
        };
        if conn.score + REVALIDATE_EPS < entry.score {
            heap.push(Entry {
                score: conn.score,
                target: entry.target,
                source: entry.source,
                seq,
                edge: entry.edge,
                dir: entry.dir,
            });
            seq += 1;
            continue;
        }
        grower.accept(nodes, entry.target, &conn);
        push_from(nodes, entry.target, &mut heap, &mut seq);
    }
}

fn graph_len(grower: &Grower) -> usize {
    grower.graph.n_nodes
}

fn grow_serial(nodes: &mut [Keypoint], grower: &Grower) {
    let n = grower.graph.n_nodes;
    let mut processed = vec![false; n];
    loop {
        let mut next: Option<usize> = None;
        for node in 0..n {
            if processed[node] || !nodes[node].is_detected() {
                continue;
            }
            match next {
                None => next = Some(node),
                Some(best) if nodes[node].score > nodes[best].score => next = Some(node),
                _ => {}
            }
        }
        let Some(node) = next else { break };
        for (edge, dir, target, source_kp, target_kp) in grower.open_edges(nodes, node) {
            if nodes[target].is_detected() {
                continue;
            }
            if let Some(conn) = grower.connect(nodes, edge, dir, node, source_kp, target_kp) {
                grower.accept(nodes, target, &conn);
            }
        }
        processed[node] = true;
    }
}

/// Fill undetected nodes from the best remaining evidence, ignoring the
/// reverse-matching gate. Filled keypoints get at least the floor score.
pub fn force_complete(
    nodes: &mut [Keypoint],
    relaxed_graph: &GrowthGraph,
    hr: Option<&HrMap>,
    stride: u32,
    cfg: &DecoderConfig,
) {
    const FLOOR: f32 = 0.001;
    loop {
        let mut filled_any = false;
        for edge in relaxed_graph.edges.iter() {
            let directions: &[(Direction, usize, usize, usize, usize)] = &[
                (Direction::Forward, edge.a, edge.b, edge.a_kp, edge.b_kp),
                (Direction::Backward, edge.b, edge.a, edge.b_kp, edge.a_kp),
            ];
            for &(dir, source, target, source_kp, target_kp) in directions {
                if dir == Direction::Backward && !edge.bidirectional {
                    continue;
                }
                if !nodes[source].is_detected() || nodes[target].is_detected() {
                    continue;
                }
                let src = &nodes[source];
                if let Some(conn) = find_connection_unchecked(
                    (src.x, src.y),
                    edge.cells,
                    dir,
                    hr,
                    source_kp,
                    target_kp,
                    stride,
                    cfg,
                ) {
                    nodes[target] = Keypoint {
                        x: conn.x,
                        y: conn.y,
                        score: conn.score.clamp(FLOOR, 1.0),
                        size: conn.size,
                    };
                    filled_any = true;
                }
            }
        }
        if !filled_any {
            break;
        }
    }
}
