//! Directed weighted multigraph of road segments.
//!
//! Edges are stored sorted by their string id, so comparing two edge-index
//! sequences element-wise is the same as comparing the id sequences
//! lexicographically. Routing tie-breaks rely on this.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

/// Dense index of a node inside a [`RoadNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NodeIx(pub u32);

/// Dense index of an edge inside a [`RoadNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EdgeIx(pub u32);

impl NodeIx {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl EdgeIx {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("edge {edge}: {reason}")]
    InvalidEdge { edge: String, reason: String },
    #[error("edge {edge} references undeclared node {node}")]
    DanglingEndpoint { edge: String, node: String },
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("duplicate edge id {0}")]
    DuplicateEdge(String),
    #[error("grid needs at least 2 rows and 2 columns, got {rows}x{cols}")]
    GridTooSmall { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

/// Raw edge attributes as they appear in `edges.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSpec {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    pub speed_limit: f64,
    pub lanes: u32,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub from: NodeIx,
    pub to: NodeIx,
    /// meters
    pub length: f64,
    /// m/s
    pub speed_limit: f64,
    pub lanes: u32,
    /// vehicles per hour
    pub capacity: f64,
    /// `length / speed_limit`, seconds
    pub min_travel_time: f64,
}

/// Immutable road graph. Parallel edges between the same node pair are kept
/// as distinct edges.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    out_edges: Vec<Vec<EdgeIx>>,
    in_edges: Vec<Vec<EdgeIx>>,
    node_lookup: BTreeMap<String, NodeIx>,
    edge_lookup: BTreeMap<String, EdgeIx>,
}

impl RoadNetwork {
    pub fn new(mut nodes: Vec<Node>, mut edges: Vec<EdgeSpec>) -> Result<Self, NetworkError> {
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        edges.sort_by(|a, b| a.id.cmp(&b.id));

        let mut node_lookup = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if node_lookup.insert(n.id.clone(), NodeIx(i as u32)).is_some() {
                return Err(NetworkError::DuplicateNode(n.id.clone()));
            }
        }

        let mut built = Vec::with_capacity(edges.len());
        let mut edge_lookup = BTreeMap::new();
        let mut out_edges = vec![Vec::new(); nodes.len()];
        let mut in_edges = vec![Vec::new(); nodes.len()];
        for (i, spec) in edges.into_iter().enumerate() {
            let ix = EdgeIx(i as u32);
            check_edge(&spec)?;
            let from = *node_lookup
                .get(&spec.from)
                .ok_or_else(|| NetworkError::DanglingEndpoint {
                    edge: spec.id.clone(),
                    node: spec.from.clone(),
                })?;
            let to = *node_lookup
                .get(&spec.to)
                .ok_or_else(|| NetworkError::DanglingEndpoint {
                    edge: spec.id.clone(),
                    node: spec.to.clone(),
                })?;
            if edge_lookup.insert(spec.id.clone(), ix).is_some() {
                return Err(NetworkError::DuplicateEdge(spec.id));
            }
            out_edges[from.index()].push(ix);
            in_edges[to.index()].push(ix);
            built.push(Edge {
                min_travel_time: spec.length / spec.speed_limit,
                id: spec.id,
                from,
                to,
                length: spec.length,
                speed_limit: spec.speed_limit,
                lanes: spec.lanes,
                capacity: spec.capacity,
            });
        }

        Ok(Self {
            nodes,
            edges: built,
            out_edges,
            in_edges,
            node_lookup,
            edge_lookup,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    #[inline]
    pub fn edge(&self, e: EdgeIx) -> &Edge {
        &self.edges[e.index()]
    }

    #[inline]
    pub fn node(&self, n: NodeIx) -> &Node {
        &self.nodes[n.index()]
    }

    pub fn edge_ix(&self, id: &str) -> Option<EdgeIx> {
        self.edge_lookup.get(id).copied()
    }

    pub fn node_ix(&self, id: &str) -> Option<NodeIx> {
        self.node_lookup.get(id).copied()
    }

    /// Edges leaving `n`, in id order.
    #[inline]
    pub fn out_edges(&self, n: NodeIx) -> &[EdgeIx] {
        &self.out_edges[n.index()]
    }

    #[inline]
    pub fn in_edges(&self, n: NodeIx) -> &[EdgeIx] {
        &self.in_edges[n.index()]
    }

    /// Edges that can follow `e` on a route.
    #[inline]
    pub fn successors(&self, e: EdgeIx) -> &[EdgeIx] {
        self.out_edges(self.edge(e).to)
    }

    #[inline]
    pub fn predecessors(&self, e: EdgeIx) -> &[EdgeIx] {
        self.in_edges(self.edge(e).from)
    }

    pub fn edge_indices(&self) -> impl Iterator<Item = EdgeIx> + '_ {
        (0..self.edges.len() as u32).map(EdgeIx)
    }

    /// Straight-line segment between the edge's endpoint coordinates.
    pub fn edge_segment(&self, e: EdgeIx) -> ((f64, f64), (f64, f64)) {
        let edge = self.edge(e);
        let a = self.node(edge.from);
        let b = self.node(edge.to);
        ((a.x, a.y), (b.x, b.y))
    }

    pub fn edge_midpoint(&self, e: EdgeIx) -> (f64, f64) {
        let ((ax, ay), (bx, by)) = self.edge_segment(e);
        ((ax + bx) * 0.5, (ay + by) * 0.5)
    }

    /// Axis-aligned bounding box of all node coordinates, `None` when empty.
    pub fn bbox(&self) -> Option<BBox> {
        let first = self.nodes.first()?;
        let mut b = BBox {
            min_x: first.x,
            min_y: first.y,
            max_x: first.x,
            max_y: first.y,
        };
        for n in &self.nodes[1..] {
            b.min_x = b.min_x.min(n.x);
            b.min_y = b.min_y.min(n.y);
            b.max_x = b.max_x.max(n.x);
            b.max_y = b.max_y.max(n.y);
        }
        Some(b)
    }

    /// Converts back to the raw per-edge attribute form (for writing files).
    pub fn edge_specs(&self) -> Vec<EdgeSpec> {
        self.edges
            .iter()
            .map(|e| EdgeSpec {
                id: e.id.clone(),
                from: self.nodes[e.from.index()].id.clone(),
                to: self.nodes[e.to.index()].id.clone(),
                length: e.length,
                speed_limit: e.speed_limit,
                lanes: e.lanes,
                capacity: e.capacity,
            })
            .collect()
    }

    /// Copy of this network without the given edges.
    pub fn without_edges(&self, drop: &[EdgeIx]) -> Self {
        let drop: BTreeSet<EdgeIx> = drop.iter().copied().collect();
        let specs = self
            .edge_specs()
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(&EdgeIx(*i as u32)))
            .map(|(_, s)| s)
            .collect();
        // Ids and endpoints come from a valid network, so rebuilding cannot fail.
        Self::new(self.nodes.clone(), specs).expect("subset of a valid network")
    }
}

fn check_edge(spec: &EdgeSpec) -> Result<(), NetworkError> {
    let bad = |reason: String| NetworkError::InvalidEdge {
        edge: spec.id.clone(),
        reason,
    };
    if !(spec.length > 0.0 && spec.length.is_finite()) {
        return Err(bad(format!("length must be > 0, got {}", spec.length)));
    }
    if !(spec.speed_limit > 0.0 && spec.speed_limit.is_finite()) {
        return Err(bad(format!("speed limit must be > 0, got {}", spec.speed_limit)));
    }
    if spec.lanes < 1 {
        return Err(bad(String::from("lanes must be >= 1")));
    }
    if !(spec.capacity > 0.0 && spec.capacity.is_finite()) {
        return Err(bad(format!("capacity must be > 0, got {}", spec.capacity)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.min_x && x <= self.max_x && y >= self.min_y && y <= self.max_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkStats {
    pub num_nodes: usize,
    pub num_edges: usize,
    /// NaN for an empty network.
    pub edge_node_ratio: f64,
    pub total_edge_length_km: f64,
    pub total_lane_length_km: f64,
}

pub fn network_stats(network: &RoadNetwork) -> NetworkStats {
    let num_nodes = network.num_nodes();
    let num_edges = network.num_edges();
    let edge_node_ratio = if num_nodes == 0 {
        f64::NAN
    } else {
        num_edges as f64 / num_nodes as f64
    };
    let (len, lane_len) = network.edges().iter().fold((0.0, 0.0), |(l, ll), e| {
        (l + e.length, ll + e.length * e.lanes as f64)
    });
    NetworkStats {
        num_nodes,
        num_edges,
        edge_node_ratio,
        total_edge_length_km: len / 1000.0,
        total_lane_length_km: lane_len / 1000.0,
    }
}

/// Connectivity diagnostics. Flags are advisory; nothing is modified.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    /// Strongly connected components, largest first.
    pub components: Vec<Vec<NodeIx>>,
    /// Nodes outside the largest component (cannot reach it or be reached from it).
    pub outside_largest: Vec<NodeIx>,
    /// Nodes with incoming edges but no outgoing edge.
    pub dead_ends: Vec<NodeIx>,
}

impl ValidationReport {
    /// Union of all flagged nodes, sorted.
    pub fn flagged(&self) -> Vec<NodeIx> {
        let set: BTreeSet<NodeIx> = self
            .outside_largest
            .iter()
            .chain(self.dead_ends.iter())
            .copied()
            .collect();
        set.into_iter().collect()
    }

    pub fn is_clean(&self) -> bool {
        self.outside_largest.is_empty() && self.dead_ends.is_empty()
    }
}

pub fn validate(network: &RoadNetwork) -> ValidationReport {
    let mut components = strongly_connected_components(network);
    components.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a[0].cmp(&b[0])));

    let outside_largest = match components.first() {
        Some(largest) => {
            let inside: BTreeSet<NodeIx> = largest.iter().copied().collect();
            (0..network.num_nodes() as u32)
                .map(NodeIx)
                .filter(|n| !inside.contains(n))
                .collect()
        }
        None => Vec::new(),
    };

    let dead_ends = (0..network.num_nodes() as u32)
        .map(NodeIx)
        .filter(|&n| network.out_edges(n).is_empty() && !network.in_edges(n).is_empty())
        .collect();

    ValidationReport {
        components,
        outside_largest,
        dead_ends,
    }
}

/// Kosaraju with explicit stacks; each component is sorted by node index.
fn strongly_connected_components(network: &RoadNetwork) -> Vec<Vec<NodeIx>> {
    let n = network.num_nodes();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    for start in 0..n {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut stack = vec![(start, 0usize)];
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            let outs = network.out_edges(NodeIx(v as u32));
            if *next < outs.len() {
                let w = network.edge(outs[*next]).to.index();
                *next += 1;
                if !visited[w] {
                    visited[w] = true;
                    stack.push((w, 0));
                }
            } else {
                order.push(v);
                stack.pop();
            }
        }
    }

    let mut comp = vec![usize::MAX; n];
    let mut components = Vec::new();
    for &root in order.iter().rev() {
        if comp[root] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = Vec::new();
        let mut stack = vec![root];
        comp[root] = id;
        while let Some(v) = stack.pop() {
            members.push(NodeIx(v as u32));
            for &e in network.in_edges(NodeIx(v as u32)) {
                let u = network.edge(e).from.index();
                if comp[u] == usize::MAX {
                    comp[u] = id;
                    stack.push(u);
                }
            }
        }
        members.sort();
        components.push(members);
    }
    components
}

/// Parameters of a synthetic bidirectional lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub edge_length: f64,
    pub speed_limit: f64,
    pub lanes: u32,
    /// Per-edge capacity, vehicles/hour.
    pub capacity: f64,
    /// Faster, wider rows and columns; `None` gives a uniform lattice.
    #[cfg_attr(feature = "serde", serde(default))]
    pub arterials: Option<Arterials>,
}

/// Every row and column with `index % every == offset` is an arterial.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Arterials {
    pub every: usize,
    pub offset: usize,
    pub speed_limit: f64,
    pub lanes: u32,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, edge_length: f64, speed_limit: f64, lanes: u32) -> Self {
        Self {
            rows,
            cols,
            edge_length,
            speed_limit,
            lanes,
            capacity: 1800.0 * lanes as f64,
            arterials: None,
        }
    }

    pub fn with_arterials(mut self, arterials: Arterials) -> Self {
        self.arterials = Some(arterials);
        self
    }

    fn is_arterial(&self, line: usize) -> bool {
        self.arterials
            .is_some_and(|a| a.every > 0 && line % a.every == a.offset)
    }
}

/// Node `r{row}c{col}` sits at `(col * edge_length, row * edge_length)`.
/// Edge ids are `{from}-{to}`.
pub fn generate_grid(spec: &GridSpec) -> Result<RoadNetwork, NetworkError> {
    let GridSpec { rows, cols, .. } = *spec;
    if rows < 2 || cols < 2 {
        return Err(NetworkError::GridTooSmall { rows, cols });
    }
    let name = |r: usize, c: usize| format!("r{r:03}c{c:03}");
    let mut nodes = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            nodes.push(Node {
                id: name(r, c),
                x: c as f64 * spec.edge_length,
                y: r as f64 * spec.edge_length,
            });
        }
    }
    let mut edges = Vec::new();
    let mut link = |a: String, b: String, line: usize| {
        let (speed_limit, lanes, capacity) = match spec.arterials {
            Some(art) if spec.is_arterial(line) => (art.speed_limit, art.lanes, 1800.0 * art.lanes as f64),
            _ => (spec.speed_limit, spec.lanes, spec.capacity),
        };
        edges.push(EdgeSpec {
            id: format!("{a}-{b}"),
            from: a,
            to: b,
            length: spec.edge_length,
            speed_limit,
            lanes,
            capacity,
        });
    };
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                link(name(r, c), name(r, c + 1), r);
                link(name(r, c + 1), name(r, c), r);
            }
            if r + 1 < rows {
                link(name(r, c), name(r + 1, c), c);
                link(name(r + 1, c), name(r, c), c);
            }
        }
    }
    RoadNetwork::new(nodes, edges)
}
