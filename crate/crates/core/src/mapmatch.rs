//! LCSS map matching of GPS point sequences onto connected edge sequences.
//!
//! A point "hits" an edge when its perpendicular distance to the edge's
//! straight segment is at most `spatial_threshold`. The matcher searches
//! connected routes for the one with the longest common subsequence of hits
//! (points matched in order, several points per edge allowed) and, among
//! those, the smallest free-flow travel time. The time criterion is what
//! bridges gaps: between matched fragments the route follows a fastest path.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use thiserror::Error;

use crate::network::{EdgeIx, RoadNetwork};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MatchConfig {
    /// meters
    pub spatial_threshold: f64,
    /// meters; edges this close to the first or last point may start or end a match
    pub candidate_radius: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            spatial_threshold: 25.0,
            candidate_radius: 50.0,
        }
    }
}

impl MatchConfig {
    pub fn new(spatial_threshold: f64, candidate_radius: f64) -> Result<Self, MatchError> {
        if !(spatial_threshold > 0.0 && spatial_threshold <= candidate_radius) {
            return Err(MatchError::InvalidConfig {
                spatial_threshold,
                candidate_radius,
            });
        }
        Ok(Self {
            spatial_threshold,
            candidate_radius,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("need at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("no edge lies within the candidate radius of the trace")]
    NoMatch,
    #[error("invalid thresholds: spatial {spatial_threshold} m, candidate {candidate_radius} m")]
    InvalidConfig {
        spatial_threshold: f64,
        candidate_radius: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub edges: Vec<EdgeIx>,
    /// Number of points matched within `spatial_threshold`.
    pub matched_points: usize,
}

/// Euclidean distance from `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    libm::hypot(p.0 - qx, p.1 - qy)
}

pub fn point_edge_distance(network: &RoadNetwork, p: (f64, f64), e: EdgeIx) -> f64 {
    let (a, b) = network.edge_segment(e);
    point_segment_distance(p, a, b)
}

/// Many-to-one LCSS table between `n` points and `m` edges:
/// `L[i][j] = max(L[i][j-1], L[i-1][j] + hit(i-1, j-1))`, zero on the borders.
pub fn lcss_table(n: usize, m: usize, hit: impl Fn(usize, usize) -> bool) -> Vec<Vec<u32>> {
    let mut t = vec![vec![0u32; m + 1]; n + 1];
    for i in 1..=n {
        for j in 1..=m {
            t[i][j] = t[i][j - 1].max(t[i - 1][j] + u32::from(hit(i - 1, j - 1)));
        }
    }
    t
}

/// LCSS length of a trace against a given edge sequence, in `O(m)` memory.
pub fn lcss_score(
    points: &[(f64, f64)],
    edges: &[EdgeIx],
    network: &RoadNetwork,
    cfg: &MatchConfig,
) -> usize {
    let mut row = vec![0u32; edges.len() + 1];
    for &p in points {
        let mut left = 0u32;
        for (j, &e) in edges.iter().enumerate() {
            let hit = point_edge_distance(network, p, e) <= cfg.spatial_threshold;
            let v = left.max(row[j + 1] + u32::from(hit));
            row[j + 1] = v;
            left = v;
        }
    }
    row[edges.len()] as usize
}

#[derive(Clone, Copy, PartialEq)]
struct Cost {
    skipped: u32,
    time: f64,
}

impl Cost {
    fn cmp(&self, other: &Self) -> Ordering {
        self.skipped
            .cmp(&other.skipped)
            .then_with(|| self.time.total_cmp(&other.time))
    }
}

#[derive(Clone, Copy)]
struct Entry {
    cost: Cost,
    state: (u32, EdgeIx),
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .cmp(&self.cost)
            .then_with(|| other.state.cmp(&self.state))
    }
}

/// Matches a GPS trace to a connected route.
///
/// State `(i, e)`: the first `i` points are consumed and the vehicle is on
/// edge `e`. Matching point `i` on `e` is free, skipping it costs one, and
/// moving to a successor edge costs that edge's free-flow time. Costs compare
/// skipped points first, time second.
pub fn lcss_match(
    points: &[(f64, f64)],
    network: &RoadNetwork,
    cfg: &MatchConfig,
) -> Result<MatchResult, MatchError> {
    if points.len() < 2 {
        return Err(MatchError::TooFewPoints(points.len()));
    }
    let near = |p: (f64, f64)| -> Vec<EdgeIx> {
        network
            .edge_indices()
            .filter(|&e| point_edge_distance(network, p, e) <= cfg.candidate_radius)
            .collect()
    };
    // Leading and trailing points far from every edge cannot anchor a match.
    let with_candidates: Vec<usize> = (0..points.len())
        .filter(|&i| !near(points[i]).is_empty())
        .collect();
    let (&first, &last) = match (with_candidates.first(), with_candidates.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(MatchError::NoMatch),
    };
    let trace = &points[first..=last];
    let n = trace.len() as u32;
    let ends: Vec<EdgeIx> = near(trace[trace.len() - 1]);

    let mut best: BTreeMap<(u32, EdgeIx), Cost> = BTreeMap::new();
    let mut pred: BTreeMap<(u32, EdgeIx), (u32, EdgeIx)> = BTreeMap::new();
    let mut done: BTreeSet<(u32, EdgeIx)> = BTreeSet::new();
    let mut heap = BinaryHeap::new();
    for e in near(trace[0]) {
        let c = Cost {
            skipped: 0,
            time: network.edge(e).min_travel_time,
        };
        best.insert((0, e), c);
        heap.push(Entry {
            cost: c,
            state: (0, e),
        });
    }

    let mut goal = None;
    while let Some(Entry { cost, state }) = heap.pop() {
        if !done.insert(state) {
            continue;
        }
        let (i, e) = state;
        if i == n && ends.binary_search(&e).is_ok() {
            goal = Some((state, cost));
            break;
        }
        let mut relax = |next: (u32, EdgeIx), c: Cost, heap: &mut BinaryHeap<Entry>| {
            if done.contains(&next) {
                return;
            }
            let better = best.get(&next).is_none_or(|old| c.cmp(old) == Ordering::Less);
            if better {
                best.insert(next, c);
                pred.insert(next, state);
                heap.push(Entry { cost: c, state: next });
            }
        };
        if i < n {
            let hit = point_edge_distance(network, trace[i as usize], e) <= cfg.spatial_threshold;
            let c = Cost {
                skipped: cost.skipped + u32::from(!hit),
                time: cost.time,
            };
            relax((i + 1, e), c, &mut heap);
        }
        for &f in network.successors(e) {
            let c = Cost {
                skipped: cost.skipped,
                time: cost.time + network.edge(f).min_travel_time,
            };
            relax((i, f), c, &mut heap);
        }
    }

    let Some((mut state, cost)) = goal else {
        return Err(MatchError::NoMatch);
    };
    let mut edges = vec![state.1];
    while let Some(&p) = pred.get(&state) {
        if p.1 != state.1 {
            edges.push(p.1);
        }
        state = p;
    }
    edges.reverse();
    Ok(MatchResult {
        edges,
        matched_points: (n - cost.skipped) as usize,
    })
}
