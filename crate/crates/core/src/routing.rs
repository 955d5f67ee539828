//! Route computation: deterministic least-cost search, the randomized
//! human-baseline router, built-in navigation services and route comparison.
//!
//! Search runs on the edge-connectivity graph. A route's cost is the sum of
//! the weights of all its edges, origin and destination included.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::Rng;
use thiserror::Error;

use crate::demand::{TripRequest, VehicleId};
use crate::mapmatch::{lcss_match, MatchConfig, MatchError};
use crate::network::{EdgeIx, RoadNetwork};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("no route from edge {from} to edge {to}")]
    NoRoute { from: String, to: String },
    #[error("unknown edge id {0}")]
    UnknownEdge(String),
    #[error("route is empty")]
    Empty,
    #[error("route breaks between positions {at} and {next}", next = .at + 1)]
    Disconnected { at: usize },
    #[error("route for vehicle {vehicle} does not run from its origin to its destination")]
    EndpointMismatch { vehicle: VehicleId },
    #[error("no precomputed route for vehicle {0}")]
    MissingRoute(VehicleId),
    #[error("historical time {time} for edge {edge} is below its free-flow time")]
    HistoryBelowFreeFlow { edge: String, time: f64 },
    #[error("randomization degree w must be >= 1, got {0}")]
    InvalidW(f64),
    #[error("eco weight lambda must be within [0, 1], got {0}")]
    InvalidLambda(f64),
    #[error("map matching failed: {0}")]
    Match(#[from] MatchError),
}

/// An ordered, connected edge sequence assigned to one vehicle.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Route {
    pub vehicle: VehicleId,
    pub edges: Vec<EdgeIx>,
    pub depart: f64,
    /// Service name, or `"control"` for the randomized router.
    pub provenance: String,
}

pub const CONTROL_PROVENANCE: &str = "control";

/// Checks head-to-tail connectivity of an edge sequence.
pub fn check_connected(network: &RoadNetwork, edges: &[EdgeIx]) -> Result<(), RoutingError> {
    if edges.is_empty() {
        return Err(RoutingError::Empty);
    }
    for (at, pair) in edges.windows(2).enumerate() {
        if network.edge(pair[0]).to != network.edge(pair[1]).from {
            return Err(RoutingError::Disconnected { at });
        }
    }
    Ok(())
}

/// Sum of per-edge costs over a route.
pub fn route_cost(edges: &[EdgeIx], cost: impl Fn(EdgeIx) -> f64) -> f64 {
    edges.iter().map(|&e| cost(e)).sum()
}

/// Expected per-edge travel times a service uses when asked for a route.
/// Edges without an entry fall back to their free-flow time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistoricalTravelTimes {
    times: BTreeMap<EdgeIx, f64>,
}

impl HistoricalTravelTimes {
    pub fn free_flow() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, network: &RoadNetwork, edge: EdgeIx, time: f64) -> Result<(), RoutingError> {
        let e = network.edge(edge);
        if !(time >= e.min_travel_time) {
            return Err(RoutingError::HistoryBelowFreeFlow {
                edge: e.id.clone(),
                time,
            });
        }
        self.times.insert(edge, time);
        Ok(())
    }

    #[inline]
    pub fn get(&self, network: &RoadNetwork, edge: EdgeIx) -> f64 {
        self.times
            .get(&edge)
            .copied()
            .unwrap_or_else(|| network.edge(edge).min_travel_time)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

#[derive(Clone, Copy)]
struct HeapEntry {
    cost: f64,
    edge: EdgeIx,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // Min-heap on cost, then on edge index.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.edge.cmp(&self.edge))
    }
}

/// Relative slack under which two partial costs count as tied.
const TIE_EPS: f64 = 1e-12;

/// Least-cost connected edge sequence from `origin` to `dest` under a
/// strictly positive per-edge cost. Among equal-cost routes the one with the
/// lexicographically smallest edge-id sequence is returned.
///
/// Runs a backward Dijkstra from `dest` to get cost-to-go for every edge,
/// then walks forward from `origin`, always taking the smallest-id successor
/// that stays on an optimal route.
pub fn least_cost_path(
    network: &RoadNetwork,
    origin: EdgeIx,
    dest: EdgeIx,
    cost: impl Fn(EdgeIx) -> f64,
) -> Result<Vec<EdgeIx>, RoutingError> {
    if origin == dest {
        return Ok(vec![origin]);
    }
    let n = network.num_edges();
    let mut to_go = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    to_go[dest.index()] = cost(dest);
    heap.push(HeapEntry {
        cost: to_go[dest.index()],
        edge: dest,
    });
    while let Some(HeapEntry { cost: c, edge }) = heap.pop() {
        if done[edge.index()] {
            continue;
        }
        done[edge.index()] = true;
        if edge == origin {
            break;
        }
        for &p in network.predecessors(edge) {
            if done[p.index()] {
                continue;
            }
            let cand = c + cost(p);
            if cand < to_go[p.index()] {
                to_go[p.index()] = cand;
                heap.push(HeapEntry { cost: cand, edge: p });
            }
        }
    }
    if !done[origin.index()] {
        return Err(no_route(network, origin, dest));
    }

    let mut path = vec![origin];
    let mut cur = origin;
    while cur != dest {
        let remaining = to_go[cur.index()] - cost(cur);
        let tol = TIE_EPS * to_go[cur.index()].abs().max(1.0);
        // Successors are in id order, so the first one on an optimal route
        // is the lexicographic choice.
        let next = network
            .successors(cur)
            .iter()
            .copied()
            .find(|f| (to_go[f.index()] - remaining).abs() <= tol)
            .or_else(|| {
                // Rounding left no candidate within tolerance; fall back to the
                // best finalized successor.
                network
                    .successors(cur)
                    .iter()
                    .copied()
                    .filter(|f| to_go[f.index()].is_finite())
                    .min_by(|a, b| to_go[a.index()].total_cmp(&to_go[b.index()]))
            })
            .ok_or_else(|| no_route(network, origin, dest))?;
        path.push(next);
        cur = next;
        if path.len() > n + 1 {
            return Err(no_route(network, origin, dest));
        }
    }
    Ok(path)
}

fn no_route(network: &RoadNetwork, origin: EdgeIx, dest: EdgeIx) -> RoutingError {
    RoutingError::NoRoute {
        from: network.edge(origin).id.clone(),
        to: network.edge(dest).id.clone(),
    }
}

/// Fastest route under the given expected travel times.
pub fn fastest_path(
    network: &RoadNetwork,
    origin: EdgeIx,
    dest: EdgeIx,
    history: &HistoricalTravelTimes,
) -> Result<Vec<EdgeIx>, RoutingError> {
    least_cost_path(network, origin, dest, |e| history.get(network, e))
}

/// Degree of path randomization for the control-group router.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerturbationConfig {
    pub w: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self { w: 5.0 }
    }
}

impl PerturbationConfig {
    pub fn new(w: f64) -> Result<Self, RoutingError> {
        if !(w >= 1.0 && w.is_finite()) {
            return Err(RoutingError::InvalidW(w));
        }
        Ok(Self { w })
    }
}

/// Fastest route after scaling every edge's free-flow time by an independent
/// factor drawn uniformly from `[1, w)`. Factors are redrawn on every call,
/// one per edge in index order. With `w == 1` no randomness is consumed.
pub fn perturbed_fastest_path<R: Rng + ?Sized>(
    network: &RoadNetwork,
    origin: EdgeIx,
    dest: EdgeIx,
    cfg: &PerturbationConfig,
    rng: &mut R,
) -> Result<Vec<EdgeIx>, RoutingError> {
    if !(cfg.w >= 1.0 && cfg.w.is_finite()) {
        return Err(RoutingError::InvalidW(cfg.w));
    }
    if cfg.w == 1.0 {
        return least_cost_path(network, origin, dest, |e| network.edge(e).min_travel_time);
    }
    let weights: Vec<f64> = network
        .edges()
        .iter()
        .map(|e| e.min_travel_time * rng.gen_range(1.0..cfg.w))
        .collect();
    least_cost_path(network, origin, dest, |e| weights[e.index()])
}

/// A deterministic route recommender.
pub trait NavigationService: Send + Sync {
    fn name(&self) -> &str;

    fn route(
        &self,
        network: &RoadNetwork,
        request: &TripRequest,
        history: &HistoricalTravelTimes,
    ) -> Result<Route, RoutingError>;
}

fn wrap(request: &TripRequest, edges: Vec<EdgeIx>, name: &str) -> Route {
    Route {
        vehicle: request.vehicle,
        edges,
        depart: request.depart,
        provenance: name.to_string(),
    }
}

/// Minimizes expected travel time under the service's historical data.
#[derive(Debug, Clone)]
pub struct FastestHistorical {
    name: String,
}

impl FastestHistorical {
    pub fn new() -> Self {
        Self {
            name: "fastest-historical".into(),
        }
    }

    pub fn named(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }
}

impl Default for FastestHistorical {
    fn default() -> Self {
        Self::new()
    }
}

impl NavigationService for FastestHistorical {
    fn name(&self) -> &str {
        &self.name
    }

    fn route(
        &self,
        network: &RoadNetwork,
        request: &TripRequest,
        history: &HistoricalTravelTimes,
    ) -> Result<Route, RoutingError> {
        let edges = fastest_path(network, request.origin, request.destination, history)?;
        Ok(wrap(request, edges, &self.name))
    }
}

/// Minimizes total length.
#[derive(Debug, Clone)]
pub struct ShortestDistance {
    name: String,
}

impl ShortestDistance {
    pub fn new() -> Self {
        Self {
            name: "shortest".into(),
        }
    }
}

impl Default for ShortestDistance {
    fn default() -> Self {
        Self::new()
    }
}

impl NavigationService for ShortestDistance {
    fn name(&self) -> &str {
        &self.name
    }

    fn route(
        &self,
        network: &RoadNetwork,
        request: &TripRequest,
        _history: &HistoricalTravelTimes,
    ) -> Result<Route, RoutingError> {
        let edges = least_cost_path(network, request.origin, request.destination, |e| {
            network.edge(e).length
        })?;
        Ok(wrap(request, edges, &self.name))
    }
}

/// Trades time against distance-proportional fuel use:
/// `lambda * time + (1 - lambda) * length * fuel_factor`.
#[derive(Debug, Clone)]
pub struct EcoRouting {
    name: String,
    lambda: f64,
    /// seconds-equivalent per meter
    fuel_factor: f64,
}

impl EcoRouting {
    pub const DEFAULT_LAMBDA: f64 = 0.5;
    pub const DEFAULT_FUEL_FACTOR: f64 = 0.1;

    pub fn new(lambda: f64, fuel_factor: f64) -> Result<Self, RoutingError> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(RoutingError::InvalidLambda(lambda));
        }
        Ok(Self {
            name: "eco".into(),
            lambda,
            fuel_factor,
        })
    }
}

impl Default for EcoRouting {
    fn default() -> Self {
        Self::new(Self::DEFAULT_LAMBDA, Self::DEFAULT_FUEL_FACTOR).unwrap()
    }
}

impl NavigationService for EcoRouting {
    fn name(&self) -> &str {
        &self.name
    }

    fn route(
        &self,
        network: &RoadNetwork,
        request: &TripRequest,
        history: &HistoricalTravelTimes,
    ) -> Result<Route, RoutingError> {
        let edges = least_cost_path(network, request.origin, request.destination, |e| {
            self.lambda * history.get(network, e)
                + (1.0 - self.lambda) * network.edge(e).length * self.fuel_factor
        })?;
        Ok(wrap(request, edges, &self.name))
    }
}

/// One record of a precomputed-routes file.
#[derive(Debug, Clone, PartialEq)]
pub enum PrecomputedRoute {
    Edges(Vec<String>),
    Gps(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedEntry {
    pub depart: f64,
    pub route: PrecomputedRoute,
}

/// Serves routes computed elsewhere. GPS-point records are map-matched and,
/// when the matched route does not start or end on the requested edges,
/// joined to them with fastest-path segments. Explicit edge lists must run
/// exactly from origin to destination.
#[derive(Debug, Clone)]
pub struct PrecomputedRoutes {
    name: String,
    entries: BTreeMap<VehicleId, PrecomputedEntry>,
    matching: MatchConfig,
}

impl PrecomputedRoutes {
    pub fn new(name: impl Into<String>, entries: BTreeMap<VehicleId, PrecomputedEntry>) -> Self {
        Self {
            name: name.into(),
            entries,
            matching: MatchConfig::default(),
        }
    }

    pub fn with_matching(mut self, cfg: MatchConfig) -> Self {
        self.matching = cfg;
        self
    }

    pub fn entries(&self) -> &BTreeMap<VehicleId, PrecomputedEntry> {
        &self.entries
    }
}

impl NavigationService for PrecomputedRoutes {
    fn name(&self) -> &str {
        &self.name
    }

    fn route(
        &self,
        network: &RoadNetwork,
        request: &TripRequest,
        history: &HistoricalTravelTimes,
    ) -> Result<Route, RoutingError> {
        let entry = self
            .entries
            .get(&request.vehicle)
            .ok_or(RoutingError::MissingRoute(request.vehicle))?;
        let edges = match &entry.route {
            PrecomputedRoute::Edges(ids) => {
                let edges = ids
                    .iter()
                    .map(|id| {
                        network
                            .edge_ix(id)
                            .ok_or_else(|| RoutingError::UnknownEdge(id.clone()))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                check_connected(network, &edges)?;
                if edges.first() != Some(&request.origin) || edges.last() != Some(&request.destination) {
                    return Err(RoutingError::EndpointMismatch {
                        vehicle: request.vehicle,
                    });
                }
                edges
            }
            PrecomputedRoute::Gps(points) => {
                let matched = lcss_match(points, network, &self.matching)?.edges;
                stitch(network, request, matched, history)?
            }
        };
        Ok(wrap(request, edges, &self.name))
    }
}

fn stitch(
    network: &RoadNetwork,
    request: &TripRequest,
    matched: Vec<EdgeIx>,
    history: &HistoricalTravelTimes,
) -> Result<Vec<EdgeIx>, RoutingError> {
    let mut edges = Vec::with_capacity(matched.len() + 8);
    let first = matched[0];
    if first != request.origin {
        let head = fastest_path(network, request.origin, first, history)?;
        edges.extend_from_slice(&head[..head.len() - 1]);
    }
    edges.extend_from_slice(&matched);
    let last = *edges.last().unwrap();
    if last != request.destination {
        let tail = fastest_path(network, last, request.destination, history)?;
        edges.extend_from_slice(&tail[1..]);
    }
    check_connected(network, &edges)?;
    Ok(edges)
}

/// Jaccard index over the distinct edges of two routes; two empty routes
/// count as identical.
pub fn route_overlap(a: &[EdgeIx], b: &[EdgeIx]) -> f64 {
    let sa: BTreeSet<EdgeIx> = a.iter().copied().collect();
    let sb: BTreeSet<EdgeIx> = b.iter().copied().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}

/// Pairwise comparison of services over a shared request set.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub services: Vec<String>,
    /// Mean Jaccard overlap, symmetric.
    pub mean_overlap: Vec<Vec<f64>>,
    /// Fraction of requests with identical edge sequences, symmetric.
    pub exact_match: Vec<Vec<f64>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("services cover different requests; missing: {missing:?}")]
pub struct RequestSetMismatch {
    /// `(service, vehicle)` pairs present for some service but not this one.
    pub missing: Vec<(String, VehicleId)>,
}

pub fn service_similarity_matrix(
    routes_by_service: &BTreeMap<String, Vec<Route>>,
) -> Result<SimilarityMatrix, RequestSetMismatch> {
    let indexed: Vec<(String, BTreeMap<VehicleId, &[EdgeIx]>)> = routes_by_service
        .iter()
        .map(|(name, routes)| {
            (
                name.clone(),
                routes.iter().map(|r| (r.vehicle, r.edges.as_slice())).collect(),
            )
        })
        .collect();
    let all: BTreeSet<VehicleId> = indexed.iter().flat_map(|(_, m)| m.keys().copied()).collect();
    let missing: Vec<(String, VehicleId)> = indexed
        .iter()
        .flat_map(|(name, m)| {
            all.iter()
                .filter(|v| !m.contains_key(v))
                .map(|v| (name.clone(), *v))
                .collect::<Vec<_>>()
        })
        .collect();
    if !missing.is_empty() {
        return Err(RequestSetMismatch { missing });
    }

    let k = indexed.len();
    let mut mean_overlap = vec![vec![0.0; k]; k];
    let mut exact_match = vec![vec![0.0; k]; k];
    let count = all.len();
    for i in 0..k {
        for j in i..k {
            let (mut overlap, mut exact) = (0.0, 0usize);
            for v in &all {
                let a = indexed[i].1[v];
                let b = indexed[j].1[v];
                overlap += route_overlap(a, b);
                exact += usize::from(a == b);
            }
            let (o, x) = if count == 0 {
                (1.0, 1.0)
            } else {
                (overlap / count as f64, exact as f64 / count as f64)
            };
            mean_overlap[i][j] = o;
            mean_overlap[j][i] = o;
            exact_match[i][j] = x;
            exact_match[j][i] = x;
        }
    }
    Ok(SimilarityMatrix {
        services: indexed.into_iter().map(|(n, _)| n).collect(),
        mean_overlap,
        exact_match,
    })
}
