//! Travel demand: GPS preprocessing, OD-matrix construction and trip sampling.
//!
//! Timestamps are seconds since the Unix epoch. Day `d = floor(t / 86400)`
//! has weekday `(d + 3) mod 7` with Monday = 0.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analysis::{elbow_point, pearson};
use crate::network::{BBox, EdgeIx, RoadNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TileId(pub u32);

impl fmt::Display for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One trip to simulate: origin edge, destination edge, departure second.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TripRequest {
    pub vehicle: VehicleId,
    pub origin: EdgeIx,
    pub destination: EdgeIx,
    /// seconds from simulation start
    pub depart: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemandError {
    #[error("no trips survive filtering: empty demand")]
    EmptyDemand,
    #[error("OD matrix has no sampleable tile pair")]
    NothingToSample,
    #[error("tile size must be positive, got {0}")]
    InvalidTileSize(f64),
    #[error("network has no nodes to tessellate")]
    EmptyNetwork,
    #[error("horizon must be positive, got {0}")]
    InvalidHorizon(f64),
}

// ---------------------------------------------------------------------------
// Tessellation

/// Square tiles over a bounding box; each edge belongs to the tile holding
/// its midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Tessellation {
    bbox: BBox,
    tile_size: f64,
    rows: u32,
    cols: u32,
    edge_tile: Vec<Option<TileId>>,
    tile_edges: BTreeMap<TileId, Vec<EdgeIx>>,
}

impl Tessellation {
    pub const DEFAULT_TILE_SIZE: f64 = 1000.0;

    /// Tiles covering the extent of the network's nodes.
    pub fn for_network(network: &RoadNetwork, tile_size: f64) -> Result<Self, DemandError> {
        let bbox = network.bbox().ok_or(DemandError::EmptyNetwork)?;
        Self::new(bbox, tile_size, network)
    }

    pub fn new(bbox: BBox, tile_size: f64, network: &RoadNetwork) -> Result<Self, DemandError> {
        if !(tile_size > 0.0 && tile_size.is_finite()) {
            return Err(DemandError::InvalidTileSize(tile_size));
        }
        let span = |lo: f64, hi: f64| (libm::ceil((hi - lo) / tile_size) as u32).max(1);
        let mut t = Self {
            bbox,
            tile_size,
            rows: span(bbox.min_y, bbox.max_y),
            cols: span(bbox.min_x, bbox.max_x),
            edge_tile: Vec::with_capacity(network.num_edges()),
            tile_edges: BTreeMap::new(),
        };
        for e in network.edge_indices() {
            let (x, y) = network.edge_midpoint(e);
            let tile = t.tile_of(x, y);
            if let Some(tile) = tile {
                t.tile_edges.entry(tile).or_default().push(e);
            }
            t.edge_tile.push(tile);
        }
        Ok(t)
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn tile_size(&self) -> f64 {
        self.tile_size
    }

    pub fn rows(&self) -> u32 {
        self.rows
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn num_tiles(&self) -> u32 {
        self.rows * self.cols
    }

    /// Tile holding a point; the max edges of the box belong to the last tile.
    pub fn tile_of(&self, x: f64, y: f64) -> Option<TileId> {
        if !self.bbox.contains(x, y) {
            return None;
        }
        let c = (libm::floor((x - self.bbox.min_x) / self.tile_size) as u32).min(self.cols - 1);
        let r = (libm::floor((y - self.bbox.min_y) / self.tile_size) as u32).min(self.rows - 1);
        Some(TileId(r * self.cols + c))
    }

    pub fn row_col(&self, tile: TileId) -> (u32, u32) {
        (tile.0 / self.cols, tile.0 % self.cols)
    }

    pub fn edge_tile(&self, e: EdgeIx) -> Option<TileId> {
        self.edge_tile.get(e.index()).copied().flatten()
    }

    pub fn edges_in(&self, tile: TileId) -> &[EdgeIx] {
        self.tile_edges.get(&tile).map_or(&[], |v| v.as_slice())
    }

    /// Tiles that contain at least one edge, ascending.
    pub fn occupied_tiles(&self) -> impl Iterator<Item = TileId> + '_ {
        self.tile_edges.keys().copied()
    }
}

// ---------------------------------------------------------------------------
// GPS preprocessing

#[derive(Debug, Clone, PartialEq)]
pub struct GpsPoint {
    pub vehicle: String,
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PreprocessConfig {
    pub max_speed_kmh: f64,
    /// meters
    pub stop_radius: f64,
    /// seconds
    pub stop_duration: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            max_speed_kmh: 250.0,
            stop_radius: 200.0,
            stop_duration: 1200.0,
        }
    }
}

/// A trajectory segment representing one journey.
#[derive(Debug, Clone, PartialEq)]
pub struct Trip {
    pub vehicle: String,
    /// `(t, x, y)` with strictly increasing `t`
    pub points: Vec<(f64, f64, f64)>,
}

impl Trip {
    pub fn start_time(&self) -> f64 {
        self.points[0].0
    }

    pub fn duration(&self) -> f64 {
        self.points[self.points.len() - 1].0 - self.points[0].0
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.points[0].1, self.points[0].2)
    }

    pub fn destination(&self) -> (f64, f64) {
        let p = self.points[self.points.len() - 1];
        (p.1, p.2)
    }

    pub fn day(&self) -> i64 {
        libm::floor(self.start_time() / 86_400.0) as i64
    }

    pub fn weekday(&self) -> u8 {
        weekday_of_day(self.day())
    }

    /// Seconds since local midnight of the start.
    pub fn start_time_of_day(&self) -> f64 {
        self.start_time() - self.day() as f64 * 86_400.0
    }

    pub fn tiles(&self, tess: &Tessellation) -> Option<(TileId, TileId)> {
        let (ox, oy) = self.origin();
        let (dx, dy) = self.destination();
        Some((tess.tile_of(ox, oy)?, tess.tile_of(dx, dy)?))
    }
}

pub fn weekday_of_day(day: i64) -> u8 {
    (day + 3).rem_euclid(7) as u8
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Preprocessed {
    pub trips: Vec<Trip>,
    /// `(vehicle, reason)` for vehicles dropped entirely.
    pub rejected: Vec<(String, String)>,
}

/// Cleans raw GPS points into trips: drops points implying speeds above the
/// limit, splits at stays, and clips to `bbox` when given (the first and last
/// points inside become the trip's endpoints).
pub fn preprocess_trajectories(raw: &[GpsPoint], cfg: &PreprocessConfig, bbox: Option<BBox>) -> Preprocessed {
    let mut by_vehicle: BTreeMap<&str, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for p in raw {
        by_vehicle
            .entry(p.vehicle.as_str())
            .or_default()
            .push((p.t, p.x, p.y));
    }
    let max_speed = cfg.max_speed_kmh / 3.6;
    let mut out = Preprocessed::default();
    for (vehicle, pts) in by_vehicle {
        if let Some(w) = pts.windows(2).find(|w| !(w[1].0 > w[0].0)) {
            out.rejected.push((
                vehicle.into(),
                format!("timestamps not increasing at t={} -> t={}", w[0].0, w[1].0),
            ));
            continue;
        }
        let mut kept: Vec<(f64, f64, f64)> = Vec::with_capacity(pts.len());
        for p in pts {
            if let Some(&last) = kept.last() {
                let d = libm::hypot(p.1 - last.1, p.2 - last.2);
                if d / (p.0 - last.0) > max_speed {
                    continue;
                }
            }
            kept.push(p);
        }
        for seg in split_at_stays(&kept, cfg) {
            let seg = match bbox {
                Some(b) => {
                    let inside = |p: &(f64, f64, f64)| b.contains(p.1, p.2);
                    match (seg.iter().position(inside), seg.iter().rposition(inside)) {
                        (Some(i), Some(j)) => &seg[i..=j],
                        _ => continue,
                    }
                }
                None => seg,
            };
            if seg.len() >= 2 {
                out.trips.push(Trip {
                    vehicle: vehicle.into(),
                    points: seg.to_vec(),
                });
            }
        }
    }
    out
}

/// Splits wherever the vehicle remains within `stop_radius` of an anchor
/// point for at least `stop_duration`. The trip before the stay ends at the
/// anchor; the next one starts at the last point of the stay.
fn split_at_stays<'a>(pts: &'a [(f64, f64, f64)], cfg: &PreprocessConfig) -> Vec<&'a [(f64, f64, f64)]> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i + 1 < pts.len() {
        let mut j = i + 1;
        while j < pts.len() && libm::hypot(pts[j].1 - pts[i].1, pts[j].2 - pts[i].2) <= cfg.stop_radius {
            j += 1;
        }
        let stay_end = j - 1;
        if stay_end > i && pts[stay_end].0 - pts[i].0 >= cfg.stop_duration {
            out.push(&pts[start..=i]);
            start = stay_end;
            i = stay_end;
        } else {
            i += 1;
        }
    }
    out.push(&pts[start..]);
    out.retain(|s| s.len() >= 2);
    out
}

// ---------------------------------------------------------------------------
// Outlier days and flow thresholds

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutlierDays {
    pub days: BTreeSet<i64>,
    pub warnings: Vec<String>,
}

/// Days whose OD-count vector correlates with the aggregate of the other
/// days below `mean - sd` of all such correlations. All vectors must share a
/// weekday label and the same cell order.
pub fn detect_outlier_days(daily: &BTreeMap<i64, Vec<f64>>) -> OutlierDays {
    let mut out = OutlierDays::default();
    if daily.len() < 3 {
        out.warnings.push(format!(
            "outlier detection needs at least 3 comparable days, got {}",
            daily.len()
        ));
        return out;
    }
    let len = daily.values().map(|v| v.len()).max().unwrap_or(0);
    let mut total = vec![0.0; len];
    for v in daily.values() {
        for (t, x) in total.iter_mut().zip(v) {
            *t += x;
        }
    }
    let corr: Vec<(i64, f64)> = daily
        .iter()
        .map(|(&day, v)| {
            let mut own = v.clone();
            own.resize(len, 0.0);
            let rest: Vec<f64> = total.iter().zip(&own).map(|(t, x)| t - x).collect();
            (day, pearson(&own, &rest).unwrap_or(0.0))
        })
        .collect();
    let n = corr.len() as f64;
    let mean = corr.iter().map(|c| c.1).sum::<f64>() / n;
    let sd = libm::sqrt(corr.iter().map(|c| (c.1 - mean) * (c.1 - mean)).sum::<f64>() / n);
    let cut = mean - sd;
    // Rounding noise among identical days must not create outliers.
    let slack = 1e-9;
    out.days = corr
        .iter()
        .filter(|(_, c)| *c < cut - slack)
        .map(|(d, _)| *d)
        .collect();
    out
}

type DayCounts = BTreeMap<i64, BTreeMap<(TileId, TileId), f64>>;

/// Outlier days across all weekdays: trips are grouped by weekday, each
/// day's OD counts aligned over the union of flows of its weekday group.
pub fn outlier_days_for_trips(trips: &[Trip], tess: &Tessellation) -> OutlierDays {
    let mut by_weekday: BTreeMap<u8, DayCounts> = BTreeMap::new();
    for trip in trips {
        if let Some(pair) = trip.tiles(tess) {
            *by_weekday
                .entry(trip.weekday())
                .or_default()
                .entry(trip.day())
                .or_default()
                .entry(pair)
                .or_default() += 1.0;
        }
    }
    let mut out = OutlierDays::default();
    for (weekday, days) in by_weekday {
        let flows: BTreeSet<(TileId, TileId)> = days.values().flat_map(|m| m.keys().copied()).collect();
        let vectors: BTreeMap<i64, Vec<f64>> = days
            .iter()
            .map(|(&d, m)| {
                (
                    d,
                    flows.iter().map(|f| m.get(f).copied().unwrap_or(0.0)).collect(),
                )
            })
            .collect();
        let r = detect_outlier_days(&vectors);
        out.days.extend(r.days);
        out.warnings
            .extend(r.warnings.into_iter().map(|w| format!("weekday {weekday}: {w}")));
    }
    out
}

/// Flow-frequency cut at the elbow of `k -> #flows with count >= k`.
/// Degenerate curves (one flow, all counts equal) keep everything.
pub fn frequency_threshold_elbow(flow_counts: &[u64]) -> u64 {
    let max = flow_counts.iter().copied().max().unwrap_or(0);
    let min = flow_counts.iter().copied().min().unwrap_or(0);
    if max == min || max < 3 {
        return 1;
    }
    let ks: Vec<f64> = (1..=max).map(|k| k as f64).collect();
    let ys: Vec<f64> = (1..=max)
        .map(|k| flow_counts.iter().filter(|&&c| c >= k).count() as f64)
        .collect();
    match elbow_point(&ks, &ys) {
        Ok(e) if !e.collinear => e.x as u64,
        _ => 1,
    }
}

// ---------------------------------------------------------------------------
// OD matrix

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OdMatrix {
    pub counts: BTreeMap<(TileId, TileId), u64>,
}

impl OdMatrix {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn positive_cells(&self) -> impl Iterator<Item = ((TileId, TileId), u64)> + '_ {
        self.counts.iter().filter(|(_, &c)| c > 0).map(|(&k, &c)| (k, c))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OdFilters {
    /// seconds, inclusive
    pub min_duration: f64,
    /// seconds, inclusive
    pub max_duration: f64,
    /// Monday = 0; `None` keeps every weekday
    pub weekday: Option<u8>,
    /// start-time-of-day window `[from, to)` in seconds; `None` keeps all
    pub depart_window: Option<(f64, f64)>,
    pub frequency_threshold: u64,
    pub excluded_days: BTreeSet<i64>,
}

impl Default for OdFilters {
    fn default() -> Self {
        Self {
            min_duration: 300.0,
            max_duration: 3600.0,
            weekday: Some(2),
            depart_window: Some((7.0 * 3600.0, 10.0 * 3600.0)),
            frequency_threshold: 1,
            excluded_days: BTreeSet::new(),
        }
    }
}

/// Trips passing every filter. Applying it to its own output is a no-op.
pub fn filter_trips(trips: &[Trip], tess: &Tessellation, f: &OdFilters) -> Vec<Trip> {
    let pass: Vec<&Trip> = trips
        .iter()
        .filter(|t| {
            let d = t.duration();
            d >= f.min_duration
                && d <= f.max_duration
                && f.weekday.is_none_or(|w| t.weekday() == w)
                && f.depart_window.is_none_or(|(a, b)| {
                    let s = t.start_time_of_day();
                    s >= a && s < b
                })
                && !f.excluded_days.contains(&t.day())
                && t.tiles(tess).is_some()
        })
        .collect();
    let mut freq: BTreeMap<(TileId, TileId), u64> = BTreeMap::new();
    for t in &pass {
        *freq.entry(t.tiles(tess).unwrap()).or_default() += 1;
    }
    pass.into_iter()
        .filter(|t| freq[&t.tiles(tess).unwrap()] >= f.frequency_threshold)
        .cloned()
        .collect()
}

/// Per-flow trip counts of trips passing the non-frequency filters; input to
/// [`frequency_threshold_elbow`].
pub fn flow_counts(trips: &[Trip], tess: &Tessellation, f: &OdFilters) -> Vec<u64> {
    let relaxed = OdFilters {
        frequency_threshold: 0,
        ..f.clone()
    };
    let mut freq: BTreeMap<(TileId, TileId), u64> = BTreeMap::new();
    for t in filter_trips(trips, tess, &relaxed) {
        *freq.entry(t.tiles(tess).unwrap()).or_default() += 1;
    }
    freq.into_values().collect()
}

pub fn build_od_matrix(
    trips: &[Trip],
    tess: &Tessellation,
    filters: &OdFilters,
) -> Result<OdMatrix, DemandError> {
    let kept = filter_trips(trips, tess, filters);
    if kept.is_empty() {
        return Err(DemandError::EmptyDemand);
    }
    let mut od = OdMatrix::default();
    for t in &kept {
        *od.counts.entry(t.tiles(tess).unwrap()).or_default() += 1;
    }
    Ok(od)
}

// ---------------------------------------------------------------------------
// Sampling

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampledDemand {
    pub requests: Vec<TripRequest>,
    pub warnings: Vec<String>,
}

/// Draws `n` trips: a tile pair with probability proportional to its count,
/// then uniform origin and destination edges inside the tiles, then a uniform
/// departure in `[0, horizon)`. Equal origin and destination edges are
/// redrawn. Vehicle ids run from 0 in draw order.
pub fn sample_demand(
    od: &OdMatrix,
    tess: &Tessellation,
    n: usize,
    horizon: f64,
    seed: u64,
) -> Result<SampledDemand, DemandError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(DemandError::InvalidHorizon(horizon));
    }
    let mut warnings = Vec::new();
    let mut pairs = Vec::new();
    let mut weights = Vec::new();
    for ((o, d), c) in od.positive_cells() {
        let (eo, ed) = (tess.edges_in(o), tess.edges_in(d));
        if eo.is_empty() || ed.is_empty() {
            warnings.push(format!("tile pair {o}->{d} has a tile without edges; excluded"));
        } else if o == d && eo.len() < 2 {
            warnings.push(format!("tile pair {o}->{d} has a single edge; excluded"));
        } else {
            pairs.push((o, d));
            weights.push(c);
        }
    }
    if pairs.is_empty() {
        return Err(DemandError::NothingToSample);
    }
    let dist = WeightedIndex::new(&weights).map_err(|_| DemandError::NothingToSample)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut requests = Vec::with_capacity(n);
    for v in 0..n {
        let (o, d) = pairs[dist.sample(&mut rng)];
        let origin = *tess.edges_in(o).choose(&mut rng).unwrap();
        let mut destination = *tess.edges_in(d).choose(&mut rng).unwrap();
        while destination == origin {
            destination = *tess.edges_in(d).choose(&mut rng).unwrap();
        }
        requests.push(TripRequest {
            vehicle: VehicleId(v as u32),
            origin,
            destination,
            depart: rng.gen_range(0.0..horizon),
        });
    }
    Ok(SampledDemand { requests, warnings })
}

/// Synthetic heavy-tailed OD matrix: `hub_flows` tile pairs at least two
/// tiles apart carry `hub_share` of `total` trips; the rest is spread over
/// all other pairs of occupied tiles with Pareto(1.5) weights.
pub fn synthetic_heavy_tailed_od(
    tess: &Tessellation,
    total: u64,
    hub_flows: usize,
    hub_share: f64,
    seed: u64,
) -> Result<OdMatrix, DemandError> {
    let tiles: Vec<TileId> = tess.occupied_tiles().collect();
    let mut pairs: Vec<(TileId, TileId)> = tiles
        .iter()
        .flat_map(|&o| tiles.iter().map(move |&d| (o, d)))
        .filter(|(o, d)| o != d)
        .collect();
    if pairs.is_empty() {
        return Err(DemandError::NothingToSample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);
    let apart = |(o, d): &(TileId, TileId)| {
        let (ro, co) = tess.row_col(*o);
        let (rd, cd) = tess.row_col(*d);
        ro.abs_diff(rd) + co.abs_diff(cd) >= 2
    };
    let hubs: Vec<(TileId, TileId)> = pairs
        .iter()
        .filter(|p| apart(p))
        .take(hub_flows)
        .copied()
        .collect();
    let rest: Vec<(TileId, TileId)> = pairs.iter().filter(|p| !hubs.contains(p)).copied().collect();

    let hub_total = libm::round(total as f64 * hub_share) as u64;
    let mut od = OdMatrix::default();
    if !hubs.is_empty() {
        for (i, &p) in hubs.iter().enumerate() {
            let share = hub_total / hubs.len() as u64 + u64::from((i as u64) < hub_total % hubs.len() as u64);
            od.counts.insert(p, share);
        }
    }
    let rest_total = total - hub_total.min(total);
    if !rest.is_empty() && rest_total > 0 {
        let w: Vec<f64> = rest
            .iter()
            .map(|_| libm::pow(1.0 - rng.gen::<f64>(), -1.0 / 1.5))
            .collect();
        let sum: f64 = w.iter().sum();
        // Largest-remainder apportionment keeps the total exact.
        let exact: Vec<f64> = w.iter().map(|v| v / sum * rest_total as f64).collect();
        let mut counts: Vec<u64> = exact.iter().map(|v| libm::floor(*v) as u64).collect();
        let mut left = rest_total - counts.iter().sum::<u64>();
        let mut order: Vec<usize> = (0..rest.len()).collect();
        order.sort_by(|&a, &b| {
            (exact[b] - libm::floor(exact[b]))
                .total_cmp(&(exact[a] - libm::floor(exact[a])))
                .then(a.cmp(&b))
        });
        for &i in &order {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        for (p, c) in rest.into_iter().zip(counts) {
            if c > 0 {
                od.counts.insert(p, c);
            }
        }
    }
    Ok(od)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{generate_grid, GridSpec};

    fn grid_tess() -> (RoadNetwork, Tessellation) {
        // 9x9 nodes, 250 m apart: a 2 km square, 2x2 tiles of 1 km.
        let net = generate_grid(&GridSpec::new(9, 9, 250.0, 13.89, 1)).unwrap();
        let tess = Tessellation::for_network(&net, 1000.0).unwrap();
        (net, tess)
    }

    fn gps(v: &str, pts: &[(f64, f64, f64)]) -> Vec<GpsPoint> {
        pts.iter()
            .map(|&(t, x, y)| GpsPoint {
                vehicle: v.into(),
                t,
                x,
                y,
            })
            .collect()
    }

    // 2020-01-01 was a Wednesday.
    const WED: f64 = 18_262.0 * 86_400.0;

    #[test]
    fn weekday_convention() {
        assert_eq!(weekday_of_day(0), 3);
        assert_eq!(weekday_of_day(18_262), 2);
    }

    #[test]
    fn every_edge_in_one_tile() {
        let (net, tess) = grid_tess();
        assert_eq!(tess.num_tiles(), 4);
        let total: usize = tess.occupied_tiles().map(|t| tess.edges_in(t).len()).sum();
        assert_eq!(total, net.num_edges());
        for e in net.edge_indices() {
            let t = tess.edge_tile(e).unwrap();
            assert!(tess.edges_in(t).contains(&e));
        }
    }

    #[test]
    fn speeding_point_dropped() {
        let raw = gps("a", &[(0.0, 0.0, 0.0), (10.0, 1000.0, 0.0), (20.0, 100.0, 0.0)]);
        let out = preprocess_trajectories(&raw, &PreprocessConfig::default(), None);
        assert_eq!(out.trips.len(), 1);
        assert_eq!(out.trips[0].points, vec![(0.0, 0.0, 0.0), (20.0, 100.0, 0.0)]);
    }

    #[test]
    fn long_stay_splits_trip() {
        let mut pts = vec![(0.0, 0.0, 0.0), (60.0, 500.0, 0.0), (120.0, 1000.0, 0.0)];
        for k in 1..=25 {
            pts.push((120.0 + 60.0 * k as f64, 1000.0 + (k % 3) as f64 * 10.0, 0.0));
        }
        let last = pts.last().unwrap().0;
        pts.push((last + 60.0, 1500.0, 0.0));
        pts.push((last + 120.0, 2000.0, 0.0));
        let out = preprocess_trajectories(&gps("a", &pts), &PreprocessConfig::default(), None);
        assert_eq!(out.trips.len(), 2, "{:?}", out.trips);
        assert_eq!(out.trips[0].destination(), (1000.0, 0.0));
        assert_eq!(out.trips[1].destination(), (2000.0, 0.0));
    }

    #[test]
    fn short_stay_does_not_split() {
        let mut pts = vec![(0.0, 0.0, 0.0), (60.0, 500.0, 0.0)];
        for k in 1..=10 {
            pts.push((60.0 + 60.0 * k as f64, 500.0, 0.0));
        }
        pts.push((800.0, 1500.0, 0.0));
        let out = preprocess_trajectories(&gps("a", &pts), &PreprocessConfig::default(), None);
        assert_eq!(out.trips.len(), 1);
    }

    #[test]
    fn outside_bbox_excluded_and_through_trip_clipped() {
        let bbox = BBox {
            min_x: 0.0,
            min_y: 0.0,
            max_x: 1000.0,
            max_y: 1000.0,
        };
        let mut raw = gps("out", &[(0.0, 5000.0, 5000.0), (60.0, 5100.0, 5000.0)]);
        raw.extend(gps(
            "thru",
            &[
                (0.0, -500.0, 500.0),
                (60.0, 200.0, 500.0),
                (120.0, 800.0, 500.0),
                (180.0, 1500.0, 500.0),
            ],
        ));
        let out = preprocess_trajectories(&raw, &PreprocessConfig::default(), Some(bbox));
        assert_eq!(out.trips.len(), 1);
        assert_eq!(out.trips[0].vehicle, "thru");
        assert_eq!(out.trips[0].origin(), (200.0, 500.0));
        assert_eq!(out.trips[0].destination(), (800.0, 500.0));
    }

    #[test]
    fn non_monotone_vehicle_rejected() {
        let mut raw = gps("bad", &[(0.0, 0.0, 0.0), (60.0, 10.0, 0.0), (30.0, 20.0, 0.0)]);
        raw.extend(gps("good", &[(0.0, 0.0, 0.0), (60.0, 10.0, 0.0)]));
        let out = preprocess_trajectories(&raw, &PreprocessConfig::default(), None);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].0, "bad");
        assert_eq!(out.trips.len(), 1);
    }

    #[test]
    fn empty_input_is_empty_output() {
        let out = preprocess_trajectories(&[], &PreprocessConfig::default(), None);
        assert!(out.trips.is_empty() && out.rejected.is_empty());
    }

    #[test]
    fn identical_days_have_no_outliers() {
        let v = vec![5.0, 1.0, 3.0, 0.0, 8.0, 2.0];
        let daily: BTreeMap<i64, Vec<f64>> = (0..5).map(|d| (d * 7, v.clone())).collect();
        let r = detect_outlier_days(&daily);
        assert!(r.days.is_empty());
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn two_days_warn() {
        let daily: BTreeMap<i64, Vec<f64>> = (0..2).map(|d| (d, vec![1.0, 2.0])).collect();
        let r = detect_outlier_days(&daily);
        assert!(r.days.is_empty());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn frequency_threshold_cases() {
        let mut counts = vec![100, 90, 80];
        counts.extend(std::iter::repeat_n(1, 200));
        assert_eq!(frequency_threshold_elbow(&counts), 2);
        assert_eq!(frequency_threshold_elbow(&[5, 5, 5, 5]), 1);
        assert_eq!(frequency_threshold_elbow(&[7]), 1);
    }

    fn trip(start: f64, dur: f64, from: (f64, f64), to: (f64, f64)) -> Trip {
        Trip {
            vehicle: "v".into(),
            points: vec![(start, from.0, from.1), (start + dur, to.0, to.1)],
        }
    }

    #[test]
    fn od_matrix_filters() {
        let (_, tess) = grid_tess();
        let a = (100.0, 100.0);
        let b = (1500.0, 1500.0);
        let morning = WED + 8.0 * 3600.0;
        let f = OdFilters::default();
        let od = build_od_matrix(&[trip(morning, 1800.0, a, b)], &tess, &f).unwrap();
        let (ta, tb) = (tess.tile_of(a.0, a.1).unwrap(), tess.tile_of(b.0, b.1).unwrap());
        assert_eq!(od.counts.get(&(ta, tb)), Some(&1));
        assert_eq!(od.total(), 1);

        assert_eq!(
            build_od_matrix(&[trip(morning, 240.0, a, b)], &tess, &f),
            Err(DemandError::EmptyDemand)
        );
        let twice = [trip(morning, 1800.0, a, b), trip(morning + 60.0, 1800.0, a, b)];
        let strict = OdFilters {
            frequency_threshold: 3,
            ..f.clone()
        };
        assert_eq!(
            build_od_matrix(&twice, &tess, &strict),
            Err(DemandError::EmptyDemand)
        );
        // Thursday and afternoon trips are filtered out too.
        assert_eq!(
            build_od_matrix(&[trip(morning + 86_400.0, 1800.0, a, b)], &tess, &f),
            Err(DemandError::EmptyDemand)
        );
        assert_eq!(
            build_od_matrix(&[trip(WED + 15.0 * 3600.0, 1800.0, a, b)], &tess, &f),
            Err(DemandError::EmptyDemand)
        );
    }

    #[test]
    fn single_cell_sampling() {
        let (_, tess) = grid_tess();
        let tiles: Vec<TileId> = tess.occupied_tiles().collect();
        let mut od = OdMatrix::default();
        od.counts.insert((tiles[0], tiles[3]), 4);
        let s = sample_demand(&od, &tess, 500, 3600.0, 1).unwrap();
        assert_eq!(s.requests.len(), 500);
        for r in &s.requests {
            assert_eq!(tess.edge_tile(r.origin), Some(tiles[0]));
            assert_eq!(tess.edge_tile(r.destination), Some(tiles[3]));
            assert!(r.depart >= 0.0 && r.depart < 3600.0);
        }
        assert_eq!(s, sample_demand(&od, &tess, 500, 3600.0, 1).unwrap());
    }

    #[test]
    fn intra_tile_pairs_never_repeat_edges() {
        let (_, tess) = grid_tess();
        let t0 = tess.occupied_tiles().next().unwrap();
        let mut od = OdMatrix::default();
        od.counts.insert((t0, t0), 1);
        let s = sample_demand(&od, &tess, 1000, 3600.0, 9).unwrap();
        assert!(s.requests.iter().all(|r| r.origin != r.destination));
    }

    #[test]
    fn empty_tiles_are_excluded_with_warning() {
        let (_, tess) = grid_tess();
        let mut od = OdMatrix::default();
        od.counts.insert((TileId(0), TileId(99)), 5);
        let err = sample_demand(&od, &tess, 10, 3600.0, 1).unwrap_err();
        assert_eq!(err, DemandError::NothingToSample);
    }

    #[test]
    fn synthetic_od_is_heavy_tailed() {
        let net = generate_grid(&GridSpec::new(20, 20, 250.0, 13.89, 1)).unwrap();
        let tess = Tessellation::for_network(&net, 1000.0).unwrap();
        let od = synthetic_heavy_tailed_od(&tess, 10_000, 5, 0.5, 3).unwrap();
        assert_eq!(od.total(), 10_000);
        let mut counts: Vec<u64> = od.counts.values().copied().collect();
        counts.sort_unstable_by(|a, b| b.cmp(a));
        let top5: u64 = counts[..5].iter().sum();
        assert!(top5 >= 5_000, "top five carry {top5}");
    }
}
