//! Impact measures: route diversity, CO2 aggregates, normalized emission
//! entropy and marginal changes between adoption rates.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use thiserror::Error;

use crate::network::EdgeIx;
use crate::routing::{Route, CONTROL_PROVENANCE};
use crate::sim::SimResult;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("entropy needs at least 2 edges, got {0}")]
    TooFewEdges(usize),
    #[error("total emissions are zero")]
    ZeroEmissions,
    #[error("marginal series is missing rate {0}")]
    MissingRate(u32),
}

/// Number of distinct edges used by at least one route.
pub fn route_diversity<'a>(routes: impl IntoIterator<Item = &'a [EdgeIx]>) -> usize {
    routes
        .into_iter()
        .flat_map(|r| r.iter().copied())
        .collect::<BTreeSet<EdgeIx>>()
        .len()
}

/// Shannon entropy (natural log) of per-edge emission shares over emitting
/// edges, divided by `ln(total_edges)`.
pub fn emission_entropy(per_edge_co2: &[f64], total_edges: usize) -> Result<f64, MetricsError> {
    if total_edges < 2 {
        return Err(MetricsError::TooFewEdges(total_edges));
    }
    let total: f64 = per_edge_co2.iter().filter(|&&c| c > 0.0).sum();
    if !(total > 0.0) {
        return Err(MetricsError::ZeroEmissions);
    }
    let h: f64 = per_edge_co2
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / total;
            -p * libm::log(p)
        })
        .sum();
    Ok((h / libm::log(total_edges as f64)).clamp(0.0, 1.0))
}

/// Changes between consecutive adoption rates; positive values are
/// decreases at the higher rate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MarginalSeries {
    /// the higher rate of each pair: 10, 20, ..., 100
    pub rates: Vec<u32>,
    pub delta_diversity: Vec<f64>,
    pub delta_co2: Vec<f64>,
}

pub const RATE_GRID: [u32; 11] = [0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

/// `(diversity, total CO2)` per rate over the full 0..=100 step 10 grid into
/// `D(r-10) - D(r)` and `E(r-10) - E(r)`.
pub fn marginal_series(by_rate: &BTreeMap<u32, (f64, f64)>) -> Result<MarginalSeries, MetricsError> {
    for r in RATE_GRID {
        if !by_rate.contains_key(&r) {
            return Err(MetricsError::MissingRate(r));
        }
    }
    let mut out = MarginalSeries {
        rates: Vec::with_capacity(10),
        delta_diversity: Vec::with_capacity(10),
        delta_co2: Vec::with_capacity(10),
    };
    for w in RATE_GRID.windows(2) {
        let (d0, e0) = by_rate[&w[0]];
        let (d1, e1) = by_rate[&w[1]];
        out.rates.push(w[1]);
        out.delta_diversity.push(d0 - d1);
        out.delta_co2.push(e0 - e1);
    }
    Ok(out)
}

/// Expected number of distinct edges covered by `k` routes drawn without
/// replacement from `routes` (rarefaction). Equals the plain diversity when
/// `k == routes.len()`.
pub fn rarefied_diversity(routes: &[&[EdgeIx]], k: usize) -> f64 {
    let n = routes.len();
    if k == 0 || n == 0 {
        return 0.0;
    }
    let k = k.min(n);
    let mut usage: BTreeMap<EdgeIx, usize> = BTreeMap::new();
    for r in routes {
        for e in r.iter().copied().collect::<BTreeSet<_>>() {
            *usage.entry(e).or_default() += 1;
        }
    }
    let ln_choose = |a: usize, b: usize| {
        libm::lgamma(a as f64 + 1.0) - libm::lgamma(b as f64 + 1.0) - libm::lgamma((a - b) as f64 + 1.0)
    };
    let ln_all = ln_choose(n, k);
    usage
        .values()
        .map(|&c| {
            if n - c < k {
                1.0
            } else {
                1.0 - libm::exp(ln_choose(n - c, k) - ln_all)
            }
        })
        .sum()
}

/// Per-run impact measures at one adoption rate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RateMetrics {
    /// percent
    pub rate: u32,
    pub seed: u64,
    pub route_diversity: usize,
    /// mg, mean over completed vehicles
    pub mean_co2: f64,
    /// mg, all vehicles including incomplete ones
    pub total_co2: f64,
    pub entropy_norm: f64,
    pub teleports: u64,
    pub treated: usize,
    pub control: usize,
    /// `None` when the group is empty
    pub diversity_treated: Option<usize>,
    pub diversity_control: Option<usize>,
    /// Diversity per route with both groups rarefied to the smaller group's size.
    pub norm_diversity_treated: Option<f64>,
    pub norm_diversity_control: Option<f64>,
    pub incomplete: usize,
}

/// Aggregates one simulation run. Routes whose provenance is
/// [`CONTROL_PROVENANCE`] form the control group; all others are treated.
pub fn aggregate_rate_metrics(
    rate: u32,
    seed: u64,
    sim: &SimResult,
    routes: &[Route],
    total_edges: usize,
) -> Result<RateMetrics, MetricsError> {
    let (control, treated): (Vec<&Route>, Vec<&Route>) =
        routes.iter().partition(|r| r.provenance == CONTROL_PROVENANCE);
    fn edges_of<'a>(rs: &[&'a Route]) -> Vec<&'a [EdgeIx]> {
        rs.iter().map(|r| r.edges.as_slice()).collect()
    }
    let (te, ce) = (edges_of(&treated), edges_of(&control));
    let group = |es: &Vec<&[EdgeIx]>| (!es.is_empty()).then(|| route_diversity(es.iter().copied()));
    let k = te.len().min(ce.len());
    let norm = |es: &Vec<&[EdgeIx]>| (k > 0).then(|| rarefied_diversity(es, k) / k as f64);

    let done: Vec<f64> = sim
        .vehicles
        .iter()
        .filter(|v| v.completed)
        .map(|v| v.co2)
        .collect();
    let mean_co2 = if done.is_empty() {
        f64::NAN
    } else {
        done.iter().sum::<f64>() / done.len() as f64
    };
    let per_edge: Vec<f64> = sim.edges.iter().map(|e| e.co2).collect();
    Ok(RateMetrics {
        rate,
        seed,
        route_diversity: route_diversity(routes.iter().map(|r| r.edges.as_slice())),
        mean_co2,
        total_co2: sim.total_edge_co2(),
        entropy_norm: emission_entropy(&per_edge, total_edges)?,
        teleports: sim.teleport_count,
        treated: te.len(),
        control: ce.len(),
        diversity_treated: group(&te),
        diversity_control: group(&ce),
        norm_diversity_treated: norm(&te),
        norm_diversity_control: norm(&ce),
        incomplete: sim.incomplete,
    })
}

/// Arithmetic mean and sample standard deviation; one value has zero spread.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, libm::sqrt(var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::VehicleId;
    use alloc::vec;

    fn ex(v: &[u32]) -> Vec<EdgeIx> {
        v.iter().map(|&i| EdgeIx(i)).collect()
    }

    #[test]
    fn diversity_cases() {
        assert_eq!(route_diversity(core::iter::empty()), 0);
        let one = ex(&[1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(route_diversity([one.as_slice()]), 7);
        let (a, b) = (ex(&[1, 2]), ex(&[2, 3]));
        assert_eq!(route_diversity([a.as_slice(), b.as_slice()]), 3);
    }

    #[test]
    fn entropy_closed_forms() {
        assert_eq!(emission_entropy(&[5.0, 0.0, 0.0, 0.0], 4).unwrap(), 0.0);
        assert!((emission_entropy(&[2.0; 7], 7).unwrap() - 1.0).abs() <= 1e-12);
        assert!((emission_entropy(&[3.0, 3.0, 0.0, 0.0], 4).unwrap() - 0.5).abs() <= 1e-12);
        assert_eq!(emission_entropy(&[0.0; 3], 3), Err(MetricsError::ZeroEmissions));
        assert_eq!(emission_entropy(&[1.0], 1), Err(MetricsError::TooFewEdges(1)));
    }

    fn grid(vals: &[(f64, f64)]) -> BTreeMap<u32, (f64, f64)> {
        RATE_GRID.iter().copied().zip(vals.iter().copied()).collect()
    }

    #[test]
    fn marginal_sign_convention() {
        let mut vals = vec![(90.0, 60.0); 11];
        vals[0] = (100.0, 50.0);
        let m = marginal_series(&grid(&vals)).unwrap();
        assert_eq!(m.rates[0], 10);
        assert_eq!(m.delta_diversity[0], 10.0);
        assert_eq!(m.delta_co2[0], -10.0);
        assert!(m.delta_diversity[1..].iter().all(|&d| d == 0.0));
        let flat = marginal_series(&grid(&[(5.0, 5.0); 11])).unwrap();
        assert!(flat.delta_co2.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn marginal_missing_rate_named() {
        let mut g = grid(&[(1.0, 1.0); 11]);
        g.remove(&40);
        assert_eq!(marginal_series(&g), Err(MetricsError::MissingRate(40)));
    }

    #[test]
    fn rarefaction_endpoints() {
        let routes = [ex(&[1, 2, 3]), ex(&[3, 4]), ex(&[5])];
        let refs: Vec<&[EdgeIx]> = routes.iter().map(|r| r.as_slice()).collect();
        assert!((rarefied_diversity(&refs, 3) - 5.0).abs() < 1e-12);
        // One route out of three: mean of 3, 2 and 1 distinct edges.
        assert!((rarefied_diversity(&refs, 1) - 2.0).abs() < 1e-12);
        assert_eq!(rarefied_diversity(&refs, 0), 0.0);
    }

    #[test]
    fn rarefaction_matches_enumeration_of_pairs() {
        let routes = [ex(&[1, 2]), ex(&[2, 3]), ex(&[4]), ex(&[1, 4, 5])];
        let refs: Vec<&[EdgeIx]> = routes.iter().map(|r| r.as_slice()).collect();
        let mut sum = 0.0;
        let mut count = 0.0;
        for i in 0..4 {
            for j in (i + 1)..4 {
                sum += route_diversity([refs[i], refs[j]]) as f64;
                count += 1.0;
            }
        }
        assert!((rarefied_diversity(&refs, 2) - sum / count).abs() < 1e-12);
    }

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
        assert_eq!(mean_std(&[3.0; 10]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - libm::sqrt(5.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_rate_has_no_treated_group() {
        use crate::sim::{EdgeRecord, EmissionParams, SimConfig, VehicleRecord};
        let routes: Vec<Route> = (0..3)
            .map(|v| Route {
                vehicle: VehicleId(v),
                edges: ex(&[v, v + 1]),
                depart: 0.0,
                provenance: CONTROL_PROVENANCE.into(),
            })
            .collect();
        let sim = SimResult {
            config: SimConfig::default(),
            emissions: EmissionParams::default(),
            seed: 0,
            vehicles: routes
                .iter()
                .map(|r| VehicleRecord {
                    vehicle: r.vehicle,
                    depart: 0.0,
                    arrive: Some(10.0),
                    travel: Some(10.0),
                    co2: 2.0,
                    completed: true,
                    teleported: false,
                    route: r.edges.clone(),
                })
                .collect(),
            edges: vec![
                EdgeRecord {
                    vehicle_count: 1,
                    co2: 1.0,
                },
                EdgeRecord {
                    vehicle_count: 2,
                    co2: 2.0,
                },
                EdgeRecord {
                    vehicle_count: 2,
                    co2: 2.0,
                },
                EdgeRecord {
                    vehicle_count: 1,
                    co2: 1.0,
                },
            ],
            teleport_count: 0,
            completed: 3,
            incomplete: 0,
            failed: vec![],
            steps: 10,
        };
        let m = aggregate_rate_metrics(0, 1, &sim, &routes, 4).unwrap();
        assert_eq!(m.diversity_treated, None);
        assert_eq!(m.norm_diversity_treated, None);
        assert_eq!(m.diversity_control, Some(4));
        assert_eq!(m.route_diversity, 4);
        assert_eq!(m.mean_co2, 2.0);
        assert_eq!(m.total_co2, 6.0);
    }
}
