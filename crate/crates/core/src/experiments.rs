//! Controlled adoption experiments: group assignment, rate sweeps with
//! repeats, market-share mixing and traffic-load calibration.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::analysis::{loads_from_teleports, AnalysisError, LoadCalibration};
use crate::demand::{sample_demand, OdMatrix, Tessellation, TripRequest, VehicleId};
use crate::hash::splitmix64;
use crate::metrics::{aggregate_rate_metrics, mean_std, RateMetrics, RATE_GRID};
use crate::network::RoadNetwork;
use crate::routing::{
    perturbed_fastest_path, FastestHistorical, HistoricalTravelTimes, NavigationService, PerturbationConfig,
    Route, CONTROL_PROVENANCE,
};
use crate::sim::{run_simulation, EmissionParams, SimConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("run at rate {rate}%, repeat {repeat} (seed {seed}) failed: {reason}")]
    Cell {
        rate: u32,
        repeat: u32,
        seed: u64,
        reason: String,
    },
    #[error("demand sampling for repeat {repeat} failed: {reason}")]
    Demand { repeat: u32, reason: String },
    #[error("calibration failed: {0}")]
    Calibration(#[from] AnalysisError),
}

/// Runs independent jobs, returning results in input order.
pub trait Executor: Sync {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        items.into_iter().map(f).collect()
    }
}

/// Stable seed for one `(rate, repeat)` cell.
pub fn derive_seed(master: u64, rate: u32, repeat: u32) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ u64::from(rate)) ^ u64::from(repeat))
}

// Pseudo-rates keying per-repeat streams; outside the valid rate range.
const DEMAND_KEY: u32 = 1_000;
const ASSIGN_KEY: u32 = 1_001;
const CONTROL_KEY: u32 = 1_002;
const SIM_KEY: u32 = 1_003;

/// Seed for the demand of one repeat, shared by every rate.
pub fn demand_seed(master: u64, repeat: u32) -> u64 {
    derive_seed(master, DEMAND_KEY, repeat)
}

/// Seed of the group-assignment draw of one repeat, shared by every rate so
/// treated groups are nested as the rate grows.
pub fn assignment_seed(master: u64, repeat: u32) -> u64 {
    derive_seed(master, ASSIGN_KEY, repeat)
}

/// Seed of the driver noise in the simulations of one repeat.
pub fn simulation_seed(master: u64, repeat: u32) -> u64 {
    derive_seed(master, SIM_KEY, repeat)
}

/// Seed of one control vehicle's perturbation in one repeat. A vehicle in
/// the control group drives the same route at every rate.
pub fn control_seed(master: u64, repeat: u32, vehicle: VehicleId) -> u64 {
    derive_seed(derive_seed(master, CONTROL_KEY, repeat), vehicle.0, 0)
}

/// Splits trips into a treated group of `round(N * r / 100)` uniformly chosen
/// vehicles (in draw order) and the control group (in input order).
///
/// Draws are a partial Fisher-Yates shuffle, so with the same generator state
/// the treated group at a higher rate extends the one at a lower rate.
pub fn assign_groups<R: Rng + ?Sized>(
    trips: &[TripRequest],
    rate: u32,
    rng: &mut R,
) -> (Vec<TripRequest>, Vec<TripRequest>) {
    let n = trips.len();
    let k = treated_count(n, rate);
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        order.swap(i, j);
    }
    let mut is_treated = vec![false; n];
    for &i in &order[..k] {
        is_treated[i] = true;
    }
    let treated = order[..k].iter().map(|&i| trips[i]).collect();
    let control = trips
        .iter()
        .zip(&is_treated)
        .filter(|(_, &t)| !t)
        .map(|(t, _)| *t)
        .collect();
    (treated, control)
}

/// `round(n * rate / 100)`, halves rounded up.
pub fn treated_count(n: usize, rate: u32) -> usize {
    ((n as u64 * u64::from(rate.min(100)) + 50) / 100) as usize
}

/// Largest-remainder apportionment of `k` items; remainder ties go to the
/// lower index.
pub fn split_by_shares(k: usize, shares: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|s| s * k as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| libm::floor(*e + 1e-9) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut left = k.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ExperimentPlan {
    /// vehicles per run
    pub n_vehicles: usize,
    /// adoption rates in percent
    pub rates: Vec<u32>,
    pub repeats: u32,
    /// departures are drawn in `[0, demand_horizon)`
    pub demand_horizon: f64,
    pub control: PerturbationConfig,
    pub sim: SimConfig,
    pub emissions: EmissionParams,
    pub master_seed: u64,
    /// Per-service fractions of the treated group; `None` means one service.
    pub shares: Option<Vec<f64>>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            n_vehicles: 1000,
            rates: RATE_GRID.to_vec(),
            repeats: 10,
            demand_horizon: 3600.0,
            control: PerturbationConfig::default(),
            sim: SimConfig::default(),
            emissions: EmissionParams::default(),
            master_seed: 0,
            shares: None,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self, n_services: usize) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::InvalidPlan(m));
        if self.rates.is_empty() || self.rates.iter().any(|&r| r > 100) {
            return bad(format!(
                "rates must be non-empty and within [0, 100]: {:?}",
                self.rates
            ));
        }
        if self.repeats < 1 {
            return bad("repeats must be >= 1".into());
        }
        if !(self.control.w >= 1.0) {
            return bad(format!("perturbation w must be >= 1, got {}", self.control.w));
        }
        self.sim
            .validate()
            .map_err(|e| ExperimentError::InvalidPlan(format!("{e}")))?;
        if !(self.demand_horizon > 0.0) {
            return bad("demand_horizon must be > 0".into());
        }
        if self.demand_horizon > self.sim.horizon {
            return bad("demand_horizon exceeds the simulation horizon".into());
        }
        match &self.shares {
            None if n_services != 1 => bad(format!(
                "{n_services} services given without shares; exactly one expected"
            )),
            Some(s) if s.len() != n_services => {
                bad(format!("{} shares for {} services", s.len(), n_services))
            }
            Some(s) if s.iter().any(|&x| !(x >= 0.0)) => bad("shares must be >= 0".into()),
            Some(s) if (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 => {
                bad(format!("shares sum to {}, not 1", s.iter().sum::<f64>()))
            }
            _ => Ok(()),
        }
    }
}

/// Where trips come from: an OD matrix sampled per repeat, or a fixed list.
#[derive(Clone, Copy)]
pub enum DemandSource<'a> {
    Od {
        od: &'a OdMatrix,
        tess: &'a Tessellation,
    },
    Fixed(&'a [TripRequest]),
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellResult {
    pub rate: u32,
    pub repeat: u32,
    pub seed: u64,
    pub metrics: RateMetrics,
    /// Σ per-vehicle CO2, mg; equals `metrics.total_co2` up to summation order
    pub vehicle_co2: f64,
}

/// Mean and sample standard deviation of a metric across repeats.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RateSummary {
    pub rate: u32,
    pub runs: usize,
    pub route_diversity: Stat,
    pub mean_co2: Stat,
    pub total_co2: Stat,
    pub entropy_norm: Stat,
    pub teleports: Stat,
    /// over runs where both groups are non-empty
    pub norm_diversity_treated: Option<Stat>,
    pub norm_diversity_control: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepResult {
    /// ordered by (rate, repeat)
    pub cells: Vec<CellResult>,
    /// ordered by rate
    pub summary: Vec<RateSummary>,
}

impl SweepResult {
    /// `(mean diversity, mean total CO2)` per rate, the input of the
    /// marginal series.
    pub fn means_by_rate(&self) -> BTreeMap<u32, (f64, f64)> {
        self.summary
            .iter()
            .map(|s| (s.rate, (s.route_diversity.mean, s.total_co2.mean)))
            .collect()
    }
}

pub fn summarize(cells: &[CellResult]) -> Vec<RateSummary> {
    let mut by_rate: BTreeMap<u32, Vec<&CellResult>> = BTreeMap::new();
    for c in cells {
        by_rate.entry(c.rate).or_default().push(c);
    }
    by_rate
        .into_iter()
        .map(|(rate, cs)| {
            let stat = |f: &dyn Fn(&RateMetrics) -> f64| {
                Stat::of(&cs.iter().map(|c| f(&c.metrics)).collect::<Vec<_>>())
            };
            let opt = |f: &dyn Fn(&RateMetrics) -> Option<f64>| {
                let v: Vec<f64> = cs.iter().filter_map(|c| f(&c.metrics)).collect();
                (!v.is_empty()).then(|| Stat::of(&v))
            };
            RateSummary {
                rate,
                runs: cs.len(),
                route_diversity: stat(&|m| m.route_diversity as f64),
                mean_co2: stat(&|m| m.mean_co2),
                total_co2: stat(&|m| m.total_co2),
                entropy_norm: stat(&|m| m.entropy_norm),
                teleports: stat(&|m| m.teleports as f64),
                norm_diversity_treated: opt(&|m| m.norm_diversity_treated),
                norm_diversity_control: opt(&|m| m.norm_diversity_control),
            }
        })
        .collect()
}

/// Everything a sweep needs besides the plan.
pub struct SweepInputs<'a> {
    pub network: &'a RoadNetwork,
    pub demand: DemandSource<'a>,
    pub services: &'a [&'a dyn NavigationService],
    pub history: &'a HistoricalTravelTimes,
}

fn demand_for_repeat(
    inputs: &SweepInputs<'_>,
    plan: &ExperimentPlan,
    repeat: u32,
) -> Result<Vec<TripRequest>, ExperimentError> {
    match inputs.demand {
        DemandSource::Fixed(trips) => Ok(trips.to_vec()),
        DemandSource::Od { od, tess } => sample_demand(
            od,
            tess,
            plan.n_vehicles,
            plan.demand_horizon,
            demand_seed(plan.master_seed, repeat),
        )
        .map(|s| s.requests)
        .map_err(|e| ExperimentError::Demand {
            repeat,
            reason: format!("{e}"),
        }),
    }
}

/// Routes one cell's trips: treated vehicles by their service, the rest by
/// the perturbed router with a generator keyed on (repeat, vehicle).
pub fn route_cell(
    inputs: &SweepInputs<'_>,
    plan: &ExperimentPlan,
    trips: &[TripRequest],
    rate: u32,
    repeat: u32,
) -> Result<Vec<Route>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(assignment_seed(plan.master_seed, repeat));
    let (treated, control) = assign_groups(trips, rate, &mut rng);
    let shares = plan.shares.clone().unwrap_or_else(|| vec![1.0]);
    let counts = split_by_shares(treated.len(), &shares);
    let mut routes = Vec::with_capacity(trips.len());
    let mut start = 0;
    for (svc, &count) in inputs.services.iter().zip(&counts) {
        for req in &treated[start..start + count] {
            routes.push(
                svc.route(inputs.network, req, inputs.history)
                    .map_err(|e| format!("vehicle {}: {e}", req.vehicle))?,
            );
        }
        start += count;
    }
    for req in &control {
        let mut vrng = ChaCha8Rng::seed_from_u64(control_seed(plan.master_seed, repeat, req.vehicle));
        let edges = perturbed_fastest_path(
            inputs.network,
            req.origin,
            req.destination,
            &plan.control,
            &mut vrng,
        )
        .map_err(|e| format!("vehicle {}: {e}", req.vehicle))?;
        routes.push(Route {
            vehicle: req.vehicle,
            edges,
            depart: req.depart,
            provenance: CONTROL_PROVENANCE.into(),
        });
    }
    routes.sort_by_key(|r| r.vehicle);
    Ok(routes)
}

fn run_cell(
    inputs: &SweepInputs<'_>,
    plan: &ExperimentPlan,
    trips: &[TripRequest],
    rate: u32,
    repeat: u32,
) -> Result<CellResult, ExperimentError> {
    let seed = derive_seed(plan.master_seed, rate, repeat);
    let fail = |reason: String| ExperimentError::Cell {
        rate,
        repeat,
        seed,
        reason,
    };
    let routes = route_cell(inputs, plan, trips, rate, repeat).map_err(fail)?;
    let sim_seed = simulation_seed(plan.master_seed, repeat);
    let sim = run_simulation(inputs.network, &routes, plan.sim, plan.emissions, sim_seed)
        .map_err(|e| fail(format!("{e}")))?;
    if let Some((v, why)) = sim.failed.first() {
        return Err(fail(format!("vehicle {v} rejected: {why}")));
    }
    let metrics = aggregate_rate_metrics(rate, seed, &sim, &routes, inputs.network.num_edges())
        .map_err(|e| fail(format!("{e}")))?;
    Ok(CellResult {
        rate,
        repeat,
        seed,
        metrics,
        vehicle_co2: sim.total_vehicle_co2(),
    })
}

/// Runs every `(rate, repeat)` cell. Demand is drawn once per repeat and
/// shared by all rates, so only group assignment and routing vary with the
/// rate. Results are ordered by `(rate, repeat)` whatever the executor.
pub fn run_sweep<E: Executor>(
    inputs: &SweepInputs<'_>,
    plan: &ExperimentPlan,
    executor: &E,
) -> Result<SweepResult, ExperimentError> {
    plan.validate(inputs.services.len())?;
    let demands: Vec<Vec<TripRequest>> = (0..plan.repeats)
        .map(|rep| demand_for_repeat(inputs, plan, rep))
        .collect::<Result<_, _>>()?;
    let mut rates = plan.rates.clone();
    rates.sort_unstable();
    rates.dedup();
    let jobs: Vec<(u32, u32)> = rates
        .iter()
        .flat_map(|&r| (0..plan.repeats).map(move |rep| (r, rep)))
        .collect();
    let results = executor.map(jobs, |(rate, rep)| {
        run_cell(inputs, plan, &demands[rep as usize], rate, rep)
    });
    let cells: Vec<CellResult> = results.into_iter().collect::<Result<_, _>>()?;
    let summary = summarize(&cells);
    Ok(SweepResult { cells, summary })
}

/// Sweep with the treated group split among several services by shares.
pub fn market_share_sweep<E: Executor>(
    inputs: &SweepInputs<'_>,
    plan: &ExperimentPlan,
    executor: &E,
) -> Result<SweepResult, ExperimentError> {
    if inputs.services.len() < 2 {
        return Err(ExperimentError::InvalidPlan(
            "market-share scenario needs at least 2 services".into(),
        ));
    }
    if plan.shares.is_none() {
        return Err(ExperimentError::InvalidPlan(
            "market-share scenario needs shares".into(),
        ));
    }
    run_sweep(inputs, plan, executor)
}

/// Mean teleports per candidate load across the full rate grid with the
/// fastest-historical service, then the elbow rule.
pub fn calibrate_traffic_loads<E: Executor>(
    network: &RoadNetwork,
    demand: DemandSource<'_>,
    candidates: &[usize],
    repeats: u32,
    template: &ExperimentPlan,
    executor: &E,
) -> Result<LoadCalibration, ExperimentError> {
    let fastest = FastestHistorical::new();
    let services: [&dyn NavigationService; 1] = [&fastest];
    let history = HistoricalTravelTimes::free_flow();
    let inputs = SweepInputs {
        network,
        demand,
        services: &services,
        history: &history,
    };
    let mut teleports = Vec::with_capacity(candidates.len());
    for &n in candidates {
        let plan = ExperimentPlan {
            n_vehicles: n,
            rates: RATE_GRID.to_vec(),
            repeats,
            shares: None,
            ..template.clone()
        };
        let sweep = run_sweep(&inputs, &plan, executor)?;
        let all: Vec<f64> = sweep.cells.iter().map(|c| c.metrics.teleports as f64).collect();
        teleports.push(all.iter().sum::<f64>() / all.len() as f64);
    }
    Ok(loads_from_teleports(candidates, &teleports)?)
}

/// Vehicle ids of the treated group for a cell, for inspection and replay.
pub fn treated_vehicles(trips: &[TripRequest], rate: u32, master: u64, repeat: u32) -> Vec<VehicleId> {
    let mut rng = ChaCha8Rng::seed_from_u64(assignment_seed(master, repeat));
    assign_groups(trips, rate, &mut rng)
        .0
        .iter()
        .map(|t| t.vehicle)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{generate_grid, EdgeIx, GridSpec};

    fn trips(n: u32) -> Vec<TripRequest> {
        (0..n)
            .map(|v| TripRequest {
                vehicle: VehicleId(v),
                origin: EdgeIx(0),
                destination: EdgeIx(1),
                depart: 0.0,
            })
            .collect()
    }

    #[test]
    fn group_sizes() {
        let t = trips(1000);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (tr, co) = assign_groups(&t, 0, &mut rng);
        assert!(tr.is_empty() && co.len() == 1000);
        let (tr, co) = assign_groups(&t, 100, &mut rng);
        assert!(co.is_empty() && tr.len() == 1000);
        let (tr, co) = assign_groups(&t, 30, &mut rng);
        assert_eq!((tr.len(), co.len()), (300, 700));
        let mut all: Vec<u32> = tr.iter().chain(&co).map(|t| t.vehicle.0).collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn treated_groups_nest_across_rates() {
        let t = trips(200);
        let mut prev: Vec<VehicleId> = Vec::new();
        for rate in (0..=100).step_by(10) {
            let cur = treated_vehicles(&t, rate, 9, 3);
            assert_eq!(&cur[..prev.len()], &prev[..]);
            prev = cur;
        }
        assert_eq!(prev.len(), 200);
    }

    #[test]
    fn share_splits() {
        assert_eq!(split_by_shares(400, &[0.25; 4]), vec![100; 4]);
        assert_eq!(split_by_shares(10, &[0.5, 0.3, 0.2]), vec![5, 3, 2]);
        assert_eq!(split_by_shares(10, &[1.0 / 3.0; 3]), vec![4, 3, 3]);
        assert_eq!(split_by_shares(7, &[1.0]), vec![7]);
    }

    #[test]
    fn seeds_differ_by_cell() {
        let a = derive_seed(1, 10, 0);
        assert_eq!(a, derive_seed(1, 10, 0));
        assert_ne!(a, derive_seed(1, 20, 0));
        assert_ne!(a, derive_seed(1, 10, 1));
        assert_ne!(a, derive_seed(2, 10, 0));
    }

    fn small_plan() -> ExperimentPlan {
        ExperimentPlan {
            n_vehicles: 60,
            rates: vec![0, 50, 100],
            repeats: 2,
            demand_horizon: 600.0,
            sim: SimConfig {
                horizon: 3600.0,
                ..SimConfig::default()
            },
            master_seed: 11,
            ..ExperimentPlan::default()
        }
    }

    #[test]
    fn sweep_is_deterministic_and_complete() {
        let net = generate_grid(&GridSpec::new(6, 6, 250.0, 13.89, 1)).unwrap();
        let tess = Tessellation::for_network(&net, 500.0).unwrap();
        let od = crate::demand::synthetic_heavy_tailed_od(&tess, 1000, 3, 0.5, 2).unwrap();
        let fastest = FastestHistorical::new();
        let services: [&dyn NavigationService; 1] = [&fastest];
        let history = HistoricalTravelTimes::free_flow();
        let inputs = SweepInputs {
            network: &net,
            demand: DemandSource::Od { od: &od, tess: &tess },
            services: &services,
            history: &history,
        };
        let plan = small_plan();
        let a = run_sweep(&inputs, &plan, &Sequential).unwrap();
        let b = run_sweep(&inputs, &plan, &Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 6);
        let coords: Vec<(u32, u32)> = a.cells.iter().map(|c| (c.rate, c.repeat)).collect();
        assert_eq!(coords, vec![(0, 0), (0, 1), (50, 0), (50, 1), (100, 0), (100, 1)]);
        for c in &a.cells {
            assert_eq!(c.metrics.treated + c.metrics.control, 60);
        }
        let s = &a.summary[0];
        let mean = (a.cells[0].metrics.route_diversity + a.cells[1].metrics.route_diversity) as f64 / 2.0;
        assert_eq!(s.route_diversity.mean, mean);
    }

    #[test]
    fn single_share_equals_plain_sweep() {
        let net = generate_grid(&GridSpec::new(5, 5, 250.0, 13.89, 1)).unwrap();
        let tess = Tessellation::for_network(&net, 500.0).unwrap();
        let od = crate::demand::synthetic_heavy_tailed_od(&tess, 500, 2, 0.5, 5).unwrap();
        let fastest = FastestHistorical::new();
        let services: [&dyn NavigationService; 1] = [&fastest];
        let history = HistoricalTravelTimes::free_flow();
        let inputs = SweepInputs {
            network: &net,
            demand: DemandSource::Od { od: &od, tess: &tess },
            services: &services,
            history: &history,
        };
        let plan = ExperimentPlan {
            rates: vec![40],
            repeats: 1,
            ..small_plan()
        };
        let shared = ExperimentPlan {
            shares: Some(vec![1.0]),
            ..plan.clone()
        };
        assert_eq!(
            run_sweep(&inputs, &plan, &Sequential).unwrap(),
            run_sweep(&inputs, &shared, &Sequential).unwrap()
        );
    }

    #[test]
    fn plan_validation() {
        let p = ExperimentPlan {
            rates: vec![110],
            ..ExperimentPlan::default()
        };
        assert!(p.validate(1).is_err());
        assert!(ExperimentPlan::default().validate(2).is_err());
        let p = ExperimentPlan {
            shares: Some(vec![0.5, 0.4]),
            ..ExperimentPlan::default()
        };
        assert!(p.validate(2).is_err());
    }
}
