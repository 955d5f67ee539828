//! JSON plan files. Relative paths resolve against the plan's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use navsim_core::benchmark::Benchmark;
use navsim_core::demand::{synthetic_heavy_tailed_od, OdMatrix, Tessellation, TripRequest};
use navsim_core::experiments::{DemandSource, ExperimentPlan};
use navsim_core::metrics::RATE_GRID;
use navsim_core::network::{generate_grid, GridSpec, RoadNetwork};
use navsim_core::routing::{
    EcoRouting, FastestHistorical, HistoricalTravelTimes, NavigationService, PerturbationConfig,
    PrecomputedRoutes, ShortestDistance,
};
use navsim_core::sim::{EmissionParams, SimConfig};

use crate::io;
use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub network: NetworkSpec,
    pub demand: DemandSpec,
    #[serde(default = "default_services")]
    pub services: Vec<ServiceSpec>,
    /// Fractions of the treated group per service, in service order.
    #[serde(default)]
    pub shares: Option<Vec<f64>>,
    /// `edge_id,travel_time_s` CSV; free-flow times when absent.
    #[serde(default)]
    pub history: Option<PathBuf>,
    #[serde(default = "default_n")]
    pub n_vehicles: usize,
    #[serde(default = "default_rates")]
    pub rates: Vec<u32>,
    #[serde(default = "default_repeats")]
    pub repeats: u32,
    #[serde(default = "default_demand_horizon")]
    pub demand_horizon: f64,
    /// control-group randomization degree
    #[serde(default = "default_w")]
    pub w: f64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default = "default_emissions")]
    pub emissions: [f64; 6],
    #[serde(default)]
    pub master_seed: u64,
}

fn default_services() -> Vec<ServiceSpec> {
    vec![ServiceSpec::Fastest]
}
fn default_n() -> usize {
    ExperimentPlan::default().n_vehicles
}
fn default_rates() -> Vec<u32> {
    RATE_GRID.to_vec()
}
fn default_repeats() -> u32 {
    ExperimentPlan::default().repeats
}
fn default_demand_horizon() -> f64 {
    ExperimentPlan::default().demand_horizon
}
fn default_w() -> f64 {
    PerturbationConfig::default().w
}
fn default_emissions() -> [f64; 6] {
    EmissionParams::PASSENGER_CAR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    Files { nodes: PathBuf, edges: PathBuf },
    Grid(GridSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandSpec {
    /// OD CSV sampled per repeat over a tessellation of `tile_size` meters.
    Od { path: PathBuf, tile_size: f64 },
    /// Fixed trip list used as-is by every repeat.
    Trips { path: PathBuf },
    /// Heavy-tailed synthetic OD matrix.
    Synthetic {
        tile_size: f64,
        total: u64,
        hub_flows: usize,
        hub_share: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceSpec {
    Fastest,
    Shortest,
    Eco {
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default = "default_fuel")]
        fuel_factor: f64,
    },
    File {
        name: String,
        path: PathBuf,
    },
}

fn default_lambda() -> f64 {
    EcoRouting::DEFAULT_LAMBDA
}
fn default_fuel() -> f64 {
    EcoRouting::DEFAULT_FUEL_FACTOR
}

impl ServiceSpec {
    pub fn build(&self, base: &Path) -> Result<Box<dyn NavigationService>, Error> {
        Ok(match self {
            ServiceSpec::Fastest => Box::new(FastestHistorical::new()),
            ServiceSpec::Shortest => Box::new(ShortestDistance::new()),
            ServiceSpec::Eco { lambda, fuel_factor } => {
                Box::new(EcoRouting::new(*lambda, *fuel_factor).map_err(Error::invalid)?)
            }
            ServiceSpec::File { name, path } => {
                let entries = io::read_routes_file(&io::resolve(base, path))?;
                Box::new(PrecomputedRoutes::new(name.clone(), entries))
            }
        })
    }
}

impl PlanFile {
    /// The frozen benchmark as a plan file.
    pub fn benchmark() -> Self {
        let b = Benchmark::standard();
        Self {
            network: NetworkSpec::Grid(b.grid),
            demand: DemandSpec::Synthetic {
                tile_size: b.tile_size,
                total: b.od_total,
                hub_flows: b.hub_flows,
                hub_share: b.hub_share,
                seed: b.od_seed,
            },
            services: default_services(),
            shares: None,
            history: None,
            n_vehicles: b.plan.n_vehicles,
            rates: b.plan.rates.clone(),
            repeats: b.plan.repeats,
            demand_horizon: b.plan.demand_horizon,
            w: b.plan.control.w,
            sim: b.plan.sim,
            emissions: b.plan.emissions.c,
            master_seed: b.plan.master_seed,
        }
    }

    pub fn read(path: &Path) -> Result<Self, Error> {
        let text = io::read_text(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            line: e.line() as u64,
            msg: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn experiment_plan(&self) -> Result<ExperimentPlan, Error> {
        Ok(ExperimentPlan {
            n_vehicles: self.n_vehicles,
            rates: self.rates.clone(),
            repeats: self.repeats,
            demand_horizon: self.demand_horizon,
            control: PerturbationConfig::new(self.w).map_err(Error::invalid)?,
            sim: self.sim,
            emissions: EmissionParams::from_slice(&self.emissions).map_err(Error::invalid)?,
            master_seed: self.master_seed,
            shares: self.shares.clone(),
        })
    }

    /// Input files referenced by the plan, resolved against `base`.
    pub fn input_files(&self, base: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        if let NetworkSpec::Files { nodes, edges } = &self.network {
            out.push(nodes.clone());
            out.push(edges.clone());
        }
        match &self.demand {
            DemandSpec::Od { path, .. } | DemandSpec::Trips { path } => out.push(path.clone()),
            DemandSpec::Synthetic { .. } => {}
        }
        for s in &self.services {
            if let ServiceSpec::File { path, .. } = s {
                out.push(path.clone());
            }
        }
        out.extend(self.history.clone());
        out.into_iter().map(|p| io::resolve(base, &p)).collect()
    }

    /// Everything a sweep needs, loaded and validated.
    pub fn load(&self, base: &Path) -> Result<LoadedPlan, Error> {
        let network = match &self.network {
            NetworkSpec::Files { nodes, edges } => {
                io::read_network(&io::resolve(base, nodes), &io::resolve(base, edges))?
            }
            NetworkSpec::Grid(spec) => generate_grid(spec).map_err(Error::invalid)?,
        };
        let demand = match &self.demand {
            DemandSpec::Od { path, tile_size } => {
                let tess = Tessellation::for_network(&network, *tile_size).map_err(Error::invalid)?;
                LoadedDemand::Od {
                    od: io::read_od(&io::resolve(base, path))?,
                    tess,
                }
            }
            DemandSpec::Trips { path } => {
                LoadedDemand::Fixed(io::read_trips(&io::resolve(base, path), &network)?)
            }
            DemandSpec::Synthetic {
                tile_size,
                total,
                hub_flows,
                hub_share,
                seed,
            } => {
                let tess = Tessellation::for_network(&network, *tile_size).map_err(Error::invalid)?;
                let od = synthetic_heavy_tailed_od(&tess, *total, *hub_flows, *hub_share, *seed)
                    .map_err(Error::invalid)?;
                LoadedDemand::Od { od, tess }
            }
        };
        let services = self
            .services
            .iter()
            .map(|s| s.build(base))
            .collect::<Result<Vec<_>, _>>()?;
        let history = match &self.history {
            Some(p) => io::read_history(&io::resolve(base, p), &network)?,
            None => HistoricalTravelTimes::free_flow(),
        };
        let plan = self.experiment_plan()?;
        plan.validate(services.len()).map_err(Error::invalid)?;
        Ok(LoadedPlan {
            plan,
            network,
            demand,
            services,
            history,
        })
    }

    /// SHA-256 over the canonical plan JSON followed by the digest of every
    /// input file, so edited inputs land in a different run directory.
    pub fn config_hash(&self, input_digests: &[(PathBuf, String)]) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(self).expect("plan serializes").as_bytes());
        for (_, d) in input_digests {
            h.update(b"\n");
            h.update(d.as_bytes());
        }
        io::hex(&h.finalize())
    }
}

pub enum LoadedDemand {
    Od { od: OdMatrix, tess: Tessellation },
    Fixed(Vec<TripRequest>),
}

impl LoadedDemand {
    pub fn source(&self) -> DemandSource<'_> {
        match self {
            LoadedDemand::Od { od, tess } => DemandSource::Od { od, tess },
            LoadedDemand::Fixed(t) => DemandSource::Fixed(t),
        }
    }
}

pub struct LoadedPlan {
    pub plan: ExperimentPlan,
    pub network: RoadNetwork,
    pub demand: LoadedDemand,
    pub services: Vec<Box<dyn NavigationService>>,
    pub history: HistoricalTravelTimes,
}

impl LoadedPlan {
    pub fn service_refs(&self) -> Vec<&dyn NavigationService> {
        self.services.iter().map(|s| s.as_ref()).collect()
    }
}
