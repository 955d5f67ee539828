//! The frozen synthetic benchmark used to check the qualitative adoption
//! patterns: a 20x20 lattice with two arterials per axis, a heavy-tailed OD
//! matrix and a morning burst of departures.

use alloc::vec::Vec;

use crate::demand::{synthetic_heavy_tailed_od, DemandError, OdMatrix, Tessellation};
use crate::experiments::ExperimentPlan;
use crate::network::{generate_grid, Arterials, GridSpec, NetworkError, RoadNetwork};
use crate::sim::SimConfig;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Benchmark {
    pub grid: GridSpec,
    /// tessellation tile side, meters
    pub tile_size: f64,
    pub od_total: u64,
    pub hub_flows: usize,
    pub hub_share: f64,
    pub od_seed: u64,
    /// Sweep settings; `n_vehicles` is replaced by the calibrated load.
    pub plan: ExperimentPlan,
    pub candidates: Vec<usize>,
    pub calibration_repeats: u32,
}

impl Benchmark {
    /// 100 m blocks with 50 km/h single-lane streets; rows and columns 4 and
    /// 14 are two-lane 80 km/h arterials. Without a road hierarchy every
    /// staircase path ties and no router can concentrate traffic.
    pub fn standard() -> Self {
        let grid = GridSpec::new(20, 20, 100.0, 13.89, 1).with_arterials(Arterials {
            every: 10,
            offset: 4,
            speed_limit: 22.22,
            lanes: 2,
        });
        Self {
            grid,
            tile_size: 400.0,
            od_total: 100_000,
            hub_flows: 5,
            hub_share: 0.5,
            od_seed: 7,
            plan: ExperimentPlan {
                n_vehicles: 2000,
                repeats: 10,
                demand_horizon: 120.0,
                sim: SimConfig::default(),
                master_seed: 42,
                ..ExperimentPlan::default()
            },
            candidates: (1..=8).map(|k| 500 * k).collect(),
            calibration_repeats: 3,
        }
    }

    pub fn network(&self) -> Result<RoadNetwork, NetworkError> {
        generate_grid(&self.grid)
    }

    /// Network, tessellation and OD matrix.
    pub fn build(&self) -> Result<BenchmarkInputs, BenchmarkError> {
        let network = self.network()?;
        let tess = Tessellation::for_network(&network, self.tile_size)?;
        let od =
            synthetic_heavy_tailed_od(&tess, self.od_total, self.hub_flows, self.hub_share, self.od_seed)?;
        Ok(BenchmarkInputs { network, tess, od })
    }
}

pub struct BenchmarkInputs {
    pub network: RoadNetwork,
    pub tess: Tessellation,
    pub od: OdMatrix,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BenchmarkError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Demand(#[from] DemandError),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_benchmark_builds() {
        let b = Benchmark::standard();
        let inp = b.build().unwrap();
        assert_eq!(inp.network.num_edges(), 2 * 2 * 20 * 19);
        assert_eq!(inp.od.total(), 100_000);
        assert_eq!(b.candidates.first(), Some(&500));
        assert_eq!(b.candidates.last(), Some(&4000));
        b.plan.validate(1).unwrap();
    }
}
