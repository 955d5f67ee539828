//! Discrete-time microscopic simulation with Krauss-style car following,
//! capacity-limited insertion, teleporting of stalled vehicles and per-step
//! CO2 accounting.
//!
//! Positions are longitudinal offsets of the front bumper from the start of
//! the current edge. Each lane is a queue ordered front to back; vehicles keep
//! their lane on an edge and pick the emptiest lane when entering the next.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::demand::VehicleId;
use crate::hash::unit;
use crate::network::{EdgeIx, RoadNetwork};
use crate::routing::{check_connected, Route};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(default)
)]
pub struct SimConfig {
    /// seconds
    pub step_length: f64,
    /// seconds stationary before a teleport
    pub teleport_wait: f64,
    /// m/s²
    pub max_accel: f64,
    /// m/s²
    pub max_decel: f64,
    /// meters
    pub min_gap: f64,
    /// meters
    pub vehicle_length: f64,
    /// driver imperfection in `[0, 1]`
    pub sigma: f64,
    /// reaction time, seconds
    pub tau: f64,
    /// seconds
    pub horizon: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            step_length: 1.0,
            teleport_wait: 300.0,
            max_accel: 2.6,
            max_decel: 4.5,
            min_gap: 2.5,
            vehicle_length: 5.0,
            sigma: 0.5,
            tau: 1.0,
            horizon: 7200.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("emission model needs exactly 6 coefficients, got {0}")]
    CoefficientCount(usize),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| -> Result<(), SimError> { Err(SimError::InvalidConfig(m.into())) };
        if !(self.step_length > 0.0) {
            return bad("step_length must be > 0");
        }
        if !(self.teleport_wait > 0.0) {
            return bad("teleport_wait must be > 0");
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return bad("sigma must be within [0, 1]");
        }
        if !(self.max_accel > 0.0 && self.max_decel > 0.0) {
            return bad("accelerations must be > 0");
        }
        if !(self.min_gap >= 0.0 && self.vehicle_length > 0.0 && self.tau > 0.0) {
            return bad("min_gap must be >= 0, vehicle_length and tau > 0");
        }
        if !(self.horizon > 0.0) {
            return bad("horizon must be > 0");
        }
        Ok(())
    }
}

/// Coefficients of `c0 + c1*s*a + c2*s*a^2 + c3*s + c4*s^2 + c5*s^3` in mg/s
/// with `s` in m/s and `a` in m/s².
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EmissionParams {
    pub c: [f64; 6],
}

impl EmissionParams {
    /// Representative gasoline passenger car: 0.6 g/s idling, about
    /// 160 g/km cruising at 50 km/h and a per-km minimum near 80 km/h. The
    /// `s*a` term is the inertial power of a 1.3 t car at 25% efficiency.
    pub const PASSENGER_CAR: [f64; 6] = [600.0, 380.0, 10.0, 187.4, -7.87, 0.198];

    pub fn from_slice(c: &[f64]) -> Result<Self, SimError> {
        let c: [f64; 6] = c.try_into().map_err(|_| SimError::CoefficientCount(c.len()))?;
        Ok(Self { c })
    }
}

impl Default for EmissionParams {
    fn default() -> Self {
        Self {
            c: Self::PASSENGER_CAR,
        }
    }
}

/// Instantaneous CO2 rate in mg/s, clamped at zero.
#[inline]
pub fn emission_instant(s: f64, a: f64, p: &EmissionParams) -> f64 {
    let c = &p.c;
    let raw = c[0] + c[1] * s * a + c[2] * s * a * a + c[3] * s + c[4] * s * s + c[5] * s * s * s;
    raw.max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VehicleRecord {
    pub vehicle: VehicleId,
    /// requested departure, seconds
    pub depart: f64,
    pub arrive: Option<f64>,
    /// `arrive - depart`, including any wait to enter the network
    pub travel: Option<f64>,
    /// mg
    pub co2: f64,
    pub completed: bool,
    pub teleported: bool,
    pub route: Vec<EdgeIx>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EdgeRecord {
    /// vehicles that entered the edge
    pub vehicle_count: u32,
    /// mg
    pub co2: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SimResult {
    pub config: SimConfig,
    pub emissions: EmissionParams,
    pub seed: u64,
    /// ordered by vehicle id; rejected vehicles are absent
    pub vehicles: Vec<VehicleRecord>,
    /// indexed by edge index
    pub edges: Vec<EdgeRecord>,
    pub teleport_count: u64,
    pub completed: usize,
    /// still en route or waiting to enter when the horizon ran out
    pub incomplete: usize,
    /// routes rejected before the start
    pub failed: Vec<(VehicleId, String)>,
    pub steps: u64,
}

impl SimResult {
    pub fn total_vehicle_co2(&self) -> f64 {
        self.vehicles.iter().map(|v| v.co2).sum()
    }

    pub fn total_edge_co2(&self) -> f64 {
        self.edges.iter().map(|e| e.co2).sum()
    }
}

/// True iff two results are identical in every field, configuration included.
pub fn replay_check(a: &SimResult, b: &SimResult) -> bool {
    a == b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Pending,
    Active,
    Done,
}

#[derive(Debug, Clone)]
struct Vehicle {
    id: VehicleId,
    route: Vec<EdgeIx>,
    depart: f64,
    phase: Phase,
    cursor: usize,
    lane: usize,
    pos: f64,
    speed: f64,
    next_speed: f64,
    wait: f64,
    co2: f64,
    arrive: Option<f64>,
    teleported: bool,
}

#[derive(Debug, Clone)]
struct EdgeState {
    lanes: Vec<VecDeque<u32>>,
    credit: f64,
    /// vehicles waiting to be inserted, in (depart, id) order
    pending: VecDeque<u32>,
    /// teleported vehicles waiting for room at the start of this edge
    teleported_in: VecDeque<u32>,
    entered_this_step: bool,
    occupied_at_step_start: bool,
}

/// One vehicle's position as seen between steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleSnapshot {
    pub vehicle: VehicleId,
    pub edge: EdgeIx,
    pub lane: usize,
    pub pos: f64,
    pub speed: f64,
}

/// A running simulation; [`run_simulation`] drives it to completion.
pub struct Simulation<'a> {
    network: &'a RoadNetwork,
    cfg: SimConfig,
    emissions: EmissionParams,
    seed: u64,
    vehicles: Vec<Vehicle>,
    edges: Vec<EdgeState>,
    edge_records: Vec<EdgeRecord>,
    /// indices of not-yet-released vehicles, sorted by (depart, id)
    schedule: Vec<u32>,
    next_release: usize,
    failed: Vec<(VehicleId, String)>,
    teleports: u64,
    step: u64,
    remaining: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(
        network: &'a RoadNetwork,
        routes: &[Route],
        cfg: SimConfig,
        emissions: EmissionParams,
        seed: u64,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        let mut sorted: Vec<&Route> = routes.iter().collect();
        sorted.sort_by_key(|r| r.vehicle);
        let mut vehicles = Vec::with_capacity(sorted.len());
        let mut failed = Vec::new();
        for r in sorted {
            if let Err(e) = check_connected(network, &r.edges) {
                failed.push((r.vehicle, format!("{e}")));
                continue;
            }
            if !(r.depart >= 0.0 && r.depart < cfg.horizon) {
                failed.push((r.vehicle, format!("departure {} outside horizon", r.depart)));
                continue;
            }
            vehicles.push(Vehicle {
                id: r.vehicle,
                route: r.edges.clone(),
                depart: r.depart,
                phase: Phase::Pending,
                cursor: 0,
                lane: 0,
                pos: 0.0,
                speed: 0.0,
                next_speed: 0.0,
                wait: 0.0,
                co2: 0.0,
                arrive: None,
                teleported: false,
            });
        }
        let mut schedule: Vec<u32> = (0..vehicles.len() as u32).collect();
        schedule.sort_by(|&a, &b| {
            let (va, vb) = (&vehicles[a as usize], &vehicles[b as usize]);
            va.depart.total_cmp(&vb.depart).then(va.id.cmp(&vb.id))
        });
        let edges = network
            .edges()
            .iter()
            .map(|e| EdgeState {
                lanes: vec![VecDeque::new(); e.lanes.max(1) as usize],
                credit: 1.0,
                pending: VecDeque::new(),
                teleported_in: VecDeque::new(),
                entered_this_step: false,
                occupied_at_step_start: false,
            })
            .collect();
        let remaining = vehicles.len();
        Ok(Self {
            network,
            cfg,
            emissions,
            seed,
            vehicles,
            edges,
            edge_records: vec![EdgeRecord::default(); network.num_edges()],
            schedule,
            next_release: 0,
            failed,
            teleports: 0,
            step: 0,
            remaining,
        })
    }

    /// Simulation clock at the start of the next step.
    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.step_length
    }

    pub fn is_finished(&self) -> bool {
        self.remaining == 0 || self.time() >= self.cfg.horizon
    }

    pub fn teleport_count(&self) -> u64 {
        self.teleports
    }

    /// Vehicles on the network, by edge, lane and queue position (front first).
    pub fn snapshot(&self) -> Vec<VehicleSnapshot> {
        let mut out = Vec::new();
        for (e, st) in self.edges.iter().enumerate() {
            for (l, lane) in st.lanes.iter().enumerate() {
                for &v in lane {
                    let veh = &self.vehicles[v as usize];
                    out.push(VehicleSnapshot {
                        vehicle: veh.id,
                        edge: EdgeIx(e as u32),
                        lane: l,
                        pos: veh.pos,
                        speed: veh.speed,
                    });
                }
            }
        }
        out
    }

    /// Rear-bumper position of the last vehicle in a lane; the lane length
    /// plus the gap requirement when empty.
    fn lane_room(&self, edge: EdgeIx, lane: usize) -> f64 {
        match self.edges[edge.index()].lanes[lane].back() {
            Some(&v) => self.vehicles[v as usize].pos - self.cfg.vehicle_length,
            None => self.network.edge(edge).length + self.cfg.min_gap,
        }
    }

    /// Lane with the most room; lowest index on ties.
    fn roomiest_lane(&self, edge: EdgeIx) -> (usize, f64) {
        let n = self.edges[edge.index()].lanes.len();
        let mut best = (0, self.lane_room(edge, 0));
        for l in 1..n {
            let r = self.lane_room(edge, l);
            if r > best.1 {
                best = (l, r);
            }
        }
        best
    }

    fn place(&mut self, v: u32, edge: EdgeIx, lane: usize, pos: f64) {
        let limit = self.network.edge(edge).speed_limit;
        let veh = &mut self.vehicles[v as usize];
        veh.pos = pos;
        veh.lane = lane;
        // entering a slower edge clips the carried speed
        veh.speed = veh.speed.min(limit);
        self.edges[edge.index()].lanes[lane].push_back(v);
        self.edge_records[edge.index()].vehicle_count += 1;
    }

    fn finish(&mut self, v: u32, at: f64) {
        let veh = &mut self.vehicles[v as usize];
        veh.phase = Phase::Done;
        veh.arrive = Some(at);
        self.remaining -= 1;
    }

    fn release_and_insert(&mut self, now: f64) {
        while self.next_release < self.schedule.len() {
            let v = self.schedule[self.next_release];
            if self.vehicles[v as usize].depart > now {
                break;
            }
            let first = self.vehicles[v as usize].route[0];
            self.edges[first.index()].pending.push_back(v);
            self.next_release += 1;
        }
        let dt = self.cfg.step_length;
        for e in 0..self.edges.len() {
            let edge = EdgeIx(e as u32);
            while let Some(&v) = self.edges[e].teleported_in.front() {
                let (lane, room) = self.roomiest_lane(edge);
                if room < 0.0 {
                    break;
                }
                self.edges[e].teleported_in.pop_front();
                self.vehicles[v as usize].cursor += 1;
                self.place(v, edge, lane, 0.0);
            }
            let rate = self.network.edges()[e].capacity / 3600.0 * dt;
            let st = &mut self.edges[e];
            st.credit = (st.credit + rate).min(rate.max(1.0));
            while let Some(&v) = self.edges[e].pending.front() {
                if self.edges[e].credit < 1.0 {
                    break;
                }
                let (lane, room) = self.roomiest_lane(edge);
                if room < self.cfg.min_gap {
                    break;
                }
                self.edges[e].pending.pop_front();
                self.edges[e].credit -= 1.0;
                self.vehicles[v as usize].phase = Phase::Active;
                self.vehicles[v as usize].speed = 0.0;
                self.place(v, edge, lane, 0.0);
            }
        }
    }

    /// Safe-speed update for every vehicle from the state at step start.
    fn plan_speeds(&mut self) {
        let cfg = self.cfg;
        let dt = cfg.step_length;
        let b = cfg.max_decel;
        for e in 0..self.edges.len() {
            let edge = EdgeIx(e as u32);
            let info = self.network.edge(edge);
            for l in 0..self.edges[e].lanes.len() {
                let mut ahead: Option<u32> = None;
                for k in 0..self.edges[e].lanes[l].len() {
                    let v = self.edges[e].lanes[l][k];
                    let veh = &self.vehicles[v as usize];
                    let speed = veh.speed;
                    let dist_end = info.length - veh.pos;
                    let next = veh.route.get(veh.cursor + 1).copied();

                    // Leader on this lane, or the rear of the lane we would
                    // enter next.
                    let leader: Option<(f64, f64)> = match ahead {
                        Some(a) => {
                            let lv = &self.vehicles[a as usize];
                            Some((lv.pos - cfg.vehicle_length - veh.pos, lv.speed))
                        }
                        None => next.and_then(|n| {
                            let (lane, room) = self.roomiest_lane(n);
                            self.edges[n.index()].lanes[lane]
                                .back()
                                .map(|&r| (dist_end + room, self.vehicles[r as usize].speed))
                        }),
                    };

                    let mut v_des = (speed + cfg.max_accel * dt).min(info.speed_limit);
                    let mut hard_cap = f64::INFINITY;
                    if let Some((bumper_gap, v_lead)) = leader {
                        let g = bumper_gap - cfg.min_gap;
                        let v_safe =
                            v_lead + (g - v_lead * cfg.tau) / ((speed + v_lead) / (2.0 * b) + cfg.tau);
                        v_des = v_des.min(v_safe);
                        hard_cap = g.max(0.0) / dt;
                    }
                    if let Some(n) = next {
                        let v_next = self.network.edge(n).speed_limit;
                        if v_next < info.speed_limit {
                            v_des = v_des.min(libm::sqrt(v_next * v_next + 2.0 * b * dist_end.max(0.0)));
                        }
                    }
                    // Keyed on (vehicle, step), so one driver's noise does not depend
                    // on who else is on the road.
                    let eta = unit(self.seed, u64::from(self.vehicles[v as usize].id.0), self.step);
                    let dawdled = v_des - cfg.sigma * cfg.max_accel * dt * eta;
                    let v_new = dawdled
                        .max(speed - b * dt)
                        .max(0.0)
                        .min(hard_cap)
                        .min(info.speed_limit);
                    self.vehicles[v as usize].next_speed = v_new.max(0.0);
                    ahead = Some(v);
                }
            }
        }
    }

    /// Applies planned speeds, accounts emissions and moves vehicles across
    /// edge boundaries.
    fn advance(&mut self, now: f64) {
        let cfg = self.cfg;
        let dt = cfg.step_length;
        for st in &mut self.edges {
            st.entered_this_step = false;
            st.occupied_at_step_start = st.lanes.iter().any(|l| !l.is_empty());
        }

        // Emissions are charged to the edge occupied at step start.
        let mut crossing: Vec<u32> = Vec::new();
        for e in 0..self.edges.len() {
            let length = self.network.edges()[e].length;
            for l in 0..self.edges[e].lanes.len() {
                for k in 0..self.edges[e].lanes[l].len() {
                    let v = self.edges[e].lanes[l][k];
                    let veh = &mut self.vehicles[v as usize];
                    let accel = (veh.next_speed - veh.speed) / dt;
                    let mg = dt * emission_instant(veh.next_speed, accel, &self.emissions);
                    veh.co2 += mg;
                    self.edge_records[e].co2 += mg;
                    veh.speed = veh.next_speed;
                    veh.pos += veh.speed * dt;
                    if veh.pos >= length && k == 0 {
                        crossing.push(v);
                    } else if veh.pos > length {
                        veh.pos = length;
                    }
                }
            }
        }

        // Junction order: longest-stalled first, then id.
        crossing.sort_by(|&a, &b| {
            let (va, vb) = (&self.vehicles[a as usize], &self.vehicles[b as usize]);
            vb.wait.total_cmp(&va.wait).then(va.id.cmp(&vb.id))
        });
        for v in crossing {
            let (cur, lane, overshoot, next) = {
                let veh = &self.vehicles[v as usize];
                let cur = veh.route[veh.cursor];
                (
                    cur,
                    veh.lane,
                    veh.pos - self.network.edge(cur).length,
                    veh.route.get(veh.cursor + 1).copied(),
                )
            };
            match next {
                None => {
                    self.edges[cur.index()].lanes[lane].pop_front();
                    self.finish(v, now + dt);
                }
                Some(n) => {
                    let st = &self.edges[n.index()];
                    let serialized = st.occupied_at_step_start && st.entered_this_step;
                    let (to_lane, room) = self.roomiest_lane(n);
                    let space = room - cfg.min_gap;
                    if serialized || space < 0.0 {
                        let veh = &mut self.vehicles[v as usize];
                        veh.pos = self.network.edge(cur).length;
                        veh.speed = 0.0;
                        continue;
                    }
                    self.edges[cur.index()].lanes[lane].pop_front();
                    self.edges[n.index()].entered_this_step = true;
                    let pos = overshoot.min(space).min(self.network.edge(n).length);
                    self.vehicles[v as usize].cursor += 1;
                    self.place(v, n, to_lane, pos);
                }
            }
        }
    }

    fn update_waits_and_teleport(&mut self, now: f64) {
        let dt = self.cfg.step_length;
        let mut stalled: Vec<u32> = Vec::new();
        for st in &self.edges {
            for lane in &st.lanes {
                for &v in lane {
                    let veh = &mut self.vehicles[v as usize];
                    if veh.speed < 0.1 {
                        veh.wait += dt;
                        if veh.wait >= self.cfg.teleport_wait {
                            stalled.push(v);
                        }
                    } else {
                        veh.wait = 0.0;
                    }
                }
            }
        }
        stalled.sort_by_key(|&v| self.vehicles[v as usize].id);
        for v in stalled {
            let (cur, lane, next) = {
                let veh = &self.vehicles[v as usize];
                (
                    veh.route[veh.cursor],
                    veh.lane,
                    veh.route.get(veh.cursor + 1).copied(),
                )
            };
            match next {
                None => {
                    remove_from_lane(&mut self.edges[cur.index()].lanes[lane], v);
                    self.vehicles[v as usize].teleported = true;
                    self.teleports += 1;
                    self.finish(v, now + dt);
                }
                Some(n) => {
                    // Off the network until the next edge has room.
                    remove_from_lane(&mut self.edges[cur.index()].lanes[lane], v);
                    let veh = &mut self.vehicles[v as usize];
                    veh.speed = 0.0;
                    veh.wait = 0.0;
                    veh.teleported = true;
                    self.teleports += 1;
                    self.edges[n.index()].teleported_in.push_back(v);
                }
            }
        }
    }

    /// Advances the clock by one step.
    pub fn step(&mut self) {
        let now = self.time();
        self.release_and_insert(now);
        self.plan_speeds();
        self.advance(now);
        self.update_waits_and_teleport(now);
        self.step += 1;
    }

    pub fn run(mut self) -> SimResult {
        while !self.is_finished() {
            self.step();
        }
        self.into_result()
    }

    pub fn into_result(self) -> SimResult {
        let mut completed = 0;
        let mut incomplete = 0;
        let vehicles: Vec<VehicleRecord> = self
            .vehicles
            .into_iter()
            .map(|v| {
                let done = v.phase == Phase::Done;
                if done {
                    completed += 1;
                } else {
                    incomplete += 1;
                }
                VehicleRecord {
                    vehicle: v.id,
                    depart: v.depart,
                    arrive: v.arrive,
                    travel: v.arrive.map(|a| a - v.depart),
                    co2: v.co2,
                    completed: done,
                    teleported: v.teleported,
                    route: v.route,
                }
            })
            .collect();
        SimResult {
            config: self.cfg,
            emissions: self.emissions,
            seed: self.seed,
            vehicles,
            edges: self.edge_records,
            teleport_count: self.teleports,
            completed,
            incomplete,
            failed: self.failed,
            steps: self.step,
        }
    }
}

fn remove_from_lane(lane: &mut VecDeque<u32>, v: u32) {
    if let Some(i) = lane.iter().position(|&x| x == v) {
        lane.remove(i);
    }
}

/// Simulates routed trips until all arrive or the horizon ends.
pub fn run_simulation(
    network: &RoadNetwork,
    routes: &[Route],
    cfg: SimConfig,
    emissions: EmissionParams,
    seed: u64,
) -> Result<SimResult, SimError> {
    Ok(Simulation::new(network, routes, cfg, emissions, seed)?.run())
}
