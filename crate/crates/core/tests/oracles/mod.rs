//! Reference implementations shared by the oracle tests and the acceptance
//! runner. Each is written independently of the library algorithm it checks.
#![allow(dead_code)]

use navsim_core::network::{generate_grid, EdgeIx, EdgeSpec, GridSpec, Node, NodeIx, RoadNetwork};
use navsim_core::routing::{fastest_path, HistoricalTravelTimes};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Routing

/// Random multigraph on `n` nodes. Lengths are small integers and speeds 1
/// or 2 m/s, so travel times are exact binary fractions and ties are common.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> RoadNetwork {
    let nodes = (0..n)
        .map(|i| Node {
            id: format!("n{i}"),
            x: i as f64,
            y: 0.0,
        })
        .collect();
    let m = rng.gen_range(n..=3 * n);
    let edges = (0..m)
        .map(|k| {
            let from = rng.gen_range(0..n);
            let mut to = rng.gen_range(0..n);
            if to == from {
                to = (to + 1) % n;
            }
            EdgeSpec {
                id: format!("e{k:03}"),
                from: format!("n{from}"),
                to: format!("n{to}"),
                length: f64::from(rng.gen_range(1u32..=6)),
                speed_limit: f64::from(rng.gen_range(1u32..=2)),
                lanes: 1,
                capacity: 1800.0,
            }
        })
        .collect();
    RoadNetwork::new(nodes, edges).unwrap()
}

/// Minimum (cost, edge sequence) over every route from `o` to `d` whose
/// interior visits each node at most once, found by depth-first enumeration.
/// Under positive costs a repeated node is a cycle, so this set contains
/// every optimal route.
pub fn exhaustive(net: &RoadNetwork, o: EdgeIx, d: EdgeIx) -> Option<(f64, Vec<EdgeIx>)> {
    let t = |e: EdgeIx| net.edge(e).min_travel_time;
    if o == d {
        return Some((t(o), vec![o]));
    }
    let mut best: Option<(f64, Vec<EdgeIx>)> = None;
    let mut visited = vec![false; net.num_nodes()];
    let mut path = vec![o];
    fn dfs(
        net: &RoadNetwork,
        d: EdgeIx,
        at: NodeIx,
        visited: &mut Vec<bool>,
        path: &mut Vec<EdgeIx>,
        best: &mut Option<(f64, Vec<EdgeIx>)>,
    ) {
        if at == net.edge(d).from {
            path.push(d);
            let c: f64 = path.iter().map(|&e| net.edge(e).min_travel_time).sum();
            let better = match best {
                None => true,
                Some((bc, bp)) => c < *bc || (c == *bc && *path < *bp),
            };
            if better {
                *best = Some((c, path.clone()));
            }
            path.pop();
        }
        visited[at.index()] = true;
        for &e in net.out_edges(at) {
            let next = net.edge(e).to;
            if !visited[next.index()] {
                path.push(e);
                dfs(net, d, next, visited, path, best);
                path.pop();
            }
        }
        visited[at.index()] = false;
    }
    dfs(net, d, net.edge(o).to, &mut visited, &mut path, &mut best);
    best
}

/// 8x8 lattice with a corner-to-corner OD pair.
pub fn grid_pair() -> (RoadNetwork, EdgeIx, EdgeIx) {
    let net = generate_grid(&GridSpec::new(8, 8, 100.0, 13.89, 1)).unwrap();
    let o = net.edge_ix("r000c000-r000c001").unwrap();
    let d = net.edge_ix("r007c006-r007c007").unwrap();
    (net, o, d)
}

// ---------------------------------------------------------------------------
// Map matching

/// LCSS as the longest chain of hits `(i, j)` with strictly increasing `i`
/// and non-decreasing `j`; table entry `[I][J]` is the longest chain inside
/// the first `I` points and `J` edges.
#[allow(clippy::needless_range_loop)]
pub fn chain_reference(hits: &[Vec<bool>], m: usize) -> Vec<Vec<u32>> {
    let n = hits.len();
    let cells: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .filter(|&(i, j)| hits[i][j])
        .collect();
    let mut chain = vec![1u32; cells.len()];
    for b in 0..cells.len() {
        for a in 0..b {
            if cells[a].0 < cells[b].0 && cells[a].1 <= cells[b].1 {
                chain[b] = chain[b].max(chain[a] + 1);
            }
        }
    }
    let mut t = vec![vec![0u32; m + 1]; n + 1];
    for big_i in 0..=n {
        for big_j in 0..=m {
            t[big_i][big_j] = cells
                .iter()
                .zip(&chain)
                .filter(|((i, j), _)| *i < big_i && *j < big_j)
                .map(|(_, &c)| c)
                .max()
                .unwrap_or(0);
        }
    }
    t
}

/// Random hit matrix of `n` points by `m` edges.
pub fn random_hits(rng: &mut ChaCha8Rng) -> (usize, usize, Vec<Vec<bool>>) {
    let n = rng.gen_range(0..=20);
    let m = rng.gen_range(0..=20);
    let density = rng.gen_range(0.05..0.6);
    let hits = (0..n)
        .map(|_| (0..m).map(|_| rng.gen_bool(density)).collect())
        .collect();
    (n, m, hits)
}

pub fn match_grid() -> RoadNetwork {
    generate_grid(&GridSpec::new(6, 6, 200.0, 10.0, 1)).unwrap()
}

fn is_u_turn(net: &RoadNetwork, a: EdgeIx, b: EdgeIx) -> bool {
    net.edge(a).from == net.edge(b).to && net.edge(a).to == net.edge(b).from
}

/// Fastest routes of at least three edges without U-turns; a U-turn is
/// geometrically invisible in a trace.
pub fn generating_routes(net: &RoadNetwork, count: usize, seed: u64) -> Vec<Vec<EdgeIx>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = HistoricalTravelTimes::free_flow();
    let mut out = Vec::new();
    while out.len() < count {
        let o = EdgeIx(rng.gen_range(0..net.num_edges() as u32));
        let d = EdgeIx(rng.gen_range(0..net.num_edges() as u32));
        let Ok(r) = fastest_path(net, o, d, &h) else {
            continue;
        };
        if r.len() >= 3 && !r.windows(2).any(|w| is_u_turn(net, w[0], w[1])) {
            out.push(r);
        }
    }
    out
}

/// Three points per edge at a quarter, half and three quarters of its
/// length, each displaced uniformly within a disc of radius `noise`.
pub fn trace(net: &RoadNetwork, route: &[EdgeIx], noise: f64, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    for &e in route {
        let (a, b) = net.edge_segment(e);
        for t in [0.25, 0.5, 0.75] {
            let r = noise * rng.gen::<f64>().sqrt();
            let th = rng.gen_range(0.0..std::f64::consts::TAU);
            pts.push((
                a.0 + t * (b.0 - a.0) + r * th.cos(),
                a.1 + t * (b.1 - a.1) + r * th.sin(),
            ));
        }
    }
    pts
}

// ---------------------------------------------------------------------------
// Emissions

/// Horner form in `s`, grouped differently from the library's expansion.
/// Also returns the magnitude of the largest term, the scale rounding error
/// lives on.
pub fn reference_emission(s: f64, a: f64, c: &[f64; 6]) -> (f64, f64) {
    let v = c[0] + s * ((c[3] + a * (c[1] + a * c[2])) + s * (c[4] + s * c[5]));
    let scale = [
        c[0],
        c[1] * s * a,
        c[2] * s * a * a,
        c[3] * s,
        c[4] * s * s,
        c[5] * s * s * s,
    ]
    .iter()
    .map(|t| t.abs())
    .fold(0.0, f64::max);
    (v.max(0.0), scale)
}

/// Coefficient sets for the emission grid: the passenger-car default and
/// four random ones.
pub fn emission_sets(default: [f64; 6]) -> Vec<[f64; 6]> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut sets = vec![default];
    for _ in 0..4 {
        let mut c = [0.0; 6];
        for x in &mut c {
            *x = rng.gen_range(-1000.0..1000.0);
        }
        sets.push(c);
    }
    sets
}

/// The 100 x 100 grid of (speed, acceleration) points.
pub fn emission_grid() -> impl Iterator<Item = (f64, f64)> {
    (0..100)
        .flat_map(|i| (0..100).map(move |j| (40.0 * f64::from(i) / 99.0, -5.0 + 10.0 * f64::from(j) / 99.0)))
}

// ---------------------------------------------------------------------------
// Decay fits

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub fn decay(x: f64, (a, b, g): (f64, f64, f64)) -> f64 {
    a * (-b * x).exp() + g
}

/// Noiseless recovery cases, `(alpha, beta, gamma)`.
pub const DECAY_CASES: [(f64, f64, f64); 5] = [
    (10.0, 0.8, 2.0),
    (3.0, 0.05, -1.0),
    (1500.0, 0.02, 200.0),
    (-4.0, 1.5, 7.0),
    (0.5, 3.0, 0.0),
];

/// Twelve points over about eighteen decay lengths.
pub fn noiseless_design(truth: (f64, f64, f64)) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..12).map(|i| f64::from(i) * 1.5 / truth.1).collect();
    let y = x.iter().map(|&v| decay(v, truth)).collect();
    (x, y)
}

/// 100 points over [0, 6] with multiplicative 2% Gaussian noise.
pub fn noisy_design(truth: (f64, f64, f64), rep: u64) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..100).map(|i| f64::from(i) * 6.0 / 99.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(100 + rep);
    let y = x
        .iter()
        .map(|&v| decay(v, truth) * (1.0 + 0.02 * gauss(&mut rng)))
        .collect();
    (x, y)
}

/// Ten points of pure noise around a constant.
pub fn null_designs(count: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let x: Vec<f64> = (0..10).map(f64::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..count)
        .map(|_| (x.clone(), x.iter().map(|_| 5.0 + gauss(&mut rng)).collect()))
        .collect()
}
