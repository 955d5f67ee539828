//! CSV readers and writers for every on-disk format. Readers check the
//! header and report the file and line of the first bad record.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use navsim_core::analysis::FitResult;
use navsim_core::demand::{GpsPoint, OdMatrix, TileId, TripRequest, VehicleId};
use navsim_core::metrics::RateMetrics;
use navsim_core::network::{EdgeIx, EdgeSpec, NetworkError, Node, RoadNetwork};
use navsim_core::routing::{HistoricalTravelTimes, PrecomputedEntry, PrecomputedRoute, Route};
use navsim_core::sim::SimResult;

use crate::Error;

pub const NODES_HEADER: &[&str] = &["node_id", "x_m", "y_m"];
pub const EDGES_HEADER: &[&str] = &[
    "edge_id",
    "from_node",
    "to_node",
    "length_m",
    "speed_limit_ms",
    "lanes",
    "capacity_vph",
];
pub const GPS_HEADER: &[&str] = &["vehicle_id", "timestamp_s", "x_m", "y_m"];
pub const OD_HEADER: &[&str] = &["origin_tile", "dest_tile", "count"];
pub const TRIPS_HEADER: &[&str] = &["vehicle_id", "origin_edge", "dest_edge", "depart_s"];
pub const ROUTES_HEADER: &[&str] = &["vehicle_id", "depart_s", "route"];
pub const SIM_VEHICLES_HEADER: &[&str] = &[
    "vehicle_id",
    "depart_s",
    "arrive_s",
    "travel_s",
    "co2_mg",
    "completed",
    "teleported",
];
pub const SIM_EDGES_HEADER: &[&str] = &["edge_id", "vehicle_count", "co2_mg"];
pub const METRICS_HEADER: &[&str] = &[
    "rate",
    "seed",
    "route_diversity",
    "mean_co2_mg",
    "total_co2_mg",
    "entropy_norm",
    "teleports",
    "diversity_treated",
    "diversity_control",
];
/// The trailing `param4` column only fills for the cubic model.
pub const FIT_HEADER: &[&str] = &["model", "param1", "param2", "param3", "r2", "p_value", "param4"];
pub const HISTORY_HEADER: &[&str] = &["edge_id", "travel_time_s"];

fn data_err(path: &Path, line: u64, msg: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn file_err(path: &Path, msg: impl ToString) -> Error {
    Error::File {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

fn reader(path: &Path, flexible: bool) -> Result<csv::Reader<File>, Error> {
    let f = File::open(path).map_err(|e| file_err(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(flexible)
        .from_reader(f))
}

/// Reads every record after a header equal to `header`, handing each to
/// `parse` with its 1-based line number.
pub(crate) fn read_records<T>(
    path: &Path,
    header: &[&str],
    mut parse: impl FnMut(&csv::StringRecord) -> Result<T, String>,
) -> Result<Vec<(u64, T)>, Error> {
    let mut rdr = reader(path, false)?;
    let mut out = Vec::new();
    let mut records = rdr.records();
    match records.next() {
        None => {
            return Err(data_err(
                path,
                1,
                format!("empty file; expected header {}", header.join(",")),
            ))
        }
        Some(Err(e)) => return Err(csv_err(path, e)),
        Some(Ok(h)) => {
            let got: Vec<&str> = h.iter().map(str::trim).collect();
            if got != header {
                return Err(data_err(
                    path,
                    1,
                    format!(
                        "header {} does not match expected {}",
                        got.join(","),
                        header.join(",")
                    ),
                ));
            }
        }
    }
    for rec in records {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let v = parse(&rec).map_err(|m| data_err(path, line, m))?;
        out.push((line, v));
    }
    Ok(out)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    data_err(path, line, e.to_string())
}

pub(crate) fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T, String> {
    let raw = rec.get(i).ok_or_else(|| format!("missing column {name}"))?.trim();
    raw.parse()
        .map_err(|_| format!("column {name}: cannot parse {raw:?}"))
}

pub(crate) fn finite(rec: &csv::StringRecord, i: usize, name: &str) -> Result<f64, String> {
    let v: f64 = field(rec, i, name)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("column {name}: {v} is not finite"))
    }
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
    }
    let f = File::create(path).map_err(|e| file_err(path, e))?;
    Ok(csv::WriterBuilder::new()
        .flexible(true)
        .from_writer(BufWriter::new(f)))
}

/// Writes a CSV file from a header and string rows.
pub fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), Error>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| file_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| file_err(path, e))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

/// Shortest decimal that round-trips; empty for `None`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

// ---------------------------------------------------------------------------
// Network

pub fn read_network(nodes_path: &Path, edges_path: &Path) -> Result<RoadNetwork, Error> {
    let nodes = read_records(nodes_path, NODES_HEADER, |r| {
        Ok(Node {
            id: field::<String>(r, 0, "node_id")?,
            x: finite(r, 1, "x_m")?,
            y: finite(r, 2, "y_m")?,
        })
    })?;
    let edges = read_records(edges_path, EDGES_HEADER, |r| {
        Ok(EdgeSpec {
            id: field(r, 0, "edge_id")?,
            from: field(r, 1, "from_node")?,
            to: field(r, 2, "to_node")?,
            length: finite(r, 3, "length_m")?,
            speed_limit: finite(r, 4, "speed_limit_ms")?,
            lanes: field(r, 5, "lanes")?,
            capacity: finite(r, 6, "capacity_vph")?,
        })
    })?;
    let node_line: HashMap<String, u64> = nodes.iter().map(|(l, n)| (n.id.clone(), *l)).collect();
    let edge_line: HashMap<String, u64> = edges.iter().map(|(l, e)| (e.id.clone(), *l)).collect();
    let mut seen = HashMap::new();
    for (l, n) in &nodes {
        if seen.insert(n.id.clone(), *l).is_some() {
            return Err(data_err(nodes_path, *l, format!("duplicate node id {}", n.id)));
        }
    }
    let mut seen = HashMap::new();
    for (l, e) in &edges {
        if seen.insert(e.id.clone(), *l).is_some() {
            return Err(data_err(edges_path, *l, format!("duplicate edge id {}", e.id)));
        }
    }
    RoadNetwork::new(
        nodes.into_iter().map(|(_, n)| n).collect(),
        edges.into_iter().map(|(_, e)| e).collect(),
    )
    .map_err(|e| match &e {
        NetworkError::InvalidEdge { edge, .. } | NetworkError::DanglingEndpoint { edge, .. } => data_err(
            edges_path,
            edge_line.get(edge).copied().unwrap_or(0),
            e.to_string(),
        ),
        NetworkError::DuplicateNode(id) => {
            data_err(nodes_path, node_line.get(id).copied().unwrap_or(0), e.to_string())
        }
        NetworkError::DuplicateEdge(id) => {
            data_err(edges_path, edge_line.get(id).copied().unwrap_or(0), e.to_string())
        }
        NetworkError::GridTooSmall { .. } => Error::Invalid(e.to_string()),
    })
}

pub fn write_network(network: &RoadNetwork, nodes_path: &Path, edges_path: &Path) -> Result<(), Error> {
    write_rows(
        nodes_path,
        NODES_HEADER,
        network.nodes().iter().map(|n| [n.id.clone(), num(n.x), num(n.y)]),
    )?;
    write_rows(
        edges_path,
        EDGES_HEADER,
        network.edge_specs().into_iter().map(|e| {
            [
                e.id,
                e.from,
                e.to,
                num(e.length),
                num(e.speed_limit),
                e.lanes.to_string(),
                num(e.capacity),
            ]
        }),
    )
}

fn edge_by_id(network: &RoadNetwork, id: &str) -> Result<EdgeIx, String> {
    network.edge_ix(id).ok_or_else(|| format!("unknown edge id {id}"))
}

// ---------------------------------------------------------------------------
// Demand

pub fn read_gps(path: &Path) -> Result<Vec<GpsPoint>, Error> {
    Ok(read_records(path, GPS_HEADER, |r| {
        Ok(GpsPoint {
            vehicle: field(r, 0, "vehicle_id")?,
            t: finite(r, 1, "timestamp_s")?,
            x: finite(r, 2, "x_m")?,
            y: finite(r, 3, "y_m")?,
        })
    })?
    .into_iter()
    .map(|(_, p)| p)
    .collect())
}

pub fn write_gps(path: &Path, points: &[GpsPoint]) -> Result<(), Error> {
    write_rows(
        path,
        GPS_HEADER,
        points
            .iter()
            .map(|p| [p.vehicle.clone(), num(p.t), num(p.x), num(p.y)]),
    )
}

pub fn read_od(path: &Path) -> Result<OdMatrix, Error> {
    let mut od = OdMatrix::default();
    for (line, (o, d, c)) in read_records(path, OD_HEADER, |r| {
        Ok((
            field::<u32>(r, 0, "origin_tile")?,
            field::<u32>(r, 1, "dest_tile")?,
            field::<u64>(r, 2, "count")?,
        ))
    })? {
        if od.counts.insert((TileId(o), TileId(d)), c).is_some() {
            return Err(data_err(path, line, format!("duplicate tile pair {o},{d}")));
        }
    }
    Ok(od)
}

pub fn write_od(path: &Path, od: &OdMatrix) -> Result<(), Error> {
    write_rows(
        path,
        OD_HEADER,
        od.counts
            .iter()
            .map(|((o, d), c)| [o.0.to_string(), d.0.to_string(), c.to_string()]),
    )
}

pub fn read_trips(path: &Path, network: &RoadNetwork) -> Result<Vec<TripRequest>, Error> {
    let rows = read_records(path, TRIPS_HEADER, |r| {
        Ok(TripRequest {
            vehicle: VehicleId(field(r, 0, "vehicle_id")?),
            origin: edge_by_id(network, &field::<String>(r, 1, "origin_edge")?)?,
            destination: edge_by_id(network, &field::<String>(r, 2, "dest_edge")?)?,
            depart: finite(r, 3, "depart_s")?,
        })
    })?;
    let mut seen = HashMap::new();
    for (line, t) in &rows {
        if seen.insert(t.vehicle, *line).is_some() {
            return Err(data_err(
                path,
                *line,
                format!("duplicate vehicle id {}", t.vehicle),
            ));
        }
    }
    Ok(rows.into_iter().map(|(_, t)| t).collect())
}

pub fn write_trips(path: &Path, network: &RoadNetwork, trips: &[TripRequest]) -> Result<(), Error> {
    write_rows(
        path,
        TRIPS_HEADER,
        trips.iter().map(|t| {
            [
                t.vehicle.to_string(),
                network.edge(t.origin).id.clone(),
                network.edge(t.destination).id.clone(),
                num(t.depart),
            ]
        }),
    )
}

// ---------------------------------------------------------------------------
// Routes

/// Reads the precomputed-routes format: `vehicle_id,depart_s,e1;e2;...` or
/// `vehicle_id,depart_s,GPS,x1 y1;x2 y2;...`. A header line is optional.
pub fn read_routes_file(path: &Path) -> Result<BTreeMap<VehicleId, PrecomputedEntry>, Error> {
    let mut rdr = reader(path, true)?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if line == 1 && rec.get(0).map(str::trim) == Some("vehicle_id") {
            continue;
        }
        let entry = parse_route_record(&rec).map_err(|m| data_err(path, line, m))?;
        if out.insert(entry.0, entry.1).is_some() {
            return Err(data_err(path, line, format!("duplicate vehicle id {}", entry.0)));
        }
    }
    Ok(out)
}

fn parse_route_record(rec: &csv::StringRecord) -> Result<(VehicleId, PrecomputedEntry), String> {
    let vehicle = VehicleId(field(rec, 0, "vehicle_id")?);
    let depart = finite(rec, 1, "depart_s")?;
    let route = match rec.len() {
        3 => {
            let ids: Vec<String> = rec[2]
                .split(';')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            if ids.is_empty() {
                return Err("empty edge list".into());
            }
            PrecomputedRoute::Edges(ids)
        }
        4 if rec[2].trim() == "GPS" => {
            let mut pts = Vec::new();
            for p in rec[3].split(';').filter(|s| !s.trim().is_empty()) {
                let mut it = p.split_whitespace();
                let (Some(x), Some(y), None) = (it.next(), it.next(), it.next()) else {
                    return Err(format!("GPS point {p:?} is not \"x y\""));
                };
                let x: f64 = x.parse().map_err(|_| format!("bad x in {p:?}"))?;
                let y: f64 = y.parse().map_err(|_| format!("bad y in {p:?}"))?;
                if !(x.is_finite() && y.is_finite()) {
                    return Err(format!("non-finite GPS point {p:?}"));
                }
                pts.push((x, y));
            }
            PrecomputedRoute::Gps(pts)
        }
        n => return Err(format!("expected 3 fields or 4 with GPS marker, got {n}")),
    };
    Ok((vehicle, PrecomputedEntry { depart, route }))
}

/// Resolves edge-list entries into routes; GPS entries are rejected.
pub fn read_routes(path: &Path, network: &RoadNetwork, provenance: &str) -> Result<Vec<Route>, Error> {
    let entries = read_routes_file(path)?;
    entries
        .into_iter()
        .map(|(vehicle, e)| match e.route {
            PrecomputedRoute::Edges(ids) => {
                let edges = ids
                    .iter()
                    .map(|id| edge_by_id(network, id))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|m| Error::Invalid(format!("{}: vehicle {vehicle}: {m}", path.display())))?;
                Ok(Route {
                    vehicle,
                    edges,
                    depart: e.depart,
                    provenance: provenance.to_string(),
                })
            }
            PrecomputedRoute::Gps(_) => Err(Error::Invalid(format!(
                "{}: vehicle {vehicle} has a GPS route; run `navsim match` first",
                path.display()
            ))),
        })
        .collect()
}

pub fn write_routes(path: &Path, network: &RoadNetwork, routes: &[Route]) -> Result<(), Error> {
    write_rows(
        path,
        ROUTES_HEADER,
        routes.iter().map(|r| {
            let ids: Vec<&str> = r.edges.iter().map(|&e| network.edge(e).id.as_str()).collect();
            [r.vehicle.to_string(), num(r.depart), ids.join(";")]
        }),
    )
}

pub fn read_history(path: &Path, network: &RoadNetwork) -> Result<HistoricalTravelTimes, Error> {
    let mut h = HistoricalTravelTimes::default();
    for (line, (id, t)) in read_records(path, HISTORY_HEADER, |r| {
        Ok((field::<String>(r, 0, "edge_id")?, finite(r, 1, "travel_time_s")?))
    })? {
        let e = edge_by_id(network, &id).map_err(|m| data_err(path, line, m))?;
        h.insert(network, e, t)
            .map_err(|err| data_err(path, line, err.to_string()))?;
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// Simulation, metrics, fits

pub fn write_sim_result(
    network: &RoadNetwork,
    result: &SimResult,
    vehicles_path: &Path,
    edges_path: &Path,
) -> Result<(), Error> {
    write_rows(
        vehicles_path,
        SIM_VEHICLES_HEADER,
        result.vehicles.iter().map(|v| {
            [
                v.vehicle.to_string(),
                num(v.depart),
                opt_num(v.arrive),
                opt_num(v.travel),
                num(v.co2),
                v.completed.to_string(),
                v.teleported.to_string(),
            ]
        }),
    )?;
    write_rows(
        edges_path,
        SIM_EDGES_HEADER,
        result.edges.iter().enumerate().map(|(i, e)| {
            [
                network.edges()[i].id.clone(),
                e.vehicle_count.to_string(),
                num(e.co2),
            ]
        }),
    )
}

/// Per-edge CO2 column of a simulation edges file.
pub fn read_edge_co2(path: &Path) -> Result<Vec<f64>, Error> {
    Ok(read_records(path, SIM_EDGES_HEADER, |r| finite(r, 2, "co2_mg"))?
        .into_iter()
        .map(|(_, v)| v)
        .collect())
}

pub fn metrics_row(m: &RateMetrics) -> [String; 9] {
    [
        m.rate.to_string(),
        m.seed.to_string(),
        m.route_diversity.to_string(),
        num(m.mean_co2),
        num(m.total_co2),
        num(m.entropy_norm),
        m.teleports.to_string(),
        m.diversity_treated.map(|d| d.to_string()).unwrap_or_default(),
        m.diversity_control.map(|d| d.to_string()).unwrap_or_default(),
    ]
}

pub fn fit_row(fit: &FitResult) -> [String; 7] {
    let p = |i: usize| fit.params.get(i).copied().map(num).unwrap_or_default();
    [
        fit.model.name().to_string(),
        p(0),
        p(1),
        p(2),
        num(fit.r2),
        num(fit.p_value),
        p(3),
    ]
}

/// Reads two numeric columns of any headed CSV. `None` picks the first two
/// columns.
pub fn read_xy(path: &Path, columns: Option<(&str, &str)>) -> Result<(Vec<f64>, Vec<f64>), Error> {
    let mut rdr = reader(path, false)?;
    let mut records = rdr.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(csv_err(path, e)),
        None => return Err(data_err(path, 1, "empty file")),
    };
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let (ix, iy) = match columns {
        None if names.len() >= 2 => (0, 1),
        None => return Err(data_err(path, 1, "need at least two columns")),
        Some((cx, cy)) => {
            let find = |c: &str| {
                names
                    .iter()
                    .position(|n| *n == c)
                    .ok_or_else(|| data_err(path, 1, format!("no column named {c}")))
            };
            (find(cx)?, find(cy)?)
        }
    };
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for rec in records {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        xs.push(finite(&rec, ix, names[ix]).map_err(|m| data_err(path, line, m))?);
        ys.push(finite(&rec, iy, names[iy]).map_err(|m| data_err(path, line, m))?);
    }
    Ok((xs, ys))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
    }
    let mut f = File::create(path).map_err(|e| file_err(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| file_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| file_err(path, e))
}

/// Lowercase hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String, Error> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).map_err(|e| file_err(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `path` relative to `base` unless already absolute.
pub fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}
