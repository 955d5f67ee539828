//! Command-line interface. [`main_with_args`] parses, dispatches and maps
//! errors to exit codes: 0 success, 1 usage, 2 data or validation.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use navsim_core::analysis::{
    elbow_point, fit_exp_decay, fit_exponential, fit_polynomial, model_selection, AnalysisError, FitResult,
};
use navsim_core::demand::{
    build_od_matrix, flow_counts, frequency_threshold_elbow, outlier_days_for_trips, preprocess_trajectories,
    sample_demand, synthetic_heavy_tailed_od, GpsPoint, OdFilters, PreprocessConfig, Tessellation, VehicleId,
};
use navsim_core::experiments::calibrate_traffic_loads;
use navsim_core::mapmatch::{lcss_match, MatchConfig};
use navsim_core::metrics::emission_entropy;
use navsim_core::network::{generate_grid, network_stats, validate, Arterials, GridSpec, RoadNetwork};
use navsim_core::routing::{service_similarity_matrix, HistoricalTravelTimes};
use navsim_core::sim::{run_simulation, SimConfig};

use crate::exec::RayonExecutor;
use crate::io;
use crate::plan::{PlanFile, ServiceSpec};
use crate::report;
use crate::run::{self, SweepKind};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "navsim", version, about = "Navigation-adoption traffic experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Road network files
    #[command(subcommand)]
    Net(NetCmd),
    /// GPS preprocessing, OD matrices and trip sampling
    #[command(subcommand)]
    Demand(DemandCmd),
    /// Route computation and service comparison
    #[command(subcommand)]
    Route(RouteCmd),
    /// Map-match GPS trajectories to edge routes
    Match(MatchArgs),
    /// Traffic simulation
    #[command(subcommand)]
    Sim(SimCmd),
    /// Adoption-rate sweeps
    #[command(subcommand)]
    Sweep(SweepCmd),
    /// Curve fits, entropy, elbows and load calibration
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Summary CSV and SVG charts for a sweep directory
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct NetFiles {
    #[arg(long)]
    pub nodes: PathBuf,
    #[arg(long)]
    pub edges: PathBuf,
}

impl NetFiles {
    fn load(&self) -> Result<RoadNetwork, Error> {
        io::read_network(&self.nodes, &self.edges)
    }
}

#[derive(Debug, Subcommand)]
pub enum NetCmd {
    /// Parse a network and report connectivity problems
    Validate(NetFiles),
    /// Node, edge and length statistics
    Stats(NetFiles),
    /// Write a lattice network
    Grid(GridArgs),
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// block length, meters
    #[arg(long, default_value_t = 100.0)]
    pub block: f64,
    /// m/s
    #[arg(long, default_value_t = 13.89)]
    pub speed: f64,
    #[arg(long, default_value_t = 1)]
    pub lanes: u32,
    /// every k-th row and column becomes an arterial
    #[arg(long)]
    pub arterial_every: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub arterial_offset: usize,
    #[arg(long, default_value_t = 22.22)]
    pub arterial_speed: f64,
    #[arg(long, default_value_t = 2)]
    pub arterial_lanes: u32,
    /// directory receiving nodes.csv and edges.csv
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DemandCmd {
    /// Split raw GPS into trips and write the kept points
    Preprocess(PreprocessArgs),
    /// Build an OD matrix from raw GPS
    Build(BuildArgs),
    /// Sample trip requests from an OD matrix
    Sample(SampleArgs),
    /// Write a synthetic heavy-tailed OD matrix
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessOpts {
    #[arg(long, default_value_t = 250.0)]
    pub max_speed_kmh: f64,
    /// meters
    #[arg(long, default_value_t = 200.0)]
    pub stop_radius: f64,
    /// seconds
    #[arg(long, default_value_t = 1200.0)]
    pub stop_duration: f64,
}

impl PreprocessOpts {
    fn config(&self) -> PreprocessConfig {
        PreprocessConfig {
            max_speed_kmh: self.max_speed_kmh,
            stop_radius: self.stop_radius,
            stop_duration: self.stop_duration,
        }
    }
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub gps: PathBuf,
    #[command(flatten)]
    pub opts: PreprocessOpts,
    /// GPS CSV of kept trips; vehicle ids become `<vehicle>#<trip>`
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub gps: PathBuf,
    #[command(flatten)]
    pub net: NetFiles,
    #[arg(long, default_value_t = Tessellation::DEFAULT_TILE_SIZE)]
    pub tile_size: f64,
    #[command(flatten)]
    pub opts: PreprocessOpts,
    /// seconds
    #[arg(long, default_value_t = 300.0)]
    pub min_duration: f64,
    /// seconds
    #[arg(long, default_value_t = 3600.0)]
    pub max_duration: f64,
    /// Monday = 0 .. Sunday = 6, or `any`
    #[arg(long, default_value = "2")]
    pub weekday: String,
    /// departure window in hours, `from,to`, or `any`
    #[arg(long, default_value = "7,10")]
    pub window: String,
    /// minimum trips per flow, or `auto` for the elbow rule
    #[arg(long, default_value = "auto")]
    pub threshold: String,
    /// keep days whose OD pattern is atypical
    #[arg(long)]
    pub keep_outlier_days: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub od: PathBuf,
    #[command(flatten)]
    pub net: NetFiles,
    #[arg(long, default_value_t = Tessellation::DEFAULT_TILE_SIZE)]
    pub tile_size: f64,
    #[arg(long)]
    pub n: usize,
    /// departures are drawn in [0, horizon) seconds
    #[arg(long, default_value_t = 3600.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub net: NetFiles,
    #[arg(long, default_value_t = Tessellation::DEFAULT_TILE_SIZE)]
    pub tile_size: f64,
    #[arg(long, default_value_t = 100_000)]
    pub total: u64,
    #[arg(long, default_value_t = 5)]
    pub hubs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub hub_share: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ServiceKind {
    Fastest,
    Shortest,
    Eco,
    File,
}

#[derive(Debug, Args)]
pub struct ServiceArgs {
    #[arg(long, value_enum, default_value_t = ServiceKind::Fastest)]
    pub service: ServiceKind,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    pub fuel_factor: f64,
    /// precomputed routes file for `--service file`
    #[arg(long)]
    pub routes_file: Option<PathBuf>,
    /// `edge_id,travel_time_s`; free-flow when absent
    #[arg(long)]
    pub history: Option<PathBuf>,
}

impl ServiceArgs {
    fn spec(&self) -> Result<ServiceSpec, Error> {
        Ok(match self.service {
            ServiceKind::Fastest => ServiceSpec::Fastest,
            ServiceKind::Shortest => ServiceSpec::Shortest,
            ServiceKind::Eco => ServiceSpec::Eco {
                lambda: self.lambda,
                fuel_factor: self.fuel_factor,
            },
            ServiceKind::File => ServiceSpec::File {
                name: "file".into(),
                path: self
                    .routes_file
                    .clone()
                    .ok_or_else(|| Error::usage("--service file needs --routes-file"))?,
            },
        })
    }

    fn history(&self, network: &RoadNetwork) -> Result<HistoricalTravelTimes, Error> {
        match &self.history {
            Some(p) => io::read_history(p, network),
            None => Ok(HistoricalTravelTimes::free_flow()),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum RouteCmd {
    /// Route every trip with one service
    Compute(ComputeArgs),
    /// Pairwise overlap between route files for the same trips
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    #[command(flatten)]
    pub net: NetFiles,
    #[arg(long)]
    pub trips: PathBuf,
    #[command(flatten)]
    pub service: ServiceArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub net: NetFiles,
    /// two or more routes files; the file stem names the service
    #[arg(long = "routes", required = true, num_args = 1..)]
    pub routes: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[command(flatten)]
    pub net: NetFiles,
    /// GPS CSV; vehicle ids must be integers
    #[arg(long)]
    pub gps: PathBuf,
    /// meters
    #[arg(long, default_value_t = 30.0)]
    pub threshold: f64,
    /// meters
    #[arg(long, default_value_t = 100.0)]
    pub radius: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SimCmd {
    /// Simulate a routes file
    Run(SimArgs),
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[command(flatten)]
    pub net: NetFiles,
    #[arg(long)]
    pub routes: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// seconds
    #[arg(long)]
    pub horizon: Option<f64>,
    /// directory receiving vehicles.csv and edge_stats.csv
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum SweepCmd {
    /// Adoption-rate sweep with one service
    Run(SweepArgs),
    /// Sweep with the treated group split among services by shares
    Market(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// parent of the run directory, which is named by the plan hash
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// overrides the plan's master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// worker threads; 0 uses every core
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCmd {
    /// Fit a model to two columns of a CSV
    Fit(FitArgs),
    /// Normalized entropy of per-edge CO2 (a simulation edge_stats.csv)
    Entropy(EntropyArgs),
    /// Elbow of a curve given by two columns
    Elbow(XyArgs),
    /// Teleport-based traffic-load calibration for a plan
    Calibrate(CalibrateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Linear,
    Quadratic,
    Cubic,
    #[value(alias = "exp")]
    Exponential,
    #[value(name = "expdecay", alias = "exp_decay")]
    ExpDecay,
    /// every model, ranked by R²
    Select,
}

#[derive(Debug, Args)]
pub struct XyArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// x column name; default the first column
    #[arg(long, requires = "y")]
    pub x: Option<String>,
    /// y column name; default the second column
    #[arg(long, requires = "x")]
    pub y: Option<String>,
}

impl XyArgs {
    fn read(&self) -> Result<(Vec<f64>, Vec<f64>), Error> {
        let cols = self.x.as_deref().zip(self.y.as_deref());
        io::read_xy(&self.input, cols)
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[command(flatten)]
    pub xy: XyArgs,
    /// fit report CSV; printed to stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EntropyArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// comma-separated increasing vehicle counts
    #[arg(long, value_delimiter = ',', required = true)]
    pub candidates: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub repeats: u32,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// `n_vehicles,mean_teleports` CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// sweep run directory
    #[arg(long)]
    pub run: PathBuf,
    /// output directory; defaults to `<run>/report`
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let command: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn say(line: impl std::fmt::Display) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

pub fn dispatch(cmd: Command, argv: Vec<String>) -> Result<(), Error> {
    match cmd {
        Command::Net(c) => net(c),
        Command::Demand(c) => demand(c),
        Command::Route(c) => route(c),
        Command::Match(a) => map_match(a),
        Command::Sim(SimCmd::Run(a)) => sim(a),
        Command::Sweep(c) => {
            let (a, kind) = match c {
                SweepCmd::Run(a) => (a, SweepKind::Adoption),
                SweepCmd::Market(a) => (a, SweepKind::MarketShare),
            };
            let out = run::execute(&a.plan, &a.out, a.seed, a.jobs, kind, argv)?;
            say(format!("run directory: {}", out.dir.display()));
            for s in &out.result.summary {
                say(format!(
                    "r={:>3}  diversity {:.1}±{:.1}  total CO2 {:.3} kg  entropy {:.4}  teleports {:.1}",
                    s.rate,
                    s.route_diversity.mean,
                    s.route_diversity.std,
                    s.total_co2.mean * 1e-6,
                    s.entropy_norm.mean,
                    s.teleports.mean
                ));
            }
            Ok(())
        }
        Command::Analyze(c) => analyze(c),
        Command::Report(a) => {
            let out = a.out.unwrap_or_else(|| a.run.join("report"));
            for p in report::write_report(&a.run, &out)? {
                say(p.display());
            }
            Ok(())
        }
    }
}

fn net(cmd: NetCmd) -> Result<(), Error> {
    match cmd {
        NetCmd::Validate(f) => {
            let network = f.load()?;
            let r = validate(&network);
            say(format!("components: {}", r.components.len()));
            say(format!(
                "nodes outside largest component: {}",
                r.outside_largest.len()
            ));
            say(format!("dead-end nodes: {}", r.dead_ends.len()));
            for n in r.flagged() {
                say(format!("flagged node {}", network.node(n).id));
            }
            Ok(())
        }
        NetCmd::Stats(f) => {
            let s = network_stats(&f.load()?);
            say(format!("nodes: {}", s.num_nodes));
            say(format!("edges: {}", s.num_edges));
            say(format!("edge/node ratio: {:.4}", s.edge_node_ratio));
            say(format!("total edge length km: {:.4}", s.total_edge_length_km));
            say(format!("total lane length km: {:.4}", s.total_lane_length_km));
            Ok(())
        }
        NetCmd::Grid(a) => {
            let mut spec = GridSpec::new(a.rows, a.cols, a.block, a.speed, a.lanes);
            if let Some(every) = a.arterial_every {
                spec = spec.with_arterials(Arterials {
                    every,
                    offset: a.arterial_offset,
                    speed_limit: a.arterial_speed,
                    lanes: a.arterial_lanes,
                });
            }
            let network = generate_grid(&spec).map_err(Error::invalid)?;
            io::write_network(&network, &a.out.join("nodes.csv"), &a.out.join("edges.csv"))?;
            say(format!(
                "wrote {} nodes and {} edges to {}",
                network.num_nodes(),
                network.num_edges(),
                a.out.display()
            ));
            Ok(())
        }
    }
}

fn parse_weekday(s: &str) -> Result<Option<u8>, Error> {
    if s == "any" {
        return Ok(None);
    }
    match s.parse::<u8>() {
        Ok(d) if d < 7 => Ok(Some(d)),
        _ => Err(Error::usage(format!("--weekday expects 0..6 or any, got {s:?}"))),
    }
}

fn parse_window(s: &str) -> Result<Option<(f64, f64)>, Error> {
    if s == "any" {
        return Ok(None);
    }
    let bad = || Error::usage(format!("--window expects `from,to` in hours or any, got {s:?}"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    let a: f64 = a.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(0.0 <= a && a < b && b <= 24.0) {
        return Err(bad());
    }
    Ok(Some((a * 3600.0, b * 3600.0)))
}

fn demand(cmd: DemandCmd) -> Result<(), Error> {
    match cmd {
        DemandCmd::Preprocess(a) => {
            let raw = io::read_gps(&a.gps)?;
            let pre = preprocess_trajectories(&raw, &a.opts.config(), None);
            let mut per_vehicle: BTreeMap<&str, usize> = BTreeMap::new();
            let mut pts = Vec::new();
            for t in &pre.trips {
                let k = per_vehicle.entry(t.vehicle.as_str()).or_default();
                for &(time, x, y) in &t.points {
                    pts.push(GpsPoint {
                        vehicle: format!("{}#{k}", t.vehicle),
                        t: time,
                        x,
                        y,
                    });
                }
                *k += 1;
            }
            io::write_gps(&a.out, &pts)?;
            say(format!("trips kept: {}", pre.trips.len()));
            for (v, why) in &pre.rejected {
                say(format!("rejected {v}: {why}"));
            }
            Ok(())
        }
        DemandCmd::Build(a) => {
            let network = a.net.load()?;
            let tess = Tessellation::for_network(&network, a.tile_size).map_err(Error::invalid)?;
            let raw = io::read_gps(&a.gps)?;
            let pre = preprocess_trajectories(&raw, &a.opts.config(), network.bbox());
            let mut filters = OdFilters {
                min_duration: a.min_duration,
                max_duration: a.max_duration,
                weekday: parse_weekday(&a.weekday)?,
                depart_window: parse_window(&a.window)?,
                ..OdFilters::default()
            };
            if !a.keep_outlier_days {
                let out = outlier_days_for_trips(&pre.trips, &tess);
                for w in &out.warnings {
                    eprintln!("warning: {w}");
                }
                filters.excluded_days = out.days;
            }
            filters.frequency_threshold = if a.threshold == "auto" {
                frequency_threshold_elbow(&flow_counts(&pre.trips, &tess, &filters))
            } else {
                a.threshold.parse().map_err(|_| {
                    Error::usage(format!(
                        "--threshold expects an integer or auto, got {:?}",
                        a.threshold
                    ))
                })?
            };
            let od = build_od_matrix(&pre.trips, &tess, &filters).map_err(Error::invalid)?;
            io::write_od(&a.out, &od)?;
            say(format!(
                "flows: {}  trips: {}  threshold: {}  excluded days: {}",
                od.counts.len(),
                od.total(),
                filters.frequency_threshold,
                filters.excluded_days.len()
            ));
            Ok(())
        }
        DemandCmd::Sample(a) => {
            let network = a.net.load()?;
            let tess = Tessellation::for_network(&network, a.tile_size).map_err(Error::invalid)?;
            let od = io::read_od(&a.od)?;
            let s = sample_demand(&od, &tess, a.n, a.horizon, a.seed).map_err(Error::invalid)?;
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
            io::write_trips(&a.out, &network, &s.requests)?;
            say(format!("sampled {} trips", s.requests.len()));
            Ok(())
        }
        DemandCmd::Synth(a) => {
            let network = a.net.load()?;
            let tess = Tessellation::for_network(&network, a.tile_size).map_err(Error::invalid)?;
            let od = synthetic_heavy_tailed_od(&tess, a.total, a.hubs, a.hub_share, a.seed)
                .map_err(Error::invalid)?;
            io::write_od(&a.out, &od)?;
            say(format!("flows: {}  trips: {}", od.counts.len(), od.total()));
            Ok(())
        }
    }
}

fn route(cmd: RouteCmd) -> Result<(), Error> {
    match cmd {
        RouteCmd::Compute(a) => {
            let network = a.net.load()?;
            let trips = io::read_trips(&a.trips, &network)?;
            let service = a.service.spec()?.build(Path::new("."))?;
            let history = a.service.history(&network)?;
            let routes = trips
                .iter()
                .map(|t| {
                    service
                        .route(&network, t, &history)
                        .map_err(|e| Error::Invalid(format!("vehicle {}: {e}", t.vehicle)))
                })
                .collect::<Result<Vec<_>, _>>()?;
            io::write_routes(&a.out, &network, &routes)?;
            say(format!("routed {} trips with {}", routes.len(), service.name()));
            Ok(())
        }
        RouteCmd::Compare(a) => {
            if a.routes.len() < 2 {
                return Err(Error::usage("route compare needs at least two --routes files"));
            }
            let network = a.net.load()?;
            let mut by_service = BTreeMap::new();
            for p in &a.routes {
                let name = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string());
                let routes = io::read_routes(p, &network, &name)?;
                if by_service.insert(name.clone(), routes).is_some() {
                    return Err(Error::usage(format!("two routes files named {name}")));
                }
            }
            let m = service_similarity_matrix(&by_service).map_err(Error::invalid)?;
            let mut rows = Vec::new();
            for (i, a_name) in m.services.iter().enumerate() {
                for (j, b_name) in m.services.iter().enumerate() {
                    rows.push([
                        a_name.clone(),
                        b_name.clone(),
                        io::num(m.mean_overlap[i][j]),
                        io::num(m.exact_match[i][j]),
                    ]);
                }
            }
            io::write_rows(
                &a.out,
                &["service_a", "service_b", "mean_overlap", "exact_match"],
                rows,
            )?;
            say(format!("compared {} services", m.services.len()));
            Ok(())
        }
    }
}

fn map_match(a: MatchArgs) -> Result<(), Error> {
    let network = a.net.load()?;
    let cfg = MatchConfig::new(a.threshold, a.radius).map_err(Error::invalid)?;
    let mut traces: BTreeMap<String, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for p in io::read_gps(&a.gps)? {
        traces.entry(p.vehicle).or_default().push((p.t, p.x, p.y));
    }
    let mut rows = Vec::new();
    let mut failed = 0usize;
    for (vehicle, mut pts) in traces {
        let id: u32 = vehicle.parse().map_err(|_| {
            Error::Invalid(format!(
                "{}: vehicle id {vehicle:?} is not an integer",
                a.gps.display()
            ))
        })?;
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.1, p.2)).collect();
        match lcss_match(&xy, &network, &cfg) {
            Ok(m) => rows.push(navsim_core::routing::Route {
                vehicle: VehicleId(id),
                edges: m.edges,
                depart: pts[0].0,
                provenance: "match".into(),
            }),
            Err(e) => {
                failed += 1;
                eprintln!("warning: vehicle {vehicle}: {e}");
            }
        }
    }
    io::write_routes(&a.out, &network, &rows)?;
    say(format!("matched {} traces, {failed} failed", rows.len()));
    Ok(())
}

fn sim(a: SimArgs) -> Result<(), Error> {
    let network = a.net.load()?;
    let routes = io::read_routes(&a.routes, &network, "file")?;
    let mut cfg = SimConfig::default();
    if let Some(h) = a.horizon {
        cfg.horizon = h;
    }
    let r = run_simulation(&network, &routes, cfg, Default::default(), a.seed).map_err(Error::invalid)?;
    io::write_sim_result(
        &network,
        &r,
        &a.out.join("vehicles.csv"),
        &a.out.join("edge_stats.csv"),
    )?;
    for (v, why) in &r.failed {
        eprintln!("warning: vehicle {v}: {why}");
    }
    say(format!(
        "completed {}  incomplete {}  teleports {}  total CO2 {:.3} kg",
        r.completed,
        r.incomplete,
        r.teleport_count,
        r.total_edge_co2() * 1e-6
    ));
    Ok(())
}

fn analyze(cmd: AnalyzeCmd) -> Result<(), Error> {
    match cmd {
        AnalyzeCmd::Fit(a) => {
            let (x, y) = a.xy.read()?;
            let fits = fit_model(a.model, &x, &y)?;
            let rows: Vec<[String; 7]> = fits.iter().map(io::fit_row).collect();
            match &a.out {
                Some(p) => io::write_rows(p, io::FIT_HEADER, rows.clone())?,
                None => {
                    say(io::FIT_HEADER.join(","));
                    for r in &rows {
                        say(r.join(","));
                    }
                }
            }
            Ok(())
        }
        AnalyzeCmd::Entropy(a) => {
            let co2 = io::read_edge_co2(&a.input)?;
            let h = emission_entropy(&co2, co2.len()).map_err(Error::invalid)?;
            say(io::num(h));
            Ok(())
        }
        AnalyzeCmd::Elbow(a) => {
            let (x, y) = a.read()?;
            let e = elbow_point(&x, &y).map_err(Error::invalid)?;
            say(format!(
                "index {}  x {}  y {}  collinear {}",
                e.index, e.x, e.y, e.collinear
            ));
            Ok(())
        }
        AnalyzeCmd::Calibrate(a) => {
            let mut plan_file = PlanFile::read(&a.plan)?;
            if let Some(s) = a.seed {
                plan_file.master_seed = s;
            }
            let base = a
                .plan
                .parent()
                .filter(|p| !p.as_os_str().is_empty())
                .unwrap_or(Path::new("."));
            let loaded = plan_file.load(base)?;
            let cal = calibrate_traffic_loads(
                &loaded.network,
                loaded.demand.source(),
                &a.candidates,
                a.repeats,
                &loaded.plan,
                &RayonExecutor::new(a.jobs),
            )
            .map_err(Error::invalid)?;
            if let Some(p) = &a.out {
                io::write_rows(
                    p,
                    &["n_vehicles", "mean_teleports"],
                    cal.candidates
                        .iter()
                        .zip(&cal.mean_teleports)
                        .map(|(n, t)| [n.to_string(), io::num(*t)]),
                )?;
            }
            for (n, t) in cal.candidates.iter().zip(&cal.mean_teleports) {
                say(format!("N={n:<6} mean teleports {t:.3}"));
            }
            say(format!("n_low {}  n_high {}", cal.n_low, cal.n_high));
            Ok(())
        }
    }
}

fn fit_model(model: ModelArg, x: &[f64], y: &[f64]) -> Result<Vec<FitResult>, Error> {
    let one = |r: Result<FitResult, AnalysisError>| match r {
        Ok(f) => Ok(vec![f]),
        Err(AnalysisError::NonConvergence { best }) => {
            eprintln!("warning: fit did not converge; reporting the best iterate");
            Ok(vec![*best])
        }
        Err(e) => Err(Error::invalid(e)),
    };
    match model {
        ModelArg::Linear => one(fit_polynomial(x, y, 1)),
        ModelArg::Quadratic => one(fit_polynomial(x, y, 2)),
        ModelArg::Cubic => one(fit_polynomial(x, y, 3)),
        ModelArg::Exponential => one(fit_exponential(x, y)),
        ModelArg::ExpDecay => one(fit_exp_decay(x, y)),
        ModelArg::Select => {
            let r = model_selection(x, y).map_err(Error::invalid)?;
            for (m, e) in &r.failures {
                eprintln!("warning: {m}: {e}");
            }
            Ok(r.ranked)
        }
    }
}
