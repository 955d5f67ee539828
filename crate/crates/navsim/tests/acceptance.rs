//! Acceptance runner. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails. Built without the libtest harness so the lines
//! are always shown.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use navsim::exec::RayonExecutor;
use navsim::plan::PlanFile;
use navsim_core::analysis::{
    elbow_point, fit_exp_decay, model_selection, spearman, AnalysisError, FitResult, LoadCalibration, Model,
};
use navsim_core::benchmark::{Benchmark, BenchmarkInputs};
use navsim_core::experiments::{
    calibrate_traffic_loads, run_sweep, DemandSource, ExperimentPlan, SweepInputs, SweepResult,
};
use navsim_core::mapmatch::{lcss_match, lcss_table, MatchConfig};
use navsim_core::metrics::{emission_entropy, marginal_series, route_diversity, RATE_GRID};
use navsim_core::network::EdgeIx;
use navsim_core::routing::{
    fastest_path, least_cost_path, perturbed_fastest_path, route_cost, FastestHistorical,
    HistoricalTravelTimes, NavigationService, PerturbationConfig,
};
use navsim_core::sim::{emission_instant, run_simulation, EmissionParams, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = fn(&mut Ctx) -> Outcome;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Calibration and the high-load sweep of the frozen benchmark, computed
/// once and shared by the criteria that need them.
struct Bench {
    calibration: LoadCalibration,
    recalibration: LoadCalibration,
    sweep: SweepResult,
    elapsed: Duration,
}

#[derive(Default)]
struct Ctx {
    bench: Option<Result<Bench, String>>,
}

impl Ctx {
    fn bench(&mut self) -> Result<&Bench, String> {
        self.bench
            .get_or_insert_with(run_benchmark)
            .as_ref()
            .map_err(Clone::clone)
    }
}

fn run_benchmark() -> Result<Bench, String> {
    let t = Instant::now();
    let b = Benchmark::standard();
    let BenchmarkInputs { network, tess, od } = b.build().map_err(|e| e.to_string())?;
    let ex = RayonExecutor::new(0);
    let demand = DemandSource::Od { od: &od, tess: &tess };
    let calibrate = || {
        calibrate_traffic_loads(
            &network,
            demand,
            &b.candidates,
            b.calibration_repeats,
            &b.plan,
            &ex,
        )
        .map_err(|e| e.to_string())
    };
    let calibration = calibrate()?;
    let recalibration = calibrate()?;
    let fastest = FastestHistorical::new();
    let services: [&dyn NavigationService; 1] = [&fastest];
    let history = HistoricalTravelTimes::free_flow();
    let inputs = SweepInputs {
        network: &network,
        demand,
        services: &services,
        history: &history,
    };
    let plan = ExperimentPlan {
        n_vehicles: calibration.n_high,
        ..b.plan.clone()
    };
    let sweep = run_sweep(&inputs, &plan, &ex).map_err(|e| e.to_string())?;
    Ok(Bench {
        calibration,
        recalibration,
        sweep,
        elapsed: t.elapsed(),
    })
}

fn c1_routing_oracle(_: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let history = HistoricalTravelTimes::free_flow();
    let mut pairs = 0;
    for g in 0..500 {
        let n = rng.gen_range(2..=8);
        let net = oracles::random_graph(&mut rng, n);
        for _ in 0..4 {
            let o = EdgeIx(rng.gen_range(0..net.num_edges() as u32));
            let d = EdgeIx(rng.gen_range(0..net.num_edges() as u32));
            match (
                oracles::exhaustive(&net, o, d),
                fastest_path(&net, o, d, &history),
            ) {
                (Some((cost, _)), Ok(p)) => {
                    let got = route_cost(&p, |e| net.edge(e).min_travel_time);
                    check(got == cost, || {
                        format!("graph {g}: cost {got} vs enumerated {cost}")
                    })?;
                    pairs += 1;
                }
                (None, Err(_)) => {}
                (want, got) => return Err(format!("graph {g}: enumeration {want:?} vs router {got:?}")),
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    check(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "{pairs} reachable pairs on 500 graphs exact, {secs:.2} s"
    ))
}

fn c2_perturbation(_: &mut Ctx) -> Outcome {
    let (net, o, d) = oracles::grid_pair();
    let t = |e: EdgeIx| net.edge(e).min_travel_time;
    let best = least_cost_path(&net, o, d, t).map_err(|e| e.to_string())?;
    let opt = route_cost(&best, t);
    let five = PerturbationConfig::new(5.0).map_err(|e| e.to_string())?;
    let one = PerturbationConfig::new(1.0).map_err(|e| e.to_string())?;
    let mut worst = f64::INFINITY;
    for seed in 0..1000u64 {
        let p = perturbed_fastest_path(&net, o, d, &five, &mut ChaCha8Rng::seed_from_u64(seed))
            .map_err(|e| e.to_string())?;
        let c = route_cost(&p, t);
        check(c >= opt, || {
            format!("seed {seed}: w=5 route costs {c} < optimum {opt}")
        })?;
        worst = worst.min(c);
        let q = perturbed_fastest_path(&net, o, d, &one, &mut ChaCha8Rng::seed_from_u64(seed))
            .map_err(|e| e.to_string())?;
        check(q == best, || {
            format!("seed {seed}: w=1 route differs from the optimum")
        })?;
    }
    Ok(format!(
        "1000 seeds, min w=5 cost {worst} >= optimum {opt}, w=1 exact"
    ))
}

fn conservation_gap(vehicle: f64, edge: f64) -> f64 {
    (vehicle - edge).abs() / vehicle.abs().max(edge.abs()).max(1.0)
}

fn c3_emissions(ctx: &mut Ctx) -> Outcome {
    let mut worst_rel: f64 = 0.0;
    for c in oracles::emission_sets(EmissionParams::PASSENGER_CAR) {
        let p = EmissionParams { c };
        for (s, a) in oracles::emission_grid() {
            let got = emission_instant(s, a, &p);
            let (want, scale) = oracles::reference_emission(s, a, &c);
            let err = (got - want).abs() / want.abs().max(scale).max(f64::MIN_POSITIVE);
            worst_rel = worst_rel.max(err);
            check(err <= 1e-12, || format!("s={s} a={a}: {got} vs {want}"))?;
        }
    }
    // conservation on every simulation the suite runs
    let mut sims = 0;
    let mut worst_gap: f64 = 0.0;
    let (net, o, d) = oracles::grid_pair();
    let h = HistoricalTravelTimes::free_flow();
    let route = fastest_path(&net, o, d, &h).map_err(|e| e.to_string())?;
    let routes: Vec<_> = (0..40)
        .map(|k| navsim_core::routing::Route {
            vehicle: navsim_core::demand::VehicleId(k),
            edges: route.clone(),
            depart: f64::from(k),
            provenance: "fixture".into(),
        })
        .collect();
    let r = run_simulation(&net, &routes, SimConfig::default(), EmissionParams::default(), 1)
        .map_err(|e| e.to_string())?;
    worst_gap = worst_gap.max(conservation_gap(r.total_vehicle_co2(), r.total_edge_co2()));
    sims += 1;
    for c in &ctx.bench()?.sweep.cells {
        worst_gap = worst_gap.max(conservation_gap(c.vehicle_co2, c.metrics.total_co2));
        sims += 1;
    }
    check(worst_gap <= 1e-6, || format!("conservation gap {worst_gap:e}"))?;
    Ok(format!("5 x 10^4 grid points, worst rel err {worst_rel:.1e}; {sims} simulations conserve CO2 (worst {worst_gap:.1e})"))
}

fn sweep_once(dir: &Path, plan: &Path, jobs: &str) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_navsim"))
        .args(["sweep", "run", "--plan"])
        .arg(plan)
        .arg("--out")
        .arg(dir)
        .args(["--jobs", jobs])
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        String::from_utf8_lossy(&out.stderr).into_owned()
    })?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    let run = stdout
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("run directory: "))
        .ok_or("no run directory printed")?;
    let run = Path::new(run);
    // conservation on the fixture's cells too
    let cells = std::fs::read_to_string(run.join("cells.csv")).map_err(|e| e.to_string())?;
    let mut lines = cells.lines();
    let head: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| {
        head.iter()
            .position(|h| *h == name)
            .ok_or(format!("no {name} column"))
    };
    let (te, tv) = (col("total_co2_mg")?, col("vehicle_co2_mg")?);
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let (e, v): (f64, f64) = (
            f[te].parse().map_err(|_| "bad co2")?,
            f[tv].parse().map_err(|_| "bad co2")?,
        );
        check(conservation_gap(v, e) <= 1e-6, || {
            format!("fixture cell not conserved: {l}")
        })?;
    }
    std::fs::read(run.join("per_seed.csv")).map_err(|e| e.to_string())
}

fn c4_determinism(_: &mut Ctx) -> Outcome {
    let t = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut plan = PlanFile::benchmark();
    plan.n_vehicles = 1000;
    plan.repeats = 2;
    let path = tmp.path().join("plan.json");
    std::fs::write(&path, plan.to_json()).map_err(|e| e.to_string())?;
    let a = sweep_once(&tmp.path().join("a"), &path, "1")?;
    let b = sweep_once(&tmp.path().join("b"), &path, "0")?;
    check(a == b, || "per_seed.csv differs between executions".into())?;
    let secs = t.elapsed().as_secs_f64();
    check(secs < 120.0, || format!("fixture took {secs:.1} s"))?;
    Ok(format!(
        "per_seed.csv byte-identical ({} bytes), {secs:.1} s",
        a.len()
    ))
}

fn accept_best(r: Result<FitResult, AnalysisError>) -> Result<FitResult, String> {
    match r {
        Ok(f) => Ok(f),
        Err(AnalysisError::NonConvergence { best }) => Ok(*best),
        Err(e) => Err(e.to_string()),
    }
}

fn c5_fit_recovery(_: &mut Ctx) -> Outcome {
    let mut worst_clean: f64 = 0.0;
    for truth in oracles::DECAY_CASES {
        let (x, y) = oracles::noiseless_design(truth);
        let f = fit_exp_decay(&x, &y).map_err(|e| format!("{truth:?}: {e}"))?;
        for (got, want) in f.params.iter().zip([truth.0, truth.1, truth.2]) {
            let scale = want.abs().max(1e-12 * truth.0.abs());
            let rel = (got - want).abs() / scale;
            worst_clean = worst_clean.max(rel);
            check(rel <= 1e-6, || format!("{truth:?}: got {:?}", f.params))?;
        }
    }
    let truth = (10.0, 0.8, 2.0);
    let mut worst_beta: f64 = 0.0;
    for rep in 0..20 {
        let (x, y) = oracles::noisy_design(truth, rep);
        let f = accept_best(fit_exp_decay(&x, &y))?;
        let rel = (f.params[1] - truth.1).abs() / truth.1;
        worst_beta = worst_beta.max(rel);
        check(rel <= 0.05, || format!("replicate {rep}: beta {}", f.params[1]))?;
    }
    let mut positives = 0;
    for (x, y) in oracles::null_designs(1000) {
        if accept_best(fit_exp_decay(&x, &y))?.p_value < 0.05 {
            positives += 1;
        }
    }
    check(positives <= 70, || {
        format!("null false-positive rate {positives}/1000")
    })?;
    Ok(format!(
        "noiseless worst rel {worst_clean:.1e}, noisy worst beta err {:.2}%, null FPR {:.1}%",
        100.0 * worst_beta,
        f64::from(positives) / 10.0
    ))
}

fn c6_metric_closed_forms(_: &mut Ctx) -> Outcome {
    let entropy = |v: &[f64]| emission_entropy(v, v.len()).map_err(|e| e.to_string());
    let mut one = vec![0.0; 16];
    one[3] = 42.0;
    let mut four = vec![0.0; 16];
    for e in [0, 5, 10, 15] {
        four[e] = 3.0;
    }
    for (v, want) in [(one, 0.0), (vec![7.5; 16], 1.0), (four, 0.5)] {
        let h = entropy(&v)?;
        check((h - want).abs() <= 1e-12, || format!("entropy {h} vs {want}"))?;
    }
    let r = |ids: &[u32]| ids.iter().map(|&i| EdgeIx(i)).collect::<Vec<_>>();
    let (a, b, c) = (r(&[0, 1, 2]), r(&[2, 3]), r(&[5, 6, 5]));
    for (got, want) in [
        (route_diversity([a.as_slice()]), 3),
        (route_diversity([a.as_slice(), b.as_slice()]), 4),
        (route_diversity([a.as_slice(), a.as_slice()]), 3),
        (route_diversity([c.as_slice()]), 2),
    ] {
        check(got == want, || format!("diversity {got} vs {want}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..1000 {
        let by_rate: BTreeMap<u32, (f64, f64)> = RATE_GRID
            .iter()
            .map(|&r| {
                (
                    r,
                    (
                        f64::from(rng.gen_range(0u32..5000)),
                        f64::from(rng.gen_range(0u32..1_000_000)),
                    ),
                )
            })
            .collect();
        let m = marginal_series(&by_rate).map_err(|e| e.to_string())?;
        let sd: f64 = m.delta_diversity.iter().sum();
        let se: f64 = m.delta_co2.iter().sum();
        check(
            sd == by_rate[&0].0 - by_rate[&100].0 && se == by_rate[&0].1 - by_rate[&100].1,
            || format!("series {k} does not telescope"),
        )?;
    }
    Ok("entropy 0/1/0.5, union sizes and 1000 telescoping series exact".into())
}

/// Smallest diversity reduction from r=0 to r=100 accepted on the frozen
/// benchmark, pinned below the observed 2.3%.
const MIN_DIVERSITY_REDUCTION: f64 = 0.01;

fn c7_universal_patterns(ctx: &mut Ctx) -> Outcome {
    let bench = ctx.bench()?;
    let s = &bench.sweep.summary;
    let at = |r: u32| s.iter().find(|x| x.rate == r).ok_or(format!("no rate {r}"));
    let (d0, d100) = (at(0)?.route_diversity.mean, at(100)?.route_diversity.mean);
    let reduction = (d0 - d100) / d0;
    check(reduction >= MIN_DIVERSITY_REDUCTION, || {
        format!(
            "(i) diversity {d0:.1} -> {d100:.1}, reduction {:.2}%",
            100.0 * reduction
        )
    })?;

    let x: Vec<f64> = s.iter().map(|r| f64::from(r.rate)).collect();
    let y: Vec<f64> = s.iter().map(|r| r.route_diversity.mean).collect();
    let sel = model_selection(&x, &y).map_err(|e| e.to_string())?;
    let top = &sel.ranked[0];
    check(top.model == Model::Exponential && top.r2 >= 0.9, || {
        format!("(ii) best model {} with R2 {:.4}", top.model.name(), top.r2)
    })?;

    let h: Vec<f64> = s.iter().map(|r| r.entropy_norm.mean).collect();
    let rho = spearman(&x, &h).map_err(|e| e.to_string())?;
    check(rho <= -0.8, || format!("(iii) entropy Spearman {rho:.3}"))?;

    for r in (10..=90).step_by(10) {
        let row = at(r)?;
        let (t, c) = match (row.norm_diversity_treated, row.norm_diversity_control) {
            (Some(t), Some(c)) => (t.mean, c.mean),
            _ => return Err(format!("(iv) r={r}: a group is empty")),
        };
        check(t < c, || format!("(iv) r={r}: treated {t:.4} >= control {c:.4}"))?;
    }
    let secs = bench.elapsed.as_secs_f64();
    check(secs < 900.0, || format!("benchmark took {secs:.0} s"))?;
    Ok(format!(
        "N={}: diversity -{:.2}%, {} R2 {:.4}, entropy rho {rho:.2}, treated < control at 10..90, {secs:.0} s",
        bench.calibration.n_high,
        100.0 * reduction,
        top.model.name(),
        top.r2
    ))
}

/// Mean teleports per vehicle below which a load counts as uncongested.
const NEAR_ZERO_TELEPORT_RATE: f64 = 1e-3;

fn c8_calibration(ctx: &mut Ctx) -> Outcome {
    let bench = ctx.bench()?;
    let cal = &bench.calibration;
    check(cal == &bench.recalibration, || "recalibration differs".into())?;
    let xs: Vec<f64> = cal.candidates.iter().map(|&c| c as f64).collect();
    let elbow = elbow_point(&xs, &cal.mean_teleports).map_err(|e| e.to_string())?;
    check(!elbow.collinear, || "teleport curve has no elbow".into())?;
    let k = cal
        .candidates
        .iter()
        .position(|&c| c == cal.n_high)
        .ok_or("n_high not a candidate")?;
    check(cal.mean_teleports[k] > 0.0, || {
        format!("no teleports at N_high={}", cal.n_high)
    })?;
    for (&n, &t) in cal.candidates[..k].iter().zip(&cal.mean_teleports[..k]) {
        check(t / (n as f64) < NEAR_ZERO_TELEPORT_RATE, || {
            format!("N={n}: {t:.2} teleports below N_high")
        })?;
    }
    Ok(format!(
        "N_high={} (teleports {:.1}), N_low={}, teleports below N_high {:?}, identical on rerun",
        cal.n_high,
        cal.mean_teleports[k],
        cal.n_low,
        &cal.mean_teleports[..k]
    ))
}

fn c9_decay_significance(ctx: &mut Ctx) -> Outcome {
    let bench = ctx.bench()?;
    let m = marginal_series(&bench.sweep.means_by_rate()).map_err(|e| e.to_string())?;
    let f = fit_exp_decay(&m.delta_diversity, &m.delta_co2).map_err(|e| format!("decay fit: {e}"))?;
    check(f.p_value < 0.05, || {
        format!("p = {:.4} (R2 {:.3})", f.p_value, f.r2)
    })?;
    Ok(format!(
        "N={}: p = {:.4}, R2 {:.3}",
        bench.calibration.n_high, f.p_value, f.r2
    ))
}

fn c10_map_matching(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for k in 0..1000 {
        let (n, m, hits) = oracles::random_hits(&mut rng);
        check(
            lcss_table(n, m, |i, j| hits[i][j]) == oracles::chain_reference(&hits, m),
            || format!("DP table differs on pair {k}"),
        )?;
    }
    let net = oracles::match_grid();
    let cfg = MatchConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (k, route) in oracles::generating_routes(&net, 100, 2).iter().enumerate() {
        let pts = oracles::trace(&net, route, 0.0, &mut rng);
        let got = lcss_match(&pts, &net, &cfg).map_err(|e| format!("trace {k}: {e}"))?;
        check(&got.edges == route, || {
            format!("noise-free trace {k} not recovered")
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = 0.499 * cfg.spatial_threshold;
    let exact = oracles::generating_routes(&net, 100, 4)
        .iter()
        .filter(|route| {
            let pts = oracles::trace(&net, route, noise, &mut rng);
            lcss_match(&pts, &net, &cfg).is_ok_and(|m| &m.edges == *route)
        })
        .count();
    check(exact >= 95, || format!("{exact}/100 noisy traces recovered"))?;
    Ok(format!(
        "1000 DP tables equal, 100/100 noise-free, {exact}/100 noisy"
    ))
}

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("routing oracle equivalence", c1_routing_oracle),
        ("perturbation contract", c2_perturbation),
        ("emission formula and conservation", c3_emissions),
        ("sweep determinism", c4_determinism),
        ("decay fit recovery", c5_fit_recovery),
        ("metric closed forms", c6_metric_closed_forms),
        ("universal-pattern benchmark", c7_universal_patterns),
        ("load calibration", c8_calibration),
        ("marginal decay significance", c9_decay_significance),
        ("map matching", c10_map_matching),
    ];
    let mut ctx = Ctx::default();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        match run(&mut ctx) {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", k + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
