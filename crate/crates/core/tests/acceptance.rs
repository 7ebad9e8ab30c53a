//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Tolerances are pinned below.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mbr_core::generator::{generate, generate_json, GeneratorConfig, Template};
use mbr_core::instance::{load_instance, Instance};
use mbr_core::kinematics::{
    braking_distance, max_time_over_interval, max_traverse_time, min_time_free_end, min_time_over_interval,
    min_traverse_time, KinematicParams,
};
use mbr_core::lazy::{solve_iteratively, SolveConfig, SolveResult, SolveStatus, Strategy};
use mbr_core::schedule::Schedule;
use mbr_core::validator::{fastest_single_train_time, verify_schedule, ValidatorConfig};
use mbr_core::velocity_graph::build_for_demand;

const OBJ_TOL: f64 = 1e-6;
const KIN_TOL: f64 = 1e-3;
const SIM_DT: f64 = 1e-4;
const VALIDATOR_TOL: f64 = 1e-4;
/// Speed grid step used throughout the gate, in m/s.
const DELTA_V: f64 = 10.0;

const FEASIBLE: [&str; 6] = [
    "line_two_trains",
    "single_track_three_trains",
    "double_track_crossover",
    "y_junction",
    "platform_short_trains",
    "platform_long_train",
];
const INFEASIBLE: [&str; 3] = ["infeasible_tight_exit", "infeasible_opposing_windows", "infeasible_unreachable_exit"];
const SINGLE: [&str; 6] = [
    "single_cruise",
    "single_from_rest",
    "single_late_window",
    "single_with_stop",
    "single_branch_choice",
    "single_slow_branch",
];
/// (template, trains, seed), all feasible with a 600 s horizon.
const GENERATED: [(Template, usize, u64); 5] = [
    (Template::Line, 6, 1),
    (Template::Line, 8, 2),
    (Template::YJunction, 6, 2),
    (Template::YJunction, 8, 1),
    (Template::Corridor, 6, 2),
];

type Outcome = Result<String, String>;

fn fixture(name: &str) -> Instance {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "fixtures", &format!("{name}.json")]
        .iter()
        .collect();
    let text = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    load_instance(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn generated(template: Template, trains: usize, seed: u64, horizon: f64) -> Instance {
    generate(&GeneratorConfig { template, trains, horizon, seed }).expect("generator")
}

fn config(strategy: Strategy) -> SolveConfig {
    SolveConfig {
        strategy,
        gap_abs: 0.0,
        delta_v: DELTA_V,
        ..Default::default()
    }
}

fn solve(instance: &Instance, strategy: Strategy) -> Result<SolveResult, String> {
    solve_iteratively(instance, &config(strategy)).map_err(|e| format!("{strategy}: {e}"))
}

fn validator() -> ValidatorConfig {
    ValidatorConfig {
        tolerance: VALIDATOR_TOL,
        ..Default::default()
    }
}

fn clean(instance: &Instance, schedule: &Schedule) -> Result<(), String> {
    let report = verify_schedule(instance, schedule, &validator());
    if report.is_empty() {
        Ok(())
    } else {
        Err(report.to_json())
    }
}

struct Run {
    name: String,
    results: Vec<(Strategy, SolveResult)>,
}

fn equivalence(runs: &mut Vec<Run>) -> Outcome {
    let mut suite: Vec<(String, Instance)> = FEASIBLE.iter().map(|n| (n.to_string(), fixture(n))).collect();
    for (t, n, s) in GENERATED {
        suite.push((format!("{t}-{n}-seed{s}"), generated(t, n, s, 600.0)));
    }
    for (name, instance) in &suite {
        let mut results = Vec::new();
        for s in Strategy::ALL {
            let r = solve(instance, s)?;
            if r.status != SolveStatus::Optimal {
                return Err(format!("{name}: {s} returned {}", r.status));
            }
            let sched = r.schedule.as_ref().ok_or(format!("{name}: {s} has no schedule"))?;
            clean(instance, sched).map_err(|rep| format!("{name}: {s} schedule not clean: {rep}"))?;
            results.push((s, r));
        }
        let reference = results[0].1.objective.unwrap();
        for (s, r) in &results {
            let obj = r.objective.unwrap();
            if (obj - reference).abs() > OBJ_TOL {
                return Err(format!("{name}: {s} objective {obj} vs full {reference}"));
            }
        }
        runs.push(Run {
            name: name.clone(),
            results,
        });
    }
    Ok(format!("{} feasible instances, 5 strategies, |dobj| <= {OBJ_TOL}", suite.len()))
}

fn infeasibility() -> Outcome {
    for name in INFEASIBLE {
        let instance = fixture(name);
        for s in Strategy::ALL {
            let r = solve(&instance, s)?;
            if r.status != SolveStatus::Infeasible {
                return Err(format!("{name}: {s} returned {}", r.status));
            }
        }
    }
    Ok(format!("{} infeasible fixtures, 5 strategies", INFEASIBLE.len()))
}

fn single_train() -> Outcome {
    let opts = config(Strategy::FullModel).graph_options();
    for name in SINGLE {
        let instance = fixture(name);
        let t = instance.train_ids().next().unwrap();
        let graph = build_for_demand(&instance, t, &opts).map_err(|e| format!("{name}: {e}"))?;
        let fastest = fastest_single_train_time(&instance, &graph).map_err(|e| format!("{name}: {e}"))?;
        let d = instance.demand(t);
        let expected = (d.entry_window.lo + fastest - d.exit_window.lo).max(0.0);
        for s in Strategy::ALL {
            let obj = solve(&instance, s)?.objective.ok_or(format!("{name}: {s} no objective"))?;
            if (obj - expected).abs() > OBJ_TOL {
                return Err(format!("{name}: {s} objective {obj}, oracle {expected}"));
            }
        }
    }
    Ok(format!("{} single-train fixtures within {OBJ_TOL}", SINGLE.len()))
}

/// Constant-acceleration advance by `h`.
fn advance(x: f64, v: f64, acc: f64, h: f64) -> (f64, f64) {
    (x + v * h + 0.5 * acc * h * h, v + acc * h)
}

/// Largest `h' <= h` at which `pred` still holds, by bisection.
fn bisect(h: f64, pred: impl Fn(f64) -> bool) -> f64 {
    let (mut lo, mut hi) = (0.0, h);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Times at which a train controlled by `mode` crosses each of the sorted
/// `targets`. `mode` maps (position, speed) to an acceleration and whether
/// that phase runs to the end of the edge. Steps are `SIM_DT` long; a step
/// is cut where the control switches or the train halts.
fn simulate(length: f64, v1: f64, targets: &[f64], mode: impl Fn(f64, f64) -> (f64, bool)) -> Vec<f64> {
    let (mut x, mut v, mut t) = (0.0_f64, v1, 0.0_f64);
    let mut last: Option<f64> = None;
    let mut out: Vec<f64> = targets.iter().take_while(|&&g| g <= 0.0).map(|_| 0.0).collect();
    while out.len() < targets.len() {
        let acc = match last {
            Some(acc) => acc,
            None => {
                let (acc, terminal) = mode(x, v);
                if terminal {
                    last = Some(acc);
                }
                acc
            }
        };
        let mut h = SIM_DT;
        if acc < 0.0 && v + acc * h < 0.0 {
            h = -v / acc;
        }
        let (xn, vn) = advance(x, v, acc, h);
        if last.is_none() && xn < length - 1e-12 && mode(xn, vn).0 != acc {
            h = bisect(h, |s| {
                let (xs, vs) = advance(x, v, acc, s);
                mode(xs, vs).0 == acc
            });
        }
        let (xn, vn) = advance(x, v, acc, h);
        while out.len() < targets.len() && xn >= targets[out.len()] {
            let target = targets[out.len()];
            out.push(t + bisect(h, |s| advance(x, v, acc, s).0 < target));
        }
        (x, v, t) = (xn, vn.max(0.0), t + h);
        if x >= length - 1e-9 || (v <= 0.0 && acc < 0.0) {
            out.resize(targets.len(), t);
        }
    }
    out
}

const SLACK: f64 = 1e-9;

/// Whether the train must brake now to be at `v2` at the end of the edge.
fn must_brake(length: f64, x: f64, v: f64, v2: f64, p: &KinematicParams) -> bool {
    v > v2 && v * v >= v2 * v2 + 2.0 * p.decel * (length - x) - SLACK
}

/// Accelerate at full rate, cruise at `v_max`, brake at full rate as late
/// as possible.
fn sim_fastest(length: f64, v1: f64, v2: f64, targets: &[f64], p: &KinematicParams) -> Vec<f64> {
    simulate(length, v1, targets, |x, v| {
        if must_brake(length, x, v, v2, p) {
            (-p.decel, true)
        } else if v < p.v_max - SLACK {
            (p.accel, false)
        } else {
            (0.0, false)
        }
    })
}

/// Brake at full rate down to `v_floor` (or speed up to it), hold it, and
/// accelerate at full rate as late as possible to reach `v2`.
fn sim_slowest(length: f64, v1: f64, v2: f64, targets: &[f64], p: &KinematicParams) -> Vec<f64> {
    simulate(length, v1, targets, |x, v| {
        if must_brake(length, x, v, v2, p) {
            (-p.decel, true)
        } else if v < v2 && v * v + 2.0 * p.accel * (length - x) <= v2 * v2 + SLACK {
            (p.accel, true)
        } else if v > p.v_floor + SLACK {
            (-p.decel, false)
        } else if v < p.v_floor - SLACK {
            (p.accel, false)
        } else {
            (0.0, false)
        }
    })
}

fn sim_free_end(v0: f64, distance: f64, p: &KinematicParams) -> f64 {
    simulate(distance, v0, &[distance], |_, v| (if v < p.v_max - SLACK { p.accel } else { 0.0 }, false))[0]
}

fn sim_braking(v: f64, decel: f64) -> f64 {
    let (mut x, mut v) = (0.0, v);
    while v > 0.0 {
        let vn = (v - decel * SIM_DT).max(0.0);
        let dt = if vn > 0.0 { SIM_DT } else { v / decel };
        x += 0.5 * (v + vn) * dt;
        v = vn;
    }
    x
}

fn kinematics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let tuples = 1000;
    let mut worst = 0.0_f64;
    for i in 0..tuples {
        let v_max = rng.gen_range(10.0..30.0);
        let p = KinematicParams::new(
            v_max,
            rng.gen_range(0.5..1.5),
            rng.gen_range(0.5..1.5),
            rng.gen_range(4.0..10.0_f64).min(0.5 * v_max),
        )
        .unwrap();
        let v1 = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..v_max) };
        let v2 = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..v_max) };
        let rate = if v2 > v1 { p.accel } else { p.decel };
        let length = (v2 * v2 - v1 * v1).abs() / (2.0 * rate) + rng.gen_range(10.0..300.0);
        let a = rng.gen_range(0.0..length);
        let b = rng.gen_range(0.0..length);
        let (lambda, mu) = (a.min(b), a.max(b));
        let targets = [lambda, mu, length];

        let mut check = |what: &str, closed: f64, sim: f64| -> Result<(), String> {
            let err = (closed - sim).abs();
            worst = worst.max(err);
            if !(err <= KIN_TOL) {
                Err(format!(
                    "tuple {i} {what}: closed {closed} vs simulated {sim} (L={length} v1={v1} v2={v2} [{lambda},{mu}] {p:?})"
                ))
            } else {
                Ok(())
            }
        };
        let ok = |r: Result<f64, _>| r.map_err(|e| format!("tuple {i}: {e}"));
        let fast = sim_fastest(length, v1, v2, &targets, &p);
        check("min", ok(min_traverse_time(length, v1, v2, &p))?, fast[2])?;
        check("min interval", ok(min_time_over_interval(length, v1, v2, lambda, mu, &p))?, fast[1] - fast[0])?;
        if v1 > 0.0 && v2 > 0.0 {
            let slow = sim_slowest(length, v1, v2, &targets, &p);
            check("max", ok(max_traverse_time(length, v1, v2, false, &p))?, slow[2])?;
            check(
                "max interval",
                ok(max_time_over_interval(length, v1, v2, lambda, mu, false, &p))?,
                slow[1] - slow[0],
            )?;
        }
        if ok(max_traverse_time(length, v1, v2, true, &p))? != f64::INFINITY {
            return Err(format!("tuple {i}: stop-allowed maximum is finite"));
        }
        check("free end", ok(min_time_free_end(v1, length, &p))?, sim_free_end(v1, length, &p))?;
        check("braking", ok(braking_distance(v1, p.decel))?, sim_braking(v1, p.decel))?;
    }
    Ok(format!("{tuples} tuples, dt {SIM_DT}, worst |err| {worst:.2e} <= {KIN_TOL}"))
}

/// `[arrival, departure]` at the vertex where `train` served its first stop.
fn dwell(instance: &Instance, schedule: &Schedule, train: &str) -> Result<(f64, f64), String> {
    let t = instance.train_by_name(train).ok_or(format!("no train {train}"))?;
    let ts = schedule.train(t);
    let v = ts.stops.first().copied().flatten().ok_or(format!("{train} made no stop"))?;
    let k = ts.position(v).ok_or(format!("{train} stop vertex not on route"))?;
    Ok((ts.arrival[k], ts.departure[k]))
}

fn overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0.max(b.0) < a.1.min(b.1)
}

fn platform() -> Outcome {
    let short = fixture("platform_short_trains");
    let r = solve(&short, Strategy::AdjacentViolated)?;
    let sched = r.schedule.ok_or("short trains: no schedule")?;
    clean(&short, &sched)?;
    let (s1, s2) = (dwell(&short, &sched, "s1")?, dwell(&short, &sched, "s2")?);
    if !overlap(s1, s2) {
        return Err(format!("short trains dwell apart: {s1:?} {s2:?}"));
    }

    let long = fixture("platform_long_train");
    let r = solve(&long, Strategy::AdjacentViolated)?;
    let sched = r.schedule.ok_or("long train: no schedule")?;
    clean(&long, &sched)?;
    let (l, s) = (dwell(&long, &sched, "long")?, dwell(&long, &sched, "short")?);
    if overlap(l, s) {
        return Err(format!("long and short dwell together: {l:?} {s:?}"));
    }

    let clash = fixture("platform_long_train_clash");
    for strategy in Strategy::ALL {
        let r = solve(&clash, strategy)?;
        if r.status != SolveStatus::Infeasible {
            return Err(format!("clash: {strategy} returned {}", r.status));
        }
    }
    Ok(format!("80 m dwells overlap {s1:?}/{s2:?}; 150 m dwell {l:?} excludes {s:?}; forced overlap infeasible"))
}

const DISJOINT: &str = r#"{
  "network": {"vertices": ["a0", "a1", "a2", "b0", "b1", "b2"], "edges": [
    {"id": "a01", "from": "a0", "to": "a1", "length_m": 800, "speed_limit_mps": 30},
    {"id": "a12", "from": "a1", "to": "a2", "length_m": 800, "speed_limit_mps": 30},
    {"id": "b01", "from": "b0", "to": "b1", "length_m": 800, "speed_limit_mps": 30},
    {"id": "b12", "from": "b1", "to": "b2", "length_m": 800, "speed_limit_mps": 30}]},
  "trains": [
    {"id": "x", "length_m": 120, "max_speed_mps": 30, "acceleration_mps2": 0.8, "deceleration_mps2": 0.9},
    {"id": "y", "length_m": 90, "max_speed_mps": 25, "acceleration_mps2": 1.0, "deceleration_mps2": 1.0}],
  "demands": [
    {"train": "x", "weight": 1, "entry_vertex": "a0", "entry_speed_mps": 0, "entry_window_s": [0, 10], "exit_vertex": "a2", "exit_window_s": [0, 600]},
    {"train": "y", "weight": 2, "entry_vertex": "b0", "entry_speed_mps": 10, "entry_window_s": [0, 10], "exit_vertex": "b2", "exit_window_s": [0, 600]}]
}"#;

fn added(results: &[(Strategy, SolveResult)], s: Strategy) -> usize {
    results.iter().find(|(x, _)| *x == s).unwrap().1.stats.constraints_added
}

fn iterations(results: &[(Strategy, SolveResult)], s: Strategy) -> usize {
    results.iter().find(|(x, _)| *x == s).unwrap().1.stats.iterations
}

fn lazy_advantage(runs: &[Run]) -> Outcome {
    let lazy = &Strategy::ALL[1..];
    let instance = generated(Template::Corridor, 10, 11, 900.0);
    let mut results = Vec::new();
    for s in Strategy::ALL {
        let r = solve(&instance, s)?;
        if r.status != SolveStatus::Optimal {
            return Err(format!("corridor: {s} returned {}", r.status));
        }
        results.push((s, r));
    }
    let eager = added(&results, Strategy::FullModel);
    for &s in lazy {
        if added(&results, s) >= eager {
            return Err(format!("corridor: {s} added {} >= full {eager}", added(&results, s)));
        }
    }

    let disjoint = load_instance(DISJOINT).unwrap();
    for &s in lazy {
        let r = solve(&disjoint, s)?;
        if r.status != SolveStatus::Optimal || r.stats.constraints_added != 0 {
            return Err(format!("disjoint: {s} {} added {}", r.status, r.stats.constraints_added));
        }
    }

    let mut conflicted = 0;
    let corridor = Run {
        name: "corridor-10".into(),
        results,
    };
    for run in runs.iter().chain(std::iter::once(&corridor)) {
        if added(&run.results, Strategy::AdjacentViolated) == 0 {
            continue;
        }
        conflicted += 1;
        let (first, adjacent) = (
            iterations(&run.results, Strategy::FirstViolation),
            iterations(&run.results, Strategy::AdjacentViolated),
        );
        if first < adjacent {
            return Err(format!("{}: first-violation {first} < adjacent-violated {adjacent} iterations", run.name));
        }
    }
    let counts: Vec<String> = lazy
        .iter()
        .map(|&s| format!("{s}={}", added(&corridor.results, s)))
        .collect();
    Ok(format!(
        "corridor 10 trains full={eager} {}; disjoint adds 0; iterations ordered on {conflicted} conflicted instances",
        counts.join(" ")
    ))
}

fn validator_agreement() -> Outcome {
    let lazy = &Strategy::ALL[1..];
    let (mut solved, mut seed) = (0, 0_u64);
    while solved < 100 {
        if seed >= 400 {
            return Err(format!("only {solved} solved instances in {seed} seeds"));
        }
        let template = Template::ALL[seed as usize % 3];
        let trains = 2 + (seed as usize / 3) % 3;
        let instance = generated(template, trains, 1000 + seed, 300.0);
        let strategy = lazy[seed as usize % lazy.len()];
        seed += 1;
        let r = solve(&instance, strategy)?;
        if let Some(sched) = &r.schedule {
            clean(&instance, sched).map_err(|rep| format!("seed {}: {strategy}: {rep}", 999 + seed))?;
            solved += 1;
        }
    }
    Ok(format!("{solved} solved instances clean at tol {VALIDATOR_TOL} ({seed} generated)"))
}

fn determinism() -> Outcome {
    for template in Template::ALL {
        let c = GeneratorConfig { template, trains: 8, horizon: 600.0, seed: 42 };
        if generate_json(&c).unwrap() != generate_json(&c).unwrap() {
            return Err(format!("{template}: generator output differs"));
        }
    }
    let instance = fixture("single_track_three_trains");
    let log = |r: SolveResult| -> Vec<(usize, u64, usize, usize)> {
        r.stats
            .per_iteration
            .iter()
            .map(|i| (i.iteration, i.objective.to_bits(), i.checked, i.added))
            .collect()
    };
    let a = log(solve(&instance, Strategy::FirstViolation)?);
    let b = log(solve(&instance, Strategy::FirstViolation)?);
    if a != b {
        return Err(format!("iteration logs differ: {a:?} vs {b:?}"));
    }
    Ok(format!("generator byte-identical; {} first-violation iterations reproduced", a.len()))
}

fn main() -> ExitCode {
    let mut runs = Vec::new();
    let mut failed = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS {name}: {msg} [{secs:.1}s]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL {name}: {msg} [{secs:.1}s]");
            }
        }
    };
    report("strategy-equivalence", &mut || equivalence(&mut runs));
    report("infeasibility-agreement", &mut infeasibility);
    report("single-train-oracle", &mut single_train);
    report("kinematics-vs-simulation", &mut kinematics);
    report("train-length-separation", &mut platform);
    report("lazy-advantage", &mut || lazy_advantage(&runs));
    report("validator-agreement", &mut validator_agreement);
    report("determinism", &mut determinism);
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
