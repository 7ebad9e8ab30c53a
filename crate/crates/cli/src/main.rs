use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mbr_core::backend::HighsBackend;
use mbr_core::bench::{cumulative_tables, run_benchmark, write_csv, write_cumulative_csv};
use mbr_core::generator::{generate_json, GeneratorConfig, Template};
use mbr_core::instance::{load_instance, Instance};
use mbr_core::lazy::{solve_with_model, SolveConfig, SolveStatus, Strategy};
use mbr_core::schedule::Schedule;
use mbr_core::validator::{verify_schedule, ValidatorConfig};

/// Moving-block railway timetabling with lazily added headway constraints.
#[derive(Parser)]
#[command(name = "mbr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and write its schedule.
    Solve(SolveArgs),
    /// Write a random instance.
    Generate(GenerateArgs),
    /// Run strategies over instances and write CSV results.
    Benchmark(BenchmarkArgs),
    /// Check a schedule against an instance.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct SolverFlags {
    #[arg(long, default_value = "adjacent-violated")]
    strategy: Strategy,
    /// Absolute optimality gap in seconds.
    #[arg(long, default_value_t = 10.0)]
    gap_abs: f64,
    /// Wall-clock limit in seconds.
    #[arg(long, default_value_t = 300.0)]
    time_limit: f64,
    /// Speed grid step in km/h.
    #[arg(long, default_value_t = 10.0)]
    delta_v: f64,
    /// Extra separation in meters.
    #[arg(long, default_value_t = 0.0)]
    buffer: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverFlags {
    fn config(&self) -> SolveConfig {
        SolveConfig {
            strategy: self.strategy,
            gap_abs: self.gap_abs,
            time_limit: self.time_limit,
            delta_v: self.delta_v / 3.6,
            buffer: self.buffer,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(short, long)]
    instance: PathBuf,
    #[command(flatten)]
    solver: SolverFlags,
    /// Schedule output path.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Violation report path (defaults to `<out>.report.json`).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the final model, one `tag | terms | sense | rhs` line per row.
    #[arg(long)]
    dump_model: Option<PathBuf>,
    /// Write the final model in LP format.
    #[arg(long)]
    lp: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "corridor")]
    template: Template,
    #[arg(long, default_value_t = 10)]
    trains: usize,
    /// Entry times are spread over this many seconds.
    #[arg(long, default_value_t = 1800.0)]
    horizon: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Instance files or directories of `.json` instances.
    #[arg(short, long, required = true)]
    instance: Vec<PathBuf>,
    /// Strategies to run (repeatable); all when omitted.
    #[arg(long)]
    strategy: Vec<Strategy>,
    #[arg(long, default_value_t = 10.0)]
    gap_abs: f64,
    #[arg(long, default_value_t = 300.0)]
    time_limit: f64,
    /// Speed grid step in km/h.
    #[arg(long, default_value_t = 10.0)]
    delta_v: f64,
    #[arg(long, default_value_t = 0.0)]
    buffer: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    /// Results CSV; stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Cumulative solved-fraction CSV.
    #[arg(long)]
    cumulative: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(short, long)]
    instance: PathBuf,
    #[arg(short, long)]
    schedule: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0.0)]
    buffer: f64,
    /// Report path; printed to stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

const EXIT_ERROR: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_TIME_LIMIT: u8 = 3;
const EXIT_VIOLATIONS: u8 = 4;

fn read_instance(path: &Path) -> Result<Instance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_instance(&text).with_context(|| format!("loading {}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn report_path(out: &Path) -> PathBuf {
    out.with_extension("report.json")
}

fn solve(args: &SolveArgs) -> Result<u8> {
    let instance = read_instance(&args.instance)?;
    let config = args.solver.config();
    let (result, model) = solve_with_model(&instance, &config, HighsBackend::new)?;
    if let Some(model) = &model {
        if let Some(path) = &args.dump_model {
            let mut buf = Vec::new();
            model.dump(&mut buf)?;
            fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
        }
        if let Some(path) = &args.lp {
            let mut buf = Vec::new();
            model.write_lp(&mut buf)?;
            fs::write(path, buf).with_context(|| format!("writing {}", path.display()))?;
        }
    }
    let objective = result.objective.map_or("NA".to_string(), |o| format!("{o:.6}"));
    println!(
        "status={} objective={objective} iterations={} checked={} added={} time_s={:.3}",
        result.status,
        result.stats.iterations,
        result.stats.constraints_checked,
        result.stats.constraints_added,
        result.stats.wall_time
    );
    if let Some(schedule) = &result.schedule {
        let validator = ValidatorConfig {
            buffer: config.buffer,
            v_floor: config.v_floor,
            ..Default::default()
        };
        let report = verify_schedule(&instance, schedule, &validator);
        if !report.is_empty() {
            log::warn!("schedule has {} violation(s)", report.entries.len());
        }
        if let Some(out) = &args.out {
            write_file(out, &schedule.to_json(&instance))?;
            let rp = args.report.clone().unwrap_or_else(|| report_path(out));
            write_file(&rp, &report.to_json())?;
        } else if let Some(rp) = &args.report {
            write_file(rp, &report.to_json())?;
        }
    }
    Ok(match result.status {
        SolveStatus::Optimal => 0,
        SolveStatus::Infeasible => EXIT_INFEASIBLE,
        SolveStatus::TimeLimit => EXIT_TIME_LIMIT,
    })
}

fn generate(args: &GenerateArgs) -> Result<u8> {
    let text = generate_json(&GeneratorConfig {
        template: args.template,
        trains: args.trains,
        horizon: args.horizon,
        seed: args.seed,
    })?;
    match &args.out {
        Some(path) => write_file(path, &text)?,
        None => println!("{text}"),
    }
    Ok(0)
}

fn collect_instances(paths: &[PathBuf]) -> Result<Vec<(String, Instance)>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "json"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        bail!("no instances found");
    }
    files
        .iter()
        .map(|f| {
            let name = f.file_stem().map_or_else(|| f.display().to_string(), |s| s.to_string_lossy().into_owned());
            Ok((name, read_instance(f)?))
        })
        .collect()
}

fn benchmark(args: &BenchmarkArgs) -> Result<u8> {
    let instances = collect_instances(&args.instance)?;
    let strategies = if args.strategy.is_empty() {
        Strategy::ALL.to_vec()
    } else {
        args.strategy.clone()
    };
    let base = SolveConfig {
        gap_abs: args.gap_abs,
        time_limit: args.time_limit,
        delta_v: args.delta_v / 3.6,
        buffer: args.buffer,
        seed: args.seed,
        ..Default::default()
    };
    base.validate()?;
    let rows = run_benchmark(&instances, &strategies, &base, args.repetitions);
    match &args.out {
        Some(path) => {
            let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_csv(&rows, f)?;
        }
        None => write_csv(&rows, std::io::stdout().lock())?,
    }
    if let Some(path) = &args.cumulative {
        let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_cumulative_csv(&cumulative_tables(&rows), f)?;
    }
    Ok(0)
}

fn validate(args: &ValidateArgs) -> Result<u8> {
    let instance = read_instance(&args.instance)?;
    let text = fs::read_to_string(&args.schedule).with_context(|| format!("reading {}", args.schedule.display()))?;
    let schedule = Schedule::from_json(&instance, &text).with_context(|| format!("loading {}", args.schedule.display()))?;
    let config = ValidatorConfig {
        tolerance: args.tolerance,
        buffer: args.buffer,
        ..Default::default()
    };
    let report = verify_schedule(&instance, &schedule, &config);
    match &args.out {
        Some(path) => write_file(path, &report.to_json())?,
        None => println!("{}", report.to_json()),
    }
    for v in &report.entries {
        eprintln!("{}: {} at {} ({:.6}): {}", v.kind, v.trains.join(","), v.location, v.magnitude, v.detail);
    }
    Ok(if report.is_empty() { 0 } else { EXIT_VIOLATIONS })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MBR_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    let outcome = match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Generate(a) => generate(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Validate(a) => validate(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
