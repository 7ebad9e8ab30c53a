//! Strategy comparison runs, their CSV rows and cumulative runtime tables.

use std::collections::BTreeMap;
use std::io;

use serde::{Serialize, Serializer};

use crate::instance::Instance;
use crate::lazy::{solve_iteratively, SolveConfig, SolveStatus, Strategy};

pub const CSV_HEADER: &str = "instance,strategy,status,objective,wall_time_s,iterations,constraints_checked,constraints_added,seed";

fn or_na<S: Serializer, T: Serialize>(v: &Option<T>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => x.serialize(s),
        None => s.serialize_str("NA"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkRow {
    pub instance: String,
    pub strategy: String,
    /// `Optimal`, `Infeasible`, `TimeLimit`, or `Error` for runs that failed.
    pub status: String,
    #[serde(serialize_with = "or_na")]
    pub objective: Option<f64>,
    pub wall_time_s: f64,
    pub iterations: usize,
    pub constraints_checked: usize,
    pub constraints_added: usize,
    #[serde(serialize_with = "or_na")]
    pub seed: Option<u64>,
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "Optimal",
        SolveStatus::Infeasible => "Infeasible",
        SolveStatus::TimeLimit => "TimeLimit",
    }
}

/// One run of `instance` per strategy and repetition. Failed runs become
/// rows with status `Error`.
pub fn run_benchmark(
    instances: &[(String, Instance)],
    strategies: &[Strategy],
    base: &SolveConfig,
    repetitions: usize,
) -> Vec<BenchmarkRow> {
    let mut rows = Vec::new();
    for (name, instance) in instances {
        for &strategy in strategies {
            for rep in 0..repetitions.max(1) {
                let config = SolveConfig {
                    strategy,
                    seed: base.seed + rep as u64,
                    ..base.clone()
                };
                let start = std::time::Instant::now();
                let row = match solve_iteratively(instance, &config) {
                    Ok(r) => BenchmarkRow {
                        instance: name.clone(),
                        strategy: strategy.name().into(),
                        status: status_name(r.status).into(),
                        objective: r.objective,
                        wall_time_s: r.stats.wall_time,
                        iterations: r.stats.iterations,
                        constraints_checked: r.stats.constraints_checked,
                        constraints_added: r.stats.constraints_added,
                        seed: Some(config.seed),
                    },
                    Err(e) => {
                        log::warn!("{name} with {strategy}: {e}");
                        BenchmarkRow {
                            instance: name.clone(),
                            strategy: strategy.name().into(),
                            status: "Error".into(),
                            objective: None,
                            wall_time_s: start.elapsed().as_secs_f64(),
                            iterations: 0,
                            constraints_checked: 0,
                            constraints_added: 0,
                            seed: Some(config.seed),
                        }
                    }
                };
                rows.push(row);
            }
        }
    }
    rows
}

pub fn write_csv<W: io::Write>(rows: &[BenchmarkRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceSet {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CumulativePoint {
    pub set: InstanceSet,
    pub strategy: String,
    pub wall_time_s: f64,
    /// Share of the set's instances this strategy settled within `wall_time_s`.
    pub fraction: f64,
}

/// Solved fraction over time per strategy, separately for instances some
/// run proved optimal and instances some run proved infeasible. A run
/// counts as solved when its status is the one defining the set.
pub fn cumulative_tables(rows: &[BenchmarkRow]) -> Vec<CumulativePoint> {
    let mut set_of: BTreeMap<&str, InstanceSet> = BTreeMap::new();
    for r in rows {
        match r.status.as_str() {
            "Optimal" => {
                set_of.insert(&r.instance, InstanceSet::Feasible);
            }
            "Infeasible" => {
                set_of.entry(&r.instance).or_insert(InstanceSet::Infeasible);
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    for set in [InstanceSet::Feasible, InstanceSet::Infeasible] {
        let want = match set {
            InstanceSet::Feasible => "Optimal",
            InstanceSet::Infeasible => "Infeasible",
        };
        let mut strategies: Vec<&str> = rows.iter().map(|r| r.strategy.as_str()).collect();
        strategies.sort();
        strategies.dedup();
        for strategy in strategies {
            let runs: Vec<&BenchmarkRow> = rows
                .iter()
                .filter(|r| r.strategy == strategy && set_of.get(r.instance.as_str()) == Some(&set))
                .collect();
            let mut times: Vec<f64> = runs.iter().filter(|r| r.status == want).map(|r| r.wall_time_s).collect();
            times.sort_by(f64::total_cmp);
            for (k, t) in times.iter().enumerate() {
                out.push(CumulativePoint {
                    set,
                    strategy: strategy.into(),
                    wall_time_s: *t,
                    fraction: (k + 1) as f64 / runs.len() as f64,
                });
            }
        }
    }
    out
}

pub fn write_cumulative_csv<W: io::Write>(points: &[CumulativePoint], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if points.is_empty() {
        w.write_record(["set", "strategy", "wall_time_s", "fraction"])?;
    }
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(instance: &str, strategy: &str, status: &str, t: f64) -> BenchmarkRow {
        BenchmarkRow {
            instance: instance.into(),
            strategy: strategy.into(),
            status: status.into(),
            objective: (status == "Optimal").then_some(1.5),
            wall_time_s: t,
            iterations: 1,
            constraints_checked: 0,
            constraints_added: 0,
            seed: None,
        }
    }

    #[test]
    fn header_and_na() {
        let mut buf = Vec::new();
        write_csv(&[row("a", "full", "Infeasible", 0.5)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.next(), Some("a,full,Infeasible,NA,0.5,1,0,0,NA"));
    }

    #[test]
    fn empty_csv_still_has_header() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim_end(), CSV_HEADER);
    }

    #[test]
    fn cumulative_split_and_monotone() {
        let rows = vec![
            row("a", "full", "Optimal", 3.0),
            row("b", "full", "Optimal", 1.0),
            row("c", "full", "TimeLimit", 9.0),
            row("c", "first-violation", "Optimal", 2.0),
            row("d", "full", "Infeasible", 0.2),
        ];
        let pts = cumulative_tables(&rows);
        let full: Vec<&CumulativePoint> =
            pts.iter().filter(|p| p.set == InstanceSet::Feasible && p.strategy == "full").collect();
        assert_eq!(full.len(), 2);
        assert!((full[0].fraction - 1.0 / 3.0).abs() < 1e-12);
        assert!(full.windows(2).all(|w| w[0].fraction <= w[1].fraction && w[0].wall_time_s <= w[1].wall_time_s));
        let inf: Vec<&CumulativePoint> = pts.iter().filter(|p| p.set == InstanceSet::Infeasible).collect();
        assert_eq!(inf.len(), 1);
        assert_eq!(inf[0].fraction, 1.0);
    }
}
