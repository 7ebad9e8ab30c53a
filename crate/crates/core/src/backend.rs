//! Abstract MILP backend contract and the bundled HiGHS adapter.
//!
//! A backend owns one live model. Columns and rows are appended
//! incrementally; re-solving after appending rows keeps whatever state the
//! engine can reuse. The lazy engine only ever talks to [`SolverBackend`].

use std::fmt::Write as _;
use std::io;
use std::time::Instant;

use highs::{HighsModelStatus, HighsSolutionStatus, Model, RowProblem, Sense as HighsSense};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("solver reported an unbounded model")]
    Unbounded,
    #[error("solver failure: {0}")]
    Engine(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum RowSense {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">=")]
    Ge,
}

impl RowSense {
    pub fn symbol(self) -> &'static str {
        match self {
            RowSense::Le => "<=",
            RowSense::Eq => "=",
            RowSense::Ge => ">=",
        }
    }

    /// Amount by which `lhs` misses `rhs` (0 when satisfied).
    pub fn violation(self, lhs: f64, rhs: f64) -> f64 {
        match self {
            RowSense::Le => (lhs - rhs).max(0.0),
            RowSense::Ge => (rhs - lhs).max(0.0),
            RowSense::Eq => (lhs - rhs).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackendCapabilities {
    pub supports_warm_start: bool,
    pub supports_abs_gap: bool,
    /// Rough size the engine handles comfortably.
    pub max_vars: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendStatus {
    Optimal,
    Infeasible,
    TimeLimit,
}

#[derive(Debug, Clone)]
pub struct BackendOutcome {
    pub status: BackendStatus,
    /// Column values of the incumbent, if one exists.
    pub values: Option<Vec<f64>>,
    pub objective: Option<f64>,
    /// Proven lower bound on the optimum.
    pub bound: Option<f64>,
}

pub trait SolverBackend {
    fn name(&self) -> &'static str;
    fn capabilities(&self) -> BackendCapabilities;
    /// Appends a column and returns its index.
    fn add_var(&mut self, name: &str, kind: VarKind, lo: f64, hi: f64) -> usize;
    fn add_row(&mut self, name: &str, terms: &[(usize, f64)], sense: RowSense, rhs: f64);
    /// Replaces the (minimised) objective.
    fn set_objective(&mut self, terms: &[(usize, f64)]);
    /// Hint for the next solve; columns missing from `values` are left free.
    fn set_warm_start(&mut self, values: &[f64]);
    /// Seed for the engine's internal randomness. Engines without one ignore it.
    fn set_seed(&mut self, _seed: u64) {}
    fn solve(&mut self, gap_abs: f64, time_limit: f64) -> Result<BackendOutcome, BackendError>;
    fn num_vars(&self) -> usize;
    fn num_rows(&self) -> usize;
    fn write_lp(&self, out: &mut dyn io::Write) -> io::Result<()>;
}

/// Plain copy of a model, kept alongside the engine for export and rebuilds.
#[derive(Debug, Clone, Default)]
pub struct ModelMirror {
    pub cols: Vec<(String, VarKind, f64, f64)>,
    pub rows: Vec<(String, Vec<(usize, f64)>, RowSense, f64)>,
    pub objective: Vec<(usize, f64)>,
}

fn lp_name(raw: &str) -> String {
    let mut s: String = raw
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        s.insert(0, '_');
    }
    s
}

fn lp_terms(out: &mut String, terms: &[(usize, f64)], names: &[String]) {
    if terms.is_empty() {
        out.push_str(" 0 ");
        out.push_str(&names.first().cloned().unwrap_or_else(|| "_zero".into()));
        return;
    }
    for (i, &(c, a)) in terms.iter().enumerate() {
        let sign = if a < 0.0 { "-" } else { "+" };
        if i == 0 && a >= 0.0 {
            let _ = write!(out, " {} {}", a.abs(), names[c]);
        } else {
            let _ = write!(out, " {sign} {} {}", a.abs(), names[c]);
        }
    }
}

impl ModelMirror {
    /// Writes the model in CPLEX LP format.
    pub fn write_lp(&self, out: &mut dyn io::Write) -> io::Result<()> {
        // Suffix the column index so sanitised names stay unique.
        let names: Vec<String> = self
            .cols
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}_{i}", lp_name(&c.0)))
            .collect();
        let mut s = String::from("\\ mbr model\nMinimize\n obj:");
        lp_terms(&mut s, &self.objective, &names);
        s.push_str("\nSubject To\n");
        for (i, (name, terms, sense, rhs)) in self.rows.iter().enumerate() {
            let _ = write!(s, " r{i}_{}:", lp_name(name));
            lp_terms(&mut s, terms, &names);
            let _ = writeln!(s, " {} {rhs}", sense.symbol());
        }
        s.push_str("Bounds\n");
        for (i, (_, kind, lo, hi)) in self.cols.iter().enumerate() {
            if *kind == VarKind::Binary {
                continue;
            }
            let _ = writeln!(s, " {lo} <= {} <= {hi}", names[i]);
        }
        let binaries: Vec<&String> = self
            .cols
            .iter()
            .zip(&names)
            .filter(|(c, _)| c.1 == VarKind::Binary)
            .map(|(_, n)| n)
            .collect();
        if !binaries.is_empty() {
            s.push_str("Binary\n");
            for chunk in binaries.chunks(8) {
                let line: Vec<&str> = chunk.iter().map(|n| n.as_str()).collect();
                let _ = writeln!(s, " {}", line.join(" "));
            }
        }
        s.push_str("End\n");
        out.write_all(s.as_bytes())
    }
}

/// HiGHS through the `highs` crate.
pub struct HighsBackend {
    model: Option<Model>,
    handles: Vec<highs::Col>,
    mirror: ModelMirror,
    warm: Option<Vec<f64>>,
    seed: Option<u64>,
}

impl Default for HighsBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl HighsBackend {
    pub fn new() -> Self {
        Self {
            model: Some(Self::fresh()),
            handles: Vec::new(),
            mirror: ModelMirror::default(),
            warm: None,
            seed: None,
        }
    }

    fn fresh() -> Model {
        let mut model = RowProblem::default().optimise(HighsSense::Minimise);
        model.make_quiet();
        model
    }

    fn model(&mut self) -> &mut Model {
        if self.model.is_none() {
            let (model, handles) = self.rebuild();
            self.model = Some(model);
            self.handles = handles;
        }
        self.model.as_mut().expect("model")
    }

    /// Recreates the engine model from the mirror after a failed solve
    /// consumed it.
    fn rebuild(&self) -> (Model, Vec<highs::Col>) {
        let mut model = Self::fresh();
        let cols: Vec<highs::Col> = self
            .mirror
            .cols
            .iter()
            .map(|(_, kind, lo, hi)| add_col(&mut model, *kind, *lo, *hi))
            .collect();
        for (_, terms, sense, rhs) in &self.mirror.rows {
            push_row(&mut model, &cols, terms, *sense, *rhs);
        }
        for &(c, a) in &self.mirror.objective {
            model.change_column_cost(cols[c], a);
        }
        (model, cols)
    }

    pub fn mirror(&self) -> &ModelMirror {
        &self.mirror
    }
}

fn add_col(model: &mut Model, kind: VarKind, lo: f64, hi: f64) -> highs::Col {
    match kind {
        VarKind::Continuous => model.add_col(0.0, lo..=hi, []),
        VarKind::Binary => model.add_integer_column(0.0, lo.max(0.0)..=hi.min(1.0), []),
    }
}

fn push_row(model: &mut Model, cols: &[highs::Col], terms: &[(usize, f64)], sense: RowSense, rhs: f64) {
    let factors = terms.iter().map(|&(c, a)| (cols[c], a));
    match sense {
        RowSense::Le => model.add_row(..=rhs, factors),
        RowSense::Ge => model.add_row(rhs.., factors),
        RowSense::Eq => model.add_row(rhs..=rhs, factors),
    };
}

impl SolverBackend for HighsBackend {
    fn name(&self) -> &'static str {
        "highs"
    }

    fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities {
            supports_warm_start: true,
            supports_abs_gap: true,
            max_vars: 1_000_000,
        }
    }

    fn add_var(&mut self, name: &str, kind: VarKind, lo: f64, hi: f64) -> usize {
        let idx = self.mirror.cols.len();
        self.mirror.cols.push((name.to_string(), kind, lo, hi));
        if let Some(model) = self.model.as_mut() {
            self.handles.push(add_col(model, kind, lo, hi));
        }
        idx
    }

    fn add_row(&mut self, name: &str, terms: &[(usize, f64)], sense: RowSense, rhs: f64) {
        if let Some(model) = self.model.as_mut() {
            push_row(model, &self.handles, terms, sense, rhs);
        }
        self.mirror.rows.push((name.to_string(), terms.to_vec(), sense, rhs));
    }

    fn set_objective(&mut self, terms: &[(usize, f64)]) {
        if let Some(model) = self.model.as_mut() {
            for &(c, _) in &self.mirror.objective {
                model.change_column_cost(self.handles[c], 0.0);
            }
            for &(c, a) in terms {
                model.change_column_cost(self.handles[c], a);
            }
        }
        self.mirror.objective = terms.to_vec();
    }

    fn set_warm_start(&mut self, values: &[f64]) {
        self.warm = Some(values.to_vec());
    }

    fn solve(&mut self, gap_abs: f64, time_limit: f64) -> Result<BackendOutcome, BackendError> {
        let n = self.mirror.cols.len();
        let warm = self.warm.take();
        let seed = self.seed;
        let model = self.model();
        if let Some(seed) = seed {
            model.set_option("random_seed", (seed % i32::MAX as u64) as i32);
        }
        model.set_option("mip_abs_gap", gap_abs.max(0.0));
        model.set_option("mip_rel_gap", 0.0);
        model.set_option("time_limit", time_limit.max(1e-3));
        if let Some(mut w) = warm {
            if w.len() <= n {
                w.resize(n, 0.0);
                let _ = model.try_set_solution(Some(&w), None, None, None);
            }
        }
        let model = self.model.take().expect("model");
        let solved = match model.try_solve() {
            Ok(s) => s,
            Err(e) => return Err(BackendError::Engine(format!("{e:?}"))),
        };
        let status = solved.status();
        let has_incumbent = n == 0 || solved.primal_solution_status() == HighsSolutionStatus::Feasible;
        let values = has_incumbent.then(|| solved.get_solution().columns().to_vec());
        let objective = has_incumbent.then(|| solved.objective_value());
        let bound = solved.double_info_value(c"mip_dual_bound").ok().filter(|b| b.is_finite());
        let outcome = match status {
            HighsModelStatus::Optimal | HighsModelStatus::ModelEmpty => BackendOutcome {
                status: BackendStatus::Optimal,
                bound: bound.or(objective),
                values,
                objective,
            },
            HighsModelStatus::Infeasible | HighsModelStatus::UnboundedOrInfeasible => BackendOutcome {
                status: BackendStatus::Infeasible,
                values: None,
                objective: None,
                bound: None,
            },
            HighsModelStatus::ReachedTimeLimit
            | HighsModelStatus::ReachedIterationLimit
            | HighsModelStatus::ReachedSolutionLimit
            | HighsModelStatus::ReachedInterrupt => BackendOutcome {
                status: BackendStatus::TimeLimit,
                values,
                objective,
                bound,
            },
            HighsModelStatus::Unbounded => return Err(BackendError::Unbounded),
            other => return Err(BackendError::Engine(format!("model status {other:?}"))),
        };
        self.model = Some(solved.into());
        Ok(outcome)
    }

    fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
    }

    fn num_vars(&self) -> usize {
        self.mirror.cols.len()
    }

    fn num_rows(&self) -> usize {
        self.mirror.rows.len()
    }

    fn write_lp(&self, out: &mut dyn io::Write) -> io::Result<()> {
        self.mirror.write_lp(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformanceCheck {
    pub clause: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformanceReport {
    pub backend: String,
    pub checks: Vec<ConformanceCheck>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ConformanceCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

const CONF_TOL: f64 = 1e-6;

fn check(clause: &'static str, outcome: Result<(), String>) -> ConformanceCheck {
    ConformanceCheck {
        clause,
        passed: outcome.is_ok(),
        detail: outcome.err().unwrap_or_default(),
    }
}

fn expect_optimum<B: SolverBackend>(b: &mut B, gap: f64, want: f64) -> Result<Vec<f64>, String> {
    let out = b.solve(gap, 60.0).map_err(|e| e.to_string())?;
    if out.status != BackendStatus::Optimal {
        return Err(format!("status {:?}, expected Optimal", out.status));
    }
    let obj = out.objective.ok_or("no objective")?;
    if (obj - want).abs() > CONF_TOL.max(gap) {
        return Err(format!("objective {obj}, expected {want}"));
    }
    out.values.ok_or_else(|| "no values".into())
}

fn knapsack<B: SolverBackend>(b: &mut B) -> Vec<usize> {
    let values = [6.0, 10.0, 12.0];
    let weights = [1.0, 2.0, 3.0];
    let cols: Vec<usize> = (0..3)
        .map(|i| b.add_var(&format!("item{i}"), VarKind::Binary, 0.0, 1.0))
        .collect();
    let w: Vec<(usize, f64)> = cols.iter().zip(weights).map(|(&c, w)| (c, w)).collect();
    b.add_row("capacity", &w, RowSense::Le, 5.0);
    let obj: Vec<(usize, f64)> = cols.iter().zip(values).map(|(&c, v)| (c, -v)).collect();
    b.set_objective(&obj);
    cols
}

/// Runs the backend contract on tiny canonical models, each on a fresh
/// backend from `make`.
pub fn conformance_suite<B: SolverBackend>(make: impl Fn() -> B) -> ConformanceReport {
    let mut checks = Vec::new();
    let name = make().name().to_string();

    checks.push(check("lp_optimum", {
        let mut b = make();
        let x = b.add_var("x", VarKind::Continuous, 0.0, 10.0);
        b.add_row("lb", &[(x, 1.0)], RowSense::Ge, 3.0);
        b.set_objective(&[(x, 1.0)]);
        expect_optimum(&mut b, 0.0, 3.0).and_then(|v| {
            if (v[x] - 3.0).abs() > CONF_TOL {
                Err(format!("x = {}", v[x]))
            } else {
                Ok(())
            }
        })
    }));

    checks.push(check("binary_knapsack", {
        let mut b = make();
        let cols = knapsack(&mut b);
        expect_optimum(&mut b, 0.0, -22.0).and_then(|v| {
            match cols.iter().find(|&&c| v[c].min((v[c] - 1.0).abs()) > CONF_TOL) {
                Some(&c) => Err(format!("binary column {c} = {}", v[c])),
                None => Ok(()),
            }
        })
    }));

    checks.push(check("infeasible", {
        let mut b = make();
        let x = b.add_var("x", VarKind::Continuous, 0.0, 10.0);
        b.add_row("lb", &[(x, 1.0)], RowSense::Ge, 3.0);
        b.add_row("ub", &[(x, 1.0)], RowSense::Le, 2.0);
        b.set_objective(&[(x, 1.0)]);
        match b.solve(0.0, 60.0) {
            Ok(o) if o.status == BackendStatus::Infeasible => Ok(()),
            Ok(o) => Err(format!("status {:?}, expected Infeasible", o.status)),
            Err(e) => Err(e.to_string()),
        }
    }));

    checks.push(check("incremental_resolve", {
        let mut b = make();
        let cols = knapsack(&mut b);
        expect_optimum(&mut b, 0.0, -22.0).and_then(|_| {
            // forbid the optimal pair {10, 12}: best is then 6 + 12 = 18
            b.add_row("cut", &[(cols[1], 1.0), (cols[2], 1.0)], RowSense::Le, 1.0);
            expect_optimum(&mut b, 0.0, -18.0).map(|_| ())
        })
    }));

    checks.push(check("abs_gap", {
        let mut b = make();
        knapsack(&mut b);
        let gap = 5.0;
        match b.solve(gap, 60.0) {
            Ok(o) if o.status == BackendStatus::Optimal => match (o.objective, o.bound) {
                (Some(obj), Some(bound)) if obj - bound <= gap + CONF_TOL && obj <= -22.0 + gap + CONF_TOL => Ok(()),
                (obj, bound) => Err(format!("objective {obj:?} bound {bound:?} with gap {gap}")),
            },
            Ok(o) => Err(format!("status {:?}", o.status)),
            Err(e) => Err(e.to_string()),
        }
    }));

    ConformanceReport { backend: name, checks }
}

/// Wall-clock budget shared by a sequence of solves.
#[derive(Debug, Clone, Copy)]
pub struct Deadline {
    start: Instant,
    limit: f64,
}

impl Deadline {
    pub fn new(limit: f64) -> Self {
        Self {
            start: Instant::now(),
            limit,
        }
    }

    pub fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    pub fn remaining(&self) -> f64 {
        (self.limit - self.elapsed()).max(0.0)
    }

    pub fn expired(&self) -> bool {
        self.remaining() <= 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn highs_passes_conformance() {
        let report = conformance_suite(HighsBackend::new);
        for c in &report.checks {
            assert!(c.passed, "{}: {}", c.clause, c.detail);
        }
        assert_eq!(report.checks.len(), 5);
    }

    #[test]
    fn lp_export_lists_sections() {
        let mut b = HighsBackend::new();
        knapsack(&mut b);
        let mut buf = Vec::new();
        b.write_lp(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for section in ["Minimize", "Subject To", "Binary", "End"] {
            assert!(text.contains(section), "{text}");
        }
        assert!(text.contains("r0_capacity: 1 item0_0 + 2 item1_1 + 3 item2_2 <= 5"), "{text}");
    }

    #[test]
    fn rebuild_after_taking_model() {
        let mut b = HighsBackend::new();
        knapsack(&mut b);
        b.model = None;
        let out = b.solve(0.0, 10.0).unwrap();
        assert!((out.objective.unwrap() + 22.0).abs() < 1e-9);
    }

    #[test]
    fn time_limit_is_reported_without_panicking() {
        // a tiny budget may still finish; only the status set is checked
        let mut b = HighsBackend::new();
        knapsack(&mut b);
        let out = b.solve(0.0, 1e-3).unwrap();
        assert!(matches!(out.status, BackendStatus::Optimal | BackendStatus::TimeLimit));
    }

    #[test]
    fn violation_by_sense() {
        assert_eq!(RowSense::Le.violation(3.0, 2.0), 1.0);
        assert_eq!(RowSense::Ge.violation(3.0, 2.0), 0.0);
        assert_eq!(RowSense::Eq.violation(1.0, 2.0), 1.0);
    }
}
