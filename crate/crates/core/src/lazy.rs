//! The solve loop: solve a model holding only part of the headway rows,
//! decode the candidate, check it, add rows it breaks and solve again.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, BackendStatus, Deadline, HighsBackend, RowSense, SolverBackend, VarKind};
use crate::headway::{
    enumerate_all_headway_constraints, opposite_direction_rows, ordering_rows, same_direction_rows, track_segments,
    HeadwayOptions, TrackSegment,
};
use crate::instance::{EdgeId, Instance, TrainId};
use crate::kinematics::KinematicParams;
use crate::milp::{build_base_model, key_bounds, LinearConstraint, MilpModel, ModelError, ModelOptions, Tag, VarKey};
use crate::schedule::{Schedule, TrainSchedule};
use crate::velocity_graph::{build_all, ExtendedGraph, GraphError, GraphOptions, DEFAULT_DELTA_V};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Every headway row up front, one solve.
    #[serde(rename = "full")]
    FullModel,
    AllChecked,
    AdjacentAll,
    AdjacentViolated,
    FirstViolation,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::FullModel,
        Strategy::AllChecked,
        Strategy::AdjacentAll,
        Strategy::AdjacentViolated,
        Strategy::FirstViolation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FullModel => "full",
            Strategy::AllChecked => "all-checked",
            Strategy::AdjacentAll => "adjacent-all",
            Strategy::AdjacentViolated => "adjacent-violated",
            Strategy::FirstViolation => "first-violation",
        }
    }

    fn adjacent_only(self) -> bool {
        matches!(self, Strategy::AdjacentAll | Strategy::AdjacentViolated | Strategy::FirstViolation)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub strategy: Strategy,
    /// Absolute optimality gap in seconds.
    pub gap_abs: f64,
    pub time_limit: f64,
    /// Speed grid step in m/s.
    pub delta_v: f64,
    /// Extra separation in meters.
    pub buffer: f64,
    pub v_floor: f64,
    pub max_release_paths: usize,
    /// Seconds a row may be missed by before it counts as violated.
    pub violation_tolerance: f64,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::AdjacentViolated,
            gap_abs: 10.0,
            time_limit: 300.0,
            delta_v: DEFAULT_DELTA_V,
            buffer: 0.0,
            v_floor: KinematicParams::DEFAULT_V_FLOOR,
            max_release_paths: 64,
            violation_tolerance: 1e-6,
            seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::Config(m.to_string()));
        if !(self.gap_abs >= 0.0) {
            return bad("gap_abs must be ≥ 0");
        }
        if !(self.time_limit > 0.0) {
            return bad("time_limit must be > 0");
        }
        if !(self.delta_v > 0.0) {
            return bad("delta_v must be > 0");
        }
        if !(self.buffer >= 0.0) {
            return bad("buffer must be ≥ 0");
        }
        if !(self.v_floor > 0.0) {
            return bad("v_floor must be > 0");
        }
        if !(self.violation_tolerance >= 0.0) {
            return bad("violation_tolerance must be ≥ 0");
        }
        Ok(())
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            delta_v: self.delta_v,
            v_floor: self.v_floor,
        }
    }

    pub fn headway_options(&self) -> HeadwayOptions {
        HeadwayOptions {
            buffer: self.buffer,
            max_paths: self.max_release_paths,
        }
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("cannot decode solution for train {train}: {message}")]
    Decode { train: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    TimeLimit,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::TimeLimit => "time_limit",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub objective: f64,
    pub checked: usize,
    pub added: usize,
    pub time_s: f64,
}

impl fmt::Display for IterationStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter={} obj={:.6} checked={} added={} time_s={:.3}",
            self.iteration, self.objective, self.checked, self.added, self.time_s
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub constraints_checked: usize,
    pub constraints_added: usize,
    pub wall_time: f64,
    pub per_iteration: Vec<IterationStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub objective: Option<f64>,
    /// Present when optimal. Under a time limit, only when the schedule
    /// already satisfies every headway row.
    pub schedule: Option<Schedule>,
    pub stats: SolveStats,
}

/// Decoded candidate plus the extended edge used on each route edge.
struct Decoded {
    schedule: Schedule,
    exts: Vec<Vec<usize>>,
}

fn decode_error(instance: &Instance, t: TrainId, message: impl Into<String>) -> SolveError {
    SolveError::Decode {
        train: instance.train(t).id.clone(),
        message: message.into(),
    }
}

fn decode(instance: &Instance, graphs: &[ExtendedGraph], value: &dyn Fn(&VarKey) -> f64) -> Result<Decoded, SolveError> {
    let net = &instance.network;
    let on = |k: VarKey| value(&k) > 0.5;
    let mut trains = Vec::new();
    let mut all_exts = Vec::new();
    for g in graphs {
        let train = g.train;
        let demand = instance.demand(train);
        let mut v = demand.entry_vertex;
        let mut vertices = vec![v];
        let mut route = Vec::new();
        let mut exts = Vec::new();
        while v != demand.exit_vertex {
            let mut next: Vec<EdgeId> = g
                .out_of(v)
                .iter()
                .map(|&i| g.edges[i].base_edge)
                .filter(|&e| on(VarKey::Route { train, edge: e }))
                .collect();
            next.dedup();
            let [e] = next[..] else {
                return Err(decode_error(instance, train, format!("{} routed edges leave {}", next.len(), net.vertex_name(v))));
            };
            let chosen: Vec<usize> = g.on_edge(e).iter().copied().filter(|&i| on(VarKey::Ext { train, ext: i })).collect();
            let [i] = chosen[..] else {
                return Err(decode_error(instance, train, format!("{} speed pairs on {}", chosen.len(), net.edge(e).id)));
            };
            v = net.edge(e).to;
            if vertices.contains(&v) {
                return Err(decode_error(instance, train, "route revisits a vertex"));
            }
            vertices.push(v);
            route.push(e);
            exts.push(i);
        }
        if route.is_empty() {
            return Err(decode_error(instance, train, "empty route"));
        }
        let mut speeds = vec![g.edges[exts[0]].p1];
        speeds.extend(exts.iter().map(|&i| g.edges[i].p2));
        let times = |f: fn(TrainId, crate::instance::VertexId) -> VarKey| vertices.iter().map(|&v| value(&f(train, v))).collect();
        let stops = (0..demand.stops.len())
            .map(|k| vertices.iter().copied().find(|&v| on(VarKey::Stop { train, stop: k, vertex: v })))
            .collect();
        trains.push(TrainSchedule {
            train,
            arrival: times(|train, vertex| VarKey::FrontArrival { train, vertex }),
            departure: times(|train, vertex| VarKey::FrontDeparture { train, vertex }),
            rear_departure: times(|train, vertex| VarKey::RearDeparture { train, vertex }),
            route,
            vertices,
            speeds,
            stops,
        });
        all_exts.push(exts);
    }
    Ok(Decoded {
        schedule: Schedule { objective: 0.0, trains },
        exts: all_exts,
    })
}

/// Values of model columns with binaries rounded.
fn rounded_values<B: SolverBackend>(model: &MilpModel<B>, values: &[f64]) -> Vec<f64> {
    model
        .vars
        .keys()
        .iter()
        .zip(values)
        .map(|(k, &v)| if k.kind() == VarKind::Binary { v.round() } else { v })
        .collect()
}

/// Decodes a backend solution into a schedule. Binary values are rounded.
pub fn extract_solution<B: SolverBackend>(
    instance: &Instance,
    graphs: &[ExtendedGraph],
    model: &MilpModel<B>,
    values: &[f64],
) -> Result<Schedule, SolveError> {
    let values = rounded_values(model, values);
    let value = |k: &VarKey| model.vars.get(k).map_or(0.0, |c| values[c]);
    let mut decoded = decode(instance, graphs, &value)?;
    decoded.schedule.objective = model.objective_value(&values);
    Ok(decoded.schedule)
}

/// Sort key for trains at a vertex: front arrival, then train name.
fn arrival_order<'a>(instance: &'a Instance, schedule: &Schedule, t: TrainId, at: crate::instance::VertexId) -> (f64, &'a str) {
    let s = schedule.train(t);
    let time = s.position(at).map_or(f64::INFINITY, |i| s.arrival[i]);
    (time, instance.train(t).id.as_str())
}

fn by_time_then_name(a: (f64, &str), b: (f64, &str)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1))
}

/// Trains using `edge`, by front arrival at its tail (ties by name), as
/// consecutive `(leader, follower)` pairs.
pub fn adjacent_pairs(instance: &Instance, schedule: &Schedule, edge: EdgeId) -> Vec<(TrainId, TrainId)> {
    let tail = instance.network.edge(edge).from;
    let mut users: Vec<TrainId> = schedule.trains.iter().filter(|s| s.uses_edge(edge)).map(|s| s.train).collect();
    users.sort_by(|&a, &b| by_time_then_name(arrival_order(instance, schedule, a, tail), arrival_order(instance, schedule, b, tail)));
    users.windows(2).map(|w| (w[0], w[1])).collect()
}

/// How a schedule crosses a track segment.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Pass {
    forward: bool,
    entry: EdgeId,
    exit: EdgeId,
    entry_time: f64,
}

fn segment_pass(instance: &Instance, s: &TrainSchedule, seg: &TrackSegment) -> Option<Pass> {
    let on: Vec<usize> = (0..s.route.len())
        .filter(|&i| seg.forward.contains(&s.route[i]) || seg.backward.contains(&s.route[i]))
        .collect();
    let (&first, &last) = (on.first()?, on.last()?);
    let entry = s.route[first];
    let tail = instance.network.edge(entry).from;
    Some(Pass {
        forward: seg.forward.contains(&entry),
        entry,
        exit: s.route[last],
        entry_time: s.arrival[s.position(tail).expect("route vertex")],
    })
}

/// Evaluates rows at a candidate: model columns where they exist, orders
/// implied by the candidate's timing otherwise.
struct Assignment<'a> {
    instance: &'a Instance,
    columns: &'a crate::milp::VariableIndex,
    values: &'a [f64],
    schedule: &'a Schedule,
    passes: &'a BTreeMap<(TrainId, usize), Pass>,
}

impl Assignment<'_> {
    fn value(&self, k: &VarKey) -> f64 {
        if let Some(c) = self.columns.get(k) {
            return self.values[c];
        }
        match *k {
            VarKey::Order { follower, leader, edge } => {
                let (f, l) = (self.schedule.train(follower), self.schedule.train(leader));
                if !(f.uses_edge(edge) && l.uses_edge(edge)) {
                    return 0.0;
                }
                let tail = self.instance.network.edge(edge).from;
                let ord = by_time_then_name(
                    arrival_order(self.instance, self.schedule, leader, tail),
                    arrival_order(self.instance, self.schedule, follower, tail),
                );
                f64::from(ord.is_lt())
            }
            VarKey::SegmentOrder { first, second, segment } => {
                match (self.passes.get(&(first, segment)), self.passes.get(&(second, segment))) {
                    (Some(a), Some(b)) => f64::from(a.entry_time <= b.entry_time),
                    _ => 0.0,
                }
            }
            _ => 0.0,
        }
    }
}

/// Generates the checked rows for one candidate.
struct Separator<'a> {
    instance: &'a Instance,
    graphs: &'a [ExtendedGraph],
    segments: &'a [TrackSegment],
    options: HeadwayOptions,
    schedule: &'a Schedule,
    exts: &'a [Vec<usize>],
    passes: BTreeMap<(TrainId, usize), Pass>,
}

impl<'a> Separator<'a> {
    fn new(
        instance: &'a Instance,
        graphs: &'a [ExtendedGraph],
        segments: &'a [TrackSegment],
        options: HeadwayOptions,
        decoded: &'a Decoded,
    ) -> Self {
        let mut passes = BTreeMap::new();
        for s in &decoded.schedule.trains {
            for seg in segments {
                if let Some(p) = segment_pass(instance, s, seg) {
                    passes.insert((s.train, seg.id), p);
                }
            }
        }
        Self {
            instance,
            graphs,
            segments,
            options,
            schedule: &decoded.schedule,
            exts: &decoded.exts,
            passes,
        }
    }

    /// Rows for `follower` behind `leader` on `edge` at the follower's
    /// candidate speed and along the leader's candidate route.
    fn same_direction(&self, follower: TrainId, leader: TrainId, edge: EdgeId) -> Result<Vec<LinearConstraint>, ModelError> {
        let fs = self.schedule.train(follower);
        let pos = fs.route.iter().position(|&e| e == edge).expect("follower uses edge");
        let speed = self.graphs[follower.0].edges[self.exts[follower.0][pos]].from_speed;
        let leader_route = &self.schedule.train(leader).route;
        let rows = same_direction_rows(self.instance, self.graphs, follower, leader, edge, Some(speed), &self.options)?;
        Ok(rows
            .into_iter()
            .filter(|r| r.leader_path.iter().all(|e| leader_route.contains(e)))
            .map(|r| r.row)
            .collect())
    }

    fn pair_on_edge(&self, leader: TrainId, follower: TrainId, edge: EdgeId, both: bool) -> Result<Vec<LinearConstraint>, ModelError> {
        let mut rows = self.same_direction(follower, leader, edge)?;
        if both {
            rows.extend(self.same_direction(leader, follower, edge)?);
        }
        rows.extend(ordering_rows(self.instance, self.graphs, leader.min(follower), leader.max(follower), edge));
        Ok(rows)
    }

    fn opposite(&self, a: TrainId, b: TrainId, seg: &TrackSegment) -> Vec<LinearConstraint> {
        let (Some(pa), Some(pb)) = (self.passes.get(&(a, seg.id)), self.passes.get(&(b, seg.id))) else {
            return Vec::new();
        };
        if pa.forward == pb.forward {
            return Vec::new();
        }
        let pass = |t: TrainId| if t == a { pa } else { pb };
        opposite_direction_rows(self.instance, self.graphs, a, b, seg)
            .into_iter()
            .filter(|r| match r.tag {
                Tag::Opposite { first, second, entry, exit, first_goes_first, .. } => {
                    let (lead, lag) = if first_goes_first { (first, second) } else { (second, first) };
                    pass(lag).entry == entry && pass(lead).exit == exit
                }
                _ => false,
            })
            .collect()
    }

    /// Checked rows in scan order: edges by id, pairs by follower arrival,
    /// then track segments.
    fn checked_rows(&self, adjacent: bool) -> Result<Vec<LinearConstraint>, ModelError> {
        let mut rows = Vec::new();
        for e in 0..self.instance.network.edges.len() {
            let e = EdgeId(e);
            if adjacent {
                for (l, f) in adjacent_pairs(self.instance, self.schedule, e) {
                    rows.extend(self.pair_on_edge(l, f, e, false)?);
                }
            } else {
                let pairs = adjacent_pairs(self.instance, self.schedule, e);
                let mut users: Vec<TrainId> = pairs.iter().map(|p| p.0).collect();
                users.extend(pairs.last().map(|p| p.1));
                for (j, &f) in users.iter().enumerate() {
                    for &l in &users[..j] {
                        rows.extend(self.pair_on_edge(l, f, e, true)?);
                    }
                }
            }
        }
        for seg in self.segments {
            let mut users: Vec<(TrainId, Pass)> =
                self.passes.iter().filter(|((_, s), _)| *s == seg.id).map(|(&(t, _), &p)| (t, p)).collect();
            users.sort_by(|x, y| {
                by_time_then_name(
                    (x.1.entry_time, self.instance.train(x.0).id.as_str()),
                    (y.1.entry_time, self.instance.train(y.0).id.as_str()),
                )
            });
            for j in 0..users.len() {
                let earlier = if adjacent { j.saturating_sub(1)..j } else { 0..j };
                for i in earlier {
                    rows.extend(self.opposite(users[i].0, users[j].0, seg));
                }
            }
        }
        Ok(rows)
    }
}

/// Applies a strategy's selection rule to checked rows. Rows already in the
/// model are never selected.
fn select<B: SolverBackend>(
    strategy: Strategy,
    rows: Vec<LinearConstraint>,
    model: &MilpModel<B>,
    assignment: &Assignment,
    tolerance: f64,
) -> Vec<LinearConstraint> {
    let mut seen = HashSet::new();
    let fresh: Vec<LinearConstraint> = rows
        .into_iter()
        .filter(|r| !model.contains(&r.tag) && seen.insert(r.tag))
        .collect();
    let violated = |r: &LinearConstraint| r.violation(|k| assignment.value(k)) > tolerance;
    match strategy {
        Strategy::FullModel => Vec::new(),
        Strategy::AllChecked | Strategy::AdjacentAll => {
            if fresh.iter().any(violated) {
                fresh
            } else {
                Vec::new()
            }
        }
        Strategy::AdjacentViolated => fresh.into_iter().filter(|r| violated(r)).collect(),
        Strategy::FirstViolation => fresh.into_iter().find(|r| violated(r)).into_iter().collect(),
    }
}

/// Rows to add for a candidate, and how many rows were checked. Strategies
/// restricted to adjacent trains fall back to all pairs when the adjacent
/// check finds nothing, so a returned empty list always means the
/// candidate is conflict free.
#[allow(clippy::too_many_arguments)]
fn separate<B: SolverBackend>(
    instance: &Instance,
    graphs: &[ExtendedGraph],
    segments: &[TrackSegment],
    model: &MilpModel<B>,
    values: &[f64],
    decoded: &Decoded,
    config: &SolveConfig,
) -> Result<(usize, Vec<LinearConstraint>), ModelError> {
    let sep = Separator::new(instance, graphs, segments, config.headway_options(), decoded);
    let assignment = Assignment {
        instance,
        columns: &model.vars,
        values,
        schedule: &decoded.schedule,
        passes: &sep.passes,
    };
    let mut checked = 0;
    let scopes: &[bool] = if config.strategy.adjacent_only() { &[true, false] } else { &[false] };
    for &adjacent in scopes {
        let rows = sep.checked_rows(adjacent)?;
        checked += rows.len();
        let cuts = select(config.strategy, rows, model, &assignment, config.violation_tolerance);
        if !cuts.is_empty() {
            return Ok((checked, cuts));
        }
    }
    Ok((checked, Vec::new()))
}

/// Re-solves the model as an LP with binaries fixed at their rounded
/// values, then moves every time as early as the optimal objective allows.
/// Removes integrality slack and arbitrary slack times from the candidate.
fn polish<B: SolverBackend, P: SolverBackend>(
    instance: &Instance,
    model: &MilpModel<B>,
    values: &[f64],
    make: &dyn Fn() -> P,
    deadline: &Deadline,
) -> Option<Vec<f64>> {
    let mut lp = make();
    let mut times = Vec::new();
    for (c, (k, &v)) in model.vars.keys().iter().zip(values).enumerate() {
        let (lo, hi) = match k.kind() {
            VarKind::Binary => (v.round(), v.round()),
            VarKind::Continuous => {
                times.push((c, 1.0));
                key_bounds(instance, k)
            }
        };
        lp.add_var(&k.to_string(), VarKind::Continuous, lo, hi);
    }
    let col = |k: &VarKey| model.vars.get(k).expect("row variable has a column");
    for r in model.rows() {
        let terms: Vec<(usize, f64)> = r.terms.iter().map(|(k, a)| (col(k), *a)).collect();
        lp.add_row(&r.tag.to_string(), &terms, r.sense, r.rhs);
    }
    let objective: Vec<(usize, f64)> = model.objective().0.iter().map(|(k, a)| (col(k), *a)).collect();
    lp.set_objective(&objective);
    let first = lp.solve(0.0, deadline.remaining().max(1.0)).ok()?;
    let best = first.objective.filter(|_| first.status == BackendStatus::Optimal)?;
    let fallback = first.values.filter(|v| v.len() == values.len())?;
    lp.add_row("objective", &objective, RowSense::Le, best + 1e-9 * best.abs().max(1.0));
    lp.set_objective(&times);
    match lp.solve(0.0, deadline.remaining().max(1.0)) {
        Ok(out) if out.status == BackendStatus::Optimal => out.values.filter(|v| v.len() == values.len()).or(Some(fallback)),
        _ => Some(fallback),
    }
}

fn infeasible(stats: SolveStats) -> SolveResult {
    SolveResult {
        status: SolveStatus::Infeasible,
        objective: None,
        schedule: None,
        stats,
    }
}

/// Solves `instance` with HiGHS.
pub fn solve_iteratively(instance: &Instance, config: &SolveConfig) -> Result<SolveResult, SolveError> {
    solve_iteratively_with(instance, config, HighsBackend::new)
}

/// Solves `instance` with backends from `make`: one for the model, plus a
/// scratch one per iteration for polishing.
pub fn solve_iteratively_with<B: SolverBackend>(
    instance: &Instance,
    config: &SolveConfig,
    make: impl Fn() -> B,
) -> Result<SolveResult, SolveError> {
    solve_with_model(instance, config, make).map(|(r, _)| r)
}

/// Like [`solve_iteratively_with`], also handing back the final model
/// (absent when the instance fails before a model exists).
pub fn solve_with_model<B: SolverBackend>(
    instance: &Instance,
    config: &SolveConfig,
    make: impl Fn() -> B,
) -> Result<(SolveResult, Option<MilpModel<B>>), SolveError> {
    config.validate()?;
    let deadline = Deadline::new(config.time_limit);
    let mut stats = SolveStats::default();
    let finish = |mut stats: SolveStats| {
        stats.wall_time = deadline.elapsed();
        stats
    };

    let graphs = match build_all(instance, &config.graph_options()) {
        Ok(g) => g,
        Err(GraphError::EmptyGraph { .. }) => return Ok((infeasible(finish(stats)), None)),
        Err(e) => return Err(e.into()),
    };
    let mut backend = make();
    backend.set_seed(config.seed);
    let options = ModelOptions {
        max_release_paths: config.max_release_paths,
    };
    let mut model = match build_base_model(instance, &graphs, &options, backend) {
        Ok(m) => m,
        Err(ModelError::UnsatisfiableStop { .. }) => return Ok((infeasible(finish(stats)), None)),
        Err(e) => return Err(e.into()),
    };
    let segments = track_segments(&instance.network);

    if config.strategy == Strategy::FullModel {
        for row in enumerate_all_headway_constraints(instance, &graphs, &segments, &config.headway_options())? {
            stats.constraints_added += usize::from(model.add(instance, row));
        }
    }

    loop {
        if deadline.expired() {
            return Ok((SolveResult {
                status: SolveStatus::TimeLimit,
                objective: None,
                schedule: None,
                stats: finish(stats),
            }, Some(model)));
        }
        let outcome = model.backend.solve(config.gap_abs, deadline.remaining())?;
        stats.iterations += 1;
        let raw = match (outcome.status, outcome.values) {
            (BackendStatus::Infeasible, _) => return Ok((infeasible(finish(stats)), Some(model))),
            (BackendStatus::TimeLimit, None) => {
                return Ok((SolveResult {
                    status: SolveStatus::TimeLimit,
                    objective: None,
                    schedule: None,
                    stats: finish(stats),
                }, Some(model)))
            }
            (_, None) => return Err(BackendError::Engine("optimal status without values".into()).into()),
            (_, Some(v)) => v,
        };
        let rounded = rounded_values(&model, &raw);
        let values = polish(instance, &model, &rounded, &make, &deadline).unwrap_or(rounded);
        let objective = model.objective_value(&values);
        let value = |k: &VarKey| model.vars.get(k).map_or(0.0, |c| values[c]);
        let mut decoded = decode(instance, &graphs, &value)?;
        decoded.schedule.objective = objective;

        let (checked, cuts) = if config.strategy == Strategy::FullModel {
            (0, Vec::new())
        } else {
            separate(instance, &graphs, &segments, &model, &values, &decoded, config)?
        };
        let mut added = 0;
        for row in cuts {
            added += usize::from(model.add(instance, row));
        }
        let it = IterationStats {
            iteration: stats.iterations,
            objective,
            checked,
            added,
            time_s: deadline.elapsed(),
        };
        log::info!("{it}");
        stats.constraints_checked += checked;
        stats.constraints_added += added;
        stats.per_iteration.push(it);

        if added == 0 {
            let status = match outcome.status {
                BackendStatus::Optimal => SolveStatus::Optimal,
                _ => SolveStatus::TimeLimit,
            };
            return Ok((SolveResult {
                status,
                objective: Some(objective),
                schedule: Some(decoded.schedule),
                stats: finish(stats),
            }, Some(model)));
        }
        if outcome.status == BackendStatus::TimeLimit {
            return Ok((SolveResult {
                status: SolveStatus::TimeLimit,
                objective: None,
                schedule: None,
                stats: finish(stats),
            }, Some(model)));
        }
        if model.backend.capabilities().supports_warm_start {
            model.backend.set_warm_start(&values);
        }
    }
}
