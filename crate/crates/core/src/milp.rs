//! The base MILP: routing flows, travel times, track release, timetable
//! constraints and the delay objective. Headway rows live in
//! [`crate::headway`] and are added on top, either eagerly or lazily.
//!
//! Constraints are built symbolically ([`LinearConstraint`] over [`VarKey`])
//! and only resolved to backend columns when added to a [`MilpModel`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io;

use thiserror::Error;

use crate::backend::{BackendError, RowSense, SolverBackend, VarKind};
use crate::instance::{EdgeId, Instance, TrainId, VertexId};
use crate::kinematics::{self, KinematicParams};
use crate::velocity_graph::ExtendedGraph;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("train `{train}`: more than {limit} release paths start at vertex `{vertex}`")]
    EnumerationLimitExceeded { train: String, vertex: String, limit: usize },
    #[error("train `{train}` cannot stop at station `{station}`")]
    UnsatisfiableStop { train: String, station: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKey {
    /// Train uses base edge.
    Route { train: TrainId, edge: EdgeId },
    /// Train uses extended edge (index into its graph's `edges`).
    Ext { train: TrainId, ext: usize },
    FrontArrival { train: TrainId, vertex: VertexId },
    FrontDeparture { train: TrainId, vertex: VertexId },
    RearDeparture { train: TrainId, vertex: VertexId },
    /// Stop `stop` of the train's demand is served with the front at `vertex`.
    Stop { train: TrainId, stop: usize, vertex: VertexId },
    /// Which placement chain holds the train for a stop (only when several exist).
    StopChain { train: TrainId, stop: usize, vertex: VertexId, chain: usize },
    /// `follower` runs behind `leader` on `edge`.
    Order { follower: TrainId, leader: TrainId, edge: EdgeId },
    /// `first` occupies the track segment before `second` (`first < second`).
    SegmentOrder { first: TrainId, second: TrainId, segment: usize },
}

impl VarKey {
    pub fn kind(&self) -> VarKind {
        match self {
            VarKey::FrontArrival { .. } | VarKey::FrontDeparture { .. } | VarKey::RearDeparture { .. } => {
                VarKind::Continuous
            }
            _ => VarKind::Binary,
        }
    }

    pub fn train(&self) -> TrainId {
        match *self {
            VarKey::Route { train, .. }
            | VarKey::Ext { train, .. }
            | VarKey::FrontArrival { train, .. }
            | VarKey::FrontDeparture { train, .. }
            | VarKey::RearDeparture { train, .. }
            | VarKey::Stop { train, .. }
            | VarKey::StopChain { train, .. } => train,
            VarKey::Order { follower, .. } => follower,
            VarKey::SegmentOrder { first, .. } => first,
        }
    }
}

impl fmt::Display for VarKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarKey::Route { train, edge } => write!(f, "x[{train},{edge}]"),
            VarKey::Ext { train, ext } => write!(f, "y[{train},{ext}]"),
            VarKey::FrontArrival { train, vertex } => write!(f, "a[{train},{vertex}]"),
            VarKey::FrontDeparture { train, vertex } => write!(f, "d[{train},{vertex}]"),
            VarKey::RearDeparture { train, vertex } => write!(f, "r[{train},{vertex}]"),
            VarKey::Stop { train, stop, vertex } => write!(f, "stop[{train},{stop},{vertex}]"),
            VarKey::StopChain { train, stop, vertex, chain } => write!(f, "chain[{train},{stop},{vertex},{chain}]"),
            VarKey::Order { follower, leader, edge } => write!(f, "o[{follower}>{leader},{edge}]"),
            VarKey::SegmentOrder { first, second, segment } => write!(f, "q[{first}<{second},s{segment}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bound {
    /// Via the departure at the start of the covering edge plus fastest time.
    FromTail,
    /// Via the arrival at the end of the covering edge minus slowest time.
    FromHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WindowKind {
    ArrivalLo,
    ArrivalHi,
    DepartureLo,
    DepartureHi,
    Dwell,
}

/// Identity of a constraint row. Two rows with equal tags are the same row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Source { train: TrainId },
    Sink { train: TrainId },
    Flow { train: TrainId, vertex: VertexId, speed: usize },
    InDegree { train: TrainId, vertex: VertexId },
    OutDegree { train: TrainId, vertex: VertexId },
    Link { train: TrainId, edge: EdgeId },
    MinTime { train: TrainId, edge: EdgeId },
    MaxTime { train: TrainId, edge: EdgeId },
    Dwell { train: TrainId, vertex: VertexId },
    Wait { train: TrainId, vertex: VertexId },
    ExitRear { train: TrainId },
    Release { train: TrainId, vertex: VertexId, path: usize, bound: Bound },
    StopOnce { train: TrainId, stop: usize },
    StopPlace { train: TrainId, stop: usize, vertex: VertexId, item: usize },
    StopWindow { train: TrainId, stop: usize, vertex: VertexId, kind: WindowKind },
    StopOrder { train: TrainId, stop: usize, vertex: VertexId, next: VertexId },
    Headway { follower: TrainId, leader: TrainId, edge: EdgeId, speed: usize, path: usize, bound: Bound },
    /// The follower reaches the edge's head only after the leader's rear left it.
    Clearance { follower: TrainId, leader: TrainId, edge: EdgeId },
    /// Both orders together cover the case where both trains use the edge.
    OrderCover { a: TrainId, b: TrainId, edge: EdgeId },
    OrderExclusive { a: TrainId, b: TrainId, edge: EdgeId },
    OrderUses { follower: TrainId, leader: TrainId, edge: EdgeId, of_leader: bool },
    OrderChain { follower: TrainId, leader: TrainId, from: EdgeId, to: EdgeId },
    Opposite { first: TrainId, second: TrainId, segment: usize, entry: EdgeId, exit: EdgeId, first_goes_first: bool },
}

impl Tag {
    /// Constraint family, used for counting and in the model dump.
    pub fn family(&self) -> &'static str {
        match self {
            Tag::Source { .. } | Tag::Sink { .. } => "boundary",
            Tag::Flow { .. } => "flow",
            Tag::InDegree { .. } | Tag::OutDegree { .. } => "degree",
            Tag::Link { .. } => "link",
            Tag::MinTime { .. } => "min-time",
            Tag::MaxTime { .. } => "max-time",
            Tag::Dwell { .. } => "dwell",
            Tag::Wait { .. } => "wait",
            Tag::ExitRear { .. } => "exit-rear",
            Tag::Release { .. } => "track-release",
            Tag::StopOnce { .. } | Tag::StopPlace { .. } | Tag::StopWindow { .. } | Tag::StopOrder { .. } => {
                "timetable"
            }
            Tag::Headway { .. } | Tag::Clearance { .. } => "headway",
            Tag::OrderCover { .. } | Tag::OrderExclusive { .. } | Tag::OrderUses { .. } | Tag::OrderChain { .. } => {
                "ordering"
            }
            Tag::Opposite { .. } => "opposite",
        }
    }

    /// Rows the lazy engine may add: headway separation and its ordering
    /// side conditions.
    pub fn is_headway(&self) -> bool {
        matches!(self.family(), "headway" | "ordering" | "opposite")
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bound::FromTail => "tail",
            Bound::FromHead => "head",
        })
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let fam = self.family();
        match self {
            Tag::Source { train } | Tag::Sink { train } | Tag::ExitRear { train } => {
                let side = match self {
                    Tag::Source { .. } => "source",
                    Tag::Sink { .. } => "sink",
                    _ => "exit",
                };
                write!(f, "{fam}[{train},{side}]")
            }
            Tag::Flow { train, vertex, speed } => write!(f, "{fam}[{train},{vertex},p{speed}]"),
            Tag::InDegree { train, vertex } => write!(f, "{fam}[{train},{vertex},in]"),
            Tag::OutDegree { train, vertex } => write!(f, "{fam}[{train},{vertex},out]"),
            Tag::Link { train, edge } | Tag::MinTime { train, edge } | Tag::MaxTime { train, edge } => {
                write!(f, "{fam}[{train},{edge}]")
            }
            Tag::Dwell { train, vertex } | Tag::Wait { train, vertex } => write!(f, "{fam}[{train},{vertex}]"),
            Tag::Release { train, vertex, path, bound } => write!(f, "{fam}[{train},{vertex},#{path},{bound}]"),
            Tag::StopOnce { train, stop } => write!(f, "{fam}[{train},stop{stop},once]"),
            Tag::StopPlace { train, stop, vertex, item } => write!(f, "{fam}[{train},stop{stop},{vertex},place{item}]"),
            Tag::StopWindow { train, stop, vertex, kind } => write!(f, "{fam}[{train},stop{stop},{vertex},{kind:?}]"),
            Tag::StopOrder { train, stop, vertex, next } => write!(f, "{fam}[{train},stop{stop},{vertex}->{next}]"),
            Tag::Headway { follower, leader, edge, speed, path, bound } => {
                write!(f, "{fam}[{follower}>{leader},{edge},p{speed},#{path},{bound}]")
            }
            Tag::Clearance { follower, leader, edge } => write!(f, "{fam}[{follower}>{leader},{edge},clear]"),
            Tag::OrderCover { a, b, edge } => write!(f, "{fam}[{a},{b},{edge},cover]"),
            Tag::OrderExclusive { a, b, edge } => write!(f, "{fam}[{a},{b},{edge},exclusive]"),
            Tag::OrderUses { follower, leader, edge, of_leader } => {
                let who = if *of_leader { leader } else { follower };
                write!(f, "{fam}[{follower}>{leader},{edge},uses-{who}]")
            }
            Tag::OrderChain { follower, leader, from, to } => write!(f, "{fam}[{follower}>{leader},{from}->{to}]"),
            Tag::Opposite { first, second, segment, entry, exit, first_goes_first } => {
                let (a, b) = if *first_goes_first { (first, second) } else { (second, first) };
                write!(f, "{fam}[s{segment},{a}-before-{b},{entry},{exit}]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<(VarKey, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
    pub tag: Tag,
}

impl LinearConstraint {
    /// Builds a row, merging repeated variables and dropping zero terms.
    pub fn new(tag: Tag, terms: impl IntoIterator<Item = (VarKey, f64)>, sense: RowSense, rhs: f64) -> Self {
        let mut merged: BTreeMap<VarKey, f64> = BTreeMap::new();
        for (k, a) in terms {
            *merged.entry(k).or_insert(0.0) += a;
        }
        Self {
            terms: merged.into_iter().filter(|(_, a)| *a != 0.0).collect(),
            sense,
            rhs,
            tag,
        }
    }

    pub fn lhs(&self, value: impl Fn(&VarKey) -> f64) -> f64 {
        self.terms.iter().map(|(k, a)| a * value(k)).sum()
    }

    /// Amount by which the row is missed under `value` (0 if satisfied).
    pub fn violation(&self, value: impl Fn(&VarKey) -> f64) -> f64 {
        self.sense.violation(self.lhs(value), self.rhs)
    }
}

impl fmt::Display for LinearConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} |", self.tag)?;
        for (k, a) in &self.terms {
            write!(f, " {a:+} {k}")?;
        }
        write!(f, " | {} | {}", self.sense.symbol(), self.rhs)
    }
}

/// An affine expression over binaries that equals 1 when a condition holds
/// and is ≤ 0 otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Guard {
    pub terms: Vec<(VarKey, f64)>,
    pub constant: f64,
}

impl Guard {
    pub fn var(k: VarKey) -> Self {
        Self {
            terms: vec![(k, 1.0)],
            constant: 0.0,
        }
    }

    pub fn not(k: VarKey) -> Self {
        Self {
            terms: vec![(k, -1.0)],
            constant: 1.0,
        }
    }

    pub fn sum(keys: impl IntoIterator<Item = VarKey>) -> Self {
        Self {
            terms: keys.into_iter().map(|k| (k, 1.0)).collect(),
            constant: 0.0,
        }
    }
}

/// Domain of a variable.
pub fn key_bounds(instance: &Instance, key: &VarKey) -> (f64, f64) {
    let horizon = |t: TrainId| instance.demand(t).exit_window.hi;
    match *key {
        VarKey::FrontArrival { train, vertex } if vertex == instance.demand(train).entry_vertex => {
            let w = instance.demand(train).entry_window;
            (w.lo.max(0.0), w.hi.min(horizon(train)))
        }
        VarKey::RearDeparture { train, vertex } if vertex == instance.demand(train).exit_vertex => {
            let w = instance.demand(train).exit_window;
            (w.lo.max(0.0), w.hi)
        }
        VarKey::FrontArrival { train, .. } | VarKey::FrontDeparture { train, .. } | VarKey::RearDeparture { train, .. } => {
            (0.0, horizon(train))
        }
        _ => (0.0, 1.0),
    }
}

/// The constant the formulation suggests for deactivating implications of a
/// train: its latest exit time.
pub fn big_m(instance: &Instance, train: TrainId) -> f64 {
    instance.demand(train).exit_window.hi
}

/// `body (sense) rhs` enforced only while every guard equals 1. The
/// deactivation constant is the smallest one that makes the row slack over
/// the variables' domains, so switched-off rows never cut anything.
pub fn implication(
    instance: &Instance,
    tag: Tag,
    body: Vec<(VarKey, f64)>,
    sense: RowSense,
    rhs: f64,
    guards: &[Guard],
) -> LinearConstraint {
    let (body, rhs) = match sense {
        RowSense::Ge => (body, rhs),
        RowSense::Le => (body.into_iter().map(|(k, a)| (k, -a)).collect(), -rhs),
        RowSense::Eq => panic!("equality implications are not supported"),
    };
    let min_body: f64 = body
        .iter()
        .map(|(k, a)| {
            let (lo, hi) = key_bounds(instance, k);
            if *a >= 0.0 {
                a * lo
            } else {
                a * hi
            }
        })
        .sum();
    let m = (rhs - min_body).max(0.0);
    let mut terms = body;
    let mut rhs = rhs - m * guards.len() as f64;
    for g in guards {
        terms.extend(g.terms.iter().map(|&(k, a)| (k, -m * a)));
        rhs += m * g.constant;
    }
    LinearConstraint::new(tag, terms, RowSense::Ge, rhs)
}

#[derive(Debug, Clone, Default)]
pub struct VariableIndex {
    cols: HashMap<VarKey, usize>,
    keys: Vec<VarKey>,
}

impl VariableIndex {
    pub fn get(&self, key: &VarKey) -> Option<usize> {
        self.cols.get(key).copied()
    }

    pub fn keys(&self) -> &[VarKey] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// A backend model plus the symbolic bookkeeping needed to extend, decode
/// and inspect it.
pub struct MilpModel<B> {
    pub backend: B,
    pub vars: VariableIndex,
    rows: Vec<LinearConstraint>,
    tags: HashSet<Tag>,
    objective: Vec<(VarKey, f64)>,
    objective_offset: f64,
}

impl<B: SolverBackend> MilpModel<B> {
    pub fn new(backend: B) -> Self {
        Self {
            backend,
            vars: VariableIndex::default(),
            rows: Vec::new(),
            tags: HashSet::new(),
            objective: Vec::new(),
            objective_offset: 0.0,
        }
    }

    /// Column of `key`, creating it on first use.
    pub fn var(&mut self, instance: &Instance, key: VarKey) -> usize {
        if let Some(c) = self.vars.get(&key) {
            return c;
        }
        let (lo, hi) = key_bounds(instance, &key);
        let col = self.backend.add_var(&key.to_string(), key.kind(), lo, hi);
        self.vars.cols.insert(key, col);
        self.vars.keys.push(key);
        col
    }

    /// Adds a row unless one with the same tag exists. Returns whether it was added.
    pub fn add(&mut self, instance: &Instance, row: LinearConstraint) -> bool {
        if self.tags.contains(&row.tag) {
            return false;
        }
        let terms: Vec<(usize, f64)> = row.terms.iter().map(|&(k, a)| (self.var(instance, k), a)).collect();
        self.backend.add_row(&row.tag.to_string(), &terms, row.sense, row.rhs);
        self.tags.insert(row.tag);
        self.rows.push(row);
        true
    }

    pub fn contains(&self, tag: &Tag) -> bool {
        self.tags.contains(tag)
    }

    pub fn rows(&self) -> &[LinearConstraint] {
        &self.rows
    }

    pub fn set_objective(&mut self, instance: &Instance, terms: Vec<(VarKey, f64)>, offset: f64) {
        let cols: Vec<(usize, f64)> = terms.iter().map(|&(k, a)| (self.var(instance, k), a)).collect();
        self.backend.set_objective(&cols);
        self.objective = terms;
        self.objective_offset = offset;
    }

    pub fn objective(&self) -> (&[(VarKey, f64)], f64) {
        (&self.objective, self.objective_offset)
    }

    /// Objective value of a full column assignment.
    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.objective_offset
            + self
                .objective
                .iter()
                .map(|(k, a)| a * self.vars.get(k).map_or(0.0, |c| values[c]))
                .sum::<f64>()
    }

    /// Number of rows per family, for reports and tests.
    pub fn family_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            *out.entry(r.tag.family()).or_insert(0) += 1;
        }
        out
    }

    /// Human-readable dump, one `tag | terms | sense | rhs` line per row.
    pub fn dump(&self, out: &mut dyn io::Write) -> io::Result<()> {
        for r in &self.rows {
            writeln!(out, "{r}")?;
        }
        Ok(())
    }

    pub fn write_lp(&self, out: &mut dyn io::Write) -> io::Result<()> {
        self.backend.write_lp(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOptions {
    /// Cap on covering paths enumerated from one vertex.
    pub max_release_paths: usize,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self { max_release_paths: 64 }
    }
}

/// Where a point a given distance ahead of a vertex lies on a route.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PassageEnd {
    /// On the last edge, `offset` meters after its tail (0 < offset ≤ length).
    Inside { offset: f64 },
    /// `beyond` meters past the train's exit vertex, which ends the path.
    PastExit { beyond: f64 },
}

/// A minimal forward edge sequence covering a distance.
#[derive(Debug, Clone, PartialEq)]
pub struct Passage {
    pub edges: Vec<EdgeId>,
    pub end: PassageEnd,
}

/// Enumerates the minimal forward paths of `graph` from `start` (optionally
/// forced through `first`) that cover `distance`, in edge-id order. Paths
/// reaching the train's exit vertex early end there with
/// [`PassageEnd::PastExit`]. Returns `None` past `cap` paths.
pub fn passages(
    instance: &Instance,
    graph: &ExtendedGraph,
    start: VertexId,
    first: Option<EdgeId>,
    distance: f64,
    cap: usize,
) -> Option<Vec<Passage>> {
    let exit = instance.demand(graph.train).exit_vertex;
    let mut out = Vec::new();
    let mut path = Vec::new();
    let mut visited = vec![start];
    fn base_out(graph: &ExtendedGraph, v: VertexId) -> Vec<EdgeId> {
        let mut es: Vec<EdgeId> = graph.out_of(v).iter().map(|&i| graph.edges[i].base_edge).collect();
        es.sort();
        es.dedup();
        es
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        instance: &Instance,
        graph: &ExtendedGraph,
        exit: VertexId,
        v: VertexId,
        covered: f64,
        distance: f64,
        first: Option<EdgeId>,
        path: &mut Vec<EdgeId>,
        visited: &mut Vec<VertexId>,
        out: &mut Vec<Passage>,
        cap: usize,
    ) -> bool {
        let candidates = match (path.is_empty(), first) {
            (true, Some(f)) => {
                if graph.uses_edge(f) && instance.network.edge(f).from == v {
                    vec![f]
                } else {
                    vec![]
                }
            }
            _ => base_out(graph, v),
        };
        for e in candidates {
            let edge = instance.network.edge(e);
            if visited.contains(&edge.to) {
                continue;
            }
            path.push(e);
            if covered + edge.length >= distance - 1e-9 {
                let offset = (distance - covered).min(edge.length);
                out.push(Passage {
                    edges: path.clone(),
                    end: PassageEnd::Inside { offset },
                });
            } else if edge.to == exit {
                out.push(Passage {
                    edges: path.clone(),
                    end: PassageEnd::PastExit {
                        beyond: distance - covered - edge.length,
                    },
                });
            } else {
                visited.push(edge.to);
                let ok = rec(
                    instance,
                    graph,
                    exit,
                    edge.to,
                    covered + edge.length,
                    distance,
                    first,
                    path,
                    visited,
                    out,
                    cap,
                );
                visited.pop();
                if !ok {
                    return false;
                }
            }
            path.pop();
            if out.len() > cap {
                return false;
            }
        }
        true
    }
    if start == exit {
        return Some(vec![Passage {
            edges: vec![],
            end: PassageEnd::PastExit { beyond: distance },
        }]);
    }
    rec(instance, graph, exit, start, 0.0, distance, first, &mut path, &mut visited, &mut out, cap).then_some(out)
}

/// Kinematic parameters for the free run after the exit vertex.
pub fn exit_params(instance: &Instance, train: TrainId) -> KinematicParams {
    let t = instance.train(train);
    KinematicParams {
        v_max: t.max_speed,
        accel: t.acceleration,
        decel: t.deceleration,
        v_floor: KinematicParams::DEFAULT_V_FLOOR.min(0.5 * t.max_speed),
    }
}

/// Rows bounding from below the time at which `graph`'s train has its front
/// at the far end of `passage`: `lhs ≥ bound`, active while all `guards`
/// and all passage edges are in use.
pub fn passage_rows(
    instance: &Instance,
    graph: &ExtendedGraph,
    passage: &Passage,
    lhs: &[(VarKey, f64)],
    guards: &[Guard],
    tag: impl Fn(Bound) -> Tag,
) -> Vec<LinearConstraint> {
    let train = graph.train;
    let net = &instance.network;
    let cap = big_m(instance, train);
    let mut all_guards = guards.to_vec();
    all_guards.extend(passage.edges.iter().map(|&e| Guard::var(VarKey::Route { train, edge: e })));
    let exit = instance.demand(train).exit_vertex;
    let mut rows = Vec::new();
    match passage.end {
        PassageEnd::Inside { offset } => {
            let last = *passage.edges.last().expect("inside end needs an edge");
            let edge = net.edge(last);
            let params = graph.params(last);
            let mut tail_body = lhs.to_vec();
            tail_body.push((VarKey::FrontDeparture { train, vertex: edge.from }, -1.0));
            let mut head_body = lhs.to_vec();
            head_body.push((VarKey::FrontArrival { train, vertex: edge.to }, -1.0));
            for &i in graph.on_edge(last) {
                let x = &graph.edges[i];
                let y = VarKey::Ext { train, ext: i };
                let fast = kinematics::min_time_over_interval(edge.length, x.p1, x.p2, 0.0, offset, params)
                    .expect("extended edge is feasible");
                let slow =
                    kinematics::max_time_over_interval(edge.length, x.p1, x.p2, offset, edge.length, edge.stop_allowed, params)
                        .expect("extended edge is feasible");
                tail_body.push((y, -fast));
                head_body.push((y, slow.min(cap)));
            }
            rows.push(implication(instance, tag(Bound::FromTail), tail_body, RowSense::Ge, 0.0, &all_guards));
            rows.push(implication(instance, tag(Bound::FromHead), head_body, RowSense::Ge, 0.0, &all_guards));
        }
        PassageEnd::PastExit { beyond } if beyond <= instance.train(train).length + 1e-9 => {
            let params = exit_params(instance, train);
            let mut body = lhs.to_vec();
            body.push((VarKey::FrontDeparture { train, vertex: exit }, -1.0));
            for &i in graph.into(exit) {
                let x = &graph.edges[i];
                let t = kinematics::min_time_free_end(x.p2, beyond, &params).expect("valid exit run");
                body.push((VarKey::Ext { train, ext: i }, -t));
            }
            rows.push(implication(instance, tag(Bound::FromTail), body, RowSense::Ge, 0.0, &all_guards));
        }
        PassageEnd::PastExit { .. } => {
            // the point is only passed after the whole train has left
            let mut body = lhs.to_vec();
            body.push((VarKey::RearDeparture { train, vertex: exit }, -1.0));
            rows.push(implication(instance, tag(Bound::FromTail), body, RowSense::Ge, 0.0, &all_guards));
        }
    }
    rows
}

/// Builds the base model over `graphs` (one per train, in train order).
pub fn build_base_model<B: SolverBackend>(
    instance: &Instance,
    graphs: &[ExtendedGraph],
    options: &ModelOptions,
    backend: B,
) -> Result<MilpModel<B>, ModelError> {
    let mut model = MilpModel::new(backend);
    for g in graphs {
        add_movement(&mut model, instance, g);
    }
    add_track_release(&mut model, instance, graphs, options)?;
    add_timetable(&mut model, instance, graphs)?;
    set_objective(&mut model, instance);
    Ok(model)
}

fn add_movement<B: SolverBackend>(model: &mut MilpModel<B>, instance: &Instance, g: &ExtendedGraph) {
    let train = g.train;
    let demand = instance.demand(train);
    let (v_in, v_out) = (demand.entry_vertex, demand.exit_vertex);
    let y = |i: usize| VarKey::Ext { train, ext: i };

    // columns first, in a stable order
    for e in g.base_edges() {
        model.var(instance, VarKey::Route { train, edge: e });
    }
    for i in 0..g.edges.len() {
        model.var(instance, y(i));
    }
    for v in g.vertices() {
        model.var(instance, VarKey::FrontArrival { train, vertex: v });
        model.var(instance, VarKey::FrontDeparture { train, vertex: v });
        model.var(instance, VarKey::RearDeparture { train, vertex: v });
    }

    let one = |idx: &[usize]| idx.iter().map(|&i| (y(i), 1.0)).collect::<Vec<_>>();
    model.add(instance, LinearConstraint::new(Tag::Source { train }, one(g.out_of(v_in)), RowSense::Eq, 1.0));
    model.add(instance, LinearConstraint::new(Tag::Sink { train }, one(g.into(v_out)), RowSense::Eq, 1.0));

    for v in g.vertices() {
        if v != v_in && v != v_out {
            for s in 0..g.speed_set(v).speeds.len() {
                let ins: Vec<usize> = g.into(v).iter().copied().filter(|&i| g.edges[i].to_speed == s).collect();
                let outs: Vec<usize> = g.out_of(v).iter().copied().filter(|&i| g.edges[i].from_speed == s).collect();
                if ins.is_empty() && outs.is_empty() {
                    continue;
                }
                let terms = ins.iter().map(|&i| (y(i), 1.0)).chain(outs.iter().map(|&i| (y(i), -1.0)));
                model.add(instance, LinearConstraint::new(Tag::Flow { train, vertex: v, speed: s }, terms, RowSense::Eq, 0.0));
            }
        }
        if g.into(v).len() > 1 {
            model.add(instance, LinearConstraint::new(Tag::InDegree { train, vertex: v }, one(g.into(v)), RowSense::Le, 1.0));
        }
        if g.out_of(v).len() > 1 {
            model.add(instance, LinearConstraint::new(Tag::OutDegree { train, vertex: v }, one(g.out_of(v)), RowSense::Le, 1.0));
        }
    }

    let horizon = big_m(instance, train);
    for e in g.base_edges() {
        let x = VarKey::Route { train, edge: e };
        let link = std::iter::once((x, 1.0)).chain(g.on_edge(e).iter().map(|&i| (y(i), -1.0)));
        model.add(instance, LinearConstraint::new(Tag::Link { train, edge: e }, link, RowSense::Eq, 0.0));

        let edge = instance.network.edge(e);
        let a = VarKey::FrontArrival { train, vertex: edge.to };
        let d = VarKey::FrontDeparture { train, vertex: edge.from };
        let mut min_body = vec![(a, 1.0), (d, -1.0)];
        min_body.extend(g.on_edge(e).iter().map(|&i| (y(i), -g.edges[i].tau_min)));
        let row = implication(instance, Tag::MinTime { train, edge: e }, min_body, RowSense::Ge, 0.0, &[Guard::var(x)]);
        model.add(instance, row);

        // an upper bound above the horizon can never bind
        if g.on_edge(e).iter().any(|&i| g.edges[i].tau_max <= horizon) {
            let mut max_body = vec![(a, 1.0), (d, -1.0)];
            max_body.extend(g.on_edge(e).iter().map(|&i| (y(i), -g.edges[i].tau_max.min(horizon))));
            let row = implication(instance, Tag::MaxTime { train, edge: e }, max_body, RowSense::Le, 0.0, &[Guard::var(x)]);
            model.add(instance, row);
        }
    }

    for v in g.vertices() {
        let a = VarKey::FrontArrival { train, vertex: v };
        let d = VarKey::FrontDeparture { train, vertex: v };
        model.add(instance, LinearConstraint::new(Tag::Dwell { train, vertex: v }, [(d, 1.0), (a, -1.0)], RowSense::Ge, 0.0));
        let stopped: Vec<usize> = if v == v_in {
            Vec::new()
        } else {
            let zero = g.speed_set(v).index_of(0.0);
            g.into(v).iter().copied().filter(|&i| Some(g.edges[i].to_speed) == zero).collect()
        };
        if v == v_in && demand.entry_speed == 0.0 {
            continue;
        }
        let terms = [(d, 1.0), (a, -1.0)]
            .into_iter()
            .chain(stopped.iter().map(|&i| (y(i), -horizon)));
        model.add(instance, LinearConstraint::new(Tag::Wait { train, vertex: v }, terms, RowSense::Le, 0.0));
    }

    // the rear leaves the exit vertex once the front has run a train length further
    let params = exit_params(instance, train);
    let mut terms = vec![
        (VarKey::RearDeparture { train, vertex: v_out }, 1.0),
        (VarKey::FrontDeparture { train, vertex: v_out }, -1.0),
    ];
    for &i in g.into(v_out) {
        let t = kinematics::min_time_free_end(g.edges[i].p2, instance.train(train).length, &params).expect("valid exit run");
        terms.push((y(i), -t));
    }
    model.add(instance, LinearConstraint::new(Tag::ExitRear { train }, terms, RowSense::Ge, 0.0));
}

/// Rear-departure bounds: the rear leaves `u` once the front is a train
/// length further along the route.
pub fn add_track_release<B: SolverBackend>(
    model: &mut MilpModel<B>,
    instance: &Instance,
    graphs: &[ExtendedGraph],
    options: &ModelOptions,
) -> Result<(), ModelError> {
    for g in graphs {
        let train = g.train;
        let exit = instance.demand(train).exit_vertex;
        let length = instance.train(train).length;
        for u in g.vertices() {
            if u == exit {
                continue;
            }
            let paths = passages(instance, g, u, None, length, options.max_release_paths).ok_or_else(|| {
                ModelError::EnumerationLimitExceeded {
                    train: instance.train(train).id.clone(),
                    vertex: instance.network.vertex_name(u).to_string(),
                    limit: options.max_release_paths,
                }
            })?;
            let lhs = [(VarKey::RearDeparture { train, vertex: u }, 1.0)];
            for (k, p) in paths.iter().enumerate() {
                for row in passage_rows(instance, g, p, &lhs, &[], |bound| Tag::Release {
                    train,
                    vertex: u,
                    path: k,
                    bound,
                }) {
                    model.add(instance, row);
                }
            }
        }
    }
    Ok(())
}

/// Stop choice, placement, windows, dwell and stop order.
pub fn add_timetable<B: SolverBackend>(
    model: &mut MilpModel<B>,
    instance: &Instance,
    graphs: &[ExtendedGraph],
) -> Result<(), ModelError> {
    for g in graphs {
        let train = g.train;
        let demand = instance.demand(train);
        let tr = instance.train(train);
        let mut stop_vertices: Vec<Vec<VertexId>> = Vec::new();
        for (i, stop) in demand.stops.iter().enumerate() {
            let station = &instance.stations[stop.station];
            let placements = g.placements(station, tr, &instance.network);
            if placements.is_empty() {
                return Err(ModelError::UnsatisfiableStop {
                    train: tr.id.clone(),
                    station: station.name.clone(),
                });
            }
            let mut by_vertex: BTreeMap<VertexId, Vec<Vec<EdgeId>>> = BTreeMap::new();
            for p in placements {
                by_vertex.entry(p.vertex).or_default().push(p.chain);
            }
            for (&v, chains) in &by_vertex {
                let s = VarKey::Stop { train, stop: i, vertex: v };
                model.var(instance, s);
                let zero = g.speed_set(v).index_of(0.0);
                let stops_via = |last: EdgeId| -> Vec<(VarKey, f64)> {
                    g.on_edge(last)
                        .iter()
                        .copied()
                        .filter(|&k| Some(g.edges[k].to_speed) == zero)
                        .map(|k| (VarKey::Ext { train, ext: k }, -1.0))
                        .collect()
                };
                let mut item = 0;
                let mut place = |model: &mut MilpModel<B>, terms: Vec<(VarKey, f64)>, sense, rhs| {
                    let tag = Tag::StopPlace { train, stop: i, vertex: v, item };
                    item += 1;
                    model.add(instance, LinearConstraint::new(tag, terms, sense, rhs));
                };
                if chains.len() == 1 {
                    for &c in &chains[0] {
                        place(model, vec![(s, 1.0), (VarKey::Route { train, edge: c }, -1.0)], RowSense::Le, 0.0);
                    }
                    let mut t = vec![(s, 1.0)];
                    t.extend(stops_via(*chains[0].last().unwrap()));
                    place(model, t, RowSense::Le, 0.0);
                } else {
                    let zs: Vec<VarKey> = (0..chains.len())
                        .map(|j| VarKey::StopChain { train, stop: i, vertex: v, chain: j })
                        .collect();
                    let mut t = vec![(s, 1.0)];
                    t.extend(zs.iter().map(|&z| (z, -1.0)));
                    place(model, t, RowSense::Eq, 0.0);
                    for (z, chain) in zs.iter().zip(chains) {
                        for &c in chain {
                            place(model, vec![(*z, 1.0), (VarKey::Route { train, edge: c }, -1.0)], RowSense::Le, 0.0);
                        }
                        let mut t = vec![(*z, 1.0)];
                        t.extend(stops_via(*chain.last().unwrap()));
                        place(model, t, RowSense::Le, 0.0);
                    }
                }
                let a = VarKey::FrontArrival { train, vertex: v };
                let d = VarKey::FrontDeparture { train, vertex: v };
                let guard = [Guard::var(s)];
                let windows = [
                    (WindowKind::ArrivalLo, vec![(a, 1.0)], RowSense::Ge, stop.arrival_window.lo),
                    (WindowKind::ArrivalHi, vec![(a, 1.0)], RowSense::Le, stop.arrival_window.hi),
                    (WindowKind::DepartureLo, vec![(d, 1.0)], RowSense::Ge, stop.departure_window.lo),
                    (WindowKind::DepartureHi, vec![(d, 1.0)], RowSense::Le, stop.departure_window.hi),
                    (WindowKind::Dwell, vec![(d, 1.0), (a, -1.0)], RowSense::Ge, stop.min_dwell),
                ];
                for (kind, body, sense, rhs) in windows {
                    let tag = Tag::StopWindow { train, stop: i, vertex: v, kind };
                    model.add(instance, implication(instance, tag, body, sense, rhs, &guard));
                }
            }
            let once = by_vertex.keys().map(|&v| (VarKey::Stop { train, stop: i, vertex: v }, 1.0));
            model.add(instance, LinearConstraint::new(Tag::StopOnce { train, stop: i }, once, RowSense::Eq, 1.0));
            stop_vertices.push(by_vertex.keys().copied().collect());
        }
        for i in 1..stop_vertices.len() {
            for &v in &stop_vertices[i - 1] {
                for &w in &stop_vertices[i] {
                    let body = vec![
                        (VarKey::FrontArrival { train, vertex: w }, 1.0),
                        (VarKey::FrontDeparture { train, vertex: v }, -1.0),
                    ];
                    let guards = [
                        Guard::var(VarKey::Stop { train, stop: i - 1, vertex: v }),
                        Guard::var(VarKey::Stop { train, stop: i, vertex: w }),
                    ];
                    let tag = Tag::StopOrder { train, stop: i - 1, vertex: v, next: w };
                    model.add(instance, implication(instance, tag, body, RowSense::Ge, 0.0, &guards));
                }
            }
        }
    }
    Ok(())
}

/// Objective weights per train: `w / Σw`, or uniform when all weights are 0.
pub fn objective_weights(instance: &Instance) -> Vec<f64> {
    let n = instance.trains.len();
    let total: f64 = instance.train_ids().map(|t| instance.demand(t).weight).sum();
    instance
        .train_ids()
        .map(|t| {
            if total > 0.0 {
                instance.demand(t).weight / total
            } else {
                1.0 / n as f64
            }
        })
        .collect()
}

/// Weighted mean exit delay: rear departure at the exit minus earliest exit.
pub fn set_objective<B: SolverBackend>(model: &mut MilpModel<B>, instance: &Instance) {
    let weights = objective_weights(instance);
    let mut terms = Vec::new();
    let mut offset = 0.0;
    for (t, w) in instance.train_ids().zip(weights) {
        let d = instance.demand(t);
        terms.push((VarKey::RearDeparture { train: t, vertex: d.exit_vertex }, w));
        offset -= w * d.exit_window.lo;
    }
    model.set_objective(instance, terms, offset);
}
