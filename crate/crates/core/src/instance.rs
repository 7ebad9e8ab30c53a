//! Problem input: network, trains, stations and timetable demands.
//!
//! Instances are exchanged as JSON documents. The document layer (`*Doc`
//! structs) mirrors the file schema one to one; [`Instance`] is the validated,
//! index-based form every other module works with.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a vertex in [`Network::vertices`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexId(pub usize);

/// Index of an edge in [`Network::edges`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId(pub usize);

/// Index of a train in [`Instance::trains`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrainId(pub usize);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for TrainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Train {
    pub id: String,
    /// Meters.
    pub length: f64,
    /// m/s.
    pub max_speed: f64,
    /// m/s².
    pub acceleration: f64,
    /// m/s², constant service braking rate.
    pub deceleration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub from: VertexId,
    pub to: VertexId,
    pub length: f64,
    pub speed_limit: f64,
    pub stop_allowed: bool,
    /// The opposite-direction twin of a bidirectional track.
    pub reverse_of: Option<EdgeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub vertices: Vec<String>,
    pub edges: Vec<Edge>,
    out_edges: Vec<Vec<EdgeId>>,
    in_edges: Vec<Vec<EdgeId>>,
}

impl Network {
    fn new(vertices: Vec<String>, edges: Vec<Edge>) -> Self {
        let mut out_edges = vec![Vec::new(); vertices.len()];
        let mut in_edges = vec![Vec::new(); vertices.len()];
        for (i, e) in edges.iter().enumerate() {
            out_edges[e.from.0].push(EdgeId(i));
            in_edges[e.to.0].push(EdgeId(i));
        }
        Self {
            vertices,
            edges,
            out_edges,
            in_edges,
        }
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.0]
    }

    pub fn out_edges(&self, v: VertexId) -> &[EdgeId] {
        &self.out_edges[v.0]
    }

    pub fn in_edges(&self, v: VertexId) -> &[EdgeId] {
        &self.in_edges[v.0]
    }

    pub fn vertex_name(&self, v: VertexId) -> &str {
        &self.vertices[v.0]
    }

    pub fn vertex_by_name(&self, name: &str) -> Option<VertexId> {
        self.vertices.iter().position(|v| v == name).map(VertexId)
    }

    pub fn edge_by_name(&self, name: &str) -> Option<EdgeId> {
        self.edges.iter().position(|e| e.id == name).map(EdgeId)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Checks that `route` is a connected sequence of edges.
    pub fn check_route(&self, route: &[EdgeId]) -> Result<(), InstanceError> {
        for (pos, pair) in route.windows(2).enumerate() {
            if self.edge(pair[0]).to != self.edge(pair[1]).from {
                return Err(InstanceError::InvalidRoute {
                    position: pos + 1,
                    edge: self.edge(pair[1]).id.clone(),
                });
            }
        }
        Ok(())
    }

    /// Vertices reachable from `start` along directed edges (including `start`).
    pub fn reachable_from(&self, start: VertexId) -> Vec<bool> {
        self.search(start, |v| self.out_edges(v), |e| e.to)
    }

    /// Vertices from which `target` can be reached (including `target`).
    pub fn reaching(&self, target: VertexId) -> Vec<bool> {
        self.search(target, |v| self.in_edges(v), |e| e.from)
    }

    fn search<'a>(
        &'a self,
        start: VertexId,
        next: impl Fn(VertexId) -> &'a [EdgeId],
        other: impl Fn(&Edge) -> VertexId,
    ) -> Vec<bool> {
        let mut seen = vec![false; self.num_vertices()];
        let mut queue = VecDeque::from([start]);
        seen[start.0] = true;
        while let Some(v) = queue.pop_front() {
            for &e in next(v) {
                let w = other(self.edge(e));
                if !seen[w.0] {
                    seen[w.0] = true;
                    queue.push_back(w);
                }
            }
        }
        seen
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub name: String,
    pub edges: Vec<EdgeId>,
}

/// Inclusive time interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, t: f64, tol: f64) -> bool {
        t >= self.lo - tol && t <= self.hi + tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopRequest {
    /// Index into [`Instance::stations`].
    pub station: usize,
    pub arrival_window: Window,
    pub departure_window: Window,
    pub min_dwell: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demand {
    pub train: TrainId,
    pub weight: f64,
    pub entry_vertex: VertexId,
    pub entry_speed: f64,
    pub entry_window: Window,
    pub exit_vertex: VertexId,
    pub exit_window: Window,
    pub stops: Vec<StopRequest>,
}

/// A validated routing problem. Immutable once loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub network: Network,
    pub trains: Vec<Train>,
    pub stations: Vec<Station>,
    pub demands: Vec<Demand>,
    demand_of: Vec<usize>,
}

impl Instance {
    pub fn demand(&self, train: TrainId) -> &Demand {
        &self.demands[self.demand_of[train.0]]
    }

    pub fn train(&self, train: TrainId) -> &Train {
        &self.trains[train.0]
    }

    pub fn train_ids(&self) -> impl Iterator<Item = TrainId> + '_ {
        (0..self.trains.len()).map(TrainId)
    }

    pub fn train_by_name(&self, name: &str) -> Option<TrainId> {
        self.trains.iter().position(|t| t.id == name).map(TrainId)
    }

    pub fn station_by_name(&self, name: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.name == name)
    }

    /// Parses and validates a JSON instance document.
    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        load_instance(text)
    }

    pub fn to_json(&self) -> String {
        save_instance(self)
    }
}

/// A single invariant violation, located by its document path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("malformed instance document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid instance: {}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<ValidationIssue>),
    #[error("route is disconnected before edge `{edge}` (position {position})")]
    InvalidRoute { position: usize, edge: String },
}

impl InstanceError {
    /// Paths of all validation issues, empty for other error kinds.
    pub fn paths(&self) -> Vec<&str> {
        match self {
            InstanceError::Validation(issues) => issues.iter().map(|i| i.path.as_str()).collect(),
            _ => Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Document schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDoc {
    pub network: NetworkDoc,
    pub trains: Vec<TrainDoc>,
    #[serde(default)]
    pub stations: Vec<StationDoc>,
    pub demands: Vec<DemandDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    pub vertices: Vec<String>,
    pub edges: Vec<EdgeDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length_m: f64,
    pub speed_limit_mps: f64,
    #[serde(default)]
    pub stop_allowed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverse_of: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainDoc {
    pub id: String,
    pub length_m: f64,
    pub max_speed_mps: f64,
    pub acceleration_mps2: f64,
    pub deceleration_mps2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationDoc {
    pub name: String,
    pub edges: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandDoc {
    pub train: String,
    pub weight: f64,
    pub entry_vertex: String,
    #[serde(default)]
    pub entry_speed_mps: f64,
    pub entry_window_s: [f64; 2],
    pub exit_vertex: String,
    pub exit_window_s: [f64; 2],
    #[serde(default)]
    pub stops: Vec<StopDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopDoc {
    pub station: String,
    pub arrival_window_s: [f64; 2],
    pub departure_window_s: [f64; 2],
    pub min_dwell_s: f64,
}

/// Parses and validates an instance document.
pub fn load_instance(text: &str) -> Result<Instance, InstanceError> {
    let doc: InstanceDoc = serde_json::from_str(text)?;
    Instance::try_from(doc)
}

/// Serializes an instance; `load_instance(&save_instance(i)) == i`.
pub fn save_instance(instance: &Instance) -> String {
    serde_json::to_string_pretty(&InstanceDoc::from(instance)).expect("instance serializes")
}

struct Issues(Vec<ValidationIssue>);

impl Issues {
    fn push(&mut self, path: impl Into<String>, message: impl Into<String>) {
        self.0.push(ValidationIssue {
            path: path.into(),
            message: message.into(),
        });
    }

    fn positive(&mut self, path: String, value: f64) {
        if !(value > 0.0 && value.is_finite()) {
            self.push(path, format!("must be a positive finite number, got {value}"));
        }
    }

    fn window(&mut self, path: String, w: [f64; 2]) {
        if !(w[0].is_finite() && w[1].is_finite()) || w[0] < 0.0 || w[0] > w[1] {
            self.push(path, format!("window [{}, {}] must satisfy 0 <= lo <= hi", w[0], w[1]));
        }
    }
}

impl TryFrom<InstanceDoc> for Instance {
    type Error = InstanceError;

    fn try_from(doc: InstanceDoc) -> Result<Self, Self::Error> {
        let mut issues = Issues(Vec::new());

        let mut vertex_lookup = HashMap::new();
        for (i, v) in doc.network.vertices.iter().enumerate() {
            if vertex_lookup.insert(v.as_str(), VertexId(i)).is_some() {
                issues.push(format!("network.vertices[{i}]"), format!("duplicate vertex id `{v}`"));
            }
        }

        let mut edge_lookup = HashMap::new();
        let mut pairs = HashSet::new();
        for (i, e) in doc.network.edges.iter().enumerate() {
            let p = format!("network.edges[{i}]");
            if edge_lookup.insert(e.id.as_str(), EdgeId(i)).is_some() {
                issues.push(format!("{p}.id"), format!("duplicate edge id `{}`", e.id));
            }
            for (field, v) in [("from", &e.from), ("to", &e.to)] {
                if !vertex_lookup.contains_key(v.as_str()) {
                    issues.push(format!("{p}.{field}"), format!("unknown vertex `{v}`"));
                }
            }
            if e.from == e.to {
                issues.push(format!("{p}.to"), "self-loop edges are not allowed");
            }
            if !pairs.insert((e.from.as_str(), e.to.as_str())) {
                issues.push(format!("{p}.to"), format!("second edge from `{}` to `{}`", e.from, e.to));
            }
            issues.positive(format!("{p}.length_m"), e.length_m);
            issues.positive(format!("{p}.speed_limit_mps"), e.speed_limit_mps);
        }
        for (i, e) in doc.network.edges.iter().enumerate() {
            let Some(rev) = &e.reverse_of else { continue };
            let p = format!("network.edges[{i}].reverse_of");
            match edge_lookup.get(rev.as_str()) {
                None => issues.push(p, format!("unknown edge `{rev}`")),
                Some(&EdgeId(j)) => {
                    let r = &doc.network.edges[j];
                    if r.from != e.to || r.to != e.from {
                        issues.push(p, format!("`{rev}` does not have swapped endpoints"));
                    } else if (r.length_m - e.length_m).abs() > 1e-9 * e.length_m.abs().max(1.0) {
                        issues.push(p, format!("`{rev}` has a different length"));
                    } else if r.reverse_of.as_deref() != Some(e.id.as_str()) {
                        issues.push(p, format!("pairing with `{rev}` is not symmetric"));
                    }
                }
            }
        }

        let mut train_lookup = HashMap::new();
        for (i, t) in doc.trains.iter().enumerate() {
            let p = format!("trains[{i}]");
            if train_lookup.insert(t.id.as_str(), TrainId(i)).is_some() {
                issues.push(format!("{p}.id"), format!("duplicate train id `{}`", t.id));
            }
            issues.positive(format!("{p}.length_m"), t.length_m);
            issues.positive(format!("{p}.max_speed_mps"), t.max_speed_mps);
            issues.positive(format!("{p}.acceleration_mps2"), t.acceleration_mps2);
            issues.positive(format!("{p}.deceleration_mps2"), t.deceleration_mps2);
        }

        let mut station_lookup = HashMap::new();
        for (i, s) in doc.stations.iter().enumerate() {
            let p = format!("stations[{i}]");
            if station_lookup.insert(s.name.as_str(), i).is_some() {
                issues.push(format!("{p}.name"), format!("duplicate station `{}`", s.name));
            }
            if s.edges.is_empty() {
                issues.push(format!("{p}.edges"), "station needs at least one edge");
            }
            for (j, e) in s.edges.iter().enumerate() {
                if !edge_lookup.contains_key(e.as_str()) {
                    issues.push(format!("{p}.edges[{j}]"), format!("unknown edge `{e}`"));
                }
            }
        }

        let mut demand_of = vec![usize::MAX; doc.trains.len()];
        for (i, d) in doc.demands.iter().enumerate() {
            let p = format!("demands[{i}]");
            match train_lookup.get(d.train.as_str()) {
                None => issues.push(format!("{p}.train"), format!("unknown train `{}`", d.train)),
                Some(&TrainId(t)) => {
                    if demand_of[t] != usize::MAX {
                        issues.push(format!("{p}.train"), format!("second demand for train `{}`", d.train));
                    } else {
                        demand_of[t] = i;
                    }
                    let vmax = doc.trains[t].max_speed_mps;
                    if d.entry_speed_mps > vmax {
                        issues.push(format!("{p}.entry_speed_mps"), format!("exceeds train max speed {vmax}"));
                    }
                }
            }
            if !(d.weight >= 0.0 && d.weight.is_finite()) {
                issues.push(format!("{p}.weight"), "weight must be finite and >= 0");
            }
            if !(d.entry_speed_mps >= 0.0 && d.entry_speed_mps.is_finite()) {
                issues.push(format!("{p}.entry_speed_mps"), "speed must be finite and >= 0");
            }
            for (field, v) in [("entry_vertex", &d.entry_vertex), ("exit_vertex", &d.exit_vertex)] {
                if !vertex_lookup.contains_key(v.as_str()) {
                    issues.push(format!("{p}.{field}"), format!("unknown vertex `{v}`"));
                }
            }
            if d.entry_vertex == d.exit_vertex {
                issues.push(format!("{p}.exit_vertex"), "exit vertex must differ from entry vertex");
            }
            issues.window(format!("{p}.entry_window_s"), d.entry_window_s);
            issues.window(format!("{p}.exit_window_s"), d.exit_window_s);
            if d.entry_window_s[0] >= d.exit_window_s[1] {
                issues.push(format!("{p}.exit_window_s"), "exit window must end after the entry window starts");
            }
            for (j, s) in d.stops.iter().enumerate() {
                let sp = format!("{p}.stops[{j}]");
                if !station_lookup.contains_key(s.station.as_str()) {
                    issues.push(format!("{sp}.station"), format!("unknown station `{}`", s.station));
                }
                issues.window(format!("{sp}.arrival_window_s"), s.arrival_window_s);
                issues.window(format!("{sp}.departure_window_s"), s.departure_window_s);
                if !(s.min_dwell_s >= 0.0 && s.min_dwell_s.is_finite()) {
                    issues.push(format!("{sp}.min_dwell_s"), "dwell must be finite and >= 0");
                } else if s.arrival_window_s[0] + s.min_dwell_s > s.departure_window_s[1] {
                    issues.push(
                        format!("{sp}.min_dwell_s"),
                        "earliest arrival plus dwell exceeds the latest departure",
                    );
                }
            }
        }
        for (t, &d) in demand_of.iter().enumerate() {
            if d == usize::MAX {
                issues.push(format!("trains[{t}].id"), format!("train `{}` has no demand", doc.trains[t].id));
            }
        }

        if !issues.0.is_empty() {
            return Err(InstanceError::Validation(issues.0));
        }

        let edges = doc
            .network
            .edges
            .iter()
            .map(|e| Edge {
                id: e.id.clone(),
                from: vertex_lookup[e.from.as_str()],
                to: vertex_lookup[e.to.as_str()],
                length: e.length_m,
                speed_limit: e.speed_limit_mps,
                stop_allowed: e.stop_allowed,
                reverse_of: e.reverse_of.as_ref().map(|r| edge_lookup[r.as_str()]),
            })
            .collect();
        let network = Network::new(doc.network.vertices.clone(), edges);
        let trains = doc
            .trains
            .iter()
            .map(|t| Train {
                id: t.id.clone(),
                length: t.length_m,
                max_speed: t.max_speed_mps,
                acceleration: t.acceleration_mps2,
                deceleration: t.deceleration_mps2,
            })
            .collect();
        let stations = doc
            .stations
            .iter()
            .map(|s| Station {
                name: s.name.clone(),
                edges: s.edges.iter().map(|e| edge_lookup[e.as_str()]).collect(),
            })
            .collect();
        let window = |w: [f64; 2]| Window::new(w[0], w[1]);
        let demands = doc
            .demands
            .iter()
            .map(|d| Demand {
                train: train_lookup[d.train.as_str()],
                weight: d.weight,
                entry_vertex: vertex_lookup[d.entry_vertex.as_str()],
                entry_speed: d.entry_speed_mps,
                entry_window: window(d.entry_window_s),
                exit_vertex: vertex_lookup[d.exit_vertex.as_str()],
                exit_window: window(d.exit_window_s),
                stops: d
                    .stops
                    .iter()
                    .map(|s| StopRequest {
                        station: station_lookup[s.station.as_str()],
                        arrival_window: window(s.arrival_window_s),
                        departure_window: window(s.departure_window_s),
                        min_dwell: s.min_dwell_s,
                    })
                    .collect(),
            })
            .collect();

        let instance = Instance {
            network,
            trains,
            stations,
            demands,
            demand_of,
        };

        // Every requested stop needs a placement on some entry->exit path.
        let mut issues = Issues(Vec::new());
        for (i, d) in instance.demands.iter().enumerate() {
            let from_entry = instance.network.reachable_from(d.entry_vertex);
            let to_exit = instance.network.reaching(d.exit_vertex);
            let train = instance.train(d.train);
            for (j, s) in d.stops.iter().enumerate() {
                let station = &instance.stations[s.station];
                let ok = stop_placements(&instance.network, station, train.length)
                    .iter()
                    .any(|pl| {
                        let first = instance.network.edge(pl.chain[0]).from;
                        from_entry[first.0] && to_exit[pl.vertex.0]
                    });
                if !ok {
                    issues.push(
                        format!("demands[{i}].stops[{j}].station"),
                        format!("no vertex of `{}` can hold train `{}` on an entry-exit path", station.name, train.id),
                    );
                }
            }
        }
        if !issues.0.is_empty() {
            return Err(InstanceError::Validation(issues.0));
        }
        Ok(instance)
    }
}

impl From<&Instance> for InstanceDoc {
    fn from(inst: &Instance) -> Self {
        let net = &inst.network;
        let vname = |v: VertexId| net.vertices[v.0].clone();
        let ename = |e: EdgeId| net.edges[e.0].id.clone();
        let window = |w: Window| [w.lo, w.hi];
        InstanceDoc {
            network: NetworkDoc {
                vertices: net.vertices.clone(),
                edges: net
                    .edges
                    .iter()
                    .map(|e| EdgeDoc {
                        id: e.id.clone(),
                        from: vname(e.from),
                        to: vname(e.to),
                        length_m: e.length,
                        speed_limit_mps: e.speed_limit,
                        stop_allowed: e.stop_allowed,
                        reverse_of: e.reverse_of.map(ename),
                    })
                    .collect(),
            },
            trains: inst
                .trains
                .iter()
                .map(|t| TrainDoc {
                    id: t.id.clone(),
                    length_m: t.length,
                    max_speed_mps: t.max_speed,
                    acceleration_mps2: t.acceleration,
                    deceleration_mps2: t.deceleration,
                })
                .collect(),
            stations: inst
                .stations
                .iter()
                .map(|s| StationDoc {
                    name: s.name.clone(),
                    edges: s.edges.iter().map(|&e| ename(e)).collect(),
                })
                .collect(),
            demands: inst
                .demands
                .iter()
                .map(|d| DemandDoc {
                    train: inst.trains[d.train.0].id.clone(),
                    weight: d.weight,
                    entry_vertex: vname(d.entry_vertex),
                    entry_speed_mps: d.entry_speed,
                    entry_window_s: window(d.entry_window),
                    exit_vertex: vname(d.exit_vertex),
                    exit_window_s: window(d.exit_window),
                    stops: d
                        .stops
                        .iter()
                        .map(|s| StopDoc {
                            station: inst.stations[s.station].name.clone(),
                            arrival_window_s: window(s.arrival_window),
                            departure_window_s: window(s.departure_window),
                            min_dwell_s: s.min_dwell,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// A way of standing in a station: the front at `vertex`, the train body on
/// `chain` (listed from rear to front, last edge ends at `vertex`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct StopPlacement {
    pub vertex: VertexId,
    pub chain: Vec<EdgeId>,
}

/// All minimal backward chains of station edges that hold a train of
/// `train_length` when its front stands at the chain's head vertex.
pub fn stop_placements(network: &Network, station: &Station, train_length: f64) -> Vec<StopPlacement> {
    let in_station: HashSet<EdgeId> = station.edges.iter().copied().collect();
    let mut out = BTreeSet::new();
    for &last in &station.edges {
        // depth-first over backward extensions; chains are simple paths
        let mut stack = vec![(vec![last], network.edge(last).length)];
        while let Some((chain, len)) = stack.pop() {
            if len >= train_length - 1e-9 {
                let mut ordered = chain.clone();
                ordered.reverse();
                out.insert(StopPlacement {
                    vertex: network.edge(last).to,
                    chain: ordered,
                });
                continue;
            }
            let head = network.edge(*chain.last().unwrap()).from;
            for &prev in network.in_edges(head) {
                let pv = network.edge(prev).from;
                let revisits = chain.iter().any(|&c| network.edge(c).to == pv || network.edge(c).from == pv);
                if in_station.contains(&prev) && !revisits {
                    let mut next = chain.clone();
                    next.push(prev);
                    stack.push((next, len + network.edge(prev).length));
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Edges of `route_a` that `route_b` also uses, and edges of `route_a` whose
/// reverse twin appears in `route_b`.
pub fn shared_edges(
    instance: &Instance,
    route_a: &[EdgeId],
    route_b: &[EdgeId],
) -> Result<(BTreeSet<EdgeId>, BTreeSet<EdgeId>), InstanceError> {
    let net = &instance.network;
    net.check_route(route_a)?;
    net.check_route(route_b)?;
    let b: HashSet<EdgeId> = route_b.iter().copied().collect();
    let same = route_a.iter().copied().filter(|e| b.contains(e)).collect();
    let opposite = route_a
        .iter()
        .copied()
        .filter(|&e| net.edge(e).reverse_of.is_some_and(|r| b.contains(&r)))
        .collect();
    Ok((same, opposite))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn minimal_doc() -> String {
        r#"{
          "network": {
            "vertices": ["a", "b"],
            "edges": [{"id": "e0", "from": "a", "to": "b", "length_m": 1000,
                       "speed_limit_mps": 10, "stop_allowed": false}]
          },
          "trains": [{"id": "t0", "length_m": 100, "max_speed_mps": 10,
                      "acceleration_mps2": 1, "deceleration_mps2": 1}],
          "stations": [],
          "demands": [{"train": "t0", "weight": 1, "entry_vertex": "a",
                       "entry_speed_mps": 0, "entry_window_s": [0, 10],
                       "exit_vertex": "b", "exit_window_s": [0, 600], "stops": []}]
        }"#
        .to_string()
    }

    fn line3() -> Instance {
        let doc = r#"{
          "network": {
            "vertices": ["a", "b", "c"],
            "edges": [
              {"id": "e1", "from": "a", "to": "b", "length_m": 100, "speed_limit_mps": 10, "reverse_of": "r1"},
              {"id": "e2", "from": "b", "to": "c", "length_m": 100, "speed_limit_mps": 10, "reverse_of": "r2"},
              {"id": "r1", "from": "b", "to": "a", "length_m": 100, "speed_limit_mps": 10, "reverse_of": "e1"},
              {"id": "r2", "from": "c", "to": "b", "length_m": 100, "speed_limit_mps": 10, "reverse_of": "e2"}
            ]
          },
          "trains": [{"id": "t0", "length_m": 50, "max_speed_mps": 10,
                      "acceleration_mps2": 1, "deceleration_mps2": 1}],
          "demands": [{"train": "t0", "weight": 1, "entry_vertex": "a",
                       "entry_window_s": [0, 10], "exit_vertex": "c", "exit_window_s": [0, 600]}]
        }"#;
        load_instance(doc).unwrap()
    }

    #[test]
    fn minimal_document_loads() {
        let inst = load_instance(&minimal_doc()).unwrap();
        assert_eq!(inst.network.vertices.len(), 2);
        assert_eq!(inst.network.edges.len(), 1);
        assert_eq!(inst.demand(TrainId(0)).exit_vertex, VertexId(1));
    }

    #[test]
    fn zero_length_edge_is_rejected() {
        let doc = minimal_doc().replace("\"length_m\": 1000", "\"length_m\": 0");
        let err = load_instance(&doc).unwrap_err();
        let paths = err.paths();
        assert_eq!(paths.len(), 1);
        assert!(paths[0].contains("edges[0].length"), "{paths:?}");
    }

    #[test]
    fn unknown_station_reference() {
        let doc = minimal_doc().replace(
            "\"stops\": []",
            r#""stops": [{"station": "X", "arrival_window_s": [0, 100],
                "departure_window_s": [0, 200], "min_dwell_s": 10}]"#,
        );
        let err = load_instance(&doc).unwrap_err();
        assert_eq!(err.paths(), vec!["demands[0].stops[0].station"]);
    }

    #[test]
    fn malformed_document_is_parse_error() {
        assert!(matches!(load_instance("{ not json"), Err(InstanceError::Parse(_))));
        assert!(matches!(load_instance("{}"), Err(InstanceError::Parse(_))));
    }

    #[test]
    fn issue_paths_are_unique() {
        let doc = minimal_doc()
            .replace("\"length_m\": 1000", "\"length_m\": -1")
            .replace("\"speed_limit_mps\": 10", "\"speed_limit_mps\": 0")
            .replace("\"weight\": 1", "\"weight\": -2");
        let err = load_instance(&doc).unwrap_err();
        let paths = err.paths();
        let unique: HashSet<_> = paths.iter().collect();
        assert_eq!(paths.len(), 3);
        assert_eq!(unique.len(), paths.len());
    }

    #[test]
    fn asymmetric_reverse_pairing_is_rejected() {
        let doc = r#"{
          "network": {"vertices": ["a", "b"], "edges": [
            {"id": "e1", "from": "a", "to": "b", "length_m": 100, "speed_limit_mps": 10, "reverse_of": "r1"},
            {"id": "r1", "from": "b", "to": "a", "length_m": 100, "speed_limit_mps": 10}]},
          "trains": [{"id": "t", "length_m": 10, "max_speed_mps": 5, "acceleration_mps2": 1, "deceleration_mps2": 1}],
          "demands": [{"train": "t", "weight": 1, "entry_vertex": "a", "entry_window_s": [0, 1],
                       "exit_vertex": "b", "exit_window_s": [0, 100]}]
        }"#;
        let err = load_instance(doc).unwrap_err();
        assert_eq!(err.paths(), vec!["network.edges[0].reverse_of"]);
    }

    #[test]
    fn infeasible_dwell_is_flagged() {
        let doc = r#"{
          "network": {"vertices": ["a", "b"], "edges": [
            {"id": "e1", "from": "a", "to": "b", "length_m": 300, "speed_limit_mps": 10, "stop_allowed": true}]},
          "trains": [{"id": "t", "length_m": 10, "max_speed_mps": 5, "acceleration_mps2": 1, "deceleration_mps2": 1}],
          "stations": [{"name": "S", "edges": ["e1"]}],
          "demands": [{"train": "t", "weight": 1, "entry_vertex": "a", "entry_window_s": [0, 1],
                       "exit_vertex": "b", "exit_window_s": [0, 100],
                       "stops": [{"station": "S", "arrival_window_s": [50, 60],
                                  "departure_window_s": [0, 70], "min_dwell_s": 30}]}]
        }"#;
        let err = load_instance(doc).unwrap_err();
        assert_eq!(err.paths(), vec!["demands[0].stops[0].min_dwell_s"]);
    }

    #[test]
    fn round_trip_minimal_and_pairing() {
        let inst = load_instance(&minimal_doc()).unwrap();
        assert_eq!(load_instance(&save_instance(&inst)).unwrap(), inst);

        let line = line3();
        let again = load_instance(&save_instance(&line)).unwrap();
        assert_eq!(again, line);
        for (i, e) in again.network.edges.iter().enumerate() {
            let r = e.reverse_of.unwrap();
            assert_eq!(again.network.edge(r).reverse_of, Some(EdgeId(i)));
        }
    }

    #[test]
    fn shared_edges_cases() {
        let inst = line3();
        let e = |n: &str| inst.network.edge_by_name(n).unwrap();
        let fwd = vec![e("e1"), e("e2")];
        let (same, opp) = shared_edges(&inst, &fwd, &fwd).unwrap();
        assert_eq!(same, fwd.iter().copied().collect());
        assert!(opp.is_empty());

        let back = vec![e("r2"), e("r1")];
        let (same, opp) = shared_edges(&inst, &fwd, &back).unwrap();
        assert!(same.is_empty());
        assert_eq!(opp, [e("e1"), e("e2")].into_iter().collect());

        let (same, opp) = shared_edges(&inst, &[e("e1")], &[e("r2")]).unwrap();
        assert!(same.is_empty() && opp.is_empty());

        assert!(matches!(
            shared_edges(&inst, &[e("e1"), e("r2")], &fwd),
            Err(InstanceError::InvalidRoute { .. })
        ));
    }

    #[test]
    fn platform_placements_respect_train_length() {
        let doc = r#"{
          "network": {"vertices": ["a", "b", "c", "d"], "edges": [
            {"id": "in", "from": "a", "to": "b", "length_m": 500, "speed_limit_mps": 10},
            {"id": "pa", "from": "b", "to": "c", "length_m": 100, "speed_limit_mps": 10, "stop_allowed": true},
            {"id": "pb", "from": "c", "to": "d", "length_m": 100, "speed_limit_mps": 10, "stop_allowed": true}]},
          "trains": [{"id": "t", "length_m": 10, "max_speed_mps": 5, "acceleration_mps2": 1, "deceleration_mps2": 1}],
          "stations": [{"name": "P", "edges": ["pa", "pb"]}],
          "demands": [{"train": "t", "weight": 1, "entry_vertex": "a", "entry_window_s": [0, 1],
                       "exit_vertex": "d", "exit_window_s": [0, 1000]}]
        }"#;
        let inst = load_instance(doc).unwrap();
        let station = &inst.stations[0];
        let c = inst.network.vertex_by_name("c").unwrap();
        let d = inst.network.vertex_by_name("d").unwrap();
        let heads = |len: f64| -> Vec<VertexId> {
            stop_placements(&inst.network, station, len).into_iter().map(|p| p.vertex).collect()
        };
        assert_eq!(heads(150.0), vec![d]);
        assert_eq!(heads(80.0), vec![c, d]);
        assert!(heads(250.0).is_empty());
    }
}
