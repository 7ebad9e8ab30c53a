//! Feasibility check for schedules, written against the kinematics alone.
//! Nothing here reads model rows, so it can disagree with the MILP.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{stop_placements, EdgeId, Instance, TrainId, VertexId};
use crate::kinematics::{self, KinematicParams};
use crate::schedule::{Schedule, TrainSchedule};
use crate::velocity_graph::ExtendedGraph;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidatorConfig {
    /// Seconds (or m/s for speeds) a check may be missed by.
    pub tolerance: f64,
    pub buffer: f64,
    pub v_floor: f64,
}

impl Default for ValidatorConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            buffer: 0.0,
            v_floor: KinematicParams::DEFAULT_V_FLOOR,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Routing,
    Kinematics,
    TrackRelease,
    Headway,
    OppositeDirection,
    Timetable,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("kind serializes");
        f.write_str(s.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub trains: Vec<String>,
    pub location: String,
    /// Seconds, or m/s for speed checks.
    pub magnitude: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub entries: Vec<Violation>,
}

impl ViolationReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.entries.iter().filter(|v| v.kind == kind).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Checker<'a> {
    instance: &'a Instance,
    config: ValidatorConfig,
    report: ViolationReport,
}

fn edge_params(instance: &Instance, t: TrainId, e: EdgeId, v_floor: f64) -> KinematicParams {
    let train = instance.train(t);
    let v_max = train.max_speed.min(instance.network.edge(e).speed_limit);
    KinematicParams {
        v_max,
        accel: train.acceleration,
        decel: train.deceleration,
        v_floor: v_floor.min(0.5 * v_max),
    }
}

fn run_out_params(instance: &Instance, t: TrainId, v_floor: f64) -> KinematicParams {
    let train = instance.train(t);
    KinematicParams {
        v_max: train.max_speed,
        accel: train.acceleration,
        decel: train.deceleration,
        v_floor: v_floor.min(0.5 * train.max_speed),
    }
}

impl Checker<'_> {
    fn name(&self, t: TrainId) -> String {
        self.instance.train(t).id.clone()
    }

    fn vertex(&self, v: VertexId) -> String {
        self.instance.network.vertex_name(v).to_string()
    }

    fn edge(&self, e: EdgeId) -> String {
        self.instance.network.edge(e).id.clone()
    }

    fn push(&mut self, kind: ViolationKind, trains: &[TrainId], location: String, magnitude: f64, detail: String) {
        let trains = trains.iter().map(|&t| self.name(t)).collect();
        self.report.entries.push(Violation {
            kind,
            trains,
            location,
            magnitude,
            detail,
        });
    }

    /// Returns whether the route is usable for the remaining checks.
    fn routing(&mut self, s: &TrainSchedule) -> bool {
        let net = &self.instance.network;
        let demand = self.instance.demand(s.train);
        let mut problems = Vec::new();
        if s.vertices.len() != s.route.len() + 1 || s.route.is_empty() {
            problems.push("route and timeline lengths disagree".to_string());
        } else {
            for (j, &e) in s.route.iter().enumerate() {
                let edge = net.edge(e);
                if edge.from != s.vertices[j] || edge.to != s.vertices[j + 1] {
                    problems.push(format!("{} does not join {} and {}", edge.id, self.vertex(s.vertices[j]), self.vertex(s.vertices[j + 1])));
                }
            }
            if s.vertices[0] != demand.entry_vertex {
                problems.push("route does not start at the entry vertex".into());
            }
            if *s.vertices.last().unwrap() != demand.exit_vertex {
                problems.push("route does not end at the exit vertex".into());
            }
            let mut seen = s.vertices.clone();
            seen.sort();
            seen.dedup();
            if seen.len() != s.vertices.len() {
                problems.push("route revisits a vertex".into());
            }
        }
        let ok = problems.is_empty();
        for p in problems {
            self.push(ViolationKind::Routing, &[s.train], self.name(s.train), 0.0, p);
        }
        ok
    }

    fn kinematics(&mut self, s: &TrainSchedule) {
        let tol = self.config.tolerance;
        let net = &self.instance.network;
        let demand = self.instance.demand(s.train);
        if (s.speeds[0] - demand.entry_speed).abs() > tol {
            let m = (s.speeds[0] - demand.entry_speed).abs();
            self.push(ViolationKind::Kinematics, &[s.train], self.vertex(s.vertices[0]), m, "entry speed differs from the demand".into());
        }
        for (i, &v) in s.vertices.iter().enumerate() {
            let dwell = s.departure[i] - s.arrival[i];
            if dwell < -tol {
                self.push(ViolationKind::Kinematics, &[s.train], self.vertex(v), -dwell, "departs before it arrives".into());
            } else if dwell > tol && s.speeds[i] > tol {
                self.push(ViolationKind::Kinematics, &[s.train], self.vertex(v), dwell, format!("waits while moving at {} m/s", s.speeds[i]));
            }
        }
        for (j, &e) in s.route.iter().enumerate() {
            let edge = net.edge(e);
            let p = edge_params(self.instance, s.train, e, self.config.v_floor);
            let (v1, v2) = (s.speeds[j], s.speeds[j + 1]);
            if v1.max(v2) > p.v_max + tol {
                let m = v1.max(v2) - p.v_max;
                self.push(ViolationKind::Kinematics, &[s.train], self.edge(e), m, "speed above the edge cap".into());
                continue;
            }
            let (v1, v2) = (v1.clamp(0.0, p.v_max), v2.clamp(0.0, p.v_max));
            if !kinematics::feasible_transition(edge.length, v1, v2, &p).unwrap_or(false) {
                self.push(ViolationKind::Kinematics, &[s.train], self.edge(e), 0.0, format!("{v1} → {v2} m/s is not reachable"));
                continue;
            }
            let gap = s.arrival[j + 1] - s.departure[j];
            let lo = kinematics::min_traverse_time(edge.length, v1, v2, &p).expect("feasible");
            let hi = kinematics::max_traverse_time(edge.length, v1, v2, edge.stop_allowed, &p).expect("feasible");
            if gap < lo - tol {
                self.push(ViolationKind::Kinematics, &[s.train], self.edge(e), lo - gap, format!("traversal {gap:.3} s below minimum {lo:.3} s"));
            } else if gap > hi + tol {
                self.push(ViolationKind::Kinematics, &[s.train], self.edge(e), gap - hi, format!("traversal {gap:.3} s above maximum {hi:.3} s"));
            }
        }
    }

    /// Earliest time the train's front can be `dist` meters past route
    /// vertex `i`, derived from the schedule's own timings.
    fn front_passes(&self, s: &TrainSchedule, i: usize, dist: f64) -> f64 {
        let net = &self.instance.network;
        let mut covered = 0.0;
        for j in i..s.route.len() {
            let edge = net.edge(s.route[j]);
            if covered + edge.length >= dist - 1e-9 {
                let offset = (dist - covered).clamp(0.0, edge.length);
                let p = edge_params(self.instance, s.train, s.route[j], self.config.v_floor);
                let (v1, v2) = (s.speeds[j].clamp(0.0, p.v_max), s.speeds[j + 1].clamp(0.0, p.v_max));
                let fast = kinematics::min_time_over_interval(edge.length, v1, v2, 0.0, offset, &p).unwrap_or(0.0);
                let slow = kinematics::max_time_over_interval(edge.length, v1, v2, offset, edge.length, edge.stop_allowed, &p)
                    .unwrap_or(f64::INFINITY);
                return (s.departure[j] + fast).max(s.arrival[j + 1] - slow);
            }
            covered += edge.length;
        }
        let beyond = dist - covered;
        let last = s.vertices.len() - 1;
        if beyond <= self.instance.train(s.train).length + 1e-9 {
            let p = run_out_params(self.instance, s.train, self.config.v_floor);
            let v = s.speeds[last].clamp(0.0, p.v_max);
            s.departure[last] + kinematics::min_time_free_end(v, beyond, &p).unwrap_or(0.0)
        } else {
            s.rear_departure[last]
        }
    }

    fn track_release(&mut self, s: &TrainSchedule) {
        let length = self.instance.train(s.train).length;
        for i in 0..s.vertices.len() {
            let need = self.front_passes(s, i, length);
            let have = s.rear_departure[i];
            if have < need - self.config.tolerance {
                let detail = format!("rear leaves at {have:.3} s, front clears a train length at {need:.3} s");
                self.push(ViolationKind::TrackRelease, &[s.train], self.vertex(s.vertices[i]), need - have, detail);
            }
        }
    }

    fn timetable(&mut self, s: &TrainSchedule) {
        let tol = self.config.tolerance;
        let demand = self.instance.demand(s.train);
        let miss = |w: crate::instance::Window, t: f64| (w.lo - t).max(t - w.hi).max(0.0);
        let entry_miss = miss(demand.entry_window, s.arrival[0]);
        if entry_miss > tol {
            self.push(ViolationKind::Timetable, &[s.train], self.vertex(s.vertices[0]), entry_miss, "entry outside its window".into());
        }
        let last = s.vertices.len() - 1;
        let exit_miss = miss(demand.exit_window, s.rear_departure[last]);
        if exit_miss > tol {
            self.push(ViolationKind::Timetable, &[s.train], self.vertex(s.vertices[last]), exit_miss, "exit outside its window".into());
        }

        let train = self.instance.train(s.train);
        let mut earliest_pos = 0;
        let mut prev_departure = f64::NEG_INFINITY;
        for stop in &demand.stops {
            let station = &self.instance.stations[stop.station];
            let placements = stop_placements(&self.instance.network, station, train.length);
            let mut best: Option<(f64, usize)> = None;
            let mut served = None;
            for (i, &v) in s.vertices.iter().enumerate() {
                let fits = placements.iter().any(|pl| {
                    pl.vertex == v && i >= pl.chain.len() && s.route[i - pl.chain.len()..i] == pl.chain[..]
                });
                if !fits {
                    continue;
                }
                let m = s.speeds[i].abs()
                    + miss(stop.arrival_window, s.arrival[i])
                    + miss(stop.departure_window, s.departure[i])
                    + (stop.min_dwell - (s.departure[i] - s.arrival[i])).max(0.0)
                    + (prev_departure - s.arrival[i]).max(0.0);
                if best.map_or(true, |(b, _)| m < b) {
                    best = Some((m, i));
                }
                if i >= earliest_pos && m <= tol {
                    served = Some(i);
                    break;
                }
            }
            match served {
                Some(i) => {
                    earliest_pos = i;
                    prev_departure = s.departure[i];
                }
                None => {
                    let (m, loc) = match best {
                        Some((m, i)) => (m, self.vertex(s.vertices[i])),
                        None => (0.0, station.name.clone()),
                    };
                    let detail = format!("stop at {} not served", station.name);
                    self.push(ViolationKind::Timetable, &[s.train], loc, m, detail);
                }
            }
        }
    }

    /// How far `f` misses following `l` over `e`.
    fn follow_miss(&self, f: &TrainSchedule, l: &TrainSchedule, e: EdgeId) -> f64 {
        let edge = self.instance.network.edge(e);
        let (fu, lu) = (f.position(edge.from).unwrap(), l.position(edge.from).unwrap());
        let (fv, lv) = (fu + 1, lu + 1);
        let decel = self.instance.train(f.train).deceleration;
        let clearance = f.speeds[fu].powi(2) / (2.0 * decel) + self.config.buffer;
        let need = if clearance <= 1e-12 {
            l.rear_departure[lu]
        } else {
            self.front_passes(l, lu, clearance + self.instance.train(l.train).length)
        };
        let behind = (need - f.arrival[fu]).max(0.0);
        let overtaken = (l.rear_departure[lv] - f.arrival[fv]).max(0.0);
        behind.max(overtaken)
    }

    fn same_direction(&mut self, schedule: &Schedule, usable: &[bool]) {
        let net = &self.instance.network;
        for e in 0..net.edges.len() {
            let e = EdgeId(e);
            let users: Vec<&TrainSchedule> = schedule.trains.iter().filter(|s| usable[s.train.0] && s.uses_edge(e)).collect();
            for (j, b) in users.iter().enumerate() {
                for a in &users[..j] {
                    let miss = self.follow_miss(b, a, e).min(self.follow_miss(a, b, e));
                    if miss > self.config.tolerance {
                        let tail = net.edge(e).from;
                        let (ta, tb) = (a.arrival[a.position(tail).unwrap()], b.arrival[b.position(tail).unwrap()]);
                        let (lead, follow) = if (ta, &self.instance.train(a.train).id) <= (tb, &self.instance.train(b.train).id) {
                            (a.train, b.train)
                        } else {
                            (b.train, a.train)
                        };
                        let detail = format!("{} closes on {} by {miss:.3} s", self.name(follow), self.name(lead));
                        self.push(ViolationKind::Headway, &[lead, follow], self.edge(e), miss, detail);
                    }
                }
            }
        }
    }

    fn opposite_direction(&mut self, schedule: &Schedule, usable: &[bool]) {
        let net = &self.instance.network;
        for seg in crate::headway::track_segments(net) {
            // (train, forward, occupied from, occupied until)
            let mut users = Vec::new();
            for s in schedule.trains.iter().filter(|s| usable[s.train.0]) {
                let on: Vec<usize> = (0..s.route.len())
                    .filter(|&j| seg.forward.contains(&s.route[j]) || seg.backward.contains(&s.route[j]))
                    .collect();
                if let (Some(&first), Some(&last)) = (on.first(), on.last()) {
                    users.push((s.train, seg.forward.contains(&s.route[first]), s.arrival[first], s.rear_departure[last + 1]));
                }
            }
            for (j, b) in users.iter().enumerate() {
                for a in &users[..j] {
                    if a.1 == b.1 {
                        continue;
                    }
                    let overlap = (a.3 - b.2).min(b.3 - a.2);
                    if overlap > self.config.tolerance {
                        let loc = format!("{}..{}", self.vertex(seg.vertices[0]), self.vertex(*seg.vertices.last().unwrap()));
                        let detail = format!("occupations overlap by {overlap:.3} s");
                        self.push(ViolationKind::OppositeDirection, &[a.0, b.0], loc, overlap, detail);
                    }
                }
            }
        }
    }
}

/// Checks `schedule` against `instance`. An empty report means feasible.
pub fn verify_schedule(instance: &Instance, schedule: &Schedule, config: &ValidatorConfig) -> ViolationReport {
    let mut c = Checker {
        instance,
        config: *config,
        report: ViolationReport::default(),
    };
    let mut usable = vec![false; instance.trains.len()];
    for s in &schedule.trains {
        if s.train.0 < usable.len() && c.routing(s) {
            usable[s.train.0] = true;
            c.kinematics(s);
            c.track_release(s);
            c.timetable(s);
        }
    }
    c.same_direction(schedule, &usable);
    c.opposite_direction(schedule, &usable);
    c.report
}

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("train {0} has no path to its exit")]
    NoPath(String),
}

#[derive(PartialEq)]
struct Label(f64, (VertexId, usize, usize));

impl Eq for Label {}

impl Ord for Label {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Fastest entry-to-exit duration for `graph`'s train alone: from the
/// earliest entry until the rear clears the exit vertex, including the
/// requested stops. Stop placements are matched on the edge the train
/// arrives by, which is exact when each placement is a single edge.
pub fn fastest_single_train_time(instance: &Instance, graph: &ExtendedGraph) -> Result<f64, OracleError> {
    let train = graph.train;
    let tr = instance.train(train);
    let demand = instance.demand(train);
    let net = &instance.network;
    let stops: Vec<Vec<(VertexId, EdgeId)>> = demand
        .stops
        .iter()
        .map(|s| {
            graph
                .placements(&instance.stations[s.station], tr, net)
                .into_iter()
                .map(|p| (p.vertex, *p.chain.last().unwrap()))
                .collect()
        })
        .collect();
    let start = demand.entry_window.lo;
    let entry_speed = graph.speed_set(demand.entry_vertex).index_of(demand.entry_speed).expect("entry speed in grid");
    let mut best: HashMap<(VertexId, usize, usize), f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    best.insert((demand.entry_vertex, entry_speed, 0), start);
    heap.push(Label(start, (demand.entry_vertex, entry_speed, 0)));
    let run_out = KinematicParams {
        v_max: tr.max_speed,
        accel: tr.acceleration,
        decel: tr.deceleration,
        v_floor: KinematicParams::DEFAULT_V_FLOOR.min(0.5 * tr.max_speed),
    };
    let mut finish = f64::INFINITY;
    while let Some(Label(t, state @ (v, p, k))) = heap.pop() {
        if best.get(&state).is_some_and(|&b| t > b) {
            continue;
        }
        if v == demand.exit_vertex {
            if k == stops.len() {
                let speed = graph.speed_set(v).speeds[p];
                finish = finish.min(t + kinematics::min_time_free_end(speed, tr.length, &run_out).expect("valid run-out"));
            }
            continue;
        }
        for &i in graph.out_of(v) {
            let x = &graph.edges[i];
            if x.from_speed != p {
                continue;
            }
            let mut arrive = t + x.tau_min;
            let mut relax = |time: f64, st: (VertexId, usize, usize)| {
                if best.get(&st).map_or(true, |&b| time < b) {
                    best.insert(st, time);
                    heap.push(Label(time, st));
                }
            };
            relax(arrive, (x.to, x.to_speed, k));
            let stopped = graph.speed_set(x.to).speeds[x.to_speed] == 0.0;
            if k < stops.len() && stopped && stops[k].contains(&(x.to, x.base_edge)) {
                let req = &demand.stops[k];
                arrive = arrive.max(req.arrival_window.lo);
                let leave = (arrive + req.min_dwell).max(req.departure_window.lo);
                relax(leave, (x.to, x.to_speed, k + 1));
            }
        }
    }
    if finish.is_finite() {
        Ok(finish - start)
    } else {
        Err(OracleError::NoPath(tr.id.clone()))
    }
}
