//! Per-train velocity-extended routing graphs.
//!
//! Each vertex carries a discrete set of admissible speeds; an extended edge
//! `(e, p1 → p2)` exists whenever the train can change from `p1` to `p2`
//! while running over `e`. Extended edges carry the fastest and slowest
//! traversal times from [`crate::kinematics`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::instance::{stop_placements, EdgeId, Instance, Network, Station, StopPlacement, Train, TrainId, VertexId};
use crate::kinematics::{self, KinematicParams};

/// 10 km/h, a step a standard speed indicator can display.
pub const DEFAULT_DELTA_V: f64 = 10.0 / 3.6;

const SPEED_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("train `{train}` has no path from its entry to its exit vertex")]
    EmptyGraph { train: String },
    #[error("invalid speed discretization step {0}")]
    BadStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphOptions {
    pub delta_v: f64,
    pub v_floor: f64,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self {
            delta_v: DEFAULT_DELTA_V,
            v_floor: KinematicParams::DEFAULT_V_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedSet {
    pub vertex: VertexId,
    /// Strictly increasing, starts at 0 and ends at the vertex cap.
    pub speeds: Vec<f64>,
}

impl SpeedSet {
    pub fn index_of(&self, v: f64) -> Option<usize> {
        self.speeds.iter().position(|s| (s - v).abs() <= SPEED_TOL * v.max(1.0))
    }

    pub fn cap(&self) -> f64 {
        *self.speeds.last().unwrap_or(&0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedEdge {
    pub base_edge: EdgeId,
    pub from: VertexId,
    pub to: VertexId,
    /// Index into the speed set of `from`.
    pub from_speed: usize,
    /// Index into the speed set of `to`.
    pub to_speed: usize,
    pub p1: f64,
    pub p2: f64,
    pub tau_min: f64,
    /// Infinite where the train may stop on the edge.
    pub tau_max: f64,
}

#[derive(Debug, Clone)]
pub struct ExtendedGraph {
    pub train: TrainId,
    pub speed_sets: Vec<SpeedSet>,
    pub edges: Vec<ExtendedEdge>,
    /// Station index → vertices where the train may stand for a stop.
    pub stop_vertices: BTreeMap<usize, BTreeSet<VertexId>>,
    edge_params: Vec<Option<KinematicParams>>,
    by_base: Vec<Vec<usize>>,
    out_of: Vec<Vec<usize>>,
    into: Vec<Vec<usize>>,
}

/// Builds the unrestricted extended graph of `train` over the whole network.
pub fn build_extended_graph(
    train_id: TrainId,
    train: &Train,
    network: &Network,
    opts: &GraphOptions,
) -> Result<ExtendedGraph, GraphError> {
    build(train_id, train, network, opts, None)
}

/// Builds the graph for a train's demand: the entry speed is added at the
/// entry vertex, and only states on some entry→exit path are kept.
pub fn build_for_demand(instance: &Instance, train_id: TrainId, opts: &GraphOptions) -> Result<ExtendedGraph, GraphError> {
    let train = instance.train(train_id);
    let demand = instance.demand(train_id);
    let network = &instance.network;
    let full = build(
        train_id,
        train,
        network,
        opts,
        Some((demand.entry_vertex, demand.entry_speed)),
    )?;
    let mut graph = full.restrict(demand.entry_vertex, demand.entry_speed, demand.exit_vertex);
    if graph.edges.is_empty() {
        return Err(GraphError::EmptyGraph { train: train.id.clone() });
    }
    for stop in &demand.stops {
        let station = &instance.stations[stop.station];
        let vertices = stop_candidates(&graph, station, train, network);
        graph.stop_vertices.insert(stop.station, vertices);
    }
    Ok(graph)
}

/// Builds graphs for every train of `instance`.
pub fn build_all(instance: &Instance, opts: &GraphOptions) -> Result<Vec<ExtendedGraph>, GraphError> {
    instance.train_ids().map(|t| build_for_demand(instance, t, opts)).collect()
}

fn speed_grid(cap: f64, delta_v: f64) -> Vec<f64> {
    let mut speeds = Vec::new();
    let mut k = 0usize;
    loop {
        let v = k as f64 * delta_v;
        if v >= cap - SPEED_TOL {
            break;
        }
        speeds.push(v);
        k += 1;
    }
    speeds.push(cap);
    speeds
}

fn build(
    train_id: TrainId,
    train: &Train,
    network: &Network,
    opts: &GraphOptions,
    extra: Option<(VertexId, f64)>,
) -> Result<ExtendedGraph, GraphError> {
    if !(opts.delta_v > 0.0 && opts.delta_v.is_finite()) {
        return Err(GraphError::BadStep(opts.delta_v));
    }
    let speed_sets: Vec<SpeedSet> = (0..network.num_vertices())
        .map(|i| {
            let v = VertexId(i);
            let incident = network.out_edges(v).iter().chain(network.in_edges(v));
            let line_max = incident.map(|&e| network.edge(e).speed_limit).fold(0.0, f64::max);
            let cap = train.max_speed.min(line_max);
            let mut speeds = if cap > 0.0 { speed_grid(cap, opts.delta_v) } else { vec![0.0] };
            if let Some((ev, es)) = extra {
                if ev == v && es <= cap + SPEED_TOL && !speeds.iter().any(|s| (s - es).abs() <= SPEED_TOL) {
                    speeds.push(es);
                    speeds.sort_by(f64::total_cmp);
                }
            }
            SpeedSet { vertex: v, speeds }
        })
        .collect();

    let mut edge_params = Vec::with_capacity(network.edges.len());
    let mut edges = Vec::new();
    for (ei, e) in network.edges.iter().enumerate() {
        let limit = train.max_speed.min(e.speed_limit);
        let params = KinematicParams {
            v_max: limit,
            accel: train.acceleration,
            decel: train.deceleration,
            v_floor: opts.v_floor.min(0.5 * limit),
        };
        edge_params.push(Some(params));
        let from_set = &speed_sets[e.from.0];
        let to_set = &speed_sets[e.to.0];
        for (i1, &p1) in from_set.speeds.iter().enumerate() {
            if p1 > limit + SPEED_TOL {
                continue;
            }
            for (i2, &p2) in to_set.speeds.iter().enumerate() {
                if p2 > limit + SPEED_TOL {
                    continue;
                }
                let feasible = kinematics::feasible_transition(e.length, p1, p2, &params).unwrap_or(false);
                if !feasible {
                    continue;
                }
                let tau_min = kinematics::min_traverse_time(e.length, p1, p2, &params).expect("feasible");
                let tau_max =
                    kinematics::max_traverse_time(e.length, p1, p2, e.stop_allowed, &params).expect("feasible");
                edges.push(ExtendedEdge {
                    base_edge: EdgeId(ei),
                    from: e.from,
                    to: e.to,
                    from_speed: i1,
                    to_speed: i2,
                    p1,
                    p2,
                    tau_min,
                    tau_max,
                });
            }
        }
    }
    Ok(ExtendedGraph::assemble(train_id, speed_sets, edges, edge_params, network.edges.len()))
}

impl ExtendedGraph {
    fn assemble(
        train: TrainId,
        speed_sets: Vec<SpeedSet>,
        edges: Vec<ExtendedEdge>,
        edge_params: Vec<Option<KinematicParams>>,
        num_base: usize,
    ) -> Self {
        let mut by_base = vec![Vec::new(); num_base];
        let mut out_of = vec![Vec::new(); speed_sets.len()];
        let mut into = vec![Vec::new(); speed_sets.len()];
        for (i, e) in edges.iter().enumerate() {
            by_base[e.base_edge.0].push(i);
            out_of[e.from.0].push(i);
            into[e.to.0].push(i);
        }
        Self {
            train,
            speed_sets,
            edges,
            stop_vertices: BTreeMap::new(),
            edge_params,
            by_base,
            out_of,
            into,
        }
    }

    /// Keeps the states reachable from `(entry, entry_speed)` that can still
    /// reach `exit`. Nothing enters the entry vertex or leaves the exit vertex.
    fn restrict(self, entry: VertexId, entry_speed: f64, exit: VertexId) -> Self {
        let Some(start) = self.speed_sets[entry.0].index_of(entry_speed) else {
            return Self::assemble(self.train, self.speed_sets, Vec::new(), self.edge_params, self.by_base.len());
        };
        let usable = |e: &ExtendedEdge| e.to != entry && e.from != exit;
        let state = |v: VertexId, s: usize| (v, s);

        let mut fwd = BTreeSet::from([state(entry, start)]);
        let mut queue = VecDeque::from([state(entry, start)]);
        while let Some((v, s)) = queue.pop_front() {
            for &i in &self.out_of[v.0] {
                let e = &self.edges[i];
                if e.from_speed == s && usable(e) && fwd.insert(state(e.to, e.to_speed)) {
                    queue.push_back(state(e.to, e.to_speed));
                }
            }
        }
        let mut bwd: BTreeSet<(VertexId, usize)> =
            (0..self.speed_sets[exit.0].speeds.len()).map(|s| state(exit, s)).collect();
        let mut queue: VecDeque<_> = bwd.iter().copied().collect();
        while let Some((v, s)) = queue.pop_front() {
            for &i in &self.into[v.0] {
                let e = &self.edges[i];
                if e.to_speed == s && usable(e) && bwd.insert(state(e.from, e.from_speed)) {
                    queue.push_back(state(e.from, e.from_speed));
                }
            }
        }
        let num_base = self.by_base.len();
        let edges: Vec<ExtendedEdge> = self
            .edges
            .into_iter()
            .filter(|e| {
                usable(e) && fwd.contains(&state(e.from, e.from_speed)) && bwd.contains(&state(e.to, e.to_speed))
            })
            .collect();
        Self::assemble(self.train, self.speed_sets, edges, self.edge_params, num_base)
    }

    pub fn speed_set(&self, v: VertexId) -> &SpeedSet {
        &self.speed_sets[v.0]
    }

    /// Kinematic parameters of this train on base edge `e`.
    pub fn params(&self, e: EdgeId) -> &KinematicParams {
        self.edge_params[e.0].as_ref().expect("edge params")
    }

    /// Extended edges over base edge `e`, as indices into [`Self::edges`].
    pub fn on_edge(&self, e: EdgeId) -> &[usize] {
        &self.by_base[e.0]
    }

    pub fn out_of(&self, v: VertexId) -> &[usize] {
        &self.out_of[v.0]
    }

    pub fn into(&self, v: VertexId) -> &[usize] {
        &self.into[v.0]
    }

    pub fn uses_edge(&self, e: EdgeId) -> bool {
        !self.by_base[e.0].is_empty()
    }

    /// Base edges with at least one extended edge, in id order.
    pub fn base_edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.by_base
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(i, _)| EdgeId(i))
    }

    /// Vertices touched by some extended edge, in id order.
    pub fn vertices(&self) -> Vec<VertexId> {
        (0..self.speed_sets.len())
            .map(VertexId)
            .filter(|v| !self.out_of[v.0].is_empty() || !self.into[v.0].is_empty())
            .collect()
    }

    pub fn has_vertex(&self, v: VertexId) -> bool {
        !self.out_of[v.0].is_empty() || !self.into[v.0].is_empty()
    }

    /// Extended edges over `e` whose start speed index is `speed`.
    pub fn on_edge_from_speed(&self, e: EdgeId, speed: usize) -> impl Iterator<Item = usize> + '_ {
        self.by_base[e.0].iter().copied().filter(move |&i| self.edges[i].from_speed == speed)
    }

    /// Extended edges touching the zero-speed state of `v` (in either direction).
    pub fn at_rest(&self, v: VertexId) -> Vec<usize> {
        let zero = self.speed_sets[v.0].index_of(0.0);
        let mut out: Vec<usize> = self.into[v.0]
            .iter()
            .copied()
            .filter(|&i| Some(self.edges[i].to_speed) == zero)
            .collect();
        out.extend(self.out_of[v.0].iter().copied().filter(|&i| Some(self.edges[i].from_speed) == zero));
        out
    }

    /// Placements of `station` available to this train: every chain edge is
    /// usable and the train can arrive at the front vertex at speed 0.
    pub fn placements(&self, station: &Station, train: &Train, network: &Network) -> Vec<StopPlacement> {
        stop_placements(network, station, train.length)
            .into_iter()
            .filter(|pl| {
                let last = *pl.chain.last().expect("chain");
                let zero = self.speed_sets[pl.vertex.0].index_of(0.0);
                pl.chain.iter().all(|&e| self.uses_edge(e))
                    && self.by_base[last.0].iter().any(|&i| Some(self.edges[i].to_speed) == zero)
            })
            .collect()
    }
}

/// Vertices where `train` can stop with its whole length inside `station`.
pub fn stop_candidates(graph: &ExtendedGraph, station: &Station, train: &Train, network: &Network) -> BTreeSet<VertexId> {
    graph.placements(station, train, network).into_iter().map(|p| p.vertex).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::load_instance;

    fn single_edge(length: f64, limit: f64, vmax: f64) -> Instance {
        let doc = format!(
            r#"{{
          "network": {{"vertices": ["a", "b"], "edges": [
            {{"id": "e", "from": "a", "to": "b", "length_m": {length}, "speed_limit_mps": {limit}}}]}},
          "trains": [{{"id": "t", "length_m": 10, "max_speed_mps": {vmax}, "acceleration_mps2": 1, "deceleration_mps2": 1}}],
          "demands": [{{"train": "t", "weight": 1, "entry_vertex": "a", "entry_window_s": [0, 1],
                       "exit_vertex": "b", "exit_window_s": [0, 1000]}}]
        }}"#
        );
        load_instance(&doc).unwrap()
    }

    fn graph(inst: &Instance, delta_v: f64) -> ExtendedGraph {
        let opts = GraphOptions { delta_v, v_floor: 0.5 };
        build_extended_graph(TrainId(0), &inst.trains[0], &inst.network, &opts).unwrap()
    }

    #[test]
    fn long_edge_admits_every_pair() {
        let inst = single_edge(1000.0, 10.0, 10.0);
        let g = graph(&inst, 5.0);
        assert_eq!(g.speed_sets[0].speeds, vec![0.0, 5.0, 10.0]);
        assert_eq!(g.speed_sets[1].speeds, vec![0.0, 5.0, 10.0]);
        assert_eq!(g.edges.len(), 9);
    }

    #[test]
    fn short_edge_keeps_only_reachable_pairs() {
        // |p2² − p1²| ≤ 2·1·10 = 20 holds only for equal speeds
        let inst = single_edge(10.0, 10.0, 10.0);
        let g = graph(&inst, 5.0);
        let mut pairs: Vec<(f64, f64)> = g.edges.iter().map(|e| (e.p1, e.p2)).collect();
        pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(pairs, vec![(0.0, 0.0), (5.0, 5.0), (10.0, 10.0)]);
    }

    #[test]
    fn train_cap_dominates_line_speed() {
        let inst = single_edge(1000.0, 10.0, 5.0);
        let g = graph(&inst, 5.0);
        assert_eq!(g.speed_sets[0].speeds, vec![0.0, 5.0]);
    }

    #[test]
    fn cap_is_inserted_off_grid() {
        let inst = single_edge(1000.0, 12.0, 40.0);
        let g = graph(&inst, 5.0);
        assert_eq!(g.speed_sets[0].speeds, vec![0.0, 5.0, 10.0, 12.0]);
    }

    #[test]
    fn entry_speed_is_added_and_graph_pruned() {
        let doc = r#"{
          "network": {"vertices": ["a", "b"], "edges": [
            {"id": "e", "from": "a", "to": "b", "length_m": 1000, "speed_limit_mps": 10}]},
          "trains": [{"id": "t", "length_m": 10, "max_speed_mps": 10, "acceleration_mps2": 1, "deceleration_mps2": 1}],
          "demands": [{"train": "t", "weight": 1, "entry_vertex": "a", "entry_speed_mps": 7,
                       "entry_window_s": [0, 1], "exit_vertex": "b", "exit_window_s": [0, 1000]}]
        }"#;
        let inst = load_instance(doc).unwrap();
        let g = build_for_demand(&inst, TrainId(0), &GraphOptions { delta_v: 5.0, v_floor: 0.5 }).unwrap();
        assert_eq!(g.speed_sets[0].speeds, vec![0.0, 5.0, 7.0, 10.0]);
        assert_eq!(g.edges.len(), 3);
        assert!(g.edges.iter().all(|e| e.p1 == 7.0));
    }

    #[test]
    fn unreachable_exit_is_empty_graph() {
        let doc = r#"{
          "network": {"vertices": ["a", "b", "c"], "edges": [
            {"id": "e", "from": "a", "to": "b", "length_m": 100, "speed_limit_mps": 10},
            {"id": "f", "from": "c", "to": "b", "length_m": 100, "speed_limit_mps": 10}]},
          "trains": [{"id": "t", "length_m": 10, "max_speed_mps": 10, "acceleration_mps2": 1, "deceleration_mps2": 1}],
          "demands": [{"train": "t", "weight": 1, "entry_vertex": "a",
                       "entry_window_s": [0, 1], "exit_vertex": "c", "exit_window_s": [0, 1000]}]
        }"#;
        let inst = load_instance(doc).unwrap();
        assert!(matches!(
            build_for_demand(&inst, TrainId(0), &GraphOptions::default()),
            Err(GraphError::EmptyGraph { .. })
        ));
    }

    fn platform(train_length: f64, single: bool) -> (Instance, ExtendedGraph) {
        let edges = if single {
            r#"{"id": "in", "from": "a", "to": "b", "length_m": 500, "speed_limit_mps": 10},
               {"id": "pa", "from": "b", "to": "c", "length_m": 200, "speed_limit_mps": 10, "stop_allowed": true}"#
        } else {
            r#"{"id": "in", "from": "a", "to": "b", "length_m": 500, "speed_limit_mps": 10},
               {"id": "pa", "from": "b", "to": "c", "length_m": 100, "speed_limit_mps": 10, "stop_allowed": true},
               {"id": "pb", "from": "c", "to": "d", "length_m": 100, "speed_limit_mps": 10, "stop_allowed": true}"#
        };
        let (verts, station, exit) = if single {
            (r#"["a", "b", "c"]"#, r#"["pa"]"#, "c")
        } else {
            (r#"["a", "b", "c", "d"]"#, r#"["pa", "pb"]"#, "d")
        };
        let doc = format!(
            r#"{{
          "network": {{"vertices": {verts}, "edges": [{edges}]}},
          "trains": [{{"id": "t", "length_m": {train_length}, "max_speed_mps": 10, "acceleration_mps2": 1, "deceleration_mps2": 1}}],
          "stations": [{{"name": "P", "edges": {station}}}],
          "demands": [{{"train": "t", "weight": 1, "entry_vertex": "a", "entry_window_s": [0, 1],
                       "exit_vertex": "{exit}", "exit_window_s": [0, 1000],
                       "stops": [{{"station": "P", "arrival_window_s": [0, 1000],
                                   "departure_window_s": [0, 1000], "min_dwell_s": 0}}]}}]
        }}"#
        );
        let inst = load_instance(&doc).unwrap();
        let g = build_for_demand(&inst, TrainId(0), &GraphOptions { delta_v: 5.0, v_floor: 0.5 }).unwrap();
        (inst, g)
    }

    #[test]
    fn stop_candidates_on_platforms() {
        let (inst, g) = platform(100.0, true);
        let c = inst.network.vertex_by_name("c").unwrap();
        assert_eq!(stop_candidates(&g, &inst.stations[0], &inst.trains[0], &inst.network), BTreeSet::from([c]));

        let (inst, g) = platform(150.0, false);
        let c = inst.network.vertex_by_name("c").unwrap();
        let d = inst.network.vertex_by_name("d").unwrap();
        assert_eq!(stop_candidates(&g, &inst.stations[0], &inst.trains[0], &inst.network), BTreeSet::from([d]));
        assert_eq!(g.stop_vertices[&0], BTreeSet::from([d]));

        let (inst, g) = platform(80.0, false);
        assert_eq!(
            stop_candidates(&g, &inst.stations[0], &inst.trains[0], &inst.network),
            BTreeSet::from([c, d])
        );
    }

    #[test]
    fn tau_fields_match_kinematics() {
        let inst = single_edge(180.0, 12.0, 14.0);
        let g = graph(&inst, 2.5);
        let e = &inst.network.edges[0];
        for x in &g.edges {
            let p = g.params(x.base_edge);
            let fresh = kinematics::min_traverse_time(e.length, x.p1, x.p2, p).unwrap();
            assert_eq!(fresh, x.tau_min);
            assert!(x.tau_min <= x.tau_max);
        }
    }

    #[test]
    fn halving_step_nests_speed_grids() {
        let inst = single_edge(60.0, 11.0, 30.0);
        let coarse = graph(&inst, 4.0);
        let fine = graph(&inst, 2.0);
        for (c, f) in coarse.speed_sets.iter().zip(&fine.speed_sets) {
            for s in &c.speeds {
                assert!(f.index_of(*s).is_some());
            }
        }
        for ce in &coarse.edges {
            assert!(fine.edges.iter().any(|fe| fe.p1 == ce.p1 && fe.p2 == ce.p2));
        }
        let bound: usize = coarse.speed_sets[0].speeds.len() * coarse.speed_sets[1].speeds.len();
        assert!(coarse.edges.len() <= bound);
    }
}
