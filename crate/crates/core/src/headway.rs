//! Moving-block separation between trains.
//!
//! Same direction: when a follower reaches the tail of a shared edge at
//! speed `p`, the leader's rear must already be a braking distance (plus
//! buffer) ahead along the leader's route. Opposite direction: trains on a
//! bidirectional track segment use it one after the other, like a block
//! section.

use std::collections::{BTreeMap, HashSet};

use crate::backend::RowSense;
use crate::instance::{EdgeId, Instance, Network, TrainId, VertexId};
use crate::kinematics;
use crate::milp::{implication, passage_rows, passages, Bound, Guard, LinearConstraint, ModelError, Tag, VarKey};
use crate::velocity_graph::ExtendedGraph;

/// A maximal chain of bidirectional tracks whose interior vertices join
/// exactly two tracks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackSegment {
    pub id: usize,
    pub vertices: Vec<VertexId>,
    /// `forward[i]` runs `vertices[i] → vertices[i + 1]`.
    pub forward: Vec<EdgeId>,
    /// `backward[i]` runs `vertices[i + 1] → vertices[i]`.
    pub backward: Vec<EdgeId>,
}

impl TrackSegment {
    /// Edges in travel order for one direction.
    pub fn travel_order(&self, forward: bool) -> Vec<EdgeId> {
        if forward {
            self.forward.clone()
        } else {
            self.backward.iter().rev().copied().collect()
        }
    }
}

fn track_key(net: &Network, e: EdgeId) -> EdgeId {
    net.edge(e).reverse_of.map_or(e, |r| r.min(e))
}

fn tracks_at(net: &Network, v: VertexId) -> Vec<EdgeId> {
    let mut keys: Vec<EdgeId> = net
        .out_edges(v)
        .iter()
        .chain(net.in_edges(v))
        .map(|&e| track_key(net, e))
        .collect();
    keys.sort();
    keys.dedup();
    keys
}

/// Splits the network's bidirectional tracks into segments, numbered by
/// their smallest edge id.
pub fn track_segments(net: &Network) -> Vec<TrackSegment> {
    let paired = |k: EdgeId| net.edge(k).reverse_of.is_some();
    let interior = |v: VertexId| {
        let t = tracks_at(net, v);
        t.len() == 2 && t.iter().all(|&k| paired(k))
    };
    let edge_between = |a: VertexId, b: VertexId| {
        net.out_edges(a)
            .iter()
            .copied()
            .find(|&e| net.edge(e).to == b && net.edge(e).reverse_of.is_some())
            .expect("paired edge")
    };
    let other_end = |k: EdgeId, v: VertexId| {
        let e = net.edge(k);
        if e.from == v {
            e.to
        } else {
            e.from
        }
    };
    let mut seen: HashSet<EdgeId> = HashSet::new();
    let mut segments = Vec::new();
    for (i, e) in net.edges.iter().enumerate() {
        let k = EdgeId(i);
        if e.reverse_of.is_none() || track_key(net, k) != k || seen.contains(&k) {
            continue;
        }
        seen.insert(k);
        let mut verts = std::collections::VecDeque::from([e.from, e.to]);
        // extend at the back, then at the front
        for at_back in [true, false] {
            let mut last_key = k;
            loop {
                let v = if at_back { *verts.back().unwrap() } else { *verts.front().unwrap() };
                if !interior(v) {
                    break;
                }
                let next = tracks_at(net, v).into_iter().find(|&t| t != last_key).expect("two tracks");
                if !seen.insert(next) {
                    break;
                }
                let w = other_end(next, v);
                if at_back {
                    verts.push_back(w);
                } else {
                    verts.push_front(w);
                }
                last_key = next;
            }
        }
        let vertices: Vec<VertexId> = verts.into_iter().collect();
        let forward: Vec<EdgeId> = vertices.windows(2).map(|w| edge_between(w[0], w[1])).collect();
        let backward: Vec<EdgeId> = vertices.windows(2).map(|w| edge_between(w[1], w[0])).collect();
        segments.push(TrackSegment {
            id: segments.len(),
            vertices,
            forward,
            backward,
        });
    }
    segments
}

/// Options shared by every headway row generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadwayOptions {
    /// Extra clearance in meters on top of the braking distance.
    pub buffer: f64,
    pub max_paths: usize,
}

impl Default for HeadwayOptions {
    fn default() -> Self {
        Self {
            buffer: 0.0,
            max_paths: 64,
        }
    }
}

/// A generated row with the leader edges it is conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadwayRow {
    pub row: LinearConstraint,
    pub leader_path: Vec<EdgeId>,
}

fn order(follower: TrainId, leader: TrainId, edge: EdgeId) -> VarKey {
    VarKey::Order { follower, leader, edge }
}

fn route(train: TrainId, edge: EdgeId) -> VarKey {
    VarKey::Route { train, edge }
}

/// Ordering side conditions for trains `a < b` on `edge`: exactly one order
/// when both use the edge, none otherwise, and the same order as on the
/// shared edge they came from.
pub fn ordering_rows(instance: &Instance, graphs: &[ExtendedGraph], a: TrainId, b: TrainId, edge: EdgeId) -> Vec<LinearConstraint> {
    let (oab, oba) = (order(a, b, edge), order(b, a, edge));
    let mut rows = vec![
        LinearConstraint::new(
            Tag::OrderCover { a, b, edge },
            [(oab, 1.0), (oba, 1.0), (route(a, edge), -1.0), (route(b, edge), -1.0)],
            RowSense::Ge,
            -1.0,
        ),
        LinearConstraint::new(Tag::OrderExclusive { a, b, edge }, [(oab, 1.0), (oba, 1.0)], RowSense::Le, 1.0),
    ];
    for (f, l) in [(a, b), (b, a)] {
        for (of_leader, t) in [(false, f), (true, l)] {
            rows.push(LinearConstraint::new(
                Tag::OrderUses { follower: f, leader: l, edge, of_leader },
                [(order(f, l, edge), 1.0), (route(t, edge), -1.0)],
                RowSense::Le,
                0.0,
            ));
        }
    }
    let net = &instance.network;
    let tail = net.edge(edge).from;
    let (ga, gb) = (&graphs[a.0], &graphs[b.0]);
    for &prev in net.in_edges(tail) {
        if !(ga.uses_edge(prev) && gb.uses_edge(prev)) || net.edge(edge).reverse_of == Some(prev) {
            continue;
        }
        for (f, l) in [(a, b), (b, a)] {
            rows.push(LinearConstraint::new(
                Tag::OrderChain { follower: f, leader: l, from: prev, to: edge },
                [
                    (order(f, l, edge), 1.0),
                    (order(f, l, prev), -1.0),
                    (route(f, edge), -1.0),
                    (route(l, edge), -1.0),
                ],
                RowSense::Ge,
                -2.0,
            ));
        }
    }
    rows
}

/// Braking distance plus buffer for the follower leaving `u` over `edge`
/// with speed index `speed`.
pub fn clearance_distance(instance: &Instance, graph: &ExtendedGraph, edge: EdgeId, speed: usize, buffer: f64) -> f64 {
    let u = instance.network.edge(edge).from;
    let p = graph.speed_set(u).speeds[speed];
    let decel = instance.train(graph.train).deceleration;
    kinematics::braking_distance(p, decel).expect("valid speed") + buffer
}

/// Same-direction rows for `follower` behind `leader` on `edge`.
///
/// With `speed = None` rows for every follower speed at the edge's tail are
/// produced. Each row is gated on the order variable, on the follower
/// leaving the tail at that speed and on the leader using the covered edges.
/// A final row keeps the follower from reaching the edge's head before the
/// leader's rear has left it.
pub fn same_direction_rows(
    instance: &Instance,
    graphs: &[ExtendedGraph],
    follower: TrainId,
    leader: TrainId,
    edge: EdgeId,
    speed: Option<usize>,
    options: &HeadwayOptions,
) -> Result<Vec<HeadwayRow>, ModelError> {
    let (gf, gl) = (&graphs[follower.0], &graphs[leader.0]);
    if follower == leader || !gf.uses_edge(edge) || !gl.uses_edge(edge) {
        return Ok(Vec::new());
    }
    let net = &instance.network;
    let (u, v) = (net.edge(edge).from, net.edge(edge).to);
    let o = order(follower, leader, edge);
    let arrival = [(VarKey::FrontArrival { train: follower, vertex: u }, 1.0)];
    let leader_len = instance.train(leader).length;

    let mut by_speed: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in gf.on_edge(edge) {
        by_speed.entry(gf.edges[i].from_speed).or_default().push(i);
    }
    let mut out = Vec::new();
    for (&p, exts) in &by_speed {
        if speed.is_some_and(|s| s != p) {
            continue;
        }
        let at_speed = Guard::sum(exts.iter().map(|&i| VarKey::Ext { train: follower, ext: i }));
        let guards = [Guard::var(o), at_speed];
        let dist = clearance_distance(instance, gf, edge, p, options.buffer);
        let tag = |path: usize, bound: Bound| Tag::Headway { follower, leader, edge, speed: p, path, bound };
        if dist <= 1e-12 {
            let body = vec![arrival[0], (VarKey::RearDeparture { train: leader, vertex: u }, -1.0)];
            out.push(HeadwayRow {
                row: implication(instance, tag(0, Bound::FromTail), body, RowSense::Ge, 0.0, &guards),
                leader_path: vec![edge],
            });
            continue;
        }
        let paths = passages(instance, gl, u, Some(edge), dist + leader_len, options.max_paths).ok_or_else(|| {
            ModelError::EnumerationLimitExceeded {
                train: instance.train(leader).id.clone(),
                vertex: net.vertex_name(u).to_string(),
                limit: options.max_paths,
            }
        })?;
        for (k, path) in paths.iter().enumerate() {
            for row in passage_rows(instance, gl, path, &arrival, &guards, |b| tag(k, b)) {
                out.push(HeadwayRow {
                    row,
                    leader_path: path.edges.clone(),
                });
            }
        }
    }
    if speed.is_none() || !out.is_empty() {
        let body = vec![
            (VarKey::FrontArrival { train: follower, vertex: v }, 1.0),
            (VarKey::RearDeparture { train: leader, vertex: v }, -1.0),
        ];
        let tag = Tag::Clearance { follower, leader, edge };
        out.push(HeadwayRow {
            row: implication(instance, tag, body, RowSense::Ge, 0.0, &[Guard::var(o)]),
            leader_path: vec![edge],
        });
    }
    Ok(out)
}

/// Entry guards (edge, guard) for a train running a segment in one
/// direction: the edge is used while its predecessor in the segment is not.
fn entries(graph: &ExtendedGraph, train: TrainId, order: &[EdgeId]) -> Vec<(EdgeId, Guard)> {
    let mut out = Vec::new();
    for (i, &e) in order.iter().enumerate() {
        if !graph.uses_edge(e) {
            continue;
        }
        let mut g = Guard::var(route(train, e));
        if i > 0 && graph.uses_edge(order[i - 1]) {
            g.terms.push((route(train, order[i - 1]), -1.0));
        }
        out.push((e, g));
    }
    out
}

fn exits(graph: &ExtendedGraph, train: TrainId, order: &[EdgeId]) -> Vec<(EdgeId, Guard)> {
    let mut out = Vec::new();
    for (i, &e) in order.iter().enumerate() {
        if !graph.uses_edge(e) {
            continue;
        }
        let mut g = Guard::var(route(train, e));
        if i + 1 < order.len() && graph.uses_edge(order[i + 1]) {
            g.terms.push((route(train, order[i + 1]), -1.0));
        }
        out.push((e, g));
    }
    out
}

/// Opposite-direction rows for trains `a` and `b` on `segment`, one per
/// direction, order, entry edge of the later train and exit edge of the
/// earlier one.
pub fn opposite_direction_rows(
    instance: &Instance,
    graphs: &[ExtendedGraph],
    a: TrainId,
    b: TrainId,
    segment: &TrackSegment,
) -> Vec<LinearConstraint> {
    let (first, second) = if a < b { (a, b) } else { (b, a) };
    let q = VarKey::SegmentOrder { first, second, segment: segment.id };
    let net = &instance.network;
    let mut out = Vec::new();
    for first_forward in [true, false] {
        let first_order = segment.travel_order(first_forward);
        let second_order = segment.travel_order(!first_forward);
        for first_goes_first in [true, false] {
            // `lead` clears the segment before `lag` enters it
            let (lead, lag, lead_order, lag_order, q_guard) = if first_goes_first {
                (first, second, &first_order, &second_order, Guard::var(q))
            } else {
                (second, first, &second_order, &first_order, Guard::not(q))
            };
            for (entry, entry_guard) in entries(&graphs[lag.0], lag, lag_order) {
                for (exit, exit_guard) in exits(&graphs[lead.0], lead, lead_order) {
                    let body = vec![
                        (VarKey::FrontArrival { train: lag, vertex: net.edge(entry).from }, 1.0),
                        (VarKey::RearDeparture { train: lead, vertex: net.edge(exit).to }, -1.0),
                    ];
                    let tag = Tag::Opposite { first, second, segment: segment.id, entry, exit, first_goes_first };
                    let guards = [q_guard.clone(), entry_guard.clone(), exit_guard];
                    out.push(implication(instance, tag, body, RowSense::Ge, 0.0, &guards));
                }
            }
        }
    }
    out
}

/// Whether two trains could meet head-on on `segment`.
pub fn may_oppose(graphs: &[ExtendedGraph], a: TrainId, b: TrainId, segment: &TrackSegment) -> bool {
    let uses = |t: TrainId, es: &[EdgeId]| es.iter().any(|&e| graphs[t.0].uses_edge(e));
    (uses(a, &segment.forward) && uses(b, &segment.backward)) || (uses(a, &segment.backward) && uses(b, &segment.forward))
}

/// Every headway row of the eager model: same-direction rows for each
/// ordered pair and shared edge, ordering side conditions, and
/// opposite-direction rows for each pair and segment.
pub fn enumerate_all_headway_constraints(
    instance: &Instance,
    graphs: &[ExtendedGraph],
    segments: &[TrackSegment],
    options: &HeadwayOptions,
) -> Result<Vec<LinearConstraint>, ModelError> {
    let n = graphs.len();
    let mut out = Vec::new();
    for e in 0..instance.network.edges.len() {
        let e = EdgeId(e);
        for a in 0..n {
            for b in a + 1..n {
                let (a, b) = (TrainId(a), TrainId(b));
                if !(graphs[a.0].uses_edge(e) && graphs[b.0].uses_edge(e)) {
                    continue;
                }
                out.extend(ordering_rows(instance, graphs, a, b, e));
                for (f, l) in [(a, b), (b, a)] {
                    out.extend(same_direction_rows(instance, graphs, f, l, e, None, options)?.into_iter().map(|r| r.row));
                }
            }
        }
    }
    for s in segments {
        for a in 0..n {
            for b in a + 1..n {
                let (a, b) = (TrainId(a), TrainId(b));
                if may_oppose(graphs, a, b, s) {
                    out.extend(opposite_direction_rows(instance, graphs, a, b, s));
                }
            }
        }
    }
    Ok(out)
}
