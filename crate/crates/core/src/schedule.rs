//! Decoded schedules and their JSON document form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{EdgeId, Instance, TrainId, VertexId};

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("malformed schedule document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown {what} `{name}`")]
    Unknown { what: &'static str, name: String },
    #[error("train `{train}`: {message}")]
    Shape { train: String, message: String },
}

/// Movement of one train. Per-vertex vectors are aligned with `vertices`,
/// which lists the route's vertices from entry to exit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub train: TrainId,
    pub route: Vec<EdgeId>,
    pub vertices: Vec<VertexId>,
    pub speeds: Vec<f64>,
    /// Front arrival.
    pub arrival: Vec<f64>,
    /// Front departure.
    pub departure: Vec<f64>,
    pub rear_departure: Vec<f64>,
    /// Vertex chosen for each requested stop, if any was decoded.
    pub stops: Vec<Option<VertexId>>,
}

impl TrainSchedule {
    pub fn position(&self, v: VertexId) -> Option<usize> {
        self.vertices.iter().position(|&w| w == v)
    }

    pub fn uses_edge(&self, e: EdgeId) -> bool {
        self.route.contains(&e)
    }

    pub fn exit_time(&self) -> f64 {
        *self.rear_departure.last().expect("non-empty route")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub objective: f64,
    pub trains: Vec<TrainSchedule>,
}

impl Schedule {
    pub fn train(&self, t: TrainId) -> &TrainSchedule {
        &self.trains[t.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleDoc {
    pub objective: f64,
    pub trains: Vec<TrainScheduleDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainScheduleDoc {
    pub train: String,
    pub route: Vec<String>,
    #[serde(default)]
    pub stops: Vec<StopDoc>,
    pub timeline: Vec<TimelineDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopDoc {
    pub station: String,
    pub vertex: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineDoc {
    pub vertex: String,
    pub speed_mps: f64,
    pub arrival_s: f64,
    pub departure_s: f64,
    pub rear_departure_s: f64,
}

impl Schedule {
    pub fn to_doc(&self, instance: &Instance) -> ScheduleDoc {
        let net = &instance.network;
        ScheduleDoc {
            objective: self.objective,
            trains: self
                .trains
                .iter()
                .map(|s| {
                    let demand = instance.demand(s.train);
                    TrainScheduleDoc {
                        train: instance.train(s.train).id.clone(),
                        route: s.route.iter().map(|&e| net.edge(e).id.clone()).collect(),
                        stops: demand
                            .stops
                            .iter()
                            .zip(&s.stops)
                            .map(|(req, v)| StopDoc {
                                station: instance.stations[req.station].name.clone(),
                                vertex: v.map(|v| net.vertex_name(v).to_string()),
                            })
                            .collect(),
                        timeline: (0..s.vertices.len())
                            .map(|i| TimelineDoc {
                                vertex: net.vertex_name(s.vertices[i]).to_string(),
                                speed_mps: s.speeds[i],
                                arrival_s: s.arrival[i],
                                departure_s: s.departure[i],
                                rear_departure_s: s.rear_departure[i],
                            })
                            .collect(),
                    }
                })
                .collect(),
        }
    }

    pub fn to_json(&self, instance: &Instance) -> String {
        serde_json::to_string_pretty(&self.to_doc(instance)).expect("schedule serializes")
    }

    /// Resolves names against `instance`. Trains come back in instance
    /// order; every train needs exactly one entry.
    pub fn from_doc(instance: &Instance, doc: &ScheduleDoc) -> Result<Self, ScheduleError> {
        let net = &instance.network;
        let mut slots: Vec<Option<TrainSchedule>> = vec![None; instance.trains.len()];
        for t in &doc.trains {
            let train = instance.train_by_name(&t.train).ok_or_else(|| ScheduleError::Unknown {
                what: "train",
                name: t.train.clone(),
            })?;
            let shape = |message: &str| ScheduleError::Shape {
                train: t.train.clone(),
                message: message.to_string(),
            };
            let route = t
                .route
                .iter()
                .map(|n| net.edge_by_name(n).ok_or_else(|| ScheduleError::Unknown { what: "edge", name: n.clone() }))
                .collect::<Result<Vec<_>, _>>()?;
            let vertices = t
                .timeline
                .iter()
                .map(|p| {
                    net.vertex_by_name(&p.vertex).ok_or_else(|| ScheduleError::Unknown {
                        what: "vertex",
                        name: p.vertex.clone(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if vertices.len() != route.len() + 1 {
                return Err(shape("timeline needs one entry per route vertex"));
            }
            let stops = t
                .stops
                .iter()
                .map(|s| match &s.vertex {
                    None => Ok(None),
                    Some(n) => net
                        .vertex_by_name(n)
                        .map(Some)
                        .ok_or_else(|| ScheduleError::Unknown { what: "vertex", name: n.clone() }),
                })
                .collect::<Result<Vec<_>, _>>()?;
            if slots[train.0].is_some() {
                return Err(shape("listed twice"));
            }
            slots[train.0] = Some(TrainSchedule {
                train,
                route,
                vertices,
                speeds: t.timeline.iter().map(|p| p.speed_mps).collect(),
                arrival: t.timeline.iter().map(|p| p.arrival_s).collect(),
                departure: t.timeline.iter().map(|p| p.departure_s).collect(),
                rear_departure: t.timeline.iter().map(|p| p.rear_departure_s).collect(),
                stops,
            });
        }
        let trains = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                s.ok_or_else(|| ScheduleError::Shape {
                    train: instance.trains[i].id.clone(),
                    message: "missing from schedule".into(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            objective: doc.objective,
            trains,
        })
    }

    pub fn from_json(instance: &Instance, text: &str) -> Result<Self, ScheduleError> {
        Self::from_doc(instance, &serde_json::from_str(text)?)
    }
}
