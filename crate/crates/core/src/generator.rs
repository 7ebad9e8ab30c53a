//! Seeded random instances on three template networks.
//!
//! Train parameters are drawn from fixed ranges (length 50 to 200 m, top speed
//! 20 to 40 m/s, acceleration 0.3 to 1.0 m/s², braking 0.5 to 1.2 m/s²). Entry
//! windows are staggered over the horizon. Exit windows start at the
//! train's fastest isolated run, so every train is feasible on its own.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{
    load_instance, save_instance, DemandDoc, EdgeDoc, Instance, InstanceDoc, NetworkDoc, StationDoc, StopDoc, TrainDoc,
};
use crate::validator::fastest_single_train_time;
use crate::velocity_graph::{build_for_demand, GraphOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    /// Single-track line with a station in the middle.
    Line,
    /// Two parallel tracks joined by crossovers.
    Corridor,
    /// A trunk line splitting into two branches.
    YJunction,
}

impl Template {
    pub const ALL: [Template; 3] = [Template::Line, Template::Corridor, Template::YJunction];

    pub fn name(self) -> &'static str {
        match self {
            Template::Line => "line",
            Template::Corridor => "corridor",
            Template::YJunction => "y-junction",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Template::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown template `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub template: Template,
    pub trains: usize,
    /// Entry times spread over `[0, horizon]` seconds.
    pub horizon: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            template: Template::Corridor,
            trains: 10,
            horizon: 1800.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("could not place train {train} after {attempts} attempts")]
    GenerationFailure { train: usize, attempts: usize },
    #[error("invalid generator settings: {0}")]
    Config(String),
}

const MAX_ATTEMPTS: usize = 50;

struct Layout {
    network: NetworkDoc,
    stations: Vec<StationDoc>,
    /// (entry, exit, station to stop at) options for trains.
    journeys: Vec<(&'static str, &'static str, Option<&'static str>)>,
}

fn track(edges: &mut Vec<EdgeDoc>, a: &str, b: &str, length: f64, limit: f64, stop_allowed: bool) {
    let (fwd, bwd) = (format!("{a}-{b}"), format!("{b}-{a}"));
    edges.push(EdgeDoc {
        id: fwd.clone(),
        from: a.into(),
        to: b.into(),
        length_m: length,
        speed_limit_mps: limit,
        stop_allowed,
        reverse_of: Some(bwd.clone()),
    });
    edges.push(EdgeDoc {
        id: bwd,
        from: b.into(),
        to: a.into(),
        length_m: length,
        speed_limit_mps: limit,
        stop_allowed,
        reverse_of: Some(fwd),
    });
}

fn layout(template: Template) -> Layout {
    let mut edges = Vec::new();
    let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    match template {
        Template::Line => {
            track(&mut edges, "w", "a", 1500.0, 30.0, false);
            track(&mut edges, "a", "b", 400.0, 20.0, true);
            track(&mut edges, "b", "e", 1500.0, 30.0, false);
            Layout {
                network: NetworkDoc {
                    vertices: names(&["w", "a", "b", "e"]),
                    edges,
                },
                stations: vec![StationDoc {
                    name: "central".into(),
                    edges: vec!["a-b".into(), "b-a".into()],
                }],
                journeys: vec![("w", "e", None), ("e", "w", None), ("w", "e", Some("central")), ("e", "w", Some("central"))],
            }
        }
        Template::Corridor => {
            for i in 0..4 {
                track(&mut edges, &format!("u{i}"), &format!("u{}", i + 1), 1000.0, 30.0, false);
                track(&mut edges, &format!("d{i}"), &format!("d{}", i + 1), 1000.0, 30.0, false);
            }
            track(&mut edges, "u1", "d2", 1000.0, 15.0, false);
            track(&mut edges, "d2", "u3", 1000.0, 15.0, false);
            Layout {
                network: NetworkDoc {
                    vertices: names(&["u0", "u1", "u2", "u3", "u4", "d0", "d1", "d2", "d3", "d4"]),
                    edges,
                },
                stations: Vec::new(),
                journeys: vec![("u0", "u4", None), ("d4", "d0", None), ("u0", "d4", None), ("d4", "u0", None)],
            }
        }
        Template::YJunction => {
            track(&mut edges, "s", "j0", 1200.0, 30.0, false);
            track(&mut edges, "j0", "j", 800.0, 25.0, false);
            track(&mut edges, "j", "n1", 1000.0, 25.0, false);
            track(&mut edges, "j", "m1", 1000.0, 20.0, false);
            Layout {
                network: NetworkDoc {
                    vertices: names(&["s", "j0", "j", "n1", "m1"]),
                    edges,
                },
                stations: Vec::new(),
                journeys: vec![("s", "n1", None), ("s", "m1", None), ("n1", "s", None), ("m1", "s", None)],
            }
        }
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Builds a random instance. Equal configurations give equal instances.
pub fn generate(config: &GeneratorConfig) -> Result<Instance, GeneratorError> {
    if config.trains == 0 {
        return Err(GeneratorError::Config("at least one train is needed".into()));
    }
    if !(config.horizon > 0.0) {
        return Err(GeneratorError::Config("horizon must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let Layout {
        network,
        stations,
        journeys,
    } = layout(config.template);
    let mut doc = InstanceDoc {
        network,
        trains: Vec::new(),
        stations,
        demands: Vec::new(),
    };
    let slot = config.horizon / config.trains as f64;
    for k in 0..config.trains {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let train = TrainDoc {
                id: format!("t{k:02}"),
                length_m: (rng.gen_range(50.0..200.0_f64) / 10.0).round() * 10.0,
                max_speed_mps: rng.gen_range(20..=40) as f64,
                acceleration_mps2: round1(rng.gen_range(0.3..1.0)),
                deceleration_mps2: round1(rng.gen_range(0.5..1.2)),
            };
            let &(entry, exit, stop) = journeys.choose(&mut rng).expect("journeys");
            let start = round1(k as f64 * slot + rng.gen_range(0.0..slot.max(1e-9)));
            let entry_speed = if rng.gen_bool(0.5) { 0.0 } else { 10.0 };
            let dwell = round1(rng.gen_range(20.0..60.0));
            let mut demand = DemandDoc {
                train: train.id.clone(),
                weight: rng.gen_range(1..=3) as f64,
                entry_vertex: entry.into(),
                entry_speed_mps: entry_speed,
                entry_window_s: [start, start + round1(0.5 * config.horizon)],
                exit_vertex: exit.into(),
                exit_window_s: [0.0, 0.0],
                stops: stop
                    .map(|s| StopDoc {
                        station: s.into(),
                        arrival_window_s: [0.0, 0.0],
                        departure_window_s: [0.0, 0.0],
                        min_dwell_s: dwell,
                    })
                    .into_iter()
                    .collect(),
            };
            // probe with open windows to find the isolated fastest run
            let far = start + 10.0 * config.horizon + 1e5;
            demand.exit_window_s = [0.0, far];
            for s in &mut demand.stops {
                s.arrival_window_s = [0.0, far];
                s.departure_window_s = [0.0, far];
            }
            let mut probe = doc.clone();
            probe.trains.push(train.clone());
            probe.demands.push(demand.clone());
            let Some(fastest) = fastest_for_last(&probe) else {
                continue;
            };
            let earliest = (start + fastest).ceil();
            let slack = (2.0 * config.horizon).ceil();
            demand.exit_window_s = [earliest, earliest + slack];
            for s in &mut demand.stops {
                s.arrival_window_s = [start, earliest + slack];
                s.departure_window_s = [start, earliest + slack];
            }
            doc.trains.push(train);
            doc.demands.push(demand);
            placed = true;
            break;
        }
        if !placed {
            return Err(GeneratorError::GenerationFailure {
                train: k,
                attempts: MAX_ATTEMPTS,
            });
        }
    }
    let text = serde_json::to_string(&doc).expect("document serializes");
    Ok(load_instance(&text).expect("generated instance is valid"))
}

fn fastest_for_last(doc: &InstanceDoc) -> Option<f64> {
    let instance = load_instance(&serde_json::to_string(doc).ok()?).ok()?;
    let t = instance.train_ids().last()?;
    let graph = build_for_demand(&instance, t, &GraphOptions::default()).ok()?;
    fastest_single_train_time(&instance, &graph).ok()
}

/// [`generate`] rendered as an instance document.
pub fn generate_json(config: &GeneratorConfig) -> Result<String, GeneratorError> {
    generate(config).map(|i| save_instance(&i))
}
