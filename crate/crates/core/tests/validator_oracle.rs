use std::fs;
use std::sync::OnceLock;

use proptest::prelude::*;

use mbr_core::instance::{load_instance, Instance};
use mbr_core::lazy::{solve_iteratively, SolveConfig, Strategy};
use mbr_core::schedule::Schedule;
use mbr_core::validator::{verify_schedule, ValidatorConfig, ViolationKind};

fn solved(name: &str) -> (Instance, Schedule) {
    let path = format!("{}/../../fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"));
    let instance = load_instance(&fs::read_to_string(path).unwrap()).unwrap();
    let config = SolveConfig { strategy: Strategy::AdjacentViolated, gap_abs: 0.0, delta_v: 10.0, ..Default::default() };
    let schedule = solve_iteratively(&instance, &config).unwrap().schedule.unwrap();
    (instance, schedule)
}

fn line() -> &'static (Instance, Schedule) {
    static CELL: OnceLock<(Instance, Schedule)> = OnceLock::new();
    CELL.get_or_init(|| solved("line_two_trains"))
}

fn shift(schedule: &mut Schedule, train: usize, from: usize, by: f64) {
    let t = &mut schedule.trains[train];
    for k in from..t.arrival.len() {
        if k > from {
            t.arrival[k] += by;
        }
        t.departure[k] += by;
        t.rear_departure[k] += by;
    }
    if from == 0 {
        t.arrival[0] += by;
    }
}

/// Index of the train that enters second.
fn follower(schedule: &Schedule) -> usize {
    if schedule.trains[0].arrival[0] <= schedule.trains[1].arrival[0] {
        1
    } else {
        0
    }
}

#[test]
fn solved_schedule_is_clean() {
    let (instance, schedule) = line();
    assert!(verify_schedule(instance, schedule, &ValidatorConfig::default()).is_empty());
}

#[test]
fn follower_five_seconds_early_is_a_headway_violation() {
    let (instance, schedule) = line();
    let mut s = schedule.clone();
    let f = follower(&s);
    shift(&mut s, f, 0, -5.0);
    let report = verify_schedule(instance, &s, &ValidatorConfig::default());
    let headway: Vec<_> = report.entries.iter().filter(|v| v.kind == ViolationKind::Headway).collect();
    assert!(!headway.is_empty(), "{}", report.to_json());
    let worst = headway.iter().map(|v| v.magnitude).fold(0.0, f64::max);
    assert!((worst - 5.0).abs() < 0.5, "magnitude {worst}");
}

#[test]
fn halved_gap_is_a_kinematics_violation() {
    let (instance, schedule) = line();
    let mut s = schedule.clone();
    let t = &s.trains[0];
    let gap = t.arrival[1] - t.departure[0];
    shift(&mut s, 0, 1, -0.5 * gap);
    s.trains[0].arrival[1] -= 0.5 * gap;
    let report = verify_schedule(instance, &s, &ValidatorConfig::default());
    assert!(report.count(ViolationKind::Kinematics) >= 1, "{}", report.to_json());
}

#[test]
fn schedule_json_round_trip() {
    let (instance, schedule) = line();
    let back = Schedule::from_json(instance, &schedule.to_json(instance)).unwrap();
    assert_eq!(back.to_json(instance), schedule.to_json(instance));
    assert!(verify_schedule(instance, &back, &ValidatorConfig::default()).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Separation depends only on relative timing, so shifting every train
    // by the same amount keeps it.
    #[test]
    fn common_shift_keeps_separation(by in 0.0..200.0_f64) {
        let (instance, schedule) = line();
        let mut s = schedule.clone();
        for t in 0..s.trains.len() {
            shift(&mut s, t, 0, by);
        }
        let report = verify_schedule(instance, &s, &ValidatorConfig::default());
        for kind in [ViolationKind::Headway, ViolationKind::Kinematics, ViolationKind::OppositeDirection, ViolationKind::Routing] {
            prop_assert_eq!(report.count(kind), 0, "{}", report.to_json());
        }
    }

    #[test]
    fn pulling_the_follower_forward_is_never_clean(by in 5.0..40.0_f64) {
        let (instance, schedule) = line();
        let mut s = schedule.clone();
        let f = follower(&s);
        shift(&mut s, f, 0, -by);
        prop_assert!(!verify_schedule(instance, &s, &ValidatorConfig::default()).is_empty());
    }
}
