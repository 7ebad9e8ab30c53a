use proptest::prelude::*;

use mbr_core::kinematics::{
    braking_distance, feasible_transition, max_time_over_interval, max_traverse_time, min_time_over_interval,
    min_traverse_time, KinematicParams,
};

prop_compose! {
    fn case()(v_max in 10.0..40.0_f64, a in 0.2..1.5_f64, b in 0.2..1.5_f64, f1 in 0.0..1.0_f64, f2 in 0.0..1.0_f64,
              extra in 1.0..500.0_f64, s in 0.0..1.0_f64, u in 0.0..1.0_f64)
        -> (KinematicParams, f64, f64, f64, f64, f64)
    {
        let p = KinematicParams::new(v_max, a, b, 0.5).unwrap();
        let (v1, v2) = (f1 * v_max, f2 * v_max);
        let rate = if v2 > v1 { a } else { b };
        let length = (v2 * v2 - v1 * v1).abs() / (2.0 * rate) + extra;
        let (x, y) = (s * length, u * length);
        (p, length, v1, v2, x.min(y), x.max(y))
    }
}

proptest! {
    #[test]
    fn min_never_exceeds_max((p, l, v1, v2, _, _) in case()) {
        prop_assert!(feasible_transition(l, v1, v2, &p).unwrap());
        let lo = min_traverse_time(l, v1, v2, &p).unwrap();
        let hi = max_traverse_time(l, v1, v2, false, &p).unwrap();
        prop_assert!(lo <= hi + 1e-9, "{lo} > {hi}");
        prop_assert!(lo >= l / p.v_max - 1e-9);
    }

    #[test]
    fn interval_times_add_up((p, l, v1, v2, x, y) in case()) {
        let whole = min_traverse_time(l, v1, v2, &p).unwrap();
        let parts = min_time_over_interval(l, v1, v2, 0.0, x, &p).unwrap()
            + min_time_over_interval(l, v1, v2, x, y, &p).unwrap()
            + min_time_over_interval(l, v1, v2, y, l, &p).unwrap();
        prop_assert!((whole - parts).abs() < 1e-6 * whole.max(1.0));
        if v1 > 0.0 && v2 > 0.0 {
            let whole = max_traverse_time(l, v1, v2, false, &p).unwrap();
            let parts = max_time_over_interval(l, v1, v2, 0.0, x, false, &p).unwrap()
                + max_time_over_interval(l, v1, v2, x, y, false, &p).unwrap()
                + max_time_over_interval(l, v1, v2, y, l, false, &p).unwrap();
            prop_assert!((whole - parts).abs() < 1e-6 * whole.max(1.0));
        }
    }

    #[test]
    fn braking_distance_is_quadratic(v in 0.0..50.0_f64, b in 0.1..2.0_f64, k in 1.0..3.0_f64) {
        let d = braking_distance(v, b).unwrap();
        prop_assert!((braking_distance(k * v, b).unwrap() - k * k * d).abs() < 1e-9 * (1.0 + d * k * k));
        prop_assert!(braking_distance(v, k * b).unwrap() <= d + 1e-12);
    }
}
