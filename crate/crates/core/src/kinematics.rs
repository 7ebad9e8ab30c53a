//! Travel-time and braking-distance oracle for trapezoidal speed profiles.
//!
//! A train accelerates at a constant rate `accel`, brakes at a constant rate
//! `decel` and never exceeds `v_max`. Every bounding profile between two
//! speeds is described in position space: the squared speed `v(x)²` is a
//! minimum/maximum of straight lines in `x` (constant-rate segments are
//! linear in `v²`). The time between two positions is then a sum of closed
//! form integrals of `1/v` over the linear pieces.
//!
//! * the fastest profile rides the upper envelope
//!   `min(v1² + 2·a·x, v2² + 2·b·(L−x), v_max²)`;
//! * the slowest non-stopping profile rides
//!   `min(upper, max(v1² − 2·b·x, v2² − 2·a·(L−x), v_floor²))`.

use thiserror::Error;

const EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum KinematicsError {
    #[error("invalid kinematic input: {0}")]
    Domain(String),
    #[error("cannot change speed from {v1} to {v2} m/s within {length} m")]
    InfeasibleTransition { length: f64, v1: f64, v2: f64 },
}

/// Rates of one train on one edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicParams {
    pub v_max: f64,
    pub accel: f64,
    pub decel: f64,
    /// Lowest speed of a maximal-time profile on an edge where stopping is not allowed.
    pub v_floor: f64,
}

impl KinematicParams {
    pub const DEFAULT_V_FLOOR: f64 = 0.5;

    pub fn new(v_max: f64, accel: f64, decel: f64, v_floor: f64) -> Result<Self, KinematicsError> {
        let p = Self {
            v_max,
            accel,
            decel,
            v_floor,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), KinematicsError> {
        let all_positive = [self.v_max, self.accel, self.decel, self.v_floor]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !all_positive {
            return Err(KinematicsError::Domain(format!("parameters must be positive: {self:?}")));
        }
        if self.v_floor >= self.v_max {
            return Err(KinematicsError::Domain(format!(
                "v_floor {} must be below v_max {}",
                self.v_floor, self.v_max
            )));
        }
        Ok(())
    }
}

/// `v² / (2·decel)`.
pub fn braking_distance(v: f64, decel: f64) -> Result<f64, KinematicsError> {
    if !(decel > 0.0) {
        return Err(KinematicsError::Domain(format!("deceleration must be positive, got {decel}")));
    }
    if !(v >= 0.0) {
        return Err(KinematicsError::Domain(format!("speed must be >= 0, got {v}")));
    }
    Ok(v * v / (2.0 * decel))
}

fn check_speeds(length: f64, v1: f64, v2: f64, params: &KinematicParams) -> Result<(), KinematicsError> {
    params.validate()?;
    if !(length > 0.0 && length.is_finite()) {
        return Err(KinematicsError::Domain(format!("length must be positive, got {length}")));
    }
    for v in [v1, v2] {
        if !(v >= 0.0) || v > params.v_max * (1.0 + EPS) + EPS {
            return Err(KinematicsError::Domain(format!(
                "speed {v} outside [0, {}]",
                params.v_max
            )));
        }
    }
    Ok(())
}

/// Whether a train can go from `v1` to `v2` over `length` meters.
pub fn feasible_transition(length: f64, v1: f64, v2: f64, params: &KinematicParams) -> Result<bool, KinematicsError> {
    check_speeds(length, v1, v2, params)?;
    let rate = if v2 > v1 { params.accel } else { params.decel };
    let needed = (v2 * v2 - v1 * v1).abs();
    let available = 2.0 * rate * length;
    Ok(needed <= available * (1.0 + EPS) + EPS)
}

fn require_feasible(length: f64, v1: f64, v2: f64, params: &KinematicParams) -> Result<(), KinematicsError> {
    if feasible_transition(length, v1, v2, params)? {
        Ok(())
    } else {
        Err(KinematicsError::InfeasibleTransition { length, v1, v2 })
    }
}

fn check_interval(length: f64, lambda: f64, mu: f64) -> Result<(), KinematicsError> {
    if !(lambda >= -EPS && lambda <= mu + EPS && mu <= length * (1.0 + EPS) + EPS) {
        return Err(KinematicsError::Domain(format!(
            "interval [{lambda}, {mu}] not inside [0, {length}]"
        )));
    }
    Ok(())
}

/// Fastest time over the whole edge.
pub fn min_traverse_time(length: f64, v1: f64, v2: f64, params: &KinematicParams) -> Result<f64, KinematicsError> {
    min_time_over_interval(length, v1, v2, 0.0, length, params)
}

/// Slowest time over the whole edge without coming to a halt, or infinity
/// where stopping is allowed.
pub fn max_traverse_time(
    length: f64,
    v1: f64,
    v2: f64,
    stop_allowed: bool,
    params: &KinematicParams,
) -> Result<f64, KinematicsError> {
    max_time_over_interval(length, v1, v2, 0.0, length, stop_allowed, params)
}

/// Time the fastest profile spends between positions `lambda` and `mu`.
pub fn min_time_over_interval(
    length: f64,
    v1: f64,
    v2: f64,
    lambda: f64,
    mu: f64,
    params: &KinematicParams,
) -> Result<f64, KinematicsError> {
    require_feasible(length, v1, v2, params)?;
    check_interval(length, lambda, mu)?;
    Ok(SpeedProfile::fastest(length, v1, v2, params).time_between(lambda, mu))
}

/// Time the slowest non-stopping profile spends between `lambda` and `mu`.
pub fn max_time_over_interval(
    length: f64,
    v1: f64,
    v2: f64,
    lambda: f64,
    mu: f64,
    stop_allowed: bool,
    params: &KinematicParams,
) -> Result<f64, KinematicsError> {
    require_feasible(length, v1, v2, params)?;
    check_interval(length, lambda, mu)?;
    if mu - lambda <= 0.0 {
        return Ok(0.0);
    }
    if stop_allowed {
        return Ok(f64::INFINITY);
    }
    Ok(SpeedProfile::slowest(length, v1, v2, params).time_between(lambda, mu))
}

/// Fastest time to cover `distance` starting at speed `v0` when the final
/// speed is free (accelerate up to `v_max`, never brake).
pub fn min_time_free_end(v0: f64, distance: f64, params: &KinematicParams) -> Result<f64, KinematicsError> {
    params.validate()?;
    if !(distance >= 0.0) || !(v0 >= 0.0) || v0 > params.v_max * (1.0 + EPS) + EPS {
        return Err(KinematicsError::Domain(format!("bad free-end input v0={v0} distance={distance}")));
    }
    if distance == 0.0 {
        return Ok(0.0);
    }
    let expr = Envelope::Min(vec![
        Envelope::Line(Line::new(v0 * v0, 2.0 * params.accel)),
        Envelope::Line(Line::new(params.v_max * params.v_max, 0.0)),
    ]);
    Ok(SpeedProfile::from_envelope(distance, expr).time_between(0.0, distance))
}

/// `v² = c + k·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Line {
    c: f64,
    k: f64,
}

impl Line {
    fn new(c: f64, k: f64) -> Self {
        Self { c, k }
    }

    fn at(&self, x: f64) -> f64 {
        self.c + self.k * x
    }
}

#[derive(Debug, Clone)]
enum Envelope {
    Line(Line),
    Min(Vec<Envelope>),
    Max(Vec<Envelope>),
}

impl Envelope {
    /// Value at `x` and the line attaining it.
    fn eval(&self, x: f64) -> (f64, Line) {
        match self {
            Envelope::Line(l) => (l.at(x), *l),
            Envelope::Min(parts) => parts
                .iter()
                .map(|p| p.eval(x))
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .expect("nonempty envelope"),
            Envelope::Max(parts) => parts
                .iter()
                .map(|p| p.eval(x))
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .expect("nonempty envelope"),
        }
    }

    fn lines(&self, out: &mut Vec<Line>) {
        match self {
            Envelope::Line(l) => out.push(*l),
            Envelope::Min(parts) | Envelope::Max(parts) => parts.iter().for_each(|p| p.lines(out)),
        }
    }
}

/// A speed profile over `[0, length]` whose squared speed is piecewise linear.
#[derive(Debug, Clone)]
pub struct SpeedProfile {
    length: f64,
    /// Sorted breakpoints with the active line on each `[x_i, x_{i+1}]`.
    pieces: Vec<(f64, f64, Line)>,
}

impl SpeedProfile {
    /// The fastest profile from `v1` to `v2`. Assumes the transition is feasible.
    pub fn fastest(length: f64, v1: f64, v2: f64, p: &KinematicParams) -> Self {
        Self::from_envelope(length, Self::upper(length, v1, v2, p).capped(p.v_max))
    }

    /// The slowest profile that keeps moving (speed ≥ `v_floor` wherever the
    /// endpoints allow). Assumes the transition is feasible.
    pub fn slowest(length: f64, v1: f64, v2: f64, p: &KinematicParams) -> Self {
        let (a, b) = (p.accel, p.decel);
        let lower = Envelope::Max(vec![
            Envelope::Line(Line::new(v1 * v1, -2.0 * b)),
            Envelope::Line(Line::new(v2 * v2 - 2.0 * a * length, 2.0 * a)),
            Envelope::Line(Line::new(p.v_floor * p.v_floor, 0.0)),
        ]);
        let upper = Self::upper(length, v1, v2, p).capped(p.v_max);
        Self::from_envelope(length, Envelope::Min(vec![upper, lower]))
    }

    fn upper(length: f64, v1: f64, v2: f64, p: &KinematicParams) -> UpperParts {
        UpperParts {
            from_start: Line::new(v1 * v1, 2.0 * p.accel),
            to_end: Line::new(v2 * v2 + 2.0 * p.decel * length, -2.0 * p.decel),
        }
    }

    fn from_envelope(length: f64, env: Envelope) -> Self {
        let mut lines = Vec::new();
        env.lines(&mut lines);
        let mut xs = vec![0.0, length];
        for (i, l1) in lines.iter().enumerate() {
            for l2 in &lines[i + 1..] {
                let dk = l1.k - l2.k;
                if dk.abs() > 1e-15 {
                    let x = (l2.c - l1.c) / dk;
                    if x > 0.0 && x < length {
                        xs.push(x);
                    }
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        xs.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * length.max(1.0));
        let pieces = xs
            .windows(2)
            .map(|w| {
                let (_, line) = env.eval(0.5 * (w[0] + w[1]));
                (w[0], w[1], line)
            })
            .collect();
        Self { length, pieces }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Speed at position `x`.
    pub fn speed_at(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, self.length);
        let piece = self
            .pieces
            .iter()
            .find(|(x0, x1, _)| x >= *x0 && x <= *x1)
            .or(self.pieces.last())
            .expect("profile has pieces");
        piece.2.at(x).max(0.0).sqrt()
    }

    /// Time spent between positions `lambda ≤ mu`.
    pub fn time_between(&self, lambda: f64, mu: f64) -> f64 {
        let lo = lambda.max(0.0);
        let hi = mu.min(self.length);
        if hi <= lo {
            return 0.0;
        }
        self.pieces
            .iter()
            .filter_map(|&(x0, x1, line)| {
                let s = x0.max(lo);
                let e = x1.min(hi);
                (e > s).then(|| segment_time(line, s, e))
            })
            .sum()
    }
}

struct UpperParts {
    from_start: Line,
    to_end: Line,
}

impl UpperParts {
    fn capped(self, v_max: f64) -> Envelope {
        Envelope::Min(vec![
            Envelope::Line(self.from_start),
            Envelope::Line(self.to_end),
            Envelope::Line(Line::new(v_max * v_max, 0.0)),
        ])
    }
}

/// `∫ dx / sqrt(c + k·x)` over `[x0, x1]`.
fn segment_time(line: Line, x0: f64, x1: f64) -> f64 {
    let s0 = line.at(x0).max(0.0);
    let s1 = line.at(x1).max(0.0);
    if line.k.abs() < 1e-12 {
        let v = s0.max(s1).sqrt();
        return (x1 - x0) / v;
    }
    2.0 * (s1.sqrt() - s0.sqrt()) / line.k
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(v_max: f64, a: f64, b: f64, floor: f64) -> KinematicParams {
        KinematicParams::new(v_max, a, b, floor).unwrap()
    }

    #[test]
    fn braking_distance_examples() {
        assert_eq!(braking_distance(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(braking_distance(10.0, 1.0).unwrap(), 50.0);
        let d = braking_distance(27.78, 0.5).unwrap();
        assert!((d - 771.7).abs() < 0.1, "{d}");
        assert!(braking_distance(10.0, 0.0).is_err());
        assert!(braking_distance(10.0, -1.0).is_err());
    }

    #[test]
    fn transition_feasibility() {
        let p = params(10.0, 1.0, 1.0, 0.5);
        assert!(feasible_transition(100.0, 10.0, 10.0, &p).unwrap());
        assert!(!feasible_transition(10.0, 0.0, 10.0, &p).unwrap());
        assert!(feasible_transition(50.0, 0.0, 10.0, &p).unwrap());
        assert!(!feasible_transition(10.0, 10.0, 0.0, &p).unwrap());
        assert!(feasible_transition(-1.0, 0.0, 0.0, &p).is_err());
        assert!(feasible_transition(10.0, -1.0, 0.0, &p).is_err());
    }

    #[test]
    fn min_time_examples() {
        let p = params(10.0, 1.0, 1.0, 0.5);
        let t = |l, v1, v2| min_traverse_time(l, v1, v2, &p).unwrap();
        assert!((t(100.0, 10.0, 10.0) - 10.0).abs() < 1e-9);
        assert!((t(100.0, 0.0, 10.0) - 15.0).abs() < 1e-9);
        assert!((t(100.0, 0.0, 0.0) - 20.0).abs() < 1e-9);
        assert!(matches!(
            min_traverse_time(10.0, 0.0, 10.0, &p),
            Err(KinematicsError::InfeasibleTransition { .. })
        ));
    }

    #[test]
    fn max_time_examples() {
        let p = params(10.0, 1.0, 1.0, 1.0);
        assert_eq!(max_traverse_time(100.0, 10.0, 10.0, true, &p).unwrap(), f64::INFINITY);
        let t = max_traverse_time(100.0, 10.0, 10.0, false, &p).unwrap();
        assert!((t - 19.0).abs() < 1e-9, "{t}");
        for len in [3.0, 40.0, 250.0] {
            let t = max_traverse_time(len, 1.0, 1.0, false, &p).unwrap();
            assert!((t - len / 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn interval_examples() {
        let p = params(10.0, 1.0, 1.0, 0.5);
        assert_eq!(min_time_over_interval(100.0, 10.0, 10.0, 30.0, 30.0, &p).unwrap(), 0.0);
        assert_eq!(max_time_over_interval(100.0, 10.0, 10.0, 30.0, 30.0, true, &p).unwrap(), 0.0);
        let full = min_time_over_interval(100.0, 0.0, 10.0, 0.0, 100.0, &p).unwrap();
        assert_eq!(full, min_traverse_time(100.0, 0.0, 10.0, &p).unwrap());
        let mid = min_time_over_interval(100.0, 10.0, 10.0, 25.0, 75.0, &p).unwrap();
        assert!((mid - 5.0).abs() < 1e-9);
        assert!(min_time_over_interval(100.0, 10.0, 10.0, 75.0, 25.0, &p).is_err());
        assert!(min_time_over_interval(100.0, 10.0, 10.0, 0.0, 101.0, &p).is_err());
    }

    #[test]
    fn free_end_accelerates_to_cap() {
        let p = params(10.0, 1.0, 1.0, 0.5);
        // 50 m to reach 10 m/s in 10 s, then 50 m at 10 m/s
        let t = min_time_free_end(0.0, 100.0, &p).unwrap();
        assert!((t - 15.0).abs() < 1e-9);
        assert_eq!(min_time_free_end(3.0, 0.0, &p).unwrap(), 0.0);
    }

    #[test]
    fn params_reject_floor_above_cap() {
        assert!(KinematicParams::new(1.0, 1.0, 1.0, 2.0).is_err());
        assert!(KinematicParams::new(1.0, 0.0, 1.0, 0.5).is_err());
    }
}
