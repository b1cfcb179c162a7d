//! Scenario definitions: leader path geometry and scripted speed profiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Straight,
    RightAngle,
    Roundabout,
    UTurn,
    StopAndGo,
    SuddenAccel,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Straight,
        ScenarioKind::RightAngle,
        ScenarioKind::Roundabout,
        ScenarioKind::UTurn,
        ScenarioKind::StopAndGo,
        ScenarioKind::SuddenAccel,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Straight => "straight",
            ScenarioKind::RightAngle => "right_angle",
            ScenarioKind::Roundabout => "roundabout",
            ScenarioKind::UTurn => "u_turn",
            ScenarioKind::StopAndGo => "stop_and_go",
            ScenarioKind::SuddenAccel => "sudden_accel",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown scenario '{name}'")))
    }
}

/// Piecewise-linear speed profile. Knots are (time s, speed m/s); the speed
/// holds its last value beyond the final knot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpeedProfile {
    pub knots: Vec<(f64, f64)>,
}

impl SpeedProfile {
    pub fn constant(v: f64) -> Self {
        Self {
            knots: vec![(0.0, v)],
        }
    }

    pub fn speed_at(&self, t: f64) -> f64 {
        let k = &self.knots;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let (t0, v0) = w[0];
            let (t1, v1) = w[1];
            if t <= t1 {
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        k.last().unwrap().1
    }

    /// Exact distance traveled from time 0 to `t` (trapezoid areas).
    pub fn distance_at(&self, t: f64) -> f64 {
        let k = &self.knots;
        let mut s = 0.0;
        let mut prev_t = 0.0_f64.min(k[0].0);
        let mut prev_v = k[0].1;
        for &(kt, kv) in k.iter() {
            if kt <= prev_t {
                prev_v = kv;
                continue;
            }
            if t <= kt {
                let v_t = self.speed_at(t);
                return s + 0.5 * (prev_v + v_t) * (t - prev_t);
            }
            s += 0.5 * (prev_v + kv) * (kt - prev_t);
            prev_t = kt;
            prev_v = kv;
        }
        s + prev_v * (t - prev_t).max(0.0)
    }

    pub fn max_speed(&self) -> f64 {
        self.knots.iter().map(|k| k.1).fold(0.0, f64::max)
    }

    pub fn max_accel(&self) -> f64 {
        self.knots
            .windows(2)
            .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
            .fold(0.0, f64::max)
    }
}

/// Analytic path segments with exact arc-length parameterization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum PathSegment {
    Line {
        start: [f64; 2],
        heading: f64,
        length: f64,
    },
    /// Circular arc. Positive sweep turns left.
    Arc {
        center: [f64; 2],
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

impl PathSegment {
    pub fn length(&self) -> f64 {
        match self {
            PathSegment::Line { length, .. } => *length,
            PathSegment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn pose_at(&self, s: f64) -> Pose2 {
        match self {
            PathSegment::Line { start, heading, .. } => {
                let (sin, cos) = heading.sin_cos();
                Pose2::new(start[0] + cos * s, start[1] + sin * s, *heading)
            }
            PathSegment::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let dir = sweep.signum();
                let ang = start_angle + dir * s / radius;
                let (sin, cos) = ang.sin_cos();
                Pose2::new(
                    center[0] + radius * cos,
                    center[1] + radius * sin,
                    wrap_angle(ang + dir * std::f64::consts::FRAC_PI_2),
                )
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathSpec {
    pub segments: Vec<PathSegment>,
}

impl PathSpec {
    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length()).sum()
    }

    /// Pose at arc length `s` from the path start; clamps to the ends.
    pub fn pose_at(&self, s: f64) -> Pose2 {
        let mut rem = s.max(0.0);
        for seg in &self.segments {
            let len = seg.length();
            if rem <= len {
                return seg.pose_at(rem);
            }
            rem -= len;
        }
        let last = self.segments.last().expect("path has segments");
        last.pose_at(last.length())
    }

    fn straight(length: f64) -> Self {
        Self {
            segments: vec![PathSegment::Line {
                start: [0.0, 0.0],
                heading: 0.0,
                length,
            }],
        }
    }

    /// Straight approach, a left curve of `sweep` radians, straight exit.
    fn curve(approach: f64, radius: f64, sweep: f64, exit: f64) -> Self {
        let mut segments = Vec::new();
        if approach > 0.0 {
            segments.push(PathSegment::Line {
                start: [0.0, 0.0],
                heading: 0.0,
                length: approach,
            });
        }
        segments.push(PathSegment::Arc {
            center: [approach, radius],
            radius,
            start_angle: -std::f64::consts::FRAC_PI_2,
            sweep,
        });
        let end_angle = -std::f64::consts::FRAC_PI_2 + sweep;
        let (sin, cos) = end_angle.sin_cos();
        let exit_start = [approach + radius * cos, radius + radius * sin];
        if exit > 0.0 {
            segments.push(PathSegment::Line {
                start: exit_start,
                heading: wrap_angle(sweep),
                length: exit,
            });
        }
        Self { segments }
    }
}

/// One driving scenario: geometry, leader speed script, and clutter seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub profile: SpeedProfile,
    pub radius: f64,
    pub approach_len: f64,
    pub exit_len: f64,
    pub clutter_seed: u64,
}

/// Speed/acceleration envelope for the main course (Fig.-4-scale limits).
pub const MAX_LEADER_SPEED: f64 = 6.0;
pub const MAX_LEADER_ACCEL: f64 = 1.5;
pub const MAX_SUDDEN_ACCEL: f64 = 2.5;

impl Scenario {
    /// Canonical desk-scale scenario for a kind. The clutter seed picks the
    /// static world layout; vary it per episode for dataset diversity.
    pub fn preset(kind: ScenarioKind, clutter_seed: u64) -> Self {
        let (profile, radius, approach_len, exit_len) = match kind {
            ScenarioKind::Straight => (
                SpeedProfile {
                    knots: vec![(0.0, 1.5), (6.0, 3.0), (14.0, 3.0), (20.0, 1.8), (26.0, 2.6)],
                },
                0.0,
                0.0,
                0.0,
            ),
            ScenarioKind::RightAngle => (SpeedProfile::constant(2.0), 4.5, 14.0, 30.0),
            ScenarioKind::Roundabout => (SpeedProfile::constant(2.5), 8.0, 8.0, 10.0),
            ScenarioKind::UTurn => (SpeedProfile::constant(2.0), 4.5, 12.0, 30.0),
            ScenarioKind::StopAndGo => (
                // Repeated accelerate / cruise / brake / dwell cycles; the
                // speed is exactly zero at the scripted stop knots.
                SpeedProfile {
                    knots: vec![
                        (0.0, 0.0),
                        (1.0, 0.0),
                        (2.5, 2.0),
                        (6.0, 2.0),
                        (7.5, 0.0),
                        (9.5, 0.0),
                        (11.0, 2.2),
                        (15.0, 2.2),
                        (16.6, 0.0),
                        (18.6, 0.0),
                        (20.0, 2.0),
                        (24.0, 2.0),
                        (25.5, 0.0),
                        (27.5, 0.0),
                        (29.0, 2.0),
                    ],
                },
                0.0,
                0.0,
                0.0,
            ),
            ScenarioKind::SuddenAccel => (
                // Standstill, then 0 -> 5.6 m/s (the paper's 0 -> 20 km/h
                // case) at the 2.5 m/s^2 sudden-acceleration cap.
                SpeedProfile {
                    knots: vec![(0.0, 0.0), (3.0, 0.0), (5.24, 5.6)],
                },
                0.0,
                0.0,
                0.0,
            ),
        };
        Self {
            kind,
            profile,
            radius,
            approach_len,
            exit_len,
            clutter_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cap = if self.kind == ScenarioKind::SuddenAccel {
            MAX_SUDDEN_ACCEL
        } else {
            MAX_LEADER_ACCEL
        };
        if self.profile.max_speed() > MAX_LEADER_SPEED + 1e-9 {
            return Err(Error::Config(format!(
                "scenario speed {} exceeds {} m/s",
                self.profile.max_speed(),
                MAX_LEADER_SPEED
            )));
        }
        if self.profile.max_accel() > cap + 1e-9 {
            return Err(Error::Config(format!(
                "scenario accel {} exceeds {} m/s^2",
                self.profile.max_accel(),
                cap
            )));
        }
        Ok(())
    }

    /// Leader path for this scenario, long enough for `duration_s` of travel.
    pub fn path(&self, duration_s: f64) -> PathSpec {
        let margin = 20.0;
        let needed = self.profile.distance_at(duration_s) + margin;
        match self.kind {
            ScenarioKind::Straight | ScenarioKind::StopAndGo | ScenarioKind::SuddenAccel => {
                PathSpec::straight(needed)
            }
            ScenarioKind::RightAngle => PathSpec::curve(
                self.approach_len,
                self.radius,
                std::f64::consts::FRAC_PI_2,
                self.exit_len.max(needed),
            ),
            ScenarioKind::Roundabout => PathSpec::curve(
                self.approach_len,
                self.radius,
                2.0 * std::f64::consts::PI,
                self.exit_len.max(needed),
            ),
            ScenarioKind::UTurn => PathSpec::curve(
                self.approach_len,
                self.radius,
                std::f64::consts::PI,
                self.exit_len.max(needed),
            ),
        }
    }
}

/// One sampled leader state.
#[derive(Debug, Clone, Copy)]
pub struct LeaderSample {
    pub t: f64,
    pub pose: Pose2,
    pub speed: f64,
}

/// Rolls the leader deterministically along the scenario path at `dt`,
/// producing `n_ticks` samples starting at t = 0.
pub fn run_leader(scn: &Scenario, dt: f64, n_ticks: usize) -> Result<Vec<LeaderSample>> {
    if !(dt > 0.0 && dt <= 0.2) {
        return Err(Error::Config(format!("dt {dt} outside (0, 0.2]")));
    }
    scn.validate()?;
    let duration = dt * n_ticks as f64;
    let path = scn.path(duration);
    let mut out = Vec::with_capacity(n_ticks);
    for i in 0..n_ticks {
        let t = i as f64 * dt;
        let s = scn.profile.distance_at(t);
        out.push(LeaderSample {
            t,
            pose: path.pose_at(s),
            speed: scn.profile.speed_at(t),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_constant_speed_endpoint() {
        let scn = Scenario {
            kind: ScenarioKind::Straight,
            profile: SpeedProfile::constant(2.0),
            radius: 0.0,
            approach_len: 0.0,
            exit_len: 0.0,
            clutter_seed: 0,
        };
        let traj = run_leader(&scn, 0.1, 101).unwrap();
        let last = traj.last().unwrap();
        assert!((last.pose.x - 20.0).abs() < 1e-6, "{}", last.pose.x);
        assert!(last.pose.y.abs() < 1e-9);
    }

    #[test]
    fn roundabout_heading_winds_full_turn() {
        let scn = Scenario {
            kind: ScenarioKind::Roundabout,
            profile: SpeedProfile::constant(3.0),
            radius: 8.0,
            approach_len: 0.0,
            exit_len: 0.0,
            clutter_seed: 0,
        };
        let period = 2.0 * std::f64::consts::PI * 8.0 / 3.0;
        let dt = 0.01;
        let n = (period / dt).round() as usize + 1;
        let traj = run_leader(&scn, dt, n).unwrap();
        // Unwrap the heading and measure the total wind.
        let mut total = 0.0;
        for w in traj.windows(2) {
            total += wrap_angle(w[1].pose.heading - w[0].pose.heading);
        }
        assert!(
            (total - 2.0 * std::f64::consts::PI).abs() < 1e-2,
            "wound {total}"
        );
    }

    #[test]
    fn stop_and_go_hits_scripted_stops_exactly() {
        let scn = Scenario::preset(ScenarioKind::StopAndGo, 0);
        scn.validate().unwrap();
        for &(t, v) in &scn.profile.knots {
            if v == 0.0 {
                assert_eq!(scn.profile.speed_at(t), 0.0, "stop at t={t}");
            }
        }
    }

    #[test]
    fn arc_length_matches_speed_integral() {
        for kind in ScenarioKind::ALL {
            let scn = Scenario::preset(kind, 1);
            let traj = run_leader(&scn, 0.05, 600).unwrap();
            let chord: f64 = traj.windows(2).map(|w| w[0].pose.distance(&w[1].pose)).sum();
            let arc = scn.profile.distance_at(traj.last().unwrap().t);
            assert!(
                (chord - arc).abs() <= 0.01 * arc.max(1.0),
                "{kind:?}: chord {chord} vs arc {arc}"
            );
        }
    }

    #[test]
    fn presets_respect_speed_and_accel_envelopes() {
        for kind in ScenarioKind::ALL {
            Scenario::preset(kind, 0).validate().unwrap();
        }
    }

    #[test]
    fn unknown_scenario_name_is_config_error() {
        assert!(ScenarioKind::parse("zigzag").is_err());
        assert_eq!(ScenarioKind::parse("u_turn").unwrap(), ScenarioKind::UTurn);
    }
}
