//! Planar surrogate hexapod simulator.
//!
//! The simulator steps the CPG network, derives stance/swing per leg from the
//! vertical motor, and moves the body kinematically:
//!
//! * a leg propels the body while it is in stance at both ends of a step; the
//!   body moves opposite to the mean horizontal foot motion of those legs,
//!   scaled by the traction constant;
//! * the yaw rate follows the differential propulsion of the two sides
//!   divided by the body half-width (counter-clockwise positive, left side at
//!   +y);
//! * on an incline forward propulsion is scaled by `cos α` and the body slips
//!   downhill at `slip_gain · sin α` whenever fewer than `slip_min_stance`
//!   legs are in stance;
//! * energy is constant-force work on extension strokes only.
//!
//! Body increments are averaged over the commanded side assignment and its
//! left/right mirror (the same gait with the amplitudes swapped and the sides
//! relabeled). Which side leads the cycle therefore cannot bias the heading,
//! and swapping `amp_left`/`amp_right` mirrors the outcome bit for bit.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpg::{self, relative_extension, ControlParams, CpgError, CpgNetwork, GaitSpec, N_LEGS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Cpg(#[from] CpgError),
    #[error("trial duration must be positive, got {0}")]
    InvalidDuration(f64),
    #[error("incline {0}° outside [0, 25]")]
    InvalidContext(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotGeometry {
    /// mm
    pub body_length: f64,
    /// mm
    pub body_width: f64,
    /// mg
    pub mass: f64,
    /// mm
    pub vertical_stroke: f64,
    /// mm
    pub horizontal_stroke: f64,
    /// Leg anchors in the body frame (mm), legs 0..3 left front-to-back,
    /// 3..6 right front-to-back.
    pub leg_positions: [[f64; 2]; N_LEGS],
}

impl Default for RobotGeometry {
    fn default() -> Self {
        let (length, width) = (13.0, 9.6);
        let xs = [length / 3.0, 0.0, -length / 3.0];
        let leg_positions = std::array::from_fn(|leg| {
            let y = if leg < 3 { width / 2.0 } else { -width / 2.0 };
            [xs[leg % 3], y]
        });
        RobotGeometry {
            body_length: length,
            body_width: width,
            mass: 200.0,
            vertical_stroke: 0.6,
            horizontal_stroke: 2.0,
            leg_positions,
        }
    }
}

impl RobotGeometry {
    pub fn half_width(&self) -> f64 {
        self.body_width / 2.0
    }
}

/// Every constant of the surrogate dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub geometry: RobotGeometry,
    pub dt: f64,
    pub a_r: f64,
    pub a_x: f64,
    pub traction: f64,
    /// Minimum envelope-relative vertical extension for ground contact.
    pub contact_threshold: f64,
    pub yaw_gain: f64,
    /// Downhill slip speed per unit `sin α` (mm/s).
    pub slip_gain: f64,
    /// Slip is active while fewer than this many legs are in stance.
    pub slip_min_stance: usize,
    /// Constant motor force (mN).
    pub motor_force: f64,
    pub drift_penalty: f64,
    /// Standard deviation of the observation noise on (dx, dy), mm.
    pub obs_noise: f64,
    pub noise: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            geometry: RobotGeometry::default(),
            dt: cpg::DEFAULT_DT,
            a_r: cpg::DEFAULT_GAIN,
            a_x: cpg::DEFAULT_GAIN,
            traction: 1.0,
            contact_threshold: 0.25,
            yaw_gain: 1.0,
            slip_gain: 40.0,
            slip_min_stance: 4,
            motor_force: 1.0,
            drift_penalty: 1.0,
            obs_noise: 0.2,
            noise: false,
        }
    }
}

impl SimConfig {
    pub fn noiseless() -> Self {
        SimConfig::default()
    }

    pub fn with_noise(mut self, on: bool) -> Self {
        self.noise = on;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Context {
    pub incline_deg: f64,
}

impl Context {
    pub const MAX_INCLINE: f64 = 25.0;

    pub fn flat() -> Self {
        Context { incline_deg: 0.0 }
    }

    pub fn incline(deg: f64) -> Self {
        Context { incline_deg: deg }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Displacement in the initial body frame, mm.
    pub dx: f64,
    pub dy: f64,
    /// Heading change, rad.
    pub dpsi: f64,
    /// Maximum lateral deviation from the initial heading axis, mm.
    pub drift: f64,
    /// Extension work, µJ.
    pub energy: f64,
    pub contact_trace: Vec<[bool; N_LEGS]>,
}

impl TrialResult {
    pub const CSV_HEADER: &'static str = "dx,dy,dpsi,drift,energy,steps";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.dx,
            self.dy,
            self.dpsi,
            self.drift,
            self.energy,
            self.contact_trace.len()
        )
    }
}

/// Per-step record of a rollout, for inspection and additivity checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub pose: Pose,
    pub energy: f64,
    pub stance_count: usize,
}

/// Planar pose in mm / rad.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, psi: f64) -> Self {
        Pose { x, y, psi }
    }

    /// Applies a body-frame displacement `(dx, dy, dpsi)`.
    pub fn compose(&self, dx: f64, dy: f64, dpsi: f64) -> Pose {
        let (s, c) = self.psi.sin_cos();
        Pose {
            x: self.x + c * dx - s * dy,
            y: self.y + s * dx + c * dy,
            psi: self.psi + dpsi,
        }
    }

    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        (self.x - p[0]).hypot(self.y - p[1])
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct LegStep {
    /// Horizontal foot motion (mm) over the step, if the leg stayed in stance.
    foot_motion: Option<f64>,
    stance: bool,
}

#[derive(Debug, Clone, Copy)]
struct Increment {
    forward: f64,
    yaw: f64,
    slip: bool,
}

/// The surrogate simulator.
#[derive(Debug, Clone, Default)]
pub struct Simulator {
    pub config: SimConfig,
}

impl Simulator {
    pub fn new(config: SimConfig) -> Self {
        Simulator { config }
    }

    fn stance(&self, net: &CpgNetwork) -> [bool; N_LEGS] {
        let s = net.states();
        std::array::from_fn(|leg| relative_extension(s[leg].phase) >= self.config.contact_threshold)
    }

    fn increment(&self, legs: &[LegStep; N_LEGS], swap_sides: bool) -> Increment {
        let mut left = 0.0;
        let mut right = 0.0;
        let mut counted = 0usize;
        for (leg, ls) in legs.iter().enumerate() {
            if let Some(m) = ls.foot_motion {
                counted += 1;
                if (leg < 3) != swap_sides {
                    left += m;
                } else {
                    right += m;
                }
            }
        }
        let stance_count = legs.iter().filter(|l| l.stance).count();
        let slip = stance_count < self.config.slip_min_stance;
        if counted == 0 {
            return Increment {
                forward: 0.0,
                yaw: 0.0,
                slip,
            };
        }
        let t = self.config.traction;
        let p_left = -t * left / counted as f64;
        let p_right = -t * right / counted as f64;
        Increment {
            forward: p_left + p_right,
            yaw: self.config.yaw_gain * (p_right - p_left) / self.config.geometry.half_width(),
            slip,
        }
    }

    /// Steps one network and returns per-leg data plus extension work.
    fn advance(
        &self,
        net: &mut CpgNetwork,
        cmd: &mut [cpg::MotorCommand; N_LEGS],
        stance: &mut [bool; N_LEGS],
    ) -> Result<([LegStep; N_LEGS], f64), SimError> {
        let g = &self.config.geometry;
        net.step(self.config.dt)?;
        let new_cmd = net.motor_output();
        let new_stance = self.stance(net);
        let mut legs = [LegStep::default(); N_LEGS];
        let mut work = 0.0;
        for leg in 0..N_LEGS {
            let dv = (new_cmd[leg].vertical - cmd[leg].vertical) * g.vertical_stroke;
            let dh = (new_cmd[leg].horizontal - cmd[leg].horizontal) * g.horizontal_stroke;
            work += self.config.motor_force * (dv.max(0.0) + dh.max(0.0));
            legs[leg] = LegStep {
                // extending the horizontal motor sweeps the foot rearward
                foot_motion: (stance[leg] && new_stance[leg]).then_some(-dh),
                stance: new_stance[leg],
            };
        }
        *cmd = new_cmd;
        *stance = new_stance;
        Ok((legs, work))
    }

    /// Runs one trial and returns the per-step record alongside the result.
    pub fn run_trial_traced(
        &self,
        gait: &GaitSpec,
        params: &ControlParams,
        context: Context,
        duration: f64,
        seed: u64,
    ) -> Result<(TrialResult, Vec<StepRecord>), SimError> {
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(SimError::InvalidDuration(duration));
        }
        if !(0.0..=Context::MAX_INCLINE).contains(&context.incline_deg) {
            return Err(SimError::InvalidContext(context.incline_deg));
        }
        let c = &self.config;
        let steps = (duration / c.dt).round().max(1.0) as usize;
        let alpha = context.incline_deg.to_radians();
        let (sin_a, cos_a) = alpha.sin_cos();

        let symmetric = params.amp_left == params.amp_right;
        let mut primary = cpg::build_network(gait, params, c.a_r, c.a_x)?;
        let mut mirror = if symmetric {
            None
        } else {
            Some(cpg::build_network(gait, &params.mirrored(), c.a_r, c.a_x)?)
        };
        let mut cmd_p = primary.motor_output();
        let mut stance_p = self.stance(&primary);
        let mut cmd_m = cmd_p;
        let mut stance_m = stance_p;
        if let Some(m) = &mirror {
            cmd_m = m.motor_output();
            stance_m = self.stance(m);
        }

        let mut pose = Pose::default();
        let mut drift: f64 = 0.0;
        let mut energy = 0.0;
        let mut contact_trace = Vec::with_capacity(steps);
        let mut records = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (legs_p, work_p) = self.advance(&mut primary, &mut cmd_p, &mut stance_p)?;
            let (legs_m, work_m) = match mirror.as_mut() {
                Some(m) => self.advance(m, &mut cmd_m, &mut stance_m)?,
                None => (legs_p, work_p),
            };
            let a = self.increment(&legs_p, false);
            let b = self.increment(&legs_m, true);
            let forward = 0.5 * (a.forward + b.forward);
            let yaw = 0.5 * (a.yaw + b.yaw);
            let slip_frac = 0.5 * (a.slip as u8 as f64 + b.slip as u8 as f64);
            let slip = slip_frac * c.slip_gain * sin_a * c.dt;

            let heading = pose.psi + 0.5 * yaw;
            let (s, co) = heading.sin_cos();
            // only the uphill (+x) part of the propulsion works against gravity
            let up = forward * co;
            pose.x += if up > 0.0 { up * cos_a } else { up } - slip;
            pose.y += forward * s;
            pose.psi += yaw;
            drift = drift.max(pose.y.abs());

            let work = 0.5 * (work_p + work_m);
            energy += work;
            contact_trace.push(stance_p);
            records.push(StepRecord {
                pose,
                energy: work,
                stance_count: legs_p.iter().filter(|l| l.stance).count(),
            });
        }

        let (mut dx, mut dy) = (pose.x, pose.y);
        if c.noise && c.obs_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, c.obs_noise).expect("positive noise");
            dx += normal.sample(&mut rng);
            dy += normal.sample(&mut rng);
        }
        Ok((
            TrialResult {
                dx,
                dy,
                dpsi: pose.psi,
                drift,
                energy,
                contact_trace,
            },
            records,
        ))
    }

    pub fn run_trial(
        &self,
        gait: &GaitSpec,
        params: &ControlParams,
        context: Context,
        duration: f64,
        seed: u64,
    ) -> Result<TrialResult, SimError> {
        self.run_trial_traced(gait, params, context, duration, seed)
            .map(|(r, _)| r)
    }
}

/// Forward distance penalized by drift (mm over the trial).
pub fn speed_objective(result: &TrialResult, drift_penalty: f64) -> f64 {
    result.dx - drift_penalty * result.drift
}

pub fn energy_objective(result: &TrialResult) -> f64 {
    result.energy
}

/// Euclidean distance between the desired and the observed displacement.
pub fn target_objective(result: &TrialResult, target: [f64; 2]) -> f64 {
    (target[0] - result.dx).hypot(target[1] - result.dy)
}

/// A wall segment with endpoints in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub fn new(a: [f64; 2], b: [f64; 2]) -> Self {
        Segment { a, b }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MazeError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("maze has no {0} line")]
    Missing(&'static str),
    #[error("goal tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("goal lies inside a wall")]
    GoalInWall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Maze {
    pub walls: Vec<Segment>,
    pub start: Pose,
    pub goal: [f64; 2],
    pub goal_tolerance: f64,
    /// Optional intermediate waypoints, in order; the goal is appended.
    pub waypoints: Vec<[f64; 2]>,
    /// Wall inflation margin (half the body width), mm.
    pub clearance: f64,
}

impl Maze {
    pub fn new(
        walls: Vec<Segment>,
        start: Pose,
        goal: [f64; 2],
        goal_tolerance: f64,
        waypoints: Vec<[f64; 2]>,
    ) -> Result<Maze, MazeError> {
        let maze = Maze {
            walls,
            start,
            goal,
            goal_tolerance,
            waypoints,
            clearance: RobotGeometry::default().half_width(),
        };
        maze.validate()?;
        Ok(maze)
    }

    fn validate(&self) -> Result<(), MazeError> {
        if !(self.goal_tolerance > 0.0) {
            return Err(MazeError::Tolerance(self.goal_tolerance));
        }
        if segment_collides(self.goal, self.goal, self) {
            return Err(MazeError::GoalInWall);
        }
        Ok(())
    }

    /// Parses the line-oriented maze format (`wall x0 y0 x1 y1`,
    /// `start x y psi`, `goal x y tol`, `waypoint x y`; `#` starts a comment).
    pub fn parse(text: &str) -> Result<Maze, MazeError> {
        let mut walls = Vec::new();
        let mut start = None;
        let mut goal = None;
        let mut waypoints = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let keyword = parts.next().unwrap_or_default();
            let nums: Vec<f64> = parts
                .map(|t| {
                    t.parse::<f64>().map_err(|_| MazeError::Parse {
                        line: i + 1,
                        msg: format!("bad number `{t}`"),
                    })
                })
                .collect::<Result<_, _>>()?;
            let want = |n: usize| {
                if nums.len() == n {
                    Ok(())
                } else {
                    Err(MazeError::Parse {
                        line: i + 1,
                        msg: format!("`{keyword}` takes {n} numbers, got {}", nums.len()),
                    })
                }
            };
            match keyword {
                "wall" => {
                    want(4)?;
                    walls.push(Segment::new([nums[0], nums[1]], [nums[2], nums[3]]));
                }
                "start" => {
                    want(3)?;
                    start = Some(Pose::new(nums[0], nums[1], nums[2]));
                }
                "goal" => {
                    want(3)?;
                    goal = Some(([nums[0], nums[1]], nums[2]));
                }
                "waypoint" => {
                    want(2)?;
                    waypoints.push([nums[0], nums[1]]);
                }
                other => {
                    return Err(MazeError::Parse {
                        line: i + 1,
                        msg: format!("unknown keyword `{other}`"),
                    })
                }
            }
        }
        let start = start.ok_or(MazeError::Missing("start"))?;
        let (goal, tol) = goal.ok_or(MazeError::Missing("goal"))?;
        Maze::new(walls, start, goal, tol, waypoints)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in &self.walls {
            out.push_str(&format!("wall {} {} {} {}\n", w.a[0], w.a[1], w.b[0], w.b[1]));
        }
        out.push_str(&format!("start {} {} {}\n", self.start.x, self.start.y, self.start.psi));
        for p in &self.waypoints {
            out.push_str(&format!("waypoint {} {}\n", p[0], p[1]));
        }
        out.push_str(&format!(
            "goal {} {} {}\n",
            self.goal[0], self.goal[1], self.goal_tolerance
        ));
        out
    }

    /// Waypoints followed by the goal.
    pub fn route(&self) -> Vec<[f64; 2]> {
        let mut r = self.waypoints.clone();
        r.push(self.goal);
        r
    }
}

fn point_segment_distance(p: [f64; 2], s: &Segment) -> f64 {
    let (ax, ay) = (s.a[0], s.a[1]);
    let (vx, vy) = (s.b[0] - ax, s.b[1] - ay);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - ax) * vx + (p[1] - ay) * vy) / len2).clamp(0.0, 1.0)
    };
    (p[0] - (ax + t * vx)).hypot(p[1] - (ay + t * vy))
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segments_intersect(p: &Segment, q: &Segment) -> bool {
    let d1 = cross(q.a, q.b, p.a);
    let d2 = cross(q.a, q.b, p.b);
    let d3 = cross(p.a, p.b, q.a);
    let d4 = cross(p.a, p.b, q.b);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

pub fn segment_distance(p: &Segment, q: &Segment) -> f64 {
    if segments_intersect(p, q) {
        return 0.0;
    }
    point_segment_distance(p.a, q)
        .min(point_segment_distance(p.b, q))
        .min(point_segment_distance(q.a, p))
        .min(point_segment_distance(q.b, p))
}

/// True iff the segment `p0–p1` comes within the maze clearance of any wall
/// (the inflated boundary counts as a collision).
pub fn segment_collides(p0: [f64; 2], p1: [f64; 2], maze: &Maze) -> bool {
    let path = Segment::new(p0, p1);
    maze.walls.iter().any(|w| segment_distance(&path, w) <= maze.clearance)
}

/// Convenience: the nominal tripod parameters used throughout the tests.
pub fn nominal_params() -> ControlParams {
    ControlParams::new(8.0 * PI, PI / 2.0, 1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpg::gait_from_name;

    fn sim() -> Simulator {
        Simulator::new(SimConfig::noiseless())
    }

    fn tripod() -> GaitSpec {
        gait_from_name("tripod").unwrap()
    }

    #[test]
    fn geometry_is_mirror_symmetric() {
        let g = RobotGeometry::default();
        for leg in 0..3 {
            let (l, r) = (g.leg_positions[leg], g.leg_positions[leg + 3]);
            assert_eq!(l[0], r[0]);
            assert_eq!(l[1], -r[1]);
            assert!(l[1] > 0.0);
        }
    }

    #[test]
    fn no_actuation_no_motion() {
        let p = ControlParams::new(8.0 * PI, PI / 2.0, 0.0, 0.0);
        let r = sim().run_trial(&tripod(), &p, Context::flat(), 1.0, 0).unwrap();
        assert_eq!((r.dx, r.dy, r.dpsi, r.energy), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(r.contact_trace.len(), 1000);
    }

    #[test]
    fn nominal_tripod_walks_forward() {
        let r = sim()
            .run_trial(&tripod(), &nominal_params(), Context::flat(), 1.0, 0)
            .unwrap();
        assert!(r.dx > 0.0, "dx {}", r.dx);
        assert!(r.dy.abs() < r.dx / 5.0);
        assert!(r.energy > 0.0 && r.drift >= 0.0);
    }

    #[test]
    fn mirrored_amplitudes_mirror_the_outcome() {
        let s = sim();
        for name in ["tripod", "wave", "ripple", "four-two"] {
            let g = gait_from_name(name).unwrap();
            let p = ControlParams::new(6.0 * PI, 0.9, 0.8, 0.35);
            let a = s.run_trial(&g, &p, Context::incline(7.0), 1.0, 0).unwrap();
            let b = s.run_trial(&g, &p.mirrored(), Context::incline(7.0), 1.0, 0).unwrap();
            assert_eq!(a.dx, b.dx, "{name}");
            assert_eq!(a.dy, -b.dy, "{name}");
            assert_eq!(a.dpsi, -b.dpsi, "{name}");
            assert_eq!(a.drift, b.drift);
            assert_eq!(a.energy, b.energy);
            assert!(a.dy != 0.0);
        }
    }

    #[test]
    fn symmetric_amplitudes_walk_straight() {
        let r = sim()
            .run_trial(&tripod(), &nominal_params(), Context::flat(), 1.0, 0)
            .unwrap();
        assert_eq!(r.dy, 0.0);
        assert_eq!(r.dpsi, 0.0);
    }

    #[test]
    fn noise_is_seeded() {
        let s = Simulator::new(SimConfig::default().with_noise(true));
        let a = s
            .run_trial(&tripod(), &nominal_params(), Context::flat(), 1.0, 7)
            .unwrap();
        let b = s
            .run_trial(&tripod(), &nominal_params(), Context::flat(), 1.0, 7)
            .unwrap();
        let c = s
            .run_trial(&tripod(), &nominal_params(), Context::flat(), 1.0, 8)
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a.dx, c.dx);
    }

    #[test]
    fn rejects_bad_inputs() {
        let s = sim();
        assert!(matches!(
            s.run_trial(&tripod(), &nominal_params(), Context::flat(), 0.0, 0),
            Err(SimError::InvalidDuration(_))
        ));
        assert!(matches!(
            s.run_trial(&tripod(), &nominal_params(), Context::incline(30.0), 1.0, 0),
            Err(SimError::InvalidContext(_))
        ));
        let bad = ControlParams::new(100.0, 0.0, 1.0, 1.0);
        assert!(matches!(
            s.run_trial(&tripod(), &bad, Context::flat(), 1.0, 0),
            Err(SimError::Cpg(CpgError::ParamOutOfBounds { .. }))
        ));
    }

    #[test]
    fn speed_objective_examples() {
        let mut r = TrialResult {
            dx: 12.0,
            dy: 0.0,
            dpsi: 0.0,
            drift: 0.0,
            energy: 0.0,
            contact_trace: vec![],
        };
        assert_eq!(speed_objective(&r, 1.0), 12.0);
        r.drift = 4.0;
        assert_eq!(speed_objective(&r, 1.0), 8.0);
        r.dx = 0.0;
        r.drift = 0.0;
        assert_eq!(speed_objective(&r, 1.0), 0.0);
    }

    #[test]
    fn target_objective_examples() {
        let mut r = TrialResult {
            dx: 3.0,
            dy: 4.0,
            dpsi: 0.0,
            drift: 0.0,
            energy: 0.0,
            contact_trace: vec![],
        };
        assert_eq!(target_objective(&r, [3.0, 4.0]), 0.0);
        r.dx = 0.0;
        r.dy = 0.0;
        assert_eq!(target_objective(&r, [3.0, 4.0]), 5.0);
        r.dx = 1.0;
        assert_eq!(target_objective(&r, [0.0, 0.0]), 1.0);
    }

    #[test]
    fn single_full_extension_work() {
        // one motor, 2 mm at 1 mN
        let s = sim();
        let stroke = s.config.geometry.horizontal_stroke;
        assert_eq!(s.config.motor_force * stroke, 2.0);
    }

    fn maze_with(walls: Vec<Segment>) -> Maze {
        Maze::new(walls, Pose::default(), [200.0, 200.0], 1.0, vec![]).unwrap()
    }

    #[test]
    fn collision_cases() {
        let maze = maze_with(vec![Segment::new([0.0, 0.0], [100.0, 0.0])]);
        assert!(!segment_collides([0.0, 50.0], [100.0, 50.0], &maze));
        assert!(segment_collides([50.0, -10.0], [50.0, 10.0], &maze));
        let edge = maze.clearance;
        assert!(segment_collides([50.0, 30.0], [50.0, edge], &maze));
        assert!(!segment_collides([50.0, 30.0], [50.0, edge + 1e-9], &maze));
        // past the wall end, within the rounded inflation
        assert!(segment_collides([103.0, 3.0], [103.0, 30.0], &maze));
    }

    #[test]
    fn maze_parse_roundtrip() {
        let text =
            "# two walls\nwall 0 10 20 10\nwall 30 -5 30 25 # right\nstart 0 0 0\nwaypoint 10 30\ngoal 40 40 3\n";
        let maze = Maze::parse(text).unwrap();
        assert_eq!(maze.walls.len(), 2);
        assert_eq!(maze.route(), vec![[10.0, 30.0], [40.0, 40.0]]);
        assert_eq!(Maze::parse(&maze.to_text()).unwrap(), maze);
        assert!(matches!(
            Maze::parse("wall 0 0 1\nstart 0 0 0\ngoal 1 1 1"),
            Err(MazeError::Parse { line: 1, .. })
        ));
        assert_eq!(Maze::parse("start 0 0 0"), Err(MazeError::Missing("goal")));
        assert_eq!(Maze::parse("start 0 0 0\ngoal 1 1 0"), Err(MazeError::Tolerance(0.0)));
        assert_eq!(
            Maze::parse("wall 0 0 10 0\nstart 0 20 0\ngoal 5 1 1"),
            Err(MazeError::GoalInWall)
        );
    }

    #[test]
    fn pose_composition() {
        let p = Pose::new(1.0, 2.0, PI / 2.0).compose(3.0, 0.0, 0.5);
        assert!((p.x - 1.0).abs() < 1e-12 && (p.y - 5.0).abs() < 1e-12);
        assert_eq!(p.psi, PI / 2.0 + 0.5);
    }
}
