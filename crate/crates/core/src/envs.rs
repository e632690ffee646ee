//! Task families, parametric policies and the analytic surrogate dynamics.
//!
//! Two setups are modelled:
//!
//! * **slide**: a disc tool strikes a puck resting on a table. The strike is an
//!   instantaneous impulse along the line of centers, after which the puck
//!   decelerates under Coulomb friction until it stops.
//! * **rope-swing**: a rod pivots about the origin following a min-jerk angle
//!   profile; the rope hanging from its tip is a point-mass pendulum on a moving
//!   support, integrated with fixed-step RK4.
//!
//! Every function here is pure; the same `(task, theta)` always produces the
//! bit-identical trajectory.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A point in the task's state plane (table plane or swing plane), meters.
pub type Point2 = [f64; 2];

pub const GRAVITY: f64 = 9.81;

/// Radius of the cylindrical tool that strikes the puck.
pub const TOOL_RADIUS: f64 = 0.02;
/// Fraction of the tool's velocity component along the contact normal that is
/// transferred to the puck.
pub const RESTITUTION: f64 = 1.0;
pub const SLIDE_TOOL_START: Point2 = [0.0, 0.0];
pub const SLIDE_PUCK_START: Point2 = [0.100, 0.000];
pub const SLIDE_GOAL: Point2 = [0.800, 0.000];
/// Distance between tool and puck centers at the start of a `slide-gc` approach.
pub const SLIDE_GC_STANDOFF: f64 = 0.100;
pub const SLIDE_GC_PUCK_RADIUS: f64 = 0.030;
pub const SLIDE_GC_FRICTION: f64 = 0.10;
pub const SLIDE_RECORD_DT: f64 = 0.01;

pub const SLIDE_RADIUS_RANGE: (f64, f64) = (0.02, 0.05);
pub const SLIDE_FRICTION_RANGE: (f64, f64) = (0.01, 0.03);

pub const ROPE_DT: f64 = 1e-3;
pub const ROPE_FOLLOW_THROUGH: f64 = 1.0;
/// Peak of the normalized min-jerk velocity profile `30 s^2 (1 - s)^2`.
const MIN_JERK_PEAK_RATE: f64 = 1.875;
pub const ROPE_ROD_RANGE: (f64, f64) = (0.18, 0.22);
pub const ROPE_LENGTH_RANGE: (f64, f64) = (0.40, 0.50);
pub const ROPE_GC_ROD_LENGTH: f64 = 0.20;
pub const ROPE_GC_ROPE_LENGTH: f64 = 0.45;

/// Reference swing whose apex is the fixed `rope-swing` goal.
pub const ROPE_REFERENCE_LENGTHS: (f64, f64) = (0.18, 0.40);
pub const ROPE_REFERENCE_THETA: [f64; 3] = [3.0, -0.6, 0.6];
/// Apex of the reference swing, frozen. `reference_rope_goal()` recomputes it.
pub const ROPE_GOAL: Point2 = [-0.05386572089408516, -0.5170971458125746];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("unknown task family `{0}`")]
    UnknownFamily(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskFamily {
    #[serde(rename = "slide")]
    Slide,
    #[serde(rename = "slide-gc")]
    SlideGc,
    #[serde(rename = "rope-swing")]
    RopeSwing,
    #[serde(rename = "rope-swing-gc")]
    RopeSwingGc,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 4] = [
        TaskFamily::Slide,
        TaskFamily::SlideGc,
        TaskFamily::RopeSwing,
        TaskFamily::RopeSwingGc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::Slide => "slide",
            TaskFamily::SlideGc => "slide-gc",
            TaskFamily::RopeSwing => "rope-swing",
            TaskFamily::RopeSwingGc => "rope-swing-gc",
        }
    }

    pub fn is_slide(self) -> bool {
        matches!(self, TaskFamily::Slide | TaskFamily::SlideGc)
    }

    pub fn is_goal_conditioned(self) -> bool {
        matches!(self, TaskFamily::SlideGc | TaskFamily::RopeSwingGc)
    }

    pub fn bounds(self) -> Bounds {
        if self.is_slide() {
            Bounds {
                lower: [-0.464, 0.112, 0.500],
                upper: [0.464, 0.350, 5.000],
            }
        } else {
            Bounds {
                lower: [1.0, -1.2, 0.0],
                upper: [6.0, 0.0, 1.2],
            }
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskFamily {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| EnvError::UnknownFamily(s.to_string()))
    }
}

/// Per-dimension policy bounds `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: [f64; 3],
    pub upper: [f64; 3],
}

impl Bounds {
    /// `upper - lower` for each dimension.
    pub fn range(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.upper[i] - self.lower[i])
    }

    pub fn midpoint(&self) -> PolicyParams {
        PolicyParams(std::array::from_fn(|i| {
            0.5 * (self.lower[i] + self.upper[i])
        }))
    }

    pub fn clip(&self, values: [f64; 3]) -> PolicyParams {
        PolicyParams(std::array::from_fn(|i| {
            values[i].clamp(self.lower[i], self.upper[i])
        }))
    }

    pub fn contains(&self, theta: &PolicyParams) -> bool {
        (0..3).all(|i| theta.0[i] >= self.lower[i] && theta.0[i] <= self.upper[i])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PolicyParams {
        PolicyParams(std::array::from_fn(|i| {
            rng.random_range(self.lower[i]..=self.upper[i])
        }))
    }

    /// Maps `theta` into the unit cube.
    pub fn normalize(&self, theta: &PolicyParams) -> [f64; 3] {
        let range = self.range();
        std::array::from_fn(|i| (theta.0[i] - self.lower[i]) / range[i])
    }

    pub fn denormalize(&self, unit: [f64; 3]) -> PolicyParams {
        let range = self.range();
        PolicyParams(std::array::from_fn(|i| self.lower[i] + unit[i] * range[i]))
    }
}

/// The three policy parameters. Slide: `(angle, distance, duration)`;
/// rope: `(peak angular speed, start angle, end angle)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PolicyParams(pub [f64; 3]);

impl PolicyParams {
    pub fn offset(&self, delta: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| self.0[i] + delta[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HiddenParams {
    Slide { puck_radius: f64, friction: f64 },
    Rope { rod_length: f64, rope_length: f64 },
}

/// One sampled task instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: TaskFamily,
    pub params: HiddenParams,
    pub goal: Point2,
    pub seed: u64,
    /// The policy whose rollout defined the goal (goal-conditioned families only).
    pub guide: Option<PolicyParams>,
}

impl TaskSpec {
    /// Same physical parameters as `self` but with a different goal.
    pub fn with_goal(&self, goal: Point2) -> TaskSpec {
        TaskSpec {
            goal,
            guide: None,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Point2>,
    pub dt: f64,
}

impl Trajectory {
    pub fn last(&self) -> Point2 {
        *self.states.last().expect("trajectory is never empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorVector(pub [f64; 2]);

impl ErrorVector {
    pub fn norm(&self) -> f64 {
        self.0[0].hypot(self.0[1])
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: (f64, f64)) -> f64 {
    rng.random_range(range.0..=range.1)
}

/// Physical parameters used by the goal-conditioned variant of a family.
pub fn fixed_params(family: TaskFamily) -> HiddenParams {
    if family.is_slide() {
        HiddenParams::Slide {
            puck_radius: SLIDE_GC_PUCK_RADIUS,
            friction: SLIDE_GC_FRICTION,
        }
    } else {
        HiddenParams::Rope {
            rod_length: ROPE_GC_ROD_LENGTH,
            rope_length: ROPE_GC_ROPE_LENGTH,
        }
    }
}

/// Samples a task from the family's distribution. Deterministic in `seed`.
pub fn sample_task(family: TaskFamily, seed: u64) -> TaskSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match family {
        TaskFamily::Slide => TaskSpec {
            family,
            params: HiddenParams::Slide {
                puck_radius: uniform(&mut rng, SLIDE_RADIUS_RANGE),
                friction: uniform(&mut rng, SLIDE_FRICTION_RANGE),
            },
            goal: SLIDE_GOAL,
            seed,
            guide: None,
        },
        TaskFamily::RopeSwing => TaskSpec {
            family,
            params: HiddenParams::Rope {
                rod_length: uniform(&mut rng, ROPE_ROD_RANGE),
                rope_length: uniform(&mut rng, ROPE_LENGTH_RANGE),
            },
            goal: ROPE_GOAL,
            seed,
            guide: None,
        },
        TaskFamily::SlideGc | TaskFamily::RopeSwingGc => {
            let guide = family.bounds().sample(&mut rng);
            let mut task = TaskSpec {
                family,
                params: fixed_params(family),
                goal: [0.0, 0.0],
                seed,
                guide: None,
            };
            let traj = rollout(&task, &guide).expect("fixed parameters are finite");
            task.goal = hindsight_goal(family, &traj);
            task.guide = Some(guide);
            task
        }
    }
}

/// The outcome that a hindsight relabel declares as the goal: the final puck
/// position for slide families, the highest rope-tip point for rope families.
pub fn hindsight_goal(family: TaskFamily, traj: &Trajectory) -> Point2 {
    if family.is_slide() {
        traj.last()
    } else {
        let mut best = 0;
        for (i, s) in traj.states.iter().enumerate() {
            if s[1] > traj.states[best][1] {
                best = i;
            }
        }
        traj.states[best]
    }
}

/// Recomputes the fixed `rope-swing` goal from the reference swing.
pub fn reference_rope_goal() -> Point2 {
    let (rod_length, rope_length) = ROPE_REFERENCE_LENGTHS;
    let task = TaskSpec {
        family: TaskFamily::RopeSwing,
        params: HiddenParams::Rope {
            rod_length,
            rope_length,
        },
        goal: [0.0, 0.0],
        seed: 0,
        guide: None,
    };
    let traj = rollout(&task, &PolicyParams(ROPE_REFERENCE_THETA)).expect("finite reference");
    hindsight_goal(TaskFamily::RopeSwing, &traj)
}

pub fn clip_policy(family: TaskFamily, theta: [f64; 3]) -> PolicyParams {
    family.bounds().clip(theta)
}

/// Simulates one policy execution.
pub fn rollout(task: &TaskSpec, theta: &PolicyParams) -> Result<Trajectory, EnvError> {
    if theta.0.iter().any(|v| !v.is_finite()) {
        return Err(EnvError::NonFinite("policy parameters"));
    }
    match task.params {
        HiddenParams::Slide {
            puck_radius,
            friction,
        } => {
            if !puck_radius.is_finite() || !friction.is_finite() || friction <= 0.0 {
                return Err(EnvError::NonFinite("slide parameters"));
            }
            let strike = match task.family {
                TaskFamily::SlideGc => Strike::approach(SLIDE_PUCK_START, theta),
                _ => Strike::from_start(SLIDE_TOOL_START, theta),
            };
            Ok(slide_trajectory(&strike, SLIDE_PUCK_START, puck_radius, friction))
        }
        HiddenParams::Rope {
            rod_length,
            rope_length,
        } => {
            if !rod_length.is_finite() || !rope_length.is_finite() || rope_length <= 0.0 {
                return Err(EnvError::NonFinite("rope parameters"));
            }
            Ok(rope_trajectory(rod_length, rope_length, theta))
        }
    }
}

/// `||s_T - g||` for slide families, `min_t ||s_t - g||` for rope families.
pub fn task_cost(task: &TaskSpec, traj: &Trajectory) -> f64 {
    error_vector(task, traj).norm()
}

/// `s_t - g` where `t = T` for slide families and the closest approach for
/// rope families.
pub fn error_vector(task: &TaskSpec, traj: &Trajectory) -> ErrorVector {
    let g = task.goal;
    let s = if task.family.is_slide() {
        traj.last()
    } else {
        let mut best = traj.states[0];
        let mut best_d = f64::INFINITY;
        for s in &traj.states {
            let d = (s[0] - g[0]).hypot(s[1] - g[1]);
            if d < best_d {
                best_d = d;
                best = *s;
            }
        }
        best
    };
    ErrorVector([s[0] - g[0], s[1] - g[1]])
}

/// Rolls out and returns `(error, cost)`.
pub fn evaluate(task: &TaskSpec, theta: &PolicyParams) -> Result<(ErrorVector, f64), EnvError> {
    let traj = rollout(task, theta)?;
    let e = error_vector(task, &traj);
    Ok((e, e.norm()))
}

// ---------------------------------------------------------------------------
// slide

/// A straight constant-speed tool motion.
#[derive(Debug, Clone, Copy)]
pub struct Strike {
    pub start: Point2,
    pub direction: Point2,
    pub distance: f64,
    pub duration: f64,
}

impl Strike {
    /// `slide`: the tool leaves `start` at angle `theta[0]`.
    pub fn from_start(start: Point2, theta: &PolicyParams) -> Strike {
        let [angle, distance, duration] = theta.0;
        Strike {
            start,
            direction: [angle.cos(), angle.sin()],
            distance,
            duration,
        }
    }

    /// `slide-gc`: the tool approaches the puck along the ray through its
    /// center at angle `theta[0]`, so contact is always head-on.
    pub fn approach(puck: Point2, theta: &PolicyParams) -> Strike {
        let [angle, distance, duration] = theta.0;
        let direction = [angle.cos(), angle.sin()];
        Strike {
            start: [
                puck[0] - SLIDE_GC_STANDOFF * direction[0],
                puck[1] - SLIDE_GC_STANDOFF * direction[1],
            ],
            direction,
            distance,
            duration,
        }
    }

    pub fn speed(&self) -> f64 {
        self.distance / self.duration
    }
}

/// Impulse delivered to the puck by a strike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    /// Time of contact after motion start.
    pub time: f64,
    /// Unit line-of-centers normal, pointing from tool to puck.
    pub normal: Point2,
    /// Puck launch speed along `normal`.
    pub launch_speed: f64,
}

/// First contact between the moving tool and the resting puck, if any.
pub fn strike_contact(strike: &Strike, puck: Point2, puck_radius: f64) -> Option<Contact> {
    let reach = puck_radius + TOOL_RADIUS;
    let w = [puck[0] - strike.start[0], puck[1] - strike.start[1]];
    let u = strike.direction;
    let along = w[0] * u[0] + w[1] * u[1];
    let perp_sq = (w[0] * w[0] + w[1] * w[1]) - along * along;
    if along <= 0.0 || perp_sq >= reach * reach {
        return None;
    }
    let travel = along - (reach * reach - perp_sq).sqrt();
    if travel > strike.distance || travel < 0.0 {
        return None;
    }
    let p = [
        strike.start[0] + travel * u[0],
        strike.start[1] + travel * u[1],
    ];
    let normal = [(puck[0] - p[0]) / reach, (puck[1] - p[1]) / reach];
    let speed = strike.speed();
    let approach = u[0] * normal[0] + u[1] * normal[1];
    Some(Contact {
        time: travel / speed,
        normal,
        launch_speed: RESTITUTION * approach * speed,
    })
}

/// Coulomb stopping distance `v^2 / (2 mu g)`.
pub fn stopping_distance(speed: f64, friction: f64) -> f64 {
    speed * speed / (2.0 * friction * GRAVITY)
}

/// Final resting position of the puck.
pub fn slide_final_position(strike: &Strike, puck: Point2, puck_radius: f64, friction: f64) -> Point2 {
    match strike_contact(strike, puck, puck_radius) {
        None => puck,
        Some(c) => {
            let l = stopping_distance(c.launch_speed, friction);
            [puck[0] + c.normal[0] * l, puck[1] + c.normal[1] * l]
        }
    }
}

fn slide_trajectory(strike: &Strike, puck: Point2, puck_radius: f64, friction: f64) -> Trajectory {
    let contact = strike_contact(strike, puck, puck_radius);
    let decel = friction * GRAVITY;
    let end_time = match contact {
        Some(c) => strike.duration.max(c.time + c.launch_speed / decel),
        None => strike.duration,
    };
    let position = |t: f64| -> Point2 {
        match contact {
            Some(c) if t > c.time => {
                let tau = (t - c.time).min(c.launch_speed / decel);
                let s = c.launch_speed * tau - 0.5 * decel * tau * tau;
                [puck[0] + c.normal[0] * s, puck[1] + c.normal[1] * s]
            }
            _ => puck,
        }
    };
    let n = (end_time / SLIDE_RECORD_DT).ceil() as usize;
    let mut states: Vec<Point2> = (0..n).map(|k| position(k as f64 * SLIDE_RECORD_DT)).collect();
    states.push(slide_final_position(strike, puck, puck_radius, friction));
    Trajectory {
        states,
        dt: SLIDE_RECORD_DT,
    }
}

// ---------------------------------------------------------------------------
// rope

/// Rod angle profile `phi(t)`, measured from the downward vertical.
#[derive(Debug, Clone, Copy)]
pub struct RodDrive {
    pub start: f64,
    pub end: f64,
    /// Duration of the swing; zero means the rod stays at `start`.
    pub duration: f64,
}

impl RodDrive {
    /// Min-jerk swing from `start` to `end` whose peak angular speed is `peak_rate`.
    pub fn min_jerk(peak_rate: f64, start: f64, end: f64) -> RodDrive {
        let sweep = (end - start).abs();
        let duration = if peak_rate > 0.0 && sweep > 0.0 {
            MIN_JERK_PEAK_RATE * sweep / peak_rate
        } else {
            0.0
        };
        RodDrive {
            start,
            end: if duration > 0.0 { end } else { start },
            duration,
        }
    }

    pub fn hold(angle: f64) -> RodDrive {
        RodDrive {
            start: angle,
            end: angle,
            duration: 0.0,
        }
    }

    /// `(phi, phi', phi'')` at time `t`.
    pub fn angle(&self, t: f64) -> (f64, f64, f64) {
        if self.duration <= 0.0 || t >= self.duration {
            return (self.end, 0.0, 0.0);
        }
        let s = (t / self.duration).max(0.0);
        let sweep = self.end - self.start;
        let s2 = s * s;
        let p = s2 * s * (10.0 - 15.0 * s + 6.0 * s2);
        let dp = 30.0 * s2 * (1.0 - s) * (1.0 - s);
        let ddp = 60.0 * s - 180.0 * s2 + 120.0 * s2 * s;
        (
            self.start + sweep * p,
            sweep * dp / self.duration,
            sweep * ddp / (self.duration * self.duration),
        )
    }

    /// Rod tip position and acceleration at time `t`.
    pub fn tip(&self, rod_length: f64, t: f64) -> (Point2, Point2) {
        let (phi, w, a) = self.angle(t);
        let (s, c) = phi.sin_cos();
        let pos = [rod_length * s, -rod_length * c];
        let acc = [
            rod_length * (a * c - w * w * s),
            rod_length * (a * s + w * w * c),
        ];
        (pos, acc)
    }
}

/// Pendulum angle `beta` from the downward vertical and its rate.
pub type PendulumState = [f64; 2];

fn pendulum_rhs(state: PendulumState, support_acc: Point2, rope_length: f64) -> PendulumState {
    let [beta, omega] = state;
    let (s, c) = beta.sin_cos();
    [
        omega,
        -(GRAVITY / rope_length) * s - (support_acc[0] * c + support_acc[1] * s) / rope_length,
    ]
}

/// One RK4 step of the rope pendulum on the moving rod tip.
pub fn rk4_step(
    state: PendulumState,
    t: f64,
    dt: f64,
    drive: &RodDrive,
    rod_length: f64,
    rope_length: f64,
) -> PendulumState {
    let acc = |t: f64| drive.tip(rod_length, t).1;
    let add = |s: PendulumState, k: PendulumState, h: f64| [s[0] + h * k[0], s[1] + h * k[1]];
    let a_mid = acc(t + 0.5 * dt);
    let k1 = pendulum_rhs(state, acc(t), rope_length);
    let k2 = pendulum_rhs(add(state, k1, 0.5 * dt), a_mid, rope_length);
    let k3 = pendulum_rhs(add(state, k2, 0.5 * dt), a_mid, rope_length);
    let k4 = pendulum_rhs(add(state, k3, dt), acc(t + dt), rope_length);
    [
        state[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        state[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Integrates the pendulum for `steps` steps, returning all `steps + 1` states.
pub fn integrate_pendulum(
    drive: &RodDrive,
    rod_length: f64,
    rope_length: f64,
    initial: PendulumState,
    dt: f64,
    steps: usize,
) -> Vec<PendulumState> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut state = initial;
    out.push(state);
    for k in 0..steps {
        state = rk4_step(state, k as f64 * dt, dt, drive, rod_length, rope_length);
        out.push(state);
    }
    out
}

fn rope_trajectory(rod_length: f64, rope_length: f64, theta: &PolicyParams) -> Trajectory {
    let [peak_rate, start, end] = theta.0;
    let drive = RodDrive::min_jerk(peak_rate, start, end);
    let horizon = drive.duration + ROPE_FOLLOW_THROUGH;
    let steps = (horizon / ROPE_DT).round() as usize;
    let states = integrate_pendulum(&drive, rod_length, rope_length, [0.0, 0.0], ROPE_DT, steps)
        .into_iter()
        .enumerate()
        .map(|(k, [beta, _])| {
            let (tip, _) = drive.tip(rod_length, k as f64 * ROPE_DT);
            [
                tip[0] + rope_length * beta.sin(),
                tip[1] - rope_length * beta.cos(),
            ]
        })
        .collect();
    Trajectory {
        states,
        dt: ROPE_DT,
    }
}
