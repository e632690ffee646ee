//! Text encoding of policies and outcomes, and the three prompt layouts.
//!
//! Numbers are written in fixed point (three decimals by default), rounded
//! half away from zero on the exact binary value. Pattern prompts share one
//! task-agnostic header followed by `INPUTS;OUTPUTS` lines and end with the
//! query `INPUTS;` and no trailing newline.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::envs::{self, Point2, TaskFamily};

pub const DEFAULT_PRECISION: usize = 3;

pub const PATTERN_HEADER: &str = "You are a pattern generator machine. I will give you a series of patterns with INPUTS and OUTPUTS as examples. Then you will receive a new INPUTS, and you have to generate OUTPUTS following the pattern that appears in the data.\n\nPatterns are provided per-line as: INPUTS;OUTPUTS\n\nOnly reply with an estimate for the OUTPUTS. OUTPUTS should be 3 values separated by spaces.";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PromptError {
    #[error("cannot format non-finite value {0}")]
    NonFinite(f64),
    #[error("expected {expected} numbers, found at most {found}")]
    Arity { expected: usize, found: usize },
    #[error("a pattern prompt needs at least one example")]
    NoExamples,
}

/// Fixed-point number formatting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NumberFormat {
    pub precision: usize,
    /// Print values that round to zero as `0.000` rather than `-0.000`.
    pub normalize_negative_zero: bool,
}

impl Default for NumberFormat {
    fn default() -> Self {
        NumberFormat {
            precision: DEFAULT_PRECISION,
            normalize_negative_zero: true,
        }
    }
}

impl NumberFormat {
    pub fn with_precision(precision: usize) -> Self {
        NumberFormat {
            precision,
            ..Default::default()
        }
    }

    pub fn value(&self, x: f64) -> Result<String, PromptError> {
        if !x.is_finite() {
            return Err(PromptError::NonFinite(x));
        }
        // Every finite f64 has a terminating decimal expansion of at most 1074
        // fractional digits, so this string is exact.
        let exact = format!("{:.1074}", x.abs());
        let (int_part, frac_part) = exact.split_once('.').expect("fixed-point output");
        let mut digits: Vec<u8> = int_part
            .bytes()
            .chain(frac_part.bytes().take(self.precision))
            .map(|b| b - b'0')
            .collect();
        let round_up = frac_part.as_bytes()[self.precision] >= b'5';
        if round_up {
            let mut i = digits.len();
            loop {
                if i == 0 {
                    digits.insert(0, 1);
                    break;
                }
                i -= 1;
                if digits[i] == 9 {
                    digits[i] = 0;
                } else {
                    digits[i] += 1;
                    break;
                }
            }
        }
        let split = digits.len() - self.precision;
        let is_zero = digits.iter().all(|&d| d == 0);
        let mut out = String::with_capacity(digits.len() + 2);
        if x.is_sign_negative() && !(is_zero && self.normalize_negative_zero) {
            out.push('-');
        }
        for (i, d) in digits.iter().enumerate() {
            if i == split && self.precision > 0 {
                out.push('.');
            }
            out.push(char::from(b'0' + d));
        }
        Ok(out)
    }

    pub fn values(&self, xs: &[f64]) -> Result<String, PromptError> {
        let parts = xs.iter().map(|&x| self.value(x)).collect::<Result<Vec<_>, _>>()?;
        Ok(parts.join(" "))
    }

    fn point(&self, p: Point2) -> Result<String, PromptError> {
        Ok(format!("({}, {})", self.value(p[0])?, self.value(p[1])?))
    }
}

/// Space-separated fixed-point rendering with the default sign handling.
pub fn format_values(xs: &[f64], precision: usize) -> Result<String, PromptError> {
    NumberFormat::with_precision(precision).values(xs)
}

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").expect("valid regex"));

/// First `arity` numbers on the first line that has at least that many.
/// Surrounding prose and punctuation are ignored.
pub fn parse_values(text: &str, arity: usize) -> Result<Vec<f64>, PromptError> {
    let mut found = 0;
    for line in text.lines() {
        let nums: Vec<f64> = NUMBER
            .find_iter(line)
            .filter_map(|m| m.as_str().parse().ok())
            .collect();
        if nums.len() >= arity {
            return Ok(nums[..arity].to_vec());
        }
        found = found.max(nums.len());
    }
    Err(PromptError::Arity {
        expected: arity,
        found,
    })
}

/// Exactly `arity` whitespace-separated numbers and nothing else.
pub fn parse_values_strict(text: &str, arity: usize) -> Result<Vec<f64>, PromptError> {
    let nums: Result<Vec<f64>, _> = text.split_whitespace().map(f64::from_str).collect();
    match nums {
        Ok(v) if v.len() == arity => Ok(v),
        Ok(v) => Err(PromptError::Arity {
            expected: arity,
            found: v.len(),
        }),
        Err(_) => Err(PromptError::Arity {
            expected: arity,
            found: 0,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub text: String,
    pub expected_output_arity: usize,
}

/// How an execution outcome is presented in pattern inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Encoding {
    /// `theta (3), e (2)`
    #[default]
    #[serde(rename = "error")]
    RelativeError,
    /// `theta (3), s_t (2), goal (2)`
    #[serde(rename = "state-goal")]
    StateAndGoal,
}

impl FromStr for Encoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "error" => Ok(Encoding::RelativeError),
            "state-goal" => Ok(Encoding::StateAndGoal),
            other => Err(format!("unknown encoding `{other}`")),
        }
    }
}

/// One policy execution as seen by the pattern prompt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Execution {
    pub theta: [f64; 3],
    pub error: [f64; 2],
    pub goal: Point2,
}

impl Execution {
    pub fn inputs(&self, encoding: Encoding) -> Vec<f64> {
        let mut v = self.theta.to_vec();
        match encoding {
            Encoding::RelativeError => v.extend_from_slice(&self.error),
            Encoding::StateAndGoal => {
                v.push(self.error[0] + self.goal[0]);
                v.push(self.error[1] + self.goal[1]);
                v.extend_from_slice(&self.goal);
            }
        }
        v
    }
}

fn pattern_prompt(lines: &[String], query: &str, arity: usize) -> PromptText {
    let mut text = String::from(PATTERN_HEADER);
    text.push_str("\n\n");
    text.push_str(&lines.join("\n"));
    text.push_str("\n\n");
    text.push_str(query);
    text.push(';');
    PromptText {
        text,
        expected_output_arity: arity,
    }
}

/// Improvement prompt. `examples` are `(execution, delta_theta)` pairs in the
/// order they should appear (farthest neighbor first).
pub fn build_icpi_prompt(
    examples: &[(Execution, [f64; 3])],
    query: &Execution,
    encoding: Encoding,
    fmt: &NumberFormat,
) -> Result<PromptText, PromptError> {
    if examples.is_empty() {
        return Err(PromptError::NoExamples);
    }
    let lines = examples
        .iter()
        .map(|(exec, delta)| Ok(format!("{};{}", fmt.values(&exec.inputs(encoding))?, fmt.values(delta)?)))
        .collect::<Result<Vec<_>, PromptError>>()?;
    Ok(pattern_prompt(&lines, &fmt.values(&query.inputs(encoding))?, 3))
}

/// Cost-conditioned sequence prompt. History is reordered by decreasing cost
/// (stable), so the cheapest policy sits right above the target cost.
pub fn build_icsi_prompt(
    history: &[(f64, [f64; 3])],
    target_cost: f64,
    fmt: &NumberFormat,
) -> Result<PromptText, PromptError> {
    if history.is_empty() {
        return Err(PromptError::NoExamples);
    }
    let mut ordered: Vec<&(f64, [f64; 3])> = history.iter().collect();
    ordered.sort_by(|a, b| b.0.total_cmp(&a.0));
    let lines = ordered
        .iter()
        .map(|(c, theta)| Ok(format!("{};{}", fmt.value(*c)?, fmt.values(theta)?)))
        .collect::<Result<Vec<_>, PromptError>>()?;
    Ok(pattern_prompt(&lines, &fmt.value(target_cost)?, 3))
}

/// What the natural-language task description may reveal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskConstants {
    pub goal: Point2,
}

const IW_INTRO: &str = "You are a planner responsible for providing an action for a robot to execute. You should reason carefully about the physics of the scenario when planning. You may receive a description of previous interactions with the target system and should consider these previous interactions when deciding how to act. Each task is solved via a single action execution - it does not take multiple actions to complete the task.\n\nOnly reply with the action the robot should execute, as a space-separated list of numbers.";

const IW_HISTORY_INTRO: &str = "The robot has already interacted with the system several times. You will receive a set of descriptions of these interactions. You should consider the previous interactions and how to improve upon them when selecting the next action to attempt.";

const SLIDE_SETUP: &str = "A robot is positioned in front of a table. The robot has an arm which is extended over the table. The tool connected to the robot is a cylinder, starting perpendicular to the tabletop. In front of the robot arm on the table is a puck, which is also a cylinder, and it can move freely on the tabletop. The task is to use the robot arm to slide the puck on the table to a goal position. The robot tool and the puck start so that planar motions over the tabletop will cause the two to collide (i.e., no vertical motion of the robot tool is required). The robot has a single action to complete the task - it cannot take multiple actions.";

const ROPE_SETUP: &str = "A robot holds a rigid rod that pivots about the origin of a vertical plane, and a rope hangs from the free end of the rod. The rope is flexible and swings freely under gravity as the rod moves. The task is to swing the rod so that the tip of the rope passes through a goal position in the plane. Only the closest approach of the rope tip to the goal during the swing matters. The robot has a single action to complete the task - it cannot take multiple actions.";

fn slide_text(family: TaskFamily, constants: &TaskConstants, fmt: &NumberFormat) -> Result<String, PromptError> {
    let b = family.bounds();
    let v = |x: f64| fmt.value(x);
    let mut s = String::from(SLIDE_SETUP);
    s.push_str("\n\n");
    if family == TaskFamily::SlideGc {
        write!(
            s,
            "The puck starts at location {p} on the tabletop. The robot tool starts {d} meters from the center of the puck, on the side opposite to the chosen direction of motion. The goal is to move the puck to {g}.",
            p = fmt.point(envs::SLIDE_PUCK_START)?,
            d = v(envs::SLIDE_GC_STANDOFF)?,
            g = fmt.point(constants.goal)?,
        )
        .expect("write to string");
        s.push_str("\n\nThe action space of the robot is the approach angle, distance and duration of a planar motion of the robot tool. The first term is the angle of motion, where 0 degrees moves straight forward along the x dimension; the tool always travels along a line through the center of the puck, so contact is made head-on. The second term is the distance the robot will move. The third term is the time it will take to complete the motion.");
    } else {
        write!(
            s,
            "The robot tool starts at location {t} on the tabletop. The puck starts at location {p} on the tabletop. The goal is to move the puck to {g}.",
            t = fmt.point(envs::SLIDE_TOOL_START)?,
            p = fmt.point(envs::SLIDE_PUCK_START)?,
            g = fmt.point(constants.goal)?,
        )
        .expect("write to string");
        s.push_str("\n\nThe action space of the robot is the polar coordinates for a planar motion of the robot tool relative to its starting position and the time it takes to complete the motion. The first term is the angle of motion, where 0 degrees moves straight forward along the x dimension. The second term is the distance in that direction the robot will move. The third term is the time it will take to complete the motion.");
    }
    write!(
        s,
        "\n\nThe actions are bounded. The angle of motion must lie between {} and {} radians. The distance must be between {} and {} meters. The motion can take between {} and {} seconds to complete. The provided actions will be clipped into this range. The action is mapped to a dense set of tool locations via linear interpolation and executed on the system.",
        v(b.lower[0])?,
        v(b.upper[0])?,
        v(b.lower[1])?,
        v(b.upper[1])?,
        v(b.lower[2])?,
        v(b.upper[2])?,
    )
    .expect("write to string");
    Ok(s)
}

fn rope_text(family: TaskFamily, constants: &TaskConstants, fmt: &NumberFormat) -> Result<String, PromptError> {
    let b = family.bounds();
    let v = |x: f64| fmt.value(x);
    let mut s = String::from(ROPE_SETUP);
    s.push_str("\n\n");
    if family == TaskFamily::RopeSwingGc {
        write!(
            s,
            "The rod is {} meters long and the rope is {} meters long. ",
            v(envs::ROPE_GC_ROD_LENGTH)?,
            v(envs::ROPE_GC_ROPE_LENGTH)?
        )
        .expect("write to string");
    } else {
        s.push_str("The lengths of the rod and the rope are unknown. ");
    }
    write!(
        s,
        "Angles are measured from straight down, positive toward the +y direction. The rod and rope start hanging at rest. The goal is for the rope tip to pass through {}.",
        fmt.point(constants.goal)?
    )
    .expect("write to string");
    s.push_str("\n\nThe action space of the robot is a single swing of the rod. The first term is the peak angular velocity of the rod during the swing. The second term is the rod angle at the start of the swing. The third term is the rod angle at the end of the swing. The rod accelerates and decelerates smoothly between the two angles.");
    write!(
        s,
        "\n\nThe actions are bounded. The peak angular velocity must lie between {} and {} radians per second. The start angle must be between {} and {} radians. The end angle must be between {} and {} radians. The provided actions will be clipped into this range.",
        v(b.lower[0])?,
        v(b.upper[0])?,
        v(b.lower[1])?,
        v(b.upper[1])?,
        v(b.lower[2])?,
        v(b.upper[2])?,
    )
    .expect("write to string");
    Ok(s)
}

/// Natural-language task prompt with the previous `(theta, e)` interactions.
pub fn build_iw_prompt(
    family: TaskFamily,
    constants: &TaskConstants,
    history: &[([f64; 3], [f64; 2])],
    fmt: &NumberFormat,
) -> Result<PromptText, PromptError> {
    let (task, outcome) = if family.is_slide() {
        (slide_text(family, constants, fmt)?, "the final position of the puck")
    } else {
        (rope_text(family, constants, fmt)?, "the closest position of the rope tip")
    };
    let mut text = format!("{IW_INTRO}\n\n{task}\n\n{IW_HISTORY_INTRO}\n\n");
    write!(
        text,
        "The previous interactions will be provided with one interaction per line. Each line will describe the interaction as the action taken and {outcome} relative to the goal location, separated by a semi-colon. Each item is provided as a space-separated list of values."
    )
    .expect("write to string");
    if !history.is_empty() {
        let lines = history
            .iter()
            .map(|(theta, e)| Ok(format!("{};{}", fmt.values(theta)?, fmt.values(e)?)))
            .collect::<Result<Vec<_>, PromptError>>()?;
        text.push_str("\n\n");
        text.push_str(&lines.join("\n"));
    }
    Ok(PromptText {
        text,
        expected_output_arity: 3,
    })
}
