mod common;

use icpi::envs::{
    clip_policy, error_vector, evaluate, hindsight_goal, rollout, sample_task, task_cost, HiddenParams, PolicyParams,
    TaskFamily, TaskSpec, SLIDE_GOAL, SLIDE_PUCK_START, SLIDE_TOOL_START,
};
use proptest::prelude::*;

use common::stepped_slide_final;

fn slide_task(radius: f64, friction: f64) -> TaskSpec {
    TaskSpec {
        family: TaskFamily::Slide,
        params: HiddenParams::Slide {
            puck_radius: radius,
            friction,
        },
        goal: SLIDE_GOAL,
        seed: 0,
        guide: None,
    }
}

#[test]
fn head_on_push_example() {
    let task = slide_task(0.030, 0.1);
    let end = rollout(&task, &PolicyParams([0.0, 0.300, 1.000])).unwrap().last();
    let expected = 0.1 + 0.3f64.powi(2) / (2.0 * 0.1 * 9.81);
    assert!((end[0] - expected).abs() < 1e-12);
    assert!((end[0] - 0.14587).abs() < 1e-5);
    assert_eq!(end[1], 0.0);
    let stepped = stepped_slide_final(SLIDE_TOOL_START, 0.0, 0.3, 1.0, SLIDE_PUCK_START, 0.030, 0.1, 1e-5);
    assert!((end[0] - stepped[0]).abs() < 1e-4);
}

#[test]
fn goal_conditioned_goals_replay() {
    for family in [TaskFamily::SlideGc, TaskFamily::RopeSwingGc] {
        let task = sample_task(family, 3);
        let guide = task.guide.unwrap();
        let traj = rollout(&task, &guide).unwrap();
        assert_eq!(hindsight_goal(family, &traj), task.goal);
        assert!(evaluate(&task, &guide).unwrap().1 < 1e-12);
        assert_eq!(sample_task(family, 7), sample_task(family, 7));
    }
}

#[test]
fn rope_hangs_without_drive() {
    let task = sample_task(TaskFamily::RopeSwing, 12);
    let HiddenParams::Rope { rod_length, rope_length } = task.params else {
        panic!("rope params expected");
    };
    // theta_v at its lower bound with J2 = J3 = 0 leaves the rod still
    let traj = rollout(&task, &PolicyParams([1.0, 0.0, 0.0])).unwrap();
    for s in &traj.states {
        assert!(s[0].abs() < 1e-12);
        assert!((s[1] + rod_length + rope_length).abs() < 1e-12);
    }
}

#[test]
fn rope_error_is_at_closest_approach() {
    let task = sample_task(TaskFamily::RopeSwing, 5);
    let traj = rollout(&task, &PolicyParams([3.0, -0.8, 0.9])).unwrap();
    let dist = |s: &[f64; 2]| ((s[0] - task.goal[0]).powi(2) + (s[1] - task.goal[1]).powi(2)).sqrt();
    let min = traj.states.iter().map(dist).fold(f64::INFINITY, f64::min);
    assert_eq!(task_cost(&task, &traj), min);
    assert!((error_vector(&task, &traj).norm() - min).abs() < 1e-15);
}

fn family() -> impl Strategy<Value = TaskFamily> {
    prop_oneof![
        Just(TaskFamily::Slide),
        Just(TaskFamily::SlideGc),
        Just(TaskFamily::RopeSwing),
        Just(TaskFamily::RopeSwingGc)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clip_is_idempotent_and_bounded(f in family(), a in -10.0..10.0f64, b in -10.0..10.0f64, c in -10.0..10.0f64) {
        let once = clip_policy(f, [a, b, c]);
        prop_assert!(f.bounds().contains(&once));
        prop_assert_eq!(clip_policy(f, once.0), once);
    }

    #[test]
    fn cost_is_error_norm_and_deterministic(f in family(), seed in 0u64..1000, u in proptest::array::uniform3(0.0..=1.0f64)) {
        let task = sample_task(f, seed);
        let theta = f.bounds().denormalize(u);
        let (e1, c1) = evaluate(&task, &theta).unwrap();
        let (e2, c2) = evaluate(&task, &theta).unwrap();
        prop_assert_eq!(e1, e2);
        prop_assert_eq!(c1.to_bits(), c2.to_bits());
        prop_assert!(c1 >= 0.0);
        prop_assert!((e1.norm() - c1).abs() < 1e-12);
    }

    #[test]
    fn slide_matches_stepped_oracle(
        radius in 0.02..0.05f64,
        friction in 0.01..0.1f64,
        u in proptest::array::uniform3(0.0..=1.0f64),
    ) {
        let task = slide_task(radius, friction);
        let theta = TaskFamily::Slide.bounds().denormalize(u);
        let got = rollout(&task, &theta).unwrap().last();
        let [angle, distance, duration] = theta.0;
        let want = stepped_slide_final(SLIDE_TOOL_START, angle, distance, duration, SLIDE_PUCK_START, radius, friction, 1e-4);
        prop_assert!(((got[0] - want[0]).powi(2) + (got[1] - want[1]).powi(2)).sqrt() < 1e-4);
    }
}
