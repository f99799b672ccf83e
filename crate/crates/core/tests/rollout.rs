//! Plan compilation and episode-orchestration contracts: purity, control-grid
//! alignment, clearance rejection, stretch truncation, and the policy's
//! empty-region / missing-depth behavior.

use garmsim::collider::{JawShape, Table};
use garmsim::garment::{generate_shirt, GarmentSpec, Region};
use garmsim::math::{Real, Vec3};
use garmsim::perception::{Camera, Intrinsics, Polarity, View};
use garmsim::primitives::{BimanualPlan, GraspAction, PrimitiveTemplates, CONTROL_DT};
use garmsim::rollout::{
    compile_command, execute_plan, heuristic_command, Command, ExecOptions, Observation, Stage,
    OPEN_GAP,
};
use garmsim::solver::{MaterialParams, SimState};

const TABLE: Real = 0.03;

fn templates() -> PrimitiveTemplates {
    PrimitiveTemplates::default()
}

fn drag_cmd() -> Command {
    Command::Drag {
        px: [320, 240],
        world: [0.45, 0.02, TABLE + 0.004],
        dir: [0.8, 0.6, 0.0],
    }
}

fn fling_cmd() -> Command {
    Command::Fling {
        left_px: [250, 230],
        right_px: [390, 245],
        left: [0.42, 0.16, TABLE + 0.003],
        right: [0.44, -0.17, TABLE + 0.002],
        pulse: [1.0, 0.1, 0.0],
    }
}

fn insert_cmd() -> Command {
    Command::InsertPull {
        lift_px: [300, 200],
        pull_px: [340, 300],
        lift: [0.38, 0.05, TABLE + 0.002],
        pull: [0.66, -0.04, TABLE + 0.001],
    }
}

fn all_commands() -> Vec<Command> {
    vec![drag_cmd(), fling_cmd(), insert_cmd()]
}

fn compile(cmd: &Command) -> BimanualPlan {
    compile_command(cmd, &templates(), TABLE, 0.62).unwrap()
}

// ---------------------------------------------------------------------------
// Compilation purity and protocol conformance.

#[test]
fn compilation_is_pure() {
    for cmd in all_commands() {
        let a = serde_json::to_string(&compile(&cmd)).unwrap();
        let b = serde_json::to_string(&compile(&cmd)).unwrap();
        assert_eq!(a, b, "recompiling {cmd:?} changed the plan");
    }
}

#[test]
fn plans_conform_to_the_control_protocol() {
    for cmd in all_commands() {
        let plan = compile(&cmd);
        plan.validate().unwrap();
        for (arm, traj) in plan.arms.iter().enumerate() {
            assert!(
                !traj.waypoints.is_empty(),
                "arm {arm} has no waypoints for {cmd:?}"
            );
            for w in &traj.waypoints {
                let ticks = w.t / CONTROL_DT;
                assert!(
                    (ticks - ticks.round()).abs() < 1e-9,
                    "waypoint at t={} is off the 50 ms grid",
                    w.t
                );
                assert!(w.t <= plan.duration + 1e-9);
                assert!(w.gap >= 0.0);
            }
            // Both arms start and end parked with the travel opening.
            assert_eq!(traj.waypoints[0].gap, OPEN_GAP);
            assert_eq!(traj.waypoints.last().unwrap().gap, OPEN_GAP);
        }
        // Events are sorted, in range, and pair up per arm.
        let mut last_t = 0.0;
        for e in &plan.events {
            assert!(e.t >= last_t - 1e-9, "events out of order");
            assert!(e.t >= 0.0 && e.t <= plan.duration + 1e-9);
            last_t = e.t;
        }
        for arm in 0..2 {
            let n_attach = plan
                .events
                .iter()
                .filter(|e| e.arm == arm && e.action == GraspAction::Attach)
                .count();
            let n_release = plan
                .events
                .iter()
                .filter(|e| e.arm == arm && e.action == GraspAction::Release)
                .count();
            assert_eq!(n_attach, n_release, "arm {arm} grasp not released");
        }
    }
}

#[test]
fn fling_keeps_arms_on_their_own_sides() {
    // The +y keypoint must go to arm 0 (the +y home) regardless of the order
    // the two pixels arrived in, so the arms never cross.
    let swapped = Command::Fling {
        left_px: [390, 245],
        right_px: [250, 230],
        left: [0.44, -0.17, TABLE + 0.002],
        right: [0.42, 0.16, TABLE + 0.003],
        pulse: [1.0, 0.1, 0.0],
    };
    for cmd in [fling_cmd(), swapped] {
        let plan = compile(&cmd);
        let attach_t = plan
            .events
            .iter()
            .filter(|e| e.action == GraspAction::Attach)
            .map(|e| e.t)
            .fold(0.0, Real::max);
        let y0 = plan.arms[0].sample(attach_t).pose.translation.vector.y;
        let y1 = plan.arms[1].sample(attach_t).pose.translation.vector.y;
        assert!(
            y0 > y1,
            "arm 0 grasped at y={y0:.3}, arm 1 at y={y1:.3}: sides crossed"
        );
    }
}

// ---------------------------------------------------------------------------
// Clearance rejection.

fn tiny_state() -> SimState {
    let spec = GarmentSpec {
        body_length: 0.20,
        hem_width: 0.16,
        collar_part_length: 0.06,
        collar_part_width: 0.03,
        front_neck_drop: 0.02,
        target_edge_length: 0.022,
        thickness: 2.0e-4,
        seed: 7,
    };
    let mesh = generate_shirt(&spec).unwrap();
    SimState::new(mesh, MaterialParams::default(), 1.5 * 0.022).unwrap()
}

#[test]
fn plans_with_colliding_grippers_are_rejected() {
    // Two fling keypoints 2 cm apart put the jaws inside each other at the
    // grasp; the pre-execution clearance sweep must reject the plan without
    // stepping the solver.
    let cmd = Command::Fling {
        left_px: [318, 240],
        right_px: [322, 240],
        left: [0.45, 0.01, TABLE + 0.002],
        right: [0.45, -0.01, TABLE + 0.002],
        pulse: [1.0, 0.0, 0.0],
    };
    let plan = compile(&cmd);
    let mut state = tiny_state();
    let table = Table {
        height: TABLE,
        mu: 0.3,
    };
    let err = execute_plan(
        &mut state,
        &plan,
        &table,
        JawShape::default(),
        &ExecOptions::default(),
    )
    .unwrap_err();
    let msg = err.to_string();
    assert!(
        msg.contains("clearance"),
        "expected a clearance rejection, got: {msg}"
    );
}

// ---------------------------------------------------------------------------
// Stretch truncation.

#[test]
fn stretch_truncation_freezes_pose_and_shifts_the_tail() {
    let plan0 = compile(&fling_cmd());
    let stretch = plan0.stretch.expect("fling plans carry a stretch phase");
    assert!(stretch.t_end > stretch.t_start + CONTROL_DT);
    assert!(stretch.threshold > 0.0);

    // Truncate one tick into the window, as execution would.
    let k = (stretch.t_start / CONTROL_DT).round() as i64 + 1;
    let t_c = k as Real * CONTROL_DT;
    assert!(t_c < stretch.t_end - 1e-9);

    let mut plan = plan0.clone();
    plan.truncate_stretch(t_c);
    plan.validate().unwrap();
    assert_eq!(plan.stretch.unwrap().t_end, t_c);
    assert_eq!(plan.duration, plan0.duration);

    for arm in 0..2 {
        let old = &plan0.arms[arm];
        let new = &plan.arms[arm];
        let frozen = old.sample(t_c).pose.translation.vector;
        let delta = frozen - old.sample(stretch.t_end).pose.translation.vector;

        // Before the cut: identical.
        let mut t = 0.0;
        while t < t_c - 1e-9 {
            let a = old.sample(t);
            let b = new.sample(t);
            assert!((a.pose.translation.vector - b.pose.translation.vector).norm() < 1e-12);
            assert!((a.gap - b.gap).abs() < 1e-12);
            t += CONTROL_DT;
        }
        // Inside the remaining window: pose held at the cut.
        let mut t = t_c;
        while t < stretch.t_end - 1e-9 {
            let p = new.sample(t).pose.translation.vector;
            assert!(
                (p - frozen).norm() < 1e-12,
                "arm {arm} moved during the truncated window at t={t}"
            );
            t += CONTROL_DT;
        }
        // After the window: the original path, rigidly shifted by the motion
        // that was cut, so no positional jump is ever commanded.
        let mut t = stretch.t_end;
        while t <= plan0.duration + 1e-9 {
            let a = old.sample(t).pose.translation.vector + delta;
            let b = new.sample(t).pose.translation.vector;
            assert!(
                (a - b).norm() < 1e-9,
                "arm {arm} tail not rigidly shifted at t={t}"
            );
            t += CONTROL_DT;
        }
        // Continuity at every waypoint hop: bounded speed.
        for pair in new.waypoints.windows(2) {
            let dt = pair[1].t - pair[0].t;
            let d = (pair[1].pos - pair[0].pos).norm();
            assert!(d <= 2.0 * dt + 1e-9, "speed cap violated after truncation");
        }
    }
}

#[test]
fn truncation_outside_the_window_is_a_no_op() {
    let plan0 = compile(&fling_cmd());
    let stretch = plan0.stretch.unwrap();
    for t_c in [0.0, stretch.t_start - CONTROL_DT, stretch.t_end, plan0.duration] {
        let mut plan = plan0.clone();
        plan.truncate_stretch(t_c);
        assert_eq!(
            serde_json::to_string(&plan).unwrap(),
            serde_json::to_string(&plan0).unwrap(),
            "truncate at t={t_c} changed the plan"
        );
    }
}

// ---------------------------------------------------------------------------
// Policy behavior on degenerate observations.

fn blank_view(width: u32, height: u32) -> View {
    let n = (width * height) as usize;
    View {
        width,
        height,
        depth: vec![0.0; n],
        mask: vec![false; n],
        layers: vec![0; n],
        polarity: vec![Polarity::Background; n],
        first_face: vec![-1; n],
    }
}

fn obs_from(view: View) -> Observation {
    let camera = Camera::top_down(Intrinsics::default(), Vec3::new(0.2, 0.0, 1.1), 0.0);
    Observation {
        upper: vec![true; view.len()],
        view,
        camera,
    }
}

#[test]
fn policy_declines_when_required_region_is_missing() {
    // A garment that shows only body pixels: no collar for Drag, no hem for
    // Fling or Insert&Pull. The policy must decline (stage failure) rather
    // than error.
    let mut view = blank_view(64, 48);
    let faces = vec![[0u32, 1, 2]];
    let regions = vec![Region::Body; 3];
    for i in 200..260 {
        view.mask[i] = true;
        view.layers[i] = 1;
        view.first_face[i] = 0;
        view.depth[i] = 1.0;
        view.polarity[i] = Polarity::Outside;
    }
    let obs = obs_from(view);
    for stage in [Stage::Drag, Stage::Fling, Stage::InsertPull] {
        let got = heuristic_command(stage, &obs, &faces, &regions, 0.62).unwrap();
        assert!(got.is_none(), "{stage:?} produced a command with no region");
    }
}

#[test]
fn policy_declines_on_an_empty_image() {
    let obs = obs_from(blank_view(64, 48));
    let faces: Vec<[u32; 3]> = Vec::new();
    let regions: Vec<Region> = Vec::new();
    for stage in [Stage::Drag, Stage::Fling, Stage::InsertPull] {
        let got = heuristic_command(stage, &obs, &faces, &regions, 0.62).unwrap();
        assert!(got.is_none());
    }
}

#[test]
fn policy_errors_when_depth_is_unusable() {
    // Collar pixels exist but every depth sample is invalid: back-projection
    // must fail loudly instead of planning from garbage.
    let mut view = blank_view(64, 48);
    let faces = vec![[0u32, 1, 2]];
    let regions = vec![Region::CollarPart; 3];
    for i in 200..260 {
        view.mask[i] = true;
        view.layers[i] = 1;
        view.first_face[i] = 0;
        view.polarity[i] = Polarity::Outside;
    }
    let obs = obs_from(view);
    let err = heuristic_command(Stage::Drag, &obs, &faces, &regions, 0.62).unwrap_err();
    assert!(err.to_string().contains("depth"), "got: {err}");
}
