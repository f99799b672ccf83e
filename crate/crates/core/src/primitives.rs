//! Keypoint-parameterized manipulation primitives.
//!
//! Each primitive compiles a pair of world-space keypoints (or one, for
//! dragging) into waypoint trajectories for two parallel-jaw grippers plus
//! grasp events. Compilation is pure: the same keypoints and template always
//! produce the same plan. State-dependent behavior (stretch truncation on a
//! tension threshold) happens in the executor, which rewrites the remaining
//! plan at runtime.

use crate::collider::{Trajectory, Waypoint};
use crate::error::{Error, Result};
use crate::math::{frame_from_axes, Quat, Real, Vec3};
use serde::{Deserialize, Serialize};

/// Control tick length (20 Hz). All waypoint times are multiples of this.
pub const CONTROL_DT: Real = 0.05;

/// Minimum allowed clearance between the two grippers.
pub const MIN_GRIPPER_CLEARANCE: Real = 0.02;

/// Hard cap on commanded gripper speed.
pub const MAX_GRIPPER_SPEED: Real = 2.0;

/// Jaw opening used when letting go of the garment, and in the approach to a
/// release. Much wider than the normal travel opening so the finger posts
/// stand well clear of the plane the held material recoils in when the grasp
/// anchors are dropped.
pub const RELEASE_GAP: Real = 0.10;

/// Round `t` up to the control grid, at least one tick.
fn quantize(t: Real) -> Real {
    ((t / CONTROL_DT).ceil() * CONTROL_DT).max(CONTROL_DT)
}

/// Grasp state changes executed at waypoint times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraspAction {
    Attach,
    Release,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ArmEvent {
    pub t: Real,
    pub arm: usize,
    pub action: GraspAction,
}

/// Tension-gated arm separation window inside a fling.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StretchPhase {
    pub t_start: Real,
    pub t_end: Real,
    /// Membrane tension (N) along the inter-gripper axis that ends the
    /// stretch early. Zero or negative skips stretching immediately.
    pub threshold: Real,
}

/// Compiled bimanual plan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BimanualPlan {
    pub arms: [Trajectory; 2],
    /// Sorted by time; attaches precede releases at equal times.
    pub events: Vec<ArmEvent>,
    pub stretch: Option<StretchPhase>,
    pub duration: Real,
}

impl BimanualPlan {
    /// Check protocol conformance: waypoint times on the 20 Hz grid and
    /// strictly increasing, events inside the plan, speeds under the cap.
    pub fn validate(&self) -> Result<()> {
        for (arm, traj) in self.arms.iter().enumerate() {
            traj.validate()?;
            for w in &traj.waypoints {
                let ticks = w.t / CONTROL_DT;
                if (ticks - ticks.round()).abs() > 1e-9 {
                    return Err(Error::Primitive(format!(
                        "arm {arm} waypoint at t={} is off the control grid",
                        w.t
                    )));
                }
            }
            for pair in traj.waypoints.windows(2) {
                let v = (pair[1].pos - pair[0].pos).norm() / (pair[1].t - pair[0].t);
                if v > MAX_GRIPPER_SPEED + 1e-9 {
                    return Err(Error::Primitive(format!(
                        "arm {arm} segment at t={} commands {v:.2} m/s",
                        pair[0].t
                    )));
                }
            }
        }
        for e in &self.events {
            if e.t < 0.0 || e.t > self.duration + 1e-9 || e.arm > 1 {
                return Err(Error::Primitive(format!(
                    "event at t={} outside plan of duration {}",
                    e.t, self.duration
                )));
            }
        }
        Ok(())
    }

    /// Freeze the stretch phase at time `t_c`: poses inside the remaining
    /// stretch window hold still, and all later waypoints shift rigidly so
    /// subsequent phases keep their relative motion.
    pub fn truncate_stretch(&mut self, t_c: Real) {
        let Some(stretch) = self.stretch else { return };
        if t_c >= stretch.t_end - 1e-9 || t_c < stretch.t_start - 1e-9 {
            return;
        }
        for traj in &mut self.arms {
            let frozen = traj.sample(t_c);
            let planned_end = traj.sample(stretch.t_end);
            let delta = frozen.pose.translation.vector - planned_end.pose.translation.vector;
            let mut kept: Vec<Waypoint> = traj
                .waypoints
                .iter()
                .filter(|w| w.t < t_c - 1e-12)
                .cloned()
                .collect();
            kept.push(Waypoint {
                t: t_c,
                pos: frozen.pose.translation.vector,
                rot: frozen.pose.rotation,
                gap: frozen.gap,
            });
            for w in &traj.waypoints {
                if w.t <= t_c + 1e-12 {
                    continue;
                }
                let mut w = w.clone();
                if w.t <= stretch.t_end + 1e-12 {
                    w.pos = frozen.pose.translation.vector;
                } else {
                    w.pos += delta;
                }
                kept.push(w);
            }
            traj.waypoints = kept;
        }
        self.stretch = Some(StretchPhase {
            t_end: t_c,
            ..stretch
        });
    }
}

/// Template for the single-arm drag.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DragTemplate {
    pub approach_height: Real,
    /// Grasp pose height above the table.
    pub grasp_height: Real,
    pub lift_height: Real,
    /// Horizontal displacement along the drag direction.
    pub distance: Real,
    pub travel_speed: Real,
    pub lift_speed: Real,
    pub drag_speed: Real,
    pub close_time: Real,
}

impl Default for DragTemplate {
    fn default() -> Self {
        DragTemplate {
            approach_height: 0.22,
            grasp_height: 0.002,
            lift_height: 0.32,
            distance: 0.35,
            travel_speed: 0.8,
            lift_speed: 0.35,
            drag_speed: 0.35,
            close_time: 0.1,
        }
    }
}

/// Template for the two-arm fling.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlingTemplate {
    pub approach_height: Real,
    pub grasp_height: Real,
    /// Lift height above the table for the stretch and pulse. Deliberately
    /// shorter than the garment body, so the collar end keeps resting on the
    /// table: its friction anchors the far end while the pulse extends the
    /// fabric between it and the held hem.
    pub lift_height: Real,
    /// Maximum added separation during the stretch phase.
    pub max_stretch: Real,
    /// Fraction of the grasp separation given up during the lift so the
    /// cloth hangs slack before the stretch.
    pub slack_fraction: Real,
    pub stretch_speed: Real,
    /// Tension threshold (N) ending the stretch early.
    pub tension_threshold: Real,
    /// Pulse amplitude (each way: forward this far, then back).
    pub pulse_amplitude: Real,
    /// Total pulse duration (forward and backward halves combined).
    pub pulse_time: Real,
    /// Height above the table at which the laid-out garment is released.
    pub release_height: Real,
    /// Rearward drift during the lowering ramp, paying the hanging mouth
    /// edge down in line behind the landed body instead of heaping it.
    pub drag_back: Real,
    pub travel_speed: Real,
    pub lift_speed: Real,
    pub close_time: Real,
}

impl Default for FlingTemplate {
    fn default() -> Self {
        FlingTemplate {
            approach_height: 0.22,
            grasp_height: 0.002,
            lift_height: 0.40,
            max_stretch: 0.20,
            slack_fraction: 0.2,
            stretch_speed: 0.15,
            tension_threshold: 2.0,
            pulse_amplitude: 0.15,
            pulse_time: 0.44,
            release_height: 0.10,
            drag_back: 0.40,
            travel_speed: 0.8,
            lift_speed: 0.5,
            close_time: 0.1,
        }
    }
}

/// Template for insert-and-pull.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InsertPullTemplate {
    pub approach_height: Real,
    pub grasp_height: Real,
    /// Lift of the single-layer edge before insertion.
    pub lift_height: Real,
    /// Clearance between the lower finger's underside and the table during
    /// the slide.
    pub finger_clearance: Real,
    /// Distance behind the lift point where the slide starts.
    pub back_off: Real,
    /// Rise of the inserting gripper before closing.
    pub raise_height: Real,
    /// Pull-out distance as a multiple of garment body length.
    pub pull_factor: Real,
    /// Height above the table while pulling out.
    pub pull_height: Real,
    pub travel_speed: Real,
    pub slide_speed: Real,
    pub pull_speed: Real,
    pub close_time: Real,
}

impl Default for InsertPullTemplate {
    fn default() -> Self {
        InsertPullTemplate {
            approach_height: 0.22,
            grasp_height: 0.002,
            lift_height: 0.12,
            finger_clearance: 0.0015,
            back_off: 0.10,
            raise_height: 0.04,
            pull_factor: 1.2,
            pull_height: 0.05,
            travel_speed: 0.8,
            slide_speed: 0.22,
            pull_speed: 0.35,
            close_time: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrimitiveTemplates {
    pub drag: DragTemplate,
    pub fling: FlingTemplate,
    pub insert_pull: InsertPullTemplate,
}

impl Default for PrimitiveTemplates {
    fn default() -> Self {
        PrimitiveTemplates {
            drag: DragTemplate::default(),
            fling: FlingTemplate::default(),
            insert_pull: InsertPullTemplate::default(),
        }
    }
}

/// Fixed parking poses of the two arms, outside the workspace.
pub fn home_positions() -> [Vec3; 2] {
    [Vec3::new(0.2, 0.55, 0.30), Vec3::new(0.2, -0.55, 0.30)]
}

/// Orientation for a top-down grasp with the jaw axis along `jaw`
/// (horizontal); fingers extend upward from the tool center point.
fn top_grasp_rot(jaw: Vec3) -> Quat {
    frame_from_axes(jaw, Vec3::z())
}

/// Builder for one arm's waypoint list.
struct ArmBuilder {
    wp: Vec<Waypoint>,
    t: Real,
}

impl ArmBuilder {
    fn start(pos: Vec3, rot: Quat, gap: Real) -> Self {
        ArmBuilder {
            wp: vec![Waypoint {
                t: 0.0,
                pos,
                rot,
                gap,
            }],
            t: 0.0,
        }
    }

    fn last(&self) -> Waypoint {
        self.wp.last().unwrap().clone()
    }

    /// Move to `pos` (keeping orientation and gap) over `time`.
    fn goto(&mut self, pos: Vec3, time: Real) -> &mut Self {
        let prev = self.last();
        self.t += quantize(time);
        self.wp.push(Waypoint {
            t: self.t,
            pos,
            rot: prev.rot,
            gap: prev.gap,
        });
        self
    }

    fn goto_timed(&mut self, pos: Vec3, speed: Real) -> &mut Self {
        let d = (pos - self.last().pos).norm();
        self.goto(pos, d / speed)
    }

    fn rotate(&mut self, rot: Quat, time: Real) -> &mut Self {
        let prev = self.last();
        self.t += quantize(time);
        self.wp.push(Waypoint {
            t: self.t,
            pos: prev.pos,
            rot,
            gap: prev.gap,
        });
        self
    }

    fn set_gap(&mut self, gap: Real, time: Real) -> &mut Self {
        let prev = self.last();
        self.t += quantize(time);
        self.wp.push(Waypoint {
            t: self.t,
            pos: prev.pos,
            rot: prev.rot,
            gap,
        });
        self
    }

    /// Move to `pos` while the jaw interpolates to `gap` over `time`.
    fn goto_gap(&mut self, pos: Vec3, gap: Real, time: Real) -> &mut Self {
        let prev = self.last();
        self.t += quantize(time);
        self.wp.push(Waypoint {
            t: self.t,
            pos,
            rot: prev.rot,
            gap,
        });
        self
    }

    /// Hold until absolute time `t` (no-op if already past).
    fn hold_until(&mut self, t: Real) -> &mut Self {
        if t > self.t + 1e-9 {
            let prev = self.last();
            self.t = t;
            self.wp.push(Waypoint {
                t,
                pos: prev.pos,
                rot: prev.rot,
                gap: prev.gap,
            });
        }
        self
    }

    fn finish(self) -> Trajectory {
        Trajectory { waypoints: self.wp }
    }
}

fn horizontal_unit(v: Vec3, fallback: Vec3) -> Vec3 {
    let h = Vec3::new(v.x, v.y, 0.0);
    let n = h.norm();
    if n < 1e-9 {
        fallback
    } else {
        h / n
    }
}

/// Compile a drag: grasp at `kp`, lift, move along `dir` (horizontal,
/// normalized internally), release, retract. The acting arm is the one whose
/// home is on `kp`'s side of the table.
pub fn compile_drag(
    kp: Vec3,
    dir: Vec3,
    tmpl: &DragTemplate,
    table_height: Real,
    open_gap: Real,
) -> Result<BimanualPlan> {
    let dir = horizontal_unit(dir, Vec3::x());
    let arm = if kp.y >= 0.0 { 0 } else { 1 };
    let homes = home_positions();
    let jaw = Vec3::new(-dir.y, dir.x, 0.0);
    let rot = top_grasp_rot(jaw);
    let above = Vec3::new(kp.x, kp.y, table_height + tmpl.approach_height);
    let grasp_pos = Vec3::new(kp.x, kp.y, table_height + tmpl.grasp_height);

    let mut b = ArmBuilder::start(homes[arm], top_grasp_rot(Vec3::x()), open_gap);
    b.goto_timed(above, tmpl.travel_speed)
        .rotate(rot, 0.2)
        .goto_timed(grasp_pos, tmpl.lift_speed);
    b.set_gap(0.0, tmpl.close_time);
    let t_attach = b.t;
    let lifted = grasp_pos + Vec3::new(0.0, 0.0, tmpl.lift_height);
    b.goto_timed(lifted, tmpl.lift_speed);
    let dragged = lifted + dir * tmpl.distance;
    b.goto_timed(dragged, tmpl.drag_speed);
    // Let go as the jaw starts to swing wide; the hanging material drops out
    // through the tip opening before the fingers move anywhere.
    let t_release = b.t;
    b.set_gap(RELEASE_GAP, tmpl.close_time);
    b.goto_timed(
        Vec3::new(dragged.x, dragged.y, table_height + tmpl.approach_height),
        tmpl.lift_speed,
    )
    .rotate(top_grasp_rot(Vec3::x()), 0.2);
    let home_time = (homes[arm] - b.last().pos).norm() / tmpl.travel_speed + CONTROL_DT;
    b.goto_gap(homes[arm], open_gap, home_time);
    let acting = b.finish();
    let duration = acting.end_time();

    let idle = Trajectory {
        waypoints: vec![Waypoint {
            t: 0.0,
            pos: homes[1 - arm],
            rot: top_grasp_rot(Vec3::x()),
            gap: open_gap,
        }],
    };
    let arms = if arm == 0 {
        [acting, idle]
    } else {
        [idle, acting]
    };
    let plan = BimanualPlan {
        arms,
        events: vec![
            ArmEvent {
                t: t_attach,
                arm,
                action: GraspAction::Attach,
            },
            ArmEvent {
                t: t_release,
                arm,
                action: GraspAction::Release,
            },
        ],
        stretch: None,
        duration,
    };
    plan.validate()?;
    Ok(plan)
}

/// Compile a fling of the grasp pair `(p_left, p_right)` with the pulse
/// along `pulse_dir` (horizontal). Arm 0 takes `p_left`.
pub fn compile_fling(
    p_left: Vec3,
    p_right: Vec3,
    pulse_dir: Vec3,
    tmpl: &FlingTemplate,
    table_height: Real,
    open_gap: Real,
) -> Result<BimanualPlan> {
    let pulse = horizontal_unit(pulse_dir, Vec3::x());
    let pair_axis = horizontal_unit(p_right - p_left, Vec3::y());
    let rot = top_grasp_rot(pair_axis);
    let homes = home_positions();
    let points = [p_left, p_right];
    let signs = [-1.0, 1.0];

    // Build both arms in lockstep so phases stay synchronized.
    let mut builders: Vec<ArmBuilder> = (0..2)
        .map(|a| ArmBuilder::start(homes[a], top_grasp_rot(Vec3::x()), open_gap))
        .collect();
    let sync = |builders: &mut Vec<ArmBuilder>| {
        let t = builders[0].t.max(builders[1].t);
        for b in builders.iter_mut() {
            b.hold_until(t);
        }
        t
    };

    for a in 0..2 {
        let kp = points[a];
        let above = Vec3::new(kp.x, kp.y, table_height + tmpl.approach_height);
        builders[a].goto_timed(above, tmpl.travel_speed).rotate(rot, 0.2);
        builders[a].goto_timed(
            Vec3::new(kp.x, kp.y, table_height + tmpl.grasp_height),
            tmpl.lift_speed,
        );
    }
    sync(&mut builders);
    for b in builders.iter_mut() {
        b.set_gap(0.0, tmpl.close_time);
    }
    let t_attach = sync(&mut builders);

    // Lift with slack: each gripper also moves toward the pair midpoint so
    // the grasped span hangs loose. The stretch phase then re-tautens it
    // until the tension threshold truncates the motion.
    let d_grasp = ((p_right - p_left).dot(&pair_axis)).abs();
    let slack_shift = 0.5 * tmpl.slack_fraction * d_grasp;
    for (a, b) in builders.iter_mut().enumerate() {
        let p = b.last().pos;
        let target = Vec3::new(p.x, p.y, table_height + tmpl.lift_height)
            - pair_axis * signs[a] * slack_shift;
        b.goto_timed(target, tmpl.lift_speed);
    }
    sync(&mut builders);

    let t_lifted = sync(&mut builders);

    // Stretch phase: move apart along the pair axis up to max separation.
    let stretch_time = quantize(0.5 * tmpl.max_stretch / tmpl.stretch_speed);
    for (a, b) in builders.iter_mut().enumerate() {
        let p = b.last().pos;
        b.goto(p + pair_axis * signs[a] * 0.5 * tmpl.max_stretch, stretch_time);
    }
    let t_stretched = sync(&mut builders);
    let stretch = StretchPhase {
        t_start: t_lifted,
        t_end: t_stretched,
        threshold: tmpl.tension_threshold,
    };

    // Relief: give back a little separation so the hem is not strung rigidly
    // taut between the two pinned jaws during the pulse.
    for (a, b) in builders.iter_mut().enumerate() {
        let p = b.last().pos;
        b.goto(p - pair_axis * signs[a] * (0.5 * slack_shift), 0.2);
    }
    sync(&mut builders);

    // Forward-then-backward pulse at constant height. The forward half
    // swings the hanging canopy up and ahead; the backward half cracks it
    // out straight so the garment planes forward fully extended, while the
    // landed collar end stays put under table friction. The held mouth edge
    // is what retreats, which is what later leaves the mouth agape on top
    // of the laid-out body.
    let half = quantize(0.5 * tmpl.pulse_time);
    for b in builders.iter_mut() {
        let p = b.last().pos;
        b.goto(p + pulse * tmpl.pulse_amplitude, half);
    }
    sync(&mut builders);
    for b in builders.iter_mut() {
        let p = b.last().pos;
        b.goto(p - pulse * tmpl.pulse_amplitude, half);
    }
    sync(&mut builders);

    // Lower: one gentle diagonal ramp that pays the extended garment onto
    // the table collar-end first, drifting backward so the fabric lays out
    // in a line instead of heaping under the jaws. The jaw opens on the way
    // down, in free air, so the later release is a pure detach: the finger
    // posts already stand wide of the plane the falling edge recoils in,
    // and the mouth edge settles at the jaw line with bare table behind it.
    for b in builders.iter_mut() {
        let p = b.last().pos;
        let low =
            Vec3::new(p.x, p.y, table_height + tmpl.release_height) - pulse * tmpl.drag_back;
        let lay_time = quantize((low - p).norm() / (0.45 * tmpl.lift_speed));
        b.goto_gap(low, RELEASE_GAP, lay_time);
    }
    let t_low = sync(&mut builders);
    // Dwell so residual swinging dies out before the jaw lets go.
    for b in builders.iter_mut() {
        b.hold_until(t_low + 0.2);
    }
    let t_release = sync(&mut builders);

    // Let go, wait out the drop of the held edge, then back away low over
    // the bare table behind the jaws before rising. Rising in place would
    // rake the wide-open finger posts up through the just-laid mouth edge;
    // the horizontal retreat first puts clear table under them.
    for b in builders.iter_mut() {
        b.hold_until(t_release + 0.3);
        let p = b.last().pos;
        b.goto(p - pulse * 0.12, quantize(0.4));
    }
    sync(&mut builders);
    for b in builders.iter_mut() {
        let p = b.last().pos;
        b.goto(
            Vec3::new(p.x, p.y, table_height + tmpl.approach_height),
            0.6,
        );
    }
    sync(&mut builders);

    // Park: square the wrists and return home with the jaw back at its
    // travel opening so the plan ends in the canonical idle pose.
    for (a, b) in builders.iter_mut().enumerate() {
        b.rotate(top_grasp_rot(Vec3::x()), 0.2);
        let home_time = (homes[a] - b.last().pos).norm() / tmpl.travel_speed + CONTROL_DT;
        b.goto_gap(homes[a], open_gap, home_time);
    }
    let duration = sync(&mut builders);

    let mut arms_iter = builders.into_iter();
    let plan = BimanualPlan {
        arms: [arms_iter.next().unwrap().finish(), arms_iter.next().unwrap().finish()],
        events: vec![
            ArmEvent {
                t: t_attach,
                arm: 0,
                action: GraspAction::Attach,
            },
            ArmEvent {
                t: t_attach,
                arm: 1,
                action: GraspAction::Attach,
            },
            ArmEvent {
                t: t_release,
                arm: 0,
                action: GraspAction::Release,
            },
            ArmEvent {
                t: t_release,
                arm: 1,
                action: GraspAction::Release,
            },
        ],
        stretch: Some(stretch),
        duration,
    };
    plan.validate()?;
    Ok(plan)
}

/// Compile insert-and-pull: arm 0 lifts the single-layer edge at `p_lift`,
/// arm 1 slides beneath it along d = `p_pull - p_lift`, grasps at `p_pull`,
/// and keeps moving along d by `pull_factor * body_length`, everting the
/// garment around the advancing jaw. Arm 0 releases one tick after the
/// handoff.
pub fn compile_insert_pull(
    p_lift: Vec3,
    p_pull: Vec3,
    body_length: Real,
    tmpl: &InsertPullTemplate,
    table_height: Real,
    open_gap: Real,
) -> Result<BimanualPlan> {
    let d = horizontal_unit(p_pull - p_lift, Vec3::x());
    let homes = home_positions();

    // Arm 0: lift the edge and hold.
    let jaw0 = Vec3::new(-d.y, d.x, 0.0);
    let rot0 = top_grasp_rot(jaw0);
    let mut b0 = ArmBuilder::start(homes[0], top_grasp_rot(Vec3::x()), open_gap);
    let above = Vec3::new(p_lift.x, p_lift.y, table_height + tmpl.approach_height);
    b0.goto_timed(above, tmpl.travel_speed).rotate(rot0, 0.2);
    b0.goto_timed(
        Vec3::new(p_lift.x, p_lift.y, table_height + tmpl.grasp_height),
        0.35,
    );
    b0.set_gap(0.0, tmpl.close_time);
    let t0_attach = b0.t;
    b0.goto_timed(
        Vec3::new(
            p_lift.x,
            p_lift.y,
            table_height + tmpl.grasp_height + tmpl.lift_height,
        ),
        0.25,
    );
    let t0_lifted = b0.t;

    // Arm 1: horizontal insertion under the lifted edge, jaws opening
    // vertically, fingers trailing the tool center point.
    let rot1 = frame_from_axes(Vec3::z(), -d);
    let shape_halfgap = 0.5 * open_gap;
    let slide_z = table_height + tmpl.finger_clearance + 0.01 + shape_halfgap;
    let start = Vec3::new(p_lift.x, p_lift.y, 0.0) - d * tmpl.back_off;
    let mut b1 = ArmBuilder::start(homes[1], top_grasp_rot(Vec3::x()), open_gap);
    b1.hold_until(quantize(t0_lifted));
    b1.goto_timed(
        Vec3::new(start.x, start.y, table_height + tmpl.approach_height),
        tmpl.travel_speed,
    )
    .rotate(rot1, 0.2)
    .goto_timed(Vec3::new(start.x, start.y, slide_z), 0.3);
    let slide_target = Vec3::new(p_pull.x, p_pull.y, slide_z);
    b1.goto_timed(slide_target, tmpl.slide_speed);
    b1.goto(slide_target + Vec3::new(0.0, 0.0, tmpl.raise_height), 0.3);
    b1.set_gap(0.0, tmpl.close_time);
    let t1_attach = b1.t;

    // Handoff: the lifting arm lets go one tick after the inserting arm
    // closes, then parks.
    let t0_release = quantize(t1_attach) + CONTROL_DT;
    b0.hold_until(t0_release);
    // Snap wide in place: the handed-off edge exits through the slot's open
    // side under the other arm's pull instead of being dragged upward while
    // still wedged between slowly separating fingers.
    b0.set_gap(RELEASE_GAP, 0.15);
    b0.goto(above, 0.5);
    b0.rotate(top_grasp_rot(Vec3::x()), 0.2);
    let home_time0 = (homes[0] - b0.last().pos).norm() / tmpl.travel_speed + CONTROL_DT;
    b0.goto_gap(homes[0], open_gap, home_time0);

    // Pull out along +d: the garment peels over the advancing jaw.
    let pull_dist = tmpl.pull_factor * body_length;
    let out = b1.last().pos + d * pull_dist;
    let out = Vec3::new(out.x, out.y, table_height + tmpl.pull_height + shape_halfgap + 0.01);
    b1.hold_until(t0_release + CONTROL_DT);
    b1.goto_timed(out, tmpl.pull_speed);
    // Release: open in place, then back the fingers straight out of the
    // everted fold the way they came in. The garment is wrapped around the
    // horizontal jaw, so rising first would carry the fold up with it.
    let t1_release = b1.t;
    b1.set_gap(RELEASE_GAP, 0.2);
    let p = b1.last().pos;
    b1.goto(p - d * 0.12, 0.6);
    let p = b1.last().pos;
    b1.goto(Vec3::new(p.x, p.y, table_height + tmpl.approach_height), 0.6)
        .rotate(top_grasp_rot(Vec3::x()), 0.2);
    let home_time1 = (homes[1] - b1.last().pos).norm() / tmpl.travel_speed + CONTROL_DT;
    b1.goto_gap(homes[1], open_gap, home_time1);

    let duration = b0.t.max(b1.t);
    let plan = BimanualPlan {
        arms: [b0.finish(), b1.finish()],
        events: vec![
            ArmEvent {
                t: t0_attach,
                arm: 0,
                action: GraspAction::Attach,
            },
            ArmEvent {
                t: t1_attach,
                arm: 1,
                action: GraspAction::Attach,
            },
            ArmEvent {
                t: t0_release,
                arm: 0,
                action: GraspAction::Release,
            },
            ArmEvent {
                t: t1_release,
                arm: 1,
                action: GraspAction::Release,
            },
        ],
        stretch: None,
        duration,
    };
    plan.validate()?;
    Ok(plan)
}
