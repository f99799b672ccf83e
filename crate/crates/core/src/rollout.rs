//! Episode orchestration: settling, the rule-based keypoint policy, primitive
//! execution at 20 Hz, stage evaluation, and batched labeled-dataset output.
//!
//! An episode runs Drag -> Fling -> Insert&Pull on one garment. Stage
//! successes: S1 = the hem single-layer set is nonempty; S2 = the upper-side
//! hem single-layer area strictly exceeds `tau_area` of the image; S3 =
//! right-side-out coverage >= 0.80. S = S1*S2*S3, and a failed stage leaves
//! later stages unattempted. Evaluation always uses clean renders; sensor
//! noise applies only to emitted rasters.

use crate::collider::{ColliderSet, Gripper, JawShape, Table, Trajectory, Waypoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::garment::{self, Region};
use crate::geom;
use crate::math::{Real, Vec3};
use crate::perception::{
    self, jittered_mask, noisy_depth, randomized_camera, single_layer_region, upper_side_mask,
    Camera, NoiseParams, RenderScene, View,
};
use crate::primitives::{
    self, compile_drag, compile_fling, compile_insert_pull, BimanualPlan, GraspAction,
    PrimitiveTemplates, CONTROL_DT, MIN_GRIPPER_CLEARANCE,
};
use crate::rng;
use crate::solver::{self, material::MaterialParams, SimState};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Default jaw opening commanded while not grasping.
pub const OPEN_GAP: Real = 0.03;

/// Neighborhood radius (px) for the upper-layer depth test.
pub const UPPER_SIDE_RADIUS: u32 = 2;

/// Episode stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Drag,
    Fling,
    InsertPull,
}

pub const STAGES: [Stage; 3] = [Stage::Drag, Stage::Fling, Stage::InsertPull];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Drag => "drag",
            Stage::Fling => "fling",
            Stage::InsertPull => "insert_pull",
        }
    }

    pub fn index(self) -> usize {
        match self {
            Stage::Drag => 0,
            Stage::Fling => 1,
            Stage::InsertPull => 2,
        }
    }
}

/// A rendered observation plus the derived masks the policy consumes.
pub struct Observation {
    pub view: View,
    pub camera: Camera,
    /// Pixels whose first hit is the local top of the layer stack.
    pub upper: Vec<bool>,
}

/// Render the current cloth state through `camera`.
pub fn observe(state: &SimState, table_height: Real, camera: &Camera) -> Observation {
    let scene = RenderScene {
        positions: &state.x,
        faces: &state.mesh.faces,
        table_height,
    };
    let view = perception::render(camera, &scene);
    let upper = upper_side_mask(&view, UPPER_SIDE_RADIUS, state.material.thickness + state.h);
    Observation {
        view,
        camera: camera.clone(),
        upper,
    }
}

impl Observation {
    /// Back-project a pixel through the stored depth. Falls back to the
    /// nearest valid pixel within 3 px.
    pub fn backproject(&self, u: u32, v: u32) -> Result<Vec3> {
        let w = self.view.width as i64;
        let h = self.view.height as i64;
        let mut best: Option<(i64, Vec3)> = None;
        for dv in -3i64..=3 {
            for du in -3i64..=3 {
                let (uu, vv) = (u as i64 + du, v as i64 + dv);
                if uu < 0 || vv < 0 || uu >= w || vv >= h {
                    continue;
                }
                let d = self.view.depth[(vv * w + uu) as usize] as Real;
                if d > 0.0 && d.is_finite() {
                    let r2 = du * du + dv * dv;
                    if best.map_or(true, |(b, _)| r2 < b) {
                        let p = self.camera.backproject(uu as Real, vv as Real, d);
                        best = Some((r2, p));
                    }
                }
            }
        }
        best.map(|(_, p)| p).ok_or_else(|| {
            Error::Perception(format!("no valid depth within 3 px of ({u}, {v})"))
        })
    }

    fn centroid(&self, set: &[bool]) -> Option<(Real, Real)> {
        let mut su = 0.0;
        let mut sv = 0.0;
        let mut n = 0usize;
        for v in 0..self.view.height {
            for u in 0..self.view.width {
                if set[self.view.idx(u, v)] {
                    su += u as Real;
                    sv += v as Real;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| (su / n as Real, sv / n as Real))
    }

    /// Nearest set pixel to real-valued image coordinates.
    fn snap(&self, set: &[bool], cu: Real, cv: Real) -> Option<(u32, u32)> {
        let mut best: Option<(Real, (u32, u32))> = None;
        for v in 0..self.view.height {
            for u in 0..self.view.width {
                if !set[self.view.idx(u, v)] {
                    continue;
                }
                let d2 = (u as Real - cu).powi(2) + (v as Real - cv).powi(2);
                if best.map_or(true, |(b, _)| d2 < b) {
                    best = Some((d2, (u, v)));
                }
            }
        }
        best.map(|(_, px)| px)
    }

}

/// All garment-mask pixels whose first-hit face majority-labels as `want`.
fn region_mask(view: &View, faces: &[[u32; 3]], regions: &[Region], want: Region) -> Vec<bool> {
    let mut out = vec![false; view.len()];
    for i in 0..view.len() {
        if view.mask[i] && perception::pixel_region(view, faces, regions, i) == Some(want) {
            out[i] = true;
        }
    }
    out
}

/// Keypoint command compiled from one observation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    Drag {
        px: [u32; 2],
        world: [Real; 3],
        dir: [Real; 3],
    },
    Fling {
        left_px: [u32; 2],
        right_px: [u32; 2],
        left: [Real; 3],
        right: [Real; 3],
        pulse: [Real; 3],
    },
    InsertPull {
        lift_px: [u32; 2],
        pull_px: [u32; 2],
        lift: [Real; 3],
        pull: [Real; 3],
    },
}

impl Command {
    pub fn pixels(&self) -> Vec<[u32; 2]> {
        match self {
            Command::Drag { px, .. } => vec![*px],
            Command::Fling { left_px, right_px, .. } => vec![*left_px, *right_px],
            Command::InsertPull { lift_px, pull_px, .. } => vec![*lift_px, *pull_px],
        }
    }
}

fn v3(p: Vec3) -> [Real; 3] {
    [p.x, p.y, p.z]
}

/// The rule-based policy. Returns `None` when the stage's required region is
/// empty (a stage failure without a command).
pub fn heuristic_command(
    stage: Stage,
    obs: &Observation,
    faces: &[[u32; 3]],
    regions: &[Region],
    body_length: Real,
) -> Result<Option<Command>> {
    let view = &obs.view;
    match stage {
        Stage::Drag => {
            // Grasp the centroid of the collar single-layer set; drag along
            // the horizontal ray from the mask centroid through the grasp.
            let collar1 = single_layer_region(view, faces, regions, Region::CollarPart, 1);
            let Some((cu, cv)) = obs.centroid(&collar1) else {
                return Ok(None);
            };
            let (u, v) = obs.snap(&collar1, cu, cv).unwrap();
            let world = obs.backproject(u, v)?;
            let Some((mu, mv)) = obs.centroid(&view.mask) else {
                return Ok(None);
            };
            let mc = obs.backproject(mu.round() as u32, mv.round() as u32)?;
            let mut dir = Vec3::new(world.x - mc.x, world.y - mc.y, 0.0);
            if dir.norm() < 1e-6 {
                dir = Vec3::x();
            } else {
                dir.normalize_mut();
            }
            Ok(Some(Command::Drag {
                px: [u, v],
                world: v3(world),
                dir: v3(dir),
            }))
        }
        Stage::Fling => {
            // Extreme pixels of the hem-part band by image x, ties broken by
            // image y; pulse from the hem toward the garment bulk.
            let hem = region_mask(view, faces, regions, Region::HemPart);
            let mut left: Option<(u32, u32)> = None;
            let mut right: Option<(u32, u32)> = None;
            for v in 0..view.height {
                for u in 0..view.width {
                    if !hem[view.idx(u, v)] {
                        continue;
                    }
                    if left.map_or(true, |(lu, lv)| (u, v) < (lu, lv)) {
                        left = Some((u, v));
                    }
                    if right.map_or(true, |(ru, rv)| (u, v) > (ru, rv)) {
                        right = Some((u, v));
                    }
                }
            }
            let (Some(lpx), Some(rpx)) = (left, right) else {
                return Ok(None);
            };
            if lpx == rpx {
                return Ok(None);
            }
            let lw = obs.backproject(lpx.0, lpx.1)?;
            let rw = obs.backproject(rpx.0, rpx.1)?;
            let hc = obs.centroid(&hem).unwrap();
            let mc = obs.centroid(&view.mask).unwrap();
            let hw = obs.backproject(hc.0.round() as u32, hc.1.round() as u32)?;
            let mw = obs.backproject(mc.0.round() as u32, mc.1.round() as u32)?;
            let mut pulse = Vec3::new(mw.x - hw.x, mw.y - hw.y, 0.0);
            if pulse.norm() < 1e-6 {
                pulse = Vec3::x();
            } else {
                pulse.normalize_mut();
            }
            Ok(Some(Command::Fling {
                left_px: [lpx.0, lpx.1],
                right_px: [rpx.0, rpx.1],
                left: v3(lw),
                right: v3(rw),
                pulse: v3(pulse),
            }))
        }
        Stage::InsertPull => {
            // Lift the centroid of the upper-side hem single-layer set; pull
            // target 0.8 * body_length along the hem-to-collar image axis,
            // clamped to the last garment pixel on that ray.
            let hem1 = single_layer_region(view, faces, regions, Region::HemPart, 1);
            let lift_set: Vec<bool> = hem1
                .iter()
                .zip(&obs.upper)
                .map(|(&a, &b)| a && b)
                .collect();
            let Some((cu, cv)) = obs.centroid(&lift_set) else {
                return Ok(None);
            };
            let (lu, lv) = obs.snap(&lift_set, cu, cv).unwrap();
            let lift_w = obs.backproject(lu, lv)?;

            let hem = region_mask(view, faces, regions, Region::HemPart);
            let collar = region_mask(view, faces, regions, Region::CollarPart);
            let from = obs.centroid(&hem).unwrap();
            let to = obs
                .centroid(&collar)
                .or_else(|| obs.centroid(&view.mask))
                .unwrap();
            let mut axis = (to.0 - from.0, to.1 - from.1);
            let n = (axis.0 * axis.0 + axis.1 * axis.1).sqrt();
            if n < 1e-6 {
                return Ok(None);
            }
            axis = (axis.0 / n, axis.1 / n);

            let depth = view.depth[view.idx(lu, lv)] as Real;
            let px_per_m = 0.5 * (obs.camera.intr.fx + obs.camera.intr.fy) / depth;
            let dist_px = 0.8 * body_length * px_per_m;
            let mut pull = (lu, lv);
            let mut step = 1.0;
            while step <= dist_px {
                let uu = (lu as Real + axis.0 * step).round();
                let vv = (lv as Real + axis.1 * step).round();
                if uu < 0.0 || vv < 0.0 || uu >= view.width as Real || vv >= view.height as Real {
                    break;
                }
                if view.mask[view.idx(uu as u32, vv as u32)] {
                    pull = (uu as u32, vv as u32);
                }
                step += 1.0;
            }
            if pull == (lu, lv) {
                return Ok(None);
            }
            let pull_w = obs.backproject(pull.0, pull.1)?;
            Ok(Some(Command::InsertPull {
                lift_px: [lu, lv],
                pull_px: [pull.0, pull.1],
                lift: v3(lift_w),
                pull: v3(pull_w),
            }))
        }
    }
}

/// Compile a command into a plan with the configured templates.
pub fn compile_command(
    cmd: &Command,
    templates: &PrimitiveTemplates,
    table_height: Real,
    body_length: Real,
) -> Result<BimanualPlan> {
    match cmd {
        Command::Drag { world, dir, .. } => compile_drag(
            Vec3::from(*world),
            Vec3::from(*dir),
            &templates.drag,
            table_height,
            OPEN_GAP,
        ),
        Command::Fling { left, right, pulse, .. } => {
            let (l, r) = (Vec3::from(*left), Vec3::from(*right));
            // Arm 0's home is on +y; give it the +y keypoint so arms never
            // cross the table midline.
            let (a, b) = if l.y >= r.y { (l, r) } else { (r, l) };
            compile_fling(a, b, Vec3::from(*pulse), &templates.fling, table_height, OPEN_GAP)
        }
        Command::InsertPull { lift, pull, .. } => compile_insert_pull(
            Vec3::from(*lift),
            Vec3::from(*pull),
            body_length,
            &templates.insert_pull,
            table_height,
            OPEN_GAP,
        ),
    }
}

/// Execution knobs shared by settling and primitive execution.
#[derive(Debug, Clone, Copy)]
pub struct ExecOptions {
    pub safety: Real,
    pub max_substeps_per_tick: usize,
    pub attach_margin: Real,
    /// Record per-substep wall times.
    pub profile: bool,
    /// Count triangle self-intersections every control tick.
    pub sample_intersections: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            safety: 0.9,
            max_substeps_per_tick: 2000,
            attach_margin: 0.012,
            profile: false,
            sample_intersections: false,
        }
    }
}

/// Outcome of executing one plan.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ExecStats {
    pub ticks: usize,
    pub substeps: usize,
    pub wall_s: f64,
    /// Set when an attach event caught no particles; the plan was aborted.
    pub grasp_failed: bool,
    /// Plan time at which the stretch phase was truncated by tension.
    pub truncated_at: Option<Real>,
    /// Per-substep wall milliseconds (profile mode only).
    pub substep_ms: Vec<f32>,
    /// Per-tick intersection counts (sampling mode only).
    pub intersections: Vec<u32>,
    pub max_intersections: usize,
}

fn count_intersections(state: &SimState) -> usize {
    geom::self_intersections(&state.x, &state.mesh.faces).pairs.len()
}

/// Execute a compiled plan from the current state time. Grippers follow the
/// plan's trajectories; grasp events attach/release particles at tick
/// boundaries; Fling's stretch phase is truncated when the tension proxy
/// crosses its threshold.
pub fn execute_plan(
    state: &mut SimState,
    plan: &BimanualPlan,
    table: &Table,
    shape: JawShape,
    opts: &ExecOptions,
) -> Result<ExecStats> {
    let mut plan = plan.clone();
    let t0 = state.time;
    let mu_robot = state.material.mu_robot;
    let build = |plan: &BimanualPlan| ColliderSet {
        table: table.clone(),
        grippers: [
            Gripper {
                shape,
                mu: mu_robot,
                trajectory: plan.arms[0].clone(),
            },
            Gripper {
                shape,
                mu: mu_robot,
                trajectory: plan.arms[1].clone(),
            },
        ],
    };
    let mut colliders = build(&plan);
    check_plan_clearance(&colliders, plan.duration)?;

    let n_ticks = (plan.duration / CONTROL_DT).round() as usize;
    let mut stats = ExecStats {
        ticks: n_ticks,
        ..ExecStats::default()
    };
    let mut done = vec![false; plan.events.len()];
    let wall_start = Instant::now();

    for k in 0..n_ticks {
        let t_local = k as Real * CONTROL_DT;

        for (ei, e) in plan.events.iter().enumerate() {
            if done[ei] || e.t > t_local + 1e-9 {
                continue;
            }
            done[ei] = true;
            match e.action {
                GraspAction::Attach => {
                    let frame = colliders.at(t_local).grippers[e.arm].clone();
                    state.attach_grasp(e.arm, &frame, opts.attach_margin);
                    if state.grasps[e.arm].as_ref().is_none_or(|g| g.is_empty()) {
                        stats.grasp_failed = true;
                    }
                }
                GraspAction::Release => state.release_grasp(e.arm),
            }
        }
        if stats.grasp_failed {
            state.release_grasp(0);
            state.release_grasp(1);
            break;
        }

        if let Some(stretch) = plan.stretch {
            if t_local >= stretch.t_start - 1e-9 && t_local < stretch.t_end - 1e-9 {
                let frames = colliders.at(t_local);
                let p0 = frames.grippers[0].pose.translation.vector;
                let p1 = frames.grippers[1].pose.translation.vector;
                let axis = p1 - p0;
                let tension = if axis.norm() > 1e-9 {
                    let axis = axis / axis.norm();
                    state.grasp_tension(0, axis) + state.grasp_tension(1, -axis)
                } else {
                    0.0
                };
                if stretch.threshold <= 0.0 || tension >= stretch.threshold {
                    plan.truncate_stretch(t_local);
                    colliders = build(&plan);
                    stats.truncated_at = Some(t_local);
                }
            }
        }

        let substeps = if opts.profile {
            advance_profiled(state, &colliders, t0, opts, &mut stats.substep_ms)?
        } else {
            solver::advance(
                state,
                |t| colliders.at(t - t0),
                CONTROL_DT,
                opts.safety,
                opts.max_substeps_per_tick,
            )?
        };
        stats.substeps += substeps;

        if opts.sample_intersections {
            let n = count_intersections(state);
            stats.intersections.push(n as u32);
            stats.max_intersections = stats.max_intersections.max(n);
        }
    }
    stats.wall_s = wall_start.elapsed().as_secs_f64();
    Ok(stats)
}

fn advance_profiled(
    state: &mut SimState,
    colliders: &ColliderSet,
    t0: Real,
    opts: &ExecOptions,
    substep_ms: &mut Vec<f32>,
) -> Result<usize> {
    let t_end = state.time + CONTROL_DT;
    let mut n = 0usize;
    while state.time < t_end - 1e-12 {
        if n >= opts.max_substeps_per_tick {
            return Err(Error::Diverged(format!(
                "exceeded {} substeps in one control interval at t={:.4}",
                opts.max_substeps_per_tick, state.time
            )));
        }
        let dt = (opts.safety * state.cfl_max_dt()).min(t_end - state.time);
        let frames = colliders.at(state.time - t0);
        let t = Instant::now();
        solver::step(state, &frames, dt)?;
        substep_ms.push(t.elapsed().as_secs_f64() as f32 * 1e3);
        n += 1;
    }
    Ok(n)
}

/// Planned gripper-gripper clearance at every control tick.
fn check_plan_clearance(colliders: &ColliderSet, duration: Real) -> Result<()> {
    let n = (duration / CONTROL_DT).round() as usize;
    for k in 0..=n {
        let frames = colliders.at(k as Real * CONTROL_DT);
        let c = frames.gripper_clearance();
        if c < MIN_GRIPPER_CLEARANCE {
            return Err(Error::Primitive(format!(
                "gripper clearance {c:.3} m below {MIN_GRIPPER_CLEARANCE} m at t={:.2}",
                k as Real * CONTROL_DT
            )));
        }
    }
    Ok(())
}

/// Idle both grippers at home and advance the cloth.
pub fn settle(
    state: &mut SimState,
    table: &Table,
    duration: Real,
    opts: &ExecOptions,
) -> Result<usize> {
    let homes = primitives::home_positions();
    let idle = |p: Vec3| Trajectory {
        waypoints: vec![Waypoint {
            t: 0.0,
            pos: p,
            rot: crate::math::frame_from_axes(Vec3::x(), Vec3::z()),
            gap: OPEN_GAP,
        }],
    };
    let colliders = ColliderSet {
        table: table.clone(),
        grippers: [
            Gripper {
                shape: JawShape::default(),
                mu: state.material.mu_robot,
                trajectory: idle(homes[0]),
            },
            Gripper {
                shape: JawShape::default(),
                mu: state.material.mu_robot,
                trajectory: idle(homes[1]),
            },
        ],
    };
    let mut substeps = 0;
    let mut remaining = duration;
    while remaining > 1e-9 {
        let chunk = remaining.min(CONTROL_DT);
        substeps += solver::advance(
            state,
            |_| colliders.at(0.0),
            chunk,
            opts.safety,
            opts.max_substeps_per_tick,
        )?;
        remaining -= chunk;
    }
    Ok(substeps)
}

/// Settle with temporarily raised damping until the cloth is at rest.
/// Errors if the cloth is still moving after `max_time`.
pub fn settle_to_rest(
    state: &mut SimState,
    table: &Table,
    min_time: Real,
    max_time: Real,
    opts: &ExecOptions,
) -> Result<()> {
    let damping = state.material.damping;
    state.material.damping = damping.max(8.0);
    let mut t = 0.0;
    let mut rest = false;
    while t < max_time - 1e-9 {
        settle(state, table, 0.1, opts)?;
        t += 0.1;
        let vmax_now = state.v.iter().map(|v| v.norm()).fold(0.0, Real::max);
        if t >= min_time && vmax_now < 0.05 {
            rest = true;
            break;
        }
    }
    state.material.damping = damping;
    if !rest {
        return Err(Error::Solver(format!(
            "cloth failed to settle within {max_time} s"
        )));
    }
    Ok(())
}

/// Everything needed to simulate one episode.
#[derive(Debug, Clone)]
pub struct EpisodeSetup {
    pub index: u64,
    pub spec: crate::garment::GarmentSpec,
    pub material: MaterialParams,
    pub mu_table: Real,
    pub camera: Camera,
    pub table: Table,
    pub config: RunConfig,
}

/// Build episode `index`'s randomized setup from the run config.
pub fn episode_setup(config: &RunConfig, index: u64) -> EpisodeSetup {
    let spec = config.sample_garment(index);
    let (material, mu_table) = config.sample_material(index);
    let mut crng = rng::stream(config.seed, rng::streams::CAMERA, index);
    let cam_pos = Vec3::new(
        config.scene.garment_center_x,
        0.0,
        config.scene.table_height + config.scene.camera_height,
    );
    let camera = randomized_camera(
        config.camera.intrinsics,
        cam_pos,
        &config.camera.jitter,
        &mut crng,
    );
    EpisodeSetup {
        index,
        spec,
        material,
        mu_table,
        camera,
        table: Table {
            height: config.scene.table_height,
            mu: mu_table,
        },
        config: config.clone(),
    }
}

/// One candidate keypoint set and its rolled-out stage outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub pixels: Vec<[u32; 2]>,
    pub success: u8,
    /// Candidate rollout diverged; outcome recorded as failure.
    pub diverged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub attempted: bool,
    pub success: u8,
    /// `None` when the required region was empty (no command issued).
    pub command: Option<Command>,
    pub candidates: Vec<CandidateRecord>,
    pub exec: Option<ExecStats>,
    /// Upper-side hem single-layer pixel fraction after the stage.
    pub hem_single_upper_frac: Real,
    pub coverage_after: Real,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub id: String,
    pub index: u64,
    pub valid: bool,
    pub error: Option<String>,
    pub s1: u8,
    pub s2: u8,
    pub s3: u8,
    pub s: u8,
    pub attempted: [bool; 3],
    /// Recorded only when the episode reached its final observation.
    pub final_coverage: Option<Real>,
    pub stages: Vec<StageRecord>,
    pub substeps: usize,
    pub wall_s: f64,
    pub max_intersections: usize,
}

impl RolloutRecord {
    fn invalid(index: u64, err: &Error) -> RolloutRecord {
        RolloutRecord {
            id: episode_id(index),
            index,
            valid: false,
            error: Some(err.to_string()),
            s1: 0,
            s2: 0,
            s3: 0,
            s: 0,
            attempted: [false; 3],
            final_coverage: None,
            stages: Vec::new(),
            substeps: 0,
            wall_s: 0.0,
            max_intersections: 0,
        }
    }
}

pub fn episode_id(index: u64) -> String {
    format!("ep{index:06}")
}

/// Stage-success predicates on a post-stage observation.
pub fn evaluate_stage(
    stage: Stage,
    obs: &Observation,
    faces: &[[u32; 3]],
    regions: &[Region],
    tau_area: Real,
) -> u8 {
    let view = &obs.view;
    match stage {
        Stage::Drag => {
            let hem1 = single_layer_region(view, faces, regions, Region::HemPart, 1);
            u8::from(hem1.iter().any(|&b| b))
        }
        Stage::Fling => {
            let frac = hem_single_upper_frac(obs, faces, regions);
            u8::from(frac > tau_area)
        }
        Stage::InsertPull => {
            let mask_px = view.mask.iter().filter(|&&b| b).count();
            if mask_px == 0 {
                return 0;
            }
            u8::from(view.coverage() >= 0.80)
        }
    }
}

/// Upper-side hem single-layer pixels as a fraction of the image.
pub fn hem_single_upper_frac(obs: &Observation, faces: &[[u32; 3]], regions: &[Region]) -> Real {
    let hem1 = single_layer_region(&obs.view, faces, regions, Region::HemPart, 1);
    let n = hem1
        .iter()
        .zip(&obs.upper)
        .filter(|(&a, &b)| a && b)
        .count();
    n as Real / obs.view.len() as Real
}

/// Dense Drag supervision: 1 exactly on collar pixels with L(u) = 1.
pub fn drag_label_map(view: &View, faces: &[[u32; 3]], regions: &[Region]) -> Vec<bool> {
    single_layer_region(view, faces, regions, Region::CollarPart, 1)
}

fn is_runtime_failure(e: &Error) -> bool {
    matches!(e, Error::Diverged(_) | Error::Solver(_) | Error::Primitive(_))
}

/// Jitter a command's pixels uniformly within `radius` px, constrained to
/// `allowed` sets (one per keypoint). Falls back to the original pixel.
fn jitter_command(
    cmd: &Command,
    allowed: &[&[bool]],
    view: &View,
    obs: &Observation,
    radius: i64,
    rng: &mut ChaCha8Rng,
) -> Result<Command> {
    let mut pixels = cmd.pixels();
    for (k, px) in pixels.iter_mut().enumerate() {
        let set = allowed[k];
        for _ in 0..30 {
            let du = rng.gen_range(-radius..=radius);
            let dv = rng.gen_range(-radius..=radius);
            let (uu, vv) = (px[0] as i64 + du, px[1] as i64 + dv);
            if uu < 0 || vv < 0 || uu >= view.width as i64 || vv >= view.height as i64 {
                continue;
            }
            if set[view.idx(uu as u32, vv as u32)] {
                *px = [uu as u32, vv as u32];
                break;
            }
        }
    }
    // Rebuild world points; directional fields carry over.
    Ok(match cmd {
        Command::Drag { dir, .. } => {
            let w = obs.backproject(pixels[0][0], pixels[0][1])?;
            Command::Drag {
                px: pixels[0],
                world: v3(w),
                dir: *dir,
            }
        }
        Command::Fling { pulse, .. } => {
            if pixels[0] == pixels[1] {
                return Err(Error::Primitive("degenerate fling pair".into()));
            }
            let l = obs.backproject(pixels[0][0], pixels[0][1])?;
            let r = obs.backproject(pixels[1][0], pixels[1][1])?;
            Command::Fling {
                left_px: pixels[0],
                right_px: pixels[1],
                left: v3(l),
                right: v3(r),
                pulse: *pulse,
            }
        }
        Command::InsertPull { .. } => {
            if pixels[0] == pixels[1] {
                return Err(Error::Primitive("degenerate insert pair".into()));
            }
            let l = obs.backproject(pixels[0][0], pixels[0][1])?;
            let p = obs.backproject(pixels[1][0], pixels[1][1])?;
            Command::InsertPull {
                lift_px: pixels[0],
                pull_px: pixels[1],
                lift: v3(l),
                pull: v3(p),
            }
        }
    })
}

/// Allowed jitter regions per keypoint for candidate sampling.
fn candidate_sets<'a>(
    stage: Stage,
    view: &View,
    hem_band: &'a [bool],
    lift_set: &'a [bool],
    mask: &'a [bool],
) -> Vec<&'a [bool]> {
    let _ = view;
    match stage {
        Stage::Drag => vec![mask],
        Stage::Fling => vec![hem_band, hem_band],
        Stage::InsertPull => vec![lift_set, mask],
    }
}

/// Run one full episode. Dataset rasters are written under `emit_dir` when
/// given; metrics and labels always come back in the record.
pub fn run_episode(setup: &EpisodeSetup, emit_dir: Option<&Path>) -> RolloutRecord {
    match run_episode_inner(setup, emit_dir) {
        Ok(rec) => rec,
        Err(e) if is_runtime_failure(&e) => {
            log::warn!("episode {} invalid: {e}", setup.index);
            RolloutRecord::invalid(setup.index, &e)
        }
        Err(e) => {
            // Non-simulation failures (I/O, config) still produce a record,
            // but loudly.
            log::error!("episode {} failed: {e}", setup.index);
            RolloutRecord::invalid(setup.index, &e)
        }
    }
}

fn run_episode_inner(setup: &EpisodeSetup, emit_dir: Option<&Path>) -> Result<RolloutRecord> {
    let cfg = &setup.config;
    let wall_start = Instant::now();
    let opts = ExecOptions {
        safety: cfg.solver.safety,
        max_substeps_per_tick: cfg.solver.max_substeps_per_tick,
        attach_margin: cfg.rollout.attach_margin,
        profile: false,
        sample_intersections: true,
    };

    // Build, place, settle.
    let rest_mesh = garment::generate_shirt(&setup.spec)?;
    let placement_seed: u64 = rng::stream(cfg.seed, rng::streams::PLACEMENT, setup.index).gen();
    let placed = garment::place_inside_out(
        &rest_mesh,
        cfg.scene.table_height,
        cfg.scene.garment_center_x,
        placement_seed,
    )?;
    let h = cfg.solver.grid_spacing_factor * setup.spec.target_edge_length;
    let mut state = SimState::new(placed, setup.material, h)?;
    settle_to_rest(
        &mut state,
        &setup.table,
        cfg.rollout.settle_time,
        4.0 * cfg.rollout.settle_time.max(0.5),
        &opts,
    )?;

    let faces = state.mesh.faces.clone();
    let regions = state.mesh.regions.clone();
    let body_length = setup.spec.body_length;
    let shape = JawShape::default();
    let mut noise_rng = rng::stream(cfg.seed, rng::streams::NOISE, setup.index);
    let mut cand_rng = rng::stream(cfg.seed, rng::streams::CANDIDATES, setup.index);

    let mut rec = RolloutRecord {
        id: episode_id(setup.index),
        index: setup.index,
        valid: true,
        error: None,
        s1: 0,
        s2: 0,
        s3: 0,
        s: 0,
        attempted: [false; 3],
        final_coverage: None,
        stages: Vec::new(),
        substeps: 0,
        wall_s: 0.0,
        max_intersections: 0,
    };

    let mut obs = observe(&state, setup.table.height, &setup.camera);
    let mut reached_final = false;

    for stage in STAGES {
        rec.attempted[stage.index()] = true;
        if let Some(dir) = emit_dir {
            emit_frame(
                dir,
                &format!("{}_pre", stage.name()),
                &obs,
                &faces,
                &regions,
                stage == Stage::Drag,
                &cfg.noise,
                &mut noise_rng,
                setup,
            )?;
        }

        let cmd = heuristic_command(stage, &obs, &faces, &regions, body_length)?;
        let Some(cmd) = cmd else {
            rec.stages.push(StageRecord {
                stage,
                attempted: true,
                success: 0,
                command: None,
                candidates: Vec::new(),
                exec: None,
                hem_single_upper_frac: hem_single_upper_frac(&obs, &faces, &regions),
                coverage_after: obs.view.coverage(),
            });
            break;
        };

        // Candidate rollouts for the bimanual stages: jittered pairs first,
        // each restored from a snapshot; the heuristic pair runs last and the
        // episode continues from it.
        let mut candidates = Vec::new();
        if stage != Stage::Drag && cfg.rollout.candidates > 1 {
            let hem_band = region_mask(&obs.view, &faces, &regions, Region::HemPart);
            let hem1 = single_layer_region(&obs.view, &faces, &regions, Region::HemPart, 1);
            let lift_set: Vec<bool> = hem1
                .iter()
                .zip(&obs.upper)
                .map(|(&a, &b)| a && b)
                .collect();
            let sets = candidate_sets(stage, &obs.view, &hem_band, &lift_set, &obs.view.mask);
            let snapshot = state.clone();
            for _ in 0..cfg.rollout.candidates - 1 {
                let jittered =
                    match jitter_command(&cmd, &sets, &obs.view, &obs, 15, &mut cand_rng) {
                        Ok(c) => c,
                        Err(_) => continue,
                    };
                let outcome = rollout_candidate(
                    &mut state,
                    &jittered,
                    setup,
                    stage,
                    &faces,
                    &regions,
                    &opts,
                );
                state = snapshot.clone();
                candidates.push(match outcome {
                    Ok(success) => CandidateRecord {
                        pixels: jittered.pixels(),
                        success,
                        diverged: false,
                    },
                    Err(e) if is_runtime_failure(&e) => CandidateRecord {
                        pixels: jittered.pixels(),
                        success: 0,
                        diverged: true,
                    },
                    Err(e) => return Err(e),
                });
            }
        }

        let plan = compile_command(&cmd, &cfg.templates, setup.table.height, body_length)?;
        let stats = execute_plan(&mut state, &plan, &setup.table, shape, &opts)?;
        rec.substeps += stats.substeps;
        rec.max_intersections = rec.max_intersections.max(stats.max_intersections);
        settle(&mut state, &setup.table, cfg.rollout.post_stage_settle, &opts)?;

        obs = observe(&state, setup.table.height, &setup.camera);
        let success = if stats.grasp_failed {
            0
        } else {
            evaluate_stage(stage, &obs, &faces, &regions, cfg.rollout.tau_area)
        };
        candidates.push(CandidateRecord {
            pixels: cmd.pixels(),
            success,
            diverged: false,
        });

        match stage {
            Stage::Drag => rec.s1 = success,
            Stage::Fling => rec.s2 = success,
            Stage::InsertPull => rec.s3 = success,
        }
        rec.stages.push(StageRecord {
            stage,
            attempted: true,
            success,
            command: Some(cmd),
            candidates: if stage == Stage::Drag { Vec::new() } else { candidates },
            exec: Some(ExecStats {
                substep_ms: Vec::new(),
                intersections: stats.intersections.clone(),
                ..stats
            }),
            hem_single_upper_frac: hem_single_upper_frac(&obs, &faces, &regions),
            coverage_after: obs.view.coverage(),
        });

        if stage == Stage::InsertPull {
            reached_final = true;
            if let Some(dir) = emit_dir {
                emit_frame(
                    dir,
                    "final",
                    &obs,
                    &faces,
                    &regions,
                    false,
                    &cfg.noise,
                    &mut noise_rng,
                    setup,
                )?;
            }
        }
        if success == 0 {
            break;
        }
    }

    if reached_final {
        rec.final_coverage = Some(obs.view.coverage());
    }
    rec.s = rec.s1 * rec.s2 * rec.s3;
    rec.wall_s = wall_start.elapsed().as_secs_f64();
    Ok(rec)
}

/// Execute one candidate from the current state and score its stage.
fn rollout_candidate(
    state: &mut SimState,
    cmd: &Command,
    setup: &EpisodeSetup,
    stage: Stage,
    faces: &[[u32; 3]],
    regions: &[Region],
    opts: &ExecOptions,
) -> Result<u8> {
    let cfg = &setup.config;
    let plan = compile_command(cmd, &cfg.templates, setup.table.height, setup.spec.body_length)?;
    let mut o = *opts;
    o.sample_intersections = false;
    let stats = execute_plan(state, &plan, &setup.table, JawShape::default(), &o)?;
    settle(state, &setup.table, cfg.rollout.post_stage_settle, &o)?;
    if stats.grasp_failed {
        return Ok(0);
    }
    let obs = observe(state, setup.table.height, &setup.camera);
    Ok(evaluate_stage(stage, &obs, faces, regions, cfg.rollout.tau_area))
}

// ---------------------------------------------------------------------------
// Dataset emission.

fn png_path(dir: &Path, stem: &str, kind: &str) -> PathBuf {
    dir.join(format!("{stem}.{kind}"))
}

fn write_depth_raw(path: &Path, depth: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(depth.len() * 4);
    for d in depth {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    std::fs::write(path, buf)?;
    Ok(())
}

fn write_depth_png(path: &Path, depth: &[f32], width: u32, height: u32) -> Result<()> {
    let mm: Vec<u16> = depth
        .iter()
        .map(|&d| (d as Real * 1000.0).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(width, height, mm)
        .ok_or_else(|| Error::Perception("depth buffer size mismatch".into()))?;
    img.save(path)?;
    Ok(())
}

fn write_mask_png(path: &Path, mask: &[bool], width: u32, height: u32) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = image::ImageBuffer::<image::Luma<u8>, _>::from_raw(width, height, bytes)
        .ok_or_else(|| Error::Perception("mask buffer size mismatch".into()))?;
    img.save(path)?;
    Ok(())
}

#[derive(Serialize)]
struct FrameMeta<'a> {
    episode: &'a str,
    frame: &'a str,
    width: u32,
    height: u32,
    fx: Real,
    fy: Real,
    cx: Real,
    cy: Real,
    camera_position: [Real; 3],
    camera_rotation_xyzw: [Real; 4],
    depth_unit: &'a str,
}

/// Write one observation's rasters: noisy depth (raw f32 + 16-bit PNG in mm),
/// jittered mask, clean layer/polarity-derived label maps, and metadata.
#[allow(clippy::too_many_arguments)]
fn emit_frame(
    dir: &Path,
    stem: &str,
    obs: &Observation,
    faces: &[[u32; 3]],
    regions: &[Region],
    with_drag_label: bool,
    noise: &NoiseParams,
    noise_rng: &mut ChaCha8Rng,
    setup: &EpisodeSetup,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let view = &obs.view;
    let (w, h) = (view.width, view.height);

    let depth = noisy_depth(&view.depth, noise, noise_rng);
    let mask = jittered_mask(&view.mask, w, h, noise, noise_rng);
    write_depth_raw(&png_path(dir, stem, "depth.raw"), &depth)?;
    write_depth_png(&png_path(dir, stem, "depth.png"), &depth, w, h)?;
    write_mask_png(&png_path(dir, stem, "mask.png"), &mask, w, h)?;
    if with_drag_label {
        let label = drag_label_map(view, faces, regions);
        write_mask_png(&png_path(dir, stem, "label.png"), &label, w, h)?;
    }

    let q = obs.camera.pose.rotation;
    let meta = FrameMeta {
        episode: &episode_id(setup.index),
        frame: stem,
        width: w,
        height: h,
        fx: obs.camera.intr.fx,
        fy: obs.camera.intr.fy,
        cx: obs.camera.intr.cx,
        cy: obs.camera.intr.cy,
        camera_position: v3(obs.camera.pose.translation.vector),
        camera_rotation_xyzw: [q.i, q.j, q.k, q.w],
        depth_unit: "m (raw), mm (png)",
    };
    let f = std::fs::File::create(png_path(dir, stem, "meta.json"))?;
    serde_json::to_writer_pretty(f, &meta)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Batch running.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTotals {
    pub s1_attempts: usize,
    pub s1_successes: usize,
    pub s2_attempts: usize,
    pub s2_successes: usize,
    pub s3_attempts: usize,
    pub s3_successes: usize,
    pub episode_successes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub episodes: usize,
    pub valid_episodes: usize,
    pub totals: StageTotals,
    pub records: Vec<RolloutRecord>,
}

/// Aggregate stage-conditional counts. Invalid episodes are excluded.
pub fn stage_totals(records: &[RolloutRecord]) -> StageTotals {
    let mut t = StageTotals {
        s1_attempts: 0,
        s1_successes: 0,
        s2_attempts: 0,
        s2_successes: 0,
        s3_attempts: 0,
        s3_successes: 0,
        episode_successes: 0,
    };
    for r in records.iter().filter(|r| r.valid) {
        if r.attempted[0] {
            t.s1_attempts += 1;
            t.s1_successes += usize::from(r.s1 == 1);
        }
        if r.attempted[1] {
            t.s2_attempts += 1;
            t.s2_successes += usize::from(r.s2 == 1);
        }
        if r.attempted[2] {
            t.s3_attempts += 1;
            t.s3_successes += usize::from(r.s3 == 1);
        }
        t.episode_successes += usize::from(r.s == 1);
    }
    t
}

/// Run `episodes` episodes with up to `parallelism` worker threads. Results
/// are deterministic and independent of the worker count; the manifest and
/// label stream are ordered by episode id.
pub fn run_batch(
    config: &RunConfig,
    episodes: usize,
    parallelism: usize,
    out_dir: Option<&Path>,
) -> Result<BatchSummary> {
    config.validate()?;
    let parallelism = parallelism.clamp(1, episodes.max(1));
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let next = std::sync::atomic::AtomicU64::new(0);
    let mut records: Vec<Option<RolloutRecord>> = Vec::new();
    records.resize_with(episodes, || None);
    let slots = std::sync::Mutex::new(&mut records);

    std::thread::scope(|scope| {
        for _ in 0..parallelism {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= episodes as u64 {
                    break;
                }
                let setup = episode_setup(config, i);
                let ep_dir = out_dir.map(|d| d.join("episodes").join(episode_id(i)));
                let rec = run_episode(&setup, ep_dir.as_deref());
                slots.lock().unwrap()[i as usize] = Some(rec);
            });
        }
    });

    let records: Vec<RolloutRecord> = records
        .into_iter()
        .map(|r| r.expect("every episode produced a record"))
        .collect();

    let totals = stage_totals(&records);
    let summary = BatchSummary {
        schema_version: crate::config::SCHEMA_VERSION,
        config_hash: config.hash(),
        seed: config.seed,
        episodes,
        valid_episodes: records.iter().filter(|r| r.valid).count(),
        totals,
        records,
    };

    if let Some(dir) = out_dir {
        write_labels(dir, &summary)?;
        write_manifest(dir, &summary)?;
    }
    Ok(summary)
}

#[derive(Serialize)]
struct LabelLine<'a> {
    episode: &'a str,
    stage: &'a str,
    keypoints_px: Vec<[u32; 2]>,
    success: u8,
    candidates: &'a [CandidateRecord],
    label_map: Option<String>,
}

/// JSON-lines labels, one line per attempted stage, ordered by episode.
fn write_labels(dir: &Path, summary: &BatchSummary) -> Result<()> {
    let mut f = std::fs::File::create(dir.join("labels.jsonl"))?;
    for rec in &summary.records {
        for sr in &rec.stages {
            let Some(cmd) = &sr.command else { continue };
            let label_map = (sr.stage == Stage::Drag).then(|| {
                format!("episodes/{}/{}_pre.label.png", rec.id, sr.stage.name())
            });
            let line = LabelLine {
                episode: &rec.id,
                stage: sr.stage.name(),
                keypoints_px: cmd.pixels(),
                success: sr.success,
                candidates: &sr.candidates,
                label_map,
            };
            serde_json::to_writer(&mut f, &line)?;
            f.write_all(b"\n")?;
        }
    }
    Ok(())
}

fn write_manifest(dir: &Path, summary: &BatchSummary) -> Result<()> {
    // The manifest is part of the dataset payload and must be a pure function
    // of config and seed, so it carries no wall-clock timing: the same run at
    // any worker count has to serialize to identical bytes.
    #[derive(Serialize)]
    struct ManifestRecord<'a> {
        id: &'a str,
        valid: bool,
        s1: u8,
        s2: u8,
        s3: u8,
        s: u8,
        attempted: [bool; 3],
        final_coverage: Option<Real>,
        substeps: usize,
        max_intersections: usize,
        error: &'a Option<String>,
    }
    #[derive(Serialize)]
    struct Manifest<'a> {
        schema_version: u32,
        config_hash: &'a str,
        seed: u64,
        episodes: usize,
        valid_episodes: usize,
        totals: &'a StageTotals,
        records: Vec<ManifestRecord<'a>>,
    }
    let m = Manifest {
        schema_version: summary.schema_version,
        config_hash: &summary.config_hash,
        seed: summary.seed,
        episodes: summary.episodes,
        valid_episodes: summary.valid_episodes,
        totals: &summary.totals,
        records: summary
            .records
            .iter()
            .map(|r| ManifestRecord {
                id: &r.id,
                valid: r.valid,
                s1: r.s1,
                s2: r.s2,
                s3: r.s3,
                s: r.s,
                attempted: r.attempted,
                final_coverage: r.final_coverage,
                substeps: r.substeps,
                max_intersections: r.max_intersections,
                error: &r.error,
            })
            .collect(),
    };
    let f = std::fs::File::create(dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(f, &m)?;
    Ok(())
}
