//! Kinematic colliders: the padded table surface and two parallel-jaw
//! grippers following waypoint trajectories.
//!
//! Colliders are one-way: they impose velocity constraints on grid nodes and
//! particles through a projected Coulomb update but receive no forces.

use crate::error::{Error, Result};
use crate::math::{Iso3, Mat3, Quat, Real, Vec3};
use serde::{Deserialize, Serialize};

/// Regularizer in the tangential direction of the friction projection.
pub const FRICTION_EPS: Real = 1e-8;

/// Projected Coulomb velocity update against a collider surface.
///
/// `v` is the node or particle velocity, `u_col` the collider's material
/// velocity at that point, `n` the outward surface normal, `phi` the signed
/// distance. Inside the collider (`phi <= 0`) and approaching (`u_n < 0`),
/// the normal component of the relative velocity is removed and the
/// tangential component is shortened by the friction impulse
/// `min(|u_t|, mu * (-u_n))`; otherwise `v` is returned unchanged.
pub fn project_velocity(v: Vec3, u_col: Vec3, n: Vec3, phi: Real, mu: Real) -> Vec3 {
    if phi > 0.0 {
        return v;
    }
    let u = v - u_col;
    let u_n = u.dot(&n);
    if u_n >= 0.0 {
        return v;
    }
    let u_t = u - u_n * n;
    let ut_norm = u_t.norm();
    let drop = ut_norm.min(mu * (-u_n));
    let u_proj = u_t - drop * u_t / (ut_norm + FRICTION_EPS);
    u_col + u_proj
}

/// Worst-case slacks of the contact-projection invariants, accumulated over
/// every velocity-changing projection while auditing is enabled.
#[derive(Debug, Clone, Copy)]
pub struct ContactAudit {
    /// Max over contacts of `|impulse_t| / |impulse_n| - mu` for the collider
    /// that applied the impulse; Coulomb admissibility keeps this at or below
    /// zero up to rounding. `-inf` until the first contact.
    pub max_friction_excess: Real,
    /// Max `|project(project(v)) - project(v)|` over all audited points.
    pub max_idempotence_gap: Real,
    /// Number of velocity-changing contact projections observed.
    pub contacts: u64,
}

impl Default for ContactAudit {
    fn default() -> Self {
        ContactAudit {
            max_friction_excess: Real::NEG_INFINITY,
            max_idempotence_gap: 0.0,
            contacts: 0,
        }
    }
}

impl ContactAudit {
    fn record(&mut self, v_in: Vec3, v_out: Vec3, n: Vec3, mu: Real) {
        let d = v_out - v_in;
        if d == Vec3::zeros() {
            return;
        }
        self.contacts += 1;
        let d_n = d.dot(&n);
        let d_t = d - d_n * n;
        // The projection never applies a purely tangential impulse; guard the
        // division anyway and flag such an impulse as infinitely outside the
        // cone.
        if d_n.abs() > 0.0 {
            self.max_friction_excess = self.max_friction_excess.max(d_t.norm() / d_n.abs() - mu);
        } else {
            self.max_friction_excess = Real::INFINITY;
        }
    }
}

/// Flat table with padded top at `z = height`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table {
    pub height: Real,
    pub mu: Real,
}

impl Table {
    pub fn sdf(&self, x: Vec3) -> Real {
        x.z - self.height
    }

    pub fn project(&self, x: Vec3, v: Vec3) -> Vec3 {
        project_velocity(v, Vec3::zeros(), Vec3::z(), self.sdf(x), self.mu)
    }
}

/// Parallel-jaw finger geometry, fixed per gripper.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JawShape {
    /// Square cross-section side of each finger.
    pub finger_size: Real,
    /// Finger extent along the local +z axis.
    pub finger_length: Real,
    /// Inner-face separation when fully open.
    pub open_gap: Real,
}

impl Default for JawShape {
    fn default() -> Self {
        JawShape {
            finger_size: 0.01,
            finger_length: 0.04,
            open_gap: 0.03,
        }
    }
}

fn box_sdf(p: Vec3, center: Vec3, half: Vec3) -> Real {
    let q = Vec3::new(
        (p.x - center.x).abs() - half.x,
        (p.y - center.y).abs() - half.y,
        (p.z - center.z).abs() - half.z,
    );
    let outside = Vec3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
    let inside = q.x.max(q.y).max(q.z).min(0.0);
    outside + inside
}

impl JawShape {
    fn finger_centers(&self, gap: Real) -> [Vec3; 2] {
        let cx = 0.5 * gap + 0.5 * self.finger_size;
        let cz = 0.5 * self.finger_length;
        [Vec3::new(cx, 0.0, cz), Vec3::new(-cx, 0.0, cz)]
    }

    /// Signed distance in the local frame for jaw opening `gap`.
    pub fn sdf_local(&self, p: Vec3, gap: Real) -> Real {
        let half = Vec3::new(
            0.5 * self.finger_size,
            0.5 * self.finger_size,
            0.5 * self.finger_length,
        );
        let [c0, c1] = self.finger_centers(gap);
        box_sdf(p, c0, half).min(box_sdf(p, c1, half))
    }

    /// Outward normal of the nearer finger box, via central differences.
    pub fn normal_local(&self, p: Vec3, gap: Real) -> Vec3 {
        let e = 1e-6;
        let g = Vec3::new(
            self.sdf_local(p + Vec3::new(e, 0.0, 0.0), gap)
                - self.sdf_local(p - Vec3::new(e, 0.0, 0.0), gap),
            self.sdf_local(p + Vec3::new(0.0, e, 0.0), gap)
                - self.sdf_local(p - Vec3::new(0.0, e, 0.0), gap),
            self.sdf_local(p + Vec3::new(0.0, 0.0, e), gap)
                - self.sdf_local(p - Vec3::new(0.0, 0.0, e), gap),
        );
        let n = g.norm();
        if n < 1e-12 {
            Vec3::z()
        } else {
            g / n
        }
    }

    /// Inter-jaw volume (the grasp region) expanded by `margin`, as a local
    /// AABB `(min, max)`, for jaw opening `gap`.
    pub fn grasp_box(&self, gap: Real, margin: Real) -> (Vec3, Vec3) {
        (
            Vec3::new(
                -0.5 * gap - margin,
                -0.5 * self.finger_size - margin,
                -margin,
            ),
            Vec3::new(
                0.5 * gap + margin,
                0.5 * self.finger_size + margin,
                self.finger_length + margin,
            ),
        )
    }
}

/// Pose and jaw target of one arm at one instant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: Real,
    pub pos: Vec3,
    pub rot: Quat,
    /// Jaw opening; interpolated linearly between waypoints.
    pub gap: Real,
}

/// Piecewise-linear pose trajectory with slerped orientation.
///
/// Velocities are the exact derivatives of the interpolation: constant linear
/// velocity and constant angular velocity per segment. Outside the time range
/// the pose clamps to the nearest endpoint with zero velocity.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
}

/// Sampled state of a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct TrajectorySample {
    pub pose: Iso3,
    pub vlin: Vec3,
    pub omega: Vec3,
    pub gap: Real,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.is_empty() {
            return Err(Error::Collider("trajectory has no waypoints".into()));
        }
        for w in self.waypoints.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::Collider(format!(
                    "waypoint times not strictly increasing at t={}",
                    w[1].t
                )));
            }
        }
        Ok(())
    }

    pub fn end_time(&self) -> Real {
        self.waypoints.last().map_or(0.0, |w| w.t)
    }

    pub fn sample(&self, t: Real) -> TrajectorySample {
        let wp = &self.waypoints;
        assert!(!wp.is_empty(), "empty trajectory");
        let still = |w: &Waypoint| TrajectorySample {
            pose: Iso3::from_parts(w.pos.into(), w.rot),
            vlin: Vec3::zeros(),
            omega: Vec3::zeros(),
            gap: w.gap,
        };
        if t <= wp[0].t {
            return still(&wp[0]);
        }
        if t >= wp[wp.len() - 1].t {
            return still(&wp[wp.len() - 1]);
        }
        let idx = wp.partition_point(|w| w.t <= t).min(wp.len() - 1);
        let (a, b) = (&wp[idx - 1], &wp[idx]);
        let dt = b.t - a.t;
        let alpha = (t - a.t) / dt;
        let pos = a.pos + (b.pos - a.pos) * alpha;
        let rot = a.rot.slerp(&b.rot, alpha);
        let delta = b.rot * a.rot.inverse();
        let omega = delta.scaled_axis() / dt;
        TrajectorySample {
            pose: Iso3::from_parts(pos.into(), rot),
            vlin: (b.pos - a.pos) / dt,
            omega,
            gap: a.gap + (b.gap - a.gap) * alpha,
        }
    }
}

/// A gripper's shape, friction, and motion plan.
#[derive(Debug, Clone)]
pub struct Gripper {
    pub shape: JawShape,
    pub mu: Real,
    pub trajectory: Trajectory,
}

/// Instantaneous state of one gripper, consumed by the solver.
#[derive(Debug, Clone, Copy)]
pub struct GripperFrame {
    pub shape: JawShape,
    pub mu: Real,
    pub pose: Iso3,
    pub vlin: Vec3,
    pub omega: Vec3,
    pub gap: Real,
}

impl GripperFrame {
    pub fn sdf(&self, x: Vec3) -> Real {
        let local = self.pose.inverse_transform_point(&x.into());
        self.shape.sdf_local(local.coords, self.gap)
    }

    /// Material velocity of the rigid gripper at world point `x`.
    pub fn velocity_at(&self, x: Vec3) -> Vec3 {
        self.vlin + self.omega.cross(&(x - self.pose.translation.vector))
    }

    pub fn project(&self, x: Vec3, v: Vec3) -> Vec3 {
        let local = self.pose.inverse_transform_point(&x.into()).coords;
        let phi = self.shape.sdf_local(local, self.gap);
        if phi > 0.0 {
            return v;
        }
        let n = self.pose * self.shape.normal_local(local, self.gap);
        project_velocity(v, self.velocity_at(x), n, phi, self.mu)
    }

    /// Contact normal at `x`, if `x` is inside the jaw volume.
    pub fn contact_normal(&self, x: Vec3) -> Option<Vec3> {
        let local = self.pose.inverse_transform_point(&x.into()).coords;
        if self.shape.sdf_local(local, self.gap) > 0.0 {
            return None;
        }
        Some(self.pose * self.shape.normal_local(local, self.gap))
    }

    /// World-frame corners of the grasp region box (for clearance checks).
    pub fn grasp_corners(&self, margin: Real) -> [Vec3; 8] {
        let (lo, hi) = self.shape.grasp_box(self.gap, margin);
        let mut out = [Vec3::zeros(); 8];
        for (k, corner) in out.iter_mut().enumerate() {
            let p = Vec3::new(
                if k & 1 == 0 { lo.x } else { hi.x },
                if k & 2 == 0 { lo.y } else { hi.y },
                if k & 4 == 0 { lo.z } else { hi.z },
            );
            *corner = self.pose.transform_point(&p.into()).coords;
        }
        out
    }

    /// World-frame lattice over both finger volumes, dense enough that the
    /// nearest sample is within ~2.5 mm of any point of the fingers.
    fn finger_lattice(&self) -> Vec<Vec3> {
        let half = Vec3::new(
            0.5 * self.shape.finger_size,
            0.5 * self.shape.finger_size,
            0.5 * self.shape.finger_length,
        );
        let cells = |extent: Real| ((2.0 * extent / 0.003).ceil() as usize).max(1);
        let (nx, ny, nz) = (cells(half.x), cells(half.y), cells(half.z));
        let mut out = Vec::with_capacity(2 * (nx + 1) * (ny + 1) * (nz + 1));
        for center in self.shape.finger_centers(self.gap) {
            for i in 0..=nx {
                for j in 0..=ny {
                    for k in 0..=nz {
                        let p = center
                            + Vec3::new(
                                half.x * (2.0 * i as Real / nx as Real - 1.0),
                                half.y * (2.0 * j as Real / ny as Real - 1.0),
                                half.z * (2.0 * k as Real / nz as Real - 1.0),
                            );
                        out.push(self.pose.transform_point(&p.into()).coords);
                    }
                }
            }
        }
        out
    }

    /// True if world point `x` lies inside the grasp region expanded by
    /// `margin`.
    pub fn in_grasp_region(&self, x: Vec3, margin: Real) -> bool {
        let local = self.pose.inverse_transform_point(&x.into()).coords;
        let (lo, hi) = self.shape.grasp_box(self.gap, margin);
        (lo.x..=hi.x).contains(&local.x)
            && (lo.y..=hi.y).contains(&local.y)
            && (lo.z..=hi.z).contains(&local.z)
    }

    /// Spin tensor of the rigid motion, used as the affine state of grasped
    /// particles.
    pub fn spin(&self) -> Mat3 {
        crate::math::skew(self.omega)
    }
}

/// All colliders in one environment.
#[derive(Debug, Clone)]
pub struct ColliderSet {
    pub table: Table,
    pub grippers: [Gripper; 2],
}

/// Snapshot of all colliders at one instant. Projection order is fixed:
/// table, then gripper 0, then gripper 1.
#[derive(Debug, Clone)]
pub struct FrameSet {
    pub table: Table,
    pub grippers: [GripperFrame; 2],
}

impl ColliderSet {
    pub fn at(&self, t: Real) -> FrameSet {
        let g = |i: usize| -> GripperFrame {
            let s = self.grippers[i].trajectory.sample(t);
            GripperFrame {
                shape: self.grippers[i].shape,
                mu: self.grippers[i].mu,
                pose: s.pose,
                vlin: s.vlin,
                omega: s.omega,
                gap: s.gap,
            }
        };
        FrameSet {
            table: self.table.clone(),
            grippers: [g(0), g(1)],
        }
    }
}

impl FrameSet {
    /// Apply every collider's velocity projection in fixed order.
    pub fn project(&self, x: Vec3, v: Vec3) -> Vec3 {
        let v = self.table.project(x, v);
        let v = self.grippers[0].project(x, v);
        self.grippers[1].project(x, v)
    }

    /// [`FrameSet::project`], also accumulating invariant slacks: Coulomb
    /// admissibility of each collider's applied impulse and idempotence of
    /// the whole projection chain.
    pub fn project_audited(&self, x: Vec3, v: Vec3, audit: &mut ContactAudit) -> Vec3 {
        let mut cur = self.table.project(x, v);
        audit.record(v, cur, Vec3::z(), self.table.mu);
        for g in &self.grippers {
            let next = g.project(x, cur);
            if next != cur {
                if let Some(n) = g.contact_normal(x) {
                    audit.record(cur, next, n, g.mu);
                }
            }
            cur = next;
        }
        let twice = self.project(x, cur);
        audit.max_idempotence_gap = audit.max_idempotence_gap.max((twice - cur).norm());
        cur
    }

    /// Minimum clearance between the two grippers' finger volumes, estimated
    /// by evaluating a lattice over each gripper's fingers against the
    /// other's exact SDF. The estimate can overshoot the true minimum by at
    /// most the lattice half-cell (~2.5 mm), which the clearance margin
    /// absorbs.
    pub fn gripper_clearance(&self) -> Real {
        let mut min_d = Real::INFINITY;
        for (a, b) in [(0usize, 1usize), (1, 0)] {
            for p in self.grippers[a].finger_lattice() {
                min_d = min_d.min(self.grippers[b].sdf(p));
            }
        }
        min_d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn frame_at(pos: Vec3, gap: Real) -> GripperFrame {
        GripperFrame {
            shape: JawShape::default(),
            mu: 0.8,
            pose: Iso3::translation(pos.x, pos.y, pos.z),
            vlin: Vec3::zeros(),
            omega: Vec3::zeros(),
            gap,
        }
    }

    #[test]
    fn clearance_matches_exact_box_distance_when_axis_aligned() {
        // Identical upright jaws separated along the jaw axis: the nearest
        // finger faces are parallel, so the true clearance is the center
        // separation minus one gap and two finger widths, and the lattice
        // contains points on those faces.
        let table = Table {
            height: 0.0,
            mu: 0.3,
        };
        let gap = 0.03;
        let width = JawShape::default().finger_size;
        for d in [0.08, 0.12, 0.3] {
            let frames = FrameSet {
                table: table.clone(),
                grippers: [frame_at(Vec3::zeros(), gap), frame_at(Vec3::new(d, 0.0, 0.0), gap)],
            };
            assert_relative_eq!(
                frames.gripper_clearance(),
                d - gap - 2.0 * width,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn clearance_detects_interleaved_fingers() {
        // Centers two finger-widths apart: each jaw's finger sits between the
        // other's, 10 mm from both. The old grasp-box corner sampling missed
        // this configuration entirely.
        let table = Table {
            height: 0.0,
            mu: 0.3,
        };
        let frames = FrameSet {
            table: table.clone(),
            grippers: [
                frame_at(Vec3::zeros(), 0.03),
                frame_at(Vec3::new(0.02, 0.0, 0.0), 0.03),
            ],
        };
        assert_relative_eq!(frames.gripper_clearance(), 0.01, epsilon = 1e-9);
    }

    #[test]
    fn sliding_keeps_tangential_remainder() {
        let v = project_velocity(
            Vec3::new(1.0, 0.0, -1.0),
            Vec3::zeros(),
            Vec3::z(),
            -0.01,
            0.5,
        );
        assert_relative_eq!(v, Vec3::new(0.5, 0.0, 0.0), epsilon = 1e-7);
    }

    #[test]
    fn slow_tangential_motion_sticks() {
        let v = project_velocity(
            Vec3::new(0.3, 0.0, -1.0),
            Vec3::zeros(),
            Vec3::z(),
            -0.01,
            0.5,
        );
        assert!(v.norm() < 1e-7, "expected stick, got {v:?}");
    }

    #[test]
    fn separating_velocity_unchanged() {
        let v0 = Vec3::new(0.3, 0.2, 1.0);
        let v = project_velocity(v0, Vec3::zeros(), Vec3::z(), -0.01, 0.5);
        assert_eq!(v, v0);
        let v = project_velocity(v0, Vec3::zeros(), Vec3::z(), 0.5, 0.5);
        assert_eq!(v, v0);
    }

    #[test]
    fn jaw_sdf_sign() {
        let shape = JawShape::default();
        let gap = shape.open_gap;
        // Center of the gap is outside the fingers.
        assert!(shape.sdf_local(Vec3::new(0.0, 0.0, 0.02), gap) > 0.0);
        // Center of a finger is inside.
        let cx = 0.5 * gap + 0.5 * shape.finger_size;
        assert!(shape.sdf_local(Vec3::new(cx, 0.0, 0.02), gap) < 0.0);
    }

    #[test]
    fn trajectory_clamps_and_differentiates() {
        let traj = Trajectory {
            waypoints: vec![
                Waypoint {
                    t: 0.0,
                    pos: Vec3::zeros(),
                    rot: Quat::identity(),
                    gap: 0.03,
                },
                Waypoint {
                    t: 1.0,
                    pos: Vec3::new(1.0, 0.0, 0.0),
                    rot: Quat::from_axis_angle(&nalgebra::Vector3::z_axis(), 1.0),
                    gap: 0.0,
                },
            ],
        };
        traj.validate().unwrap();
        let s = traj.sample(0.5);
        assert_relative_eq!(s.vlin, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(s.omega, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-9);
        assert_relative_eq!(s.gap, 0.015, epsilon = 1e-12);
        let before = traj.sample(-1.0);
        assert_eq!(before.vlin, Vec3::zeros());
        let after = traj.sample(2.0);
        assert_eq!(after.vlin, Vec3::zeros());
        assert_relative_eq!(after.pose.translation.vector, Vec3::new(1.0, 0.0, 0.0));
    }
}
