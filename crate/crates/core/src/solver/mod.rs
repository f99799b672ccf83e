//! Thin-shell MPM solver.
//!
//! Mesh vertices act as mass-carrying particles; one massless quadrature
//! point per face, at its centroid, carries the out-of-plane deformation
//! column `d3`. In-plane deformation is re-synced from the mesh every step
//! (Lagrangian), while `d3` evolves through the grid velocity gradient
//! (Eulerian) and is projected by a frictional return map. Membrane forces
//! are exact per-face energy gradients scattered through vertex kernels;
//! normal-contact forces scatter through the quadrature kernel in fused MLS
//! form.

pub mod checkpoint;
pub mod kernels;
pub mod material;

use crate::collider::{ContactAudit, FrameSet};
use crate::error::{Error, Result};
use crate::garment::GarmentMesh;
use crate::math::{Mat3, Real, Vec3};
pub use kernels::{Grid, MASS_EPS};
pub use material::{return_map_cloth, MaterialParams};

/// Invariant slacks accumulated while [`SimState::audit`] is enabled: the
/// friction-cone and idempotence slack of every contact projection, plus the
/// yield slack of every frictional return map. All stay at or below zero (or
/// near machine epsilon for the idempotence gap) when the solver is sound.
#[derive(Debug, Clone, Copy)]
pub struct AuditStats {
    pub contact: ContactAudit,
    /// Max `yield_value(sigma) / |sigma|` over faces whose post-return-map
    /// state carries contact stress.
    pub max_yield_rel: Real,
}

impl Default for AuditStats {
    fn default() -> Self {
        AuditStats {
            contact: ContactAudit::default(),
            max_yield_rel: Real::NEG_INFINITY,
        }
    }
}

impl AuditStats {
    /// Measure the yield slack of one face's post-return-map column, using
    /// the same stress construction the return map itself operates on.
    fn observe_yield(&mut self, d3: Vec3, n: Vec3, mat: &MaterialParams) {
        let s_n = d3.dot(&n);
        // Outside (0, 1) the map resets to a traction-free or frame-collapsed
        // state with no shear traction; only stressed states are measurable.
        if !(s_n > 0.0 && s_n < 1.0) {
            return;
        }
        let g3 = material::contact_gradient(d3, n, mat.normal_stiffness, mat.normal_stiffness);
        let traction = s_n * g3;
        let t_nn = traction.dot(&n);
        let sigma =
            traction * n.transpose() + n * traction.transpose() - t_nn * (n * n.transpose());
        let norm = sigma.norm();
        if norm > 0.0 {
            let y = material::yield_value(&sigma, n, mat.mu_cloth);
            self.max_yield_rel = self.max_yield_rel.max(y / norm);
        }
    }
}

/// Hard ceiling on the explicit time step (s).
pub const DT_CAP: Real = 7.0e-4;

/// Any particle exceeding this speed (m/s) marks the simulation as diverged.
/// Fling whip tips legitimately reach tens of m/s, so the cap sits well
/// above them; numeric blowups overshoot it within a few substeps.
pub const SPEED_CAP: Real = 60.0;

/// Solver-wide settings independent of the material.
#[derive(Debug, Clone, Copy)]
pub struct SolverParams {
    pub gravity: Vec3,
    pub speed_cap: Real,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            gravity: Vec3::new(0.0, 0.0, -9.8),
            speed_cap: SPEED_CAP,
        }
    }
}

/// Particles attached to one gripper: indices plus positions in the gripper
/// frame.
#[derive(Debug, Clone, Default)]
pub struct Grasp {
    pub particles: Vec<u32>,
    pub locals: Vec<Vec3>,
}

impl Grasp {
    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }
}

/// Per-face rest-state quantities fixed at construction.
#[derive(Debug, Clone)]
struct FaceRest {
    /// Inverse of the full rest basis `[D1 D2 D3]`.
    basis_inv: Mat3,
    /// Rest unit normal `D3`.
    normal: Vec3,
    /// Rest volume (area times thickness).
    volume: Real,
}

/// Full dynamic state of one simulated garment.
#[derive(Debug, Clone)]
pub struct SimState {
    pub mesh: GarmentMesh,
    /// Current vertex positions (the mesh's `vertices` stay at rest).
    pub x: Vec<Vec3>,
    pub v: Vec<Vec3>,
    /// APIC affine velocity state per vertex.
    pub c: Vec<Mat3>,
    /// Lumped vertex masses.
    pub mass: Vec<Real>,
    /// Eulerian deformation column per face.
    pub d3: Vec<Vec3>,
    pub material: MaterialParams,
    pub params: SolverParams,
    /// Grid spacing.
    pub h: Real,
    pub time: Real,
    pub grasps: [Option<Grasp>; 2],
    /// When set, every step accumulates invariant slacks here.
    pub audit: Option<AuditStats>,
    /// Smallest rest edge length; the membrane stability length.
    min_rest_edge: Real,
    face_rest: Vec<FaceRest>,
    grid: Grid,
    vertex_force: Vec<Vec3>,
}

/// Summary of one explicit step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub max_speed: Real,
    pub max_grid_force: Real,
}

impl SimState {
    /// Build a solver state from a placed mesh. The mesh's current vertex
    /// positions become the rest configuration.
    pub fn new(mesh: GarmentMesh, material: MaterialParams, h: Real) -> Result<Self> {
        material.validate()?;
        if !(h > 0.0) {
            return Err(Error::Solver(format!("grid spacing must be positive, got {h}")));
        }
        let nv = mesh.vertices.len();
        let nf = mesh.faces.len();
        let mut mass = vec![0.0; nv];
        let mut face_rest = Vec::with_capacity(nf);
        // Stability length: the smallest rest altitude over all faces (the
        // shortest distance a membrane wave must resolve).
        let mut min_rest_edge = Real::INFINITY;
        for f in &mesh.faces {
            let p = [
                mesh.vertices[f[0] as usize],
                mesh.vertices[f[1] as usize],
                mesh.vertices[f[2] as usize],
            ];
            let area = 0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm();
            let e_max = (0..3)
                .map(|k| (p[k] - p[(k + 1) % 3]).norm())
                .fold(0.0, Real::max);
            if e_max > 0.0 {
                min_rest_edge = min_rest_edge.min(2.0 * area / e_max);
            }
        }
        for (fi, f) in mesh.faces.iter().enumerate() {
            let p0 = mesh.vertices[f[0] as usize];
            let d1 = mesh.vertices[f[1] as usize] - p0;
            let d2 = mesh.vertices[f[2] as usize] - p0;
            let n = d1.cross(&d2);
            let area = 0.5 * n.norm();
            if area < 1e-12 {
                return Err(Error::Solver(format!("degenerate rest face {fi}")));
            }
            let normal = n / (2.0 * area);
            let basis = Mat3::from_columns(&[d1, d2, normal]);
            let basis_inv = basis
                .try_inverse()
                .ok_or_else(|| Error::Solver(format!("singular rest basis on face {fi}")))?;
            let volume = area * material.thickness;
            face_rest.push(FaceRest {
                basis_inv,
                normal,
                volume,
            });
            let m_share = material.density * volume / 3.0;
            for &v in f {
                mass[v as usize] += m_share;
            }
        }
        let x = mesh.vertices.clone();
        let d3 = face_rest.iter().map(|r| r.normal).collect();
        Ok(SimState {
            x,
            v: vec![Vec3::zeros(); nv],
            c: vec![Mat3::zeros(); nv],
            mass,
            d3,
            material,
            params: SolverParams::default(),
            h,
            time: 0.0,
            grasps: [None, None],
            audit: None,
            min_rest_edge,
            face_rest,
            grid: Grid::new(h),
            vertex_force: vec![Vec3::zeros(); nv],
            mesh,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.x.len()
    }

    pub fn face_count(&self) -> usize {
        self.mesh.faces.len()
    }

    /// Current centroid of face `f`.
    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.mesh.faces[f];
        (self.x[a as usize] + self.x[b as usize] + self.x[c as usize]) / 3.0
    }

    /// Current unit normal of face `f`.
    pub fn face_unit_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.mesh.faces[f];
        let p0 = self.x[a as usize];
        let n = (self.x[b as usize] - p0).cross(&(self.x[c as usize] - p0));
        let len = n.norm();
        if len < 1e-15 {
            self.face_rest[f].normal
        } else {
            n / len
        }
    }

    /// Full deformation gradient of face `f`: world basis `[d1 d2 d3]` times
    /// the inverse rest basis.
    pub fn face_deformation(&self, f: usize) -> Mat3 {
        let [a, b, c] = self.mesh.faces[f];
        let p0 = self.x[a as usize];
        let d1 = self.x[b as usize] - p0;
        let d2 = self.x[c as usize] - p0;
        Mat3::from_columns(&[d1, d2, self.d3[f]]) * self.face_rest[f].basis_inv
    }

    /// Rest unit normal of face `f`.
    pub fn face_rest_normal(&self, f: usize) -> Vec3 {
        self.face_rest[f].normal
    }

    pub fn total_mass(&self) -> Real {
        self.mass.iter().sum()
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.v
            .iter()
            .zip(&self.mass)
            .map(|(v, m)| v * *m)
            .sum()
    }

    pub fn kinetic_energy(&self) -> Real {
        self.v
            .iter()
            .zip(&self.mass)
            .map(|(v, m)| 0.5 * m * v.norm_squared())
            .sum()
    }

    /// Membrane plus normal-contact elastic energy.
    pub fn elastic_energy(&self) -> Real {
        let mat = &self.material;
        let mut e = 0.0;
        for (fi, f) in self.mesh.faces.iter().enumerate() {
            let p = [
                self.x[f[0] as usize],
                self.x[f[1] as usize],
                self.x[f[2] as usize],
            ];
            let fm = material::clamp_singular(material::membrane_deformation(
                &p,
                &self.mesh.rest_metric[fi],
            ));
            let vol = self.face_rest[fi].volume;
            e += vol
                * material::membrane_energy_density(&fm, mat.youngs_modulus, mat.shear_stiffness);
            e += vol
                * material::contact_energy_density(
                    self.d3[fi],
                    self.face_unit_normal(fi),
                    mat.normal_stiffness,
                    mat.normal_stiffness,
                );
        }
        e
    }

    /// Largest squared in-plane singular value over all faces (1 at rest).
    fn max_membrane_eigensq(&self) -> Real {
        let mut lam2: Real = 1.0;
        for (fi, f) in self.mesh.faces.iter().enumerate() {
            let p = [
                self.x[f[0] as usize],
                self.x[f[1] as usize],
                self.x[f[2] as usize],
            ];
            let fm = material::membrane_deformation(&p, &self.mesh.rest_metric[fi]);
            let g = fm.transpose() * fm;
            let tr = g[(0, 0)] + g[(1, 1)];
            let disc = ((g[(0, 0)] - g[(1, 1)]).powi(2) + 4.0 * g[(0, 1)] * g[(0, 1)]).sqrt();
            lam2 = lam2.max(0.5 * (tr + disc));
        }
        // Strain limiting bounds the force response, so stiffer configurations
        // gain nothing from a smaller step.
        lam2.min(material::STRETCH_CAP * material::STRETCH_CAP)
    }

    /// Largest stable explicit step, capped at [`DT_CAP`].
    ///
    /// Membrane forces are assembled on mesh elements, so the stability
    /// length is the smallest rest altitude (tighter than the grid spacing).
    /// The quadratic-in-Green-strain membrane stiffens under stretch: its
    /// tangent stiffness at stretch `l` scales like `3 l^2 - 1`, so the wave
    /// speed is scaled by the square root of that factor at the current
    /// maximum stretch (the 1-D stability bound is `2 L / (c sqrt(3 l^2 -
    /// 1))`; using `L` directly keeps about 2x headroom under the external
    /// safety factor).
    pub fn cfl_max_dt(&self) -> Real {
        let lam2 = self.max_membrane_eigensq();
        let stiffen = (3.0 * lam2 - 1.0).max(1.0).sqrt();
        let c = self.material.wave_speed() * stiffen;
        let v_max = self
            .v
            .iter()
            .map(|v| v.norm())
            .fold(0.0, Real::max);
        DT_CAP.min(self.min_rest_edge.min(self.h) / (v_max + c))
    }

    /// Attach every particle inside `frame`'s grasp region (expanded by
    /// `margin`) to gripper `arm`. An empty catch is a valid no-op grasp.
    pub fn attach_grasp(&mut self, arm: usize, frame: &crate::collider::GripperFrame, margin: Real) {
        let mut grasp = Grasp::default();
        for (i, &x) in self.x.iter().enumerate() {
            if frame.in_grasp_region(x, margin) {
                grasp.particles.push(i as u32);
                grasp
                    .locals
                    .push(frame.pose.inverse_transform_point(&x.into()).coords);
            }
        }
        if grasp.is_empty() {
            log::warn!("grasp on arm {arm} attached no particles");
        }
        self.grasps[arm] = Some(grasp);
    }

    pub fn release_grasp(&mut self, arm: usize) {
        self.grasps[arm] = None;
    }

    /// Tension proxy: total membrane force on particles attached to `arm`,
    /// projected on `axis` (unit). Zero when the grasp is empty or absent.
    pub fn grasp_tension(&mut self, arm: usize, axis: Vec3) -> Real {
        let particles = match &self.grasps[arm] {
            None => return 0.0,
            Some(g) if g.is_empty() => {
                log::warn!("tension query on empty grasp (arm {arm})");
                return 0.0;
            }
            Some(g) => g.particles.clone(),
        };
        self.membrane_vertex_forces();
        particles
            .iter()
            .map(|&p| self.vertex_force[p as usize].dot(&axis))
            .sum()
    }

    /// Membrane-only forces per vertex (no contact, no gravity), left in
    /// `self.vertex_force`.
    fn membrane_vertex_forces(&mut self) {
        let mat = self.material;
        self.vertex_force.iter_mut().for_each(|f| *f = Vec3::zeros());
        for (fi, f) in self.mesh.faces.iter().enumerate() {
            let p = [
                self.x[f[0] as usize],
                self.x[f[1] as usize],
                self.x[f[2] as usize],
            ];
            let area = self.face_rest[fi].volume / mat.thickness;
            let (forces, _) = material::membrane_force(
                &p,
                &self.mesh.rest_metric[fi],
                area,
                mat.thickness,
                mat.youngs_modulus,
                mat.shear_stiffness,
            );
            for k in 0..3 {
                self.vertex_force[f[k] as usize] += forces[k];
            }
        }
    }

    fn check_finite(&self) -> Result<Real> {
        let mut max_speed: Real = 0.0;
        for (x, v) in self.x.iter().zip(&self.v) {
            if !(x.iter().all(|c| c.is_finite()) && v.iter().all(|c| c.is_finite())) {
                return Err(Error::Diverged(format!(
                    "non-finite state at t={:.4}",
                    self.time
                )));
            }
            max_speed = max_speed.max(v.norm());
        }
        if max_speed > self.params.speed_cap {
            return Err(Error::Diverged(format!(
                "speed {max_speed:.1} m/s exceeds cap at t={:.4}",
                self.time
            )));
        }
        Ok(max_speed)
    }
}

/// Advance the state by one explicit substep against the collider snapshot.
///
/// `dt` must not exceed [`SimState::cfl_max_dt`]. A zero `dt` leaves the
/// state untouched.
pub fn step(state: &mut SimState, frames: &FrameSet, dt: Real) -> Result<StepStats> {
    if dt == 0.0 {
        return Ok(StepStats::default());
    }
    debug_assert!(dt > 0.0 && dt <= DT_CAP * (1.0 + 1e-12));
    let mat = state.material;
    let nf = state.mesh.faces.len();
    let mut audit = state.audit.take();

    // Quadrature centroids before advection; they also bound force stencils.
    let centroids: Vec<Vec3> = (0..nf).map(|f| state.face_centroid(f)).collect();

    let mut grid = std::mem::replace(&mut state.grid, Grid::new(state.h));
    grid.fit(state.x.iter().copied().chain(centroids.iter().copied()))?;

    kernels::p2g(&mut grid, &state.x, &state.v, &state.c, &state.mass);

    // Membrane forces on vertices, scattered with vertex kernels.
    state.membrane_vertex_forces();
    for (p, f) in state.x.iter().zip(&state.vertex_force) {
        kernels::scatter_force(&mut grid, *p, *f);
    }

    // Normal-contact forces in fused MLS form through quadrature kernels:
    // the stress-like matrix is `V0 * g3 d3^T`.
    for fi in 0..nf {
        let n = state.face_unit_normal(fi);
        let g3 = material::contact_gradient(
            state.d3[fi],
            n,
            mat.normal_stiffness,
            mat.normal_stiffness,
        );
        if g3.norm_squared() > 0.0 {
            let k = (state.face_rest[fi].volume * g3) * state.d3[fi].transpose();
            kernels::scatter_stress(&mut grid, centroids[fi], &k);
        }
    }

    let max_grid_force = kernels::grid_update(
        &mut grid,
        dt,
        state.params.gravity,
        mat.damping,
        |x, v| match audit.as_mut() {
            Some(a) => frames.project_audited(x, v, &mut a.contact),
            None => frames.project(x, v),
        },
    );

    // Gather, project against colliders at particle resolution, advect.
    for i in 0..state.x.len() {
        let (v, c) = kernels::g2p_one(&grid, state.x[i]);
        let v = match audit.as_mut() {
            Some(a) => frames.project_audited(state.x[i], v, &mut a.contact),
            None => frames.project(state.x[i], v),
        };
        state.v[i] = v;
        state.c[i] = c;
        state.x[i] += dt * v;
        // The padded table is impenetrable.
        if state.x[i].z < frames.table.height {
            state.x[i].z = frames.table.height;
        }
    }

    // Evolve d3 through the grid velocity gradient at the old centroid, then
    // apply the frictional return map against the new face normal.
    for fi in 0..nf {
        let (_, grad_v) = kernels::g2p_one(&grid, centroids[fi]);
        let d3 = state.d3[fi] + dt * grad_v * state.d3[fi];
        let n = state.face_unit_normal(fi);
        state.d3[fi] = material::project_d3(
            d3,
            n,
            mat.mu_cloth,
            mat.normal_stiffness,
            mat.normal_stiffness,
        );
        if let Some(a) = audit.as_mut() {
            a.observe_yield(state.d3[fi], n, &mat);
        }
    }

    // Kinematic grasp constraints override everything else.
    for (arm, grasp) in state.grasps.iter().enumerate() {
        let Some(grasp) = grasp else { continue };
        let frame = &frames.grippers[arm];
        let spin = frame.spin();
        for (k, &p) in grasp.particles.iter().enumerate() {
            let world = frame.pose * crate::math::na::Point3::from(grasp.locals[k]);
            let x = world.coords;
            state.x[p as usize] = x;
            state.v[p as usize] = frame.velocity_at(x);
            state.c[p as usize] = spin;
        }
    }

    state.grid = grid;
    state.audit = audit;
    state.time += dt;
    let max_speed = state.check_finite()?;
    Ok(StepStats {
        max_speed,
        max_grid_force,
    })
}

/// Run substeps until `duration` has elapsed, choosing each substep from the
/// CFL bound scaled by `safety`. Returns the number of substeps taken.
pub fn advance(
    state: &mut SimState,
    frames_at: impl Fn(Real) -> FrameSet,
    duration: Real,
    safety: Real,
    max_substeps: usize,
) -> Result<usize> {
    let t_end = state.time + duration;
    let mut n = 0;
    while state.time < t_end - 1e-12 {
        if n >= max_substeps {
            return Err(Error::Diverged(format!(
                "exceeded {max_substeps} substeps in one control interval at t={:.4}",
                state.time
            )));
        }
        let dt = (safety * state.cfl_max_dt()).min(t_end - state.time);
        let frames = frames_at(state.time);
        step(state, &frames, dt)?;
        n += 1;
    }
    Ok(n)
}
