//! Background grid and APIC transfer kernels (quadratic B-splines).
//!
//! Exposed as standalone building blocks so transfer invariants (mass and
//! momentum conservation, linear-field reproduction) can be tested directly.

use crate::error::{Error, Result};
use crate::math::{Mat3, Real, Vec3};

/// Grid nodes with mass below this carry no velocity.
pub const MASS_EPS: Real = 1e-12;

/// Cells of clearance kept around the particle bounding box.
pub const GRID_MARGIN_CELLS: i64 = 3;

const MAX_NODES: usize = 64 << 20;

/// Dense background grid, rebuilt around the particles every step.
#[derive(Debug, Clone)]
pub struct Grid {
    pub h: Real,
    /// Position of node (0, 0, 0), snapped to the `h` lattice.
    pub origin: Vec3,
    /// Node counts per axis.
    pub dims: [usize; 3],
    pub mass: Vec<Real>,
    /// Momentum during transfers, velocity after [`grid_update`].
    pub vel: Vec<Vec3>,
    pub force: Vec<Vec3>,
}

impl Grid {
    pub fn new(h: Real) -> Self {
        Grid {
            h,
            origin: Vec3::zeros(),
            dims: [0, 0, 0],
            mass: Vec::new(),
            vel: Vec::new(),
            force: Vec::new(),
        }
    }

    /// Refit the grid around `points` with [`GRID_MARGIN_CELLS`] of margin,
    /// zeroing all node data. The origin stays on the global `h` lattice so
    /// weights depend only on absolute particle positions.
    pub fn fit(&mut self, points: impl Iterator<Item = Vec3>) -> Result<()> {
        let mut lo = Vec3::repeat(Real::INFINITY);
        let mut hi = Vec3::repeat(Real::NEG_INFINITY);
        for p in points {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::Diverged("non-finite particle position".into()));
            }
            lo = crate::math::vmin(lo, p);
            hi = crate::math::vmax(hi, p);
        }
        if !lo.x.is_finite() {
            return Err(Error::Solver("cannot fit grid around zero particles".into()));
        }
        let h = self.h;
        let mut dims = [0usize; 3];
        for k in 0..3 {
            let lo_cell = (lo[k] / h).floor() as i64 - GRID_MARGIN_CELLS;
            let hi_cell = (hi[k] / h).ceil() as i64 + GRID_MARGIN_CELLS;
            self.origin[k] = lo_cell as Real * h;
            dims[k] = (hi_cell - lo_cell + 1) as usize;
        }
        let n = dims[0] * dims[1] * dims[2];
        if n > MAX_NODES {
            return Err(Error::Diverged(format!(
                "grid of {dims:?} nodes exceeds bounds; simulation likely blew up"
            )));
        }
        self.dims = dims;
        self.mass.clear();
        self.mass.resize(n, 0.0);
        self.vel.clear();
        self.vel.resize(n, Vec3::zeros());
        self.force.clear();
        self.force.resize(n, Vec3::zeros());
        Ok(())
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn node_pos(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as Real, j as Real, k as Real) * self.h
    }

    pub fn total_mass(&self) -> Real {
        self.mass.iter().sum()
    }

    pub fn total_momentum(&self) -> Vec3 {
        self.vel.iter().sum()
    }
}

/// Quadratic B-spline stencil of one particle: 3x3x3 nodes starting at
/// `base`, with separable weights `w`.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub base: [i64; 3],
    pub w: [[Real; 3]; 3],
}

/// Stencil of the quadratic B-spline kernel at `x`.
#[inline]
pub fn stencil(x: Vec3, origin: Vec3, h: Real) -> Stencil {
    let mut base = [0i64; 3];
    let mut w = [[0.0; 3]; 3];
    for k in 0..3 {
        let fx = (x[k] - origin[k]) / h;
        let b = (fx - 0.5).floor();
        let local = fx - b;
        base[k] = b as i64;
        w[k] = [
            0.5 * (1.5 - local) * (1.5 - local),
            0.75 - (local - 1.0) * (local - 1.0),
            0.5 * (local - 0.5) * (local - 0.5),
        ];
    }
    Stencil { base, w }
}

/// Scatter particle mass and APIC momentum to the grid.
///
/// `affine` is the APIC velocity-gradient state `C`; the momentum
/// contribution of particle `p` to node `i` is
/// `w_ip * m_p * (v_p + C_p (x_i - x_p))`.
pub fn p2g(
    grid: &mut Grid,
    positions: &[Vec3],
    velocities: &[Vec3],
    affine: &[Mat3],
    masses: &[Real],
) {
    let h = grid.h;
    let origin = grid.origin;
    for p in 0..positions.len() {
        let x = positions[p];
        let st = stencil(x, origin, h);
        let m = masses[p];
        let mv = velocities[p] * m;
        let mc = affine[p] * m;
        for a in 0..3 {
            for b in 0..3 {
                let wab = st.w[0][a] * st.w[1][b];
                for c in 0..3 {
                    let w = wab * st.w[2][c];
                    let ni = (st.base[0] as usize + a, st.base[1] as usize + b, st.base[2] as usize + c);
                    let idx = grid.index(ni.0, ni.1, ni.2);
                    let node = grid.origin
                        + Vec3::new(
                            (st.base[0] + a as i64) as Real,
                            (st.base[1] + b as i64) as Real,
                            (st.base[2] + c as i64) as Real,
                        ) * h;
                    let dpos = node - x;
                    grid.mass[idx] += w * m;
                    grid.vel[idx] += w * (mv + mc * dpos);
                }
            }
        }
    }
}

/// Turn grid momentum into velocity, applying forces, gravity, damping, and
/// a per-node velocity projection (colliders). Returns the largest nodal
/// force magnitude.
pub fn grid_update(
    grid: &mut Grid,
    dt: Real,
    gravity: Vec3,
    damping: Real,
    mut project: impl FnMut(Vec3, Vec3) -> Vec3,
) -> Real {
    let damp = 1.0 / (1.0 + damping * dt);
    let mut max_force: Real = 0.0;
    for i in 0..grid.dims[0] {
        for j in 0..grid.dims[1] {
            for k in 0..grid.dims[2] {
                let idx = grid.index(i, j, k);
                let m = grid.mass[idx];
                if m <= MASS_EPS {
                    grid.vel[idx] = Vec3::zeros();
                    continue;
                }
                max_force = max_force.max(grid.force[idx].norm());
                let mut v = (grid.vel[idx] + dt * grid.force[idx]) / m + dt * gravity;
                v *= damp;
                grid.vel[idx] = project(grid.node_pos(i, j, k), v);
            }
        }
    }
    max_force
}

/// Gather grid velocities back to one particle: returns the PIC velocity and
/// the APIC affine state `C = (4 / h^2) * sum_i w_i v_i (x_i - x_p)^T`.
#[inline]
pub fn g2p_one(grid: &Grid, x: Vec3) -> (Vec3, Mat3) {
    let st = stencil(x, grid.origin, grid.h);
    let mut v = Vec3::zeros();
    let mut c = Mat3::zeros();
    let scale = 4.0 / (grid.h * grid.h);
    for a in 0..3 {
        for b in 0..3 {
            let wab = st.w[0][a] * st.w[1][b];
            for cc in 0..3 {
                let w = wab * st.w[2][cc];
                let ni = (
                    st.base[0] as usize + a,
                    st.base[1] as usize + b,
                    st.base[2] as usize + cc,
                );
                let idx = grid.index(ni.0, ni.1, ni.2);
                let node = grid.origin
                    + Vec3::new(
                        (st.base[0] + a as i64) as Real,
                        (st.base[1] + b as i64) as Real,
                        (st.base[2] + cc as i64) as Real,
                    ) * grid.h;
                let dpos = node - x;
                let wv = w * grid.vel[idx];
                v += wv;
                c += wv * (scale * dpos).transpose();
            }
        }
    }
    (v, c)
}

/// Scatter a plain force vector through the kernel at `x`.
#[inline]
pub fn scatter_force(grid: &mut Grid, x: Vec3, f: Vec3) {
    let st = stencil(x, grid.origin, grid.h);
    for a in 0..3 {
        for b in 0..3 {
            let wab = st.w[0][a] * st.w[1][b];
            for c in 0..3 {
                let w = wab * st.w[2][c];
                let idx = grid.index(
                    st.base[0] as usize + a,
                    st.base[1] as usize + b,
                    st.base[2] as usize + c,
                );
                grid.force[idx] += w * f;
            }
        }
    }
}

/// Scatter the affine force `-(4 / h^2) * K * (x_i - x_c)` through the kernel
/// at `x` (the fused MLS force of a stress-like matrix `K`).
#[inline]
pub fn scatter_stress(grid: &mut Grid, x: Vec3, k_mat: &Mat3) {
    let st = stencil(x, grid.origin, grid.h);
    let scale = 4.0 / (grid.h * grid.h);
    for a in 0..3 {
        for b in 0..3 {
            let wab = st.w[0][a] * st.w[1][b];
            for c in 0..3 {
                let w = wab * st.w[2][c];
                let idx = grid.index(
                    st.base[0] as usize + a,
                    st.base[1] as usize + b,
                    st.base[2] as usize + c,
                );
                let node = grid.origin
                    + Vec3::new(
                        (st.base[0] + a as i64) as Real,
                        (st.base[1] + b as i64) as Real,
                        (st.base[2] + c as i64) as Real,
                    ) * grid.h;
                let dpos = node - x;
                grid.force[idx] -= (w * scale) * (k_mat * dpos);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_partition_unity() {
        let mut grid = Grid::new(0.03);
        grid.fit([Vec3::new(0.011, -0.52, 0.33)].into_iter()).unwrap();
        let st = stencil(Vec3::new(0.011, -0.52, 0.33), grid.origin, grid.h);
        for k in 0..3 {
            let s: Real = st.w[k].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(st.w[k].iter().all(|&w| w >= 0.0));
        }
    }
}
