//! Shell constitutive model: in-plane membrane response, normal-direction
//! contact response, and the frictional return map on the Eulerian part of
//! the deformation gradient.

use crate::error::{Error, Result};
use crate::math::{na, Mat2, Mat3, Real, Vec3};
use serde::{Deserialize, Serialize};

type Mat32 = na::Matrix3x2<Real>;

/// Singular values of the in-plane deformation are clamped below this to
/// keep near-degenerate compressed elements invertible.
pub const SINGULAR_FLOOR: Real = 0.05;

/// Singular values of the in-plane deformation are clamped above this when
/// evaluating membrane response (strain limiting). Woven fabric barely
/// stretches; transient overstretch (snagged cloth, whip tips) would
/// otherwise produce unbounded forces and collapse the stable step size.
pub const STRETCH_CAP: Real = 1.8;

/// Material parameters of one garment.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialParams {
    /// In-plane stretching stiffness (Pa).
    pub youngs_modulus: Real,
    /// In-plane shearing stiffness (Pa).
    pub shear_stiffness: Real,
    /// Normal-direction contact stiffness (Pa); also used for the
    /// normal-direction shear response.
    pub normal_stiffness: Real,
    /// Volumetric density (kg/m^3).
    pub density: Real,
    /// Shell thickness (m).
    pub thickness: Real,
    /// Cloth-cloth friction coefficient (return map).
    pub mu_cloth: Real,
    /// Cloth-robot friction coefficient (collider projection).
    pub mu_robot: Real,
    /// Velocity damping rate (1/s), applied on the grid.
    pub damping: Real,
}

impl Default for MaterialParams {
    fn default() -> Self {
        MaterialParams {
            youngs_modulus: 1.0e6,
            shear_stiffness: 3.0e5,
            normal_stiffness: 1.0e4,
            density: 1000.0,
            thickness: 1.5e-4,
            mu_cloth: 0.4,
            mu_robot: 0.8,
            damping: 2.0,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("youngs_modulus", self.youngs_modulus),
            ("shear_stiffness", self.shear_stiffness),
            ("normal_stiffness", self.normal_stiffness),
            ("density", self.density),
            ("thickness", self.thickness),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, mu) in [("mu_cloth", self.mu_cloth), ("mu_robot", self.mu_robot)] {
            if !(0.0..=2.0).contains(&mu) {
                return Err(Error::Config(format!("{name} must be in [0, 2], got {mu}")));
            }
        }
        if !(self.damping >= 0.0) {
            return Err(Error::Config(format!(
                "damping must be non-negative, got {}",
                self.damping
            )));
        }
        Ok(())
    }

    /// Elastic wave speed bound used for the CFL condition.
    pub fn wave_speed(&self) -> Real {
        let k = self
            .youngs_modulus
            .max(self.shear_stiffness)
            .max(self.normal_stiffness);
        (k / self.density).sqrt()
    }
}

/// In-plane deformation `F_m = [d1 d2] * Dm_inv` (world from reference 2D).
#[inline]
pub fn membrane_deformation(p: &[Vec3; 3], dm_inv: &Mat2) -> Mat32 {
    let d = Mat32::from_columns(&[p[1] - p[0], p[2] - p[0]]);
    d * dm_inv
}

/// Clamp the singular values of `f` into `[SINGULAR_FLOOR, STRETCH_CAP]`.
/// The fast path skips the SVD when both singular values are already inside.
pub fn clamp_singular(f: Mat32) -> Mat32 {
    let g = f.transpose() * f;
    let tr = g[(0, 0)] + g[(1, 1)];
    let disc = ((g[(0, 0)] - g[(1, 1)]).powi(2) + 4.0 * g[(0, 1)] * g[(0, 1)]).sqrt();
    let lam_min = 0.5 * (tr - disc);
    let lam_max = 0.5 * (tr + disc);
    let floor2 = SINGULAR_FLOOR * SINGULAR_FLOOR;
    let cap2 = STRETCH_CAP * STRETCH_CAP;
    if lam_min >= floor2 && lam_max <= cap2 {
        return f;
    }
    let svd = na::SVD::new(f, true, true);
    let (u, vt) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let s = svd
        .singular_values
        .map(|s| s.clamp(SINGULAR_FLOOR, STRETCH_CAP));
    u * Mat2::from_diagonal(&s) * vt
}

/// Membrane strain energy density (per unit rest volume) of an in-plane
/// deformation: quadratic in the Green strain, with independent stretch and
/// shear stiffness.
pub fn membrane_energy_density(f: &Mat32, ke: Real, ks: Real) -> Real {
    let g = f.transpose() * f;
    let e11 = 0.5 * (g[(0, 0)] - 1.0);
    let e22 = 0.5 * (g[(1, 1)] - 1.0);
    let e12 = 0.5 * g[(0, 1)];
    0.5 * ke * (e11 * e11 + e22 * e22) + ks * e12 * e12
}

/// Forces on the three face vertices from the membrane energy, plus the face
/// energy. `area` and `thickness` define the rest volume.
pub fn membrane_force(
    p: &[Vec3; 3],
    dm_inv: &Mat2,
    area: Real,
    thickness: Real,
    ke: Real,
    ks: Real,
) -> ([Vec3; 3], Real) {
    let f = clamp_singular(membrane_deformation(p, dm_inv));
    let g = f.transpose() * f;
    let e11 = 0.5 * (g[(0, 0)] - 1.0);
    let e22 = 0.5 * (g[(1, 1)] - 1.0);
    let e12 = 0.5 * g[(0, 1)];
    let s = Mat2::new(ke * e11, ks * e12, ks * e12, ke * e22);
    let piola = f * s;
    let vol = area * thickness;
    // dE/d[d1 d2] = vol * P * Dm_inv^T.
    let h = (piola * dm_inv.transpose()) * vol;
    let f1 = -h.column(0).into_owned();
    let f2 = -h.column(1).into_owned();
    let f0 = -(f1 + f2);
    let energy = vol * (0.5 * ke * (e11 * e11 + e22 * e22) + ks * e12 * e12);
    ([f0, f1, f2], energy)
}

/// Normal-direction energy density of the Eulerian column `d3` against the
/// current face normal `n`: one-sided penetration penalty on the normal
/// component plus a quadratic shear penalty on the tangential component.
pub fn contact_energy_density(d3: Vec3, n: Vec3, kn: Real, kf: Real) -> Real {
    let s_n = d3.dot(&n);
    let s_t = d3 - s_n * n;
    let pen = if s_n < 1.0 {
        0.5 * kn * (s_n - 1.0) * (s_n - 1.0)
    } else {
        0.0
    };
    pen + 0.5 * kf * s_t.norm_squared()
}

/// Gradient of [`contact_energy_density`] with respect to `d3`.
pub fn contact_gradient(d3: Vec3, n: Vec3, kn: Real, kf: Real) -> Vec3 {
    let s_n = d3.dot(&n);
    let s_t = d3 - s_n * n;
    let g_norm = if s_n < 1.0 { kn * (s_n - 1.0) } else { 0.0 };
    g_norm * n + kf * s_t
}

/// Frictional yield value of a stress state: tangential traction magnitude
/// minus the Coulomb budget. Admissible states satisfy `yield_value <= 0`.
pub fn yield_value(sigma: &Mat3, n: Vec3, mu: Real) -> Real {
    let t = sigma * n;
    let s_nn = n.dot(&t);
    let shear = t - s_nn * n;
    shear.norm() + mu * s_nn
}

/// Project a symmetric stress onto the frictional admissible set.
///
/// Decomposing the traction through `n` into normal and shear parts:
/// under separation (tensile normal traction) both are removed, leaving the
/// in-plane stress; under compression the shear traction is kept if within
/// the Coulomb budget `mu * |normal|` and radially scaled onto the budget
/// otherwise, preserving its direction. In-plane stress components are never
/// modified. The projection is idempotent.
pub fn return_map_cloth(sigma: &Mat3, n: Vec3, mu: Real) -> Mat3 {
    debug_assert!((n.norm() - 1.0).abs() < 1e-9, "normal must be unit");
    debug_assert!(
        (sigma - sigma.transpose()).norm() < 1e-9 * (1.0 + sigma.norm()),
        "stress must be symmetric"
    );
    let t = sigma * n;
    let s_nn = n.dot(&t);
    let shear = t - s_nn * n;
    let nnt = n * n.transpose();
    let proj = Mat3::identity() - nnt;
    if s_nn > 0.0 {
        return proj * sigma * proj;
    }
    let cap = mu * (-s_nn);
    let norm = shear.norm();
    if norm <= cap {
        return *sigma;
    }
    let shear_scaled = shear * (cap / norm);
    proj * sigma * proj + shear_scaled * n.transpose() + n * shear_scaled.transpose()
        + s_nn * nnt
}

/// Return map on the Eulerian deformation column `d3`.
///
/// Beyond unit normal stretch the state is traction-free and `d3` resets to
/// the surface normal. Under compression the tangential part is scaled by
/// the ratio the stress-space return map applies to the shear traction.
pub fn project_d3(d3: Vec3, n: Vec3, mu: Real, kn: Real, kf: Real) -> Vec3 {
    let s_n = d3.dot(&n);
    if s_n >= 1.0 {
        return n;
    }
    let s_t = d3 - s_n * n;
    let st_norm = s_t.norm();
    if st_norm < 1e-15 {
        return d3;
    }
    if s_n <= 0.0 {
        // Fully collapsed normal direction: no meaningful contact frame.
        return s_n * n;
    }
    // Unit-volume Cauchy traction through n; the in-plane membrane stress
    // contributes nothing along n, so the contact gradient carries it all.
    let traction = s_n * contact_gradient(d3, n, kn, kf);
    let t_nn = traction.dot(&n);
    let sigma = traction * n.transpose() + n * traction.transpose() - t_nn * (n * n.transpose());
    let mapped = return_map_cloth(&sigma, n, mu);
    let shear_before = traction - t_nn * n;
    let shear_after = {
        let t2 = mapped * n;
        t2 - n.dot(&t2) * n
    };
    let b = shear_before.norm();
    let alpha = if b < 1e-300 {
        1.0
    } else {
        (shear_after.norm() / b).clamp(0.0, 1.0)
    };
    s_n * n + alpha * s_t
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rest_membrane_is_force_free() {
        let p = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.02, 0.0, 0.0),
            Vec3::new(0.005, 0.018, 0.0),
        ];
        let d1 = p[1] - p[0];
        let d2 = p[2] - p[0];
        let e1 = d1.normalize();
        let n = d1.cross(&d2).normalize();
        let e2 = n.cross(&e1);
        let dm = Mat2::new(d1.dot(&e1), d2.dot(&e1), d1.dot(&e2), d2.dot(&e2));
        let dm_inv = dm.try_inverse().unwrap();
        let ([f0, f1, f2], e) = membrane_force(&p, &dm_inv, 1.8e-4, 1e-4, 1e6, 3e5);
        assert!(e.abs() < 1e-18);
        for f in [f0, f1, f2] {
            assert!(f.norm() < 1e-12, "rest force {f:?}");
        }
    }

    #[test]
    fn clamp_only_affects_degenerate_elements() {
        let f = Mat32::new(1.1, 0.02, -0.03, 0.95, 0.0, 0.01);
        let c = clamp_singular(f);
        assert_relative_eq!(f, c, epsilon = 1e-15);
        // Collapse the second column.
        let f = Mat32::new(1.0, 1e-4, 0.0, 1e-4, 0.0, 0.0);
        let c = clamp_singular(f);
        let svd = na::SVD::new(c, false, false);
        assert!(svd.singular_values.min() >= SINGULAR_FLOOR - 1e-12);
    }

    #[test]
    fn contact_gradient_matches_finite_differences() {
        use rand::Rng;
        let mut rng = crate::rng::stream(11, "fd-contact", 0);
        for _ in 0..100 {
            let d3 = Vec3::new(
                rng.gen_range(-0.5..1.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..1.5),
            );
            let n = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            // The one-sided penalty has a kink at unit normal stretch;
            // central differences are not valid across it.
            if (d3.dot(&n) - 1.0).abs() < 1e-3 {
                continue;
            }
            let (kn, kf) = (1e4, 1e4);
            let g = contact_gradient(d3, n, kn, kf);
            let eps = 1e-6;
            for k in 0..3 {
                let mut hi = d3;
                let mut lo = d3;
                hi[k] += eps;
                lo[k] -= eps;
                let fd = (contact_energy_density(hi, n, kn, kf)
                    - contact_energy_density(lo, n, kn, kf))
                    / (2.0 * eps);
                assert!(
                    (fd - g[k]).abs() <= 1e-4 * g[k].abs().max(1.0),
                    "fd {fd} vs analytic {}",
                    g[k]
                );
            }
        }
    }
}
