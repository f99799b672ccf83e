//! Shared scalar and linear-algebra aliases.

pub use nalgebra as na;

pub type Real = f64;
pub type Vec2 = na::Vector2<Real>;
pub type Vec3 = na::Vector3<Real>;
pub type Mat2 = na::Matrix2<Real>;
pub type Mat3 = na::Matrix3<Real>;
pub type Quat = na::UnitQuaternion<Real>;
pub type Iso3 = na::Isometry3<Real>;

/// Componentwise minimum of two vectors.
pub fn vmin(a: Vec3, b: Vec3) -> Vec3 {
    Vec3::new(a.x.min(b.x), a.y.min(b.y), a.z.min(b.z))
}

/// Componentwise maximum of two vectors.
pub fn vmax(a: Vec3, b: Vec3) -> Vec3 {
    Vec3::new(a.x.max(b.x), a.y.max(b.y), a.z.max(b.z))
}

/// Skew-symmetric cross-product matrix of `w`, so `skew(w) * v == w × v`.
pub fn skew(w: Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rotation with `jaw` as its local x axis and `finger` as its local z axis.
///
/// `jaw` and `finger` must be non-parallel; both are normalized and `jaw` is
/// re-orthogonalized against `finger`.
pub fn frame_from_axes(jaw: Vec3, finger: Vec3) -> Quat {
    let z = finger.normalize();
    let x = (jaw - z * jaw.dot(&z)).normalize();
    let y = z.cross(&x);
    let m = Mat3::from_columns(&[x, y, z]);
    Quat::from_matrix(&m)
}
