//! Triangle geometry: bounding boxes, a BVH, ray casting, and a
//! triangle-triangle intersection predicate.

use crate::math::{vmax, vmin, Real, Vec3};

/// Plane-distance tolerance for the intersection predicate. Triangle pairs
/// that merely touch within this distance are treated as non-intersecting.
pub const CONTACT_TOL: Real = 1e-9;

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Aabb {
            min: Vec3::repeat(Real::INFINITY),
            max: Vec3::repeat(Real::NEG_INFINITY),
        }
    }

    pub fn of_points(points: &[Vec3]) -> Self {
        let mut b = Aabb::empty();
        for p in points {
            b.min = vmin(b.min, *p);
            b.max = vmax(b.max, *p);
        }
        b
    }

    pub fn union(self, other: Aabb) -> Aabb {
        Aabb {
            min: vmin(self.min, other.min),
            max: vmax(self.max, other.max),
        }
    }

    pub fn grow(mut self, pad: Real) -> Aabb {
        self.min -= Vec3::repeat(pad);
        self.max += Vec3::repeat(pad);
        self
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        self.min.x <= other.max.x
            && self.max.x >= other.min.x
            && self.min.y <= other.max.y
            && self.max.y >= other.min.y
            && self.min.z <= other.max.z
            && self.max.z >= other.min.z
    }

    pub fn center(&self) -> Vec3 {
        0.5 * (self.min + self.max)
    }

    /// Slab test; returns the entry parameter if the ray hits within
    /// `(t_min, t_max)`.
    pub fn ray_hit(&self, orig: Vec3, inv_dir: Vec3, t_min: Real, t_max: Real) -> Option<Real> {
        let mut t0 = t_min;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.min[k] - orig[k]) * inv_dir[k];
            let b = (self.max[k] - orig[k]) * inv_dir[k];
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// A ray-triangle hit.
#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    pub t: Real,
    pub face: u32,
    /// Barycentric coordinates of vertices 1 and 2.
    pub u: Real,
    pub v: Real,
}

/// Moeller-Trumbore, no backface culling. Hits with `t <= t_min` are ignored.
pub fn ray_triangle(orig: Vec3, dir: Vec3, tri: &[Vec3; 3], t_min: Real) -> Option<(Real, Real, Real)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = orig - tri[0];
    let u = s.dot(&p) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    if t <= t_min {
        return None;
    }
    Some((t, u, v))
}

/// Intersection segment of a triangle with a plane, projected on `axis`.
/// `dist` are signed plane distances of the vertices, `proj` their axis
/// projections. Requires vertices on both sides after sign classification.
fn plane_interval(proj: [Real; 3], dist: [Real; 3], tol: Real) -> (Real, Real) {
    let sign = |d: Real| -> i32 {
        if d > tol {
            1
        } else if d < -tol {
            -1
        } else {
            0
        }
    };
    let mut lo = Real::INFINITY;
    let mut hi = Real::NEG_INFINITY;
    for i in 0..3 {
        if sign(dist[i]) == 0 {
            lo = lo.min(proj[i]);
            hi = hi.max(proj[i]);
        }
        let j = (i + 1) % 3;
        if sign(dist[i]) * sign(dist[j]) < 0 {
            let t = proj[i] + (proj[j] - proj[i]) * dist[i] / (dist[i] - dist[j]);
            lo = lo.min(t);
            hi = hi.max(t);
        }
    }
    (lo, hi)
}

/// Triangle-triangle intersection predicate (interval method).
///
/// Pairs that only touch within [`CONTACT_TOL`] along either plane normal,
/// and coplanar pairs, report `false`.
pub fn tri_tri_intersect(a: &[Vec3; 3], b: &[Vec3; 3]) -> bool {
    let tol = CONTACT_TOL;
    let nb = (b[1] - b[0]).cross(&(b[2] - b[0]));
    let nb_len = nb.norm();
    if nb_len < 1e-14 {
        return false;
    }
    let nb = nb / nb_len;
    let db = [
        nb.dot(&(a[0] - b[0])),
        nb.dot(&(a[1] - b[0])),
        nb.dot(&(a[2] - b[0])),
    ];
    if db.iter().all(|&d| d > -tol) || db.iter().all(|&d| d < tol) {
        return false;
    }
    let na = (a[1] - a[0]).cross(&(a[2] - a[0]));
    let na_len = na.norm();
    if na_len < 1e-14 {
        return false;
    }
    let na = na / na_len;
    let da = [
        na.dot(&(b[0] - a[0])),
        na.dot(&(b[1] - a[0])),
        na.dot(&(b[2] - a[0])),
    ];
    if da.iter().all(|&d| d > -tol) || da.iter().all(|&d| d < tol) {
        return false;
    }

    let axis = na.cross(&nb);
    if axis.norm() < 1e-12 {
        // Nearly coplanar but already known to straddle both planes within
        // tolerance: treat as touching.
        return false;
    }
    let pa = [axis.dot(&a[0]), axis.dot(&a[1]), axis.dot(&a[2])];
    let pb = [axis.dot(&b[0]), axis.dot(&b[1]), axis.dot(&b[2])];
    let (a_lo, a_hi) = plane_interval(pa, db, tol);
    let (b_lo, b_hi) = plane_interval(pb, da, tol);
    a_lo.max(b_lo) < a_hi.min(b_hi)
}

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct BvhNode {
    aabb: Aabb,
    /// Left child index, or primitive range start for leaves.
    a: u32,
    /// Right child index, or primitive range end for leaves.
    b: u32,
    leaf: bool,
}

/// Binary AABB tree over a triangle soup.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    /// Primitive indices, permuted so leaves own contiguous ranges.
    order: Vec<u32>,
}

impl Bvh {
    pub fn build(boxes: &[Aabb]) -> Self {
        let mut order: Vec<u32> = (0..boxes.len() as u32).collect();
        let mut nodes = Vec::new();
        if boxes.is_empty() {
            nodes.push(BvhNode {
                aabb: Aabb::empty(),
                a: 0,
                b: 0,
                leaf: true,
            });
            return Bvh { nodes, order };
        }
        build_node(boxes, &mut order, 0, boxes.len(), &mut nodes);
        Bvh { nodes, order }
    }

    pub fn node_aabb(&self) -> Aabb {
        self.nodes[0].aabb
    }

    /// All primitives whose AABB overlaps `query`.
    pub fn overlapping(&self, query: &Aabb, out: &mut Vec<u32>) {
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if !node.aabb.overlaps(query) {
                continue;
            }
            if node.leaf {
                for k in node.a..node.b {
                    out.push(self.order[k as usize]);
                }
            } else {
                stack.push(node.a as usize);
                stack.push(node.b as usize);
            }
        }
    }

    /// All ray hits with `t > t_min`, sorted by `t`.
    pub fn ray_hits(&self, tris: &[[Vec3; 3]], orig: Vec3, dir: Vec3, t_min: Real) -> Vec<RayHit> {
        let inv_dir = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut hits = Vec::new();
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.aabb.ray_hit(orig, inv_dir, t_min, Real::INFINITY).is_none() {
                continue;
            }
            if node.leaf {
                for k in node.a..node.b {
                    let f = self.order[k as usize];
                    if let Some((t, u, v)) = ray_triangle(orig, dir, &tris[f as usize], t_min) {
                        hits.push(RayHit { t, face: f, u, v });
                    }
                }
            } else {
                stack.push(node.a as usize);
                stack.push(node.b as usize);
            }
        }
        hits.sort_by(|x, y| x.t.total_cmp(&y.t));
        hits
    }

    /// Nearest ray hit with `t > t_min`.
    pub fn first_hit(&self, tris: &[[Vec3; 3]], orig: Vec3, dir: Vec3, t_min: Real) -> Option<RayHit> {
        let inv_dir = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<RayHit> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let cap = best.map_or(Real::INFINITY, |h| h.t);
            if node.aabb.ray_hit(orig, inv_dir, t_min, cap).is_none() {
                continue;
            }
            if node.leaf {
                for k in node.a..node.b {
                    let f = self.order[k as usize];
                    if let Some((t, u, v)) = ray_triangle(orig, dir, &tris[f as usize], t_min) {
                        if best.map_or(true, |h| t < h.t) {
                            best = Some(RayHit { t, face: f, u, v });
                        }
                    }
                }
            } else {
                stack.push(node.a as usize);
                stack.push(node.b as usize);
            }
        }
        best
    }
}

fn build_node(boxes: &[Aabb], order: &mut [u32], start: usize, end: usize, nodes: &mut Vec<BvhNode>) -> usize {
    let mut aabb = Aabb::empty();
    for &p in &order[start..end] {
        aabb = aabb.union(boxes[p as usize]);
    }
    let idx = nodes.len();
    nodes.push(BvhNode {
        aabb,
        a: start as u32,
        b: end as u32,
        leaf: true,
    });
    if end - start <= LEAF_SIZE {
        return idx;
    }
    let extent = aabb.max - aabb.min;
    let axis = if extent.x >= extent.y && extent.x >= extent.z {
        0
    } else if extent.y >= extent.z {
        1
    } else {
        2
    };
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&p, &q| {
        boxes[p as usize].center()[axis].total_cmp(&boxes[q as usize].center()[axis])
    });
    let left = build_node(boxes, order, start, mid, nodes);
    let right = build_node(boxes, order, mid, end, nodes);
    nodes[idx].a = left as u32;
    nodes[idx].b = right as u32;
    nodes[idx].leaf = false;
    idx
}

/// Outcome of a self-intersection scan.
#[derive(Debug, Clone, Default)]
pub struct SelfIntersections {
    /// Intersecting face index pairs, each with `pair.0 < pair.1`, sorted.
    pub pairs: Vec<(u32, u32)>,
    /// Narrow-phase tests performed (broad-phase survivors).
    pub candidates: usize,
}

fn tri_of(vertices: &[Vec3], face: &[u32; 3]) -> [Vec3; 3] {
    [
        vertices[face[0] as usize],
        vertices[face[1] as usize],
        vertices[face[2] as usize],
    ]
}

fn shares_vertex(a: &[u32; 3], b: &[u32; 3]) -> bool {
    a.iter().any(|v| b.contains(v))
}

/// Count intersecting triangle pairs using BVH pruning.
/// Pairs sharing a mesh vertex are excluded.
pub fn self_intersections(vertices: &[Vec3], faces: &[[u32; 3]]) -> SelfIntersections {
    let boxes: Vec<Aabb> = faces
        .iter()
        .map(|f| Aabb::of_points(&tri_of(vertices, f)))
        .collect();
    let bvh = Bvh::build(&boxes);
    let mut out = SelfIntersections::default();
    if faces.is_empty() {
        return out;
    }
    let mut stack: Vec<(usize, usize)> = vec![(0, 0)];
    while let Some((x, y)) = stack.pop() {
        let nx = &bvh.nodes[x];
        let ny = &bvh.nodes[y];
        if !nx.aabb.overlaps(&ny.aabb) {
            continue;
        }
        match (nx.leaf, ny.leaf) {
            (true, true) => {
                for ka in nx.a..nx.b {
                    let fa = bvh.order[ka as usize];
                    let kb_start = if x == y { ka + 1 } else { ny.a };
                    for kb in kb_start..ny.b {
                        let fb = bvh.order[kb as usize];
                        let (i, j) = if fa < fb { (fa, fb) } else { (fb, fa) };
                        if shares_vertex(&faces[i as usize], &faces[j as usize]) {
                            continue;
                        }
                        if !boxes[i as usize].overlaps(&boxes[j as usize]) {
                            continue;
                        }
                        out.candidates += 1;
                        if tri_tri_intersect(
                            &tri_of(vertices, &faces[i as usize]),
                            &tri_of(vertices, &faces[j as usize]),
                        ) {
                            out.pairs.push((i, j));
                        }
                    }
                }
            }
            (false, true) => {
                stack.push((nx.a as usize, y));
                stack.push((nx.b as usize, y));
            }
            (true, false) => {
                stack.push((x, ny.a as usize));
                stack.push((x, ny.b as usize));
            }
            (false, false) => {
                if x == y {
                    stack.push((nx.a as usize, nx.a as usize));
                    stack.push((nx.b as usize, nx.b as usize));
                    stack.push((nx.a as usize, nx.b as usize));
                } else {
                    stack.push((nx.a as usize, ny.a as usize));
                    stack.push((nx.a as usize, ny.b as usize));
                    stack.push((nx.b as usize, ny.a as usize));
                    stack.push((nx.b as usize, ny.b as usize));
                }
            }
        }
    }
    out.pairs.sort_unstable();
    out.pairs.dedup();
    out
}

/// Brute-force reference for [`self_intersections`]: identical predicate,
/// no pruning. Quadratic; intended for validation on small meshes.
pub fn self_intersections_brute(vertices: &[Vec3], faces: &[[u32; 3]]) -> SelfIntersections {
    let boxes: Vec<Aabb> = faces
        .iter()
        .map(|f| Aabb::of_points(&tri_of(vertices, f)))
        .collect();
    let mut out = SelfIntersections::default();
    for i in 0..faces.len() {
        for j in i + 1..faces.len() {
            if shares_vertex(&faces[i], &faces[j]) {
                continue;
            }
            out.candidates += 1;
            if !boxes[i].overlaps(&boxes[j]) {
                continue;
            }
            if tri_tri_intersect(&tri_of(vertices, &faces[i]), &tri_of(vertices, &faces[j])) {
                out.pairs.push((i as u32, j as u32));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ray_hits_unit_triangle() {
        let tri = [Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let hit = ray_triangle(Vec3::new(0.2, 0.2, 1.0), Vec3::new(0.0, 0.0, -1.0), &tri, 0.0);
        let (t, u, v) = hit.expect("hit");
        assert!((t - 1.0).abs() < 1e-12);
        assert!((u - 0.2).abs() < 1e-12 && (v - 0.2).abs() < 1e-12);
        assert!(ray_triangle(Vec3::new(0.9, 0.9, 1.0), Vec3::new(0.0, 0.0, -1.0), &tri, 0.0).is_none());
    }

    #[test]
    fn crossing_triangles_intersect() {
        let a = [Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)];
        let b = [Vec3::new(0.0, 1.0, -1.0), Vec3::new(0.0, 1.0, 1.0), Vec3::new(0.0, -1.0, 0.0)];
        assert!(tri_tri_intersect(&a, &b));
        assert!(tri_tri_intersect(&b, &a));
    }

    #[test]
    fn separated_triangles_do_not_intersect() {
        let a = [Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0)];
        let mut b = a;
        for p in &mut b {
            p.z += 1e-6;
        }
        assert!(!tri_tri_intersect(&a, &b));
    }

    #[test]
    fn touching_within_tolerance_is_conservative() {
        let a = [Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, -1.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        // Vertex of b rests on the plane of a, within tolerance.
        let b = [
            Vec3::new(0.0, 0.0, 0.5e-9),
            Vec3::new(0.0, 0.5, 1.0),
            Vec3::new(0.5, 0.0, 1.0),
        ];
        assert!(!tri_tri_intersect(&a, &b));
        // Pushed clearly through, it intersects.
        let c = [
            Vec3::new(0.0, 0.0, -0.1),
            Vec3::new(0.0, 0.5, 1.0),
            Vec3::new(0.5, 0.0, 1.0),
        ];
        assert!(tri_tri_intersect(&a, &c));
    }
}
