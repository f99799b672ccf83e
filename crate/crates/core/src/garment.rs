//! Procedural garment meshes.
//!
//! A shirt is built from two panels (front and back) sampled on a shared
//! parameter grid, welded along side seams and shoulder segments, leaving
//! exactly four boundary loops: hem, collar, and two armholes. Panel outlines
//! are randomized splines controlled by a small set of named dimensions.

use crate::error::{Error, Result};
use crate::math::{Mat2, Quat, Real, Vec3};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BinaryHeap;
use std::collections::HashMap;
use std::path::Path;

/// Named dimensions of a T-shirt template, in meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarmentSpec {
    pub body_length: Real,
    pub hem_width: Real,
    /// Length of the collar opening across the shoulders (full width).
    pub collar_part_length: Real,
    /// Geodesic width of the collar/hem annotation bands.
    pub collar_part_width: Real,
    /// Extra depth of the front collar curve relative to the back.
    pub front_neck_drop: Real,
    pub target_edge_length: Real,
    /// Resting gap between the two panels.
    #[serde(default = "default_thickness")]
    pub thickness: Real,
    pub seed: u64,
}

fn default_thickness() -> Real {
    2.0e-4
}

impl Default for GarmentSpec {
    fn default() -> Self {
        GarmentSpec {
            body_length: 0.62,
            hem_width: 0.50,
            collar_part_length: 0.22,
            collar_part_width: 0.07,
            front_neck_drop: 0.045,
            target_edge_length: 0.02,
            thickness: default_thickness(),
            seed: 0,
        }
    }
}

/// Per-vertex semantic region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Body,
    CollarPart,
    HemPart,
}

/// Ordered vertex cycles of the four boundary loops.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BoundaryLoops {
    pub hem: Vec<u32>,
    pub collar: Vec<u32>,
    pub armhole_left: Vec<u32>,
    pub armhole_right: Vec<u32>,
}

/// Triangle mesh with rest-state data and semantic annotations.
#[derive(Debug, Clone)]
pub struct GarmentMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// Inverse in-plane rest basis per face (maps rest edges to the unit
    /// reference triangle), used for membrane strain.
    pub rest_metric: Vec<Mat2>,
    pub rest_area: Vec<Real>,
    pub regions: Vec<Region>,
    pub loops: BoundaryLoops,
    pub thickness: Real,
}

/// Result of a standalone topology audit.
#[derive(Debug, Clone)]
pub struct TopologyReport {
    pub boundary_loops: Vec<Vec<u32>>,
    pub euler_characteristic: i64,
    pub min_edge: Real,
    pub max_edge: Real,
}

impl GarmentMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Area-weighted face normal (unnormalized).
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        let p0 = self.vertices[a as usize];
        let e1 = self.vertices[b as usize] - p0;
        let e2 = self.vertices[c as usize] - p0;
        e1.cross(&e2)
    }

    /// Recompute `rest_metric` and `rest_area` from current positions.
    ///
    /// Call after any operation that changes rest geometry or winding.
    pub fn rebuild_rest_data(&mut self) -> Result<()> {
        let (metric, area) = rest_data(&self.vertices, &self.faces)?;
        self.rest_metric = metric;
        self.rest_area = area;
        Ok(())
    }

    /// Reverse the winding of every face, turning the garment inside out,
    /// and refresh rest data.
    pub fn evert(&mut self) -> Result<()> {
        for f in &mut self.faces {
            f.swap(1, 2);
        }
        self.rebuild_rest_data()
    }
}

/// In-plane inverse rest basis and rest area for each face.
fn rest_data(vertices: &[Vec3], faces: &[[u32; 3]]) -> Result<(Vec<Mat2>, Vec<Real>)> {
    let mut metric = Vec::with_capacity(faces.len());
    let mut areas = Vec::with_capacity(faces.len());
    for (fi, f) in faces.iter().enumerate() {
        let p0 = vertices[f[0] as usize];
        let d1 = vertices[f[1] as usize] - p0;
        let d2 = vertices[f[2] as usize] - p0;
        let n = d1.cross(&d2);
        let area = 0.5 * n.norm();
        if area < 1e-12 {
            return Err(Error::Generation(format!("degenerate face {fi}")));
        }
        let e1 = d1.normalize();
        let e2 = n.normalize().cross(&e1);
        let dm = Mat2::new(d1.dot(&e1), d2.dot(&e1), d1.dot(&e2), d2.dot(&e2));
        let inv = dm
            .try_inverse()
            .ok_or_else(|| Error::Generation(format!("singular rest basis on face {fi}")))?;
        metric.push(inv);
        areas.push(area);
    }
    Ok((metric, areas))
}

/// Smooth hem offset with zero value at both hem corners. `t` in [-1, 1].
fn hem_profile(t: Real, c: [Real; 3]) -> Real {
    c[0] * (std::f64::consts::FRAC_PI_2 * t).cos()
        + c[1] * (std::f64::consts::PI * t).sin()
        + c[2] * (2.0 * std::f64::consts::PI * t).sin()
}

/// Collar dip profile: 1 at center, 0 at both collar points. `t` in [-1, 1].
fn collar_profile(t: Real, q: Real) -> Real {
    (0.5 + 0.5 * (std::f64::consts::PI * t).cos()).powf(q)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Panel {
    Back,
    Front,
}

/// Generate a shirt mesh from `spec`. Deterministic in `spec` (including its
/// seed); the same spec always yields a bit-identical mesh.
pub fn generate_shirt(spec: &GarmentSpec) -> Result<GarmentMesh> {
    let h = spec.body_length;
    let w = spec.hem_width;
    let el = spec.target_edge_length;
    if !(w > 0.0) || !(h > 0.0) {
        return Err(Error::Generation(format!(
            "non-positive body dimensions: body_length={h}, hem_width={w}"
        )));
    }
    if !(el > 0.0) || el > 0.2 * w.min(h) {
        return Err(Error::Generation(format!(
            "target edge length {el} out of range for garment size"
        )));
    }
    if !(spec.thickness > 0.0) {
        return Err(Error::Generation("non-positive thickness".into()));
    }
    if spec.collar_part_length + 4.0 * el >= w {
        return Err(Error::Generation(format!(
            "collar part length {} does not fit within hem width {}",
            spec.collar_part_length, w
        )));
    }
    if spec.front_neck_drop >= 0.35 * h {
        return Err(Error::Generation("front neck drop too deep".into()));
    }

    let mut rand = rng::stream(spec.seed, rng::streams::GARMENT, 0);
    let back_drop: Real = rand.gen_range(0.015..0.035);
    let front_drop = back_drop + spec.front_neck_drop;
    let collar_q: Real = rand.gen_range(0.9..1.5);
    let shoulder_frac: Real = rand.gen_range(0.30..0.45);
    let shoulder_slope = rand.gen_range(0.02..0.05) * h;
    let armhole_depth = rand.gen_range(0.16..0.22) * h;
    let armhole_exp: Real = rand.gen_range(1.6..2.4);
    let hem_amp: Real = rand.gen_range(0.004..0.018);
    let hem_coef = [
        rand.gen_range(-1.0..1.0),
        rand.gen_range(-0.5..0.5),
        rand.gen_range(-0.35..0.35),
    ];
    if front_drop >= 0.4 * h {
        return Err(Error::Generation("front collar dips too deep".into()));
    }

    // Grid resolution. Columns are kept symmetric about x = 0.
    let half_cols = ((0.5 * w / el).round() as usize).max(3);
    let nx = 2 * half_cols;
    let ny = ((h / el).round() as usize).max(6);
    let dx = w / nx as Real;
    let ic0 = nx / 2;
    let nc = ((0.5 * spec.collar_part_length / dx).round() as usize).max(1);
    let ns = ((shoulder_frac * (0.5 * w - nc as Real * dx) / dx).round() as usize).max(1);
    let i_cr = ic0 + nc;
    let i_shr = i_cr + ns;
    if i_shr + 1 > nx {
        return Err(Error::Generation(
            "collar and shoulder span leaves no room for armholes".into(),
        ));
    }
    let i_cl = ic0 - nc;
    let i_shl = i_cl - ns;
    let x_c = nc as Real * dx;
    let x_sh = (nc + ns) as Real * dx;
    let underarm_y = h - armhole_depth;

    let x_of = |i: usize| -> Real { -0.5 * w + i as Real * dx };
    let y_bot = |x: Real| -> Real { hem_amp * hem_profile(2.0 * x / w, hem_coef) };
    let y_top = |x: Real, panel: Panel| -> Real {
        let ax = x.abs();
        if ax <= x_c + 1e-12 {
            let drop = match panel {
                Panel::Back => back_drop,
                Panel::Front => front_drop,
            };
            h - drop * collar_profile(x / x_c, collar_q)
        } else if ax <= x_sh + 1e-12 {
            let t = (ax - x_c) / (x_sh - x_c);
            h - shoulder_slope * t
        } else {
            let t = ((ax - x_sh) / (0.5 * w - x_sh)).clamp(0.0, 1.0);
            let top = h - shoulder_slope;
            top - (top - underarm_y) * t.powf(armhole_exp)
        }
    };

    // Column height sanity for the deepest panel.
    for i in 0..=nx {
        let x = x_of(i);
        let span = y_top(x, Panel::Front) - y_bot(x);
        if span < 2.0 * h / ny as Real {
            return Err(Error::Generation(format!(
                "panel column at x={x:.3} collapses (span {span:.4})"
            )));
        }
    }

    let weld_top = |i: usize| -> bool { (i_shl..=i_cl).contains(&i) || (i_cr..=i_shr).contains(&i) };
    let welded = |i: usize, j: usize| -> bool { i == 0 || i == nx || (j == ny && weld_top(i)) };

    let mut vertices: Vec<Vec3> = Vec::new();
    let mut weld_ids: HashMap<(usize, usize), u32> = HashMap::new();
    let mut panel_ids = [vec![0u32; (nx + 1) * (ny + 1)], vec![0u32; (nx + 1) * (ny + 1)]];
    let gap = spec.thickness;
    for (pi, panel) in [Panel::Back, Panel::Front].into_iter().enumerate() {
        for i in 0..=nx {
            let x = x_of(i);
            let yb = y_bot(x);
            let yt = y_top(x, panel);
            for j in 0..=ny {
                let slot = i * (ny + 1) + j;
                if welded(i, j) {
                    if let Some(&id) = weld_ids.get(&(i, j)) {
                        panel_ids[pi][slot] = id;
                        continue;
                    }
                }
                let y = yb + (yt - yb) * j as Real / ny as Real;
                let z = if welded(i, j) {
                    0.5 * gap
                } else {
                    match panel {
                        Panel::Back => 0.0,
                        Panel::Front => gap,
                    }
                };
                let id = vertices.len() as u32;
                vertices.push(Vec3::new(x, y, z));
                panel_ids[pi][slot] = id;
                if welded(i, j) {
                    weld_ids.insert((i, j), id);
                }
            }
        }
    }

    // Faces: front panel faces +z, back faces -z (outward when right side out).
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for (pi, panel) in [Panel::Back, Panel::Front].into_iter().enumerate() {
        let id = |i: usize, j: usize| panel_ids[pi][i * (ny + 1) + j];
        for i in 0..nx {
            for j in 0..ny {
                let a = id(i, j);
                let b = id(i + 1, j);
                let c = id(i + 1, j + 1);
                let d = id(i, j + 1);
                match panel {
                    Panel::Front => {
                        faces.push([a, b, c]);
                        faces.push([a, c, d]);
                    }
                    Panel::Back => {
                        faces.push([a, c, b]);
                        faces.push([a, d, c]);
                    }
                }
            }
        }
    }

    // Boundary loops as ordered cycles.
    let back = |i: usize, j: usize| panel_ids[0][i * (ny + 1) + j];
    let front = |i: usize, j: usize| panel_ids[1][i * (ny + 1) + j];
    let mut hem = Vec::new();
    for i in 0..=nx {
        hem.push(front(i, 0));
    }
    for i in (1..nx).rev() {
        hem.push(back(i, 0));
    }
    let mut collar = Vec::new();
    for i in i_cl..=i_cr {
        collar.push(front(i, ny));
    }
    for i in (i_cl + 1..i_cr).rev() {
        collar.push(back(i, ny));
    }
    let mut armhole_right = Vec::new();
    for i in i_shr..=nx {
        armhole_right.push(front(i, ny));
    }
    for i in (i_shr + 1..nx).rev() {
        armhole_right.push(back(i, ny));
    }
    let mut armhole_left = Vec::new();
    for i in 0..=i_shl {
        armhole_left.push(front(i, ny));
    }
    for i in (1..i_shl).rev() {
        armhole_left.push(back(i, ny));
    }

    let (rest_metric, rest_area) = rest_data(&vertices, &faces)?;
    let loops = BoundaryLoops {
        hem,
        collar,
        armhole_left,
        armhole_right,
    };
    let regions = annotate_regions(
        &vertices,
        &faces,
        &loops,
        spec.collar_part_width,
        spec.collar_part_width,
    )?;
    Ok(GarmentMesh {
        vertices,
        faces,
        rest_metric,
        rest_area,
        regions,
        loops,
        thickness: spec.thickness,
    })
}

/// Audit manifoldness, orientation consistency, and boundary structure.
pub fn validate_topology(mesh: &GarmentMesh) -> Result<TopologyReport> {
    let nv = mesh.vertices.len();
    let mut edge_uses: HashMap<(u32, u32), Vec<bool>> = HashMap::new();
    let mut touched = vec![false; nv];
    for (fi, f) in mesh.faces.iter().enumerate() {
        if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
            return Err(Error::Topology(format!("face {fi} repeats a vertex")));
        }
        for k in 0..3 {
            let a = f[k];
            let b = f[(k + 1) % 3];
            if a as usize >= nv || b as usize >= nv {
                return Err(Error::Topology(format!("face {fi} references missing vertex")));
            }
            touched[a as usize] = true;
            let key = (a.min(b), a.max(b));
            edge_uses.entry(key).or_default().push(a < b);
        }
    }
    if let Some(v) = touched.iter().position(|t| !t) {
        return Err(Error::Topology(format!("isolated vertex {v}")));
    }

    let mut boundary_next: HashMap<u32, u32> = HashMap::new();
    let mut min_edge = Real::INFINITY;
    let mut max_edge: Real = 0.0;
    for (&(a, b), uses) in &edge_uses {
        let len = (mesh.vertices[a as usize] - mesh.vertices[b as usize]).norm();
        min_edge = min_edge.min(len);
        max_edge = max_edge.max(len);
        match uses.len() {
            1 => {
                // Boundary half-edge, oriented as the face uses it.
                let (from, to) = if uses[0] { (a, b) } else { (b, a) };
                if boundary_next.insert(from, to).is_some() {
                    return Err(Error::Topology(format!(
                        "boundary branches at vertex {from}"
                    )));
                }
            }
            2 => {
                if uses[0] == uses[1] {
                    return Err(Error::Topology(format!(
                        "inconsistent orientation across edge ({a}, {b})"
                    )));
                }
            }
            n => {
                return Err(Error::Topology(format!(
                    "edge ({a}, {b}) shared by {n} faces"
                )));
            }
        }
    }

    // Walk boundary cycles.
    let mut loops = Vec::new();
    let mut remaining = boundary_next.clone();
    while let Some(&start) = remaining.keys().next() {
        let mut cycle = vec![start];
        let mut cur = remaining.remove(&start).ok_or_else(|| {
            Error::Topology(format!("dangling boundary edge at vertex {start}"))
        })?;
        while cur != start {
            cycle.push(cur);
            cur = remaining
                .remove(&cur)
                .ok_or_else(|| Error::Topology(format!("open boundary chain at vertex {cur}")))?;
        }
        loops.push(cycle);
    }
    loops.sort_by_key(|l| usize::MAX - l.len());

    let euler = nv as i64 - edge_uses.len() as i64 + mesh.faces.len() as i64;
    Ok(TopologyReport {
        boundary_loops: loops,
        euler_characteristic: euler,
        min_edge,
        max_edge,
    })
}

/// Label vertices by geodesic distance bands from the collar and hem loops.
///
/// Ties go to the collar. Errors if any vertex is unreachable from the seeds
/// (disconnected patch).
pub fn annotate_regions(
    vertices: &[Vec3],
    faces: &[[u32; 3]],
    loops: &BoundaryLoops,
    collar_band: Real,
    hem_band: Real,
) -> Result<Vec<Region>> {
    let nv = vertices.len();
    let dc = geodesic_distances(vertices, faces, &loops.collar);
    let dh = geodesic_distances(vertices, faces, &loops.hem);
    let mut regions = Vec::with_capacity(nv);
    for v in 0..nv {
        if !dc[v].is_finite() && !dh[v].is_finite() {
            return Err(Error::Topology(format!(
                "vertex {v} is disconnected from both the collar and hem loops"
            )));
        }
        let in_c = dc[v] <= collar_band;
        let in_h = dh[v] <= hem_band;
        let r = match (in_c, in_h) {
            (true, true) => {
                if dc[v] <= dh[v] {
                    Region::CollarPart
                } else {
                    Region::HemPart
                }
            }
            (true, false) => Region::CollarPart,
            (false, true) => Region::HemPart,
            (false, false) => Region::Body,
        };
        regions.push(r);
    }
    Ok(regions)
}

/// Dijkstra distance along mesh edges from a set of seed vertices.
/// Unreachable vertices get `INFINITY`.
pub fn geodesic_distances(vertices: &[Vec3], faces: &[[u32; 3]], seeds: &[u32]) -> Vec<Real> {
    let nv = vertices.len();
    let mut adj: Vec<Vec<(u32, Real)>> = vec![Vec::new(); nv];
    let mut seen: HashMap<(u32, u32), ()> = HashMap::new();
    for f in faces {
        for k in 0..3 {
            let a = f[k];
            let b = f[(k + 1) % 3];
            let key = (a.min(b), a.max(b));
            if seen.insert(key, ()).is_none() {
                let len = (vertices[a as usize] - vertices[b as usize]).norm();
                adj[a as usize].push((b, len));
                adj[b as usize].push((a, len));
            }
        }
    }
    let mut dist = vec![Real::INFINITY; nv];
    let mut heap: BinaryHeap<(ordered::NotNan, u32)> = BinaryHeap::new();
    for &s in seeds {
        dist[s as usize] = 0.0;
        heap.push((ordered::NotNan(-0.0), s));
    }
    while let Some((ordered::NotNan(nd), v)) = heap.pop() {
        let d = -nd;
        if d > dist[v as usize] {
            continue;
        }
        for &(u, len) in &adj[v as usize] {
            let cand = d + len;
            if cand < dist[u as usize] {
                dist[u as usize] = cand;
                heap.push((ordered::NotNan(-cand), u));
            }
        }
    }
    dist
}

/// Total-order wrapper so finite distances can live in a `BinaryHeap`.
mod ordered {
    #[derive(PartialEq)]
    pub struct NotNan(pub f64);
    impl Eq for NotNan {}
    impl PartialOrd for NotNan {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for NotNan {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.partial_cmp(&other.0).expect("NaN distance")
        }
    }
}

/// Rigidly place an everted garment flat above the table, hem toward -x,
/// with a seeded pose jitter. The result still needs a settling simulation
/// before it is a valid initial state.
pub fn place_inside_out(
    mesh: &GarmentMesh,
    table_height: Real,
    center_x: Real,
    seed: u64,
) -> Result<GarmentMesh> {
    let mut out = mesh.clone();
    out.evert()?;

    let mut rand = rng::stream(seed, rng::streams::PLACEMENT, 0);
    let yaw: Real = rand.gen_range(-0.15..0.15);
    let jx: Real = rand.gen_range(-0.03..0.03);
    let jy: Real = rand.gen_range(-0.03..0.03);
    let drop: Real = rand.gen_range(0.004..0.012);

    // Template frame: x spans the hem, y runs hem -> collar. World frame:
    // body axis along +x with the hem toward -x.
    let span_y: Real = out
        .vertices
        .iter()
        .map(|p| p.y)
        .fold(Real::NEG_INFINITY, Real::max);
    let rot = Quat::from_axis_angle(&crate::math::na::Vector3::z_axis(), yaw);
    for p in &mut out.vertices {
        let mapped = Vec3::new(p.y - 0.5 * span_y, -p.x, p.z);
        let r = rot * mapped;
        *p = Vec3::new(r.x + center_x + jx, r.y + jy, r.z + table_height + drop);
    }
    out.rebuild_rest_data()?;
    Ok(out)
}

/// Write the mesh as OBJ plus a JSON sidecar carrying annotations.
pub fn save_mesh(mesh: &GarmentMesh, obj_path: &Path) -> Result<()> {
    use std::io::Write;
    let mut obj = String::new();
    for v in &mesh.vertices {
        obj.push_str(&format!("v {:.17e} {:.17e} {:.17e}\n", v.x, v.y, v.z));
    }
    for f in &mesh.faces {
        obj.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    let mut file = std::fs::File::create(obj_path)?;
    file.write_all(obj.as_bytes())?;

    let sidecar = SidecarData {
        thickness: mesh.thickness,
        regions: mesh.regions.iter().map(|r| *r as u8).collect(),
        loops: mesh.loops.clone(),
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    std::fs::write(sidecar_path(obj_path), json)?;
    Ok(())
}

/// Load a mesh written by [`save_mesh`]. Rest data is recomputed.
pub fn load_mesh(obj_path: &Path) -> Result<GarmentMesh> {
    let text = std::fs::read_to_string(obj_path)?;
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut read = || -> Result<Real> {
                    it.next()
                        .ok_or_else(|| Error::Topology(format!("short vertex line {ln}")))?
                        .parse::<Real>()
                        .map_err(|e| Error::Topology(format!("bad vertex on line {ln}: {e}")))
                };
                let (x, y, z) = (read()?, read()?, read()?);
                vertices.push(Vec3::new(x, y, z));
            }
            Some("f") => {
                let mut read = || -> Result<u32> {
                    let tok = it
                        .next()
                        .ok_or_else(|| Error::Topology(format!("short face line {ln}")))?;
                    let idx: i64 = tok
                        .split('/')
                        .next()
                        .unwrap_or("")
                        .parse()
                        .map_err(|e| Error::Topology(format!("bad face on line {ln}: {e}")))?;
                    Ok((idx - 1) as u32)
                };
                faces.push([read()?, read()?, read()?]);
            }
            _ => {}
        }
    }
    let sidecar: SidecarData = serde_json::from_str(&std::fs::read_to_string(sidecar_path(
        obj_path,
    ))?)?;
    if sidecar.regions.len() != vertices.len() {
        return Err(Error::Topology(format!(
            "sidecar labels {} vertices, OBJ has {}",
            sidecar.regions.len(),
            vertices.len()
        )));
    }
    let regions = sidecar
        .regions
        .iter()
        .map(|&r| match r {
            1 => Region::CollarPart,
            2 => Region::HemPart,
            _ => Region::Body,
        })
        .collect();
    let (rest_metric, rest_area) = rest_data(&vertices, &faces)?;
    Ok(GarmentMesh {
        vertices,
        faces,
        rest_metric,
        rest_area,
        regions,
        loops: sidecar.loops,
        thickness: sidecar.thickness,
    })
}

fn sidecar_path(obj_path: &Path) -> std::path::PathBuf {
    obj_path.with_extension("meta.json")
}

#[derive(Serialize, Deserialize)]
struct SidecarData {
    thickness: Real,
    regions: Vec<u8>,
    loops: BoundaryLoops,
}
