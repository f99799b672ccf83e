//! Geometry acceleration structures against brute-force oracles.

use garmsim::geom::{self, Aabb, Bvh};
use garmsim::math::{Real, Vec3};
use rand::Rng;

fn rng(name: &str) -> rand_chacha::ChaCha8Rng {
    garmsim::rng::stream(0x9E0516, name, 0)
}

/// A "crumpled" triangle soup: a jittered grid sheet folded through random
/// creases so plenty of non-adjacent faces intersect.
fn crumpled_mesh(rng: &mut impl Rng, cols: usize, rows: usize) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let mut vertices = Vec::with_capacity((cols + 1) * (rows + 1));
    for j in 0..=rows {
        for i in 0..=cols {
            vertices.push(Vec3::new(
                i as Real * 0.05 + rng.gen_range(-0.01..0.01),
                j as Real * 0.05 + rng.gen_range(-0.01..0.01),
                rng.gen_range(-0.012..0.012),
            ));
        }
    }
    // Fold: reflect a random half-space band onto the sheet.
    for _ in 0..3 {
        let c = Vec3::new(
            rng.gen_range(0.0..cols as Real * 0.05),
            rng.gen_range(0.0..rows as Real * 0.05),
            0.0,
        );
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let n = Vec3::new(theta.cos(), theta.sin(), 0.0);
        for v in vertices.iter_mut() {
            let d = (*v - c).dot(&n);
            if d > 0.0 {
                *v -= 2.0 * d * n;
                v.z += rng.gen_range(0.0..0.01);
            }
        }
    }
    let mut faces = Vec::new();
    let idx = |i: usize, j: usize| (j * (cols + 1) + i) as u32;
    for j in 0..rows {
        for i in 0..cols {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    (vertices, faces)
}

fn tri_of(vertices: &[Vec3], f: &[u32; 3]) -> [Vec3; 3] {
    [
        vertices[f[0] as usize],
        vertices[f[1] as usize],
        vertices[f[2] as usize],
    ]
}

fn brute_force_pairs(vertices: &[Vec3], faces: &[[u32; 3]]) -> Vec<(u32, u32)> {
    let mut pairs = Vec::new();
    for a in 0..faces.len() {
        for b in (a + 1)..faces.len() {
            if faces[a].iter().any(|v| faces[b].contains(v)) {
                continue;
            }
            if geom::tri_tri_intersect(&tri_of(vertices, &faces[a]), &tri_of(vertices, &faces[b]))
            {
                pairs.push((a as u32, b as u32));
            }
        }
    }
    pairs
}

#[test]
fn bvh_intersection_scan_matches_brute_force_on_crumpled_meshes() {
    let mut rng = rng("crumple");
    let mut nonzero = 0;
    for case in 0..20 {
        let cols = rng.gen_range(8..21);
        let rows = rng.gen_range(8..21);
        let (vertices, faces) = crumpled_mesh(&mut rng, cols, rows);
        assert!(faces.len() <= 1000, "case {case}: mesh too big");
        let mut expected = brute_force_pairs(&vertices, &faces);
        expected.sort_unstable();
        let mut got = geom::self_intersections(&vertices, &faces).pairs;
        got.sort_unstable();
        assert_eq!(
            got, expected,
            "case {case}: BVH scan disagrees with brute force ({} vs {} pairs)",
            got.len(),
            expected.len()
        );
        if !expected.is_empty() {
            nonzero += 1;
        }
    }
    assert!(
        nonzero >= 10,
        "folding must actually produce intersections (got {nonzero}/20 nonzero cases)"
    );
}

#[test]
fn bvh_ray_hits_match_brute_force() {
    let mut rng = rng("rays");
    let (vertices, faces) = crumpled_mesh(&mut rng, 12, 12);
    let tris: Vec<[Vec3; 3]> = faces.iter().map(|f| tri_of(&vertices, f)).collect();
    let boxes: Vec<Aabb> = tris.iter().map(|t| Aabb::of_points(t)).collect();
    let bvh = Bvh::build(&boxes);
    for _ in 0..500 {
        let orig = Vec3::new(
            rng.gen_range(-0.1..0.8),
            rng.gen_range(-0.1..0.8),
            rng.gen_range(0.5..1.0),
        );
        let dir = Vec3::new(
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            -1.0,
        )
        .normalize();
        let mut hits = bvh.ray_hits(&tris, orig, dir, 0.0);
        hits.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
        let mut brute: Vec<(Real, u32)> = Vec::new();
        for (fi, tri) in tris.iter().enumerate() {
            if let Some((t, _, _)) = geom::ray_triangle(orig, dir, tri, 0.0) {
                brute.push((t, fi as u32));
            }
        }
        brute.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        assert_eq!(hits.len(), brute.len(), "hit count mismatch");
        for (h, (t, fi)) in hits.iter().zip(&brute) {
            assert_eq!(h.face, *fi, "hit order mismatch");
            assert!((h.t - t).abs() < 1e-12);
        }
        let first = bvh.first_hit(&tris, orig, dir, 0.0);
        assert_eq!(first.map(|h| h.face), brute.first().map(|b| b.1));
    }
}

#[test]
fn bvh_overlap_query_matches_brute_force() {
    let mut rng = rng("overlap");
    let (vertices, faces) = crumpled_mesh(&mut rng, 10, 10);
    let boxes: Vec<Aabb> = faces
        .iter()
        .map(|f| Aabb::of_points(&tri_of(&vertices, f)))
        .collect();
    let bvh = Bvh::build(&boxes);
    let mut out = Vec::new();
    for _ in 0..200 {
        let c = Vec3::new(
            rng.gen_range(-0.1..0.7),
            rng.gen_range(-0.1..0.7),
            rng.gen_range(-0.1..0.1),
        );
        let half = Vec3::new(
            rng.gen_range(0.01..0.2),
            rng.gen_range(0.01..0.2),
            rng.gen_range(0.01..0.2),
        );
        let query = Aabb {
            min: c - half,
            max: c + half,
        };
        out.clear();
        bvh.overlapping(&query, &mut out);
        out.sort_unstable();
        out.dedup();
        // Broad phase: every truly overlapping box must be reported (callers
        // re-check candidate boxes themselves).
        for i in 0..faces.len() as u32 {
            if boxes[i as usize].overlaps(&query) {
                assert!(
                    out.binary_search(&i).is_ok(),
                    "broad phase missed overlapping primitive {i}"
                );
            }
        }
    }
}
