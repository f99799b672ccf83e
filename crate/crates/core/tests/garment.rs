//! Procedural garment generation: topology invariants, annotation bands,
//! determinism, eversion, and file round trips.

use garmsim::garment::{
    annotate_regions, generate_shirt, load_mesh, place_inside_out, save_mesh, validate_topology,
    GarmentSpec, Region,
};
use garmsim::math::Real;
use proptest::prelude::*;

fn spec_with(seed: u64, body: Real, hem: Real, collar: Real, edge: Real) -> GarmentSpec {
    GarmentSpec {
        body_length: body,
        hem_width: hem,
        collar_part_length: collar,
        collar_part_width: 0.07,
        front_neck_drop: 0.045,
        target_edge_length: edge,
        thickness: 2.0e-4,
        seed,
    }
}

#[test]
fn nominal_shirt_topology() {
    let mesh = generate_shirt(&GarmentSpec::default()).unwrap();
    let report = validate_topology(&mesh).unwrap();
    assert_eq!(
        report.boundary_loops.len(),
        4,
        "hem, collar, two armholes"
    );
    // Disk with 4 boundary loops: V - E + F = 2 - loops - 2*genus, genus 0.
    assert_eq!(report.euler_characteristic, 2 - 4);
    assert!(report.min_edge > 0.0);
    assert!(report.max_edge < 4.0 * GarmentSpec::default().target_edge_length);

    // The recorded loops match the audit's loops as sets.
    let mut audit: Vec<usize> = report.boundary_loops.iter().map(|l| l.len()).collect();
    audit.sort_unstable();
    let mut named = vec![
        mesh.loops.hem.len(),
        mesh.loops.collar.len(),
        mesh.loops.armhole_left.len(),
        mesh.loops.armhole_right.len(),
    ];
    named.sort_unstable();
    assert_eq!(audit, named);
}

#[test]
fn generation_is_deterministic() {
    let spec = GarmentSpec::default();
    let a = generate_shirt(&spec).unwrap();
    let b = generate_shirt(&spec).unwrap();
    assert_eq!(a.faces, b.faces);
    assert_eq!(a.vertices.len(), b.vertices.len());
    for (p, q) in a.vertices.iter().zip(&b.vertices) {
        for k in 0..3 {
            assert_eq!(p[k].to_bits(), q[k].to_bits(), "vertex bits differ");
        }
    }
}

#[test]
fn regions_form_bands_touching_their_loops() {
    let spec = GarmentSpec::default();
    let mesh = generate_shirt(&spec).unwrap();
    let regions = annotate_regions(
        &mesh.vertices,
        &mesh.faces,
        &mesh.loops,
        spec.collar_part_width,
        spec.collar_part_width,
    )
    .unwrap();
    assert_eq!(regions.len(), mesh.vertices.len());
    let count = |r: Region| regions.iter().filter(|&&x| x == r).count();
    let hem = count(Region::HemPart);
    let collar = count(Region::CollarPart);
    let body = count(Region::Body);
    assert!(hem > 0 && collar > 0 && body > 0);
    assert!(
        body > hem && body > collar,
        "bands must be narrow relative to the body ({body} body, {hem} hem, {collar} collar)"
    );
    // Every hem-loop vertex is in the hem band; same for the collar.
    for &v in &mesh.loops.hem {
        assert_eq!(regions[v as usize], Region::HemPart);
    }
    for &v in &mesh.loops.collar {
        assert_eq!(regions[v as usize], Region::CollarPart);
    }
}

#[test]
fn eversion_flips_every_face_and_preserves_geometry() {
    let mut mesh = generate_shirt(&GarmentSpec::default()).unwrap();
    let before_nrm: Vec<_> = (0..mesh.faces.len()).map(|f| mesh.face_normal(f)).collect();
    let before_v = mesh.vertices.clone();
    mesh.evert().unwrap();
    assert_eq!(mesh.vertices, before_v, "eversion must not move vertices");
    for (f, n0) in before_nrm.iter().enumerate() {
        let n1 = mesh.face_normal(f);
        assert!(
            (n1 + n0).norm() < 1e-12 * n0.norm().max(1e-30),
            "face {f} normal must flip exactly"
        );
    }
    validate_topology(&mesh).unwrap();
}

#[test]
fn inside_out_placement_is_seeded_and_on_table() {
    let mesh = generate_shirt(&GarmentSpec::default()).unwrap();
    let a = place_inside_out(&mesh, 0.03, 0.35, 42).unwrap();
    let b = place_inside_out(&mesh, 0.03, 0.35, 42).unwrap();
    let c = place_inside_out(&mesh, 0.03, 0.35, 43).unwrap();
    for (p, q) in a.vertices.iter().zip(&b.vertices) {
        for k in 0..3 {
            assert_eq!(p[k].to_bits(), q[k].to_bits());
        }
    }
    let moved = a
        .vertices
        .iter()
        .zip(&c.vertices)
        .any(|(p, q)| (p - q).norm() > 1e-9);
    assert!(moved, "different seeds must place differently");
    let zmin = a.vertices.iter().map(|p| p.z).fold(Real::INFINITY, Real::min);
    assert!(zmin >= 0.03, "placement must rest above the table");
}

#[test]
fn mesh_file_round_trip_preserves_everything_relevant() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("shirt.obj");
    let mesh = generate_shirt(&GarmentSpec::default()).unwrap();
    save_mesh(&mesh, &path).unwrap();
    let loaded = load_mesh(&path).unwrap();
    assert_eq!(loaded.faces, mesh.faces);
    assert_eq!(loaded.regions, mesh.regions);
    assert_eq!(loaded.loops.hem, mesh.loops.hem);
    assert_eq!(loaded.loops.collar, mesh.loops.collar);
    assert_eq!(loaded.thickness, mesh.thickness);
    for (p, q) in mesh.vertices.iter().zip(&loaded.vertices) {
        assert!((p - q).norm() <= 1e-15, "vertex drift through OBJ");
    }
    // Rest data is recomputed, not copied: must match.
    for (a, b) in mesh.rest_area.iter().zip(&loaded.rest_area) {
        assert!((a - b).abs() <= 1e-12 * a.max(1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Any spec in the sampling ranges yields a manifold 4-loop mesh whose
    /// edge lengths track the target resolution.
    #[test]
    fn sampled_specs_generate_valid_meshes(
        seed in 0u64..1000,
        body in 0.50f64..0.72,
        hem in 0.42f64..0.58,
        collar in 0.18f64..0.26,
    ) {
        let spec = spec_with(seed, body, hem, collar, 0.02);
        let mesh = generate_shirt(&spec).unwrap();
        let report = validate_topology(&mesh).unwrap();
        prop_assert_eq!(report.boundary_loops.len(), 4);
        prop_assert_eq!(report.euler_characteristic, -2);
        prop_assert!(report.min_edge > 0.2 * spec.target_edge_length);
        // Curved cuts at extreme proportions leave a few long boundary
        // edges; the stability-relevant floor is the min-edge bound above.
        prop_assert!(report.max_edge < 8.0 * spec.target_edge_length);
        prop_assert!(!mesh.loops.hem.is_empty());
        prop_assert!(!mesh.loops.collar.is_empty());
    }
}
