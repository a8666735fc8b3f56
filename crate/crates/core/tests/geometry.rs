use haptiforge::geometry::io::{landmarks_to_json, load_landmarks, load_mesh, mesh_to_obj, parse_landmarks, parse_mesh};
use haptiforge::geometry::*;
use haptiforge::synthetic::{canonical_hand, hand_mesh, random_hand};
use nalgebra::{DMatrix, Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Total-least-squares normal: right singular vector of the centered
/// point matrix with the smallest singular value.
fn svd_normal(points: &[Vector3<f64>]) -> Vector3<f64> {
    let n = points.len();
    let c = points.iter().sum::<Vector3<f64>>() / n as f64;
    let m = DMatrix::from_fn(n, 3, |i, j| points[i][j] - c[j]);
    let svd = m.svd(false, true);
    let vt = svd.v_t.unwrap();
    let k = (0..3).min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b])).unwrap();
    Vector3::new(vt[(k, 0)], vt[(k, 1)], vt[(k, 2)])
}

fn angle_between_lines(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b).abs())
}

fn near_planar(rng: &mut impl Rng) -> LandmarkSet {
    let normal = Unit::new_normalize(Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let u = Unit::new_normalize(normal.cross(&Vector3::new(0.3, -0.5, 0.8)));
    let v = normal.cross(&u);
    let center = Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
    let pts: Vec<Vector3<f64>> = (0..LANDMARK_COUNT)
        .map(|_| {
            center
                + u.into_inner() * rng.random_range(-6.0..6.0)
                + v * rng.random_range(-4.0..4.0)
                + normal.into_inner() * rng.random_range(-0.1..0.1)
        })
        .collect();
    LandmarkSet::new(&pts).unwrap()
}

#[test]
fn coplanar_points_give_z_normal() {
    let pts: Vec<[f64; 3]> = (0..21).map(|i| [(i % 5) as f64 * 1.3, (i / 5) as f64 * 0.7 + (i % 2) as f64 * 0.1, 0.0]).collect();
    let plane = fit_plane(&LandmarkSet::from_arrays(&pts).unwrap()).unwrap();
    assert!((plane.normal - Vector3::z()).norm() < 1e-12);
    let moved: Vec<[f64; 3]> = pts.iter().map(|p| [p[0] + 1.0, p[1] + 2.0, p[2] + 3.0]).collect();
    let shifted = fit_plane(&LandmarkSet::from_arrays(&moved).unwrap()).unwrap();
    assert!((shifted.normal - plane.normal).norm() < 1e-12);
    assert!((shifted.centroid - plane.centroid - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
}

#[test]
fn plane_fit_matches_svd_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..200 {
        let lm = near_planar(&mut rng);
        let plane = fit_plane(&lm).unwrap();
        let oracle = svd_normal(lm.points());
        assert!(angle_between_lines(&plane.normal, &oracle) < 1e-9);
        assert!((plane.normal.norm() - 1.0).abs() < 1e-12);
        assert!((plane.normal.dot(&plane.centroid) + plane.offset).abs() < 1e-9);
        let centroid = lm.points().iter().sum::<Vector3<f64>>() / 21.0;
        assert!((plane.centroid - centroid).norm() < 1e-12);
        let big = plane.normal.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap();
        assert!(big > 0.0);
    }
}

#[test]
fn collinear_points_are_degenerate() {
    let pts: Vec<[f64; 3]> = (0..21).map(|i| [i as f64, 2.0 * i as f64, -(i as f64)]).collect();
    assert_eq!(fit_plane(&LandmarkSet::from_arrays(&pts).unwrap()).unwrap_err().kind(), "DegenerateInput");
}

#[test]
fn bad_landmark_inputs() {
    let twenty: Vec<[f64; 3]> = (0..20).map(|i| [i as f64, 0.0, 0.0]).collect();
    let err = LandmarkSet::from_arrays(&twenty).unwrap_err();
    assert!(err.to_string().contains("exactly 21 points required"));
    let mut pts: Vec<[f64; 3]> = (0..21).map(|i| [i as f64, (i * i) as f64, 0.0]).collect();
    pts[4][2] = f64::NAN;
    assert_eq!(LandmarkSet::from_arrays(&pts).unwrap_err().kind(), "NonFinite");
    pts[4] = pts[3];
    assert_eq!(LandmarkSet::from_arrays(&pts).unwrap_err().kind(), "CoincidentPoints");
}

#[test]
fn analytic_projection() {
    let plane = Plane::through(Vector3::z(), Vector3::zeros()).unwrap();
    assert!((plane.project(&Vector3::new(0.0, 0.0, 1.0))).norm() < 1e-15);
    let on = Vector3::new(2.0, -1.0, 0.0);
    assert_eq!(plane.project(&on), on);
}

#[test]
fn mesh_projection_lands_on_plane_and_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..20 {
        let lm = random_hand(&mut rng, Handedness::Right);
        let mesh = hand_mesh(&lm, seed);
        let plane = fit_plane(&lm).unwrap();
        let once = project_vertices(&mesh, &plane).unwrap();
        assert_eq!(once.vertices().len(), MESH_VERTEX_COUNT);
        assert_eq!(once.faces(), mesh.faces());
        for v in once.vertices() {
            assert!(plane.normal.dot(&(v - plane.centroid)).abs() < 1e-9);
        }
        let twice = project_vertices(&once, &plane).unwrap();
        for (a, b) in once.vertices().iter().zip(twice.vertices()) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}

#[test]
fn flattening_is_an_isometry() {
    let lm = canonical_hand();
    let plane = fit_plane(&lm).unwrap();
    let mesh = project_vertices(&hand_mesh(&lm, 3), &plane).unwrap();
    let flat = flatten_to_2d(&mesh, &plane, &lm).unwrap();
    let v3 = mesh.vertices();
    for i in (0..v3.len()).step_by(7) {
        for j in (i + 1..v3.len()).step_by(5) {
            let d3 = (v3[i] - v3[j]).norm();
            let d2 = (flat.vertices[i] - flat.vertices[j]).norm();
            assert!((d3 - d2).abs() < 1e-9);
        }
    }
    // The x-axis is parallel to palm root -> middle root, so both images
    // share one y.
    let root = flat.landmarks[PALM_ROOT];
    let middle = flat.landmarks[Finger::Middle.root()];
    assert!((middle.y - root.y).abs() < 1e-9);
}

#[test]
fn flatten_rejects_unprojected_mesh() {
    let lm = canonical_hand();
    let plane = fit_plane(&lm).unwrap();
    let err = flatten_to_2d(&hand_mesh(&lm, 3), &plane, &lm).unwrap_err();
    assert_eq!(err.kind(), "OffPlane");
}

#[test]
fn finger_metrics_follow_the_chain() {
    let mut pts = vec![[0.0, 0.0, 0.0]; 21];
    for f in Finger::ALL {
        for (k, idx) in f.chain().into_iter().enumerate() {
            pts[idx] = [(k + 1) as f64, f.index() as f64 * 3.0, 0.0];
        }
    }
    // Put every root exactly 1 cm from the palm root.
    for f in Finger::ALL {
        let y = f.index() as f64 * 3.0;
        let angle = (y / 3.0) * 0.3;
        let root_at = [angle.cos(), angle.sin(), 0.0];
        let shift = [root_at[0] - pts[f.root()][0], root_at[1] - pts[f.root()][1]];
        for idx in f.chain() {
            pts[idx][0] += shift[0];
            pts[idx][1] += shift[1];
        }
    }
    let m = compute_finger_metrics(&LandmarkSet::from_arrays(&pts).unwrap());
    assert_eq!(m.fingers.len(), 5);
    for (f, seg) in Finger::ALL.iter().zip(&m.fingers) {
        assert_eq!(seg.finger, *f);
        for l in seg.lengths() {
            assert!((l - 1.0).abs() < 1e-12);
        }
        assert!((seg.total() - 4.0).abs() < 1e-12);
    }
}

#[test]
fn finger_total_equals_polyline_length() {
    let lm = canonical_hand();
    let m = compute_finger_metrics(&lm);
    for f in Finger::ALL {
        let mut path = vec![lm.point(0)];
        path.extend(f.chain().iter().map(|&i| lm.point(i)));
        let oracle: f64 = path.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        assert!((m.finger(f).total() - oracle).abs() < 1e-12);
    }
}

#[test]
fn fixture_files_load() {
    let lm = load_landmarks(fixture("canonical_landmarks.json")).unwrap();
    let mesh = load_mesh(fixture("canonical_mesh.json")).unwrap();
    assert_eq!(mesh.vertices().len(), MESH_VERTEX_COUNT);
    assert_eq!(mesh.faces().len(), MESH_FACE_COUNT);
    assert_eq!(parse_landmarks(&landmarks_to_json(&lm)).unwrap(), lm);
    let obj = parse_mesh(&mesh_to_obj(&mesh)).unwrap();
    assert_eq!(obj.faces(), mesh.faces());
}

#[test]
fn wrong_mesh_size_is_rejected() {
    let text = r#"{"vertices":[[0,0,0],[1,0,0],[0,1,0]],"faces":[[0,1,2]]}"#;
    assert_eq!(parse_mesh(text).unwrap_err().kind(), "WrongMeshSize");
}

fn rotation_strategy() -> impl Strategy<Value = Rotation3<f64>> {
    (-3.1f64..3.1, -1.5f64..1.5, -3.1f64..3.1).prop_map(|(a, b, c)| Rotation3::from_euler_angles(a, b, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normal_rotates_with_the_points(seed in 0u64..10_000, rot in rotation_strategy()) {
        let lm = near_planar(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = fit_plane(&lm).unwrap().normal;
        let turned = lm.map(|p| rot * p).unwrap();
        let m = fit_plane(&turned).unwrap().normal;
        prop_assert!(angle_between_lines(&(rot * n), &m) < 1e-9);
    }

    #[test]
    fn fitted_plane_beats_random_planes(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lm = near_planar(&mut rng);
        let plane = fit_plane(&lm).unwrap();
        let cost = |n: &Vector3<f64>| lm.points().iter().map(|p| n.dot(&(p - plane.centroid)).powi(2)).sum::<f64>();
        let best = cost(&plane.normal);
        for _ in 0..1000 {
            let n = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if n.norm() < 1e-6 { continue; }
            prop_assert!(best <= cost(&n.normalize()) + 1e-12);
        }
    }

    #[test]
    fn metrics_are_rigid_invariant(seed in 0u64..10_000, rot in rotation_strategy(), t in prop::array::uniform3(-50.0f64..50.0)) {
        let lm = random_hand(&mut ChaCha8Rng::seed_from_u64(seed), Handedness::Right);
        let moved = lm.map(|p| rot * p + Vector3::from(t)).unwrap();
        let (a, b) = (compute_finger_metrics(&lm), compute_finger_metrics(&moved));
        for (x, y) in a.fingers.iter().zip(&b.fingers) {
            for (u, v) in x.lengths().iter().zip(y.lengths()) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }
}
