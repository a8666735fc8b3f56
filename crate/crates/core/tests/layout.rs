use haptiforge::geometry::io::{load_landmarks, load_mesh};
use haptiforge::geometry::{Finger, Handedness, LandmarkSet};
use haptiforge::layout::export::{layout_from_json, layout_to_json, layout_to_svg};
use haptiforge::layout::*;
use haptiforge::synthetic::{canonical_hand, hand_mesh, random_hand};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type P = Point2;

fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn orient(a: &P, b: &P, c: &P) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: &P, b: &P, p: &P) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection by orientation tests, touching included.
fn touch(a: &P, b: &P, c: &P, d: &P) -> bool {
    let (o1, o2, o3, o4) = (orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b));
    if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c)) || (o2 == 0.0 && on_segment(a, b, d)) || (o3 == 0.0 && on_segment(c, d, a)) || (o4 == 0.0 && on_segment(c, d, b))
}

fn crossings(routes: &[TraceRoute]) -> usize {
    let mut n = 0;
    for i in 0..routes.len() {
        for j in i + 1..routes.len() {
            for a in routes[i].points.windows(2) {
                for b in routes[j].points.windows(2) {
                    if touch(&a[0], &a[1], &b[0], &b[1]) {
                        n += 1;
                    }
                }
            }
        }
    }
    n
}

fn ray_inside(p: &P, poly: &[P]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for k in 0..n {
        let (a, b) = (poly[k], poly[(k + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) && p.x < a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x) {
            inside = !inside;
        }
    }
    inside
}

fn dist_to_segment(p: &P, a: &P, b: &P) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Checks everything the layout promises, with test-local geometry.
fn assert_valid(d: &LayoutDesign) {
    let p = &d.metadata.params;
    assert_eq!(d.sites.len(), 16);
    assert_eq!(d.sites.iter().filter(|s| s.role == ElectrodeRole::Stimulation).count(), 15);
    let vgnd: Vec<_> = d.sites.iter().filter(|s| s.role == ElectrodeRole::Vgnd).collect();
    assert_eq!(vgnd.len(), 1);
    assert_eq!(vgnd[0].id, 15);
    assert_eq!(crossings(&d.routes), 0);

    let poly = d.contour.flatten(p.arc_tolerance);
    let n = poly.len();
    // Closed, counter-clockwise, simple.
    let first = d.contour.segments[0].start();
    assert!((d.contour.segments.last().unwrap().end() - first).norm() < 1e-6);
    let area: f64 = (0..n).map(|k| poly[k].x * poly[(k + 1) % n].y - poly[(k + 1) % n].x * poly[k].y).sum::<f64>() / 2.0;
    assert!(area > 0.0);
    for i in 0..n {
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            assert!(!touch(&poly[i], &poly[(i + 1) % n], &poly[j], &poly[(j + 1) % n]), "outline self-intersects at edges {i}, {j}");
        }
    }
    let edge_distance = |q: &P| (0..n).map(|k| dist_to_segment(q, &poly[k], &poly[(k + 1) % n])).fold(f64::INFINITY, f64::min);

    for s in &d.sites {
        assert!(ray_inside(&s.center, &poly));
        assert!(edge_distance(&s.center) >= s.diameter / 2.0 + p.site_clearance - 1e-9 - p.arc_tolerance);
    }
    for r in &d.routes {
        let site = d.sites.iter().find(|s| s.id == r.electrode).unwrap();
        assert_eq!(r.points[0], site.center);
        assert_eq!(*r.points.last().unwrap(), d.connector.pins[r.pin]);
        for q in &r.points {
            assert!(ray_inside(q, &poly), "trace {} leaves the outline", r.electrode);
        }
        for w in r.points.windows(2) {
            // Sample each segment: stays inside with the route clearance.
            for k in 0..=20 {
                let q = w[0] + (w[1] - w[0]) * (k as f64 / 20.0);
                assert!(ray_inside(&q, &poly));
                assert!(edge_distance(&q) >= p.route_clearance + r.width / 2.0 - 1e-6);
            }
            for other in d.sites.iter().filter(|s| s.id != r.electrode) {
                assert!(dist_to_segment(&other.center, &w[0], &w[1]) >= other.diameter / 2.0, "trace {} crosses disc {}", r.electrode, other.id);
            }
        }
    }
    let mut pins: Vec<usize> = d.routes.iter().map(|r| r.pin).collect();
    pins.sort_unstable();
    pins.dedup();
    assert_eq!(pins.len(), 16);
    for w in d.connector.pins.windows(2) {
        assert!((w[1] - w[0]).norm() >= 0.1 - 1e-12);
    }
    for (i, a) in d.sites.iter().enumerate() {
        for b in &d.sites[i + 1..] {
            assert!((a.center - b.center).norm() >= (a.diameter + b.diameter) / 2.0 + p.site_clearance - 1e-9);
        }
    }
}

fn canonical_design() -> LayoutDesign {
    let lm = load_landmarks(fixture("canonical_landmarks.json")).unwrap();
    let mesh = load_mesh(fixture("canonical_mesh.json")).unwrap();
    design_layout(&lm, Some(&mesh), &LayoutParams::default()).unwrap()
}

#[test]
fn oracle_sees_a_crossing() {
    let r = |e: u8, pts: Vec<P>| TraceRoute {
        electrode: e,
        points: pts,
        width: 0.08,
        pin: e as usize,
    };
    let a = r(0, vec![P::new(0.0, 0.0), P::new(1.0, 1.0)]);
    let b = r(1, vec![P::new(0.0, 1.0), P::new(1.0, 0.0)]);
    let c = r(2, vec![P::new(2.0, 0.0), P::new(3.0, 0.0)]);
    assert_eq!(crossings(&[a.clone(), b]), 1);
    assert_eq!(crossings(&[a, c]), 0);
}

#[test]
fn canonical_fixture_layout_is_valid() {
    let d = canonical_design();
    assert_valid(&d);
    assert_eq!(d.route_crossings(), 0);
    assert!(!d.metadata.mirrored);
    assert_eq!(d.metadata.units, "cm");
    assert_eq!(d.metadata.source_sha256.len(), 64);
    // Contour uses both kinds of segment; one arc per fingertip.
    assert_eq!(d.contour.arc_count(), 5);
    assert!(d.contour.segments.iter().any(|s| matches!(s, ContourSegment::Line { .. })));
    // Three stimulation sites per finger, one per finger region.
    for f in Finger::ALL {
        let regions: Vec<Region> = d.sites.iter().filter(|s| s.finger == Some(f)).map(|s| s.region).collect();
        assert_eq!(regions.len(), 3);
        for r in Region::FINGER_REGIONS {
            assert!(regions.contains(&r));
        }
    }
    assert_eq!(d.site(VGND_ID).unwrap().region, Region::Palm);
}

#[test]
fn default_diameter_is_kept_on_the_reference_hand() {
    let d = canonical_design();
    assert!(d.sites.iter().all(|s| (s.diameter - 0.6).abs() < 1e-12));
}

#[test]
fn design_without_mesh_also_works() {
    assert_valid(&design_layout(&canonical_hand(), None, &LayoutParams::default()).unwrap());
}

#[test]
fn generated_hands_give_valid_layouts_or_typed_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut ok, mut reflected) = (0, 0);
    for i in 0..200u64 {
        let hand = if i % 2 == 0 { Handedness::Right } else { Handedness::Left };
        let lm = random_hand(&mut rng, hand);
        match design_layout(&lm, Some(&hand_mesh(&lm, i)), &LayoutParams::default()) {
            Ok(d) => {
                assert_valid(&d);
                reflected += d.metadata.mirrored as usize;
                ok += 1;
            }
            Err(e) => assert!(["DegenerateInput", "PlacementInfeasible", "RoutingInfeasible"].contains(&e.kind()), "{e}"),
        }
    }
    assert!(ok >= 190, "only {ok} of 200 hands produced a layout");
    // The plane normal sign is arbitrary, so both orientations show up.
    assert!(reflected > 0 && reflected < ok);
}

#[test]
fn svg_has_sixteen_electrodes_and_traces() {
    let svg = layout_to_svg(&canonical_design());
    assert!(svg.starts_with("<?xml"));
    assert_eq!(svg.matches("<circle").count(), 16);
    assert_eq!(svg.matches("<polyline").count(), 16);
    assert_eq!(svg.matches("class=\"vgnd\"").count(), 1);
    assert!(svg.contains(" A "));
    assert!(svg.contains("viewBox"));
}

#[test]
fn json_export_round_trips_and_is_deterministic() {
    let a = canonical_design();
    let b = canonical_design();
    let text = layout_to_json(&a);
    assert_eq!(text, layout_to_json(&b));
    assert_eq!(layout_to_svg(&a), layout_to_svg(&b));
    assert!(text.contains("\"schema\": \"layout/1\""));
    assert_eq!(layout_from_json(&text).unwrap(), a);
}

#[test]
fn tampered_json_is_rejected() {
    let d = canonical_design();
    let mut bad = d.clone();
    bad.sites[0].center = P::new(100.0, 100.0);
    assert_eq!(layout_from_json(&layout_to_json(&bad)).unwrap_err().kind(), "InvalidLayout");
    let text = layout_to_json(&d).replace("layout/1", "layout/0");
    assert_eq!(layout_from_json(&text).unwrap_err().kind(), "Parse");
}

#[test]
fn crossed_fingers_are_degenerate() {
    let lm = canonical_hand();
    let mut pts: Vec<_> = lm.points().to_vec();
    // Swap the ring and middle chains.
    for k in 0..4 {
        pts.swap(Finger::Middle.chain()[k], Finger::Ring.chain()[k]);
    }
    let swapped = LandmarkSet::new(&pts).unwrap();
    let err = design_layout(&swapped, None, &LayoutParams::default()).unwrap_err();
    assert_eq!(err.kind(), "DegenerateInput");
}

#[test]
fn tiny_hand_fails_with_typed_error() {
    let lm = canonical_hand().map(|p| p * 0.3).unwrap();
    let err = design_layout(&lm, None, &LayoutParams::default()).unwrap_err();
    assert!(["DegenerateInput", "PlacementInfeasible", "RoutingInfeasible"].contains(&err.kind()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_layouts_never_cross(seed in 0u64..1_000_000, left in any::<bool>()) {
        let hand = if left { Handedness::Left } else { Handedness::Right };
        let lm = random_hand(&mut ChaCha8Rng::seed_from_u64(seed), hand);
        if let Ok(d) = design_layout(&lm, None, &LayoutParams::default()) {
            prop_assert_eq!(crossings(&d.routes), 0);
            assert_valid(&d);
        }
    }
}
