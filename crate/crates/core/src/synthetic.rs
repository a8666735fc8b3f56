//! Synthetic hands for tests, examples and the bundled fixtures.
//!
//! Hands are drawn in the layout frame first (palm root at the origin,
//! fingers toward +x, thumb toward +y) and then embedded in 3D with a mild
//! bend of the palm, an optional rigid pose and optional mirroring.

use std::f64::consts::{PI, TAU};

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{fit_plane, plane_frame, Finger, HandMesh, Handedness, LandmarkSet, PlaneFrame, LANDMARK_COUNT};
use crate::layout::{CanonicalHand, Point2};

/// One finger as root position, direction and three phalanx lengths; the
/// two bends (radians) turn the chain at the inner joints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerShape {
    pub root: Point2,
    pub angle: f64,
    pub segments: [f64; 3],
    pub bends: [f64; 2],
}

impl FingerShape {
    fn straight(root: Point2, degrees: f64, segments: [f64; 3]) -> Self {
        Self {
            root,
            angle: degrees.to_radians(),
            segments,
            bends: [0.0, 0.0],
        }
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().sum()
    }

    fn chain(&self) -> [Point2; 4] {
        let mut pts = [self.root; 4];
        let mut angle = self.angle;
        for k in 0..3 {
            if k > 0 {
                angle += self.bends[k - 1];
            }
            pts[k + 1] = pts[k] + Point2::new(angle.cos(), angle.sin()) * self.segments[k];
        }
        pts
    }
}

/// Five fingers, thumb first, with the palm root at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandShape {
    pub fingers: [FingerShape; 5],
}

impl HandShape {
    pub fn landmarks_2d(&self) -> [Point2; LANDMARK_COUNT] {
        let mut out = [Point2::zeros(); LANDMARK_COUNT];
        for f in Finger::ALL {
            for (slot, p) in f.chain().into_iter().zip(self.fingers[f.index()].chain()) {
                out[slot] = p;
            }
        }
        out
    }

    /// Embeds the drawing in 3D: the palm is bent slightly around the
    /// finger axis and the finger chains are lifted a little.
    pub fn embed(&self, pose: &Rotation3<f64>, offset: Vector3<f64>, handedness: Handedness) -> LandmarkSet {
        let side = if handedness == Handedness::Left { -1.0 } else { 1.0 };
        let points: Vec<Vector3<f64>> = self
            .landmarks_2d()
            .iter()
            .map(|p| {
                let z = 0.04 * p.y * p.y + 0.12 * (0.5 * p.x).sin();
                pose * Vector3::new(p.x, side * p.y, z) + offset
            })
            .collect();
        LandmarkSet::new(&points).expect("synthetic landmarks are valid")
    }
}

pub fn canonical_shape() -> HandShape {
    HandShape {
        fingers: [
            FingerShape::straight(Point2::new(2.0, 1.5), 45.0, [3.0, 2.2, 1.8]),
            FingerShape::straight(Point2::new(8.4, 2.6), 8.0, [3.2, 2.2, 1.9]),
            FingerShape::straight(Point2::new(8.9, 0.8), 1.0, [3.5, 2.5, 2.0]),
            FingerShape::straight(Point2::new(8.6, -1.0), -6.0, [3.3, 2.3, 1.9]),
            FingerShape::straight(Point2::new(7.9, -2.7), -14.0, [2.6, 1.8, 1.7]),
        ],
    }
}

/// The reference right hand used by the bundled fixture.
pub fn canonical_hand() -> LandmarkSet {
    let pose = Rotation3::from_euler_angles(0.35, -0.2, 0.6);
    canonical_shape().embed(&pose, Vector3::new(1.5, -2.0, 30.0), Handedness::Right)
}

/// The reference hand directly in the layout frame, without a mesh.
pub fn canonical_flat_hand() -> CanonicalHand {
    CanonicalHand::from_points(canonical_shape().landmarks_2d())
}

/// Five straight parallel fingers whose roots are `spacing` apart, the
/// thumb included, so every finger gets the same width.
pub fn parallel_hand(spacing: f64) -> CanonicalHand {
    let lengths = [[2.7, 1.8, 1.5], [3.2, 2.1, 1.7], [3.5, 2.3, 1.8], [3.2, 2.1, 1.7], [2.6, 1.7, 1.4]];
    let mut fingers = [FingerShape::straight(Point2::zeros(), 0.0, [1.0; 3]); 5];
    for f in Finger::ALL {
        let y = (1.5 - f.index() as f64 + 1.0) * spacing;
        fingers[f.index()] = FingerShape::straight(Point2::new(8.0, y), 0.0, lengths[f.index()]);
    }
    CanonicalHand::from_points(HandShape { fingers }.landmarks_2d())
}

/// Random hand with finger lengths in 4–9 cm and modest splay, drawn in
/// the layout frame.
pub fn random_shape(rng: &mut impl Rng) -> HandShape {
    let scale = rng.random_range(0.85..1.15);
    let jitter = |rng: &mut dyn rand::RngCore, p: Point2| {
        p * scale + Point2::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15))
    };
    let base = canonical_shape();
    let splay = [(45.0, 10.0), (9.0, 5.0), (1.0, 4.0), (-6.0, 4.0), (-15.0, 5.0)];
    let mut fingers = base.fingers;
    for (k, finger) in fingers.iter_mut().enumerate() {
        let length = rng.random_range(4.0..9.0);
        let split = [
            rng.random_range(0.40..0.48),
            rng.random_range(0.28..0.32),
        ];
        let segments = [length * split[0], length * split[1], length * (1.0 - split[0] - split[1])];
        let (mean, spread): (f64, f64) = splay[k];
        *finger = FingerShape {
            root: jitter(rng, base.fingers[k].root),
            angle: (mean + rng.random_range(-spread..spread)).to_radians(),
            segments,
            bends: [rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03)],
        };
    }
    HandShape { fingers }
}

/// A plausible hand in a random rigid pose. Left hands are mirror images.
pub fn random_hand(rng: &mut impl Rng, handedness: Handedness) -> LandmarkSet {
    let shape = random_shape(rng);
    let pose = Rotation3::from_euler_angles(
        rng.random_range(-PI..PI),
        rng.random_range(-PI / 2.0..PI / 2.0),
        rng.random_range(-PI..PI),
    );
    let offset = Vector3::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
    let clean = shape.embed(&pose, offset, handedness);
    let noisy: Vec<Vector3<f64>> = clean
        .points()
        .iter()
        .map(|p| p + Vector3::new(rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02)))
        .collect();
    LandmarkSet::new(&noisy).expect("small noise keeps the hand valid")
}

/// Sizes of the vertex rings of the synthetic mesh, inside out. With one
/// apex vertex and a 16-vertex opening this gives 778 vertices and 1538
/// triangles.
const RING_SIZES: [usize; 27] = [
    8, 14, 20, 26, 29, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 32, 24, 16,
];

/// A closed-sleeve surface around the hand, open at the wrist. The apex sits
/// past the fingertips; the opening lies 1 cm below the palm root.
pub fn hand_mesh(landmarks: &LandmarkSet, seed: u64) -> HandMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frame = fit_plane(landmarks)
        .and_then(|plane| plane_frame(&plane, landmarks))
        .unwrap_or(PlaneFrame {
            origin: Vector3::zeros(),
            x_axis: Vector3::x(),
            y_axis: Vector3::y(),
            normal: Vector3::z(),
        });
    let flat: Vec<Point2> = landmarks.points().iter().map(|p| frame.to_2d(p)).collect();
    let root = flat[0];
    let top = flat.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max) + 0.3;
    let bottom = root.x - 1.0;
    let (lo, hi) = flat.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y), hi.max(p.y)));
    let center_y = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0 + 0.3;

    let lift = |x: f64, y: f64, z: f64| frame.origin + frame.x_axis * x + frame.y_axis * y + frame.normal * z;
    let mut vertices = vec![lift(top, center_y, 0.0)];
    let rings = RING_SIZES.len();
    for (k, &n) in RING_SIZES.iter().enumerate() {
        let t = (k + 1) as f64 / rings as f64;
        let x = top - t * (top - bottom);
        let width = half * t.sqrt();
        let thickness = 1.2 * t.sqrt();
        for j in 0..n {
            let phi = TAU * (j as f64 + 0.5 * (k % 2) as f64) / n as f64;
            let wobble = rng.random_range(-0.02..0.02);
            vertices.push(lift(x, center_y + width * phi.cos(), thickness * phi.sin() + wobble));
        }
    }

    let mut faces = Vec::new();
    let mut start = 1;
    for j in 0..RING_SIZES[0] {
        faces.push([0, start + j, start + (j + 1) % RING_SIZES[0]]);
    }
    for k in 0..rings - 1 {
        let (a, b) = (RING_SIZES[k], RING_SIZES[k + 1]);
        let next = start + a;
        let (mut i, mut j) = (0, 0);
        while i < a || j < b {
            let advance_inner = j == b || (i < a && (i + 1) as f64 / a as f64 <= (j + 1) as f64 / b as f64);
            if advance_inner {
                faces.push([start + i % a, start + (i + 1) % a, next + j % b]);
                i += 1;
            } else {
                faces.push([start + i % a, next + (j + 1) % b, next + j % b]);
                j += 1;
            }
        }
        start = next;
    }
    HandMesh::new(vertices, faces).expect("ring mesh has the reference size")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{MESH_FACE_COUNT, MESH_VERTEX_COUNT};

    #[test]
    fn mesh_has_reference_size_and_disc_topology() {
        let mesh = hand_mesh(&canonical_hand(), 1);
        assert_eq!(mesh.vertices().len(), MESH_VERTEX_COUNT);
        assert_eq!(mesh.faces().len(), MESH_FACE_COUNT);
        // Each interior edge is shared by two faces; only the 16-edge opening
        // is shared by one.
        let mut edges = std::collections::HashMap::new();
        for f in mesh.faces() {
            for k in 0..3 {
                let (a, b) = (f[k].min(f[(k + 1) % 3]), f[k].max(f[(k + 1) % 3]));
                *edges.entry((a, b)).or_insert(0) += 1;
            }
        }
        assert!(edges.values().all(|&c| c == 1 || c == 2));
        assert_eq!(edges.values().filter(|&&c| c == 1).count(), 16);
    }

    #[test]
    fn random_hands_respect_length_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let shape = random_shape(&mut rng);
            for f in &shape.fingers {
                assert!((4.0..9.0).contains(&f.length()));
            }
        }
    }
}
