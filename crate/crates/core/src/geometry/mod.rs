//! Palm-plane fitting, mesh projection and in-plane flattening.
//!
//! Landmarks follow a root-first convention: index 0 is the palm root,
//! then four landmarks per finger (thumb, forefinger, middle, ring, pinky),
//! each ordered base to tip. All lengths are centimeters.

mod eigen;
pub mod io;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eigen::{symmetric_eigen3, SymmetricEigen3};

pub const LANDMARK_COUNT: usize = 21;
pub const MESH_VERTEX_COUNT: usize = 778;
pub const MESH_FACE_COUNT: usize = 1538;

/// Index of the palm-root landmark.
pub const PALM_ROOT: usize = 0;

/// Relative gap below which the two smallest covariance eigenvalues are
/// treated as tied and the plane normal as ambiguous.
pub const EIGEN_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("exactly 21 points required, found {0}")]
    WrongPointCount(usize),
    #[error("non-finite coordinate at point {0}")]
    NonFinite(usize),
    #[error("points {0} and {1} coincide")]
    CoincidentPoints(usize, usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("mesh must have {expected_vertices} vertices and {expected_faces} faces, found {vertices} and {faces}")]
    WrongMeshSize {
        expected_vertices: usize,
        expected_faces: usize,
        vertices: usize,
        faces: usize,
    },
    #[error("face {face} references vertex {index} out of range")]
    FaceIndexOutOfRange { face: usize, index: usize },
    #[error("vertex {index} is {distance} cm off the plane")]
    OffPlane { index: usize, distance: f64 },
    #[error("parse error: {0}")]
    Parse(String),
}

impl GeometryError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::WrongPointCount(_) => "WrongPointCount",
            Self::NonFinite(_) => "NonFinite",
            Self::CoincidentPoints(..) => "CoincidentPoints",
            Self::DegenerateInput(_) => "DegenerateInput",
            Self::WrongMeshSize { .. } => "WrongMeshSize",
            Self::FaceIndexOutOfRange { .. } => "FaceIndexOutOfRange",
            Self::OffPlane { .. } => "OffPlane",
            Self::Parse(_) => "Parse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finger {
    Thumb,
    Forefinger,
    Middle,
    Ring,
    Pinky,
}

impl Finger {
    pub const ALL: [Finger; 5] = [
        Finger::Thumb,
        Finger::Forefinger,
        Finger::Middle,
        Finger::Ring,
        Finger::Pinky,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Landmark indices of this finger, base to tip.
    pub fn chain(self) -> [usize; 4] {
        let first = 1 + 4 * self.index();
        [first, first + 1, first + 2, first + 3]
    }

    /// Landmark where the finger meets the palm.
    pub fn root(self) -> usize {
        self.chain()[0]
    }

    pub fn tip(self) -> usize {
        self.chain()[3]
    }

    pub fn name(self) -> &'static str {
        match self {
            Finger::Thumb => "thumb",
            Finger::Forefinger => "forefinger",
            Finger::Middle => "middle",
            Finger::Ring => "ring",
            Finger::Pinky => "pinky",
        }
    }
}

/// The 21 hand-joint positions.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: [Vector3<f64>; LANDMARK_COUNT],
}

impl LandmarkSet {
    pub fn new(points: &[Vector3<f64>]) -> Result<Self, GeometryError> {
        if points.len() != LANDMARK_COUNT {
            return Err(GeometryError::WrongPointCount(points.len()));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(GeometryError::NonFinite(i));
            }
        }
        for i in 0..LANDMARK_COUNT {
            for j in i + 1..LANDMARK_COUNT {
                if (points[i] - points[j]).norm() == 0.0 {
                    return Err(GeometryError::CoincidentPoints(i, j));
                }
            }
        }
        let mut arr = [Vector3::zeros(); LANDMARK_COUNT];
        arr.copy_from_slice(points);
        Ok(Self { points: arr })
    }

    pub fn from_arrays(points: &[[f64; 3]]) -> Result<Self, GeometryError> {
        let v: Vec<_> = points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();
        Self::new(&v)
    }

    pub fn points(&self) -> &[Vector3<f64>; LANDMARK_COUNT] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vector3<f64> {
        self.points[i]
    }

    /// Applies `f` to every point and re-validates.
    pub fn map(&self, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> Result<Self, GeometryError> {
        let v: Vec<_> = self.points.iter().map(|p| f(*p)).collect();
        Self::new(&v)
    }
}

/// Triangle mesh of the hand surface.
#[derive(Debug, Clone, PartialEq)]
pub struct HandMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
}

impl HandMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        if vertices.len() != MESH_VERTEX_COUNT || faces.len() != MESH_FACE_COUNT {
            return Err(GeometryError::WrongMeshSize {
                expected_vertices: MESH_VERTEX_COUNT,
                expected_faces: MESH_FACE_COUNT,
                vertices: vertices.len(),
                faces: faces.len(),
            });
        }
        for (i, v) in vertices.iter().enumerate() {
            if !v.iter().all(|c| c.is_finite()) {
                return Err(GeometryError::NonFinite(i));
            }
        }
        for (fi, f) in faces.iter().enumerate() {
            if let Some(&index) = f.iter().find(|&&i| i >= vertices.len()) {
                return Err(GeometryError::FaceIndexOutOfRange { face: fi, index });
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }
}

/// Plane `normal · p + offset = 0` through `centroid`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub centroid: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    /// Builds a plane from a (not necessarily unit) normal and a point on it.
    pub fn through(normal: Vector3<f64>, centroid: Vector3<f64>) -> Result<Self, GeometryError> {
        let n = normal.norm();
        if !(n.is_finite() && n > 0.0) || !centroid.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::DegenerateInput("plane normal must be non-zero and finite".into()));
        }
        let normal = normal / n;
        Ok(Self {
            normal,
            centroid,
            offset: -normal.dot(&centroid),
        })
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.centroid))
    }

    pub fn project(&self, p: &Vector3<f64>) -> Vector3<f64> {
        p - self.normal * self.signed_distance(p)
    }
}

/// Makes the largest-magnitude component positive.
fn normalize_sign(n: Vector3<f64>) -> Vector3<f64> {
    let k = n.iamax();
    if n[k] < 0.0 {
        -n
    } else {
        n
    }
}

/// Scatter matrix `Σ (p - c)(p - c)ᵀ` of the points about `centroid`.
pub fn scatter_matrix(points: &[Vector3<f64>], centroid: &Vector3<f64>) -> Matrix3<f64> {
    points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - centroid;
        acc + d * d.transpose()
    })
}

/// Total-least-squares plane through the landmarks: the normal is the
/// eigenvector of the scatter matrix with the smallest eigenvalue.
pub fn fit_plane(landmarks: &LandmarkSet) -> Result<Plane, GeometryError> {
    fit_plane_points(landmarks.points())
}

pub(crate) fn fit_plane_points(points: &[Vector3<f64>]) -> Result<Plane, GeometryError> {
    if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(GeometryError::NonFinite(i));
    }
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let eig = symmetric_eigen3(&scatter_matrix(points, &centroid));
    let [l0, l1, l2] = eig.values;
    if !(l2 > 0.0) {
        return Err(GeometryError::DegenerateInput("all points coincide".into()));
    }
    if l1 - l0 <= EIGEN_TIE_TOLERANCE * l2 {
        return Err(GeometryError::DegenerateInput(
            "plane normal is not unique (points are collinear or isotropic)".into(),
        ));
    }
    let normal = normalize_sign(eig.vector(0));
    Ok(Plane {
        normal,
        centroid,
        offset: -normal.dot(&centroid),
    })
}

/// Orthogonal projection of every mesh vertex onto `plane`; faces are kept.
pub fn project_vertices(mesh: &HandMesh, plane: &Plane) -> Result<HandMesh, GeometryError> {
    if !plane.normal.iter().chain(plane.centroid.iter()).all(|c| c.is_finite()) {
        return Err(GeometryError::NonFinite(0));
    }
    let vertices = mesh.vertices.iter().map(|v| plane.project(v)).collect();
    Ok(HandMesh {
        vertices,
        faces: mesh.faces.clone(),
    })
}

/// Right-handed orthonormal frame lying in a plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFrame {
    pub origin: Vector3<f64>,
    pub x_axis: Vector3<f64>,
    pub y_axis: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl PlaneFrame {
    pub fn to_2d(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let d = p - self.origin;
        Vector2::new(d.dot(&self.x_axis), d.dot(&self.y_axis))
    }

    pub fn to_3d(&self, q: &Vector2<f64>) -> Vector3<f64> {
        self.origin + self.x_axis * q.x + self.y_axis * q.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Handedness {
    #[default]
    Right,
    Left,
}

/// The hand flattened into the palm plane.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatHand {
    pub frame: PlaneFrame,
    pub landmarks: [Vector2<f64>; LANDMARK_COUNT],
    pub vertices: Vec<Vector2<f64>>,
}

impl FlatHand {
    /// Reflection `y -> -y`, used for left hands.
    pub fn mirrored(&self) -> FlatHand {
        let flip = |p: &Vector2<f64>| Vector2::new(p.x, -p.y);
        let mut frame = self.frame;
        frame.y_axis = -frame.y_axis;
        frame.normal = -frame.normal;
        FlatHand {
            frame,
            landmarks: self.landmarks.map(|p| flip(&p)),
            vertices: self.vertices.iter().map(flip).collect(),
        }
    }
}

const ON_PLANE_TOLERANCE: f64 = 1e-6;

/// Expresses projected vertices and landmarks in an in-plane frame whose
/// x-axis runs from the palm root toward the middle-finger root.
pub fn flatten_to_2d(
    projected: &HandMesh,
    plane: &Plane,
    landmarks: &LandmarkSet,
) -> Result<FlatHand, GeometryError> {
    for (index, v) in projected.vertices.iter().enumerate() {
        let distance = plane.signed_distance(v).abs();
        if !(distance <= ON_PLANE_TOLERANCE) {
            return Err(GeometryError::OffPlane { index, distance });
        }
    }
    let frame = plane_frame(plane, landmarks)?;
    Ok(FlatHand {
        frame,
        landmarks: landmarks.points().map(|p| frame.to_2d(&p)),
        vertices: projected.vertices.iter().map(|v| frame.to_2d(v)).collect(),
    })
}

pub fn plane_frame(plane: &Plane, landmarks: &LandmarkSet) -> Result<PlaneFrame, GeometryError> {
    let n = plane.normal;
    let axis = landmarks.point(Finger::Middle.root()) - landmarks.point(PALM_ROOT);
    let in_plane = axis - n * n.dot(&axis);
    let len = in_plane.norm();
    if !(len > 1e-9) {
        return Err(GeometryError::DegenerateInput(
            "palm root and middle-finger root project to the same point".into(),
        ));
    }
    let x_axis = in_plane / len;
    let y_axis = n.cross(&x_axis);
    Ok(PlaneFrame {
        origin: plane.centroid,
        x_axis,
        y_axis,
        normal: n,
    })
}

pub const SEGMENT_NAMES: [&str; 4] = ["metacarpal", "proximal", "intermediate", "distal"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerSegments {
    pub finger: Finger,
    pub metacarpal: f64,
    pub proximal: f64,
    pub intermediate: f64,
    pub distal: f64,
}

impl FingerSegments {
    pub fn lengths(&self) -> [f64; 4] {
        [self.metacarpal, self.proximal, self.intermediate, self.distal]
    }

    pub fn total(&self) -> f64 {
        self.lengths().iter().sum()
    }
}

/// Per-finger segment lengths, thumb to pinky.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerMetrics {
    pub units: String,
    pub fingers: Vec<FingerSegments>,
}

impl FingerMetrics {
    pub fn finger(&self, f: Finger) -> &FingerSegments {
        &self.fingers[f.index()]
    }
}

pub fn compute_finger_metrics(landmarks: &LandmarkSet) -> FingerMetrics {
    let fingers = Finger::ALL
        .iter()
        .map(|&finger| {
            let [a, b, c, d] = finger.chain();
            let path = [PALM_ROOT, a, b, c, d];
            let seg = |k: usize| (landmarks.point(path[k + 1]) - landmarks.point(path[k])).norm();
            FingerSegments {
                finger,
                metacarpal: seg(0),
                proximal: seg(1),
                intermediate: seg(2),
                distal: seg(3),
            }
        })
        .collect();
    FingerMetrics {
        units: "cm".into(),
        fingers,
    }
}
