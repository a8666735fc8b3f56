//! Landmark and mesh file formats.
//!
//! Landmarks: `{"units":"cm","points":[[x,y,z], ...21]}`.
//! Meshes: `{"vertices":[[x,y,z], ...],"faces":[[i,j,k], ...]}` with
//! zero-based indices, or Wavefront-style text with `v` and `f` lines
//! (one-based indices, `v/vt/vn` references accepted).

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{GeometryError, HandMesh, LandmarkSet};

#[derive(Debug, Serialize, Deserialize)]
struct LandmarkFile {
    #[serde(default = "default_units")]
    units: String,
    points: Vec<[f64; 3]>,
}

fn default_units() -> String {
    "cm".into()
}

#[derive(Debug, Serialize, Deserialize)]
struct MeshFile {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

fn parse_err(e: impl std::fmt::Display) -> GeometryError {
    GeometryError::Parse(e.to_string())
}

pub fn parse_landmarks(text: &str) -> Result<LandmarkSet, GeometryError> {
    let file: LandmarkFile = serde_json::from_str(text).map_err(parse_err)?;
    if file.units != "cm" {
        return Err(GeometryError::Parse(format!("unsupported units {:?}, expected \"cm\"", file.units)));
    }
    LandmarkSet::from_arrays(&file.points)
}

pub fn landmarks_to_json(landmarks: &LandmarkSet) -> String {
    let file = LandmarkFile {
        units: "cm".into(),
        points: landmarks.points().iter().map(|p| [p.x, p.y, p.z]).collect(),
    };
    serde_json::to_string_pretty(&file).expect("landmarks serialize")
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<LandmarkSet, GeometryError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(parse_err)?;
    parse_landmarks(&text)
}

/// Accepts either the JSON or the `v`/`f` text form; the first
/// non-whitespace character decides.
pub fn parse_mesh(text: &str) -> Result<HandMesh, GeometryError> {
    if text.trim_start().starts_with('{') {
        let file: MeshFile = serde_json::from_str(text).map_err(parse_err)?;
        let vertices = file.vertices.iter().map(|v| Vector3::new(v[0], v[1], v[2])).collect();
        HandMesh::new(vertices, file.faces)
    } else {
        parse_obj(text)
    }
}

fn parse_obj(text: &str) -> Result<HandMesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let bad = |what: &str| GeometryError::Parse(format!("line {}: {what}", lineno + 1));
        match parts.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    *slot = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| bad("expected three vertex coordinates"))?;
                }
                vertices.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|s| {
                        s.split('/')
                            .next()
                            .and_then(|i| i.parse::<usize>().ok())
                            .filter(|&i| i >= 1)
                            .map(|i| i - 1)
                            .ok_or_else(|| bad("bad face index"))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(bad("only triangular faces are supported"));
                }
                faces.push([idx[0], idx[1], idx[2]]);
            }
            _ => {}
        }
    }
    HandMesh::new(vertices, faces)
}

pub fn mesh_to_json(mesh: &HandMesh) -> String {
    let file = MeshFile {
        vertices: mesh.vertices().iter().map(|v| [v.x, v.y, v.z]).collect(),
        faces: mesh.faces().to_vec(),
    };
    serde_json::to_string(&file).expect("mesh serialize")
}

pub fn mesh_to_obj(mesh: &HandMesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for f in mesh.faces() {
        out.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    out
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<HandMesh, GeometryError> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(parse_err)?;
    parse_mesh(&text)
}
