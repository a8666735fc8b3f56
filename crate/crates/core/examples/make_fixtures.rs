//! Regenerates the bundled fixtures: the reference hand's landmarks and a
//! matching 778-vertex mesh.
//!
//! cargo run -p haptiforge --example make_fixtures -- crates/core/fixtures

use std::path::PathBuf;

use haptiforge::geometry::io::{landmarks_to_json, mesh_to_json};
use haptiforge::synthetic::{canonical_hand, hand_mesh};

fn main() -> std::io::Result<()> {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("crates/core/fixtures"));
    std::fs::create_dir_all(&dir)?;
    let landmarks = canonical_hand();
    let mesh = hand_mesh(&landmarks, 7);
    std::fs::write(dir.join("canonical_landmarks.json"), landmarks_to_json(&landmarks))?;
    std::fs::write(dir.join("canonical_mesh.json"), mesh_to_json(&mesh))?;
    println!("wrote {}", dir.display());
    Ok(())
}
