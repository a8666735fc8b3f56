//! Palm plane, projected mesh and finger lengths for a landmark file.
//!
//! cargo run -p haptiforge --example hand_geometry -- [landmarks.json] [mesh.json]

use haptiforge::geometry::io::{load_landmarks, load_mesh};
use haptiforge::geometry::{compute_finger_metrics, fit_plane, flatten_to_2d, project_vertices, Finger, SEGMENT_NAMES};

fn main() -> Result<(), haptiforge::Error> {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let mut args = std::env::args().skip(1);
    let lm_path = args.next().unwrap_or_else(|| format!("{fixtures}/canonical_landmarks.json"));
    let mesh_path = args.next().unwrap_or_else(|| format!("{fixtures}/canonical_mesh.json"));
    let landmarks = load_landmarks(&lm_path)?;
    let mesh = load_mesh(&mesh_path)?;

    let plane = fit_plane(&landmarks)?;
    println!("palm plane: normal {:.4?} through {:.3?}", plane.normal.as_slice(), plane.centroid.as_slice());
    let worst = landmarks.points().iter().map(|p| plane.signed_distance(p).abs()).fold(0.0, f64::max);
    println!("largest landmark offset from the plane: {worst:.4} cm");

    let projected = project_vertices(&mesh, &plane)?;
    let flat = flatten_to_2d(&projected, &plane, &landmarks)?;
    let (lo, hi) = flat.vertices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.x), hi.max(v.x)));
    println!("{} vertices flattened, extent along the hand axis {:.2} cm", flat.vertices.len(), hi - lo);

    let metrics = compute_finger_metrics(&landmarks);
    println!("\n{:<12}{}", "finger", SEGMENT_NAMES.map(|s| format!("{s:>14}")).join(""));
    for f in Finger::ALL {
        let seg = metrics.finger(f);
        println!("{:<12}{}   total {:.2}", f.name(), seg.lengths().map(|l| format!("{l:>14.2}")).join(""), seg.total());
    }
    Ok(())
}
