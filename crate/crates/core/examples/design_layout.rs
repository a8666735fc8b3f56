//! Designs the electrode layout for the bundled hand and writes the CAD files.
//!
//! cargo run -p haptiforge --example design_layout -- [out_dir]

use std::path::PathBuf;

use haptiforge::geometry::io::{load_landmarks, load_mesh};
use haptiforge::layout::export::{export_cad, CadFormat};
use haptiforge::layout::{design_layout, ElectrodeRole, LayoutParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("haptiforge-layout"));
    std::fs::create_dir_all(&out)?;

    let landmarks = load_landmarks(format!("{fixtures}/canonical_landmarks.json"))?;
    let mesh = load_mesh(format!("{fixtures}/canonical_mesh.json"))?;
    let layout = design_layout(&landmarks, Some(&mesh), &LayoutParams::default())?;

    println!("outline: {} segments ({} arcs)", layout.contour.segments.len(), layout.contour.arc_count());
    for s in &layout.sites {
        let role = if s.role == ElectrodeRole::Vgnd { "VGND" } else { "stim" };
        let finger = s.finger.map_or("palm", |f| f.name());
        println!("  e{:<2} {role:<4} {finger:<10} {:<11} at ({:6.2}, {:6.2}) d={:.2}", s.id, format!("{:?}", s.region), s.center.x, s.center.y, s.diameter);
    }
    let length: f64 = layout.routes.iter().flat_map(|r| r.points.windows(2).map(|w| (w[1] - w[0]).norm())).sum();
    println!("{} traces, {:.1} cm of copper, {} crossings", layout.routes.len(), length, layout.route_crossings());

    std::fs::write(out.join("layout.json"), export_cad(&layout, CadFormat::Json))?;
    std::fs::write(out.join("layout.svg"), export_cad(&layout, CadFormat::Svg))?;
    println!("wrote layout.json and layout.svg to {}", out.display());
    Ok(())
}
