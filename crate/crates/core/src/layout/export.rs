//! CAD output: an SVG drawing in millimeter user units and a lossless JSON
//! document.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::contour::ContourSegment;
use super::electrodes::ElectrodeRole;
use super::geom2::Point2;
use super::{LayoutDesign, LayoutError};

pub const LAYOUT_SCHEMA: &str = "layout/1";

/// User units per centimeter.
const MM_PER_CM: f64 = 10.0;
const SVG_MARGIN_CM: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CadFormat {
    Svg,
    Json,
}

pub fn export_cad(layout: &LayoutDesign, format: CadFormat) -> Vec<u8> {
    match format {
        CadFormat::Svg => layout_to_svg(layout).into_bytes(),
        CadFormat::Json => layout_to_json(layout).into_bytes(),
    }
}

#[derive(Serialize)]
struct LayoutFileRef<'a> {
    schema: &'static str,
    #[serde(flatten)]
    layout: &'a LayoutDesign,
}

#[derive(Deserialize)]
struct LayoutFile {
    schema: String,
    #[serde(flatten)]
    layout: LayoutDesign,
}

pub fn layout_to_json(layout: &LayoutDesign) -> String {
    serde_json::to_string_pretty(&LayoutFileRef {
        schema: LAYOUT_SCHEMA,
        layout,
    })
    .expect("layout serializes")
}

/// Parses and re-validates a layout document.
pub fn layout_from_json(text: &str) -> Result<LayoutDesign, LayoutError> {
    let file: LayoutFile = serde_json::from_str(text).map_err(|e| LayoutError::Parse(e.to_string()))?;
    if file.schema != LAYOUT_SCHEMA {
        return Err(LayoutError::Parse(format!("unsupported schema {:?}", file.schema)));
    }
    file.layout.validate()?;
    Ok(file.layout)
}

fn num(v: f64) -> String {
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

struct Canvas {
    min_x: f64,
    max_y: f64,
}

impl Canvas {
    fn point(&self, p: &Point2) -> String {
        format!("{},{}", num((p.x - self.min_x) * MM_PER_CM), num((self.max_y - p.y) * MM_PER_CM))
    }

    fn xy(&self, p: &Point2) -> (String, String) {
        (num((p.x - self.min_x) * MM_PER_CM), num((self.max_y - p.y) * MM_PER_CM))
    }
}

pub fn layout_to_svg(layout: &LayoutDesign) -> String {
    let poly = layout.contour.flatten(layout.metadata.params.arc_tolerance);
    let (mut lo, mut hi) = (Point2::repeat(f64::INFINITY), Point2::repeat(f64::NEG_INFINITY));
    for p in &poly {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    lo -= Point2::repeat(SVG_MARGIN_CM);
    hi += Point2::repeat(SVG_MARGIN_CM);
    let canvas = Canvas { min_x: lo.x, max_y: hi.y };
    let (w, h) = (num((hi.x - lo.x) * MM_PER_CM), num((hi.y - lo.y) * MM_PER_CM));

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}mm\" height=\"{h}mm\" viewBox=\"0 0 {w} {h}\">"
    );

    let mut d = String::new();
    let first = layout.contour.segments[0].start();
    let _ = write!(d, "M {}", canvas.point(&first));
    for seg in &layout.contour.segments {
        match *seg {
            ContourSegment::Line { end, .. } => {
                let _ = write!(d, " L {}", canvas.point(&end));
            }
            ContourSegment::Arc {
                center,
                radius,
                start_angle,
                end_angle,
            } => {
                // Split in halves so neither piece reaches a half turn; the
                // y-flip turns counter-clockwise into SVG's positive sweep.
                let mid = (start_angle + end_angle) / 2.0;
                for a in [mid, end_angle] {
                    let p = center + Point2::new(a.cos(), a.sin()) * radius;
                    let r = num(radius * MM_PER_CM);
                    let _ = write!(d, " A {r} {r} 0 0 1 {}", canvas.point(&p));
                }
            }
        }
    }
    d.push_str(" Z");
    let _ = writeln!(
        out,
        "  <g id=\"contour\" fill=\"none\" stroke=\"#000000\" stroke-width=\"0.2\">\n    <path d=\"{d}\"/>\n  </g>"
    );

    out.push_str("  <g id=\"electrodes\" fill=\"#c0c0c0\" stroke=\"none\">\n");
    for s in &layout.sites {
        let (cx, cy) = canvas.xy(&s.center);
        let role = match s.role {
            ElectrodeRole::Stimulation => "stimulation",
            ElectrodeRole::Vgnd => "vgnd",
        };
        let _ = writeln!(
            out,
            "    <circle id=\"e{}\" class=\"{role}\" cx=\"{cx}\" cy=\"{cy}\" r=\"{}\"/>",
            s.id,
            num(s.radius() * MM_PER_CM)
        );
    }
    out.push_str("  </g>\n");

    out.push_str("  <g id=\"traces\" fill=\"none\" stroke=\"#b87333\" stroke-linecap=\"round\" stroke-linejoin=\"round\">\n");
    for r in &layout.routes {
        let pts: Vec<String> = r.points.iter().map(|p| canvas.point(p)).collect();
        let _ = writeln!(
            out,
            "    <polyline id=\"t{}\" data-pin=\"{}\" stroke-width=\"{}\" points=\"{}\"/>",
            r.electrode,
            r.pin,
            num(r.width * MM_PER_CM),
            pts.join(" ")
        );
    }
    out.push_str("  </g>\n");

    out.push_str("  <g id=\"connector\" fill=\"#404040\">\n");
    for (k, p) in layout.connector.pins.iter().enumerate() {
        let (x, y) = canvas.xy(&(p - Point2::new(0.02, -0.02)));
        let _ = writeln!(out, "    <rect id=\"p{k}\" x=\"{x}\" y=\"{y}\" width=\"0.4000\" height=\"0.4000\"/>");
    }
    out.push_str("  </g>\n</svg>\n");
    out
}
