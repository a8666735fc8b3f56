//! Device geometry: outline, electrode sites, trace routes and connector.
//!
//! Everything here works in the canonical 2D frame produced by
//! [`CanonicalHand`]: centimeters, fingers toward +x, thumb on the +y side.

pub mod contour;
pub mod electrodes;
pub mod export;
pub mod geom2;
pub mod routing;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use contour::{generate_contour, CanonicalHand, ContourSegment, FingerStrip, HandContour, WristEdge};
pub use electrodes::{place_electrodes, ElectrodeRole, ElectrodeSite, Region, VGND_ID};
pub use geom2::Point2;
pub use routing::{route_traces, verify_routes, ConnectorSpec, TraceRoute};

use crate::geometry::{fit_plane, flatten_to_2d, plane_frame, project_vertices, FlatHand, GeometryError, HandMesh, LandmarkSet};
use geom2::{point_in_polygon, segments_intersect};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("electrode placement infeasible: {0}")]
    PlacementInfeasible(String),
    #[error("trace routing infeasible: {0}")]
    RoutingInfeasible(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("layout file: {0}")]
    Parse(String),
}

impl LayoutError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Geometry(g) => g.kind(),
            Self::DegenerateInput(_) => "DegenerateInput",
            Self::PlacementInfeasible(_) => "PlacementInfeasible",
            Self::RoutingInfeasible(_) => "RoutingInfeasible",
            Self::InvalidLayout(_) => "InvalidLayout",
            Self::Parse(_) => "Parse",
        }
    }
}

/// Tunables for the layout pipeline, all lengths in cm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutParams {
    /// Finger width as a multiple of the neighbouring finger-root spacing.
    pub finger_width_factor: f64,
    pub min_finger_width: f64,
    pub max_finger_width: f64,
    pub landmark_margin: f64,
    pub arc_tolerance: f64,
    /// Wrist edge placement below the palm root, bounded by these drops.
    pub min_wrist_drop: f64,
    pub max_wrist_drop: f64,
    /// Used when no mesh is available.
    pub default_wrist_drop: f64,
    /// Half-width of the wrist edge relative to the forefinger-pinky span.
    pub wrist_width_factor: f64,
    pub connector_margin: f64,
    pub connector_inset: f64,
    pub pin_count: usize,
    pub pin_pitch: f64,
    pub min_pin_pitch: f64,
    pub electrode_diameter: f64,
    pub min_electrode_diameter: f64,
    pub site_clearance: f64,
    pub fingertip_fraction: f64,
    pub near_palm_fraction: f64,
    pub finger_root_fraction: f64,
    pub vgnd_offset: f64,
    pub trace_width: f64,
    pub trace_clearance: f64,
    pub route_clearance: f64,
    /// Spacing of the candidate points where a trace may leave its lane.
    pub exit_step: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            finger_width_factor: 0.55,
            min_finger_width: 1.2,
            max_finger_width: 2.2,
            landmark_margin: 0.3,
            arc_tolerance: 0.01,
            min_wrist_drop: 0.5,
            max_wrist_drop: 2.0,
            default_wrist_drop: 0.8,
            wrist_width_factor: 0.4,
            connector_margin: 0.5,
            connector_inset: 0.3,
            pin_count: 16,
            pin_pitch: 0.1,
            min_pin_pitch: 0.1,
            electrode_diameter: 0.6,
            min_electrode_diameter: 0.4,
            site_clearance: 0.1,
            fingertip_fraction: 0.92,
            near_palm_fraction: 0.45,
            finger_root_fraction: 0.08,
            vgnd_offset: 1.0,
            trace_width: 0.08,
            trace_clearance: 0.1,
            route_clearance: 0.05,
            exit_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinAssignment {
    pub electrode: u8,
    pub pin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutMetadata {
    /// SHA-256 over the little-endian bytes of the 63 landmark coordinates.
    pub source_sha256: String,
    pub units: String,
    pub mirrored: bool,
    pub pin_assignment: Vec<PinAssignment>,
    pub params: LayoutParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutDesign {
    pub contour: HandContour,
    pub sites: Vec<ElectrodeSite>,
    pub routes: Vec<TraceRoute>,
    pub connector: ConnectorSpec,
    pub metadata: LayoutMetadata,
}

pub fn landmark_digest(landmarks: &LandmarkSet) -> String {
    let mut hasher = Sha256::new();
    for p in landmarks.points() {
        for c in p.iter() {
            hasher.update(c.to_le_bytes());
        }
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Full pipeline from 3D landmarks (and optionally the mesh) to a verified
/// layout.
pub fn design_layout(
    landmarks: &LandmarkSet,
    mesh: Option<&HandMesh>,
    params: &LayoutParams,
) -> Result<LayoutDesign, LayoutError> {
    let plane = fit_plane(landmarks)?;
    let flat = match mesh {
        Some(m) => flatten_to_2d(&project_vertices(m, &plane)?, &plane, landmarks)?,
        None => {
            let frame = plane_frame(&plane, landmarks)?;
            FlatHand {
                frame,
                landmarks: landmarks.points().map(|p| frame.to_2d(&p)),
                vertices: Vec::new(),
            }
        }
    };
    let hand = CanonicalHand::from_flat(&flat);
    design_canonical(&hand, landmark_digest(landmarks), params)
}

pub fn design_canonical(hand: &CanonicalHand, source_sha256: String, params: &LayoutParams) -> Result<LayoutDesign, LayoutError> {
    let contour = generate_contour(hand, params)?;
    let sites = place_electrodes(hand, &contour, params)?;
    let connector = ConnectorSpec::at_wrist(&contour, params);
    connector.validate(&contour, params)?;
    let routes = route_traces(&sites, &connector, &contour, params)?;
    let design = LayoutDesign {
        metadata: LayoutMetadata {
            source_sha256,
            units: "cm".into(),
            mirrored: hand.mirrored,
            pin_assignment: routes
                .iter()
                .map(|r| PinAssignment {
                    electrode: r.electrode,
                    pin: r.pin,
                })
                .collect(),
            params: *params,
        },
        contour,
        sites,
        routes,
        connector,
    };
    design.validate()?;
    Ok(design)
}

impl LayoutDesign {
    pub fn site(&self, id: u8) -> Option<&ElectrodeSite> {
        self.sites.iter().find(|s| s.id == id)
    }

    /// Re-checks every invariant of the design from scratch.
    pub fn validate(&self) -> Result<(), LayoutError> {
        let p = &self.metadata.params;
        let bad = |m: String| Err(LayoutError::InvalidLayout(m));
        self.contour.validate(p.arc_tolerance)?;
        let mut ids: Vec<u8> = self.sites.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids != (0..16).collect::<Vec<u8>>() {
            return bad(format!("expected electrode ids 0..=15, found {ids:?}"));
        }
        for s in &self.sites {
            let want = if s.id == VGND_ID { ElectrodeRole::Vgnd } else { ElectrodeRole::Stimulation };
            if s.role != want {
                return bad(format!("electrode {} has role {:?}", s.id, s.role));
            }
            if !(s.diameter >= p.min_electrode_diameter && s.diameter <= p.electrode_diameter) {
                return bad(format!("electrode {} diameter {} out of range", s.id, s.diameter));
            }
            if !disc_inside(&self.contour, s, p) {
                return bad(format!("electrode {} is not inside the outline with clearance", s.id));
            }
        }
        for (i, a) in self.sites.iter().enumerate() {
            for b in &self.sites[i + 1..] {
                if (a.center - b.center).norm() < (a.diameter + b.diameter) / 2.0 + p.site_clearance - 1e-12 {
                    return bad(format!("electrodes {} and {} are too close", a.id, b.id));
                }
            }
        }
        self.connector.validate(&self.contour, p)?;
        if self.routes.len() != self.sites.len() {
            return bad(format!("{} routes for {} electrodes", self.routes.len(), self.sites.len()));
        }
        let mut pins_used = vec![false; self.connector.pins.len()];
        for r in &self.routes {
            let site = self.site(r.electrode).ok_or_else(|| LayoutError::InvalidLayout(format!("route for unknown electrode {}", r.electrode)))?;
            let pin = *self
                .connector
                .pins
                .get(r.pin)
                .ok_or_else(|| LayoutError::InvalidLayout(format!("route {} ends at missing pin {}", r.electrode, r.pin)))?;
            if std::mem::replace(&mut pins_used[r.pin], true) {
                return bad(format!("pin {} used twice", r.pin));
            }
            if r.points.first() != Some(&site.center) || r.points.last() != Some(&pin) {
                return bad(format!("route {} does not join its electrode to its pin", r.electrode));
            }
        }
        verify_routes(&self.routes, &self.sites, &self.contour, p)
    }

    /// Number of pairwise segment intersections between different routes.
    pub fn route_crossings(&self) -> usize {
        let mut count = 0;
        for (i, a) in self.routes.iter().enumerate() {
            for b in &self.routes[i + 1..] {
                for (p, q) in a.segments() {
                    for (r, s) in b.segments() {
                        count += segments_intersect(&p, &q, &r, &s) as usize;
                    }
                }
            }
        }
        count
    }
}

/// Sixteen boundary samples of the disc, all inside the flattened outline
/// and at least the site clearance away from it.
fn disc_inside(contour: &HandContour, site: &ElectrodeSite, params: &LayoutParams) -> bool {
    let poly = contour.flatten(params.arc_tolerance);
    let sampled = (0..16).all(|k| {
        let a = k as f64 * std::f64::consts::TAU / 16.0;
        point_in_polygon(&(site.center + Point2::new(a.cos(), a.sin()) * site.radius()), &poly)
    });
    sampled && contour.distance_to(&site.center) >= site.radius() + params.site_clearance - 1e-12
}
