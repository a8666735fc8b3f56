//! Hand outline built from straight edges and fingertip arcs.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::geom2::{
    arc_chord_count, perp, point_in_polygon, point_segment_distance, polygon_is_simple, signed_area, Point2,
};
use super::{LayoutError, LayoutParams};
use crate::geometry::{Finger, FlatHand, LANDMARK_COUNT, PALM_ROOT};

const CLOSURE_TOLERANCE: f64 = 1e-6;

/// The flattened hand in the layout frame: fingers point toward +x and the
/// thumb lies on the +y side of the palm-root axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalHand {
    pub landmarks: [Point2; LANDMARK_COUNT],
    pub mesh: Vec<Point2>,
    /// Whether the flattened image had to be reflected (`y -> -y`).
    pub mirrored: bool,
}

impl CanonicalHand {
    pub fn from_flat(flat: &FlatHand) -> Self {
        let y0 = flat.landmarks[PALM_ROOT].y;
        let thumb_side: f64 = Finger::Thumb.chain().iter().map(|&i| flat.landmarks[i].y - y0).sum();
        let source = if thumb_side < 0.0 { flat.mirrored() } else { flat.clone() };
        Self {
            landmarks: source.landmarks,
            mesh: source.vertices,
            mirrored: thumb_side < 0.0,
        }
    }

    pub fn from_points(landmarks: [Point2; LANDMARK_COUNT]) -> Self {
        Self {
            landmarks,
            mesh: Vec::new(),
            mirrored: false,
        }
    }

    pub fn palm_root(&self) -> Point2 {
        self.landmarks[PALM_ROOT]
    }

    /// Finger polyline from its root landmark to its tip.
    pub fn finger_polyline(&self, finger: Finger) -> [Point2; 4] {
        finger.chain().map(|i| self.landmarks[i])
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            landmarks: self.landmarks.map(|p| p * s),
            mesh: self.mesh.iter().map(|p| p * s).collect(),
            mirrored: self.mirrored,
        }
    }
}

/// One element of the closed outline. Arcs run counter-clockwise from
/// `start_angle` to `end_angle` (radians, `end_angle > start_angle`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContourSegment {
    Line {
        start: Point2,
        end: Point2,
    },
    Arc {
        center: Point2,
        radius: f64,
        start_angle: f64,
        end_angle: f64,
    },
}

impl ContourSegment {
    pub fn start(&self) -> Point2 {
        match *self {
            Self::Line { start, .. } => start,
            Self::Arc {
                center,
                radius,
                start_angle,
                ..
            } => center + Point2::new(start_angle.cos(), start_angle.sin()) * radius,
        }
    }

    pub fn end(&self) -> Point2 {
        match *self {
            Self::Line { end, .. } => end,
            Self::Arc {
                center,
                radius,
                end_angle,
                ..
            } => center + Point2::new(end_angle.cos(), end_angle.sin()) * radius,
        }
    }

    pub fn distance_to(&self, p: &Point2) -> f64 {
        match *self {
            Self::Line { start, end } => point_segment_distance(p, &start, &end),
            Self::Arc {
                center,
                radius,
                start_angle,
                end_angle,
            } => {
                let d = p - center;
                let mut theta = d.y.atan2(d.x);
                while theta < start_angle {
                    theta += 2.0 * PI;
                }
                if theta <= end_angle {
                    (d.norm() - radius).abs()
                } else {
                    (p - self.start()).norm().min((p - self.end()).norm())
                }
            }
        }
    }

    /// Points from start toward end, excluding the end point.
    fn flatten_into(&self, tolerance: f64, out: &mut Vec<Point2>) {
        match *self {
            Self::Line { start, .. } => out.push(start),
            Self::Arc {
                center,
                radius,
                start_angle,
                end_angle,
            } => {
                let n = arc_chord_count(radius, end_angle - start_angle, tolerance);
                for k in 0..n {
                    let a = start_angle + (end_angle - start_angle) * k as f64 / n as f64;
                    out.push(center + Point2::new(a.cos(), a.sin()) * radius);
                }
            }
        }
    }
}

/// Geometry of one finger outline: a strip of `width` around the axis from
/// `base` along `direction`, capped by an arc centered at the tip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FingerStrip {
    pub finger: Finger,
    pub base: Point2,
    pub direction: Point2,
    pub length: f64,
    pub width: f64,
}

impl FingerStrip {
    pub fn normal(&self) -> Point2 {
        perp(&self.direction)
    }

    pub fn tip(&self) -> Point2 {
        self.base + self.direction * self.length
    }

    /// (axial, lateral) coordinates relative to the base.
    pub fn to_local(&self, p: &Point2) -> (f64, f64) {
        let d = p - self.base;
        (d.dot(&self.direction), d.dot(&self.normal()))
    }

    pub fn from_local(&self, axial: f64, lateral: f64) -> Point2 {
        self.base + self.direction * axial + self.normal() * lateral
    }
}

/// Straight wrist edge at `x` spanning `center_y ± half_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WristEdge {
    pub x: f64,
    pub center_y: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandContour {
    pub segments: Vec<ContourSegment>,
    pub strips: Vec<FingerStrip>,
    pub wrist: WristEdge,
}

impl HandContour {
    /// Closed polygon approximating the outline; arcs become chords within
    /// `tolerance` of the true arc.
    pub fn flatten(&self, tolerance: f64) -> Vec<Point2> {
        let mut out = Vec::new();
        for s in &self.segments {
            s.flatten_into(tolerance, &mut out);
        }
        out
    }

    pub fn distance_to(&self, p: &Point2) -> f64 {
        self.segments.iter().map(|s| s.distance_to(p)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, p: &Point2, tolerance: f64) -> bool {
        point_in_polygon(p, &self.flatten(tolerance))
    }

    pub fn strip(&self, finger: Finger) -> Option<&FingerStrip> {
        self.strips.iter().find(|s| s.finger == finger)
    }

    pub fn arc_count(&self) -> usize {
        self.segments.iter().filter(|s| matches!(s, ContourSegment::Arc { .. })).count()
    }

    /// Closure, simplicity and counter-clockwise orientation.
    pub fn validate(&self, tolerance: f64) -> Result<(), LayoutError> {
        let n = self.segments.len();
        if n < 3 {
            return Err(LayoutError::InvalidLayout("contour needs at least three segments".into()));
        }
        for i in 0..n {
            let gap = (self.segments[i].end() - self.segments[(i + 1) % n].start()).norm();
            if gap > CLOSURE_TOLERANCE {
                return Err(LayoutError::InvalidLayout(format!("contour open after segment {i} (gap {gap:.3e} cm)")));
            }
        }
        let poly = self.flatten(tolerance);
        if !polygon_is_simple(&poly) {
            return Err(LayoutError::InvalidLayout("contour self-intersects".into()));
        }
        if signed_area(&poly) <= 0.0 {
            return Err(LayoutError::InvalidLayout("contour is not counter-clockwise".into()));
        }
        Ok(())
    }
}

/// Finger widths from the spacing of neighbouring finger roots.
pub fn finger_widths(hand: &CanonicalHand, params: &LayoutParams) -> [f64; 5] {
    let root = |f: Finger| hand.landmarks[f.root()];
    let clamp = |w: f64| (params.finger_width_factor * w).clamp(params.min_finger_width, params.max_finger_width);
    let long = [Finger::Forefinger, Finger::Middle, Finger::Ring, Finger::Pinky];
    let mut widths = [0.0; 5];
    widths[Finger::Thumb.index()] = clamp((root(Finger::Thumb) - root(Finger::Forefinger)).norm());
    for (k, &f) in long.iter().enumerate() {
        let mut spacing = Vec::new();
        if k > 0 {
            spacing.push((root(f) - root(long[k - 1])).norm());
        }
        if k + 1 < long.len() {
            spacing.push((root(f) - root(long[k + 1])).norm());
        }
        widths[f.index()] = clamp(spacing.iter().sum::<f64>() / spacing.len() as f64);
    }
    widths
}

fn degenerate(msg: impl Into<String>) -> LayoutError {
    LayoutError::DegenerateInput(msg.into())
}

pub fn generate_contour(hand: &CanonicalHand, params: &LayoutParams) -> Result<HandContour, LayoutError> {
    let widths = finger_widths(hand, params);
    let mut strips = Vec::with_capacity(5);
    for f in Finger::ALL {
        let chain = hand.finger_polyline(f);
        let axis = chain[3] - chain[0];
        let length = axis.norm();
        if !(length > 0.0) {
            return Err(degenerate(format!("{} has zero length", f.name())));
        }
        let strip = FingerStrip {
            finger: f,
            base: chain[0],
            direction: axis / length,
            length,
            width: widths[f.index()],
        };
        if strip.direction.x <= 0.0 {
            return Err(degenerate(format!("{} does not point away from the wrist", f.name())));
        }
        for p in &chain[1..3] {
            let (_, lateral) = strip.to_local(p);
            if lateral.abs() > strip.width / 2.0 - params.landmark_margin {
                return Err(degenerate(format!("{} is too curved for a straight outline", f.name())));
            }
        }
        strips.push(strip);
    }

    let roots_y: Vec<f64> = [Finger::Forefinger, Finger::Middle, Finger::Ring, Finger::Pinky]
        .iter()
        .map(|&f| hand.landmarks[f.root()].y)
        .collect();
    if roots_y.windows(2).any(|w| w[0] <= w[1]) {
        return Err(degenerate("finger roots are out of order (fingers crossed)"));
    }

    let palm_root = hand.palm_root();
    let mesh_min_x = hand.mesh.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let wrist_x = if mesh_min_x.is_finite() {
        mesh_min_x.clamp(palm_root.x - params.max_wrist_drop, palm_root.x - params.min_wrist_drop)
    } else {
        palm_root.x - params.default_wrist_drop
    };
    let palm_span = (hand.landmarks[Finger::Forefinger.root()] - hand.landmarks[Finger::Pinky.root()]).norm();
    let connector_half = (params.pin_count.saturating_sub(1)) as f64 * params.pin_pitch / 2.0;
    let wrist = WristEdge {
        x: wrist_x,
        center_y: palm_root.y,
        half_width: (params.wrist_width_factor * palm_span)
            .max(connector_half + params.connector_margin)
            .max(params.landmark_margin + 0.1),
    };

    let mut segments = Vec::new();
    let line = |a: Point2, b: Point2| ContourSegment::Line { start: a, end: b };
    let wrist_bottom = Point2::new(wrist.x, wrist.center_y - wrist.half_width);
    let wrist_top = Point2::new(wrist.x, wrist.center_y + wrist.half_width);
    let strip = |f: Finger| strips[f.index()];

    let fingertip = |s: &FingerStrip, segments: &mut Vec<ContourSegment>, right_from: Point2| {
        let half = s.width / 2.0;
        let theta = s.direction.y.atan2(s.direction.x);
        segments.push(line(right_from, s.from_local(s.length, -half)));
        segments.push(ContourSegment::Arc {
            center: s.tip(),
            radius: half,
            start_angle: theta - PI / 2.0,
            end_angle: theta + PI / 2.0,
        });
    };

    let order = [Finger::Pinky, Finger::Ring, Finger::Middle, Finger::Forefinger];
    segments.push(line(wrist_bottom, strip(Finger::Pinky).from_local(0.0, -strip(Finger::Pinky).width / 2.0)));
    for (k, &f) in order.iter().enumerate() {
        let s = strip(f);
        let half = s.width / 2.0;
        fingertip(&s, &mut segments, s.from_local(0.0, -half));
        let left_base = s.from_local(0.0, half);
        segments.push(line(s.from_local(s.length, half), left_base));
        if let Some(&next) = order.get(k + 1) {
            let n = strip(next);
            segments.push(line(left_base, n.from_local(0.0, -n.width / 2.0)));
        }
    }
    let thumb = strip(Finger::Thumb);
    let half = thumb.width / 2.0;
    let (ip_axial, _) = thumb.to_local(&hand.landmarks[Finger::Thumb.chain()[2]]);
    let attach = thumb.from_local(ip_axial.clamp(0.0, thumb.length), -half);
    let index_left = strip(Finger::Forefinger).from_local(0.0, strip(Finger::Forefinger).width / 2.0);
    segments.push(line(index_left, attach));
    fingertip(&thumb, &mut segments, attach);
    let thumb_left_base = thumb.from_local(0.0, half);
    segments.push(line(thumb.from_local(thumb.length, half), thumb_left_base));
    segments.push(line(thumb_left_base, wrist_top));
    segments.push(line(wrist_top, wrist_bottom));

    let contour = HandContour { segments, strips, wrist };
    contour
        .validate(params.arc_tolerance)
        .map_err(|e| degenerate(format!("finger outlines overlap: {e}")))?;

    let poly = contour.flatten(params.arc_tolerance);
    for (i, p) in hand.landmarks.iter().enumerate() {
        if !point_in_polygon(p, &poly) || contour.distance_to(p) < params.landmark_margin {
            return Err(degenerate(format!("landmark {i} is not inside the outline with margin")));
        }
    }
    Ok(contour)
}
