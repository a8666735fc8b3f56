//! Comb routing from electrodes to the wrist connector.
//!
//! Inside a finger the traces run in lanes parallel to the finger axis: the
//! most proximal electrode on the axis, the next one in the lane on the
//! `-normal` side, the fingertip in the `+normal` lane. Near the finger root
//! each trace leaves its lane and turns straight towards its slot in the
//! palm corridor, a bundle of horizontal tracks at a fixed pitch. Tracks are
//! handed out in the bottom-to-top order of the lanes at the roots, and
//! connector pins in the same order, so two traces never swap sides. The
//! return electrode in the palm anchors that order: the tracks on either
//! side of it are spread apart around its disc.
//!
//! The thumb joins the palm next to the wrist, above every other trace, and
//! runs straight from its root to the top pins; the corridor drops to pin
//! height before it reaches the thumb.

use serde::{Deserialize, Serialize};

use super::contour::{FingerStrip, HandContour};
use super::electrodes::{ElectrodeSite, Region};
use super::geom2::{cross, point_in_polygon, point_segment_distance, segment_segment_distance, segments_intersect, Point2};
use super::{LayoutError, LayoutParams};
use crate::geometry::Finger;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRoute {
    pub electrode: u8,
    pub points: Vec<Point2>,
    pub width: f64,
    pub pin: usize,
}

impl TraceRoute {
    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn length(&self) -> f64 {
        self.segments().map(|(a, b)| (b - a).norm()).sum()
    }
}

/// Pins on a straight footprint; `pins` are ordered along `direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectorSpec {
    pub pins: Vec<Point2>,
    pub pitch: f64,
}

impl ConnectorSpec {
    pub fn along(center: Point2, direction: Point2, count: usize, pitch: f64) -> Self {
        let dir = direction.normalize();
        let half = (count.saturating_sub(1)) as f64 / 2.0;
        let pins = (0..count).map(|k| center + dir * ((k as f64 - half) * pitch)).collect();
        Self { pins, pitch }
    }

    /// Vertical footprint just inside the wrist edge, centered on it.
    pub fn at_wrist(contour: &HandContour, params: &LayoutParams) -> Self {
        let w = contour.wrist;
        Self::along(
            Point2::new(w.x + params.connector_inset, w.center_y),
            Point2::new(0.0, 1.0),
            params.pin_count,
            params.pin_pitch,
        )
    }

    pub fn validate(&self, contour: &HandContour, params: &LayoutParams) -> Result<(), LayoutError> {
        let bad = |m: String| Err(LayoutError::InvalidLayout(m));
        if self.pins.is_empty() {
            return bad("connector has no pins".into());
        }
        if self.pitch < params.min_pin_pitch {
            return bad(format!("pin pitch {} below {}", self.pitch, params.min_pin_pitch));
        }
        let (first, last) = (self.pins[0], self.pins[self.pins.len() - 1]);
        for (k, p) in self.pins.iter().enumerate() {
            if self.pins.len() > 1 && (last - first).norm() > 0.0 {
                let off = cross(&(last - first), &(p - first)).abs() / (last - first).norm();
                if off > 1e-9 {
                    return bad(format!("pin {k} is not collinear"));
                }
            }
            if k > 0 && (p - self.pins[k - 1]).norm() < self.pitch - 1e-9 {
                return bad(format!("pins {} and {k} closer than the pitch", k - 1));
            }
            if !contour.contains(p, params.arc_tolerance) {
                return bad(format!("pin {k} lies outside the outline"));
            }
        }
        Ok(())
    }
}

fn infeasible(msg: impl Into<String>) -> LayoutError {
    LayoutError::RoutingInfeasible(msg.into())
}

/// A trace's path inside its finger up to its last lane point; the trace
/// leaves the lane somewhere near `root`, where the lane meets the finger
/// root line.
struct FingerPath {
    electrode: u8,
    points: Vec<Point2>,
    root: Point2,
    direction: Point2,
    /// Axial position of the last lane point.
    last: f64,
}

impl FingerPath {
    /// Candidate exits along the lane, nearest the root first.
    fn exits(&self, step: f64) -> impl Iterator<Item = Point2> + '_ {
        [0.0, -1.0, 1.0, -2.0, 2.0]
            .into_iter()
            .map(move |k| k * step)
            .filter(|&a| a <= self.last)
            .map(|a| self.root + self.direction * a)
    }
}

/// Lateral lane offsets of a finger's traces, given its sites' lateral
/// offsets and radii sorted proximal to distal. The proximal trace runs
/// straight back from its disc; the middle one passes the proximal disc on
/// the `-normal` side and the distal one passes both on the `+normal` side.
pub(crate) fn lane_plan(sites: &[(f64, f64)], params: &LayoutParams) -> Vec<f64> {
    let keep = params.trace_width / 2.0 + params.trace_clearance;
    let mut lanes = Vec::with_capacity(sites.len());
    if let Some(&(d0, r0)) = sites.first() {
        lanes.push(d0);
        if sites.len() > 1 {
            lanes.push(d0 - r0 - keep);
        }
        if let Some(&(d1, r1)) = sites.get(1).filter(|_| sites.len() > 2) {
            lanes.push((d0 + r0 + keep).max(d1 + r1 + keep));
        }
    }
    lanes
}

/// Largest radii that still let [`lane_plan`] fit inside a strip of
/// `width`; `None` means unconstrained.
pub(crate) fn lane_radius_caps(sites: &[(f64, f64)], width: f64, params: &LayoutParams) -> Vec<Option<f64>> {
    let keep = params.trace_width / 2.0 + params.trace_clearance;
    let limit = lane_limit(width, params);
    let mut caps = vec![None; sites.len()];
    if sites.len() > 1 {
        let d0 = sites[0].0;
        caps[0] = Some(limit + d0 - keep);
        if sites.len() > 2 {
            caps[0] = Some((limit + d0 - keep).min(limit - d0 - keep));
            caps[1] = Some(limit - sites[1].0 - keep);
        }
    }
    caps
}

fn lane_limit(width: f64, params: &LayoutParams) -> f64 {
    width / 2.0 - params.trace_width / 2.0 - params.route_clearance
}

/// Sites of one finger with their (axial, lateral) coordinates, sorted
/// proximal to distal.
pub(crate) fn finger_locals<'a>(strip: &FingerStrip, sites: &[&'a ElectrodeSite]) -> Vec<(&'a ElectrodeSite, f64, f64)> {
    let mut local: Vec<(&ElectrodeSite, f64, f64)> = sites
        .iter()
        .map(|s| {
            let (a, l) = strip.to_local(&s.center);
            (*s, a, l)
        })
        .collect();
    local.sort_by(|x, y| x.1.total_cmp(&y.1));
    local
}

fn route_finger(strip: &FingerStrip, sites: &[&ElectrodeSite], params: &LayoutParams) -> Result<Vec<FingerPath>, LayoutError> {
    if sites.len() > 3 {
        return Err(infeasible(format!("{} has more than three electrodes", strip.finger.name())));
    }
    let local = finger_locals(strip, sites);
    if local.iter().any(|&(_, a, _)| a <= 0.0) {
        return Err(infeasible(format!("{} electrode lies behind the finger root", strip.finger.name())));
    }
    let lanes = lane_plan(&local.iter().map(|&(s, _, l)| (l, s.radius())).collect::<Vec<_>>(), params);
    let limit = lane_limit(strip.width, params);
    let widest = lanes.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    if widest > limit {
        return Err(infeasible(format!(
            "{} is too narrow for its lanes ({widest:.3} cm needed, {limit:.3} cm available)",
            strip.finger.name()
        )));
    }

    Ok(local
        .iter()
        .zip(lanes)
        .map(|(&(site, axial, lateral), lane)| {
            let mut points = vec![site.center];
            let jog = (lane - lateral).abs();
            let mut last = axial;
            if jog > 0.0 {
                last = (axial - jog).max(0.0);
                points.push(strip.from_local(last, lane));
            }
            FingerPath {
                electrode: site.id,
                points,
                root: strip.from_local(0.0, lane),
                direction: strip.direction,
                last,
            }
        })
        .collect())
}

fn simplify(points: Vec<Point2>) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::with_capacity(points.len());
    for p in points {
        if out.last().is_some_and(|q| (p - q).norm() < 1e-12) {
            continue;
        }
        if out.len() >= 2 {
            let (a, b) = (out[out.len() - 2], out[out.len() - 1]);
            let (u, v) = (b - a, p - b);
            if cross(&u, &v).abs() <= 1e-12 * u.norm() * v.norm() && u.dot(&v) > 0.0 {
                out.pop();
            }
        }
        out.push(p);
    }
    out
}

enum Entry {
    Finger(FingerPath),
    Palm(ElectrodeSite),
}

impl Entry {
    fn y(&self) -> f64 {
        match self {
            Entry::Finger(p) => p.root.y,
            Entry::Palm(s) => s.center.y,
        }
    }
}

fn clear_of(poly: &[Point2], a: &Point2, b: &Point2, need: f64) -> bool {
    let n = poly.len();
    (0..n).all(|k| segment_segment_distance(a, b, &poly[k], &poly[(k + 1) % n]) >= need - 1e-9)
}

/// Extends `path` through the first candidate exit from which the turn
/// towards `target` keeps clear of the outline, or the root if none does.
fn leave_lane(path: FingerPath, target: Point2, poly: &[Point2], params: &LayoutParams) -> (u8, Vec<Point2>) {
    let need = params.route_clearance + params.trace_width / 2.0;
    let from = *path.points.last().expect("a path starts at its disc");
    let exit = path
        .exits(params.exit_step)
        .find(|e| clear_of(poly, &from, e, need) && clear_of(poly, e, &target, need))
        .unwrap_or(path.root);
    let mut points = path.points;
    points.push(exit);
    (path.electrode, points)
}

pub fn route_traces(
    sites: &[ElectrodeSite],
    connector: &ConnectorSpec,
    contour: &HandContour,
    params: &LayoutParams,
) -> Result<Vec<TraceRoute>, LayoutError> {
    if sites.len() > connector.pins.len() {
        return Err(infeasible(format!("{} electrodes but only {} pins", sites.len(), connector.pins.len())));
    }

    let mut palm_order: Vec<Entry> = Vec::new();
    let mut thumb_order: Vec<FingerPath> = Vec::new();
    for finger in Finger::ALL {
        let group: Vec<&ElectrodeSite> = sites.iter().filter(|s| s.finger == Some(finger) && s.region != Region::Palm).collect();
        if group.is_empty() {
            continue;
        }
        let strip = contour
            .strip(finger)
            .ok_or_else(|| infeasible(format!("outline has no strip for the {}", finger.name())))?;
        let paths = route_finger(strip, &group, params)?;
        if finger == Finger::Thumb {
            thumb_order.extend(paths);
        } else {
            palm_order.extend(paths.into_iter().map(Entry::Finger));
        }
    }
    let palm_sites: Vec<&ElectrodeSite> = sites.iter().filter(|s| s.finger.is_none() || s.region == Region::Palm).collect();
    if palm_sites.len() > 1 {
        return Err(infeasible("at most one palm electrode can anchor the corridor"));
    }
    palm_order.extend(palm_sites.iter().map(|s| Entry::Palm(**s)));

    // Each finger trace leaves its lane close to the finger root and turns
    // straight towards its place in the corridor.
    let reach = 2.0 * params.exit_step;
    let finger_exit_x = palm_order
        .iter()
        .filter_map(|e| match e {
            Entry::Finger(p) => Some(p.root.x - reach * p.direction.x),
            Entry::Palm(_) => None,
        })
        .fold(f64::INFINITY, f64::min);
    palm_order.sort_by(|a, b| a.y().total_cmp(&b.y()));
    thumb_order.sort_by(|a, b| a.root.y.total_cmp(&b.root.y));
    if palm_order.windows(2).any(|w| w[1].y() - w[0].y() < 1e-9) {
        return Err(infeasible("two traces reach the palm at the same height"));
    }

    let poly = contour.flatten(params.arc_tolerance);
    let mut pins: Vec<(usize, Point2)> = connector.pins.iter().copied().enumerate().collect();
    pins.sort_by(|a, b| a.1.y.total_cmp(&b.1.y));
    let used = palm_order.len() + thumb_order.len();
    let pin_offset = (pins.len() - used) / 2;
    let pin_x = pins.iter().map(|p| p.1.x).fold(f64::NEG_INFINITY, f64::max);

    let spread = params.trace_width + params.trace_clearance;
    let anchor = palm_order.iter().position(|e| matches!(e, Entry::Palm(_)));
    let (upper_station, lower_station, anchor_y, gap) = match anchor.map(|i| &palm_order[i]) {
        Some(Entry::Palm(s)) => {
            let keep = s.radius() + params.trace_width + params.trace_clearance;
            (s.center.x + keep, s.center.x - keep, s.center.y, keep)
        }
        _ => {
            let mid = if finger_exit_x.is_finite() { (finger_exit_x + pin_x) / 2.0 } else { pin_x };
            let ys: Vec<f64> = palm_order.iter().map(Entry::y).collect();
            let center = ys.iter().sum::<f64>() / ys.len().max(1) as f64;
            (mid, mid, center, spread / 2.0)
        }
    };
    if finger_exit_x.is_finite() && finger_exit_x <= upper_station {
        return Err(infeasible("no room between the finger roots and the palm electrode"));
    }
    if lower_station <= pin_x {
        return Err(infeasible("palm electrode sits too close to the connector"));
    }
    // Below the thumb exits the palm traces already run at pin height, so
    // the thumb traces pass above all of them.
    let thumb_exit_x = thumb_order.iter().map(|p| p.root.x + reach * p.direction.x).fold(f64::NEG_INFINITY, f64::max);
    let fan_x = (thumb_exit_x + spread).max(pin_x + spread).min(lower_station);
    let entries = palm_order.len();
    let corridor_y = |rank: usize| -> f64 {
        match anchor {
            Some(v) => {
                let d = rank as f64 - v as f64;
                anchor_y + d.signum() * (gap + (d.abs() - 1.0).max(0.0) * spread)
            }
            None => anchor_y + (rank as f64 - (entries as f64 - 1.0) / 2.0) * spread,
        }
    };

    let mut routes = Vec::with_capacity(used);
    for (rank, entry) in palm_order.into_iter().enumerate() {
        let (pin_index, pin) = pins[pin_offset + rank];
        let y = corridor_y(rank);
        let (electrode, points) = match entry {
            Entry::Finger(path) => {
                let (electrode, mut pts) = leave_lane(path, Point2::new(upper_station, y), &poly, params);
                pts.push(Point2::new(upper_station, y));
                pts.push(Point2::new(lower_station, y));
                (electrode, pts)
            }
            Entry::Palm(site) => (site.id, vec![site.center, Point2::new(lower_station, site.center.y)]),
        };
        let mut points = points;
        if fan_x < lower_station - 1e-9 {
            points.push(Point2::new(fan_x, pin.y));
        }
        points.push(pin);
        routes.push(TraceRoute {
            electrode,
            points: simplify(points),
            width: params.trace_width,
            pin: pin_index,
        });
    }
    let base = pin_offset + routes.len();
    for (k, path) in thumb_order.into_iter().enumerate() {
        let (pin_index, pin) = pins[base + k];
        let (electrode, mut pts) = leave_lane(path, pin, &poly, params);
        pts.push(pin);
        routes.push(TraceRoute {
            electrode,
            points: simplify(pts),
            width: params.trace_width,
            pin: pin_index,
        });
    }
    routes.sort_by_key(|r| r.electrode);
    verify_routes(&routes, sites, contour, params)?;
    Ok(routes)
}

/// Exhaustive geometric check of a routing: no two traces touch, every
/// trace stays inside the outline with clearance, and no trace passes
/// through a disc it does not own.
pub fn verify_routes(
    routes: &[TraceRoute],
    sites: &[ElectrodeSite],
    contour: &HandContour,
    params: &LayoutParams,
) -> Result<(), LayoutError> {
    for (i, a) in routes.iter().enumerate() {
        for b in &routes[i + 1..] {
            for (p, q) in a.segments() {
                for (r, s) in b.segments() {
                    if segments_intersect(&p, &q, &r, &s) {
                        return Err(infeasible(format!("traces {} and {} cross", a.electrode, b.electrode)));
                    }
                }
            }
        }
    }
    let poly = contour.flatten(params.arc_tolerance);
    let margin = params.route_clearance;
    for r in routes {
        if r.points.len() < 2 {
            return Err(infeasible(format!("trace {} is empty", r.electrode)));
        }
        if let Some(p) = r.points.iter().find(|p| !point_in_polygon(p, &poly)) {
            return Err(infeasible(format!("trace {} leaves the outline at ({:.3}, {:.3})", r.electrode, p.x, p.y)));
        }
        for (p, q) in r.segments() {
            let n = poly.len();
            for k in 0..n {
                let d = segment_segment_distance(&p, &q, &poly[k], &poly[(k + 1) % n]);
                if d < margin + r.width / 2.0 - 1e-9 {
                    return Err(infeasible(format!("trace {} comes within {d:.3} cm of the outline", r.electrode)));
                }
            }
            for s in sites.iter().filter(|s| s.id != r.electrode) {
                if point_segment_distance(&s.center, &p, &q) < s.radius() + r.width / 2.0 {
                    return Err(infeasible(format!("trace {} passes through electrode {}", r.electrode, s.id)));
                }
            }
        }
    }
    Ok(())
}
