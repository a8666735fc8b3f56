//! Electrode placement along the finger chains plus the return electrode.

use serde::{Deserialize, Serialize};

use super::contour::{CanonicalHand, HandContour};
use super::geom2::{point_in_polygon, polyline_point_at, Point2};
use super::routing::{finger_locals, lane_radius_caps};
use super::{LayoutError, LayoutParams};
use crate::geometry::{Finger, PALM_ROOT};

/// Id of the virtual-ground return electrode.
pub const VGND_ID: u8 = 15;
pub const STIMULATION_SITES: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectrodeRole {
    Stimulation,
    Vgnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Fingertip,
    NearPalm,
    FingerRoot,
    Palm,
}

impl Region {
    pub const FINGER_REGIONS: [Region; 3] = [Region::Fingertip, Region::NearPalm, Region::FingerRoot];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElectrodeSite {
    pub id: u8,
    pub role: ElectrodeRole,
    pub center: Point2,
    pub diameter: f64,
    pub region: Region,
    pub finger: Option<Finger>,
}

impl ElectrodeSite {
    pub fn radius(&self) -> f64 {
        self.diameter / 2.0
    }
}

/// Stimulation channel id for a finger region: three per finger, thumb
/// first, ordered fingertip, near-palm, finger-root.
pub fn electrode_id(finger: Finger, region: Region) -> Option<u8> {
    let slot = Region::FINGER_REGIONS.iter().position(|&r| r == region)?;
    Some((finger.index() * 3 + slot) as u8)
}

pub fn site_for(id: u8) -> Option<(Finger, Region)> {
    if id as usize >= STIMULATION_SITES {
        return None;
    }
    let finger = Finger::ALL[id as usize / 3];
    Some((finger, Region::FINGER_REGIONS[id as usize % 3]))
}

/// Center of the palm: mean of the palm root and the five finger roots.
pub fn palm_centroid(hand: &CanonicalHand) -> Point2 {
    let idx = [PALM_ROOT, 1, 5, 9, 13, 17];
    idx.iter().map(|&i| hand.landmarks[i]).sum::<Point2>() / idx.len() as f64
}

fn fraction(region: Region, params: &LayoutParams) -> f64 {
    match region {
        Region::Fingertip => params.fingertip_fraction,
        Region::NearPalm => params.near_palm_fraction,
        Region::FingerRoot => params.finger_root_fraction,
        Region::Palm => unreachable!("palm sites are not on a finger"),
    }
}

pub fn place_electrodes(
    hand: &CanonicalHand,
    contour: &HandContour,
    params: &LayoutParams,
) -> Result<Vec<ElectrodeSite>, LayoutError> {
    let mut sites = Vec::with_capacity(16);
    for finger in Finger::ALL {
        let chain = hand.finger_polyline(finger);
        for region in Region::FINGER_REGIONS {
            sites.push(ElectrodeSite {
                id: electrode_id(finger, region).expect("finger region"),
                role: ElectrodeRole::Stimulation,
                center: polyline_point_at(&chain, fraction(region, params)),
                diameter: params.electrode_diameter,
                region,
                finger: Some(finger),
            });
        }
    }
    sites.push(ElectrodeSite {
        id: VGND_ID,
        role: ElectrodeRole::Vgnd,
        center: palm_centroid(hand) - Point2::new(params.vgnd_offset, 0.0),
        diameter: params.electrode_diameter,
        region: Region::Palm,
        finger: None,
    });
    fit_diameters(&mut sites, contour, params)?;
    Ok(sites)
}

/// Shrinks discs until every site clears the outline and its neighbours.
fn fit_diameters(sites: &mut [ElectrodeSite], contour: &HandContour, params: &LayoutParams) -> Result<(), LayoutError> {
    let poly = contour.flatten(params.arc_tolerance);
    for s in sites.iter_mut() {
        if !point_in_polygon(&s.center, &poly) {
            return Err(LayoutError::PlacementInfeasible(format!("electrode {} lies outside the outline", s.id)));
        }
        let room = 2.0 * (contour.distance_to(&s.center) - params.site_clearance);
        s.diameter = s.diameter.min(room);
    }
    for i in 0..sites.len() {
        for j in i + 1..sites.len() {
            let dist = (sites[i].center - sites[j].center).norm();
            if dist < (sites[i].diameter + sites[j].diameter) / 2.0 + params.site_clearance {
                let d = (dist - params.site_clearance).min(sites[i].diameter).min(sites[j].diameter);
                sites[i].diameter = d;
                sites[j].diameter = d;
            }
        }
    }
    reserve_lanes(sites, contour, params);
    if let Some(s) = sites.iter().find(|s| !(s.diameter >= params.min_electrode_diameter)) {
        return Err(LayoutError::PlacementInfeasible(format!(
            "electrode {} needs diameter {:.3} cm, below the {:.2} cm floor",
            s.id, s.diameter, params.min_electrode_diameter
        )));
    }
    Ok(())
}

/// Narrows the discs that traces must pass inside a finger so the lanes
/// beside them fit within the finger outline.
fn reserve_lanes(sites: &mut [ElectrodeSite], contour: &HandContour, params: &LayoutParams) {
    for strip in &contour.strips {
        let group: Vec<&ElectrodeSite> = sites.iter().filter(|s| s.finger == Some(strip.finger)).collect();
        let local = finger_locals(strip, &group);
        let shape: Vec<(f64, f64)> = local.iter().map(|&(s, _, l)| (l, s.radius())).collect();
        let caps = lane_radius_caps(&shape, strip.width, params);
        let ids: Vec<u8> = local.iter().map(|&(s, _, _)| s.id).collect();
        for (id, cap) in ids.into_iter().zip(caps) {
            if let (Some(cap), Some(site)) = (cap, sites.iter_mut().find(|s| s.id == id)) {
                site.diameter = site.diameter.min(2.0 * cap);
            }
        }
    }
}
