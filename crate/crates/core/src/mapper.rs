//! Contact events from the VR side turned into per-channel pulse patterns.
//!
//! An event names an electrode (directly or by finger and region), a target
//! level and whether contact begins, changes or ends. The amplitude never
//! comes from the event: it is the calibrated value in [`MapperConfig`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::geometry::Finger;
use crate::layout::{ElectrodeRole, LayoutDesign, Region};
use crate::perception::{invert, IntensitySurface, PerceptionError, Preference};
use crate::stimulator::{build_schedule, validate_pattern, PulsePattern, SafetyLimits, Schedule, StimError, CHANNEL_COUNT};

pub const CONTACT_SCHEMA: &str = "contact/1";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MapperError {
    #[error("invalid contact event: {0}")]
    InvalidEvent(String),
    #[error("no stimulation electrode on the {finger:?} {region:?}")]
    UnknownRegion { finger: Finger, region: Region },
    #[error(transparent)]
    TargetUnreachable(PerceptionError),
    #[error("plan cannot be scheduled: {0}")]
    Unschedulable(StimError),
    #[error("pattern rejected: {0}")]
    Rejected(StimError),
    #[error("parse error: {0}")]
    Parse(String),
}

impl MapperError {
    pub fn kind(&self) -> &'static str {
        match self {
            MapperError::InvalidEvent(_) => "InvalidEvent",
            MapperError::UnknownRegion { .. } => "UnknownRegion",
            MapperError::TargetUnreachable(_) => "TargetUnreachable",
            MapperError::Unschedulable(_) => "Unschedulable",
            MapperError::Rejected(e) => e.kind(),
            MapperError::Parse(_) => "Parse",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactKind {
    Begin,
    Update,
    End,
}

/// Finger and region, resolved to an electrode through a layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegionRef {
    pub finger: Finger,
    pub region: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub kind: ContactKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electrode: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<RegionRef>,
    /// Target level 1–5; ignored for `end`.
    #[serde(default = "default_level")]
    pub level: f64,
    pub timestamp_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture_hz: Option<f64>,
}

fn default_level() -> f64 {
    1.0
}

#[derive(Serialize)]
struct LineRef<'a> {
    schema: &'static str,
    #[serde(flatten)]
    event: &'a ContactEvent,
}

#[derive(Deserialize)]
struct Line {
    schema: String,
    #[serde(flatten)]
    event: ContactEvent,
}

impl ContactEvent {
    pub fn begin(electrode: u8, level: f64, timestamp_ms: f64) -> Self {
        Self {
            kind: ContactKind::Begin,
            electrode: Some(electrode),
            region: None,
            level,
            timestamp_ms,
            texture_hz: None,
        }
    }

    pub fn update(electrode: u8, level: f64, timestamp_ms: f64) -> Self {
        Self {
            kind: ContactKind::Update,
            ..Self::begin(electrode, level, timestamp_ms)
        }
    }

    pub fn end(electrode: u8, timestamp_ms: f64) -> Self {
        Self {
            kind: ContactKind::End,
            ..Self::begin(electrode, 1.0, timestamp_ms)
        }
    }

    pub fn with_texture(mut self, hz: f64) -> Self {
        self.texture_hz = Some(hz);
        self
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&LineRef {
            schema: CONTACT_SCHEMA,
            event: self,
        })
        .expect("event serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, MapperError> {
        let l: Line = serde_json::from_str(line).map_err(|e| MapperError::Parse(e.to_string()))?;
        if l.schema != CONTACT_SCHEMA {
            return Err(MapperError::Parse(format!("unsupported schema {:?}", l.schema)));
        }
        Ok(l.event)
    }

    pub fn check(&self) -> Result<(), MapperError> {
        let bad = |m: String| Err(MapperError::InvalidEvent(m));
        if !self.timestamp_ms.is_finite() {
            return bad("timestamp must be finite".into());
        }
        match (self.electrode, self.region) {
            (None, None) => return bad("event names neither an electrode nor a region".into()),
            (Some(_), Some(_)) => return bad("event names both an electrode and a region".into()),
            (Some(id), None) if id as usize >= CHANNEL_COUNT => {
                return bad(format!("electrode {id} is not a stimulation channel"));
            }
            _ => {}
        }
        if self.kind != ContactKind::End && !(1.0..=5.0).contains(&self.level) {
            return bad(format!("level {} outside [1, 5]", self.level));
        }
        if let Some(hz) = self.texture_hz {
            if !(hz.is_finite() && hz > 0.0) {
                return bad(format!("texture hint {hz} Hz must be positive"));
            }
        }
        Ok(())
    }

    /// The electrode the event addresses.
    pub fn channel(&self, layout: Option<&LayoutDesign>) -> Result<u8, MapperError> {
        self.check()?;
        if let Some(id) = self.electrode {
            return Ok(id);
        }
        let r = self.region.expect("checked above");
        layout
            .and_then(|l| {
                l.sites
                    .iter()
                    .find(|s| s.role == ElectrodeRole::Stimulation && s.finger == Some(r.finger) && s.region == r.region)
            })
            .map(|s| s.id)
            .ok_or(MapperError::UnknownRegion {
                finger: r.finger,
                region: r.region,
            })
    }
}

/// Parses a JSON-lines stream; blank lines are skipped.
pub fn parse_contact_lines(text: &str) -> Vec<Result<ContactEvent, MapperError>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(ContactEvent::from_json_line).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapperConfig {
    /// Calibrated amplitude for every contact pattern.
    pub amplitude_ma: f64,
    /// Length of each pattern's schedule window.
    pub duration_ms: f64,
    pub limits: SafetyLimits,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            amplitude_ma: 1.0,
            duration_ms: 1000.0,
            limits: SafetyLimits::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StimulusPlan {
    pub patterns: BTreeMap<u8, PulsePattern>,
    pub revision: u64,
}

impl StimulusPlan {
    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn patterns(&self) -> Vec<PulsePattern> {
        self.patterns.values().copied().collect()
    }

    pub fn schedule(&self, limits: &SafetyLimits) -> Result<Schedule, StimError> {
        build_schedule(&self.patterns(), limits)
    }

    /// A plan with `pattern` added or replaced, if still valid and
    /// schedulable.
    pub fn with_pattern(&self, pattern: PulsePattern, limits: &SafetyLimits) -> Result<Self, MapperError> {
        validate_pattern(&pattern, limits).map_err(MapperError::Rejected)?;
        let mut next = self.clone();
        next.patterns.insert(pattern.channel, pattern);
        next.schedule(limits).map_err(MapperError::Unschedulable)?;
        next.revision += 1;
        Ok(next)
    }

    /// A plan without `channel`. Removing an absent channel changes nothing.
    pub fn without(&self, channel: u8) -> Self {
        if !self.patterns.contains_key(&channel) {
            return self.clone();
        }
        let mut next = self.clone();
        next.patterns.remove(&channel);
        next.revision += 1;
        next
    }

    pub fn cleared(&self) -> Self {
        if self.is_empty() {
            return self.clone();
        }
        Self {
            patterns: BTreeMap::new(),
            revision: self.revision + 1,
        }
    }
}

/// Reference point for choosing parameters: the texture hint and the
/// channel's current pattern, else the low-duty, low-frequency corner.
fn reference(surface: &IntensitySurface, current: Option<&PulsePattern>, hint: Option<f64>) -> (f64, f64) {
    let frequency = hint.or(current.map(|p| p.frequency_hz)).unwrap_or(surface.frequency_range().0);
    let duty = current.map(|p| p.duty).unwrap_or(surface.duty_range().0);
    (frequency, duty)
}

/// Applies one event. On error the input plan is untouched and remains the
/// valid plan.
pub fn apply_event(
    plan: &StimulusPlan,
    event: &ContactEvent,
    surface: &IntensitySurface,
    config: &MapperConfig,
    layout: Option<&LayoutDesign>,
) -> Result<StimulusPlan, MapperError> {
    let channel = event.channel(layout)?;
    match event.kind {
        ContactKind::End => Ok(plan.without(channel)),
        ContactKind::Begin | ContactKind::Update => {
            let current = plan.patterns.get(&channel);
            let (frequency_hz, duty) = reference(surface, current, event.texture_hz);
            let point = invert(surface, event.level, Preference::NearestTo { frequency_hz, duty })
                .map_err(MapperError::TargetUnreachable)?;
            let pattern = PulsePattern::new(channel, point.frequency_hz, point.duty, config.amplitude_ma, config.duration_ms);
            plan.with_pattern(pattern, &config.limits)
        }
    }
}

#[derive(Debug, Clone)]
struct Queued {
    event: ContactEvent,
    arrival: u64,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed: the heap pops the earliest timestamp, then the earliest arrival.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .event
            .timestamp_ms
            .total_cmp(&self.event.timestamp_ms)
            .then(other.arrival.cmp(&self.arrival))
    }
}

/// Pending events, released by timestamp with ties in arrival order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Queued>,
    arrivals: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: ContactEvent) {
        self.heap.push(Queued {
            event,
            arrival: self.arrivals,
        });
        self.arrivals += 1;
    }

    pub fn pop(&mut self) -> Option<ContactEvent> {
        self.heap.pop().map(|q| q.event)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}
