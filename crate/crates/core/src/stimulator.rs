//! Behavioral model of the multiplexed constant-current stimulator.
//!
//! Times are integer nanoseconds internally so schedules are exact and
//! reproducible; exported documents use microseconds.

use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHANNEL_COUNT: usize = 15;
/// Amplitude cap that no configuration can raise.
pub const HARD_CAP_MA: f64 = 3.0;
/// Upper bound accepted for a configured limit, before the hard cap applies.
pub const ABSOLUTE_CEILING_MA: f64 = 10.0;
pub const MAX_FREQUENCY_HZ: f64 = 10_000.0;

const NS_PER_US: f64 = 1_000.0;
const NS_PER_MS: f64 = 1_000_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StimError {
    #[error("amplitude {amplitude_ma} mA exceeds the {limit_ma} mA limit")]
    AmplitudeExceeded { amplitude_ma: f64, limit_ma: f64 },
    #[error("on-time {on_time_us} us is below the {min_us} us minimum")]
    OnTimeTooShort { on_time_us: f64, min_us: f64 },
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("schedule overflow: {required_us} us of on-time and dead-time needed in a {frame_us} us frame")]
    ScheduleOverflow { required_us: f64, frame_us: f64 },
    #[error("invalid pattern: {0}")]
    InvalidPattern(String),
    #[error("malformed schedule: {0}")]
    MalformedSchedule(String),
    #[error("channels {first} and {second} both active at tick {tick}")]
    ExclusivityViolated { tick: usize, first: u8, second: u8 },
}

impl StimError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::AmplitudeExceeded { .. } => "AmplitudeExceeded",
            Self::OnTimeTooShort { .. } => "OnTimeTooShort",
            Self::BadParameter(_) => "BadParameter",
            Self::ScheduleOverflow { .. } => "ScheduleOverflow",
            Self::InvalidPattern(_) => "InvalidPattern",
            Self::MalformedSchedule(_) => "MalformedSchedule",
            Self::ExclusivityViolated { .. } => "ExclusivityViolated",
        }
    }
}

fn bad(msg: impl Into<String>) -> StimError {
    StimError::BadParameter(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyLimits {
    pub max_amplitude_ma: f64,
    pub supply_voltage_v: f64,
    pub dead_time_us: f64,
}

impl Default for SafetyLimits {
    fn default() -> Self {
        Self {
            max_amplitude_ma: HARD_CAP_MA,
            supply_voltage_v: 90.0,
            dead_time_us: 1.5,
        }
    }
}

impl SafetyLimits {
    pub fn new(max_amplitude_ma: f64, supply_voltage_v: f64, dead_time_us: f64) -> Result<Self, StimError> {
        let limits = Self {
            max_amplitude_ma,
            supply_voltage_v,
            dead_time_us,
        };
        limits.check()?;
        Ok(limits)
    }

    pub fn check(&self) -> Result<(), StimError> {
        for (name, v) in [
            ("max_amplitude_ma", self.max_amplitude_ma),
            ("supply_voltage_v", self.supply_voltage_v),
            ("dead_time_us", self.dead_time_us),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(bad(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_amplitude_ma > ABSOLUTE_CEILING_MA {
            return Err(bad(format!(
                "max_amplitude_ma {} above the {ABSOLUTE_CEILING_MA} mA ceiling",
                self.max_amplitude_ma
            )));
        }
        Ok(())
    }

    /// The amplitude actually enforced: the configured limit, never above
    /// the 3 mA hard cap.
    pub fn amplitude_cap(&self) -> f64 {
        self.max_amplitude_ma.min(HARD_CAP_MA)
    }

    /// A copy whose cap is lowered to `ma` if that is smaller; raising is
    /// silently refused.
    pub fn lowered_to(&self, ma: f64) -> Self {
        let mut out = *self;
        if ma.is_finite() && ma > 0.0 {
            out.max_amplitude_ma = out.max_amplitude_ma.min(ma);
        }
        out
    }

    pub fn dead_time_ns(&self) -> u64 {
        (self.dead_time_us * NS_PER_US).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulsePattern {
    pub channel: u8,
    pub frequency_hz: f64,
    pub duty: f64,
    pub amplitude_ma: f64,
    pub duration_ms: f64,
}

impl PulsePattern {
    pub fn new(channel: u8, frequency_hz: f64, duty: f64, amplitude_ma: f64, duration_ms: f64) -> Self {
        Self {
            channel,
            frequency_hz,
            duty,
            amplitude_ma,
            duration_ms,
        }
    }

    pub fn period_ns(&self) -> u64 {
        (1e9 / self.frequency_hz).round() as u64
    }

    pub fn on_ns(&self) -> u64 {
        (self.duty * self.period_ns() as f64).round() as u64
    }

    pub fn duration_ns(&self) -> u64 {
        (self.duration_ms * NS_PER_MS).round() as u64
    }
}

pub fn validate_pattern(p: &PulsePattern, limits: &SafetyLimits) -> Result<(), StimError> {
    limits.check()?;
    if p.channel as usize >= CHANNEL_COUNT {
        return Err(bad(format!("channel {} outside 0..={}", p.channel, CHANNEL_COUNT - 1)));
    }
    if !(p.frequency_hz.is_finite() && p.frequency_hz > 0.0 && p.frequency_hz <= MAX_FREQUENCY_HZ) {
        return Err(bad(format!("frequency {} Hz outside (0, {MAX_FREQUENCY_HZ}]", p.frequency_hz)));
    }
    if !(p.duty > 0.0 && p.duty < 1.0) {
        return Err(bad(format!("duty {} outside (0, 1)", p.duty)));
    }
    if !(p.duration_ms.is_finite() && p.duration_ms > 0.0) {
        return Err(bad(format!("duration {} ms must be positive", p.duration_ms)));
    }
    if !(p.amplitude_ma.is_finite() && p.amplitude_ma >= 0.0) {
        return Err(bad(format!("amplitude {} mA must be non-negative", p.amplitude_ma)));
    }
    let cap = limits.amplitude_cap();
    if p.amplitude_ma > cap {
        return Err(StimError::AmplitudeExceeded {
            amplitude_ma: p.amplitude_ma,
            limit_ma: cap,
        });
    }
    let on_us = p.on_ns() as f64 / NS_PER_US;
    let min_us = 2.0 * limits.dead_time_us;
    if on_us < min_us {
        return Err(StimError::OnTimeTooShort {
            on_time_us: on_us,
            min_us,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "action", content = "channel", rename_all = "snake_case")]
pub enum Action {
    On(u8),
    Off(u8),
    AllOff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScheduleEvent {
    pub time_ns: u64,
    pub action: Action,
}

impl ScheduleEvent {
    pub fn time_us(&self) -> f64 {
        self.time_ns as f64 / NS_PER_US
    }
}

#[derive(Serialize, Deserialize)]
struct EventRecord {
    time_us: f64,
    #[serde(flatten)]
    action: Action,
}

impl Serialize for ScheduleEvent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        EventRecord {
            time_us: self.time_us(),
            action: self.action,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScheduleEvent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = EventRecord::deserialize(d)?;
        if !(r.time_us.is_finite() && r.time_us >= 0.0) {
            return Err(serde::de::Error::custom("time_us must be a non-negative number"));
        }
        Ok(Self {
            time_ns: (r.time_us * NS_PER_US).round() as u64,
            action: r.action,
        })
    }
}

/// Time-ordered on/off events plus the frame they were packed into.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Schedule {
    pub frame_ns: u64,
    pub duration_ns: u64,
    pub events: Vec<ScheduleEvent>,
}

impl Schedule {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.events).expect("events serialize")
    }

    /// Total on-time of `channel` in nanoseconds.
    pub fn on_time_ns(&self, channel: u8) -> u64 {
        let mut total = 0;
        let mut since = None;
        for e in &self.events {
            match e.action {
                Action::On(c) if c == channel => since = Some(e.time_ns),
                Action::Off(c) if c == channel => {
                    if let Some(t) = since.take() {
                        total += e.time_ns - t;
                    }
                }
                _ => {}
            }
        }
        total
    }

    /// On-time of the channel's pattern divided by that pattern's duration.
    pub fn realized_duty(&self, pattern: &PulsePattern) -> f64 {
        self.on_time_ns(pattern.channel) as f64 / pattern.duration_ns() as f64
    }

    pub fn pulse_count(&self, channel: u8) -> usize {
        self.events.iter().filter(|e| e.action == Action::On(channel)).count()
    }
}

/// Frame-based exclusive multiplexing.
///
/// Time is cut into frames as long as the shortest requested period. A
/// channel is due in frame `j` when one of its nominal pulse starts
/// `n * period` falls in `[j F, (j+1) F)`. Due channels get their full
/// on-window one after another in channel order from the frame start, each
/// followed by the dead-time, so every pulse lands at most one frame after
/// its nominal start and keeps its exact on-time. Packing fails when the
/// worst frame (every channel due) cannot hold all windows:
/// `sum(on) + m * dead_time > F`.
///
/// Only whole pulses are emitted: a pulse whose window would end after its
/// pattern's duration is dropped. The realized duty of a channel is thus
/// `round(D / P) * on / D` up to one pulse, which equals the requested duty
/// within `tick / P + dead_time * f` whenever `D` is a whole number of periods.
pub fn build_schedule(patterns: &[PulsePattern], limits: &SafetyLimits) -> Result<Schedule, StimError> {
    let mut sorted: Vec<PulsePattern> = patterns.to_vec();
    for p in &sorted {
        validate_pattern(p, limits)?;
    }
    sorted.sort_by_key(|p| p.channel);
    if sorted.windows(2).any(|w| w[0].channel == w[1].channel) {
        return Err(StimError::InvalidPattern("two patterns target the same channel".into()));
    }
    if sorted.is_empty() {
        return Ok(Schedule::default());
    }
    let dead = limits.dead_time_ns();
    let frame = sorted.iter().map(|p| p.period_ns()).min().expect("non-empty");
    let required: u64 = sorted.iter().map(|p| p.on_ns() + dead).sum();
    if required > frame {
        return Err(StimError::ScheduleOverflow {
            required_us: required as f64 / NS_PER_US,
            frame_us: frame as f64 / NS_PER_US,
        });
    }

    let duration = sorted.iter().map(|p| p.duration_ns()).max().expect("non-empty");
    let mut next_pulse = vec![0u64; sorted.len()];
    let mut events = Vec::new();
    let mut frame_start = 0u64;
    while frame_start < duration {
        let frame_end = frame_start + frame;
        let mut t = frame_start;
        for (k, p) in sorted.iter().enumerate() {
            let nominal = next_pulse[k] * p.period_ns();
            if nominal >= frame_end || nominal >= p.duration_ns() {
                continue;
            }
            next_pulse[k] += 1;
            let on = p.on_ns();
            if t + on <= p.duration_ns() {
                events.push(ScheduleEvent {
                    time_ns: t,
                    action: Action::On(p.channel),
                });
                events.push(ScheduleEvent {
                    time_ns: t + on,
                    action: Action::Off(p.channel),
                });
            }
            t += on + dead;
        }
        frame_start = frame_end;
    }
    events.push(ScheduleEvent {
        time_ns: duration,
        action: Action::AllOff,
    });
    Ok(Schedule {
        frame_ns: frame,
        duration_ns: duration,
        events,
    })
}

const IDLE: u8 = u8::MAX;

/// Sampled output: which channel (if any) carries current at each tick,
/// and the amplitude each channel carries when it does.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformTrace {
    pub dt_ns: u64,
    active: Vec<u8>,
    amplitude_ma: [f64; CHANNEL_COUNT],
}

impl WaveformTrace {
    pub fn ticks(&self) -> usize {
        self.active.len()
    }

    pub fn duration_ns(&self) -> u64 {
        self.active.len() as u64 * self.dt_ns
    }

    pub fn active_channel(&self, tick: usize) -> Option<u8> {
        self.active.get(tick).copied().filter(|&c| c != IDLE)
    }

    pub fn current(&self, channel: u8, tick: usize) -> f64 {
        if self.active_channel(tick) == Some(channel) {
            self.amplitude_ma[channel as usize]
        } else {
            0.0
        }
    }

    pub fn channel_samples(&self, channel: u8) -> Vec<f64> {
        (0..self.ticks()).map(|t| self.current(channel, t)).collect()
    }

    pub fn on_ticks(&self, channel: u8) -> usize {
        self.active.iter().filter(|&&c| c == channel).count()
    }

    pub fn on_fraction(&self, channel: u8) -> f64 {
        if self.active.is_empty() {
            return 0.0;
        }
        self.on_ticks(channel) as f64 / self.ticks() as f64
    }

    /// Delivered charge of one channel in microcoulombs (rectangle rule).
    pub fn charge_uc(&self, channel: u8) -> f64 {
        self.on_ticks(channel) as f64 * self.amplitude_ma[channel as usize] * self.dt_ns as f64 * 1e-6
    }

    /// Longest run of consecutive idle ticks between the end of one
    /// channel's window and the start of a different channel's window,
    /// minimised over all such switches.
    pub fn min_switch_gap_ticks(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        let mut last: Option<(u8, usize)> = None;
        let mut idle = 0usize;
        for &c in &self.active {
            if c == IDLE {
                idle += 1;
                continue;
            }
            if let Some((prev, gap)) = last {
                let gap = if idle > 0 { idle } else { gap };
                if prev != c {
                    best = Some(best.map_or(gap, |b: usize| b.min(gap)));
                }
            }
            last = Some((c, 0));
            idle = 0;
        }
        best
    }

    /// CSV with columns `time_us, ch0_ma, ..., ch14_ma`, one row every
    /// `stride` ticks.
    pub fn write_csv<W: io::Write>(&self, out: W, stride: usize) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time_us".to_string()];
        header.extend((0..CHANNEL_COUNT).map(|c| format!("ch{c}_ma")));
        w.write_record(&header)?;
        for tick in (0..self.ticks()).step_by(stride.max(1)) {
            let mut row = vec![format!("{}", tick as f64 * self.dt_ns as f64 / NS_PER_US)];
            row.extend((0..CHANNEL_COUNT as u8).map(|c| format!("{}", self.current(c, tick))));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Strip chart with one lane per channel that carries any current.
    pub fn to_svg(&self) -> String {
        let lanes: Vec<u8> = (0..CHANNEL_COUNT as u8).filter(|&c| self.on_ticks(c) > 0).collect();
        let (width, lane_h) = (1000.0, 40.0);
        let height = lane_h * lanes.len().max(1) as f64 + 20.0;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
        );
        let scale = width / self.ticks().max(1) as f64;
        for (row, &c) in lanes.iter().enumerate() {
            let base = 10.0 + lane_h * (row as f64 + 1.0) - 5.0;
            let high = base - lane_h + 15.0;
            let _ = writeln!(out, "  <text x=\"2\" y=\"{:.1}\" font-size=\"10\">ch{c}</text>", base - 12.0);
            let mut d = format!("M 0 {base:.1}");
            let mut on = false;
            for (tick, &a) in self.active.iter().enumerate() {
                let now = a == c;
                if now != on {
                    let x = tick as f64 * scale;
                    let _ = write!(d, " L {x:.2} {:.1} L {x:.2} {:.1}", if on { high } else { base }, if now { high } else { base });
                    on = now;
                }
            }
            let _ = write!(d, " L {width:.2} {:.1}", if on { high } else { base });
            let _ = writeln!(out, "  <path d=\"{d}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1\"/>");
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Renders an event list at a fixed tick and checks that the multiplexer
/// never closes two channels at once.
///
/// A tick `i` samples the instant `i * dt`; a channel is on at that instant
/// when its last event at or before it is `On`.
pub fn simulate(events: &[ScheduleEvent], patterns: &[PulsePattern], limits: &SafetyLimits, dt_us: f64) -> Result<WaveformTrace, StimError> {
    let dt_ns = (dt_us * NS_PER_US).round();
    if !(dt_ns >= 1.0) {
        return Err(bad(format!("tick {dt_us} us must be at least 1 ns")));
    }
    let dt_ns = dt_ns as u64;
    let mut amplitude_ma = [0.0; CHANNEL_COUNT];
    let mut known = [false; CHANNEL_COUNT];
    for p in patterns {
        validate_pattern(p, limits)?;
        amplitude_ma[p.channel as usize] = p.amplitude_ma;
        known[p.channel as usize] = true;
    }
    if events.windows(2).any(|w| w[1].time_ns < w[0].time_ns) {
        return Err(StimError::MalformedSchedule("events are not time-ordered".into()));
    }
    let end = events.last().map_or(0, |e| e.time_ns);
    let ticks = end.div_ceil(dt_ns) as usize;
    let mut active = vec![IDLE; ticks];
    let first_tick = |t: u64| t.div_ceil(dt_ns) as usize;

    let mut open: [Option<u64>; CHANNEL_COUNT] = [None; CHANNEL_COUNT];
    let fill = |channel: u8, from: u64, to: u64, active: &mut Vec<u8>| -> Result<(), StimError> {
        for tick in first_tick(from)..first_tick(to).min(ticks) {
            match active[tick] {
                IDLE => active[tick] = channel,
                other => {
                    return Err(StimError::ExclusivityViolated {
                        tick,
                        first: other,
                        second: channel,
                    })
                }
            }
        }
        Ok(())
    };
    for e in events {
        match e.action {
            Action::On(c) => {
                let ch = c as usize;
                if ch >= CHANNEL_COUNT || !known[ch] {
                    return Err(StimError::MalformedSchedule(format!("event for channel {c} without a pattern")));
                }
                if open[ch].replace(e.time_ns).is_some() {
                    return Err(StimError::MalformedSchedule(format!("channel {c} switched on twice")));
                }
                // Overlaps shorter than a tick would slip past the sampled check.
                if let Some(other) = (0..CHANNEL_COUNT).find(|&k| k != ch && open[k].is_some()) {
                    return Err(StimError::ExclusivityViolated {
                        tick: first_tick(e.time_ns),
                        first: other as u8,
                        second: c,
                    });
                }
            }
            Action::Off(c) => {
                let ch = c as usize;
                let from = open
                    .get_mut(ch)
                    .and_then(Option::take)
                    .ok_or_else(|| StimError::MalformedSchedule(format!("channel {c} switched off while off")))?;
                fill(c, from, e.time_ns, &mut active)?;
            }
            Action::AllOff => {
                for ch in 0..CHANNEL_COUNT {
                    if let Some(from) = open[ch].take() {
                        fill(ch as u8, from, e.time_ns, &mut active)?;
                    }
                }
            }
        }
    }
    if let Some(ch) = open.iter().position(Option::is_some) {
        return Err(StimError::MalformedSchedule(format!("channel {ch} never switched off")));
    }
    Ok(WaveformTrace {
        dt_ns,
        active,
        amplitude_ma,
    })
}

/// Ideal regulator: set-point `v_dac / r_emitter`, limited by the supply
/// compliance across the load and by the amplitude cap. Result in mA.
pub fn output_current(v_dac: f64, r_emitter: f64, r_load: f64, limits: &SafetyLimits) -> Result<f64, StimError> {
    if !(r_emitter.is_finite() && r_emitter > 0.0) {
        return Err(bad(format!("emitter resistance {r_emitter} ohm must be positive")));
    }
    if !(r_load.is_finite() && r_load >= 0.0) {
        return Err(bad(format!("load resistance {r_load} ohm must be non-negative")));
    }
    if !(v_dac.is_finite() && v_dac >= 0.0) {
        return Err(bad(format!("control voltage {v_dac} V must be non-negative")));
    }
    limits.check()?;
    let set_ma = v_dac / r_emitter * 1e3;
    let compliance_ma = limits.supply_voltage_v / (r_load + r_emitter) * 1e3;
    Ok(set_ma.min(compliance_ma).min(limits.amplitude_cap()))
}

/// Charge of one pulse in microcoulombs.
pub fn charge_per_period(p: &PulsePattern) -> f64 {
    p.amplitude_ma * p.duty / p.frequency_hz * 1e3
}
