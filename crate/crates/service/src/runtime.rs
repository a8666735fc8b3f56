//! The device runtime: one task owns the plan, the simulated link and the
//! session. Everyone else sends it mutations and reads published snapshots.

use std::path::PathBuf;
use std::sync::Arc;

use haptiforge::layout::LayoutDesign;
use haptiforge::mapper::{apply_event, ContactEvent, MapperConfig, MapperError, StimulusPlan};
use haptiforge::perception::IntensitySurface;
use haptiforge::protocol::{decode, encode, Frame, Message, NackReason, PatternFields, Sequencer, SimulatedDevice};
use haptiforge::session::{calibrate_amplitude, CalibrationResponse, Session, SessionConfig, SessionError, TrialPrompt};
use haptiforge::stimulator::{validate_pattern, PulsePattern, SafetyLimits, StimError, CHANNEL_COUNT};
use serde::{Deserialize, Serialize};
use tokio::sync::{broadcast, mpsc, oneshot, watch};

use crate::error::ServiceError;

pub struct RuntimeConfig {
    pub limits: SafetyLimits,
    pub surface: IntensitySurface,
    /// True when `surface` is the built-in placeholder rather than fitted data.
    pub surface_synthetic: bool,
    pub layout: Option<LayoutDesign>,
    /// Where session logs go; `None` keeps sessions in memory.
    pub session_dir: Option<PathBuf>,
    pub calibrated_amplitude_ma: f64,
    pub pattern_duration_ms: f64,
}

impl RuntimeConfig {
    pub fn new(limits: SafetyLimits) -> Self {
        Self {
            limits,
            surface: IntensitySurface::synthetic_default(),
            surface_synthetic: true,
            layout: None,
            session_dir: None,
            calibrated_amplitude_ma: 1.0_f64.min(limits.amplitude_cap()),
            pattern_duration_ms: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkStatus {
    Simulated,
    Serial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub status: LinkStatus,
    pub frames_sent: u64,
    pub nacks: u64,
    pub resyncs: u64,
    /// The device's own pattern table, as it acknowledged it.
    pub device_patterns: Vec<PulsePattern>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub channel: u8,
    pub realized_duty: f64,
    pub pulses: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSummary {
    pub frame_us: f64,
    pub duration_us: f64,
    pub channels: Vec<ChannelSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub participant_id: String,
    pub cursor: usize,
    pub total: usize,
    pub complete: bool,
    /// The current trial's stimulus is on the device.
    pub playing: bool,
    pub prompt: Option<TrialPrompt>,
    pub log: Option<String>,
    pub stimulus_ms: f64,
    pub inter_trial_gap_ms: f64,
}

/// One published revision. Built whole by the runtime and never mutated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceState {
    pub revision: u64,
    pub plan: StimulusPlan,
    pub schedule: ScheduleSummary,
    pub limits: SafetyLimits,
    pub amplitude_cap_ma: f64,
    pub calibrated_amplitude_ma: f64,
    pub link: LinkState,
    pub surface_synthetic: bool,
    pub session: Option<SessionState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEvent {
    pub revision: u64,
    pub playing: bool,
    pub prompt: TrialPrompt,
}

#[derive(Debug, Clone)]
pub enum ServiceEvent {
    State(Arc<DeviceState>),
    Trial(TrialEvent),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Calibration {
    Responses(Vec<CalibrationResponse>),
    Amplitude(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mutation {
    Contact(ContactEvent),
    StartPattern(PulsePattern),
    StopChannel(u8),
    StopAll,
    Calibrate(Calibration),
    LowerCap(f64),
    SessionStart(SessionConfig),
    SessionAdvance,
    SessionRate { trial: usize, rating: u8 },
    SessionEnd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionExport {
    pub csv: String,
    pub records: usize,
    pub complete: bool,
    /// Cell means, present once every cell has a rating.
    pub surface: Option<IntensitySurface>,
}

type Reply<T> = oneshot::Sender<Result<T, ServiceError>>;

enum Command {
    Mutate(Mutation, Reply<Arc<DeviceState>>),
    Export(bool, Reply<SessionExport>),
}

/// Cheap to clone; every clone talks to the same runtime task.
#[derive(Clone)]
pub struct RuntimeHandle {
    tx: mpsc::Sender<Command>,
    state: watch::Receiver<Arc<DeviceState>>,
    events: broadcast::Sender<ServiceEvent>,
    layout: Arc<Option<LayoutDesign>>,
}

impl RuntimeHandle {
    /// Starts the runtime task. Must be called inside a tokio runtime.
    pub fn spawn(config: RuntimeConfig) -> Result<Self, ServiceError> {
        config.limits.check()?;
        config.surface.check()?;
        let cap = config.limits.amplitude_cap();
        if !(config.calibrated_amplitude_ma > 0.0 && config.calibrated_amplitude_ma <= cap) {
            return Err(StimError::AmplitudeExceeded {
                amplitude_ma: config.calibrated_amplitude_ma,
                limit_ma: cap,
            }
            .into());
        }
        let layout = Arc::new(config.layout.clone());
        let (events, _) = broadcast::channel(1024);
        let mut runtime = Runtime {
            device: SimulatedDevice::new(config.limits),
            sequencer: Sequencer::new(0),
            plan: StimulusPlan::default(),
            limits: config.limits,
            calibrated: config.calibrated_amplitude_ma,
            link: LinkState {
                status: LinkStatus::Simulated,
                frames_sent: 0,
                nacks: 0,
                resyncs: 0,
                device_patterns: Vec::new(),
            },
            session: None,
            playing: false,
            pending_trials: Vec::new(),
            events: events.clone(),
            state_tx: None,
            config,
        };
        let initial = Arc::new(runtime.build_state(0));
        let (state_tx, state) = watch::channel(initial);
        runtime.state_tx = Some(state_tx);
        let (tx, rx) = mpsc::channel(256);
        tokio::spawn(runtime.run(rx));
        Ok(Self { tx, state, events, layout })
    }

    pub async fn apply(&self, mutation: Mutation) -> Result<Arc<DeviceState>, ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(Command::Mutate(mutation, reply)).await.map_err(|_| ServiceError::Unavailable)?;
        rx.await.map_err(|_| ServiceError::Unavailable)?
    }

    pub async fn export_session(&self, monotone: bool) -> Result<SessionExport, ServiceError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(Command::Export(monotone, reply)).await.map_err(|_| ServiceError::Unavailable)?;
        rx.await.map_err(|_| ServiceError::Unavailable)?
    }

    /// Latest published revision.
    pub fn snapshot(&self) -> Arc<DeviceState> {
        self.state.borrow().clone()
    }

    /// Events published after this call. Subscribe before taking the
    /// snapshot you start from so nothing falls in between.
    pub fn subscribe(&self) -> broadcast::Receiver<ServiceEvent> {
        self.events.subscribe()
    }

    pub fn layout(&self) -> Option<&LayoutDesign> {
        self.layout.as_ref().as_ref()
    }
}

struct Runtime {
    config: RuntimeConfig,
    device: SimulatedDevice,
    sequencer: Sequencer,
    plan: StimulusPlan,
    limits: SafetyLimits,
    calibrated: f64,
    link: LinkState,
    session: Option<Session>,
    playing: bool,
    pending_trials: Vec<(bool, TrialPrompt)>,
    events: broadcast::Sender<ServiceEvent>,
    state_tx: Option<watch::Sender<Arc<DeviceState>>>,
}

/// Fixed-point form the device will hold. The current is rounded down so
/// the wire value never exceeds what was validated.
fn quantize(p: &PulsePattern) -> Result<PulsePattern, ServiceError> {
    let mut fields = PatternFields::from_pattern(p)?;
    fields.amplitude_micro_amp = (p.amplitude_ma * 1000.0 + 1e-6).floor() as u16;
    Ok(fields.to_pattern())
}

fn cap_micro_amp(limits: &SafetyLimits) -> u16 {
    (limits.amplitude_cap() * 1000.0 + 1e-6).floor() as u16
}

impl Runtime {
    async fn run(mut self, mut rx: mpsc::Receiver<Command>) {
        while let Some(cmd) = rx.recv().await {
            match cmd {
                Command::Mutate(m, reply) => {
                    let result = self.mutate(m);
                    if result.is_err() {
                        self.pending_trials.clear();
                    }
                    // Publishing only emits a revision when something changed,
                    // which a failed mutation normally leaves untouched.
                    let state = self.publish();
                    let _ = reply.send(result.map(|()| state));
                }
                Command::Export(monotone, reply) => {
                    let _ = reply.send(self.export(monotone));
                }
            }
        }
    }

    fn current(&self) -> Arc<DeviceState> {
        self.state_tx.as_ref().expect("set at spawn").borrow().clone()
    }

    /// Publishes a new revision if anything changed, then any trial prompts.
    fn publish(&mut self) -> Arc<DeviceState> {
        let current = self.current();
        let mut next = self.build_state(current.revision);
        let state = if next == *current {
            current
        } else {
            next.revision += 1;
            let next = Arc::new(next);
            self.state_tx.as_ref().expect("set at spawn").send_replace(next.clone());
            let _ = self.events.send(ServiceEvent::State(next.clone()));
            next
        };
        for (playing, prompt) in self.pending_trials.drain(..) {
            let _ = self.events.send(ServiceEvent::Trial(TrialEvent {
                revision: state.revision,
                playing,
                prompt,
            }));
        }
        state
    }

    fn build_state(&self, revision: u64) -> DeviceState {
        let schedule = match self.plan.schedule(&self.limits) {
            Ok(s) => ScheduleSummary {
                frame_us: s.frame_ns as f64 / 1000.0,
                duration_us: s.duration_ns as f64 / 1000.0,
                channels: self
                    .plan
                    .patterns
                    .values()
                    .map(|p| ChannelSummary {
                        channel: p.channel,
                        realized_duty: s.realized_duty(p),
                        pulses: s.pulse_count(p.channel),
                    })
                    .collect(),
            },
            Err(e) => {
                tracing::error!("committed plan no longer schedules: {e}");
                ScheduleSummary::default()
            }
        };
        DeviceState {
            revision,
            plan: self.plan.clone(),
            schedule,
            limits: self.limits,
            amplitude_cap_ma: self.limits.amplitude_cap(),
            calibrated_amplitude_ma: self.calibrated,
            link: LinkState {
                device_patterns: self.device.patterns(),
                ..self.link.clone()
            },
            surface_synthetic: self.config.surface_synthetic,
            session: self.session.as_ref().map(|s| SessionState {
                participant_id: s.config().participant_id.clone(),
                cursor: s.cursor(),
                total: s.plan().len(),
                complete: s.is_complete(),
                playing: self.playing,
                prompt: s.current(),
                log: s.path().map(|p| p.display().to_string()),
                stimulus_ms: s.config().stimulus_ms,
                inter_trial_gap_ms: s.config().inter_trial_gap_ms,
            }),
        }
    }

    fn mutate(&mut self, m: Mutation) -> Result<(), ServiceError> {
        match m {
            Mutation::Contact(event) => {
                let config = MapperConfig {
                    amplitude_ma: self.calibrated,
                    duration_ms: self.config.pattern_duration_ms,
                    limits: self.limits,
                };
                let next = apply_event(&self.plan, &event, &self.config.surface, &config, self.config.layout.as_ref())?;
                self.commit(next)
            }
            Mutation::StartPattern(p) => {
                let next = self.plan.with_pattern(p, &self.limits)?;
                self.commit(next)
            }
            Mutation::StopChannel(ch) => {
                if ch as usize >= CHANNEL_COUNT {
                    return Err(ServiceError::BadRequest(format!("channel {ch} is not a stimulation channel")));
                }
                self.commit(self.plan.without(ch))?;
                if self.session_channel() == Some(ch) {
                    self.playing = false;
                }
                Ok(())
            }
            Mutation::StopAll => {
                self.commit(self.plan.cleared())?;
                self.playing = false;
                Ok(())
            }
            Mutation::Calibrate(c) => {
                let cap = self.limits.amplitude_cap();
                self.calibrated = match c {
                    Calibration::Responses(r) => calibrate_amplitude(r, cap)?,
                    Calibration::Amplitude(a) if !(a.is_finite() && a > 0.0) => {
                        return Err(StimError::BadParameter(format!("amplitude must be positive, got {a}")).into())
                    }
                    Calibration::Amplitude(a) if a > cap => {
                        return Err(StimError::AmplitudeExceeded {
                            amplitude_ma: a,
                            limit_ma: cap,
                        }
                        .into())
                    }
                    Calibration::Amplitude(a) => a,
                };
                Ok(())
            }
            Mutation::LowerCap(ma) => self.lower_cap(ma),
            Mutation::SessionStart(config) => self.start_session(config),
            Mutation::SessionAdvance => {
                let session = self.session.as_ref().ok_or(ServiceError::NoSession)?;
                let prompt = session.current().ok_or(SessionError::Complete)?;
                let next = self.plan.cleared().with_pattern(prompt.pattern, &self.limits)?;
                self.commit(next)?;
                self.playing = true;
                self.pending_trials.push((true, prompt));
                Ok(())
            }
            Mutation::SessionRate { trial, rating } => {
                let session = self.session.as_mut().ok_or(ServiceError::NoSession)?;
                session.record_rating(trial, rating)?;
                let (channel, next) = (session.config().channel, session.current());
                if self.playing {
                    self.playing = false;
                    self.commit(self.plan.without(channel))?;
                }
                if let Some(prompt) = next {
                    self.pending_trials.push((false, prompt));
                }
                Ok(())
            }
            Mutation::SessionEnd => {
                let channel = self.session_channel().ok_or(ServiceError::NoSession)?;
                if self.playing {
                    self.commit(self.plan.without(channel))?;
                    self.playing = false;
                }
                self.session = None;
                Ok(())
            }
        }
    }

    fn session_channel(&self) -> Option<u8> {
        self.session.as_ref().map(|s| s.config().channel)
    }

    fn start_session(&mut self, config: SessionConfig) -> Result<(), ServiceError> {
        if let Some(s) = self.session.as_ref().filter(|s| !s.is_complete()) {
            return Err(ServiceError::SessionActive(s.config().participant_id.clone()));
        }
        config.check()?;
        let cap = self.limits.amplitude_cap();
        if config.amplitude_ma > cap {
            return Err(StimError::AmplitudeExceeded {
                amplitude_ma: config.amplitude_ma,
                limit_ma: cap,
            }
            .into());
        }
        let session = match &self.config.session_dir {
            None => Session::new(config)?,
            Some(dir) => {
                if !is_plain_name(&config.participant_id) {
                    return Err(SessionError::BadConfig(format!("participant id {:?} cannot name a log file", config.participant_id)).into());
                }
                let path = dir.join(format!("{}.jsonl", config.participant_id));
                if path.exists() {
                    let resumed = Session::resume(&path)?;
                    if resumed.config() != &config {
                        return Err(SessionError::BadConfig(format!("{} holds a session with a different config", path.display())).into());
                    }
                    resumed
                } else {
                    Session::create(config, &path)?
                }
            }
        };
        if self.playing {
            if let Some(ch) = self.session_channel() {
                self.commit(self.plan.without(ch))?;
            }
            self.playing = false;
        }
        if let Some(prompt) = session.current() {
            self.pending_trials.push((false, prompt));
        }
        self.session = Some(session);
        Ok(())
    }

    fn lower_cap(&mut self, ma: f64) -> Result<(), ServiceError> {
        if !(ma.is_finite() && ma > 0.0) {
            return Err(StimError::BadParameter(format!("cap must be positive, got {ma}")).into());
        }
        let lowered = self.limits.lowered_to(ma);
        if lowered == self.limits {
            return Ok(());
        }
        let cap = lowered.amplitude_cap();
        // Channels above the new cap stop first, so the device never holds
        // a pattern its own cap would refuse.
        let mut next = self.plan.clone();
        for (ch, p) in &self.plan.patterns {
            if p.amplitude_ma > cap {
                next = next.without(*ch);
            }
        }
        self.commit(next)?;
        if self.playing && self.session_channel().is_some_and(|c| !self.plan.patterns.contains_key(&c)) {
            self.playing = false;
        }
        self.limits = lowered;
        self.calibrated = self.calibrated.min(cap);
        self.transmit(Message::SetAmplitude {
            amplitude_micro_amp: cap_micro_amp(&lowered),
        })
    }

    fn export(&self, monotone: bool) -> Result<SessionExport, ServiceError> {
        let session = self.session.as_ref().ok_or(ServiceError::NoSession)?;
        let mut csv = Vec::new();
        session
            .write_csv(&mut csv)
            .map_err(|e| ServiceError::io("writing ratings CSV", std::io::Error::other(e.to_string())))?;
        Ok(SessionExport {
            csv: String::from_utf8(csv).expect("CSV writer emits UTF-8"),
            records: session.records().len(),
            complete: session.is_complete(),
            surface: session.aggregate(monotone).ok(),
        })
    }

    /// Makes `next` the plan: quantizes new patterns to their wire form,
    /// re-validates, and mirrors the change onto the device. On any failure
    /// the plan and the device stay as they were.
    fn commit(&mut self, next: StimulusPlan) -> Result<(), ServiceError> {
        if next == self.plan {
            return Ok(());
        }
        let mut wire = next.clone();
        for (ch, p) in &next.patterns {
            if self.plan.patterns.get(ch) == Some(p) {
                continue;
            }
            validate_pattern(p, &self.limits).map_err(MapperError::Rejected)?;
            let q = quantize(p)?;
            validate_pattern(&q, &self.limits).map_err(MapperError::Rejected)?;
            wire.patterns.insert(*ch, q);
        }
        wire.schedule(&self.limits).map_err(MapperError::Unschedulable)?;

        let old = self.plan.clone();
        let mut messages = Vec::new();
        if wire.is_empty() && !old.is_empty() {
            messages.push(Message::StopAll);
        } else {
            for ch in old.patterns.keys().filter(|c| !wire.patterns.contains_key(c)) {
                messages.push(Message::StopChannel { channel: *ch });
            }
            for (ch, p) in &wire.patterns {
                if old.patterns.get(ch) != Some(p) {
                    messages.push(Message::SetPattern(PatternFields::from_pattern(p)?));
                }
            }
        }
        for m in messages {
            if let Err(e) = self.transmit(m) {
                self.resync(&old);
                return Err(e);
            }
        }
        self.plan = wire;
        Ok(())
    }

    /// Sends one frame over the loopback link and checks the reply.
    fn transmit(&mut self, message: Message) -> Result<(), ServiceError> {
        let seq = self.sequencer.next_seq();
        let bytes = encode(&Frame::new(seq, message))?;
        self.link.frames_sent += 1;
        let reply = decode(&self.device.receive(&bytes))?;
        match reply.message {
            Message::Ack { acked } if acked == seq => Ok(()),
            Message::Nack { reason, .. } => {
                self.link.nacks += 1;
                let reason = NackReason::from_code(reason).map_or_else(|| format!("code {reason}"), |r| format!("{r:?}"));
                Err(ServiceError::Link(format!("device refused {:?}: {reason}", message.command())))
            }
            other => Err(ServiceError::Link(format!("unexpected {:?} reply to frame {seq}", other.command()))),
        }
    }

    /// Puts the device back to `plan` after a refused frame.
    fn resync(&mut self, plan: &StimulusPlan) {
        self.link.resyncs += 1;
        let mut messages = vec![Message::StopAll];
        for p in plan.patterns.values() {
            match PatternFields::from_pattern(p) {
                Ok(f) => messages.push(Message::SetPattern(f)),
                Err(e) => tracing::error!("pattern on channel {} has no wire form: {e}", p.channel),
            }
        }
        for m in messages {
            if let Err(e) = self.transmit(m) {
                tracing::error!("resync failed: {e}");
            }
        }
    }
}

fn is_plain_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}
