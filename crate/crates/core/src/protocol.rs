//! Host ↔ stimulator framing.
//!
//! ```text
//! A5 | version | command | seq lo | seq hi | len | payload[len] | crc lo | crc hi
//! ```
//!
//! The CRC is CRC-16/CCITT-FALSE over every byte after the start byte and
//! before the CRC. Multi-byte fields are little-endian. Physical values are
//! fixed-point: centi-hertz, basis points of duty, microamperes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::stimulator::{validate_pattern, PulsePattern, SafetyLimits, StimError, CHANNEL_COUNT, HARD_CAP_MA, MAX_FREQUENCY_HZ};

pub const SOF: u8 = 0xA5;
pub const PROTOCOL_VERSION: u8 = 1;
/// Bytes around the payload: start, version, command, sequence, length, CRC.
pub const OVERHEAD: usize = 8;
pub const MAX_PAYLOAD: usize = u8::MAX as usize;
pub const MAX_AMPLITUDE_UA: u16 = (HARD_CAP_MA * 1000.0) as u16;
pub const MAX_FREQUENCY_CENTI_HZ: u32 = (MAX_FREQUENCY_HZ * 100.0) as u32;

const fn crc_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = (i as u16) << 8;
        let mut k = 0;
        while k < 8 {
            c = if c & 0x8000 != 0 { (c << 1) ^ 0x1021 } else { c << 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

static CRC_TABLE: [u16; 256] = crc_table();

/// CRC-16/CCITT-FALSE: polynomial 0x1021, initial value 0xFFFF, no
/// reflection, no final xor.
pub fn crc16(bytes: &[u8]) -> u16 {
    bytes
        .iter()
        .fold(0xFFFF, |crc, &b| (crc << 8) ^ CRC_TABLE[((crc >> 8) as u8 ^ b) as usize])
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("input ends before the frame does")]
    Truncated,
    #[error("expected start byte 0xA5, found {0:#04x}")]
    BadSof(u8),
    #[error("CRC mismatch: frame says {expected:#06x}, bytes give {actual:#06x}")]
    BadCrc { expected: u16, actual: u16 },
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown command {0:#04x}")]
    UnknownCommand(u8),
    #[error("payload of {len} bytes does not fit command {command:#04x}")]
    BadLength { command: u8, len: usize },
    #[error("field {field} out of range: {value}")]
    FieldOutOfRange { field: &'static str, value: u64 },
}

impl ProtocolError {
    pub fn kind(&self) -> &'static str {
        match self {
            ProtocolError::Truncated => "Truncated",
            ProtocolError::BadSof(_) => "BadSof",
            ProtocolError::BadCrc { .. } => "BadCrc",
            ProtocolError::BadVersion(_) => "BadVersion",
            ProtocolError::UnknownCommand(_) => "UnknownCommand",
            ProtocolError::BadLength { .. } => "BadLength",
            ProtocolError::FieldOutOfRange { .. } => "FieldOutOfRange",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Command {
    SetPattern = 0x01,
    StopChannel = 0x02,
    StopAll = 0x03,
    SetAmplitude = 0x04,
    Ping = 0x05,
    Ack = 0x06,
    Nack = 0x07,
    Telemetry = 0x08,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::SetPattern,
        Command::StopChannel,
        Command::StopAll,
        Command::SetAmplitude,
        Command::Ping,
        Command::Ack,
        Command::Nack,
        Command::Telemetry,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }

    fn payload_len(self) -> usize {
        match self {
            Command::SetPattern => 13,
            Command::StopChannel => 1,
            Command::StopAll | Command::Ping => 0,
            Command::SetAmplitude | Command::Ack => 2,
            Command::Nack => 3,
            Command::Telemetry => 6,
        }
    }
}

/// Fixed-point pulse pattern as carried by SET_PATTERN.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatternFields {
    pub channel: u8,
    pub frequency_centi_hz: u32,
    pub duty_basis_points: u16,
    pub amplitude_micro_amp: u16,
    pub duration_ms: u32,
}

impl PatternFields {
    pub fn from_pattern(p: &PulsePattern) -> Result<Self, ProtocolError> {
        let to_int = |field: &'static str, v: f64, max: f64| -> Result<u64, ProtocolError> {
            if v.is_finite() && v >= 0.0 && v.round() <= max {
                Ok(v.round() as u64)
            } else {
                Err(ProtocolError::FieldOutOfRange {
                    field,
                    value: if v.is_finite() && v > 0.0 { v.round().min(u64::MAX as f64) as u64 } else { 0 },
                })
            }
        };
        let fields = Self {
            channel: p.channel,
            frequency_centi_hz: to_int("frequency_centi_hz", p.frequency_hz * 100.0, u32::MAX as f64)? as u32,
            duty_basis_points: to_int("duty_basis_points", p.duty * 10_000.0, u16::MAX as f64)? as u16,
            amplitude_micro_amp: to_int("amplitude_micro_amp", p.amplitude_ma * 1000.0, u16::MAX as f64)? as u16,
            duration_ms: to_int("duration_ms", p.duration_ms, u32::MAX as f64)? as u32,
        };
        fields.check()?;
        Ok(fields)
    }

    pub fn to_pattern(&self) -> PulsePattern {
        PulsePattern::new(
            self.channel,
            self.frequency_centi_hz as f64 / 100.0,
            self.duty_basis_points as f64 / 10_000.0,
            self.amplitude_micro_amp as f64 / 1000.0,
            self.duration_ms as f64,
        )
    }

    fn check(&self) -> Result<(), ProtocolError> {
        check("channel", self.channel as u64, 0, CHANNEL_COUNT as u64 - 1)?;
        check("frequency_centi_hz", self.frequency_centi_hz as u64, 1, MAX_FREQUENCY_CENTI_HZ as u64)?;
        check("duty_basis_points", self.duty_basis_points as u64, 1, 9_999)?;
        check("amplitude_micro_amp", self.amplitude_micro_amp as u64, 0, MAX_AMPLITUDE_UA as u64)?;
        check("duration_ms", self.duration_ms as u64, 1, u32::MAX as u64)
    }
}

fn check(field: &'static str, value: u64, lo: u64, hi: u64) -> Result<(), ProtocolError> {
    if (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(ProtocolError::FieldOutOfRange { field, value })
    }
}

/// Device report: which channels hold a pattern (bit k = channel k), the
/// realized output current and the battery voltage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Telemetry {
    pub active_mask: u16,
    pub current_micro_amp: u16,
    pub battery_mv: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Message {
    SetPattern(PatternFields),
    StopChannel { channel: u8 },
    StopAll,
    /// Lowers or restores the device-side amplitude cap.
    SetAmplitude { amplitude_micro_amp: u16 },
    Ping,
    Ack { acked: u16 },
    Nack { acked: u16, reason: u8 },
    Telemetry(Telemetry),
}

impl Message {
    pub fn command(&self) -> Command {
        match self {
            Message::SetPattern(_) => Command::SetPattern,
            Message::StopChannel { .. } => Command::StopChannel,
            Message::StopAll => Command::StopAll,
            Message::SetAmplitude { .. } => Command::SetAmplitude,
            Message::Ping => Command::Ping,
            Message::Ack { .. } => Command::Ack,
            Message::Nack { .. } => Command::Nack,
            Message::Telemetry(_) => Command::Telemetry,
        }
    }

    fn check(&self) -> Result<(), ProtocolError> {
        match *self {
            Message::SetPattern(f) => f.check(),
            Message::StopChannel { channel } => check("channel", channel as u64, 0, CHANNEL_COUNT as u64 - 1),
            Message::SetAmplitude { amplitude_micro_amp } => {
                check("amplitude_micro_amp", amplitude_micro_amp as u64, 0, MAX_AMPLITUDE_UA as u64)
            }
            Message::Telemetry(t) => {
                check("active_mask", t.active_mask as u64, 0, (1 << CHANNEL_COUNT) - 1)?;
                check("current_micro_amp", t.current_micro_amp as u64, 0, MAX_AMPLITUDE_UA as u64)
            }
            Message::Nack { reason, .. } => check("reason", reason as u64, 1, NackReason::MAX as u64),
            Message::StopAll | Message::Ping | Message::Ack { .. } => Ok(()),
        }
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match *self {
            Message::SetPattern(f) => {
                out.push(f.channel);
                out.extend_from_slice(&f.frequency_centi_hz.to_le_bytes());
                out.extend_from_slice(&f.duty_basis_points.to_le_bytes());
                out.extend_from_slice(&f.amplitude_micro_amp.to_le_bytes());
                out.extend_from_slice(&f.duration_ms.to_le_bytes());
            }
            Message::StopChannel { channel } => out.push(channel),
            Message::SetAmplitude { amplitude_micro_amp } => out.extend_from_slice(&amplitude_micro_amp.to_le_bytes()),
            Message::Ack { acked } => out.extend_from_slice(&acked.to_le_bytes()),
            Message::Nack { acked, reason } => {
                out.extend_from_slice(&acked.to_le_bytes());
                out.push(reason);
            }
            Message::Telemetry(t) => {
                out.extend_from_slice(&t.active_mask.to_le_bytes());
                out.extend_from_slice(&t.current_micro_amp.to_le_bytes());
                out.extend_from_slice(&t.battery_mv.to_le_bytes());
            }
            Message::StopAll | Message::Ping => {}
        }
    }

    fn read_payload(command: Command, p: &[u8]) -> Result<Self, ProtocolError> {
        if p.len() != command.payload_len() {
            return Err(ProtocolError::BadLength {
                command: command.code(),
                len: p.len(),
            });
        }
        let u16_at = |i: usize| u16::from_le_bytes([p[i], p[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes([p[i], p[i + 1], p[i + 2], p[i + 3]]);
        let m = match command {
            Command::SetPattern => Message::SetPattern(PatternFields {
                channel: p[0],
                frequency_centi_hz: u32_at(1),
                duty_basis_points: u16_at(5),
                amplitude_micro_amp: u16_at(7),
                duration_ms: u32_at(9),
            }),
            Command::StopChannel => Message::StopChannel { channel: p[0] },
            Command::StopAll => Message::StopAll,
            Command::SetAmplitude => Message::SetAmplitude {
                amplitude_micro_amp: u16_at(0),
            },
            Command::Ping => Message::Ping,
            Command::Ack => Message::Ack { acked: u16_at(0) },
            Command::Nack => Message::Nack {
                acked: u16_at(0),
                reason: p[2],
            },
            Command::Telemetry => Message::Telemetry(Telemetry {
                active_mask: u16_at(0),
                current_micro_amp: u16_at(2),
                battery_mv: u16_at(4),
            }),
        };
        m.check()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub sequence: u16,
    pub message: Message,
}

impl Frame {
    pub fn new(sequence: u16, message: Message) -> Self {
        Self { sequence, message }
    }

    pub fn command(&self) -> Command {
        self.message.command()
    }
}

pub fn encode(frame: &Frame) -> Result<Vec<u8>, ProtocolError> {
    frame.message.check()?;
    let mut out = Vec::with_capacity(OVERHEAD + frame.command().payload_len());
    out.push(SOF);
    out.push(PROTOCOL_VERSION);
    out.push(frame.command().code());
    out.extend_from_slice(&frame.sequence.to_le_bytes());
    out.push(0);
    frame.message.write_payload(&mut out);
    out[5] = (out.len() - 6) as u8;
    let crc = crc16(&out[1..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Decodes the frame at the start of `bytes`; returns it with the number of
/// bytes it spans.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Frame, usize), ProtocolError> {
    let first = *bytes.first().ok_or(ProtocolError::Truncated)?;
    if first != SOF {
        return Err(ProtocolError::BadSof(first));
    }
    if bytes.len() < 6 {
        return Err(ProtocolError::Truncated);
    }
    let len = bytes[5] as usize;
    let total = OVERHEAD + len;
    if bytes.len() < total {
        return Err(ProtocolError::Truncated);
    }
    let expected = u16::from_le_bytes([bytes[total - 2], bytes[total - 1]]);
    let actual = crc16(&bytes[1..total - 2]);
    if expected != actual {
        return Err(ProtocolError::BadCrc { expected, actual });
    }
    if bytes[1] != PROTOCOL_VERSION {
        return Err(ProtocolError::BadVersion(bytes[1]));
    }
    let command = Command::from_code(bytes[2]).ok_or(ProtocolError::UnknownCommand(bytes[2]))?;
    let sequence = u16::from_le_bytes([bytes[3], bytes[4]]);
    let message = Message::read_payload(command, &bytes[6..6 + len])?;
    Ok((Frame { sequence, message }, total))
}

/// Decodes exactly one frame; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<Frame, ProtocolError> {
    let (frame, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(ProtocolError::BadLength {
            command: frame.command().code(),
            len: bytes.len() - OVERHEAD,
        });
    }
    Ok(frame)
}

/// Incremental decoder for a byte stream. After garbage or a damaged frame
/// it resynchronizes on the next start byte.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    /// Appends `bytes` and returns every frame or error now complete.
    /// Skipped garbage is reported once per run as `BadSof`.
    pub fn feed(&mut self, bytes: &[u8]) -> Vec<Result<Frame, ProtocolError>> {
        self.buf.extend_from_slice(bytes);
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < self.buf.len() {
            if self.buf[pos] != SOF {
                let junk = self.buf[pos];
                pos = self.buf[pos..].iter().position(|&b| b == SOF).map_or(self.buf.len(), |k| pos + k);
                out.push(Err(ProtocolError::BadSof(junk)));
                continue;
            }
            match decode_prefix(&self.buf[pos..]) {
                Ok((frame, used)) => {
                    out.push(Ok(frame));
                    pos += used;
                }
                Err(ProtocolError::Truncated) => break,
                Err(e) => {
                    out.push(Err(e));
                    pos += 1;
                }
            }
        }
        self.buf.drain(..pos);
        out
    }

    /// Ends the stream: leftover bytes are a truncated frame.
    pub fn finish(&mut self) -> Option<ProtocolError> {
        if self.buf.is_empty() {
            None
        } else {
            self.buf.clear();
            Some(ProtocolError::Truncated)
        }
    }
}

/// Wrapping 16-bit frame counter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Sequencer {
    next: u16,
}

impl Sequencer {
    pub fn new(start: u16) -> Self {
        Self { next: start }
    }

    pub fn next_seq(&mut self) -> u16 {
        let s = self.next;
        self.next = self.next.wrapping_add(1);
        s
    }
}

/// True if `b` comes after `a` in serial-number order.
pub fn sequence_after(a: u16, b: u16) -> bool {
    let d = b.wrapping_sub(a);
    d != 0 && d < 0x8000
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum NackReason {
    Malformed = 1,
    AmplitudeExceeded = 2,
    InvalidPattern = 3,
    Overflow = 4,
    Stale = 5,
}

impl NackReason {
    const MAX: u8 = 5;

    pub fn from_code(code: u8) -> Option<Self> {
        [Self::Malformed, Self::AmplitudeExceeded, Self::InvalidPattern, Self::Overflow, Self::Stale]
            .into_iter()
            .find(|r| *r as u8 == code)
    }

    fn of(e: &StimError) -> Self {
        match e {
            StimError::AmplitudeExceeded { .. } => NackReason::AmplitudeExceeded,
            StimError::ScheduleOverflow { .. } => NackReason::Overflow,
            _ => NackReason::InvalidPattern,
        }
    }
}

/// Device end of the loopback link: decodes host frames, applies them to
/// its own pattern table under its own limits, and answers each with an
/// ACK, a NACK or telemetry.
#[derive(Debug, Clone)]
pub struct SimulatedDevice {
    limits: SafetyLimits,
    patterns: BTreeMap<u8, PulsePattern>,
    last_sequence: Option<u16>,
    decoder_errors: u64,
}

impl SimulatedDevice {
    pub fn new(limits: SafetyLimits) -> Self {
        Self {
            limits,
            patterns: BTreeMap::new(),
            last_sequence: None,
            decoder_errors: 0,
        }
    }

    pub fn limits(&self) -> &SafetyLimits {
        &self.limits
    }

    pub fn patterns(&self) -> Vec<PulsePattern> {
        self.patterns.values().copied().collect()
    }

    pub fn decoder_errors(&self) -> u64 {
        self.decoder_errors
    }

    fn telemetry(&self) -> Telemetry {
        let active_mask = self.patterns.keys().fold(0u16, |m, &c| m | (1 << c));
        let current = self.patterns.values().map(|p| p.amplitude_ma).fold(0.0, f64::max);
        Telemetry {
            active_mask,
            current_micro_amp: (current * 1000.0).round() as u16,
            battery_mv: 3_900,
        }
    }

    /// Handles one encoded host frame and returns the encoded reply.
    pub fn receive(&mut self, bytes: &[u8]) -> Vec<u8> {
        let reply = match decode(bytes) {
            Ok(frame) => self.handle(frame),
            Err(_) => {
                self.decoder_errors += 1;
                Frame::new(0, Message::Nack {
                    acked: 0,
                    reason: NackReason::Malformed as u8,
                })
            }
        };
        encode(&reply).expect("device replies are in range")
    }

    fn handle(&mut self, frame: Frame) -> Frame {
        let seq = frame.sequence;
        let nack = |reason: NackReason| Frame::new(seq, Message::Nack { acked: seq, reason: reason as u8 });
        if self.last_sequence.is_some_and(|last| !sequence_after(last, seq)) {
            return nack(NackReason::Stale);
        }
        self.last_sequence = Some(seq);
        match frame.message {
            Message::SetPattern(fields) => {
                let p = fields.to_pattern();
                if let Err(e) = validate_pattern(&p, &self.limits) {
                    return nack(NackReason::of(&e));
                }
                let mut next = self.patterns.clone();
                next.insert(p.channel, p);
                let all: Vec<PulsePattern> = next.values().copied().collect();
                if let Err(e) = crate::stimulator::build_schedule(&all, &self.limits) {
                    return nack(NackReason::of(&e));
                }
                self.patterns = next;
            }
            Message::StopChannel { channel } => {
                self.patterns.remove(&channel);
            }
            Message::StopAll => self.patterns.clear(),
            Message::SetAmplitude { amplitude_micro_amp } => {
                let ma = amplitude_micro_amp as f64 / 1000.0;
                if self.patterns.values().any(|p| p.amplitude_ma > ma) {
                    return nack(NackReason::AmplitudeExceeded);
                }
                self.limits = SafetyLimits {
                    max_amplitude_ma: ma,
                    ..self.limits
                };
            }
            Message::Ping => return Frame::new(seq, Message::Telemetry(self.telemetry())),
            Message::Ack { .. } | Message::Nack { .. } | Message::Telemetry(_) => return nack(NackReason::Malformed),
        }
        Frame::new(seq, Message::Ack { acked: seq })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ping_layout() {
        let bytes = encode(&Frame::new(0x1234, Message::Ping)).unwrap();
        assert_eq!(bytes.len(), 8);
        assert_eq!(&bytes[..6], &[0xA5, 0x01, 0x05, 0x34, 0x12, 0x00]);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), crc16(&bytes[1..6]));
    }

    #[test]
    fn codec_refuses_overcurrent() {
        let fields = PatternFields {
            channel: 0,
            frequency_centi_hz: 5000,
            duty_basis_points: 1000,
            amplitude_micro_amp: 3001,
            duration_ms: 100,
        };
        assert_eq!(encode(&Frame::new(1, Message::SetPattern(fields))).unwrap_err().kind(), "FieldOutOfRange");
        let p = PulsePattern::new(0, 50.0, 0.1, 3.2, 100.0);
        assert_eq!(PatternFields::from_pattern(&p).unwrap_err().kind(), "FieldOutOfRange");
    }

    #[test]
    fn stream_resyncs_after_garbage() {
        let a = encode(&Frame::new(1, Message::Ping)).unwrap();
        let b = encode(&Frame::new(2, Message::StopAll)).unwrap();
        let mut stream = vec![0x00, 0x13];
        stream.extend(&a);
        stream.extend([0xA5, 0x01]);
        stream.extend(&b);
        let mut dec = StreamDecoder::new();
        let mut got = Vec::new();
        for chunk in stream.chunks(3) {
            got.extend(dec.feed(chunk));
        }
        let frames: Vec<Frame> = got.iter().filter_map(|r| r.clone().ok()).collect();
        assert_eq!(frames, vec![Frame::new(1, Message::Ping), Frame::new(2, Message::StopAll)]);
        assert!(dec.finish().is_none());
    }

    #[test]
    fn sequence_order_wraps() {
        assert!(sequence_after(0xFFFF, 0));
        assert!(!sequence_after(5, 5));
        assert!(!sequence_after(6, 5));
    }

    #[test]
    fn device_acks_and_nacks() {
        let mut dev = SimulatedDevice::new(SafetyLimits::default());
        let p = PatternFields::from_pattern(&PulsePattern::new(3, 50.0, 0.1, 1.0, 100.0)).unwrap();
        let reply = decode(&dev.receive(&encode(&Frame::new(1, Message::SetPattern(p))).unwrap())).unwrap();
        assert_eq!(reply.message, Message::Ack { acked: 1 });
        let reply = decode(&dev.receive(&encode(&Frame::new(1, Message::StopAll)).unwrap())).unwrap();
        assert!(matches!(reply.message, Message::Nack { reason: 5, .. }));
        let reply = decode(&dev.receive(&encode(&Frame::new(2, Message::Ping)).unwrap())).unwrap();
        assert!(matches!(reply.message, Message::Telemetry(Telemetry { active_mask: 8, current_micro_amp: 1000, .. })));
    }
}
