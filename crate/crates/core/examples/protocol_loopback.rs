//! Host frames through the codec into the simulated device and back.
//!
//! cargo run -p haptiforge --example protocol_loopback

use haptiforge::protocol::{decode, encode, Frame, Message, NackReason, PatternFields, Sequencer, SimulatedDevice, StreamDecoder};
use haptiforge::stimulator::{PulsePattern, SafetyLimits};

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02X}")).collect::<Vec<_>>().join(" ")
}

fn main() -> Result<(), haptiforge::Error> {
    let mut device = SimulatedDevice::new(SafetyLimits::default());
    let mut seq = Sequencer::new(1);
    let set = |ch, f, d, ma| -> Result<Message, haptiforge::Error> {
        Ok(Message::SetPattern(PatternFields::from_pattern(&PulsePattern::new(ch, f, d, ma, 1000.0))?))
    };
    let script = [
        Message::Ping,
        set(3, 50.0, 0.10, 1.0)?,
        set(6, 100.0, 0.25, 1.2)?,
        Message::SetAmplitude { amplitude_micro_amp: 1_500 },
        set(9, 25.0, 0.05, 2.0)?,
        Message::StopChannel { channel: 6 },
        Message::Ping,
        Message::StopAll,
    ];
    for message in script {
        let bytes = encode(&Frame::new(seq.next_seq(), message))?;
        let reply = decode(&device.receive(&bytes))?;
        let note = match reply.message {
            Message::Nack { reason, .. } => format!("  ({:?})", NackReason::from_code(reason).unwrap()),
            _ => String::new(),
        };
        println!("-> {}\n<- {:?}{note}", hex(&bytes), reply.message);
    }

    // A noisy byte stream, fed three bytes at a time.
    let mut stream = vec![0x00, 0x42];
    stream.extend(encode(&Frame::new(seq.next_seq(), Message::Ping))?);
    stream.extend([0xA5, 0x01, 0x99]);
    stream.extend(encode(&Frame::new(seq.next_seq(), Message::StopAll))?);
    let mut decoder = StreamDecoder::new();
    for chunk in stream.chunks(3) {
        for item in decoder.feed(chunk) {
            match item {
                Ok(frame) => println!("stream frame: seq {} {:?}", frame.sequence, frame.message),
                Err(e) => println!("stream error: {e}"),
            }
        }
    }
    Ok(())
}
