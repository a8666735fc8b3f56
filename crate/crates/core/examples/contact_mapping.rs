//! Replays a grasp as contact events and shows the resulting plans.
//!
//! cargo run -p haptiforge --example contact_mapping

use haptiforge::layout::{design_layout, LayoutParams};
use haptiforge::mapper::{apply_event, parse_contact_lines, EventQueue, MapperConfig, StimulusPlan};
use haptiforge::perception::IntensitySurface;
use haptiforge::stimulator::simulate;
use haptiforge::synthetic::canonical_hand;

const STREAM: &str = r#"
{"schema":"contact/1","kind":"begin","region":{"finger":"thumb","region":"fingertip"},"level":3,"timestamp_ms":0}
{"schema":"contact/1","kind":"begin","region":{"finger":"forefinger","region":"fingertip"},"level":3,"timestamp_ms":0}
{"schema":"contact/1","kind":"begin","electrode":6,"level":2.5,"timestamp_ms":4}
{"schema":"contact/1","kind":"update","electrode":3,"level":4,"timestamp_ms":12,"texture_hz":25}
{"schema":"contact/1","kind":"begin","electrode":9,"level":7,"timestamp_ms":15}
{"schema":"contact/1","kind":"end","electrode":0,"timestamp_ms":30}
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layout = design_layout(&canonical_hand(), None, &LayoutParams::default())?;
    let surface = IntensitySurface::synthetic_default();
    let config = MapperConfig::default();

    let mut queue = EventQueue::new();
    for parsed in parse_contact_lines(STREAM) {
        queue.push(parsed?);
    }
    let mut plan = StimulusPlan::default();
    while let Some(event) = queue.pop() {
        match apply_event(&plan, &event, &surface, &config, Some(&layout)) {
            Ok(next) => plan = next,
            Err(e) => println!("  rejected at {} ms: {e}", event.timestamp_ms),
        }
        let active: Vec<String> = plan
            .patterns
            .values()
            .map(|p| format!("ch{}@{:.0}Hz/{:.1}%", p.channel, p.frequency_hz, p.duty * 100.0))
            .collect();
        println!("t={:>4} ms rev {:>2}: {}", event.timestamp_ms, plan.revision, active.join(" "));
    }

    let schedule = plan.schedule(&config.limits)?;
    let trace = simulate(&schedule.events, &plan.patterns(), &config.limits, 1.0)?;
    println!("final schedule: {} events over {} ms, exclusive", schedule.events.len(), trace.duration_ns() / 1_000_000);
    Ok(())
}
