//! Multiplexes three channels, samples the output at 1 us and writes the
//! waveform as CSV and SVG.
//!
//! cargo run -p haptiforge --example schedule_waveform -- [out_dir]

use std::path::PathBuf;

use haptiforge::stimulator::{build_schedule, simulate, PulsePattern, SafetyLimits};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("haptiforge-waveform"));
    std::fs::create_dir_all(&out)?;
    let limits = SafetyLimits::default();
    let patterns = [
        PulsePattern::new(0, 50.0, 0.10, 1.0, 200.0),
        PulsePattern::new(3, 100.0, 0.25, 1.5, 200.0),
        PulsePattern::new(7, 25.0, 0.05, 0.8, 200.0),
    ];
    let schedule = build_schedule(&patterns, &limits)?;
    println!("frame {} us, {} events", schedule.frame_ns / 1000, schedule.events.len());
    for e in schedule.events.iter().take(8) {
        println!("  {:>9.1} us  {:?}", e.time_us(), e.action);
    }

    let trace = simulate(&schedule.events, &patterns, &limits, 1.0)?;
    for p in &patterns {
        println!(
            "ch{:<2} requested duty {:.3}, realized {:.4}, charge {:.1} uC",
            p.channel,
            p.duty,
            trace.on_fraction(p.channel),
            trace.charge_uc(p.channel)
        );
    }
    println!("shortest idle gap between channels: {} ticks", trace.min_switch_gap_ticks().unwrap_or(0));

    // Every 10th sample keeps the CSV small.
    trace.write_csv(std::fs::File::create(out.join("waveform.csv"))?, 10)?;
    std::fs::write(out.join("waveform.svg"), trace.to_svg())?;
    std::fs::write(out.join("schedule.json"), schedule.to_json())?;
    println!("wrote waveform.csv, waveform.svg and schedule.json to {}", out.display());
    Ok(())
}
