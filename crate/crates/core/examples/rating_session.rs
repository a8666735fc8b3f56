//! Calibrates the amplitude, then runs a scripted 75-trial rating session
//! that crashes halfway and is resumed.
//!
//! cargo run -p haptiforge --example rating_session -- [out_dir]

use std::path::PathBuf;

use haptiforge::session::{calibrate_amplitude, CalibrationResponse::*, Session, SessionConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("haptiforge-session"));
    std::fs::create_dir_all(&out)?;
    let log = out.join("P07.jsonl");
    let _ = std::fs::remove_file(&log);

    let amplitude = calibrate_amplitude([Imperceptible, Imperceptible, Imperceptible, TooStrong, Imperceptible], 3.0)?;
    println!("calibrated amplitude {amplitude} mA");

    let config = SessionConfig {
        participant_id: "P07".into(),
        amplitude_ma: amplitude,
        seed: 7,
        ..SessionConfig::default()
    };
    // Scripted rater: stronger at low frequency and high duty.
    let rate = |f: f64, d: f64| -> u8 { (1.0 + 2.0 * (500f64.log10() - f.log10()) / 1.7 + 4.0 * d).round().clamp(1.0, 5.0) as u8 };

    let mut session = Session::create(config, &log)?;
    while session.cursor() < 40 {
        let t = session.current().unwrap();
        session.record_rating(t.index, rate(t.frequency_hz, t.duty))?;
    }
    drop(session);
    println!("stopped after 40 trials");

    let mut session = Session::resume(&log)?;
    println!("resumed at trial {} of {}", session.cursor(), session.plan().len());
    while let Some(t) = session.current() {
        session.record_rating(t.index, rate(t.frequency_hz, t.duty))?;
    }
    let surface = session.aggregate(true)?;
    println!("complete; surface spans {:.2}..{:.2}, monotone {}", surface.min(), surface.max(), surface.is_monotone(0.0));
    session.write_csv(std::fs::File::create(out.join("P07.csv"))?)?;
    std::fs::write(out.join("P07_surface.json"), surface.to_json())?;
    println!("wrote P07.jsonl, P07.csv and P07_surface.json to {}", out.display());
    Ok(())
}
