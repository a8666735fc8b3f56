//! Fits an intensity surface from simulated ratings, then asks it for
//! stimulation parameters.
//!
//! cargo run -p haptiforge --example perception_surface

use haptiforge::perception::{fit_surface, invert, predict, Preference, RatingRecord, STUDY_DUTIES, STUDY_FREQUENCIES_HZ};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), haptiforge::Error> {
    // Simulated raters who feel more at low frequency and high duty. Not real data.
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut records = Vec::new();
    for p in 0..10 {
        for (i, &f) in STUDY_FREQUENCIES_HZ.iter().enumerate() {
            for (j, &d) in STUDY_DUTIES.iter().enumerate() {
                for _ in 0..3 {
                    let truth = 1.0 + (4 - i + j) as f64 / 2.0;
                    let rating = (truth + rng.random_range(-1.0..1.0)).round().clamp(1.0, 5.0) as u8;
                    records.push(RatingRecord {
                        participant_id: format!("S{p:02}"),
                        trial: records.len(),
                        frequency_hz: f,
                        duty: d,
                        rating,
                    });
                }
            }
        }
    }
    let raw = fit_surface(&records, false)?;
    let surface = fit_surface(&records, true)?;
    println!("raw means monotone: {}, projected: {}", raw.is_monotone(0.0), surface.is_monotone(0.0));
    print!("{:>8}", "Hz \\ %");
    for d in STUDY_DUTIES {
        print!("{:>7.0}", d * 100.0);
    }
    println!();
    for (i, f) in STUDY_FREQUENCIES_HZ.iter().enumerate() {
        print!("{f:>8}");
        for j in 0..STUDY_DUTIES.len() {
            print!("{:>7.2}", surface.value(i, j));
        }
        println!();
    }

    println!("\npredicted at 70 Hz, 15 %: {:.2}", predict(&surface, 70.0, 0.15)?);
    for level in [2.0, 3.0, 4.0] {
        let cheap = invert(&surface, level, Preference::LowestCharge)?;
        let near = invert(&surface, level, Preference::NearestTo { frequency_hz: 100.0, duty: 0.25 })?;
        println!(
            "level {level}: lowest charge {:.1} Hz / {:.1} %, near 100 Hz/25 % -> {:.1} Hz / {:.1} %",
            cheap.frequency_hz,
            cheap.duty * 100.0,
            near.frequency_hz,
            near.duty * 100.0
        );
    }
    Ok(())
}
