use std::collections::{HashMap, HashSet};
use std::io::Write;

use haptiforge::perception::{fit_surface, read_ratings_csv};
use haptiforge::session::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Key = (u64, u64);

fn key(f: f64, d: f64) -> Key {
    (f.to_bits(), d.to_bits())
}

fn rate_all(s: &mut Session, rng: &mut ChaCha8Rng, upto: usize) {
    while s.cursor() < upto {
        let t = s.current().unwrap();
        s.record_rating(t.index, rng.random_range(1..=5)).unwrap();
    }
}

#[test]
fn default_plan_is_a_balanced_factorial() {
    let cfg = SessionConfig::default();
    let plan = generate_trials(&cfg);
    assert_eq!(plan.len(), 75);
    let mut counts: HashMap<Key, usize> = HashMap::new();
    for t in &plan.trials {
        *counts.entry(key(t.frequency_hz, t.duty)).or_default() += 1;
    }
    assert_eq!(counts.len(), 25);
    assert!(counts.values().all(|&c| c == 3));
    for f in [10.0, 25.0, 50.0, 100.0, 500.0] {
        for d in [2.0, 5.0, 10.0, 25.0, 50.0] {
            assert_eq!(counts[&key(f, d / 100.0)], 3);
        }
    }
    assert!(plan.trials.iter().enumerate().all(|(i, t)| t.index == i));
    assert_eq!(cfg.amplitude_ma, 1.0);
}

#[test]
fn single_cell_config_gives_one_trial() {
    let cfg = SessionConfig {
        frequencies_hz: vec![50.0],
        duties_pct: vec![10.0],
        repetitions: 1,
        ..SessionConfig::default()
    };
    assert_eq!(generate_trials(&cfg).len(), 1);
}

#[test]
fn order_is_seeded() {
    let with = |seed| generate_trials(&SessionConfig { seed, ..SessionConfig::default() });
    assert_eq!(with(9), with(9));
    let orders: Vec<Vec<Key>> = (0..100)
        .map(|s| with(s).trials.iter().map(|t| key(t.frequency_hz, t.duty)).collect())
        .collect();
    let distinct: HashSet<&Vec<Key>> = orders.iter().collect();
    assert_eq!(distinct.len(), 100);
}

#[test]
fn bad_configs_are_refused() {
    for cfg in [
        SessionConfig {
            amplitude_ma: 3.1,
            ..SessionConfig::default()
        },
        SessionConfig {
            repetitions: 0,
            ..SessionConfig::default()
        },
        SessionConfig {
            duties_pct: vec![0.0],
            ..SessionConfig::default()
        },
    ] {
        assert_eq!(Session::new(cfg).unwrap_err().kind(), "BadConfig");
    }
}

#[test]
fn ratings_follow_the_cursor() {
    let mut s = Session::new(SessionConfig::default()).unwrap();
    let t = s.current().unwrap();
    assert_eq!(s.record_rating(t.index + 1, 3).unwrap_err().kind(), "OutOfOrder");
    assert_eq!(s.record_rating(t.index, 6).unwrap_err().kind(), "BadRating");
    assert_eq!(s.record_rating(t.index, 0).unwrap_err().kind(), "BadRating");
    let r = s.record_rating(t.index, 5).unwrap().clone();
    assert_eq!((r.frequency_hz, r.duty, r.rating), (t.frequency_hz, t.duty, 5));
    assert_eq!(s.cursor(), 1);
    // The prompt carries the stimulus at the session amplitude.
    let next = s.current().unwrap();
    assert_eq!(next.pattern.amplitude_ma, 1.0);
    assert_eq!(next.pattern.channel, 3);
    assert_eq!(next.total, 75);
    rate_all(&mut s, &mut ChaCha8Rng::seed_from_u64(0), 75);
    assert!(s.is_complete());
    assert!(s.current().is_none());
    assert_eq!(s.record_rating(75, 3).unwrap_err().kind(), "Complete");
}

#[test]
fn resume_continues_at_the_cursor_after_a_crash() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p01.jsonl");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = SessionConfig {
        seed: 42,
        ..SessionConfig::default()
    };
    {
        let mut s = Session::create(cfg.clone(), &path).unwrap();
        rate_all(&mut s, &mut rng, 30);
    }
    assert_eq!(Session::create(cfg.clone(), &path).unwrap_err().kind(), "Io");
    // A write cut short by a crash leaves half a line.
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .unwrap()
        .write_all(b"{\"type\":\"rating\",\"participant_id\":\"P0")
        .unwrap();
    let mut s = Session::resume(&path).unwrap();
    assert_eq!(s.cursor(), 30);
    assert_eq!(s.plan(), &generate_trials(&cfg));
    assert_eq!(s.current().unwrap().index, 30);
    rate_all(&mut s, &mut rng, 50);
    drop(s);
    let mut s = Session::resume(&path).unwrap();
    assert_eq!(s.cursor(), 50);
    rate_all(&mut s, &mut rng, 75);
    let on_disk = read_session_records(&path).unwrap();
    assert_eq!(on_disk.len(), 75);
    assert_eq!(on_disk, s.records());
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 76);
    assert!(text.ends_with('\n'));
}

#[test]
fn resume_rejects_a_tampered_log() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    {
        let mut s = Session::create(SessionConfig::default(), &path).unwrap();
        rate_all(&mut s, &mut ChaCha8Rng::seed_from_u64(2), 3);
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let second = text.lines().nth(2).unwrap();
    let tampered = text.replace(second, &second.replace("\"trial\":1", "\"trial\":7"));
    std::fs::write(&path, tampered).unwrap();
    assert_eq!(Session::resume(&path).unwrap_err().kind(), "Corrupt");
    std::fs::write(&path, "").unwrap();
    assert_eq!(Session::resume(&path).unwrap_err().kind(), "Corrupt");
}

#[test]
fn aggregate_equals_recomputation_from_the_csv() {
    let mut s = Session::new(SessionConfig {
        seed: 3,
        ..SessionConfig::default()
    })
    .unwrap();
    rate_all(&mut s, &mut ChaCha8Rng::seed_from_u64(3), 75);
    let surface = s.aggregate(false).unwrap();
    let mut csv_bytes = Vec::new();
    s.write_csv(&mut csv_bytes).unwrap();

    // Spreadsheet-style: group the rating column by the two grid columns.
    let text = String::from_utf8(csv_bytes.clone()).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (fc, dc, rc) = (col("frequency_hz"), col("duty_pct"), col("rating"));
    let mut cells: HashMap<Key, Vec<f64>> = HashMap::new();
    for line in lines {
        let v: Vec<&str> = line.split(',').collect();
        let num = |k: usize| v[k].parse::<f64>().unwrap();
        cells.entry(key(num(fc), num(dc))).or_default().push(num(rc));
    }
    assert_eq!(cells.len(), 25);
    let cfg = s.config();
    for (i, f) in cfg.frequencies_hz.iter().enumerate() {
        for (j, d) in cfg.duties_pct.iter().enumerate() {
            let ratings = &cells[&key(*f, *d)];
            assert_eq!(ratings.len(), 3);
            let mean = ratings.iter().sum::<f64>() / 3.0;
            assert_eq!(surface.value(i, j), mean);
        }
    }
    // Same through the library reader.
    let reread = read_ratings_csv(&csv_bytes[..]).unwrap();
    assert_eq!(fit_surface(&reread, false).unwrap(), surface);
    assert_eq!(s.aggregate(true).unwrap(), fit_surface(&reread, true).unwrap());
}

#[test]
fn staircase_examples() {
    use CalibrationResponse::*;
    assert_eq!(calibrate_amplitude([Comfortable], 3.0).unwrap(), 0.5);
    let got = calibrate_amplitude([Imperceptible, Imperceptible, Imperceptible, TooStrong, Comfortable], 3.0).unwrap();
    assert!((0.5..=0.9).contains(&got));
    assert!((got - 0.7).abs() < 1e-12);
    assert_eq!(calibrate_amplitude([Imperceptible, TooStrong], 3.0).unwrap_err().kind(), "CalibrationAborted");
    assert_eq!(calibrate_amplitude([], 3.0).unwrap_err().kind(), "CalibrationAborted");
}

fn all_sequences(len: usize) -> Vec<Vec<CalibrationResponse>> {
    use CalibrationResponse::*;
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..len {
        let mut next = Vec::new();
        for s in &frontier {
            for r in [Comfortable, TooStrong, Imperceptible] {
                let mut t: Vec<CalibrationResponse> = s.clone();
                t.push(r);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn staircase_never_exceeds_three_ma_over_all_short_sequences() {
    let seqs = all_sequences(10);
    assert_eq!(seqs.len(), (0..=10).map(|k| 3usize.pow(k)).sum::<usize>());
    for cap in [3.0, 10.0, 1.0, 0.25] {
        let limit = f64::min(cap, 3.0);
        for seq in &seqs {
            let mut s = Staircase::new(cap);
            assert!(s.level_ma() <= limit);
            for &r in seq {
                let level = match s.respond(r) {
                    StaircaseStep::Next(ma) | StaircaseStep::Done(ma) => ma,
                };
                assert!(level <= limit && level <= 3.0, "{seq:?} with cap {cap}: {level}");
                assert!(s.level_ma() <= limit);
            }
            if let Ok(ma) = calibrate_amplitude(seq.iter().copied(), cap) {
                assert!(ma <= limit && ma >= 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plan_is_a_permutation_of_the_design(
        seed in any::<u64>(),
        nf in 1usize..6,
        nd in 1usize..6,
        reps in 1usize..5,
    ) {
        let cfg = SessionConfig {
            frequencies_hz: (0..nf).map(|k| 10.0 * (k + 1) as f64).collect(),
            duties_pct: (0..nd).map(|k| 5.0 * (k + 1) as f64).collect(),
            repetitions: reps,
            seed,
            ..SessionConfig::default()
        };
        let plan = generate_trials(&cfg);
        prop_assert_eq!(plan.len(), nf * nd * reps);
        let mut got: Vec<Key> = plan.trials.iter().map(|t| key(t.frequency_hz, t.duty)).collect();
        let mut want: Vec<Key> = Vec::new();
        for f in &cfg.frequencies_hz {
            for d in cfg.duties() {
                for _ in 0..reps {
                    want.push(key(*f, d));
                }
            }
        }
        got.sort_unstable();
        want.sort_unstable();
        prop_assert_eq!(got, want);
    }
}
