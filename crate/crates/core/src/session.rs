//! Psychophysics sessions over the frequency × duty grid, and the amplitude
//! staircase.
//!
//! A session file is JSON lines: one header with the configuration, then
//! one line per rating, each flushed to disk before the cursor advances.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::perception::{check_rating, fit_surface_on, write_ratings_csv, IntensitySurface, PerceptionError, RatingRecord};
use crate::stimulator::{PulsePattern, HARD_CAP_MA};

pub const SESSION_SCHEMA: &str = "session/1";

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid session config: {0}")]
    BadConfig(String),
    #[error("trial {given} answered but trial {expected} is current")]
    OutOfOrder { given: usize, expected: usize },
    #[error("session is complete")]
    Complete,
    #[error("rating {0} outside 1..=5")]
    BadRating(u8),
    #[error("calibration ended without a comfortable level")]
    CalibrationAborted,
    #[error("session file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl SessionError {
    pub fn kind(&self) -> &'static str {
        match self {
            SessionError::BadConfig(_) => "BadConfig",
            SessionError::OutOfOrder { .. } => "OutOfOrder",
            SessionError::Complete => "Complete",
            SessionError::BadRating(_) => "BadRating",
            SessionError::CalibrationAborted => "CalibrationAborted",
            SessionError::Corrupt(_) => "Corrupt",
            SessionError::Perception(e) => e.kind(),
            SessionError::Io(_) => "Io",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub frequencies_hz: Vec<f64>,
    pub duties_pct: Vec<f64>,
    pub repetitions: usize,
    pub amplitude_ma: f64,
    pub seed: u64,
    pub participant_id: String,
    /// Stimulated electrode; the study used the forefinger tip.
    pub channel: u8,
    pub stimulus_ms: f64,
    pub inter_trial_gap_ms: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            frequencies_hz: vec![10.0, 25.0, 50.0, 100.0, 500.0],
            duties_pct: vec![2.0, 5.0, 10.0, 25.0, 50.0],
            repetitions: 3,
            amplitude_ma: 1.0,
            seed: 0,
            participant_id: "P01".into(),
            channel: 3,
            stimulus_ms: 1000.0,
            inter_trial_gap_ms: 2000.0,
        }
    }
}

impl SessionConfig {
    pub fn check(&self) -> Result<(), SessionError> {
        let bad = |m: &str| Err(SessionError::BadConfig(m.into()));
        if self.frequencies_hz.is_empty() || self.duties_pct.is_empty() {
            return bad("grid axes must not be empty");
        }
        if self.frequencies_hz.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return bad("frequencies must be positive");
        }
        if self.duties_pct.iter().any(|d| !(d.is_finite() && *d > 0.0 && *d < 100.0)) {
            return bad("duties must lie in (0, 100) %");
        }
        if self.repetitions < 1 {
            return bad("repetitions must be at least 1");
        }
        if !(self.amplitude_ma.is_finite() && self.amplitude_ma >= 0.0 && self.amplitude_ma <= HARD_CAP_MA) {
            return bad("amplitude must lie in [0, 3] mA");
        }
        if !(self.stimulus_ms.is_finite() && self.stimulus_ms > 0.0) || !(self.inter_trial_gap_ms.is_finite() && self.inter_trial_gap_ms >= 0.0) {
            return bad("stimulus and gap durations must be non-negative");
        }
        Ok(())
    }

    pub fn duties(&self) -> Vec<f64> {
        self.duties_pct.iter().map(|d| d / 100.0).collect()
    }

    pub fn trial_count(&self) -> usize {
        self.frequencies_hz.len() * self.duties_pct.len() * self.repetitions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub frequency_hz: f64,
    pub duty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub trials: Vec<Trial>,
}

impl TrialPlan {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

/// Full factorial design × repetitions in a seeded random order.
pub fn generate_trials(config: &SessionConfig) -> TrialPlan {
    let mut combos = Vec::with_capacity(config.trial_count());
    for _ in 0..config.repetitions {
        for &f in &config.frequencies_hz {
            for d in config.duties() {
                combos.push((f, d));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    combos.shuffle(&mut rng);
    TrialPlan {
        trials: combos
            .into_iter()
            .enumerate()
            .map(|(index, (frequency_hz, duty))| Trial {
                index,
                frequency_hz,
                duty,
            })
            .collect(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Session { schema: String, config: SessionConfig },
    Rating(RatingRecord),
}

/// Prompt for the trial to present next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialPrompt {
    pub index: usize,
    pub total: usize,
    pub frequency_hz: f64,
    pub duty: f64,
    pub pattern: PulsePattern,
}

#[derive(Debug)]
pub struct Session {
    config: SessionConfig,
    plan: TrialPlan,
    records: Vec<RatingRecord>,
    log: Option<(PathBuf, File)>,
}

impl Session {
    /// An in-memory session.
    pub fn new(config: SessionConfig) -> Result<Self, SessionError> {
        config.check()?;
        let plan = generate_trials(&config);
        Ok(Self {
            config,
            plan,
            records: Vec::new(),
            log: None,
        })
    }

    /// A session persisted to a new file at `path`.
    pub fn create(config: SessionConfig, path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let mut s = Self::new(config)?;
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().create_new(true).append(true).open(&path)?;
        let header = LogLine::Session {
            schema: SESSION_SCHEMA.into(),
            config: s.config.clone(),
        };
        append_line(&mut file, &header)?;
        s.log = Some((path, file));
        Ok(s)
    }

    /// Reopens a session file and continues at the first unanswered trial.
    /// An unterminated last line, left by a crash mid-write, is dropped.
    pub fn resume(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        let path = path.as_ref().to_path_buf();
        let text = std::fs::read_to_string(&path)?;
        let complete = text.rfind('\n').map_or(0, |k| k + 1);
        let mut lines = text[..complete].lines().filter(|l| !l.trim().is_empty());
        let corrupt = |m: String| SessionError::Corrupt(m);
        let header: LogLine = serde_json::from_str(lines.next().ok_or_else(|| corrupt("empty file".into()))?)
            .map_err(|e| corrupt(e.to_string()))?;
        let config = match header {
            LogLine::Session { schema, config } if schema == SESSION_SCHEMA => config,
            LogLine::Session { schema, .. } => return Err(corrupt(format!("unsupported schema {schema:?}"))),
            LogLine::Rating(_) => return Err(corrupt("missing header".into())),
        };
        let mut s = Self::new(config)?;
        for (n, line) in lines.enumerate() {
            match serde_json::from_str(line).map_err(|e| corrupt(format!("line {}: {e}", n + 2)))? {
                LogLine::Rating(r) => {
                    let expected = s.plan.trials.get(s.records.len()).ok_or_else(|| corrupt("more ratings than trials".into()))?;
                    if r.trial != expected.index || r.frequency_hz != expected.frequency_hz || r.duty != expected.duty {
                        return Err(corrupt(format!("rating for trial {} does not match the plan", r.trial)));
                    }
                    check_rating(r.rating)?;
                    s.records.push(r);
                }
                LogLine::Session { .. } => return Err(corrupt("second header".into())),
            }
        }
        if complete < text.len() {
            OpenOptions::new().write(true).open(&path)?.set_len(complete as u64)?;
        }
        let file = OpenOptions::new().append(true).open(&path)?;
        s.log = Some((path, file));
        Ok(s)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn plan(&self) -> &TrialPlan {
        &self.plan
    }

    pub fn records(&self) -> &[RatingRecord] {
        &self.records
    }

    pub fn path(&self) -> Option<&Path> {
        self.log.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn cursor(&self) -> usize {
        self.records.len()
    }

    pub fn is_complete(&self) -> bool {
        self.cursor() == self.plan.len()
    }

    pub fn current(&self) -> Option<TrialPrompt> {
        self.plan.trials.get(self.cursor()).map(|t| TrialPrompt {
            index: t.index,
            total: self.plan.len(),
            frequency_hz: t.frequency_hz,
            duty: t.duty,
            pattern: PulsePattern::new(self.config.channel, t.frequency_hz, t.duty, self.config.amplitude_ma, self.config.stimulus_ms),
        })
    }

    pub fn record_rating(&mut self, trial: usize, rating: u8) -> Result<&RatingRecord, SessionError> {
        let current = self.current().ok_or(SessionError::Complete)?;
        if trial != current.index {
            return Err(SessionError::OutOfOrder {
                given: trial,
                expected: current.index,
            });
        }
        check_rating(rating).map_err(|_| SessionError::BadRating(rating))?;
        let record = RatingRecord {
            participant_id: self.config.participant_id.clone(),
            trial,
            frequency_hz: current.frequency_hz,
            duty: current.duty,
            rating,
        };
        if let Some((_, file)) = self.log.as_mut() {
            append_line(file, &LogLine::Rating(record.clone()))?;
        }
        self.records.push(record);
        Ok(self.records.last().expect("just pushed"))
    }

    /// Mean ratings per cell of the session grid.
    pub fn aggregate(&self, monotone: bool) -> Result<IntensitySurface, SessionError> {
        Ok(fit_surface_on(&self.records, &self.config.frequencies_hz, &self.config.duties(), monotone)?)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        write_ratings_csv(&self.records, out)
    }
}

fn append_line<T: Serialize>(file: &mut File, line: &T) -> Result<(), SessionError> {
    let mut text = serde_json::to_string(line).map_err(|e| SessionError::Corrupt(e.to_string()))?;
    text.push('\n');
    file.write_all(text.as_bytes())?;
    file.sync_data()?;
    Ok(())
}

/// Reads the ratings of a session file without resuming it.
pub fn read_session_records(path: impl AsRef<Path>) -> Result<Vec<RatingRecord>, SessionError> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if let Ok(LogLine::Rating(r)) = serde_json::from_str(&line) {
            out.push(r);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationResponse {
    Comfortable,
    TooStrong,
    Imperceptible,
}

pub const STAIRCASE_START_MA: f64 = 0.5;
pub const STAIRCASE_STEP_MA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", content = "ma", rename_all = "snake_case")]
pub enum StaircaseStep {
    /// Present this level next.
    Next(f64),
    Done(f64),
}

/// Up on imperceptible, down on too strong, stop on comfortable or after
/// the second reversal. Levels are kept in whole microamperes.
#[derive(Debug, Clone, PartialEq)]
pub struct Staircase {
    level_ua: u32,
    cap_ua: u32,
    last_direction: Option<i8>,
    reversals: Vec<u32>,
    done: Option<u32>,
}

const START_UA: u32 = 500;
const STEP_UA: u32 = 100;

impl Staircase {
    pub fn new(cap_ma: f64) -> Self {
        let cap_ua = (cap_ma.clamp(0.0, HARD_CAP_MA) * 1000.0).floor() as u32;
        Self {
            level_ua: START_UA.min(cap_ua),
            cap_ua,
            last_direction: None,
            reversals: Vec::new(),
            done: None,
        }
    }

    pub fn level_ma(&self) -> f64 {
        self.level_ua as f64 / 1000.0
    }

    pub fn result_ma(&self) -> Option<f64> {
        self.done.map(|ua| ua as f64 / 1000.0)
    }

    pub fn respond(&mut self, response: CalibrationResponse) -> StaircaseStep {
        if let Some(ua) = self.done {
            return StaircaseStep::Done(ua as f64 / 1000.0);
        }
        let direction = match response {
            CalibrationResponse::Comfortable => {
                self.done = Some(self.level_ua);
                return StaircaseStep::Done(self.level_ma());
            }
            CalibrationResponse::Imperceptible => 1,
            CalibrationResponse::TooStrong => -1,
        };
        if self.last_direction.is_some_and(|d| d != direction) {
            self.reversals.push(self.level_ua);
            if self.reversals.len() == 2 {
                let mid = (self.reversals[0] + self.reversals[1]) / 2;
                self.done = Some(mid.min(self.cap_ua));
                return StaircaseStep::Done(self.done.unwrap() as f64 / 1000.0);
            }
        }
        self.last_direction = Some(direction);
        self.level_ua = if direction > 0 {
            (self.level_ua + STEP_UA).min(self.cap_ua)
        } else {
            self.level_ua.saturating_sub(STEP_UA).max(STEP_UA.min(self.cap_ua))
        };
        StaircaseStep::Next(self.level_ma())
    }
}

/// Runs the staircase over a response sequence.
pub fn calibrate_amplitude(responses: impl IntoIterator<Item = CalibrationResponse>, cap_ma: f64) -> Result<f64, SessionError> {
    let mut s = Staircase::new(cap_ma);
    for r in responses {
        if let StaircaseStep::Done(ma) = s.respond(r) {
            return Ok(ma);
        }
    }
    Err(SessionError::CalibrationAborted)
}
