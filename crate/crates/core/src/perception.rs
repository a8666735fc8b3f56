//! Perceived intensity over the frequency × duty grid.
//!
//! A surface holds one mean rating per grid cell. Queries interpolate
//! bilinearly in (log10 frequency, duty), and [`invert`] searches a 50×50
//! refinement for parameters that reach a target level.

use std::io;

use serde::{Deserialize, Serialize};

use crate::stimulator::{charge_per_period, PulsePattern};

pub const STUDY_FREQUENCIES_HZ: [f64; 5] = [10.0, 25.0, 50.0, 100.0, 500.0];
pub const STUDY_DUTIES: [f64; 5] = [0.02, 0.05, 0.10, 0.25, 0.50];
pub const SURFACE_SCHEMA: &str = "surface/1";

/// Category names of the five rating levels, level 1 first.
pub const LEVEL_NAMES: [&str; 5] = ["No feeling", "Faint feeling", "Moderate feeling", "Slight discomfort", "Pain"];

/// Half-width of the band accepted by [`invert`], in levels.
pub const INVERT_TOLERANCE: f64 = 0.25;
pub const REFINEMENT: usize = 50;

const PROJECTION_EPS: f64 = 1e-9;
const MAX_SWEEPS: usize = 1000;
const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerceptionError {
    #[error("no ratings for {frequency_hz} Hz at duty {duty}")]
    MissingCell { frequency_hz: f64, duty: f64 },
    #[error("rating {0} outside 1..=5")]
    BadRating(u8),
    #[error("record at {frequency_hz} Hz, duty {duty} is not on the grid")]
    OffGrid { frequency_hz: f64, duty: f64 },
    #[error("query ({frequency_hz} Hz, duty {duty}) outside the surface domain")]
    OutOfDomain { frequency_hz: f64, duty: f64 },
    #[error("level {target} cannot be reached (surface spans {min}..{max})")]
    TargetUnreachable { target: f64, min: f64, max: f64 },
    #[error("invalid grid: {0}")]
    BadGrid(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl PerceptionError {
    pub fn kind(&self) -> &'static str {
        match self {
            PerceptionError::MissingCell { .. } => "MissingCell",
            PerceptionError::BadRating(_) => "BadRating",
            PerceptionError::OffGrid { .. } => "OffGrid",
            PerceptionError::OutOfDomain { .. } => "OutOfDomain",
            PerceptionError::TargetUnreachable { .. } => "TargetUnreachable",
            PerceptionError::BadGrid(_) => "BadGrid",
            PerceptionError::Parse(_) => "Parse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub participant_id: String,
    pub trial: usize,
    pub frequency_hz: f64,
    pub duty: f64,
    pub rating: u8,
}

impl RatingRecord {
    pub fn level_name(&self) -> &'static str {
        LEVEL_NAMES[(self.rating.clamp(1, 5) - 1) as usize]
    }
}

pub fn check_rating(rating: u8) -> Result<u8, PerceptionError> {
    if (1..=5).contains(&rating) {
        Ok(rating)
    } else {
        Err(PerceptionError::BadRating(rating))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    participant_id: String,
    trial: usize,
    frequency_hz: f64,
    duty_pct: f64,
    rating: u8,
    #[serde(default)]
    category: String,
}

/// Writes the ratings CSV (`participant_id,trial,frequency_hz,duty_pct,rating`)
/// with the level's category name as a trailing column.
pub fn write_ratings_csv<W: io::Write>(records: &[RatingRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRow {
            participant_id: r.participant_id.clone(),
            trial: r.trial,
            frequency_hz: r.frequency_hz,
            // Rounded so 0.07 prints as 7, not 7.000000000000001.
            duty_pct: (r.duty * 100.0 * 1e9).round() / 1e9,
            rating: r.rating,
            category: r.level_name().into(),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ratings_csv<R: io::Read>(input: R) -> Result<Vec<RatingRecord>, PerceptionError> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in rd.deserialize::<CsvRow>() {
        let row = row.map_err(|e| PerceptionError::Parse(e.to_string()))?;
        out.push(RatingRecord {
            participant_id: row.participant_id,
            trial: row.trial,
            frequency_hz: row.frequency_hz,
            duty: row.duty_pct / 100.0,
            rating: check_rating(row.rating)?,
        });
    }
    Ok(out)
}

/// Mean ratings on a frequency × duty grid; `values[i][j]` belongs to
/// `frequencies_hz[i]` and `duties[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensitySurface {
    pub frequencies_hz: Vec<f64>,
    pub duties: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Set on surfaces that were not fitted from real ratings.
    #[serde(default)]
    pub synthetic: bool,
}

fn check_axis(name: &str, axis: &[f64], lower: f64) -> Result<(), PerceptionError> {
    if axis.is_empty() {
        return Err(PerceptionError::BadGrid(format!("{name} axis is empty")));
    }
    if axis.iter().any(|v| !v.is_finite() || *v <= lower) {
        return Err(PerceptionError::BadGrid(format!("{name} axis has a value out of range")));
    }
    if axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PerceptionError::BadGrid(format!("{name} axis is not strictly increasing")));
    }
    Ok(())
}

impl IntensitySurface {
    pub fn new(frequencies_hz: Vec<f64>, duties: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, PerceptionError> {
        let s = Self {
            frequencies_hz,
            duties,
            values,
            synthetic: false,
        };
        s.check()?;
        Ok(s)
    }

    pub fn check(&self) -> Result<(), PerceptionError> {
        check_axis("frequency", &self.frequencies_hz, 0.0)?;
        check_axis("duty", &self.duties, 0.0)?;
        if self.duties.iter().any(|d| *d >= 1.0) {
            return Err(PerceptionError::BadGrid("duty axis must stay below 1".into()));
        }
        if self.values.len() != self.frequencies_hz.len() || self.values.iter().any(|r| r.len() != self.duties.len()) {
            return Err(PerceptionError::BadGrid("value matrix does not match the axes".into()));
        }
        if self.values.iter().flatten().any(|v| !(1.0..=5.0).contains(v)) {
            return Err(PerceptionError::BadGrid("values must lie in [1, 5]".into()));
        }
        Ok(())
    }

    /// A hand-made surface with the reported ordering: stronger at low
    /// frequency and high duty. Not measured data.
    pub fn synthetic_default() -> Self {
        let values = STUDY_FREQUENCIES_HZ
            .iter()
            .map(|&f| STUDY_DUTIES.iter().map(|&d| synthetic_level(f, d)).collect())
            .collect();
        Self {
            frequencies_hz: STUDY_FREQUENCIES_HZ.to_vec(),
            duties: STUDY_DUTIES.to_vec(),
            values,
            synthetic: true,
        }
    }

    pub fn value(&self, fi: usize, dj: usize) -> f64 {
        self.values[fi][dj]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// True when the values fall with frequency and rise with duty.
    pub fn is_monotone(&self, tolerance: f64) -> bool {
        let (n, m) = (self.frequencies_hz.len(), self.duties.len());
        (0..n).all(|i| (0..m).all(|j| {
            (i + 1 >= n || self.values[i + 1][j] <= self.values[i][j] + tolerance)
                && (j + 1 >= m || self.values[i][j + 1] + tolerance >= self.values[i][j])
        }))
    }

    pub fn frequency_range(&self) -> (f64, f64) {
        (self.frequencies_hz[0], *self.frequencies_hz.last().unwrap())
    }

    pub fn duty_range(&self) -> (f64, f64) {
        (self.duties[0], *self.duties.last().unwrap())
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct File<'a> {
            schema: &'static str,
            #[serde(flatten)]
            surface: &'a IntensitySurface,
        }
        serde_json::to_string_pretty(&File {
            schema: SURFACE_SCHEMA,
            surface: self,
        })
        .expect("surface serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PerceptionError> {
        #[derive(Deserialize)]
        struct File {
            schema: String,
            #[serde(flatten)]
            surface: IntensitySurface,
        }
        let f: File = serde_json::from_str(text).map_err(|e| PerceptionError::Parse(e.to_string()))?;
        if f.schema != SURFACE_SCHEMA {
            return Err(PerceptionError::Parse(format!("unsupported schema {:?}", f.schema)));
        }
        f.surface.check()?;
        Ok(f.surface)
    }
}

fn synthetic_level(frequency_hz: f64, duty: f64) -> f64 {
    let (f0, f1) = (STUDY_FREQUENCIES_HZ[0].log10(), STUDY_FREQUENCIES_HZ[4].log10());
    let (d0, d1) = (STUDY_DUTIES[0], STUDY_DUTIES[4]);
    let slow = (f1 - frequency_hz.log10()) / (f1 - f0);
    let wide = ((duty - d0) / (d1 - d0)).sqrt();
    let level = 1.0 + 4.0 * (0.45 * slow + 0.55 * wide);
    (level * 100.0).round() / 100.0
}

fn axis_index(axis: &[f64], v: f64) -> Option<usize> {
    axis.iter().position(|a| (a - v).abs() <= GRID_EPS * a.abs().max(1.0))
}

/// Cell means on the study grid.
pub fn fit_surface(records: &[RatingRecord], monotone: bool) -> Result<IntensitySurface, PerceptionError> {
    fit_surface_on(records, &STUDY_FREQUENCIES_HZ, &STUDY_DUTIES, monotone)
}

/// Cell means on an arbitrary grid ("free-grid" data).
pub fn fit_surface_on(
    records: &[RatingRecord],
    frequencies_hz: &[f64],
    duties: &[f64],
    monotone: bool,
) -> Result<IntensitySurface, PerceptionError> {
    check_axis("frequency", frequencies_hz, 0.0)?;
    check_axis("duty", duties, 0.0)?;
    let (n, m) = (frequencies_hz.len(), duties.len());
    let mut sums = vec![vec![0.0; m]; n];
    let mut counts = vec![vec![0usize; m]; n];
    for r in records {
        check_rating(r.rating)?;
        let off = || PerceptionError::OffGrid {
            frequency_hz: r.frequency_hz,
            duty: r.duty,
        };
        let i = axis_index(frequencies_hz, r.frequency_hz).ok_or_else(off)?;
        let j = axis_index(duties, r.duty).ok_or_else(off)?;
        sums[i][j] += r.rating as f64;
        counts[i][j] += 1;
    }
    let mut values = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            if counts[i][j] == 0 {
                return Err(PerceptionError::MissingCell {
                    frequency_hz: frequencies_hz[i],
                    duty: duties[j],
                });
            }
            values[i][j] = sums[i][j] / counts[i][j] as f64;
        }
    }
    if monotone {
        values = monotone_projection(&values);
    }
    IntensitySurface::new(frequencies_hz.to_vec(), duties.to_vec(), values)
}

/// Pool-adjacent-violators: least-squares non-decreasing fit, equal weights.
pub fn isotonic_increasing(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let k = blocks.len() - 1;
            blocks[k] = ((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb);
        }
    }
    blocks.into_iter().flat_map(|(v, n)| std::iter::repeat_n(v, n)).collect()
}

fn project_columns(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    // Along frequency: non-increasing, i.e. increasing on the reversed column.
    let (n, m) = (x.len(), x[0].len());
    let mut out = x.to_vec();
    for j in 0..m {
        let col: Vec<f64> = (0..n).rev().map(|i| x[i][j]).collect();
        for (k, v) in isotonic_increasing(&col).into_iter().enumerate() {
            out[n - 1 - k][j] = v;
        }
    }
    out
}

fn project_rows(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter().map(|row| isotonic_increasing(row)).collect()
}

/// Least-squares projection onto matrices that fall along frequency and rise
/// along duty: alternating row and column isotonic fits with Dykstra's
/// correction terms, so the limit is the nearest point, not just a
/// feasible one.
pub fn monotone_projection(y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    if y.is_empty() || y[0].is_empty() {
        return y.to_vec();
    }
    let zero = vec![vec![0.0; y[0].len()]; y.len()];
    let (mut x, mut p, mut q) = (y.to_vec(), zero.clone(), zero);
    let add = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(u, v)| u + v).collect()).collect()
    };
    let sub = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Vec<Vec<f64>> {
        a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(u, v)| u - v).collect()).collect()
    };
    for _ in 0..MAX_SWEEPS {
        let xp = add(&x, &p);
        let r = project_rows(&xp);
        p = sub(&xp, &r);
        let rq = add(&r, &q);
        let next = project_columns(&rq);
        q = sub(&rq, &next);
        let change = next
            .iter()
            .flatten()
            .zip(x.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = next;
        if change < PROJECTION_EPS {
            break;
        }
    }
    // Rows are only within a few sweep tolerances here. A running max along
    // duty, then a running min along frequency, makes both orders exact
    // (a min of non-decreasing rows is non-decreasing) and moves no cell
    // by more than the leftover violation.
    let m = x[0].len();
    for row in &mut x {
        for j in 1..m {
            row[j] = row[j].max(row[j - 1]);
        }
    }
    for i in 1..x.len() {
        for j in 0..m {
            x[i][j] = x[i][j].min(x[i - 1][j]);
        }
    }
    x.iter().map(|r| r.iter().map(|v| v.clamp(1.0, 5.0)).collect()).collect()
}

fn bracket(axis: &[f64], v: f64) -> (usize, f64) {
    if axis.len() == 1 {
        return (0, 0.0);
    }
    let k = axis.partition_point(|a| *a <= v).clamp(1, axis.len() - 1) - 1;
    let t = ((v - axis[k]) / (axis[k + 1] - axis[k])).clamp(0.0, 1.0);
    (k, t)
}

/// Bilinear interpolation in (log10 frequency, duty).
pub fn predict(surface: &IntensitySurface, frequency_hz: f64, duty: f64) -> Result<f64, PerceptionError> {
    let (f0, f1) = surface.frequency_range();
    let (d0, d1) = surface.duty_range();
    let inside = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo * (1.0 - GRID_EPS) && v <= hi * (1.0 + GRID_EPS);
    if !inside(frequency_hz, f0, f1) || !inside(duty, d0, d1) {
        return Err(PerceptionError::OutOfDomain { frequency_hz, duty });
    }
    let logs: Vec<f64> = surface.frequencies_hz.iter().map(|f| f.log10()).collect();
    let (i, s) = bracket(&logs, frequency_hz.log10());
    let (j, t) = bracket(&surface.duties, duty);
    let v = |a: usize, b: usize| surface.values[a.min(logs.len() - 1)][b.min(surface.duties.len() - 1)];
    Ok((1.0 - s) * ((1.0 - t) * v(i, j) + t * v(i, j + 1)) + s * ((1.0 - t) * v(i + 1, j) + t * v(i + 1, j + 1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Preference {
    LowestCharge,
    NearestTo { frequency_hz: f64, duty: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub frequency_hz: f64,
    pub duty: f64,
    pub predicted: f64,
}

/// Nodes of the refinement grid: log-spaced frequencies, linear duties.
pub fn refinement_axes(surface: &IntensitySurface) -> (Vec<f64>, Vec<f64>) {
    let (f0, f1) = surface.frequency_range();
    let (d0, d1) = surface.duty_range();
    let step = |k: usize| if REFINEMENT > 1 { k as f64 / (REFINEMENT - 1) as f64 } else { 0.0 };
    let freqs = (0..REFINEMENT)
        .map(|k| if k + 1 == REFINEMENT { f1 } else { 10f64.powf(f0.log10() + step(k) * (f1.log10() - f0.log10())) })
        .collect();
    let duties = (0..REFINEMENT).map(|k| if k + 1 == REFINEMENT { d1 } else { d0 + step(k) * (d1 - d0) }).collect();
    (freqs, duties)
}

/// Parameters whose predicted level is within [`INVERT_TOLERANCE`] of
/// `target`, picked by `preference`.
pub fn invert(surface: &IntensitySurface, target: f64, preference: Preference) -> Result<OperatingPoint, PerceptionError> {
    let (min, max) = (surface.min(), surface.max());
    let unreachable = PerceptionError::TargetUnreachable { target, min, max };
    if !(target.is_finite() && target >= min && target <= max) {
        return Err(unreachable);
    }
    let (freqs, duties) = refinement_axes(surface);
    let (lf0, lf1) = (freqs[0].log10(), freqs[freqs.len() - 1].log10());
    let (d0, d1) = (duties[0], duties[duties.len() - 1]);
    let norm = |f: f64, d: f64| {
        let u = if lf1 > lf0 { (f.log10() - lf0) / (lf1 - lf0) } else { 0.0 };
        let v = if d1 > d0 { (d - d0) / (d1 - d0) } else { 0.0 };
        (u, v)
    };
    let charge = |f: f64, d: f64| charge_per_period(&PulsePattern::new(0, f, d, 1.0, 1.0));
    let cost = |f: f64, d: f64| -> (f64, f64) {
        match preference {
            Preference::LowestCharge => (charge(f, d), 0.0),
            Preference::NearestTo { frequency_hz, duty } => {
                let (u0, v0) = norm(frequency_hz.clamp(freqs[0], freqs[freqs.len() - 1]), duty.clamp(d0, d1));
                let (u, v) = norm(f, d);
                ((u - u0).hypot(v - v0), charge(f, d))
            }
        }
    };
    let mut best: Option<((f64, f64), OperatingPoint)> = None;
    for &f in freqs.iter().rev() {
        for &d in &duties {
            let level = predict(surface, f, d)?;
            if (level - target).abs() > INVERT_TOLERANCE {
                continue;
            }
            let c = cost(f, d);
            // Strict improvement only: scanning from the highest frequency
            // and lowest duty settles ties on that corner.
            if best.as_ref().is_none_or(|(bc, _)| c.0 < bc.0 - 1e-15 || (c.0 <= bc.0 + 1e-15 && c.1 < bc.1 - 1e-15)) {
                best = Some((
                    c,
                    OperatingPoint {
                        frequency_hz: f,
                        duty: d,
                        predicted: level,
                    },
                ));
            }
        }
    }
    best.map(|(_, p)| p).ok_or(unreachable)
}
