//! Hourly wind-speed series: ingestion, seasonal slicing, min-max scaling
//! and sliding windows.
//!
//! Two CSV layouts are accepted. The raw NASA POWER hourly export has a
//! `-BEGIN HEADER-` / `-END HEADER-` preamble followed by
//! `YEAR,MO,DY,HR,WS10M` rows. The canonical layout written by this crate is
//!
//! ```text
//! timestamp,ws10m
//! 2021-06-01T00:00:00Z,3.41
//! ```
//!
//! Timestamps are UTC. Gaps, duplicates and the POWER fill value `-999` are
//! rejected rather than imputed.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, NaiveDate, TimeZone, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::tensor::Array;

type Result<T> = std::result::Result<T, DataError>;

/// Site used in the study (Chattogram coast).
pub const SITE_LAT: f64 = 22.2352;
pub const SITE_LON: f64 = 91.7914;
pub const FILL_VALUE: f64 = -999.0;
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";
pub const CANONICAL_HEADER: &str = "timestamp,ws10m";

/// Contiguous hourly wind speeds at 10 m, in m/s.
#[derive(Clone, Debug, PartialEq)]
pub struct WindSeries {
    timestamps: Vec<DateTime<Utc>>,
    speeds: Vec<f64>,
    pub source: String,
    pub lat: f64,
    pub lon: f64,
}

impl WindSeries {
    /// Validates hourly spacing and non-negative, finite speeds. Row numbers
    /// in errors are 1-based positions in `speeds`.
    pub fn new(
        timestamps: Vec<DateTime<Utc>>,
        speeds: Vec<f64>,
        source: impl Into<String>,
    ) -> Result<Self> {
        if timestamps.len() != speeds.len() {
            return Err(DataError::Range(format!(
                "{} timestamps for {} speeds",
                timestamps.len(),
                speeds.len()
            )));
        }
        validate_rows(&timestamps, &speeds, |i| i + 1)?;
        Ok(Self {
            timestamps,
            speeds,
            source: source.into(),
            lat: SITE_LAT,
            lon: SITE_LON,
        })
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    pub fn timestamps(&self) -> &[DateTime<Utc>] {
        &self.timestamps
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn first(&self) -> Option<DateTime<Utc>> {
        self.timestamps.first().copied()
    }

    pub fn last(&self) -> Option<DateTime<Utc>> {
        self.timestamps.last().copied()
    }

    /// Sub-series over `range` (indices).
    pub fn slice(&self, range: std::ops::Range<usize>) -> WindSeries {
        WindSeries {
            timestamps: self.timestamps[range.clone()].to_vec(),
            speeds: self.speeds[range].to_vec(),
            source: self.source.clone(),
            lat: self.lat,
            lon: self.lon,
        }
    }

    /// Last `n` hours.
    pub fn tail(&self, n: usize) -> Result<WindSeries> {
        if n > self.len() {
            return Err(DataError::Range(format!(
                "asked for the last {n} hours of a {}-hour series",
                self.len()
            )));
        }
        Ok(self.slice(self.len() - n..self.len()))
    }

    /// Canonical CSV text.
    pub fn to_canonical_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.len() + 1));
        out.push_str(CANONICAL_HEADER);
        out.push('\n');
        for (t, v) in self.timestamps.iter().zip(&self.speeds) {
            out.push_str(&format!("{},{}\n", t.format(TIMESTAMP_FORMAT), v));
        }
        out
    }

    pub fn write_canonical_csv(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_canonical_csv().as_bytes())?;
        Ok(())
    }
}

fn validate_rows(
    timestamps: &[DateTime<Utc>],
    speeds: &[f64],
    row_of: impl Fn(usize) -> usize,
) -> Result<()> {
    for (i, &v) in speeds.iter().enumerate() {
        let row = row_of(i);
        if v == FILL_VALUE {
            return Err(DataError::Ingest { row, msg: "fill value -999 (missing data)".into() });
        }
        if !v.is_finite() || v < 0.0 {
            return Err(DataError::Ingest { row, msg: format!("invalid wind speed {v}") });
        }
        if i > 0 {
            let step = timestamps[i] - timestamps[i - 1];
            if step <= Duration::zero() {
                return Err(DataError::NonMonotonic { row });
            }
            if step != Duration::hours(1) {
                return Err(DataError::Ingest {
                    row,
                    msg: format!(
                        "gap of {} minutes after {}",
                        step.num_minutes(),
                        timestamps[i - 1].format(TIMESTAMP_FORMAT)
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Reads either CSV layout from disk.
pub fn parse_power_csv(path: &Path) -> Result<WindSeries> {
    let text = fs::read_to_string(path)?;
    parse_power_str(&text, &path.display().to_string())
}

/// Parses CSV text. Error rows are 1-based line numbers in `text`.
pub fn parse_power_str(text: &str, source: &str) -> Result<WindSeries> {
    let (skipped, body) = match text.find("-END HEADER-") {
        Some(pos) => {
            let after = text[pos..].find('\n').map_or(text.len(), |n| pos + n + 1);
            (text[..after].lines().count(), &text[after..])
        }
        None => (0, text),
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_uppercase()).collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let canonical = headers.iter().any(|h| h == "TIMESTAMP");
    let cols = if canonical {
        vec![col("TIMESTAMP")?, col("WS10M")?]
    } else {
        vec![col("YEAR")?, col("MO")?, col("DY")?, col("HR")?, col("WS10M")?]
    };

    let mut timestamps = Vec::new();
    let mut speeds = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = skipped + rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(cols[i]).unwrap_or("");
        let bad = |msg: String| DataError::Ingest { row: line, msg };
        let ts = if canonical {
            DateTime::parse_from_rfc3339(field(0))
                .map_err(|e| bad(format!("timestamp `{}`: {e}", field(0))))?
                .with_timezone(&Utc)
        } else {
            let num = |i: usize| -> Result<u32> {
                field(i).parse().map_err(|_| bad(format!("bad integer `{}`", field(i))))
            };
            let year = field(0).parse::<i32>().map_err(|_| bad(format!("bad year `{}`", field(0))))?;
            Utc.with_ymd_and_hms(year, num(1)?, num(2)?, num(3)?, 0, 0)
                .single()
                .ok_or_else(|| bad("invalid calendar date".into()))?
        };
        let ws_field = field(cols.len() - 1);
        let ws: f64 = ws_field
            .parse()
            .map_err(|_| bad(format!("bad wind speed `{ws_field}`")))?;
        timestamps.push(ts);
        speeds.push(ws);
        lines.push(line);
    }
    validate_rows(&timestamps, &speeds, |i| lines[i])?;
    Ok(WindSeries {
        timestamps,
        speeds,
        source: source.to_string(),
        lat: SITE_LAT,
        lon: SITE_LON,
    })
}

/// The six seasons of the Bangladeshi calendar, each running from the 15th
/// of its first month to the 14th two months later.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Season {
    Summer,
    Rainy,
    Autumn,
    LateAutumn,
    Winter,
    Spring,
}

/// Inclusive `(month, day)` boundaries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeasonSpec {
    pub season: Season,
    pub start: (u32, u32),
    pub end: (u32, u32),
}

impl Season {
    pub const ALL: [Season; 6] = [
        Season::Summer,
        Season::Rainy,
        Season::Autumn,
        Season::LateAutumn,
        Season::Winter,
        Season::Spring,
    ];

    pub fn spec(self) -> SeasonSpec {
        let (start, end) = match self {
            Season::Summer => ((4, 15), (6, 14)),
            Season::Rainy => ((6, 15), (8, 14)),
            Season::Autumn => ((8, 15), (10, 14)),
            Season::LateAutumn => ((10, 15), (12, 14)),
            Season::Winter => ((12, 15), (2, 14)),
            Season::Spring => ((2, 15), (4, 14)),
        };
        SeasonSpec { season: self, start, end }
    }

    pub fn name(self) -> &'static str {
        match self {
            Season::Summer => "summer",
            Season::Rainy => "rainy",
            Season::Autumn => "autumn",
            Season::LateAutumn => "late_autumn",
            Season::Winter => "winter",
            Season::Spring => "spring",
        }
    }

    pub fn parse(s: &str) -> Result<Season> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Season::ALL
            .into_iter()
            .find(|season| season.name().replace('_', "") == key)
            .ok_or_else(|| DataError::UnknownSeason(s.to_string()))
    }

    /// Season containing `t`.
    pub fn of(t: DateTime<Utc>) -> Season {
        let md = (t.month(), t.day());
        Season::ALL
            .into_iter()
            .find(|s| s.spec().contains(md))
            .expect("seasons tile the year")
    }
}

impl fmt::Display for Season {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl SeasonSpec {
    fn contains(&self, md: (u32, u32)) -> bool {
        if self.start <= self.end {
            self.start <= md && md <= self.end
        } else {
            md >= self.start || md <= self.end
        }
    }

    /// First and last hour of the season that starts in `year`. Winter
    /// starting in December ends in February of the following year.
    pub fn span(&self, year: i32) -> Result<(DateTime<Utc>, DateTime<Utc>)> {
        let end_year = if self.end < self.start { year + 1 } else { year };
        let date = |y: i32, (m, d): (u32, u32)| {
            NaiveDate::from_ymd_opt(y, m, d)
                .ok_or_else(|| DataError::Range(format!("no date {y}-{m}-{d}")))
        };
        let start = date(year, self.start)?.and_hms_opt(0, 0, 0).unwrap().and_utc();
        let end = date(end_year, self.end)?.and_hms_opt(23, 0, 0).unwrap().and_utc();
        Ok((start, end))
    }
}

/// Sub-series covering exactly the season starting in `year`.
pub fn season_slice(series: &WindSeries, season: Season, year: i32) -> Result<WindSeries> {
    let (start, end) = season.spec().span(year)?;
    let (Some(first), Some(last)) = (series.first(), series.last()) else {
        return Err(DataError::Range("empty series".into()));
    };
    if first > start || last < end {
        return Err(DataError::Range(format!(
            "{season} {year} needs {} .. {}, series covers {} .. {}",
            start.format(TIMESTAMP_FORMAT),
            end.format(TIMESTAMP_FORMAT),
            first.format(TIMESTAMP_FORMAT),
            last.format(TIMESTAMP_FORMAT)
        )));
    }
    let i0 = (start - first).num_hours() as usize;
    let i1 = (end - first).num_hours() as usize + 1;
    Ok(series.slice(i0..i1))
}

/// Min-max scaling bounds in m/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl ScalerParams {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(DataError::DegenerateScaler(min));
        }
        Ok(Self { min, max })
    }

    pub fn forward(&self, x: f64) -> f64 {
        (x - self.min) / (self.max - self.min)
    }

    pub fn inverse(&self, y: f64) -> f64 {
        y * (self.max - self.min) + self.min
    }

    pub fn apply(&self, xs: &[f64], dir: Direction) -> Vec<f64> {
        match dir {
            Direction::Forward => xs.iter().map(|&x| self.forward(x)).collect(),
            Direction::Inverse => xs.iter().map(|&y| self.inverse(y)).collect(),
        }
    }
}

pub fn fit_minmax(values: &[f64]) -> Result<ScalerParams> {
    if values.is_empty() {
        return Err(DataError::Range("cannot fit a scaler on an empty series".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Err(DataError::DegenerateScaler(min));
    }
    ScalerParams::new(min, max)
}

pub fn apply_minmax(values: &[f64], params: &ScalerParams, dir: Direction) -> Vec<f64> {
    params.apply(values, dir)
}

/// Supervised pairs cut from a series: row `i` of `inputs` covers
/// `starts[i] .. starts[i] + T` and row `i` of `targets` the next `H` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub inputs: Array,
    pub targets: Array,
    pub starts: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn lookback(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn horizon(&self) -> usize {
        self.targets.shape()[1]
    }

    pub fn select(&self, idx: &[usize]) -> WindowSet {
        WindowSet {
            inputs: self.inputs.select_rows(idx),
            targets: self.targets.select_rows(idx),
            starts: idx.iter().map(|&i| self.starts[i]).collect(),
        }
    }
}

/// Every stride-1 window: `len − T − H + 1` of them.
pub fn make_windows(values: &[f64], lookback: usize, horizon: usize) -> Result<WindowSet> {
    let span = lookback + horizon;
    if lookback == 0 || horizon == 0 || values.len() < span {
        return Err(DataError::Range(format!(
            "series of length {} is shorter than T + H = {span}",
            values.len()
        )));
    }
    let n = values.len() - span + 1;
    let mut inputs = Vec::with_capacity(n * lookback);
    let mut targets = Vec::with_capacity(n * horizon);
    for s in 0..n {
        inputs.extend_from_slice(&values[s..s + lookback]);
        targets.extend_from_slice(&values[s + lookback..s + span]);
    }
    Ok(WindowSet {
        inputs: Array::new(vec![n, lookback], inputs).expect("sized above"),
        targets: Array::new(vec![n, horizon], targets).expect("sized above"),
        starts: (0..n).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Population standard deviation and extrema.
pub fn series_stats(values: &[f64]) -> Result<SeriesStats> {
    if values.is_empty() {
        return Err(DataError::Range("statistics of an empty series".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(SeriesStats {
        std: var.sqrt(),
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Fraction of training windows held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.1;

/// Train / validation / test partition of one season.
///
/// The last `T + H` hours form the single test window. Everything before
/// them is training data: the scaler is fit on those rows, they are cut into
/// windows, and the chronologically last 10% of those windows validate.
#[derive(Clone, Debug)]
pub struct SeasonSplit {
    pub scaler: ScalerParams,
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    /// Timestamp of the first forecast hour of the test window.
    pub test_target_start: DateTime<Utc>,
    /// Hours preceding the test window.
    pub train_rows: usize,
}

pub fn split_season(series: &WindSeries, lookback: usize, horizon: usize) -> Result<SeasonSplit> {
    let span = lookback + horizon;
    let n = series.len();
    if n < 2 * span {
        return Err(DataError::Range(format!(
            "need at least 2·(T + H) = {} hours for a train and test window, got {n}",
            2 * span
        )));
    }
    let train_rows = n - span;
    let raw = series.speeds();
    let scaler = fit_minmax(&raw[..train_rows])?;
    let scaled = scaler.apply(raw, Direction::Forward);

    let all = make_windows(&scaled[..train_rows], lookback, horizon)?;
    let n_val = ((all.len() as f64 * VALIDATION_FRACTION).round() as usize).min(all.len() - 1);
    let n_train = all.len() - n_val;
    let train = all.select(&(0..n_train).collect::<Vec<_>>());
    let val = all.select(&(n_train..all.len()).collect::<Vec<_>>());

    let mut test = make_windows(&scaled[train_rows..], lookback, horizon)?;
    test.starts = vec![train_rows];
    Ok(SeasonSplit {
        scaler,
        train,
        val,
        test,
        test_target_start: series.timestamps()[n - horizon],
        train_rows,
    })
}

/// Seeded sine wave plus Gaussian noise around a 5 m/s mean, clamped at 0,
/// hourly from `start`.
pub fn synthetic_sine(
    hours: usize,
    period: f64,
    amplitude: f64,
    noise: f64,
    seed: u64,
    start: DateTime<Utc>,
) -> WindSeries {
    const LEVEL: f64 = 5.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise.max(0.0)).expect("finite noise level");
    let speeds = (0..hours)
        .map(|t| {
            let clean = LEVEL + amplitude * (2.0 * std::f64::consts::PI * t as f64 / period).sin();
            (clean + normal.sample(&mut rng)).max(0.0)
        })
        .collect();
    let timestamps = (0..hours).map(|t| start + Duration::hours(t as i64)).collect();
    WindSeries {
        timestamps,
        speeds,
        source: format!("synthetic:sine:period={period}:noise={noise}:seed={seed}"),
        lat: SITE_LAT,
        lon: SITE_LON,
    }
}

/// Hour-aligned UTC timestamp helper.
pub fn utc_hour(year: i32, month: u32, day: u32, hour: u32) -> Option<DateTime<Utc>> {
    Utc.with_ymd_and_hms(year, month, day, hour, 0, 0).single()
}
