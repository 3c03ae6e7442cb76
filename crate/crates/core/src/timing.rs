//! Absolute time: video start times from filenames, OCR timestamp repair and
//! series validation, and conversion of annotation offsets.
//!
//! All timestamps are naive local wall-clock times; no timezone is attached
//! or assumed. They are held as milliseconds since 1970-01-01T00:00:00.

use std::fmt;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Origin, Result};
use crate::ethogram::find_column;

/// Naive wall-clock timestamp at millisecond precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

pub const CANONICAL_FORMAT: &str = "%Y-%m-%d %H:%M:%S";
const ISO_MS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S%.3fZ";

impl Timestamp {
    pub fn from_naive(dt: NaiveDateTime) -> Self {
        Timestamp(dt.and_utc().timestamp_millis())
    }

    pub fn to_naive(self) -> NaiveDateTime {
        DateTime::from_timestamp_millis(self.0)
            .expect("timestamp within chrono range")
            .naive_utc()
    }

    pub fn millis(self) -> i64 {
        self.0
    }

    pub fn seconds_f64(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Parses `YYYY-MM-DD HH:MM:SS`.
    pub fn parse_canonical(s: &str) -> Result<Self> {
        NaiveDateTime::parse_from_str(s, CANONICAL_FORMAT)
            .map(Self::from_naive)
            .map_err(|e| Error::Parse { input: s.to_string(), message: e.to_string() })
    }

    /// Parses ISO-8601 with optional fractional seconds and optional `Z`,
    /// or the canonical space-separated form.
    pub fn parse_flexible(s: &str) -> Result<Self> {
        let t = s.trim().trim_end_matches('Z');
        for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
            if let Ok(dt) = NaiveDateTime::parse_from_str(t, fmt) {
                return Ok(Self::from_naive(dt));
            }
        }
        Err(Error::Parse { input: s.to_string(), message: "not an ISO-8601 timestamp".into() })
    }

    /// `YYYY-MM-DD HH:MM:SS`, truncating milliseconds.
    pub fn canonical(self) -> String {
        self.to_naive().format(CANONICAL_FORMAT).to_string()
    }

    /// `YYYY-MM-DDTHH:MM:SS.mmmZ`. The `Z` is part of the column format; the
    /// value is still naive local time.
    pub fn iso_millis(self) -> String {
        self.to_naive().format(ISO_MS_FORMAT).to_string()
    }

    pub fn plus_millis(self, ms: i64) -> Self {
        Timestamp(self.0 + ms)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.iso_millis())
    }
}

/// `start + seconds`, exact at millisecond precision.
pub fn annotation_to_absolute(video_start: Timestamp, seconds: f64) -> Result<Timestamp> {
    if !seconds.is_finite() || seconds < 0.0 {
        return Err(Error::Range(format!("annotation offset must be a non-negative number of seconds, got {seconds}")));
    }
    Ok(video_start.plus_millis((seconds * 1000.0).round() as i64))
}

/// Same as [`annotation_to_absolute`] for offsets already in tenths.
pub fn tenths_to_absolute(video_start: Timestamp, tenths: i64) -> Result<Timestamp> {
    if tenths < 0 {
        return Err(Error::Range(format!("annotation offset must be non-negative, got {tenths} tenths")));
    }
    Ok(video_start.plus_millis(tenths * 100))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoDescriptor {
    pub farm: String,
    pub camera: String,
    pub start_time: Timestamp,
    pub source: String,
}

const CONTAINER_EXTENSIONS: &[&str] = &["mp4", "avi", "mov", "mkv", "m4v", "mts", "h264", "ts"];

/// Parses `Farm_Camera_YYYYMMDD_HHMMSS.<ext>`.
///
/// Date and time are the two rightmost underscore fields; the rest is split
/// at its last underscore, so farm names may themselves contain underscores.
pub fn parse_video_filename(name: &str) -> Result<VideoDescriptor> {
    let file = Path::new(name)
        .file_name()
        .and_then(|f| f.to_str())
        .unwrap_or(name);
    let (stem, ext) = file.rsplit_once('.').ok_or_else(|| parse_err(name, "missing container extension"))?;
    if !CONTAINER_EXTENSIONS.contains(&ext.to_ascii_lowercase().as_str()) {
        return Err(parse_err(name, "unrecognized container extension"));
    }
    let mut d = parse_video_stem(stem).map_err(|_| parse_err(name, "expected Farm_Camera_YYYYMMDD_HHMMSS"))?;
    d.source = file.to_string();
    Ok(d)
}

/// The extension-free part of [`parse_video_filename`]; also used for
/// annotation files named after their video.
pub fn parse_video_stem(stem: &str) -> Result<VideoDescriptor> {
    let fields: Vec<&str> = stem.rsplitn(3, '_').collect();
    // rsplitn yields [time, date, prefix]
    if fields.len() < 3 {
        return Err(parse_err(stem, "fewer than three underscore-separated fields"));
    }
    let (time_s, date_s, prefix) = (fields[0], fields[1], fields[2]);
    let (farm, camera) = prefix
        .rsplit_once('_')
        .ok_or_else(|| parse_err(stem, "missing farm or camera field"))?;
    if farm.is_empty() || camera.is_empty() {
        return Err(parse_err(stem, "empty farm or camera field"));
    }
    if date_s.len() != 8 || time_s.len() != 6 {
        return Err(parse_err(stem, "date must be YYYYMMDD and time HHMMSS"));
    }
    let date = NaiveDate::parse_from_str(date_s, "%Y%m%d").map_err(|e| parse_err(stem, &e.to_string()))?;
    let time = NaiveTime::parse_from_str(time_s, "%H%M%S").map_err(|e| parse_err(stem, &e.to_string()))?;
    Ok(VideoDescriptor {
        farm: farm.to_string(),
        camera: camera.to_string(),
        start_time: Timestamp::from_naive(date.and_time(time)),
        source: stem.to_string(),
    })
}

fn parse_err(input: &str, message: &str) -> Error {
    Error::Parse { input: input.to_string(), message: message.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OcrStatus {
    Ok,
    Corrected,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrReading {
    pub frame_index: u64,
    pub raw: String,
    pub parsed: Option<Timestamp>,
    pub status: OcrStatus,
}

impl OcrReading {
    /// Runs string-level correction on a raw OCR reading.
    pub fn from_raw(frame_index: u64, raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let c = correct_ocr_string(&raw);
        let parsed = c.text.as_deref().map(|t| Timestamp::parse_canonical(t).expect("validated"));
        OcrReading { frame_index, raw, parsed, status: c.status }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OcrCorrection {
    pub text: Option<String>,
    pub status: OcrStatus,
}

// YYYY-MM-DD HH:MM:SS
const PATTERN: &[u8; 19] = b"DDDD-DD-DD DD:DD:DD";

fn confusable_digit(c: char) -> Option<char> {
    match c {
        'O' | 'o' => Some('0'),
        'I' | 'l' => Some('1'),
        'S' => Some('5'),
        'B' => Some('8'),
        'Z' => Some('2'),
        _ => None,
    }
}

/// Repairs letter/digit confusions in digit positions of the canonical
/// timestamp pattern. Only the fixed confusion table is applied; anything
/// else, or a result that is not a real date and time, fails.
pub fn correct_ocr_string(raw: &str) -> OcrCorrection {
    let failed = OcrCorrection { text: None, status: OcrStatus::Failed };
    let chars: Vec<char> = raw.trim().chars().collect();
    if chars.len() != PATTERN.len() {
        return failed;
    }
    let mut out = String::with_capacity(PATTERN.len());
    let mut substituted = false;
    for (&c, &p) in chars.iter().zip(PATTERN.iter()) {
        if p == b'D' {
            if c.is_ascii_digit() {
                out.push(c);
            } else if let Some(d) = confusable_digit(c) {
                out.push(d);
                substituted = true;
            } else {
                return failed;
            }
        } else if c == p as char {
            out.push(c);
        } else {
            return failed;
        }
    }
    if NaiveDateTime::parse_from_str(&out, CANONICAL_FORMAT).is_err() {
        return failed;
    }
    let status = if substituted || out != raw { OcrStatus::Corrected } else { OcrStatus::Ok };
    OcrCorrection { text: Some(out), status }
}

/// Reads `frame_index,raw_string` rows and applies string correction.
pub fn read_ocr_readings<R: Read>(source: R) -> Result<Vec<OcrReading>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(source);
    let headers = rdr.headers()?.clone();
    let fi = find_column(&headers, &["frame_index"]).ok_or_else(|| Error::MissingColumn {
        origin: Origin::default(),
        column: "frame_index".into(),
    })?;
    let ri = find_column(&headers, &["raw_string", "raw"]).ok_or_else(|| Error::MissingColumn {
        origin: Origin::default(),
        column: "raw_string".into(),
    })?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let origin = Origin::row(i + 1);
        let rec = rec.map_err(|e| Error::row(origin.clone(), e.to_string()))?;
        let idx: u64 = rec
            .get(fi)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| Error::row(origin.clone(), "frame_index must be a non-negative integer"))?;
        out.push(OcrReading::from_raw(idx, rec.get(ri).unwrap_or("")));
    }
    out.sort_by_key(|r| r.frame_index);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesConfig {
    /// Outlier threshold as a multiple of the nominal frame interval.
    pub outlier_factor: f64,
    /// Furthest a valid neighbour may be, in frames, to support a repair.
    pub window_frames: u64,
    /// Quantization of the burned-in clock, added to the outlier threshold.
    pub resolution_s: f64,
}

impl Default for SeriesConfig {
    fn default() -> Self {
        SeriesConfig { outlier_factor: 2.0, window_frames: 25, resolution_s: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub total_frames: usize,
    pub successful: usize,
    pub success_rate_pct: f64,
    /// Frames whose timestamp is earlier than the previous timestamped frame,
    /// after repair.
    pub monotonicity_violations: Vec<u64>,
    pub repaired: usize,
    /// Frames left without a usable timestamp, or outliers that could not be
    /// repaired.
    pub unresolved: Vec<u64>,
}

/// Success rate as a percentage, `successful / total × 100`.
pub fn success_rate_pct(successful: usize, total: usize) -> f64 {
    successful as f64 * 100.0 / total as f64
}

/// Validates and repairs a per-frame OCR timestamp series.
///
/// A parsed value is an outlier when it disagrees with the prediction from
/// both its previous and next valid neighbours (which agree with each other)
/// by more than `outlier_factor` frame intervals plus the clock resolution.
/// Outliers and failed readings are linearly interpolated between the nearest
/// valid neighbours on each side, if both lie within `window_frames`.
pub fn validate_timestamp_series(
    readings: &[OcrReading],
    nominal_fps: f64,
    cfg: &SeriesConfig,
) -> Result<(SeriesReport, Vec<OcrReading>)> {
    if readings.is_empty() {
        return Err(Error::Invalid("empty OCR series".into()));
    }
    if !(nominal_fps > 0.0) {
        return Err(Error::Range(format!("nominal fps must be positive, got {nominal_fps}")));
    }
    if readings.windows(2).any(|w| w[1].frame_index < w[0].frame_index) {
        return Err(Error::Invalid("OCR readings must be ordered by frame index".into()));
    }
    let n = readings.len();
    let frame_ms = 1000.0 / nominal_fps;
    let tol_ms = cfg.outlier_factor * frame_ms + cfg.resolution_s * 1000.0;
    let successful = readings.iter().filter(|r| r.parsed.is_some()).count();

    let within = |a: usize, b: usize| readings[b].frame_index.abs_diff(readings[a].frame_index) <= cfg.window_frames;
    let value = |i: usize| readings[i].parsed.map(|t| t.0 as f64);
    let predict = |from: usize, to: usize| {
        value(from).map(|v| v + (readings[to].frame_index as f64 - readings[from].frame_index as f64) * frame_ms)
    };

    let prev_valid = |i: usize, ok: &dyn Fn(usize) -> bool| (0..i).rev().find(|&j| ok(j)).filter(|&j| within(j, i));
    let next_valid = |i: usize, ok: &dyn Fn(usize) -> bool| (i + 1..n).find(|&k| ok(k)).filter(|&k| within(i, k));

    let parsed_ok = |i: usize| readings[i].parsed.is_some();
    let mut outlier = vec![false; n];
    for i in 0..n {
        let Some(v) = value(i) else { continue };
        let (Some(j), Some(k)) = (prev_valid(i, &parsed_ok), next_valid(i, &parsed_ok)) else {
            continue;
        };
        let neighbours_agree = (predict(j, k).unwrap() - value(k).unwrap()).abs() <= tol_ms;
        let off_prev = (v - predict(j, i).unwrap()).abs() > tol_ms;
        let off_next = (v - predict(k, i).unwrap()).abs() > tol_ms;
        outlier[i] = neighbours_agree && off_prev && off_next;
    }

    let anchor = |i: usize| readings[i].parsed.is_some() && !outlier[i];
    let mut out = readings.to_vec();
    let mut repaired = 0;
    let mut unresolved = Vec::new();
    for i in 0..n {
        if anchor(i) {
            continue;
        }
        match (prev_valid(i, &anchor), next_valid(i, &anchor)) {
            (Some(j), Some(k)) => {
                let (a, b) = (readings[j].parsed.unwrap().0, readings[k].parsed.unwrap().0);
                let span = (readings[k].frame_index - readings[j].frame_index) as i128;
                let off = (readings[i].frame_index - readings[j].frame_index) as i128;
                let interp = a as i128 + div_round((b - a) as i128 * off, span);
                out[i].parsed = Some(Timestamp(interp as i64));
                out[i].status = OcrStatus::Corrected;
                repaired += 1;
            }
            _ => unresolved.push(readings[i].frame_index),
        }
    }

    let mut monotonicity_violations = Vec::new();
    let mut prev: Option<Timestamp> = None;
    for r in &out {
        if let Some(t) = r.parsed {
            if prev.is_some_and(|p| t < p) {
                monotonicity_violations.push(r.frame_index);
            }
            prev = Some(t);
        }
    }

    let report = SeriesReport {
        total_frames: n,
        successful,
        success_rate_pct: success_rate_pct(successful, n),
        monotonicity_violations,
        repaired,
        unresolved,
    };
    Ok((report, out))
}

fn div_round(num: i128, den: i128) -> i128 {
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    if 2 * r >= den {
        q + 1
    } else {
        q
    }
}
