//! Joining behaviour intervals to tracked frames and resolving the final
//! training label.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Origin, Result};
use crate::ethogram::{BehaviourInterval, EthogramTable, StateClass};
use crate::timing::{tenths_to_absolute, Timestamp};

pub const DEFAULT_TOLERANCE_S: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn min_side(&self) -> f64 {
        self.w.min(self.h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// One detected, tracked calf in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub video: String,
    pub frame_index: Option<u64>,
    pub timestamp: Timestamp,
    pub tracking_id: i64,
    pub bbox: BBox,
    pub confidence: f64,
    pub mean_intensity: f64,
    pub occlusion_fraction: f64,
    /// Segmentation mask area in pixels, when the tracker exports it.
    pub mask_area_px: Option<f64>,
    pub crop_path: String,
    pub embedding_path: String,
}

impl FrameMeta {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.bbox.w > 0.0 && self.bbox.h > 0.0) {
            return Err("bounding box width and height must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        if !(0.0..=255.0).contains(&self.mean_intensity) {
            return Err(format!("mean intensity {} outside [0, 255]", self.mean_intensity));
        }
        if !(0.0..=1.0).contains(&self.occlusion_fraction) {
            return Err(format!("occlusion fraction {} outside [0, 1]", self.occlusion_fraction));
        }
        if let Some(a) = self.mask_area_px {
            if !(a >= 0.0) {
                return Err(format!("mask area {a} must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Flat row layout of frame metadata files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRow {
    #[serde(default)]
    pub video: String,
    #[serde(default)]
    pub frame_index: Option<u64>,
    #[serde(default)]
    pub timestamp: Option<String>,
    pub tracking_id: i64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
    pub mean_intensity: f64,
    pub occlusion_fraction: f64,
    #[serde(default)]
    pub mask_area_px: Option<f64>,
    pub crop_path: String,
    pub embedding_path: String,
}

pub const FRAME_REQUIRED_COLUMNS: &[&str] = &[
    "tracking_id",
    "x",
    "y",
    "w",
    "h",
    "confidence",
    "mean_intensity",
    "occlusion_fraction",
    "crop_path",
    "embedding_path",
];

impl FrameRow {
    /// Converts with an already-resolved timestamp.
    pub fn into_meta(self, timestamp: Timestamp) -> FrameMeta {
        FrameMeta {
            video: self.video,
            frame_index: self.frame_index,
            timestamp,
            tracking_id: self.tracking_id,
            bbox: BBox { x: self.x, y: self.y, w: self.w, h: self.h },
            confidence: self.confidence,
            mean_intensity: self.mean_intensity,
            occlusion_fraction: self.occlusion_fraction,
            mask_area_px: self.mask_area_px,
            crop_path: self.crop_path,
            embedding_path: self.embedding_path,
        }
    }

    pub fn from_meta(f: &FrameMeta) -> Self {
        FrameRow {
            video: f.video.clone(),
            frame_index: f.frame_index,
            timestamp: Some(f.timestamp.iso_millis()),
            tracking_id: f.tracking_id,
            x: f.bbox.x,
            y: f.bbox.y,
            w: f.bbox.w,
            h: f.bbox.h,
            confidence: f.confidence,
            mean_intensity: f.mean_intensity,
            occlusion_fraction: f.occlusion_fraction,
            mask_area_px: f.mask_area_px,
            crop_path: f.crop_path.clone(),
            embedding_path: f.embedding_path.clone(),
        }
    }
}

/// Reads frame metadata rows. Timestamps may be absent and resolved later
/// from the OCR series of the row's video.
pub fn read_frame_rows<R: Read>(source: R) -> Result<Vec<FrameRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(source);
    let headers = rdr.headers()?.clone();
    for col in FRAME_REQUIRED_COLUMNS {
        if !headers.iter().any(|h| h == *col) {
            return Err(Error::MissingColumn { origin: Origin::default(), column: col.to_string() });
        }
    }
    let has_ts = headers.iter().any(|h| h == "timestamp");
    let has_index = headers.iter().any(|h| h == "frame_index") && headers.iter().any(|h| h == "video");
    if !has_ts && !has_index {
        return Err(Error::MissingColumn { origin: Origin::default(), column: "timestamp".into() });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<FrameRow>().enumerate() {
        out.push(rec.map_err(|e| Error::row(Origin::row(i + 1), e.to_string()))?);
    }
    Ok(out)
}

pub fn write_frame_rows<W: Write>(sink: W, frames: &[FrameMeta]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    for f in frames {
        w.serialize(FrameRow::from_meta(f))?;
    }
    w.flush().map_err(|e| Error::io("<frames>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FinalLabel {
    NotPlaying,
    OutOfView,
    NonActivePlaying,
    ActivePlaying,
    Management,
}

impl FinalLabel {
    pub const ALL: [FinalLabel; 5] = [
        FinalLabel::Management,
        FinalLabel::ActivePlaying,
        FinalLabel::NonActivePlaying,
        FinalLabel::OutOfView,
        FinalLabel::NotPlaying,
    ];

    /// Higher is more important.
    pub fn priority(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FinalLabel::Management => "Management",
            FinalLabel::ActivePlaying => "Active Playing",
            FinalLabel::NonActivePlaying => "Non-Active Playing",
            FinalLabel::OutOfView => "Out of View",
            FinalLabel::NotPlaying => "Not Playing",
        }
    }

    pub fn from_class(class: StateClass) -> Self {
        match class {
            StateClass::Management => FinalLabel::Management,
            StateClass::ActivePlay => FinalLabel::ActivePlaying,
            StateClass::NonActivePlay => FinalLabel::NonActivePlaying,
            StateClass::OutOfView => FinalLabel::OutOfView,
            StateClass::Other => FinalLabel::NotPlaying,
        }
    }

    pub fn excluded_from_training(self) -> bool {
        matches!(self, FinalLabel::OutOfView | FinalLabel::Management)
    }
}

impl fmt::Display for FinalLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FinalLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FinalLabel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parse { input: s.to_string(), message: "unknown final label".into() })
    }
}

/// Resolves concurrent states: Management, else Active Playing, else
/// Non-Active Playing, else Out of View, else Not Playing.
pub fn assign_final_label<I: IntoIterator<Item = StateClass>>(states: I) -> FinalLabel {
    states
        .into_iter()
        .map(FinalLabel::from_class)
        .max()
        .unwrap_or(FinalLabel::NotPlaying)
}

/// A behaviour interval in absolute time, `[start, stop)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsInterval {
    pub subject: String,
    pub behaviour: String,
    pub class: StateClass,
    pub start: Timestamp,
    pub stop: Timestamp,
}

impl AbsInterval {
    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.stop
    }
}

pub fn to_absolute(
    intervals: &[BehaviourInterval],
    video_start: Timestamp,
    table: &EthogramTable,
) -> Result<Vec<AbsInterval>> {
    intervals
        .iter()
        .map(|iv| {
            Ok(AbsInterval {
                subject: iv.subject.clone(),
                behaviour: iv.behaviour.clone(),
                class: table.lookup(&iv.behaviour)?.class,
                start: tenths_to_absolute(video_start, iv.start_tenths)?,
                stop: tenths_to_absolute(video_start, iv.stop_tenths)?,
            })
        })
        .collect()
}

/// All of the subject's intervals with `start <= t < stop`.
pub fn active_states_at<'a>(intervals: &'a [AbsInterval], subject: &str, t: Timestamp) -> Vec<&'a AbsInterval> {
    intervals
        .iter()
        .filter(|iv| iv.subject == subject && iv.contains(t))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchedEvent {
    pub event_time: Timestamp,
    pub frame: usize,
    pub delta_ms: i64,
    /// Indices into the interval slice of states active at the frame.
    pub states: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchOutcome {
    pub matched: Vec<MatchedEvent>,
    pub unmatched_events: Vec<Timestamp>,
    /// Frames no event was matched to.
    pub unpartnered_frames: Vec<usize>,
}

/// Index of the frame nearest to `t` within `tol_ms`, ties to the earlier.
pub fn nearest_frame(times: &[Timestamp], t: Timestamp, tol_ms: i64) -> Option<usize> {
    let pos = times.partition_point(|&f| f < t);
    let mut best: Option<(i64, usize)> = None;
    // candidates: last frame before t (the earliest of any run of equal
    // times) and first frame at or after t
    if pos > 0 {
        let before = times[pos - 1];
        let first = times.partition_point(|&f| f < before);
        best = Some(((t.0 - before.0).abs(), first));
    }
    if pos < times.len() {
        let d = (times[pos].0 - t.0).abs();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, pos));
        }
    }
    best.filter(|&(d, _)| d <= tol_ms).map(|(_, i)| i)
}

/// Matches every interval boundary (start and stop) of one subject to the
/// nearest frame of its track within `tolerance_s`.
///
/// `frames` must be sorted by timestamp. Events with no frame in range and
/// frames with no event are both reported.
pub fn match_annotations_to_frames(
    intervals: &[AbsInterval],
    frames: &[FrameMeta],
    tolerance_s: f64,
) -> Result<MatchOutcome> {
    if frames.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
        return Err(Error::Invalid("frames must be sorted by timestamp".into()));
    }
    if !(tolerance_s >= 0.0) {
        return Err(Error::Range(format!("tolerance must be non-negative, got {tolerance_s}")));
    }
    let tol_ms = (tolerance_s * 1000.0).round() as i64;
    let times: Vec<Timestamp> = frames.iter().map(|f| f.timestamp).collect();
    let mut events: Vec<Timestamp> = intervals.iter().flat_map(|iv| [iv.start, iv.stop]).collect();
    events.sort();

    let mut out = MatchOutcome::default();
    let mut partnered = vec![false; frames.len()];
    for t in events {
        match nearest_frame(&times, t, tol_ms) {
            Some(fi) => {
                partnered[fi] = true;
                let ft = frames[fi].timestamp;
                out.matched.push(MatchedEvent {
                    event_time: t,
                    frame: fi,
                    delta_ms: ft.0 - t.0,
                    states: intervals
                        .iter()
                        .enumerate()
                        .filter(|(_, iv)| iv.contains(ft))
                        .map(|(i, _)| i)
                        .collect(),
                });
            }
            None => out.unmatched_events.push(t),
        }
    }
    out.unpartnered_frames = partnered
        .iter()
        .enumerate()
        .filter(|(_, &p)| !p)
        .map(|(i, _)| i)
        .collect();
    Ok(out)
}

/// Which annotation subject a tracking ID belongs to.
#[derive(Debug, Clone, Default)]
pub struct SubjectMap {
    by_track: HashMap<i64, String>,
}

impl SubjectMap {
    /// Pairs each subject with the tracking ID equal to the trailing digits of
    /// its name (`Calf3` -> 3).
    pub fn from_subject_names<'a, I: IntoIterator<Item = &'a str>>(subjects: I) -> Self {
        let mut by_track = HashMap::new();
        for s in subjects {
            let digits: String = s.chars().rev().take_while(char::is_ascii_digit).collect();
            let digits: String = digits.chars().rev().collect();
            if let Ok(id) = digits.parse::<i64>() {
                by_track.entry(id).or_insert_with(|| s.to_string());
            }
        }
        SubjectMap { by_track }
    }

    /// Reads `subject,tracking_id` rows.
    pub fn from_reader<R: Read>(source: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            subject: String,
            tracking_id: i64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let mut by_track = HashMap::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::row(Origin::row(i + 1), e.to_string()))?;
            if by_track.insert(row.tracking_id, row.subject).is_some() {
                return Err(Error::row(Origin::row(i + 1), format!("tracking id {} mapped twice", row.tracking_id)));
            }
        }
        Ok(SubjectMap { by_track })
    }

    pub fn insert(&mut self, tracking_id: i64, subject: impl Into<String>) {
        self.by_track.insert(tracking_id, subject.into());
    }

    pub fn subject(&self, tracking_id: i64) -> Option<&str> {
        self.by_track.get(&tracking_id).map(String::as_str)
    }
}

/// A frame joined to its labelled behavioural states.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSample {
    pub frame: FrameMeta,
    pub primary_raw: Option<String>,
    pub primary_label: Option<FinalLabel>,
    pub secondary_raw: Option<String>,
    pub secondary_label: Option<FinalLabel>,
    pub final_label: FinalLabel,
}

impl AlignedSample {
    pub fn timestamp(&self) -> Timestamp {
        self.frame.timestamp
    }

    pub fn tracking_id(&self) -> i64 {
        self.frame.tracking_id
    }
}

/// Labels every frame with the states of its subject active at the frame
/// instant. Frames whose track has no subject get no states.
///
/// The primary behaviour is the highest-priority active state (earliest start
/// on ties), the secondary the next one.
pub fn align_frames(intervals: &[AbsInterval], frames: &[FrameMeta], subjects: &SubjectMap) -> Vec<AlignedSample> {
    frames
        .iter()
        .map(|f| {
            let mut states = match subjects.subject(f.tracking_id) {
                Some(s) => active_states_at(intervals, s, f.timestamp),
                None => Vec::new(),
            };
            states.sort_by(|a, b| {
                FinalLabel::from_class(b.class)
                    .cmp(&FinalLabel::from_class(a.class))
                    .then(a.start.cmp(&b.start))
                    .then(a.behaviour.cmp(&b.behaviour))
            });
            let label = |i: usize| states.get(i).map(|s| FinalLabel::from_class(s.class));
            AlignedSample {
                frame: f.clone(),
                primary_raw: states.first().map(|s| s.behaviour.clone()),
                primary_label: label(0),
                secondary_raw: states.get(1).map(|s| s.behaviour.clone()),
                secondary_label: label(1),
                final_label: assign_final_label(states.iter().map(|s| s.class)),
            }
        })
        .collect()
}

pub const METADATA_COLUMNS: [&str; 9] = [
    "Timestamp",
    "Primary_Raw",
    "Primary_Label",
    "Secondary_Raw",
    "Secondary_Label",
    "ID",
    "Final_Label",
    "Frame_Directory",
    "Embeddings_Directory",
];

/// Trailing flag column after the metadata columns.
pub const EXCLUDED_COLUMN: &str = "Excluded_From_Training";

/// Writes the integrated metadata table: one row per (frame, tracked calf).
pub fn build_metadata_table<W: Write>(sink: W, samples: &[AlignedSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header: Vec<&str> = METADATA_COLUMNS.to_vec();
    header.push(EXCLUDED_COLUMN);
    w.write_record(&header)?;
    for (i, s) in samples.iter().enumerate() {
        if s.frame.crop_path.is_empty() || s.frame.embedding_path.is_empty() {
            return Err(Error::row(Origin::row(i + 1), "frame and embedding paths must be non-empty"));
        }
        let id = s.tracking_id().to_string();
        w.write_record([
            s.timestamp().iso_millis().as_str(),
            s.primary_raw.as_deref().unwrap_or(""),
            s.primary_label.map(FinalLabel::as_str).unwrap_or(""),
            s.secondary_raw.as_deref().unwrap_or(""),
            s.secondary_label.map(FinalLabel::as_str).unwrap_or(""),
            id.as_str(),
            s.final_label.as_str(),
            s.frame.crop_path.as_str(),
            s.frame.embedding_path.as_str(),
            if s.final_label.excluded_from_training() { "true" } else { "false" },
        ])?;
    }
    w.flush().map_err(|e| Error::io("<metadata>", e))?;
    Ok(())
}

/// Full sample row: frame metadata plus labels. Used between pipeline stages.
#[derive(Debug, Clone)]
pub struct SampleRow {
    pub frame: FrameRow,
    pub primary_raw: String,
    pub primary_label: String,
    pub secondary_raw: String,
    pub secondary_label: String,
    pub final_label: String,
}

impl SampleRow {
    pub fn from_sample(s: &AlignedSample) -> Self {
        SampleRow {
            frame: FrameRow::from_meta(&s.frame),
            primary_raw: s.primary_raw.clone().unwrap_or_default(),
            primary_label: s.primary_label.map(|l| l.as_str().to_string()).unwrap_or_default(),
            secondary_raw: s.secondary_raw.clone().unwrap_or_default(),
            secondary_label: s.secondary_label.map(|l| l.as_str().to_string()).unwrap_or_default(),
            final_label: s.final_label.as_str().to_string(),
        }
    }

    pub fn into_sample(self) -> Result<AlignedSample> {
        let opt_label = |s: &str| -> Result<Option<FinalLabel>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some)
            }
        };
        let ts = self
            .frame
            .timestamp
            .as_deref()
            .ok_or_else(|| Error::Invalid("sample without timestamp".into()))
            .and_then(Timestamp::parse_flexible)?;
        Ok(AlignedSample {
            primary_label: opt_label(&self.primary_label)?,
            secondary_label: opt_label(&self.secondary_label)?,
            final_label: self.final_label.parse()?,
            primary_raw: Some(self.primary_raw).filter(|s| !s.is_empty()),
            secondary_raw: Some(self.secondary_raw).filter(|s| !s.is_empty()),
            frame: self.frame.into_meta(ts),
        })
    }
}

pub fn write_samples<W: Write>(sink: W, samples: &[AlignedSample]) -> Result<()> {
    // csv cannot serialize flattened structs with headers, so write manually
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SAMPLE_COLUMNS)?;
    for s in samples {
        let r = SampleRow::from_sample(s);
        let f = &r.frame;
        w.write_record([
            f.video.clone(),
            f.frame_index.map(|i| i.to_string()).unwrap_or_default(),
            f.timestamp.clone().unwrap_or_default(),
            f.tracking_id.to_string(),
            f.x.to_string(),
            f.y.to_string(),
            f.w.to_string(),
            f.h.to_string(),
            f.confidence.to_string(),
            f.mean_intensity.to_string(),
            f.occlusion_fraction.to_string(),
            f.mask_area_px.map(|a| a.to_string()).unwrap_or_default(),
            f.crop_path.clone(),
            f.embedding_path.clone(),
            r.primary_raw,
            r.primary_label,
            r.secondary_raw,
            r.secondary_label,
            r.final_label,
        ])?;
    }
    w.flush().map_err(|e| Error::io("<samples>", e))?;
    Ok(())
}

const SAMPLE_COLUMNS: [&str; 19] = [
    "video",
    "frame_index",
    "timestamp",
    "tracking_id",
    "x",
    "y",
    "w",
    "h",
    "confidence",
    "mean_intensity",
    "occlusion_fraction",
    "mask_area_px",
    "crop_path",
    "embedding_path",
    "primary_raw",
    "primary_label",
    "secondary_raw",
    "secondary_label",
    "final_label",
];

pub fn read_samples<R: Read>(source: R) -> Result<Vec<AlignedSample>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(source);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn { origin: Origin::default(), column: name.to_string() })
    };
    let idx: Vec<usize> = SAMPLE_COLUMNS.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let origin = Origin::row(i + 1);
        let rec = rec?;
        let g = |k: usize| rec.get(idx[k]).unwrap_or("").to_string();
        let num = |k: usize| -> Result<f64> {
            g(k).parse::<f64>()
                .map_err(|_| Error::row(origin.clone(), format!("bad number in `{}`", SAMPLE_COLUMNS[k])))
        };
        let opt = |s: String| Some(s).filter(|s| !s.is_empty());
        let row = SampleRow {
            frame: FrameRow {
                video: g(0),
                frame_index: opt(g(1))
                    .map(|s| s.parse::<u64>())
                    .transpose()
                    .map_err(|_| Error::row(origin.clone(), "bad frame_index"))?,
                timestamp: opt(g(2)),
                tracking_id: g(3).parse().map_err(|_| Error::row(origin.clone(), "bad tracking_id"))?,
                x: num(4)?,
                y: num(5)?,
                w: num(6)?,
                h: num(7)?,
                confidence: num(8)?,
                mean_intensity: num(9)?,
                occlusion_fraction: num(10)?,
                mask_area_px: opt(g(11)).map(|_| num(11)).transpose()?,
                crop_path: g(12),
                embedding_path: g(13),
            },
            primary_raw: g(14),
            primary_label: g(15),
            secondary_raw: g(16),
            secondary_label: g(17),
            final_label: g(18),
        };
        out.push(row.into_sample().map_err(|e| Error::row(origin, e.to_string()))?);
    }
    Ok(out)
}
