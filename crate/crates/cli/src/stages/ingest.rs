use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use calfplay::alignment::{read_frame_rows, write_frame_rows, FrameMeta, FrameRow};
use calfplay::ethogram::{parse_event_log, pair_state_events, BehaviourCategory, BehaviourInterval, Closure, Dialect};
use calfplay::metrics::read_calf_records;
use calfplay::timing::{parse_video_stem, read_ocr_readings, tenths_to_absolute, validate_timestamp_series, SeriesReport, Timestamp};
use calfplay::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Context;
use crate::artifacts::{csv_inputs, open, write_json, write_table, Stage};
use crate::error::{CliError, CliResult};

/// One paired behaviour interval, as stored in `ingest/intervals.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub video: String,
    pub farm: String,
    pub subject: String,
    pub behaviour: String,
    pub modifier: Option<String>,
    pub category: BehaviourCategory,
    pub start_tenths: i64,
    pub stop_tenths: i64,
    pub closure: Closure,
    pub start: String,
    pub stop: String,
}

impl IntervalRow {
    pub fn interval(&self) -> BehaviourInterval {
        BehaviourInterval {
            subject: self.subject.clone(),
            behaviour: self.behaviour.clone(),
            modifier: self.modifier.clone(),
            category: self.category,
            start_tenths: self.start_tenths,
            stop_tenths: self.stop_tenths,
            closure: self.closure,
        }
    }

    pub fn start_time(&self) -> CliResult<Timestamp> {
        Timestamp::parse_flexible(&self.start).map_err(|e| CliError::internal(format!("intervals.csv: {e}")))
    }

    pub fn stop_time(&self) -> CliResult<Timestamp> {
        Timestamp::parse_flexible(&self.stop).map_err(|e| CliError::internal(format!("intervals.csv: {e}")))
    }
}

pub fn read_intervals(path: &Path) -> CliResult<Vec<IntervalRow>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(open(path)?);
    rdr.deserialize()
        .collect::<Result<Vec<IntervalRow>, _>>()
        .map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct LogSummary {
    file: String,
    video: String,
    events: usize,
    intervals: usize,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct FrameSummary {
    files: usize,
    rows: usize,
    with_timestamp: usize,
    from_ocr: usize,
    unresolved_dropped: usize,
}

#[derive(Serialize)]
struct IngestReport {
    event_logs: Vec<LogSummary>,
    intervals: usize,
    frames: FrameSummary,
    ocr: BTreeMap<String, SeriesReport>,
    calves: Option<usize>,
}

fn file_stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn row_error(path: &Path, row: usize, msg: impl Into<String>) -> CliError {
    CliError::reading(path, Error::row(calfplay::error::Origin::row(row), msg.into()))
}

fn ingest_log(path: &Path, ctx: &Context) -> CliResult<(LogSummary, Vec<IntervalRow>)> {
    let stem = file_stem(path);
    let video = parse_video_stem(&stem).map_err(|e| CliError::reading(path, e))?;
    let events = parse_event_log(open(path)?, Dialect::default()).map_err(|e| CliError::reading(path, e))?;
    let pairing = pair_state_events(&events, &ctx.table).map_err(|e| CliError::reading(path, e))?;
    let mut rows = Vec::with_capacity(pairing.intervals.len());
    for iv in &pairing.intervals {
        let start = tenths_to_absolute(video.start_time, iv.start_tenths).map_err(|e| CliError::reading(path, e))?;
        let stop = tenths_to_absolute(video.start_time, iv.stop_tenths).map_err(|e| CliError::reading(path, e))?;
        rows.push(IntervalRow {
            video: stem.clone(),
            farm: video.farm.clone(),
            subject: iv.subject.clone(),
            behaviour: iv.behaviour.clone(),
            modifier: iv.modifier.clone(),
            category: iv.category,
            start_tenths: iv.start_tenths,
            stop_tenths: iv.stop_tenths,
            closure: iv.closure,
            start: start.iso_millis(),
            stop: stop.iso_millis(),
        });
    }
    let summary = LogSummary {
        file: path.file_name().and_then(|f| f.to_str()).unwrap_or_default().to_string(),
        video: stem,
        events: events.len(),
        intervals: rows.len(),
        warnings: pairing.warnings.iter().map(|w| format!("{w:?}")).collect(),
    };
    Ok((summary, rows))
}

/// Timestamps by frame index for one video, from its OCR readings.
fn ocr_series(ctx: &Context, video: &str) -> CliResult<(SeriesReport, BTreeMap<u64, Option<Timestamp>>)> {
    let dir = ctx.cfg.inputs.ocr.as_ref().ok_or_else(|| {
        CliError::user(format!("frames of video {video} have no timestamp column values and inputs.ocr is not set"))
    })?;
    let stem = Path::new(video).file_stem().and_then(|s| s.to_str()).unwrap_or(video);
    let path: PathBuf = dir.join(format!("{stem}.csv"));
    if !path.is_file() {
        return Err(CliError::user(format!("no OCR readings for video {video}: expected {}", path.display())));
    }
    let readings = read_ocr_readings(open(&path)?).map_err(|e| CliError::reading(&path, e))?;
    let (report, repaired) =
        validate_timestamp_series(&readings, ctx.cfg.timing.nominal_fps, &ctx.cfg.timing.series())
            .map_err(|e| CliError::reading(&path, e))?;
    Ok((report, repaired.into_iter().map(|r| (r.frame_index, r.parsed)).collect()))
}

fn ingest_frames(ctx: &Context) -> CliResult<(Vec<FrameMeta>, FrameSummary, BTreeMap<String, SeriesReport>)> {
    let src = ctx.cfg.inputs.frames.as_ref().ok_or_else(|| CliError::user("inputs.frames is not set"))?;
    let files = csv_inputs(src, "frame metadata")?;
    let tables: Vec<(PathBuf, Vec<FrameRow>)> = files
        .par_iter()
        .map(|p| {
            let rows = read_frame_rows(open(p)?).map_err(|e| CliError::reading(p, e))?;
            Ok((p.clone(), rows))
        })
        .collect::<CliResult<_>>()?;

    let mut needs_ocr: Vec<String> = tables
        .iter()
        .flat_map(|(_, rows)| rows.iter().filter(|r| r.timestamp.is_none()).map(|r| r.video.clone()))
        .collect();
    needs_ocr.sort();
    needs_ocr.dedup();
    let series: Vec<(String, SeriesReport, BTreeMap<u64, Option<Timestamp>>)> = needs_ocr
        .par_iter()
        .map(|v| ocr_series(ctx, v).map(|(r, m)| (v.clone(), r, m)))
        .collect::<CliResult<_>>()?;
    let mut ocr = BTreeMap::new();
    let mut lookup = BTreeMap::new();
    for (v, r, m) in series {
        ocr.insert(v.clone(), r);
        lookup.insert(v, m);
    }

    let mut summary = FrameSummary { files: files.len(), rows: 0, with_timestamp: 0, from_ocr: 0, unresolved_dropped: 0 };
    let mut out = Vec::new();
    for (path, rows) in tables {
        for (i, row) in rows.into_iter().enumerate() {
            let n = i + 1;
            summary.rows += 1;
            if row.video.is_empty() {
                return Err(row_error(&path, n, "video is empty"));
            }
            let stem = Path::new(&row.video).file_stem().and_then(|s| s.to_str()).unwrap_or(&row.video);
            parse_video_stem(stem).map_err(|e| row_error(&path, n, e.to_string()))?;
            let ts = match &row.timestamp {
                Some(s) => {
                    summary.with_timestamp += 1;
                    Timestamp::parse_flexible(s).map_err(|e| row_error(&path, n, e.to_string()))?
                }
                None => {
                    let idx = row.frame_index.ok_or_else(|| row_error(&path, n, "needs a timestamp or a frame_index"))?;
                    match lookup[&row.video].get(&idx).copied().flatten() {
                        Some(t) => {
                            summary.from_ocr += 1;
                            t
                        }
                        None => {
                            summary.unresolved_dropped += 1;
                            continue;
                        }
                    }
                }
            };
            let meta = row.into_meta(ts);
            meta.validate().map_err(|m| row_error(&path, n, m))?;
            out.push(meta);
        }
    }
    Ok((out, summary, ocr))
}

pub fn ingest(ctx: &Context) -> CliResult<String> {
    let events = ctx.cfg.inputs.events.as_ref().ok_or_else(|| CliError::user("inputs.events is not set"))?;
    let logs = csv_inputs(events, "event log")?;
    let parsed: Vec<(LogSummary, Vec<IntervalRow>)> =
        logs.par_iter().map(|p| ingest_log(p, ctx)).collect::<CliResult<_>>()?;
    let (frames, frame_summary, ocr) = ingest_frames(ctx)?;
    let calves = match &ctx.cfg.inputs.calves {
        Some(p) => Some(read_calf_records(open(p)?).map_err(|e| CliError::reading(p, e))?.len()),
        None => None,
    };

    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    for (s, r) in parsed {
        summaries.push(s);
        rows.extend(r);
    }

    ctx.layout.create(Stage::Ingest)?;
    write_table(&ctx.layout.path(Stage::Ingest, "intervals.csv"), &ctx.prov, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<intervals>", e))
    })?;
    write_table(&ctx.layout.path(Stage::Ingest, "frames.csv"), &ctx.prov, |buf| write_frame_rows(buf, &frames))?;
    let line = format!(
        "ingest: {} event logs, {} intervals, {} frames ({} dropped without timestamp)",
        summaries.len(),
        rows.len(),
        frames.len(),
        frame_summary.unresolved_dropped
    );
    let report = IngestReport { event_logs: summaries, intervals: rows.len(), frames: frame_summary, ocr, calves };
    write_json(&ctx.layout.path(Stage::Ingest, "report.json"), &ctx.prov, &report)?;
    Ok(line)
}
