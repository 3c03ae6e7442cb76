use std::collections::BTreeMap;
use std::path::Path;

use calfplay::alignment::{
    align_frames, build_metadata_table, match_annotations_to_frames, read_frame_rows, read_samples, write_samples,
    AbsInterval, AlignedSample, FinalLabel, FrameMeta, SubjectMap,
};
use calfplay::filtering::{exclude_frames, filter_detections, DetectionReport, ExclusionReason};
use calfplay::timing::{parse_video_stem, Timestamp};
use serde::Serialize;

use super::ingest::read_intervals;
use super::Context;
use crate::artifacts::{open, write_json, write_table, Stage};
use crate::error::{CliError, CliResult};

#[derive(Debug, Default, Serialize)]
struct MatchStats {
    events: usize,
    matched: usize,
    unmatched: usize,
    max_abs_delta_ms: i64,
}

#[derive(Serialize)]
struct AlignReport {
    detections: DetectionReport,
    farms: Vec<String>,
    samples: usize,
    untracked_subject_frames: usize,
    labels: BTreeMap<FinalLabel, usize>,
    matching: MatchStats,
}

fn farm_of(video: &str) -> CliResult<String> {
    let stem = Path::new(video).file_stem().and_then(|s| s.to_str()).unwrap_or(video);
    parse_video_stem(stem)
        .map(|d| d.farm)
        .map_err(|e| CliError::internal(format!("frames.csv: {e}")))
}

pub(super) fn label_counts(samples: &[AlignedSample]) -> BTreeMap<FinalLabel, usize> {
    let mut out = BTreeMap::new();
    for s in samples {
        *out.entry(s.final_label).or_insert(0) += 1;
    }
    out
}

pub fn align(ctx: &Context) -> CliResult<String> {
    let ip = ctx.layout.require(Stage::Ingest, "intervals.csv")?;
    let fp = ctx.layout.require(Stage::Ingest, "frames.csv")?;
    let rows = read_intervals(&ip)?;
    let frames: Vec<FrameMeta> = read_frame_rows(open(&fp)?)
        .map_err(|e| CliError::reading(&fp, e))?
        .into_iter()
        .map(|r| {
            let ts = r.timestamp.as_deref().map(Timestamp::parse_flexible).transpose();
            match ts {
                Ok(Some(t)) => Ok(r.into_meta(t)),
                _ => Err(CliError::internal(format!("{}: frame without timestamp", fp.display()))),
            }
        })
        .collect::<CliResult<_>>()?;
    let (frames, detections) = filter_detections(frames, &ctx.cfg.filter);

    let global_map = match &ctx.cfg.inputs.subject_map {
        Some(p) => Some(SubjectMap::from_reader(open(p)?).map_err(|e| CliError::reading(p, e))?),
        None => None,
    };

    let mut by_farm: BTreeMap<String, (Vec<AbsInterval>, Vec<FrameMeta>)> = BTreeMap::new();
    for r in &rows {
        let class = ctx.table.lookup(&r.behaviour)?.class;
        by_farm.entry(r.farm.clone()).or_default().0.push(AbsInterval {
            subject: r.subject.clone(),
            behaviour: r.behaviour.clone(),
            class,
            start: r.start_time()?,
            stop: r.stop_time()?,
        });
    }
    for f in frames {
        by_farm.entry(farm_of(&f.video)?).or_default().1.push(f);
    }

    let tol_ms = (ctx.cfg.alignment.tolerance_s * 1000.0).round() as i64;
    let mut samples = Vec::new();
    let mut stats = MatchStats::default();
    let mut untracked = 0;
    for (intervals, frames) in by_farm.values_mut() {
        frames.sort_by(|a, b| {
            (a.timestamp, &a.video, a.tracking_id, a.frame_index).cmp(&(b.timestamp, &b.video, b.tracking_id, b.frame_index))
        });
        let subjects = match &global_map {
            Some(m) => m.clone(),
            None => SubjectMap::from_subject_names(intervals.iter().map(|iv| iv.subject.as_str())),
        };
        untracked += frames.iter().filter(|f| subjects.subject(f.tracking_id).is_none()).count();
        samples.extend(align_frames(intervals, frames, &subjects));

        let mut tracks: BTreeMap<i64, Vec<FrameMeta>> = BTreeMap::new();
        for f in frames.iter() {
            tracks.entry(f.tracking_id).or_default().push(f.clone());
        }
        for (id, track) in &tracks {
            let Some(subject) = subjects.subject(*id) else { continue };
            let own: Vec<AbsInterval> = intervals.iter().filter(|iv| iv.subject == subject).cloned().collect();
            if own.is_empty() {
                continue;
            }
            let m = match_annotations_to_frames(&own, track, ctx.cfg.alignment.tolerance_s)?;
            stats.events += m.matched.len() + m.unmatched_events.len();
            stats.matched += m.matched.len();
            stats.unmatched += m.unmatched_events.len();
            for e in &m.matched {
                debug_assert!(e.delta_ms.abs() <= tol_ms);
                stats.max_abs_delta_ms = stats.max_abs_delta_ms.max(e.delta_ms.abs());
            }
        }
    }

    ctx.layout.create(Stage::Align)?;
    write_table(&ctx.layout.path(Stage::Align, "metadata.csv"), &ctx.prov, |buf| build_metadata_table(buf, &samples))?;
    write_table(&ctx.layout.path(Stage::Align, "samples.csv"), &ctx.prov, |buf| write_samples(buf, &samples))?;
    let line = format!(
        "align: {} samples from {} farms; {} of {} annotation events matched to a frame",
        samples.len(),
        by_farm.len(),
        stats.matched,
        stats.events
    );
    let report = AlignReport {
        detections,
        farms: by_farm.keys().cloned().collect(),
        samples: samples.len(),
        untracked_subject_frames: untracked,
        labels: label_counts(&samples),
        matching: stats,
    };
    write_json(&ctx.layout.path(Stage::Align, "report.json"), &ctx.prov, &report)?;
    Ok(line)
}

#[derive(Serialize)]
struct FilterReport {
    input: usize,
    retained: usize,
    excluded: usize,
    by_reason: BTreeMap<ExclusionReason, usize>,
    labels: BTreeMap<FinalLabel, usize>,
}

pub fn filter(ctx: &Context) -> CliResult<String> {
    let sp = ctx.layout.require(Stage::Align, "samples.csv")?;
    let samples = read_samples(open(&sp)?).map_err(|e| CliError::reading(&sp, e))?;
    let (kept, report) = exclude_frames(samples, &ctx.cfg.filter);

    ctx.layout.create(Stage::Filter)?;
    write_table(&ctx.layout.path(Stage::Filter, "samples.csv"), &ctx.prov, |buf| write_samples(buf, &kept))?;
    write_table(&ctx.layout.path(Stage::Filter, "exclusions.jsonl"), &ctx.prov, |buf| report.write_jsonl(buf))?;
    let summary = FilterReport {
        input: report.input,
        retained: report.retained,
        excluded: report.total_excluded(),
        by_reason: report.excluded.clone(),
        labels: label_counts(&kept),
    };
    write_json(&ctx.layout.path(Stage::Filter, "report.json"), &ctx.prov, &summary)?;
    Ok(format!("filter: kept {} of {} samples", report.retained, report.input))
}
