//! Detection-confidence filtering and frame exclusion.
//!
//! Boundaries follow the thresholds literally: confidence `>= min` keeps,
//! out-of-view gaps `> max` seconds exclude, bounding boxes `< min` pixels on
//! their smaller side exclude, intensities `< min` or `> max` exclude.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::alignment::{AlignedSample, FinalLabel, FrameMeta};
use crate::error::{Error, Result};
use crate::timing::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_confidence: f64,
    pub max_out_of_view_s: f64,
    pub max_occlusion_fraction: f64,
    pub min_bbox_px: f64,
    pub min_intensity: f64,
    pub max_intensity: f64,
    pub max_mask_area_ratio: f64,
    /// Retained frames per track the typical bounding-box area is taken over.
    pub mask_history: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_confidence: 0.55,
            max_out_of_view_s: 5.0,
            max_occlusion_fraction: 0.5,
            min_bbox_px: 100.0,
            min_intensity: 30.0,
            max_intensity: 225.0,
            max_mask_area_ratio: 2.0,
            mask_history: 200,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("min_confidence", self.min_confidence),
            ("max_out_of_view_s", self.max_out_of_view_s),
            ("max_occlusion_fraction", self.max_occlusion_fraction),
            ("min_bbox_px", self.min_bbox_px),
            ("min_intensity", self.min_intensity),
            ("max_intensity", self.max_intensity),
            ("max_mask_area_ratio", self.max_mask_area_ratio),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Range(format!("{name} must be positive, got {v}")));
            }
        }
        if self.min_intensity >= self.max_intensity {
            return Err(Error::Range("min_intensity must be below max_intensity".into()));
        }
        if self.mask_history == 0 {
            return Err(Error::Range("mask_history must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub input: usize,
    pub retained: usize,
    pub low_confidence: usize,
}

/// Keeps detections with `confidence >= min_confidence`.
pub fn filter_detections(frames: Vec<FrameMeta>, cfg: &FilterConfig) -> (Vec<FrameMeta>, DetectionReport) {
    let input = frames.len();
    let kept: Vec<FrameMeta> = frames.into_iter().filter(|f| f.confidence >= cfg.min_confidence).collect();
    let report = DetectionReport { input, retained: kept.len(), low_confidence: input - kept.len() };
    (kept, report)
}

/// Exclusion reasons in attribution order: a frame matching several is
/// counted under the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    OutOfViewGap,
    Occlusion,
    SmallBbox,
    Lighting,
    OversizedMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapKind {
    /// A run of frames labelled out of view.
    OutOfView,
    /// No frames at all for the track.
    Dropout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub kind: GapKind,
    pub start: Timestamp,
    pub end: Timestamp,
    pub duration_s: f64,
    pub excluded_frames: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub video: String,
    pub tracking_id: i64,
    pub input: usize,
    pub retained: usize,
    pub excluded: BTreeMap<ExclusionReason, usize>,
    pub gaps: Vec<Gap>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub input: usize,
    pub retained: usize,
    pub excluded: BTreeMap<ExclusionReason, usize>,
    pub tracks: Vec<TrackReport>,
}

impl ExclusionReport {
    pub fn total_excluded(&self) -> usize {
        self.excluded.values().sum()
    }

    /// One JSON object per track.
    pub fn write_jsonl<W: Write>(&self, mut sink: W) -> Result<()> {
        for t in &self.tracks {
            serde_json::to_writer(&mut sink, t)?;
            sink.write_all(b"\n").map_err(|e| Error::io("<exclusions>", e))?;
        }
        Ok(())
    }
}

fn per_frame_reason(f: &FrameMeta, cfg: &FilterConfig) -> Option<ExclusionReason> {
    if f.occlusion_fraction > cfg.max_occlusion_fraction {
        Some(ExclusionReason::Occlusion)
    } else if f.bbox.min_side() < cfg.min_bbox_px {
        Some(ExclusionReason::SmallBbox)
    } else if f.mean_intensity < cfg.min_intensity || f.mean_intensity > cfg.max_intensity {
        Some(ExclusionReason::Lighting)
    } else {
        None
    }
}

fn median(values: &VecDeque<f64>) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Applies the frame-exclusion criteria track by track.
///
/// Tracks are keyed by (video, tracking ID) and processed in time order;
/// retained samples keep their input order.
pub fn exclude_frames(samples: Vec<AlignedSample>, cfg: &FilterConfig) -> (Vec<AlignedSample>, ExclusionReport) {
    let n = samples.len();
    let mut tracks: BTreeMap<(String, i64), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        tracks.entry((s.frame.video.clone(), s.tracking_id())).or_default().push(i);
    }
    let max_gap_ms = (cfg.max_out_of_view_s * 1000.0).round() as i64;
    let mut reason: HashMap<usize, ExclusionReason> = HashMap::new();
    let mut report = ExclusionReport { input: n, ..Default::default() };

    for ((video, id), mut idx) in tracks {
        idx.sort_by_key(|&i| (samples[i].timestamp(), i));
        let mut track = TrackReport { video, tracking_id: id, input: idx.len(), ..Default::default() };

        // (2)-(4) are per frame; (5) compares against the running typical box
        // area of retained in-view frames
        let mut own: HashMap<usize, ExclusionReason> = HashMap::new();
        let mut history: VecDeque<f64> = VecDeque::with_capacity(cfg.mask_history);
        for &i in &idx {
            let f = &samples[i].frame;
            if let Some(r) = per_frame_reason(f, cfg) {
                own.insert(i, r);
                continue;
            }
            if let Some(mask) = f.mask_area_px {
                if !history.is_empty() && mask > cfg.max_mask_area_ratio * median(&history) {
                    own.insert(i, ExclusionReason::OversizedMask);
                    continue;
                }
            }
            if samples[i].final_label != FinalLabel::OutOfView {
                if history.len() == cfg.mask_history {
                    history.pop_front();
                }
                history.push_back(f.bbox.area());
            }
        }

        // (1) out-of-view runs among the frames that pass (2)-(5), each
        // measured from its first frame to the next in-view frame
        let clean: Vec<usize> = idx.iter().copied().filter(|i| !own.contains_key(i)).collect();
        let is_oov = |i: usize| samples[i].final_label == FinalLabel::OutOfView;
        let mut windows: Vec<(Timestamp, Timestamp, bool)> = Vec::new();
        let mut k = 0;
        while k < clean.len() {
            if !is_oov(clean[k]) {
                if let Some(&next) = clean.get(k + 1) {
                    let (a, b) = (samples[clean[k]].timestamp(), samples[next].timestamp());
                    if b.0 - a.0 > max_gap_ms {
                        track.gaps.push(gap(GapKind::Dropout, a, b, 0));
                    }
                }
                k += 1;
                continue;
            }
            let run_start = k;
            while k < clean.len() && is_oov(clean[k]) {
                k += 1;
            }
            let start = samples[clean[run_start]].timestamp();
            let end = clean.get(k).map(|&i| samples[i].timestamp()).unwrap_or(samples[clean[k - 1]].timestamp());
            if end.0 - start.0 > max_gap_ms {
                // a run still open at the end of the track includes its last frame
                windows.push((start, end, k == clean.len()));
                track.gaps.push(gap(GapKind::OutOfView, start, end, 0));
            }
        }
        for &i in &idx {
            let t = samples[i].timestamp();
            let in_gap = is_oov(i) && windows.iter().any(|&(a, b, closed)| a <= t && (t < b || (closed && t == b)));
            if in_gap {
                reason.insert(i, ExclusionReason::OutOfViewGap);
                if let Some(g) = track.gaps.iter_mut().find(|g| g.kind == GapKind::OutOfView && g.start <= t && t <= g.end) {
                    g.excluded_frames += 1;
                }
            } else if let Some(&r) = own.get(&i) {
                reason.insert(i, r);
            }
        }

        for &i in &idx {
            match reason.get(&i) {
                Some(&r) => *track.excluded.entry(r).or_default() += 1,
                None => track.retained += 1,
            }
        }
        for (&r, &c) in &track.excluded {
            *report.excluded.entry(r).or_default() += c;
        }
        report.retained += track.retained;
        report.tracks.push(track);
    }

    let retained = samples
        .into_iter()
        .enumerate()
        .filter(|(i, _)| !reason.contains_key(i))
        .map(|(_, s)| s)
        .collect();
    (retained, report)
}

fn gap(kind: GapKind, start: Timestamp, end: Timestamp, excluded_frames: usize) -> Gap {
    Gap { kind, start, end, duration_s: (end.0 - start.0) as f64 / 1000.0, excluded_frames }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::BBox;

    fn frame(ms: i64) -> FrameMeta {
        FrameMeta {
            video: "v".into(),
            frame_index: None,
            timestamp: Timestamp(ms),
            tracking_id: 1,
            bbox: BBox { x: 0.0, y: 0.0, w: 150.0, h: 150.0 },
            confidence: 0.9,
            mean_intensity: 100.0,
            occlusion_fraction: 0.1,
            mask_area_px: None,
            crop_path: "c".into(),
            embedding_path: "e".into(),
        }
    }

    fn sample(ms: i64, label: FinalLabel) -> AlignedSample {
        AlignedSample {
            frame: frame(ms),
            primary_raw: None,
            primary_label: None,
            secondary_raw: None,
            secondary_label: None,
            final_label: label,
        }
    }

    #[test]
    fn confidence_boundary_inclusive() {
        let mut fs = vec![frame(0), frame(1), frame(2)];
        fs[0].confidence = 0.54;
        fs[1].confidence = 0.55;
        fs[2].confidence = 0.78;
        let (kept, rep) = filter_detections(fs, &FilterConfig::default());
        assert_eq!(kept.iter().map(|f| f.confidence).collect::<Vec<_>>(), vec![0.55, 0.78]);
        assert_eq!(rep, DetectionReport { input: 3, retained: 2, low_confidence: 1 });
        let (kept, rep) = filter_detections(vec![], &FilterConfig::default());
        assert!(kept.is_empty());
        assert_eq!(rep, DetectionReport::default());
    }

    #[test]
    fn per_frame_boundaries() {
        let cfg = FilterConfig::default();
        let mut s = vec![sample(0, FinalLabel::NotPlaying); 6];
        s[0].frame.bbox = BBox { x: 0.0, y: 0.0, w: 99.0, h: 250.0 };
        s[1].frame.bbox = BBox { x: 0.0, y: 0.0, w: 100.0, h: 250.0 };
        s[2].frame.mean_intensity = 29.0;
        s[3].frame.mean_intensity = 30.0;
        s[4].frame.occlusion_fraction = 0.51;
        s[5].frame.mean_intensity = 225.5;
        for (k, x) in s.iter_mut().enumerate() {
            x.frame.timestamp = Timestamp(k as i64 * 40);
        }
        let (kept, rep) = exclude_frames(s, &cfg);
        assert_eq!(kept.len(), 2);
        assert_eq!(rep.excluded[&ExclusionReason::SmallBbox], 1);
        assert_eq!(rep.excluded[&ExclusionReason::Lighting], 2);
        assert_eq!(rep.excluded[&ExclusionReason::Occlusion], 1);
        assert_eq!(rep.retained + rep.total_excluded(), rep.input);
    }

    fn gap_track(gap_ms: i64) -> Vec<AlignedSample> {
        let mut s = vec![sample(0, FinalLabel::NotPlaying)];
        let mut t = 40;
        while t < 40 + gap_ms {
            s.push(sample(t, FinalLabel::OutOfView));
            t += 40;
        }
        s.push(sample(40 + gap_ms, FinalLabel::NotPlaying));
        s
    }

    #[test]
    fn out_of_view_gap_boundary() {
        let cfg = FilterConfig::default();
        let (kept, rep) = exclude_frames(gap_track(5000), &cfg);
        assert_eq!(kept.len(), gap_track(5000).len());
        assert!(rep.excluded.is_empty());

        let (kept, rep) = exclude_frames(gap_track(5100), &cfg);
        assert_eq!(kept.len(), 2);
        assert_eq!(rep.tracks[0].gaps.len(), 1);
        assert_eq!(rep.tracks[0].gaps[0].duration_s, 5.1);
        assert_eq!(rep.excluded[&ExclusionReason::OutOfViewGap], gap_track(5100).len() - 2);
    }

    #[test]
    fn dropout_reported_not_excluded() {
        let s = vec![sample(0, FinalLabel::NotPlaying), sample(8000, FinalLabel::NotPlaying)];
        let (kept, rep) = exclude_frames(s, &FilterConfig::default());
        assert_eq!(kept.len(), 2);
        assert_eq!(rep.tracks[0].gaps[0].kind, GapKind::Dropout);
    }

    #[test]
    fn oversized_mask_excluded() {
        let mut s: Vec<AlignedSample> = (0..10).map(|k| sample(k * 40, FinalLabel::NotPlaying)).collect();
        for x in s.iter_mut() {
            x.frame.mask_area_px = Some(0.9 * x.frame.bbox.area());
        }
        s[9].frame.mask_area_px = Some(2.3 * 150.0 * 150.0);
        let (kept, rep) = exclude_frames(s, &FilterConfig::default());
        assert_eq!(kept.len(), 9);
        assert_eq!(rep.excluded[&ExclusionReason::OversizedMask], 1);
    }

    #[test]
    fn first_reason_wins() {
        let mut s = vec![sample(0, FinalLabel::NotPlaying)];
        s[0].frame.occlusion_fraction = 0.9;
        s[0].frame.bbox.w = 10.0;
        s[0].frame.mean_intensity = 5.0;
        let (_, rep) = exclude_frames(s, &FilterConfig::default());
        assert_eq!(rep.excluded.len(), 1);
        assert_eq!(rep.excluded[&ExclusionReason::Occlusion], 1);
    }

    #[test]
    fn report_serializes_per_track() {
        let mut s = gap_track(6000);
        let mut other = sample(0, FinalLabel::NotPlaying);
        other.frame.tracking_id = 2;
        s.push(other);
        let (_, rep) = exclude_frames(s, &FilterConfig::default());
        let mut buf = Vec::new();
        rep.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["tracking_id"], 1);
        assert!(v["excluded"]["out_of_view_gap"].as_u64().unwrap() > 0);
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig::default().validate().is_ok());
        let bad = FilterConfig { min_intensity: 200.0, max_intensity: 100.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = FilterConfig { min_confidence: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
