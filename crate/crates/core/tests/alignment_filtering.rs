use calfplay::alignment::*;
use calfplay::ethogram::StateClass;
use calfplay::filtering::*;
use calfplay::timing::Timestamp;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn frame(ms: i64, id: i64) -> FrameMeta {
    FrameMeta {
        video: "FarmA_ch01_20240615_060000".into(),
        frame_index: None,
        timestamp: Timestamp(ms),
        tracking_id: id,
        bbox: BBox { x: 0.0, y: 0.0, w: 150.0, h: 180.0 },
        confidence: 0.9,
        mean_intensity: 120.0,
        occlusion_fraction: 0.1,
        mask_area_px: None,
        crop_path: format!("crops/{id}/{ms}.jpg"),
        embedding_path: format!("emb/{id}/{ms}.bin"),
    }
}

fn brute_nearest(times: &[i64], t: i64, tol: i64) -> Option<usize> {
    let mut best: Option<(i64, usize)> = None;
    for (i, &f) in times.iter().enumerate() {
        let d = (f - t).abs();
        if d <= tol && best.is_none_or(|(bd, bi)| d < bd || (d == bd && f < times[bi])) {
            best = Some((d, i));
        }
    }
    best.map(|(_, i)| i)
}

#[test]
fn matching_equals_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..200 {
        let nf = rng.random_range(0..60);
        let mut times: Vec<i64> = (0..nf).map(|_| rng.random_range(0..20_000)).collect();
        times.sort();
        times.dedup();
        let frames: Vec<FrameMeta> = times.iter().map(|&t| frame(t, 1)).collect();
        let intervals: Vec<AbsInterval> = (0..rng.random_range(0..20))
            .map(|_| {
                let a = rng.random_range(0..19_000);
                AbsInterval {
                    subject: "Calf1".into(),
                    behaviour: "Gallop".into(),
                    class: StateClass::ActivePlay,
                    start: Timestamp(a),
                    stop: Timestamp(a + rng.random_range(1..2_000)),
                }
            })
            .collect();
        let out = match_annotations_to_frames(&intervals, &frames, 0.5).unwrap();
        let mut events: Vec<i64> = intervals.iter().flat_map(|iv| [iv.start.0, iv.stop.0]).collect();
        events.sort();
        let mut m = out.matched.iter();
        let mut u = out.unmatched_events.iter();
        for e in events {
            match brute_nearest(&times, e, 500) {
                Some(i) => {
                    let got = m.next().unwrap();
                    assert_eq!((got.event_time.0, got.frame), (e, i));
                    assert!(got.delta_ms.abs() <= 500);
                }
                None => assert_eq!(u.next().unwrap().0, e),
            }
        }
        assert!(m.next().is_none() && u.next().is_none());
        let partnered: std::collections::BTreeSet<usize> = out.matched.iter().map(|m| m.frame).collect();
        for f in &out.unpartnered_frames {
            assert!(!partnered.contains(f));
        }
        assert_eq!(partnered.len() + out.unpartnered_frames.len(), frames.len());
    }
}

#[test]
fn thousand_by_thousand() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut times: Vec<i64> = (0..1000).map(|_| rng.random_range(0..600_000)).collect();
    times.sort();
    let ts: Vec<Timestamp> = times.iter().map(|&t| Timestamp(t)).collect();
    for _ in 0..1000 {
        let e = rng.random_range(-1000..601_000);
        let got = nearest_frame(&ts, Timestamp(e), 500);
        let want = brute_nearest(&times, e, 500);
        // with duplicate times either index of the run is the same frame time
        assert_eq!(got.map(|i| times[i]), want.map(|i| times[i]));
        if let Some(i) = got {
            assert!(i == 0 || times[i - 1] < times[i], "tie must resolve to the first of equal times");
        }
    }
}

#[test]
fn tolerance_examples() {
    let s = |v: &[i64]| v.iter().map(|&t| Timestamp(t)).collect::<Vec<_>>();
    assert_eq!(nearest_frame(&s(&[99_600, 100_300]), Timestamp(100_000), 500), Some(1));
    assert_eq!(nearest_frame(&s(&[99_300, 100_700]), Timestamp(100_000), 500), None);
    assert_eq!(nearest_frame(&s(&[99_800, 100_200]), Timestamp(100_000), 500), Some(0));
}

const CLASSES: [StateClass; 5] =
    [StateClass::Management, StateClass::ActivePlay, StateClass::NonActivePlay, StateClass::OutOfView, StateClass::Other];

fn pseudocode(present: [bool; 5]) -> FinalLabel {
    let [management, active, non_active, out_of_view, _] = present;
    if management {
        FinalLabel::Management
    } else if active {
        FinalLabel::ActivePlaying
    } else if non_active {
        FinalLabel::NonActivePlaying
    } else if out_of_view {
        FinalLabel::OutOfView
    } else {
        FinalLabel::NotPlaying
    }
}

fn subset(mask: u32) -> ([bool; 5], Vec<StateClass>) {
    let present: [bool; 5] = std::array::from_fn(|k| mask & (1 << k) != 0);
    let states = CLASSES.iter().zip(present).filter(|(_, p)| *p).map(|(c, _)| *c).collect();
    (present, states)
}

#[test]
fn truth_table_all_32_cases() {
    for mask in 0..32u32 {
        let (present, states) = subset(mask);
        assert_eq!(assign_final_label(states), pseudocode(present), "mask {mask:05b}");
    }
}

#[test]
fn adding_a_state_never_lowers_priority() {
    for mask in 0..32u32 {
        for k in 0..5 {
            let (_, a) = subset(mask);
            let (_, b) = subset(mask | (1 << k));
            assert!(assign_final_label(b).priority() >= assign_final_label(a).priority());
        }
    }
}

#[test]
fn metadata_example_row() {
    let start = Timestamp::parse_flexible("2024-06-15T08:23:45.120").unwrap();
    let iv = AbsInterval {
        subject: "Calf7".into(),
        behaviour: "Gallop".into(),
        class: StateClass::ActivePlay,
        start: Timestamp(start.0 - 1000),
        stop: Timestamp(start.0 + 1000),
    };
    let subjects = SubjectMap::from_subject_names(["Calf7"]);
    let samples = align_frames(&[iv], &[frame(start.0, 7)], &subjects);
    let mut buf = Vec::new();
    build_metadata_table(&mut buf, &samples).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.starts_with("2024-06-15T08:23:45.120Z,Gallop,Active Playing,"), "{row}");
    assert!(row.contains(",7,Active Playing,"), "{row}");

    let mut empty = Vec::new();
    build_metadata_table(&mut empty, &[]).unwrap();
    assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);
}

fn sample(ms: i64, id: i64, label: FinalLabel) -> AlignedSample {
    AlignedSample {
        frame: frame(ms, id),
        primary_raw: None,
        primary_label: None,
        secondary_raw: None,
        secondary_label: None,
        final_label: label,
    }
}

/// Random tracks with out-of-view runs, bad frames and mask spikes.
fn samples_strategy() -> impl Strategy<Value = Vec<AlignedSample>> {
    prop::collection::vec((1i64..3, 100i64..3000, 0u8..10, 0u8..20), 1..120).prop_map(|rows| {
        let mut clock = [0i64; 3];
        rows.into_iter()
            .map(|(id, step, label, defect)| {
                clock[id as usize] += step;
                let l = if label < 4 { FinalLabel::OutOfView } else { FinalLabel::NotPlaying };
                let mut s = sample(clock[id as usize], id, l);
                match defect {
                    0 => s.frame.occlusion_fraction = 0.7,
                    1 => s.frame.bbox.w = 99.0,
                    2 => s.frame.mean_intensity = 29.0,
                    3 => s.frame.mean_intensity = 226.0,
                    4 => s.frame.mask_area_px = Some(3.0 * 150.0 * 180.0),
                    _ => s.frame.mask_area_px = Some(150.0 * 180.0),
                }
                s
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn exclusion_conserves_samples(samples in samples_strategy()) {
        let n = samples.len();
        let (kept, report) = exclude_frames(samples, &FilterConfig::default());
        prop_assert_eq!(kept.len(), report.retained);
        prop_assert_eq!(report.retained + report.total_excluded(), n);
        let per_track: usize = report.tracks.iter().map(|t| t.retained + t.excluded.values().sum::<usize>()).sum();
        prop_assert_eq!(per_track, n);
    }

    #[test]
    fn exclusion_is_idempotent(samples in samples_strategy()) {
        let cfg = FilterConfig::default();
        let (kept, _) = exclude_frames(samples, &cfg);
        let (again, report) = exclude_frames(kept.clone(), &cfg);
        prop_assert_eq!(report.total_excluded(), 0);
        prop_assert_eq!(again, kept);
    }

    #[test]
    fn exclusion_ignores_input_order(samples in samples_strategy(), seed in any::<u64>()) {
        let cfg = FilterConfig::default();
        let mut shuffled = samples.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (mut a, ra) = exclude_frames(samples, &cfg);
        let (mut b, rb) = exclude_frames(shuffled, &cfg);
        let key = |s: &AlignedSample| (s.tracking_id(), s.timestamp());
        a.sort_by_key(key);
        b.sort_by_key(key);
        prop_assert_eq!(a, b);
        prop_assert_eq!(ra.excluded, rb.excluded);
    }

    #[test]
    fn detection_filter_is_exact_threshold(conf in 0.0f64..=1.0) {
        let mut f = frame(0, 1);
        f.confidence = conf;
        let (kept, report) = filter_detections(vec![f], &FilterConfig::default());
        prop_assert_eq!(kept.len() == 1, conf >= 0.55);
        prop_assert_eq!(report.input, 1);
    }
}

#[test]
fn boundary_values() {
    let cfg = FilterConfig::default();
    let conf = |c: f64| {
        let mut f = frame(0, 1);
        f.confidence = c;
        filter_detections(vec![f], &cfg).0.len()
    };
    assert_eq!((conf(0.55), conf(0.549), conf(0.54), conf(0.78)), (1, 0, 0, 1));

    let one = |edit: &dyn Fn(&mut AlignedSample)| {
        let mut s = sample(0, 1, FinalLabel::NotPlaying);
        edit(&mut s);
        exclude_frames(vec![s], &cfg).0.len()
    };
    assert_eq!(one(&|s| s.frame.mean_intensity = 29.0), 0);
    assert_eq!(one(&|s| s.frame.mean_intensity = 30.0), 1);
    assert_eq!(one(&|s| s.frame.mean_intensity = 225.0), 1);
    assert_eq!(one(&|s| s.frame.mean_intensity = 225.5), 0);
    assert_eq!(one(&|s| s.frame.bbox.w = 99.0), 0);
    assert_eq!(one(&|s| s.frame.bbox.w = 100.0), 1);
    assert_eq!(one(&|s| s.frame.occlusion_fraction = 0.5), 1);
    assert_eq!(one(&|s| s.frame.occlusion_fraction = 0.51), 0);

    let gap = |len_ms: i64| {
        let mut v = vec![sample(0, 1, FinalLabel::NotPlaying)];
        v.extend((0..5).map(|k| sample(1000 + k * len_ms / 5, 1, FinalLabel::OutOfView)));
        v.push(sample(1000 + len_ms, 1, FinalLabel::NotPlaying));
        let (_, r) = exclude_frames(v, &cfg);
        r.excluded.get(&ExclusionReason::OutOfViewGap).copied().unwrap_or(0)
    };
    assert_eq!(gap(5000), 0);
    assert_eq!(gap(5010), 5);
    assert_eq!(gap(5100), 5);
}

#[test]
fn oversized_mask_excluded() {
    let cfg = FilterConfig::default();
    let area = 150.0 * 180.0;
    let mut v: Vec<AlignedSample> = (0..10)
        .map(|k| {
            let mut s = sample(k * 100, 1, FinalLabel::NotPlaying);
            s.frame.mask_area_px = Some(area);
            s
        })
        .collect();
    v[6].frame.mask_area_px = Some(2.3 * area);
    v[8].frame.mask_area_px = Some(1.9 * area);
    let (kept, r) = exclude_frames(v, &cfg);
    assert_eq!(kept.len(), 9);
    assert_eq!(r.excluded[&ExclusionReason::OversizedMask], 1);
}
