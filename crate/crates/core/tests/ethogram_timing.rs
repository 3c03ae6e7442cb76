use calfplay::ethogram::*;
use calfplay::timing::*;
use proptest::prelude::*;

const CODES: [&str; 6] = ["Gallop", "Run", "Frontal push", "Straw toss", "Brush interaction", "Not Playing"];

/// Non-overlapping (start, stop) pairs per subject and behaviour, as events
/// with a duration column on the stops.
fn events_strategy() -> impl Strategy<Value = Vec<EventRecord>> {
    let bouts = prop::collection::vec((0usize..3, 0usize..CODES.len(), 1i64..200, 1i64..300), 1..40);
    bouts.prop_map(|bouts| {
        let mut next_free = std::collections::HashMap::new();
        let mut out = Vec::new();
        for (s, b, gap, len) in bouts {
            let key = (s, b);
            let start = next_free.get(&key).copied().unwrap_or(0) + gap;
            let stop = start + len;
            next_free.insert(key, stop);
            let subject = format!("Calf{s}");
            let behaviour = CODES[b].to_string();
            out.push(EventRecord {
                subject: subject.clone(),
                behaviour: behaviour.clone(),
                modifier: None,
                event_type: EventType::StateStart,
                time_tenths: start,
                duration_s: None,
            });
            out.push(EventRecord {
                subject,
                behaviour,
                modifier: None,
                event_type: EventType::StateStop,
                time_tenths: stop,
                duration_s: Some(len as f64 / 10.0),
            });
        }
        out
    })
}

proptest! {
    #[test]
    fn serialize_then_parse_is_identity(events in events_strategy()) {
        let mut buf = Vec::new();
        write_event_log(&mut buf, &events, Dialect::default()).unwrap();
        let back = parse_event_log(buf.as_slice(), Dialect::default()).unwrap();
        prop_assert_eq!(back, events);
    }

    #[test]
    fn semicolon_dialect_round_trip(events in events_strategy()) {
        let d = Dialect { delimiter: b';', quote: b'\'' };
        let mut buf = Vec::new();
        write_event_log(&mut buf, &events, d).unwrap();
        prop_assert_eq!(parse_event_log(buf.as_slice(), d).unwrap(), events);
    }

    #[test]
    fn durations_are_exact_differences(events in events_strategy()) {
        let p = pair_state_events(&events, &EthogramTable::builtin()).unwrap();
        for iv in &p.intervals {
            prop_assert!(iv.stop_tenths > iv.start_tenths);
            prop_assert_eq!(iv.duration_s(), (iv.stop_tenths - iv.start_tenths) as f64 / 10.0);
        }
    }

    #[test]
    fn pairing_is_order_stable(events in events_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let table = EthogramTable::builtin();
        let a = pair_state_events(&events, &table).unwrap();
        let mut shuffled = events.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let b = pair_state_events(&shuffled, &table).unwrap();
        prop_assert_eq!(a.intervals, b.intervals);
    }

    #[test]
    fn duration_sums_match_duration_column(events in events_strategy()) {
        let p = pair_state_events(&events, &EthogramTable::builtin()).unwrap();
        let mut paired = std::collections::BTreeMap::<(String, String), f64>::new();
        for iv in &p.intervals {
            *paired.entry((iv.subject.clone(), iv.behaviour.clone())).or_default() += iv.duration_s();
        }
        let mut recorded = std::collections::BTreeMap::<(String, String), (f64, usize)>::new();
        for e in events.iter().filter(|e| e.event_type == EventType::StateStop) {
            let r = recorded.entry((e.subject.clone(), e.behaviour.clone())).or_default();
            r.0 += e.duration_s.unwrap();
            r.1 += 1;
        }
        for (k, (sum, rows)) in recorded {
            prop_assert!((paired[&k] - sum).abs() <= 0.05 * rows as f64);
        }
    }

    #[test]
    fn ocr_correction_is_idempotent(raw in "20[0-9O]{2}-[0I][0-9SB]-[12][0-9ZOl] [01][0-9S]:[0-5][0-9B]:[0-5][0-9OI#]") {
        let once = correct_ocr_string(&raw);
        if let Some(text) = &once.text {
            let twice = correct_ocr_string(text);
            prop_assert_eq!(twice.text.as_ref(), Some(text));
            prop_assert_eq!(twice.status, OcrStatus::Ok);
        }
    }

    #[test]
    fn annotation_offsets_compose(a in 0u32..200_000, b in 0u32..200_000) {
        let start = Timestamp::parse_canonical("2024-06-15 06:00:00").unwrap();
        let (a, b) = (a as f64 / 10.0, b as f64 / 10.0);
        let direct = annotation_to_absolute(start, a + b).unwrap();
        let chained = annotation_to_absolute(annotation_to_absolute(start, a).unwrap(), b).unwrap();
        prop_assert_eq!(direct, chained);
    }

    #[test]
    fn success_rate_is_correctly_rounded(k in 0u32..7, frac in 0.0f64..=1.0) {
        // totals of 10^k give a finite decimal whose parse is the nearest double
        let total = 10usize.pow(k);
        let ok = ((total as f64) * frac) as usize;
        let digits = format!("{:0>width$}", ok * 100, width = k as usize + 1);
        let (int, dec) = digits.split_at(digits.len() - k as usize);
        let exact: f64 = format!("{int}.{dec}0").parse().unwrap();
        prop_assert_eq!(success_rate_pct(ok, total), exact);
    }

    #[test]
    fn success_rate_is_the_ratio(total in 1usize..100_000, frac in 0.0f64..=1.0) {
        let ok = ((total as f64) * frac) as usize;
        let r = success_rate_pct(ok, total);
        let naive = ok as f64 / total as f64 * 100.0;
        prop_assert!((r - naive).abs() <= 2.0 * f64::EPSILON * naive.abs());
    }
}

#[test]
fn table_s1_classification() {
    let t = EthogramTable::builtin();
    assert_eq!(classify_behaviour("Gallop", &t).unwrap(), (BehaviourCategory::Locomotor, true));
    assert_eq!(classify_behaviour("Frontal push", &t).unwrap(), (BehaviourCategory::Social, true));
    assert_eq!(classify_behaviour("Milk feeding", &t).unwrap(), (BehaviourCategory::NonPlayState, false));
    assert!(classify_behaviour("Grooming", &t).is_err());
    assert_eq!(t.entries().len(), 19);
}

#[test]
fn time_keeps_tenths() {
    let csv = "Subject,Behaviour,Modifier,Event_Type,Time_Relative_sf,Duration\nCalf3,Gallop,-,State start,3661.5,-\n";
    let e = parse_event_log(csv.as_bytes(), Dialect::default()).unwrap();
    assert_eq!(e[0].time_s(), 3661.5);
    assert_eq!(e[0].subject, "Calf3");
    assert_eq!(e[0].modifier, None);
}

#[test]
fn pipeline_day_ends_at_2300() {
    let start = Timestamp::parse_canonical("2024-06-15 06:00:00").unwrap();
    assert_eq!(annotation_to_absolute(start, 61_200.0).unwrap().canonical(), "2024-06-15 23:00:00");
}

#[test]
fn backwards_jump_repaired_to_neighbour_midpoint() {
    let start = Timestamp::parse_canonical("2024-06-15 06:00:00").unwrap();
    // one reading per second at 1 fps
    let mut readings: Vec<OcrReading> =
        (0..20).map(|i| OcrReading::from_raw(i, start.plus_millis(i as i64 * 1000).canonical())).collect();
    readings[10] = OcrReading::from_raw(10, start.plus_millis(10_000 - 3_600_000).canonical());
    let (report, repaired) = validate_timestamp_series(&readings, 1.0, &SeriesConfig::default()).unwrap();
    assert_eq!(report.repaired, 1);
    let expected = Timestamp((repaired[9].parsed.unwrap().0 + repaired[11].parsed.unwrap().0) / 2);
    assert_eq!(repaired[10].parsed, Some(expected));
    assert_eq!(repaired[10].status, OcrStatus::Corrected);
    assert!(report.monotonicity_violations.is_empty());
}
