//! Behavioural event logs and the ethogram.
//!
//! Event logs are the delimited exports of an observation tool: one row per
//! state start or stop, with times in seconds from the start of the video at
//! 0.1 s resolution. Times are held as integer tenths so that resolution is
//! exact. The ethogram table maps every behaviour code to a category, a play
//! flag and the class used by the label hierarchy; it is data, not code.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Origin, Result};

const BUILTIN_ETHOGRAM: &str = include_str!("../data/ethogram.csv");

/// Tolerance between a recorded duration and the paired start/stop times.
pub const DURATION_TOLERANCE_S: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BehaviourCategory {
    Locomotor,
    Social,
    Object,
    Straw,
    NonPlayState,
}

impl BehaviourCategory {
    pub const PLAY: [BehaviourCategory; 4] = [
        BehaviourCategory::Locomotor,
        BehaviourCategory::Social,
        BehaviourCategory::Object,
        BehaviourCategory::Straw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviourCategory::Locomotor => "Locomotor",
            BehaviourCategory::Social => "Social",
            BehaviourCategory::Object => "Object",
            BehaviourCategory::Straw => "Straw",
            BehaviourCategory::NonPlayState => "NonPlayState",
        }
    }
}

impl fmt::Display for BehaviourCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BehaviourCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize_key(s).as_str() {
            "locomotor" | "locomotorplay" => Ok(BehaviourCategory::Locomotor),
            "social" | "socialplay" => Ok(BehaviourCategory::Social),
            "object" | "objectplay" => Ok(BehaviourCategory::Object),
            "straw" | "strawplay" => Ok(BehaviourCategory::Straw),
            "nonplaystate" | "nonplaystates" | "nonplay" => Ok(BehaviourCategory::NonPlayState),
            _ => Err(Error::Parse {
                input: s.to_string(),
                message: "unknown behaviour category".into(),
            }),
        }
    }
}

/// Role of a behaviour in the final-label hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StateClass {
    Management,
    ActivePlay,
    NonActivePlay,
    OutOfView,
    Other,
}

impl FromStr for StateClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize_key(s).as_str() {
            "management" => Ok(StateClass::Management),
            "active" | "activeplay" | "activeplaying" => Ok(StateClass::ActivePlay),
            "nonactive" | "nonactiveplay" | "nonactiveplaying" => Ok(StateClass::NonActivePlay),
            "outofview" => Ok(StateClass::OutOfView),
            "other" | "notplaying" => Ok(StateClass::Other),
            _ => Err(Error::Parse {
                input: s.to_string(),
                message: "unknown label class".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EthogramEntry {
    pub code: String,
    pub category: BehaviourCategory,
    pub play: bool,
    pub class: StateClass,
}

/// Closed mapping from behaviour code to category, play flag and label class.
///
/// Codes are matched case-insensitively with whitespace, `-`, `_` and
/// parentheses ignored, so `Frontal push`, `FrontalPush` and `frontal_push`
/// name the same entry.
#[derive(Debug, Clone)]
pub struct EthogramTable {
    entries: Vec<EthogramEntry>,
    index: HashMap<String, usize>,
}

impl EthogramTable {
    /// The shipped table seeded from the study ethogram.
    pub fn builtin() -> Self {
        Self::from_reader(BUILTIN_ETHOGRAM.as_bytes()).expect("builtin ethogram is well-formed")
    }

    /// Reads `code,category,play_flag[,label_class]`.
    ///
    /// Without a `label_class` column the class is derived: Locomotor and
    /// Social play are active, Object and Straw play non-active, and the
    /// `Management` / `Out of view` codes get their own classes.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| -> Result<usize> {
            find_column(&headers, &[name]).ok_or_else(|| Error::MissingColumn {
                origin: Origin::default(),
                column: name.to_string(),
            })
        };
        let code_i = col("code")?;
        let cat_i = col("category")?;
        let play_i = col("play_flag")?;
        let class_i = find_column(&headers, &["label_class"]);

        let mut table = EthogramTable { entries: Vec::new(), index: HashMap::new() };
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let origin = Origin::row(i + 1);
            let code = rec.get(code_i).unwrap_or("").to_string();
            if code.is_empty() {
                return Err(Error::row(origin, "empty behaviour code"));
            }
            let category: BehaviourCategory = rec
                .get(cat_i)
                .unwrap_or("")
                .parse()
                .map_err(|e: Error| Error::row(origin.clone(), e.to_string()))?;
            let play = parse_bool(rec.get(play_i).unwrap_or(""))
                .ok_or_else(|| Error::row(origin.clone(), "play_flag must be true/false"))?;
            let class = match class_i.and_then(|c| rec.get(c)).filter(|s| !s.is_empty()) {
                Some(s) => s.parse().map_err(|e: Error| Error::row(origin.clone(), e.to_string()))?,
                None => default_class(&code, category),
            };
            table.insert(EthogramEntry { code, category, play, class }, origin)?;
        }
        Ok(table)
    }

    fn insert(&mut self, entry: EthogramEntry, origin: Origin) -> Result<()> {
        let key = normalize_key(&entry.code);
        if self.index.contains_key(&key) {
            return Err(Error::row(origin, format!("duplicate behaviour code `{}`", entry.code)));
        }
        self.index.insert(key, self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    pub fn lookup(&self, code: &str) -> Result<&EthogramEntry> {
        self.index
            .get(&normalize_key(code))
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::UnknownBehaviour(code.to_string()))
    }

    pub fn entries(&self) -> &[EthogramEntry] {
        &self.entries
    }
}

fn default_class(code: &str, category: BehaviourCategory) -> StateClass {
    match category {
        BehaviourCategory::Locomotor | BehaviourCategory::Social => StateClass::ActivePlay,
        BehaviourCategory::Object | BehaviourCategory::Straw => StateClass::NonActivePlay,
        BehaviourCategory::NonPlayState => match normalize_key(code).as_str() {
            "management" => StateClass::Management,
            "outofview" => StateClass::OutOfView,
            _ => StateClass::Other,
        },
    }
}

/// Category and play flag of a behaviour code. Unknown codes are an error.
pub fn classify_behaviour(code: &str, table: &EthogramTable) -> Result<(BehaviourCategory, bool)> {
    let e = table.lookup(code)?;
    Ok((e.category, e.play))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventType {
    // Stops sort first so a stop and a start at the same instant close then reopen.
    StateStop,
    StateStart,
}

impl EventType {
    pub fn as_str(self) -> &'static str {
        match self {
            EventType::StateStart => "State start",
            EventType::StateStop => "State stop",
        }
    }
}

impl FromStr for EventType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match normalize_key(s).as_str() {
            "statestart" | "start" => Ok(EventType::StateStart),
            "statestop" | "stop" => Ok(EventType::StateStop),
            _ => Err(Error::Parse {
                input: s.to_string(),
                message: "event type must be a state start or state stop".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub subject: String,
    pub behaviour: String,
    pub modifier: Option<String>,
    pub event_type: EventType,
    /// Seconds from video start, in tenths.
    pub time_tenths: i64,
    pub duration_s: Option<f64>,
}

impl EventRecord {
    pub fn time_s(&self) -> f64 {
        tenths_to_seconds(self.time_tenths)
    }
}

pub fn tenths_to_seconds(t: i64) -> f64 {
    t as f64 / 10.0
}

/// Delimited-text dialect of an event log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dialect {
    pub delimiter: u8,
    pub quote: u8,
}

impl Default for Dialect {
    fn default() -> Self {
        Dialect { delimiter: b',', quote: b'"' }
    }
}

const COL_SUBJECT: &[&str] = &["Subject"];
const COL_BEHAVIOUR: &[&str] = &["Behaviour", "Behavior"];
const COL_MODIFIER: &[&str] = &["Modifier"];
const COL_EVENT_TYPE: &[&str] = &["Event_Type"];
const COL_TIME: &[&str] = &["Time_Relative_sf", "Time_Relative"];
const COL_DURATION: &[&str] = &["Duration", "Duration_sf"];

/// Parses an event log. Columns are located by name, in any order.
pub fn parse_event_log<R: Read>(source: R, dialect: Dialect) -> Result<Vec<EventRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(dialect.delimiter)
        .quote(dialect.quote)
        .trim(csv::Trim::All)
        .from_reader(source);
    let headers = rdr.headers()?.clone();
    let require = |names: &[&str]| -> Result<usize> {
        find_column(&headers, names).ok_or_else(|| Error::MissingColumn {
            origin: Origin::default(),
            column: names[0].to_string(),
        })
    };
    let subject_i = require(COL_SUBJECT)?;
    let behaviour_i = require(COL_BEHAVIOUR)?;
    let modifier_i = require(COL_MODIFIER)?;
    let type_i = require(COL_EVENT_TYPE)?;
    let time_i = require(COL_TIME)?;
    let duration_i = require(COL_DURATION)?;

    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let origin = Origin::row(i + 1);
        let rec = rec.map_err(|e| Error::row(origin.clone(), e.to_string()))?;
        let field = |idx: usize| rec.get(idx).unwrap_or("");
        let subject = field(subject_i);
        let behaviour = field(behaviour_i);
        if subject.is_empty() || behaviour.is_empty() {
            return Err(Error::row(origin, "subject and behaviour must be non-empty"));
        }
        let event_type: EventType = field(type_i)
            .parse()
            .map_err(|e: Error| Error::row(origin.clone(), e.to_string()))?;
        let time_tenths = parse_tenths(field(time_i))
            .ok_or_else(|| Error::row(origin.clone(), format!("unparseable time `{}`", field(time_i))))?;
        let duration_s = match optional(field(duration_i)) {
            None => None,
            Some(d) => Some(
                d.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::row(origin.clone(), format!("unparseable duration `{d}`")))?,
            ),
        };
        out.push(EventRecord {
            subject: subject.to_string(),
            behaviour: behaviour.to_string(),
            modifier: optional(field(modifier_i)).map(str::to_string),
            event_type,
            time_tenths,
            duration_s,
        });
    }
    Ok(out)
}

/// Writes records in the same column layout `parse_event_log` reads.
pub fn write_event_log<W: Write>(sink: W, records: &[EventRecord], dialect: Dialect) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(dialect.delimiter)
        .quote(dialect.quote)
        .from_writer(sink);
    w.write_record(["Subject", "Behaviour", "Modifier", "Event_Type", "Time_Relative_sf", "Duration"])?;
    for r in records {
        let time = format_tenths(r.time_tenths);
        let duration = r.duration_s.map(|d| format!("{d}")).unwrap_or_default();
        w.write_record([
            r.subject.as_str(),
            r.behaviour.as_str(),
            r.modifier.as_deref().unwrap_or(""),
            r.event_type.as_str(),
            time.as_str(),
            duration.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<event log>", e))?;
    Ok(())
}

fn optional(s: &str) -> Option<&str> {
    match s {
        "" | "-" => None,
        s => Some(s),
    }
}

/// Parses a non-negative decimal number of seconds into tenths, rounding to
/// the nearest tenth.
pub fn parse_tenths(s: &str) -> Option<i64> {
    let v: f64 = s.trim().parse().ok()?;
    if !v.is_finite() || v < 0.0 {
        return None;
    }
    let t = (v * 10.0).round();
    (t <= i64::MAX as f64).then_some(t as i64)
}

pub fn format_tenths(t: i64) -> String {
    format!("{}.{}", t / 10, t % 10)
}

/// Why an interval was closed other than by its own stop event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Closure {
    Stop,
    /// A second start of the same state arrived before a stop.
    Reentry,
    /// Still open at the end of the log; closed at the last timestamp.
    StreamEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviourInterval {
    pub subject: String,
    pub behaviour: String,
    pub modifier: Option<String>,
    pub category: BehaviourCategory,
    pub start_tenths: i64,
    pub stop_tenths: i64,
    pub closure: Closure,
}

impl BehaviourInterval {
    pub fn start_s(&self) -> f64 {
        tenths_to_seconds(self.start_tenths)
    }

    pub fn stop_s(&self) -> f64 {
        tenths_to_seconds(self.stop_tenths)
    }

    pub fn duration_s(&self) -> f64 {
        tenths_to_seconds(self.stop_tenths - self.start_tenths)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairingWarning {
    Reentry { subject: String, behaviour: String, time_s: f64 },
    ClosedAtStreamEnd { subject: String, behaviour: String, start_s: f64, closed_s: f64 },
    ZeroLength { subject: String, behaviour: String, time_s: f64 },
    DurationMismatch { subject: String, behaviour: String, recorded_s: f64, paired_s: f64 },
}

#[derive(Debug, Clone, Default)]
pub struct Pairing {
    pub intervals: Vec<BehaviourInterval>,
    pub warnings: Vec<PairingWarning>,
}

/// Matches every state start to the next stop of the same subject and
/// behaviour.
///
/// Events are sorted internally by (subject, time), stops before starts at
/// equal times. Different behaviours may overlap. A start that is still
/// open at the end of the log is closed at the last timestamp in the log.
pub fn pair_state_events(events: &[EventRecord], table: &EthogramTable) -> Result<Pairing> {
    let mut order: Vec<&EventRecord> = events.iter().collect();
    order.sort_by(|a, b| {
        (a.subject.as_str(), a.time_tenths, a.event_type, normalize_key(&a.behaviour)).cmp(&(
            b.subject.as_str(),
            b.time_tenths,
            b.event_type,
            normalize_key(&b.behaviour),
        ))
    });
    let last_time = events.iter().map(|e| e.time_tenths).max().unwrap_or(0);

    let mut out = Pairing::default();
    // (subject, normalized behaviour) -> open start event
    let mut open: BTreeMap<(String, String), &EventRecord> = BTreeMap::new();

    for ev in order {
        let entry = table.lookup(&ev.behaviour)?;
        let key = (ev.subject.clone(), normalize_key(&ev.behaviour));
        match ev.event_type {
            EventType::StateStart => {
                if let Some(prev) = open.insert(key, ev) {
                    out.warnings.push(PairingWarning::Reentry {
                        subject: ev.subject.clone(),
                        behaviour: ev.behaviour.clone(),
                        time_s: ev.time_s(),
                    });
                    push_interval(&mut out, prev, ev.time_tenths, entry.category, Closure::Reentry);
                }
            }
            EventType::StateStop => {
                let Some(start) = open.remove(&key) else {
                    return Err(Error::Pairing {
                        subject: ev.subject.clone(),
                        behaviour: ev.behaviour.clone(),
                        time_s: ev.time_s(),
                        message: "state stop without an open state start".into(),
                    });
                };
                if let Some(recorded) = ev.duration_s {
                    let paired = tenths_to_seconds(ev.time_tenths - start.time_tenths);
                    if (recorded - paired).abs() > DURATION_TOLERANCE_S + 1e-9 {
                        out.warnings.push(PairingWarning::DurationMismatch {
                            subject: ev.subject.clone(),
                            behaviour: ev.behaviour.clone(),
                            recorded_s: recorded,
                            paired_s: paired,
                        });
                    }
                }
                push_interval(&mut out, start, ev.time_tenths, entry.category, Closure::Stop);
            }
        }
    }

    for (_, start) in open {
        let category = table.lookup(&start.behaviour)?.category;
        out.warnings.push(PairingWarning::ClosedAtStreamEnd {
            subject: start.subject.clone(),
            behaviour: start.behaviour.clone(),
            start_s: start.time_s(),
            closed_s: tenths_to_seconds(last_time),
        });
        push_interval(&mut out, start, last_time, category, Closure::StreamEnd);
    }

    out.intervals.sort_by(|a, b| {
        (a.subject.as_str(), a.start_tenths, a.behaviour.as_str(), a.stop_tenths).cmp(&(
            b.subject.as_str(),
            b.start_tenths,
            b.behaviour.as_str(),
            b.stop_tenths,
        ))
    });
    Ok(out)
}

fn push_interval(
    out: &mut Pairing,
    start: &EventRecord,
    stop_tenths: i64,
    category: BehaviourCategory,
    closure: Closure,
) {
    if stop_tenths <= start.time_tenths {
        out.warnings.push(PairingWarning::ZeroLength {
            subject: start.subject.clone(),
            behaviour: start.behaviour.clone(),
            time_s: start.time_s(),
        });
        return;
    }
    out.intervals.push(BehaviourInterval {
        subject: start.subject.clone(),
        behaviour: start.behaviour.clone(),
        modifier: start.modifier.clone(),
        category,
        start_tenths: start.time_tenths,
        stop_tenths,
        closure,
    });
}

/// Lowercases and drops whitespace, `-`, `_`, `(` and `)`.
pub fn normalize_key(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace() && !matches!(c, '-' | '_' | '(' | ')'))
        .flat_map(char::to_lowercase)
        .collect()
}

pub(crate) fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    let wanted: Vec<String> = names.iter().map(|n| normalize_key(n)).collect();
    headers
        .iter()
        .position(|h| wanted.contains(&normalize_key(h.trim_start_matches('\u{feff}'))))
}

pub(crate) fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "play" => Some(true),
        "false" | "0" | "no" | "nonplay" | "non-play" => Some(false),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "Subject,Behaviour,Modifier,Event_Type,Time_Relative_sf,Duration\n";

    fn ev(subject: &str, behaviour: &str, kind: EventType, t: i64) -> EventRecord {
        EventRecord {
            subject: subject.into(),
            behaviour: behaviour.into(),
            modifier: None,
            event_type: kind,
            time_tenths: t,
            duration_s: None,
        }
    }

    #[test]
    fn parses_direct_field_mapping() {
        let src = format!("{HEADER}Calf3,Gallop,-,State start,120.0,-\n");
        let recs = parse_event_log(src.as_bytes(), Dialect::default()).unwrap();
        assert_eq!(
            recs,
            vec![EventRecord {
                subject: "Calf3".into(),
                behaviour: "Gallop".into(),
                modifier: None,
                event_type: EventType::StateStart,
                time_tenths: 1200,
                duration_s: None,
            }]
        );
    }

    #[test]
    fn time_is_exact_at_tenth_resolution() {
        let src = format!("{HEADER}Calf3,Gallop,,StateStart,3661.5,\n");
        let recs = parse_event_log(src.as_bytes(), Dialect::default()).unwrap();
        assert_eq!(recs[0].time_tenths, 36615);
        assert_eq!(recs[0].time_s(), 3661.5);
    }

    #[test]
    fn columns_may_be_reordered() {
        let src = "Duration,Time_Relative_sf,Event_Type,Modifier,Behaviour,Subject\n,12.5,State stop,left,Gallop,Calf1\n";
        let recs = parse_event_log(src.as_bytes(), Dialect::default()).unwrap();
        assert_eq!(recs[0].subject, "Calf1");
        assert_eq!(recs[0].modifier.as_deref(), Some("left"));
        assert_eq!(recs[0].time_tenths, 125);
    }

    #[test]
    fn semicolon_dialect() {
        let src = "Subject;Behaviour;Modifier;Event_Type;Time_Relative_sf;Duration\nCalf1;\"Frontal push\";;State start;1.0;\n";
        let d = Dialect { delimiter: b';', quote: b'"' };
        let recs = parse_event_log(src.as_bytes(), d).unwrap();
        assert_eq!(recs[0].behaviour, "Frontal push");
    }

    #[test]
    fn unknown_event_type_is_row_error() {
        let src = format!("{HEADER}Calf3,Gallop,,Point,1.0,\n");
        let err = parse_event_log(src.as_bytes(), Dialect::default()).unwrap_err();
        assert!(matches!(err, Error::Row { origin: Origin { row: Some(1), .. }, .. }), "{err}");
    }

    #[test]
    fn missing_column_is_named() {
        let src = "Subject,Behaviour,Modifier,Event_Type,Duration\n";
        let err = parse_event_log(src.as_bytes(), Dialect::default()).unwrap_err();
        match err {
            Error::MissingColumn { column, .. } => assert_eq!(column, "Time_Relative_sf"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unparseable_time_reports_row_number() {
        let src = format!("{HEADER}Calf3,Gallop,,State start,1.0,\nCalf3,Gallop,,State stop,abc,\n");
        let err = parse_event_log(src.as_bytes(), Dialect::default()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn classification_follows_table() {
        let t = EthogramTable::builtin();
        assert_eq!(classify_behaviour("Gallop", &t).unwrap(), (BehaviourCategory::Locomotor, true));
        assert_eq!(classify_behaviour("Frontal push", &t).unwrap(), (BehaviourCategory::Social, true));
        assert_eq!(classify_behaviour("FrontalPush", &t).unwrap(), (BehaviourCategory::Social, true));
        assert_eq!(
            classify_behaviour("Milk feeding", &t).unwrap(),
            (BehaviourCategory::NonPlayState, false)
        );
        assert!(matches!(classify_behaviour("Sneeze", &t), Err(Error::UnknownBehaviour(_))));
    }

    #[test]
    fn builtin_table_has_every_ethogram_code() {
        let t = EthogramTable::builtin();
        assert_eq!(t.entries().len(), 19);
        assert_eq!(t.lookup("Management").unwrap().class, StateClass::Management);
        assert_eq!(t.lookup("Out of view").unwrap().class, StateClass::OutOfView);
        assert_eq!(t.lookup("Chase").unwrap().class, StateClass::ActivePlay);
        assert_eq!(t.lookup("Brush interaction").unwrap().class, StateClass::NonActivePlay);
        assert_eq!(t.lookup("Straw dig").unwrap().class, StateClass::NonActivePlay);
    }

    #[test]
    fn table_without_class_column_derives_classes() {
        let src = "code,category,play_flag\nZoomies,Locomotor,true\nOut of view,NonPlayState,false\n";
        let t = EthogramTable::from_reader(src.as_bytes()).unwrap();
        assert_eq!(t.lookup("zoomies").unwrap().class, StateClass::ActivePlay);
        assert_eq!(t.lookup("Out of view").unwrap().class, StateClass::OutOfView);
    }

    #[test]
    fn duplicate_codes_rejected() {
        let src = "code,category,play_flag\nRun,Locomotor,true\nrun,Social,true\n";
        assert!(EthogramTable::from_reader(src.as_bytes()).is_err());
    }

    #[test]
    fn pairs_start_and_stop() {
        let t = EthogramTable::builtin();
        let p = pair_state_events(
            &[ev("C", "Gallop", EventType::StateStart, 100), ev("C", "Gallop", EventType::StateStop, 125)],
            &t,
        )
        .unwrap();
        assert_eq!(p.intervals.len(), 1);
        assert_eq!(p.intervals[0].start_s(), 10.0);
        assert_eq!(p.intervals[0].stop_s(), 12.5);
        assert_eq!(p.intervals[0].duration_s(), 2.5);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn overlapping_behaviours_are_independent() {
        let t = EthogramTable::builtin();
        let p = pair_state_events(
            &[
                ev("C", "Gallop", EventType::StateStart, 100),
                ev("C", "Frontal push", EventType::StateStart, 110),
                ev("C", "Gallop", EventType::StateStop, 120),
                ev("C", "Frontal push", EventType::StateStop, 140),
            ],
            &t,
        )
        .unwrap();
        assert_eq!(p.intervals.len(), 2);
        assert_eq!((p.intervals[0].start_tenths, p.intervals[0].stop_tenths), (100, 120));
        assert_eq!((p.intervals[1].start_tenths, p.intervals[1].stop_tenths), (110, 140));
        assert_eq!(p.intervals[1].category, BehaviourCategory::Social);
    }

    #[test]
    fn orphan_stop_is_pairing_error() {
        let t = EthogramTable::builtin();
        let err = pair_state_events(&[ev("C", "Gallop", EventType::StateStop, 50)], &t).unwrap_err();
        match err {
            Error::Pairing { subject, behaviour, time_s, .. } => {
                assert_eq!((subject.as_str(), behaviour.as_str(), time_s), ("C", "Gallop", 5.0));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn reentry_closes_open_interval() {
        let t = EthogramTable::builtin();
        let p = pair_state_events(
            &[
                ev("C", "Run", EventType::StateStart, 10),
                ev("C", "Run", EventType::StateStart, 30),
                ev("C", "Run", EventType::StateStop, 50),
            ],
            &t,
        )
        .unwrap();
        assert_eq!(p.intervals.len(), 2);
        assert_eq!(p.intervals[0].closure, Closure::Reentry);
        assert_eq!(p.intervals[0].stop_tenths, 30);
        assert!(matches!(p.warnings[0], PairingWarning::Reentry { .. }));
    }

    #[test]
    fn dangling_start_closed_at_last_timestamp() {
        let t = EthogramTable::builtin();
        let p = pair_state_events(
            &[
                ev("A", "Chase", EventType::StateStart, 10),
                ev("B", "Run", EventType::StateStart, 20),
                ev("B", "Run", EventType::StateStop, 90),
            ],
            &t,
        )
        .unwrap();
        let chase = p.intervals.iter().find(|i| i.behaviour == "Chase").unwrap();
        assert_eq!(chase.stop_tenths, 90);
        assert_eq!(chase.closure, Closure::StreamEnd);
        assert!(p.warnings.iter().any(|w| matches!(w, PairingWarning::ClosedAtStreamEnd { .. })));
    }

    #[test]
    fn unknown_code_rejected_during_pairing() {
        let t = EthogramTable::builtin();
        let err = pair_state_events(&[ev("C", "Yawn", EventType::StateStart, 10)], &t).unwrap_err();
        assert!(matches!(err, Error::UnknownBehaviour(_)));
    }

    #[test]
    fn duration_mismatch_is_warned() {
        let t = EthogramTable::builtin();
        let mut stop = ev("C", "Run", EventType::StateStop, 30);
        stop.duration_s = Some(3.0);
        let p = pair_state_events(&[ev("C", "Run", EventType::StateStart, 10), stop], &t).unwrap();
        assert!(matches!(p.warnings[0], PairingWarning::DurationMismatch { .. }));
    }
}
