//! Play metrics: percentage of observation period (%OP), event rates, space
//! categories and descriptive statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Origin, Result};
use crate::ethogram::{BehaviourCategory, BehaviourInterval, EthogramTable, StateClass};

/// 06:00 to 23:00.
pub const DEFAULT_OBSERVATION_S: f64 = 61_200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalfRecord {
    pub calf_id: String,
    pub farm_id: String,
    pub age_days: u32,
    pub health_category: u8,
    pub space_m2: f64,
    pub group_size: u32,
    pub milk_l_day: f64,
    pub bedding_score: u8,
    pub body_weight_kg: f64,
}

impl CalfRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.space_m2 > 0.0) {
            return Err(format!("space_m2 must be positive, got {}", self.space_m2));
        }
        if !(1..=3).contains(&self.health_category) {
            return Err(format!("health_category must be 1, 2 or 3, got {}", self.health_category));
        }
        if self.group_size < 2 {
            return Err(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if !(self.milk_l_day >= 0.0) {
            return Err(format!("milk_l_day must be non-negative, got {}", self.milk_l_day));
        }
        if !(1..=3).contains(&self.bedding_score) {
            return Err(format!("bedding_score must be 1, 2 or 3, got {}", self.bedding_score));
        }
        Ok(())
    }
}

pub fn read_calf_records<R: Read>(source: R) -> Result<Vec<CalfRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(source);
    let headers = rdr.headers()?.clone();
    for col in [
        "calf_id",
        "farm_id",
        "age_days",
        "health_category",
        "space_m2",
        "group_size",
        "milk_l_day",
        "bedding_score",
        "body_weight_kg",
    ] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::MissingColumn { origin: Origin::default(), column: col.into() });
        }
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<CalfRecord>().enumerate() {
        let origin = Origin::row(i + 1);
        let rec = rec.map_err(|e| Error::row(origin.clone(), e.to_string()))?;
        rec.validate().map_err(|m| Error::row(origin, m))?;
        out.push(rec);
    }
    Ok(out)
}

/// Total length of the union of `[start, stop)` spans, in tenths.
fn union_tenths(mut spans: Vec<(i64, i64)>) -> i64 {
    spans.sort_unstable();
    let mut total = 0;
    let mut current: Option<(i64, i64)> = None;
    for (a, b) in spans {
        match current {
            Some((ca, cb)) if a <= cb => current = Some((ca, cb.max(b))),
            Some((ca, cb)) => {
                total += cb - ca;
                current = Some((a, b));
            }
            None => current = Some((a, b)),
        }
    }
    total + current.map_or(0, |(a, b)| b - a)
}

fn check_observation(observation_s: f64) -> Result<()> {
    if !(observation_s > 0.0) || !observation_s.is_finite() {
        return Err(Error::Range(format!("observation period must be positive, got {observation_s}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayPercent {
    /// Union of all play intervals over the observation period.
    pub total: f64,
    /// Union within each category; categories may overlap each other.
    pub by_category: BTreeMap<BehaviourCategory, f64>,
    pub play_seconds: f64,
}

/// `play seconds / observation seconds × 100`, overall and per category.
///
/// Non-play intervals are ignored. Simultaneous intervals are counted once
/// (union), so the total is at most 100.
pub fn percent_op(intervals: &[BehaviourInterval], observation_s: f64) -> Result<PlayPercent> {
    check_observation(observation_s)?;
    let play: Vec<&BehaviourInterval> = intervals.iter().filter(|i| i.category != BehaviourCategory::NonPlayState).collect();
    let play_tenths = union_tenths(play.iter().map(|i| (i.start_tenths, i.stop_tenths)).collect());
    let mut by_category = BTreeMap::new();
    for cat in BehaviourCategory::PLAY {
        let t = union_tenths(play.iter().filter(|i| i.category == cat).map(|i| (i.start_tenths, i.stop_tenths)).collect());
        by_category.insert(cat, pct(t, observation_s));
    }
    Ok(PlayPercent {
        total: pct(play_tenths, observation_s),
        by_category,
        play_seconds: play_tenths as f64 / 10.0,
    })
}

fn pct(tenths: i64, observation_s: f64) -> f64 {
    tenths as f64 / 10.0 / observation_s * 100.0
}

/// Minutes per observation period corresponding to a %OP value.
pub fn percent_to_minutes(percent: f64, observation_s: f64) -> f64 {
    percent / 100.0 * observation_s / 60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRates {
    pub total: f64,
    pub by_category: BTreeMap<BehaviourCategory, f64>,
    pub by_behaviour: BTreeMap<String, f64>,
}

/// Play intervals per hour of observation.
pub fn events_per_hour(intervals: &[BehaviourInterval], observation_s: f64) -> Result<EventRates> {
    check_observation(observation_s)?;
    let hours = observation_s / 3600.0;
    let mut by_category: BTreeMap<BehaviourCategory, f64> = BehaviourCategory::PLAY.iter().map(|&c| (c, 0.0)).collect();
    let mut by_behaviour: BTreeMap<String, f64> = BTreeMap::new();
    let mut total = 0usize;
    for iv in intervals.iter().filter(|i| i.category != BehaviourCategory::NonPlayState) {
        total += 1;
        *by_category.get_mut(&iv.category).unwrap() += 1.0;
        *by_behaviour.entry(iv.behaviour.clone()).or_default() += 1.0;
    }
    by_category.values_mut().for_each(|v| *v /= hours);
    by_behaviour.values_mut().for_each(|v| *v /= hours);
    Ok(EventRates { total: total as f64 / hours, by_category, by_behaviour })
}

/// Observation period after removing time spent in the given state classes
/// (for example management disturbances and out-of-view periods).
pub fn observed_seconds(
    intervals: &[BehaviourInterval],
    period_s: f64,
    deduct: &[StateClass],
    table: &EthogramTable,
) -> Result<f64> {
    check_observation(period_s)?;
    let mut spans = Vec::new();
    for iv in intervals {
        if deduct.contains(&table.lookup(&iv.behaviour)?.class) {
            spans.push((iv.start_tenths, iv.stop_tenths));
        }
    }
    let remaining = period_s - union_tenths(spans) as f64 / 10.0;
    check_observation(remaining)?;
    Ok(remaining)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaySummary {
    pub calf_id: String,
    pub observation_seconds: f64,
    pub percent_op_total: f64,
    pub percent_op_by_category: BTreeMap<BehaviourCategory, f64>,
    pub events_per_hour_total: f64,
    pub events_per_hour_by_category: BTreeMap<BehaviourCategory, f64>,
    pub events_per_hour_by_behaviour: BTreeMap<String, f64>,
}

pub fn play_summary(calf_id: &str, intervals: &[BehaviourInterval], observation_s: f64) -> Result<PlaySummary> {
    let p = percent_op(intervals, observation_s)?;
    let r = events_per_hour(intervals, observation_s)?;
    Ok(PlaySummary {
        calf_id: calf_id.to_string(),
        observation_seconds: observation_s,
        percent_op_total: p.total,
        percent_op_by_category: p.by_category,
        events_per_hour_total: r.total,
        events_per_hour_by_category: r.by_category,
        events_per_hour_by_behaviour: r.by_behaviour,
    })
}

/// One row per calf; category columns in fixed order.
pub fn write_play_summaries<W: Write>(sink: W, rows: &[PlaySummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["calf_id".to_string(), "observation_s".into(), "percent_op_total".into()];
    for c in BehaviourCategory::PLAY {
        header.push(format!("percent_op_{}", c.as_str().to_lowercase()));
    }
    header.push("events_per_hour_total".into());
    for c in BehaviourCategory::PLAY {
        header.push(format!("events_per_hour_{}", c.as_str().to_lowercase()));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.calf_id.clone(), fmt_num(r.observation_seconds), fmt_num(r.percent_op_total)];
        for c in BehaviourCategory::PLAY {
            rec.push(fmt_num(r.percent_op_by_category.get(&c).copied().unwrap_or(0.0)));
        }
        rec.push(fmt_num(r.events_per_hour_total));
        for c in BehaviourCategory::PLAY {
            rec.push(fmt_num(r.events_per_hour_by_category.get(&c).copied().unwrap_or(0.0)));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}

/// Reads back `calf_id` and `percent_op_total` from a summary table.
pub fn read_percent_op<R: Read>(source: R) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(source);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn { origin: Origin::default(), column: name.into() })
    };
    let (ci, pi) = (col("calf_id")?, col("percent_op_total")?);
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let v: f64 = rec
            .get(pi)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::row(Origin::row(i + 1), "bad percent_op_total"))?;
        out.insert(rec.get(ci).unwrap_or("").to_string(), v);
    }
    Ok(out)
}

fn fmt_num(v: f64) -> String {
    format!("{v:.6}")
}

/// Space allowance bins of 2 m²; the first covers everything below 4 m².
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpaceCategory {
    LT4,
    S4_6,
    S6_8,
    S8_10,
    S10_12,
    S12_14,
    S14_16,
    S16_18,
}

impl SpaceCategory {
    pub const ALL: [SpaceCategory; 8] = [
        SpaceCategory::LT4,
        SpaceCategory::S4_6,
        SpaceCategory::S6_8,
        SpaceCategory::S8_10,
        SpaceCategory::S10_12,
        SpaceCategory::S12_14,
        SpaceCategory::S14_16,
        SpaceCategory::S16_18,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SpaceCategory::LT4 => "<4",
            SpaceCategory::S4_6 => "4-6",
            SpaceCategory::S6_8 => "6-8",
            SpaceCategory::S8_10 => "8-10",
            SpaceCategory::S10_12 => "10-12",
            SpaceCategory::S12_14 => "12-14",
            SpaceCategory::S14_16 => "14-16",
            SpaceCategory::S16_18 => "16-18",
        }
    }
}

impl fmt::Display for SpaceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Left-closed bins: 8.0 falls in 8-10. 18.0 itself belongs to 16-18.
pub fn categorize_space(space_m2: f64) -> Result<SpaceCategory> {
    if !(space_m2 > 0.0 && space_m2 <= 18.0) {
        return Err(Error::Range(format!("space allowance {space_m2} m² outside (0, 18]")));
    }
    let bin = if space_m2 < 4.0 { 0 } else { (((space_m2 - 4.0) / 2.0).floor() as usize + 1).min(7) };
    Ok(SpaceCategory::ALL[bin])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Descriptive {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation (n − 1); absent for a single value.
    pub sd: Option<f64>,
}

/// Two-pass mean and sample standard deviation.
pub fn descriptive_stats(values: &[f64]) -> Result<Descriptive> {
    if values.is_empty() {
        return Err(Error::Invalid("descriptive statistics of an empty sample".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (n >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    });
    Ok(Descriptive {
        n,
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean,
        sd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ethogram::Closure;

    fn play(behaviour: &str, cat: BehaviourCategory, a: i64, b: i64) -> BehaviourInterval {
        BehaviourInterval {
            subject: "C".into(),
            behaviour: behaviour.into(),
            modifier: None,
            category: cat,
            start_tenths: a,
            stop_tenths: b,
            closure: Closure::Stop,
        }
    }

    #[test]
    fn percent_op_reference_conversions() {
        let p = percent_op(&[play("Run", BehaviourCategory::Locomotor, 0, 6120)], DEFAULT_OBSERVATION_S).unwrap();
        assert!((p.total - 1.0).abs() < 1e-12);
        assert!((percent_to_minutes(p.total, DEFAULT_OBSERVATION_S) - 10.2).abs() < 1e-9);

        let p = percent_op(&[play("Run", BehaviourCategory::Locomotor, 0, 19156)], DEFAULT_OBSERVATION_S).unwrap();
        assert!((p.total - 3.13).abs() < 0.005);
        assert!((percent_to_minutes(p.total, DEFAULT_OBSERVATION_S) - 31.9).abs() < 0.05);

        let p = percent_op(&[play("Run", BehaviourCategory::Locomotor, 0, 490)], DEFAULT_OBSERVATION_S).unwrap();
        assert!((p.total - 0.08).abs() < 0.005);

        let p = percent_op(&[], DEFAULT_OBSERVATION_S).unwrap();
        assert_eq!(p.total, 0.0);
    }

    #[test]
    fn zero_observation_rejected() {
        assert!(percent_op(&[], 0.0).is_err());
        assert!(events_per_hour(&[], 0.0).is_err());
    }

    #[test]
    fn overlap_counted_once_in_total() {
        let ivs = [
            play("Gallop", BehaviourCategory::Locomotor, 0, 100),
            play("Frontal push", BehaviourCategory::Social, 50, 150),
        ];
        let p = percent_op(&ivs, 1000.0).unwrap();
        assert!((p.total - 1.5).abs() < 1e-12);
        assert!((p.by_category[&BehaviourCategory::Locomotor] - 1.0).abs() < 1e-12);
        assert!((p.by_category[&BehaviourCategory::Social] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_play_ignored() {
        let ivs = [
            play("Milk feeding", BehaviourCategory::NonPlayState, 0, 1000),
            play("Straw toss", BehaviourCategory::Straw, 0, 10),
        ];
        let p = percent_op(&ivs, 100.0).unwrap();
        assert!((p.total - 1.0).abs() < 1e-12);
        assert_eq!(events_per_hour(&ivs, 3600.0).unwrap().total, 1.0);
    }

    #[test]
    fn rates() {
        let ivs: Vec<_> = (0..17).map(|i| play("Run", BehaviourCategory::Locomotor, i * 100, i * 100 + 10)).collect();
        let r = events_per_hour(&ivs, DEFAULT_OBSERVATION_S).unwrap();
        assert!((r.total - 1.0).abs() < 1e-12);

        let mut ivs: Vec<_> = (0..114).map(|i| play("Run", BehaviourCategory::Locomotor, i * 100, i * 100 + 10)).collect();
        ivs[0].category = BehaviourCategory::Social;
        ivs[1].category = BehaviourCategory::Object;
        let r = events_per_hour(&ivs, DEFAULT_OBSERVATION_S).unwrap();
        // 114 / 17 = 6.7058...
        assert!((r.total - 114.0 / 17.0).abs() < 1e-12);
        assert!((r.total - 6.71).abs() < 0.005);
        let sum: f64 = r.by_category.values().sum();
        assert!((sum - r.total).abs() < 1e-12);
    }

    #[test]
    fn deductions_shrink_observation() {
        let t = EthogramTable::builtin();
        let ivs = [
            play("Management", BehaviourCategory::NonPlayState, 0, 600),
            play("Out of view", BehaviourCategory::NonPlayState, 300, 900),
            play("Run", BehaviourCategory::Locomotor, 0, 10),
        ];
        let obs = observed_seconds(&ivs, 1000.0, &[StateClass::Management, StateClass::OutOfView], &t).unwrap();
        assert_eq!(obs, 910.0);
    }

    #[test]
    fn space_bins() {
        assert_eq!(categorize_space(2.66).unwrap(), SpaceCategory::LT4);
        assert_eq!(categorize_space(3.999).unwrap(), SpaceCategory::LT4);
        assert_eq!(categorize_space(4.0).unwrap(), SpaceCategory::S4_6);
        assert_eq!(categorize_space(8.0).unwrap(), SpaceCategory::S8_10);
        assert_eq!(categorize_space(15.0).unwrap(), SpaceCategory::S14_16);
        assert_eq!(categorize_space(17.98).unwrap(), SpaceCategory::S16_18);
        assert_eq!(categorize_space(18.0).unwrap(), SpaceCategory::S16_18);
        assert!(categorize_space(0.0).is_err());
        assert!(categorize_space(-1.0).is_err());
        assert!(categorize_space(18.01).is_err());
        assert!(categorize_space(f64::NAN).is_err());
    }

    #[test]
    fn descriptive_examples() {
        let d = descriptive_stats(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((d.min, d.max, d.mean, d.sd), (2.0, 2.0, 2.0, Some(0.0)));
        let d = descriptive_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((d.mean, d.sd), (2.0, Some(1.0)));
        assert_eq!(descriptive_stats(&[4.0]).unwrap().sd, None);
        assert!(descriptive_stats(&[]).is_err());
    }

    #[test]
    fn calf_record_validation() {
        let src = "calf_id,farm_id,age_days,health_category,space_m2,group_size,milk_l_day,bedding_score,body_weight_kg\nC1,F1,40,4,5.0,6,7.5,2,60\n";
        assert!(read_calf_records(src.as_bytes()).is_err());
        let src = "calf_id,farm_id,age_days,health_category,space_m2,group_size,milk_l_day,bedding_score,body_weight_kg\nC1,F1,40,1,5.0,6,7.5,2,60\n";
        assert_eq!(read_calf_records(src.as_bytes()).unwrap().len(), 1);
        let src = "calf_id,farm_id\nC1,F1\n";
        assert!(matches!(read_calf_records(src.as_bytes()), Err(Error::MissingColumn { .. })));
    }

    #[test]
    fn summary_table_round_trip() {
        let s = play_summary("Calf1", &[play("Run", BehaviourCategory::Locomotor, 0, 6120)], DEFAULT_OBSERVATION_S).unwrap();
        let mut buf = Vec::new();
        write_play_summaries(&mut buf, &[s]).unwrap();
        let back = read_percent_op(buf.as_slice()).unwrap();
        assert!((back["Calf1"] - 1.0).abs() < 1e-6);
    }
}
