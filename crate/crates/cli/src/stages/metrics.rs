use std::collections::{BTreeMap, BTreeSet};

use calfplay::ethogram::{BehaviourCategory, BehaviourInterval, StateClass};
use calfplay::metrics::{descriptive_stats, observed_seconds, play_summary, write_play_summaries, Descriptive, PlaySummary};
use calfplay::Error;
use serde::Serialize;

use super::ingest::{read_intervals, IntervalRow};
use super::Context;
use crate::artifacts::{write_json, write_table, Stage};
use crate::error::{CliError, CliResult};

#[derive(Serialize)]
struct MetricsReport {
    calves: usize,
    observation_s_per_day: f64,
    deducted_classes: Vec<StateClass>,
    percent_op_total: Descriptive,
    percent_op_by_category: BTreeMap<BehaviourCategory, Descriptive>,
    events_per_hour_total: Descriptive,
}

/// Shifts an interval from video-relative to absolute tenths of a second, so
/// that bouts from several videos of one calf share a time axis.
fn absolute(row: &IntervalRow) -> CliResult<BehaviourInterval> {
    let mut iv = row.interval();
    iv.start_tenths = row.start_time()?.millis().div_euclid(100);
    iv.stop_tenths = row.stop_time()?.millis().div_euclid(100);
    Ok(iv)
}

fn summarize(ctx: &Context, calf: &str, rows: &[&IntervalRow], deduct: &[StateClass]) -> CliResult<PlaySummary> {
    let mut days: BTreeMap<String, Vec<BehaviourInterval>> = BTreeMap::new();
    let mut all = Vec::with_capacity(rows.len());
    for r in rows {
        let iv = absolute(r)?;
        days.entry(r.start[..10].to_string()).or_default().push(iv.clone());
        all.push(iv);
    }
    let mut obs = 0.0;
    for ivs in days.values() {
        obs += if deduct.is_empty() {
            ctx.cfg.metrics.observation_s
        } else {
            observed_seconds(ivs, ctx.cfg.metrics.observation_s, deduct, &ctx.table)
                .map_err(|e| CliError::user(format!("calf {calf}: {e}")))?
        };
    }
    play_summary(calf, &all, obs).map_err(|e| CliError::user(format!("calf {calf}: {e}")))
}

pub fn metrics(ctx: &Context) -> CliResult<String> {
    let ip = ctx.layout.require(Stage::Ingest, "intervals.csv")?;
    let rows = read_intervals(&ip)?;
    let deduct: Vec<StateClass> = ctx
        .cfg
        .metrics
        .deduct
        .iter()
        .map(|s| s.parse().map_err(|e: Error| CliError::user(format!("metrics.deduct: {e}"))))
        .collect::<CliResult<_>>()?;

    let mut by_calf: BTreeMap<String, Vec<&IntervalRow>> = BTreeMap::new();
    for r in &rows {
        by_calf.entry(format!("{}/{}", r.farm, r.subject)).or_default().push(r);
    }
    if by_calf.is_empty() {
        return Err(CliError::user(format!("no behaviour intervals in {}", ip.display())));
    }
    let summaries: Vec<PlaySummary> = by_calf
        .iter()
        .map(|(calf, rows)| summarize(ctx, calf, rows, &deduct))
        .collect::<CliResult<_>>()?;

    let behaviours: BTreeSet<&String> = summaries.iter().flat_map(|s| s.events_per_hour_by_behaviour.keys()).collect();
    ctx.layout.create(Stage::Metrics)?;
    write_table(&ctx.layout.path(Stage::Metrics, "play_summary.csv"), &ctx.prov, |buf| {
        write_play_summaries(buf, &summaries)
    })?;
    write_table(&ctx.layout.path(Stage::Metrics, "behaviour_rates.csv"), &ctx.prov, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["calf_id", "behaviour", "events_per_hour"])?;
        for s in &summaries {
            for b in &behaviours {
                let v = s.events_per_hour_by_behaviour.get(*b).copied().unwrap_or(0.0);
                w.write_record([s.calf_id.as_str(), b.as_str(), &format!("{v:.6}")])?;
            }
        }
        w.flush().map_err(|e| Error::io("<rates>", e))
    })?;

    let column = |f: &dyn Fn(&PlaySummary) -> f64| summaries.iter().map(f).collect::<Vec<f64>>();
    let mut by_category = BTreeMap::new();
    for c in BehaviourCategory::PLAY {
        let v = column(&|s| s.percent_op_by_category.get(&c).copied().unwrap_or(0.0));
        by_category.insert(c, descriptive_stats(&v)?);
    }
    let total = descriptive_stats(&column(&|s| s.percent_op_total))?;
    let report = MetricsReport {
        calves: summaries.len(),
        observation_s_per_day: ctx.cfg.metrics.observation_s,
        deducted_classes: deduct,
        percent_op_total: total,
        percent_op_by_category: by_category,
        events_per_hour_total: descriptive_stats(&column(&|s| s.events_per_hour_total))?,
    };
    write_json(&ctx.layout.path(Stage::Metrics, "report.json"), &ctx.prov, &report)?;
    Ok(format!("metrics: {} calves, mean %OP {:.2}", summaries.len(), total.mean))
}
