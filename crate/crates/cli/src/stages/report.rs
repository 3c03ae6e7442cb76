use std::fmt::Write as _;

use serde_json::{Map, Value};

use super::Context;
use crate::artifacts::{read_json, write_json, write_text, Stage};
use crate::error::CliResult;

const SOURCES: [(Stage, &str); 7] = [
    (Stage::Ingest, "report.json"),
    (Stage::Align, "report.json"),
    (Stage::Filter, "report.json"),
    (Stage::Metrics, "report.json"),
    (Stage::Lmm, "report.json"),
    (Stage::Prepare, "report.json"),
    (Stage::Evaluate, "report.json"),
];

fn num(v: &Value, path: &[&str]) -> String {
    let mut cur = v;
    for p in path {
        cur = &cur[*p];
    }
    match cur {
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() => format!("{f:.4}"),
            _ => n.to_string(),
        },
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

/// Collects the per-stage reports present under the output root.
pub fn report(ctx: &Context) -> CliResult<String> {
    ctx.layout.require(Stage::Ingest, "report.json")?;
    let mut stages = Map::new();
    let mut text = String::new();
    for (stage, file) in SOURCES {
        let p = ctx.layout.path(stage, file);
        if !p.is_file() {
            let _ = writeln!(text, "{:<9} not run", stage.command());
            continue;
        }
        let mut v = read_json(&p)?;
        if let Some(o) = v.as_object_mut() {
            o.remove("provenance");
        }
        let line = match stage {
            Stage::Ingest => format!(
                "{} intervals, {} frames, {} dropped without timestamp",
                num(&v, &["intervals"]),
                num(&v, &["frames", "rows"]),
                num(&v, &["frames", "unresolved_dropped"])
            ),
            Stage::Align => format!(
                "{} samples, {} low-confidence detections removed, max |Δt| {} ms",
                num(&v, &["samples"]),
                num(&v, &["detections", "low_confidence"]),
                num(&v, &["matching", "max_abs_delta_ms"])
            ),
            Stage::Filter => format!("{} of {} samples retained", num(&v, &["retained"]), num(&v, &["input"])),
            Stage::Metrics => format!(
                "{} calves, %OP mean {} (sd {})",
                num(&v, &["calves"]),
                num(&v, &["percent_op_total", "mean"]),
                num(&v, &["percent_op_total", "sd"])
            ),
            Stage::Lmm => format!(
                "σ²_farm {}, σ²_resid {}, ICC {}",
                num(&v, &["model", "sigma2_farm"]),
                num(&v, &["model", "sigma2_resid"]),
                num(&v, &["model", "icc"])
            ),
            Stage::Prepare => format!("{} samples per class", num(&v, &["per_class"])),
            Stage::Evaluate => format!(
                "test accuracy {} on {} samples",
                num(&v, &["test", "accuracy"]),
                num(&v, &["test", "n"])
            ),
            Stage::Train | Stage::Report => unreachable!("not a report source"),
        };
        let _ = writeln!(text, "{:<9} {line}", stage.command());
        stages.insert(stage.dir_name().to_string(), v);
    }
    let ran = stages.len();
    ctx.layout.create(Stage::Report)?;
    write_json(&ctx.layout.path(Stage::Report, "summary.json"), &ctx.prov, &Value::Object(stages))?;
    write_text(&ctx.layout.path(Stage::Report, "summary.txt"), &ctx.prov, &text)?;
    Ok(format!("report: {ran} of {} stage reports collected", SOURCES.len()))
}
