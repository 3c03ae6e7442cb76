use calfplay::lmm::{
    diagnostics, fit_random_intercept, lr_test, Covariate, Factor, FitOptions, LmmReport, LmmSpec, LrTest, MarkerStyle,
    Method,
};
use calfplay::metrics::{categorize_space, read_calf_records, read_percent_op, CalfRecord, SpaceCategory};
use calfplay::Error;
use serde::Serialize;

use super::Context;
use crate::artifacts::{open, write_json, write_table, write_text, Stage};
use crate::error::{CliError, CliResult};

pub const RESPONSE: &str = "percent_op_total";

#[derive(Serialize)]
struct LmmOutput<'a> {
    model: &'a LmmReport,
    space_factor_lr_test: Option<LrTest>,
    calves_without_summary: Vec<String>,
    summaries_without_record: Vec<String>,
}

fn covariate_value(r: &CalfRecord, name: &str) -> CliResult<f64> {
    Ok(match name {
        "age_days" => r.age_days as f64,
        "health_category" => r.health_category as f64,
        "space_m2" => r.space_m2,
        "group_size" => r.group_size as f64,
        "milk_l_day" => r.milk_l_day,
        "bedding_score" => r.bedding_score as f64,
        "body_weight_kg" => r.body_weight_kg,
        other => return Err(CliError::user(format!("lmm.covariates: unknown calf column `{other}`"))),
    })
}

pub fn fit_lmm(ctx: &Context) -> CliResult<String> {
    let sp = ctx.layout.require(Stage::Metrics, "play_summary.csv")?;
    let pct = read_percent_op(open(&sp)?).map_err(|e| CliError::reading(&sp, e))?;
    let cp = ctx.cfg.inputs.calves.as_ref().ok_or_else(|| CliError::user("fit-lmm needs inputs.calves"))?;
    let records = read_calf_records(open(cp)?).map_err(|e| CliError::reading(cp, e))?;

    let mut used = Vec::new();
    let mut response = Vec::new();
    let mut missing = Vec::new();
    for r in &records {
        let key = format!("{}/{}", r.farm_id, r.calf_id);
        match pct.get(&key) {
            Some(&v) => {
                response.push(v);
                used.push((key, r));
            }
            None => missing.push(key),
        }
    }
    let orphans: Vec<String> = pct.keys().filter(|k| !used.iter().any(|(u, _)| u == *k)).cloned().collect();
    if used.is_empty() {
        return Err(CliError::user(format!(
            "no calf in {} has a play summary; summaries are keyed farm/subject",
            cp.display()
        )));
    }

    let groups: Vec<String> = used.iter().map(|(_, r)| r.farm_id.clone()).collect();
    let space: Vec<String> = used
        .iter()
        .map(|(k, r)| categorize_space(r.space_m2).map(|c| c.label().to_string()).map_err(|e| CliError::user(format!("calf {k}: {e}"))))
        .collect::<CliResult<_>>()?;
    let order = SpaceCategory::ALL.iter().map(|c| c.label().to_string()).collect();
    let covariates = ctx
        .cfg
        .lmm
        .covariates
        .iter()
        .map(|name| {
            let v = used.iter().map(|(_, r)| covariate_value(r, name)).collect::<CliResult<Vec<f64>>>()?;
            Ok(Covariate::new(name.clone(), v))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let spec = LmmSpec {
        response,
        groups,
        factor: Some(Factor::with_order("space", space.clone(), order)),
        covariates,
    };
    let opts = FitOptions { method: ctx.cfg.lmm.method, ..Default::default() };
    let fit = fit_random_intercept(&spec, &opts)?;
    let baseline = fit_random_intercept(&spec.null_model(), &opts)?;
    let levene = diagnostics(&fit, Some(&space)).ok().map(|d| d.levene);
    let report = LmmReport::new(RESPONSE, &fit, &baseline, levene)?;

    let lr = if ctx.cfg.lmm.method == Method::Ml && fit.design.factor_levels.len() >= 2 {
        let nested = LmmSpec { factor: None, ..spec.clone() };
        Some(lr_test(&fit, &fit_random_intercept(&nested, &opts)?)?)
    } else {
        None
    };

    let style = if ctx.cfg.lmm.reference_markers { MarkerStyle::space_allowance() } else { MarkerStyle::Plain };
    let mut text = report.to_text(&style);
    if let Some(t) = &lr {
        text.push_str(&format!(
            "\nSpace allowance likelihood-ratio test: chi2 = {:.4}, df = {}, p = {:.4}\n",
            t.chi2, t.df, t.p_value
        ));
    }

    ctx.layout.create(Stage::Lmm)?;
    write_text(&ctx.layout.path(Stage::Lmm, "report.txt"), &ctx.prov, &text)?;
    write_json(
        &ctx.layout.path(Stage::Lmm, "report.json"),
        &ctx.prov,
        &LmmOutput {
            model: &report,
            space_factor_lr_test: lr,
            calves_without_summary: missing,
            summaries_without_record: orphans,
        },
    )?;
    write_table(&ctx.layout.path(Stage::Lmm, "residuals.csv"), &ctx.prov, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["calf_id", "farm_id", "space", "observed", "fitted", "residual", "standardized"])?;
        for (i, (k, r)) in used.iter().enumerate() {
            w.write_record([
                k.as_str(),
                r.farm_id.as_str(),
                space[i].as_str(),
                &format!("{:.6}", fit.design.y[i]),
                &format!("{:.6}", fit.fitted[i]),
                &format!("{:.6}", fit.residuals[i]),
                &format!("{:.6}", fit.standardized_residuals[i]),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<residuals>", e))
    })?;
    Ok(format!(
        "fit-lmm: {} calves on {} farms, σ²_farm {:.4}, σ²_resid {:.4}",
        fit.n_obs, fit.n_groups, fit.sigma2_farm, fit.sigma2_resid
    ))
}
