use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use super::fit::LmmFit;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeveneResult {
    pub statistic: f64,
    pub df1: f64,
    pub df2: f64,
    pub p_value: f64,
    /// Groups left out because they hold a single observation.
    pub excluded_groups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub standardized_residuals: Vec<f64>,
    pub levene: LeveneResult,
}

/// Brown-Forsythe test: one-way ANOVA on |x − group median|.
///
/// Singleton groups are dropped and listed in `excluded_groups`.
pub fn brown_forsythe(values: &[f64], groups: &[String]) -> Result<LeveneResult> {
    if values.len() != groups.len() {
        return Err(Error::Invalid(format!("{} values for {} group labels", values.len(), groups.len())));
    }
    let mut by_group: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (v, g) in values.iter().zip(groups) {
        by_group.entry(g.as_str()).or_default().push(*v);
    }
    let mut excluded_groups = Vec::new();
    let mut deviations: Vec<Vec<f64>> = Vec::new();
    for (name, mut xs) in by_group {
        if xs.len() < 2 {
            excluded_groups.push(name.to_string());
            continue;
        }
        xs.sort_by(f64::total_cmp);
        let m = xs.len();
        let median = if m % 2 == 1 { xs[m / 2] } else { 0.5 * (xs[m / 2 - 1] + xs[m / 2]) };
        deviations.push(xs.iter().map(|x| (x - median).abs()).collect());
    }
    let k = deviations.len();
    let n: usize = deviations.iter().map(Vec::len).sum();
    if k < 2 {
        return Err(Error::Invalid(format!("Levene's test needs at least 2 groups with 2+ observations, got {k}")));
    }
    let grand = deviations.iter().flatten().sum::<f64>() / n as f64;
    let mut between = 0.0;
    let mut within = 0.0;
    for z in &deviations {
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        between += z.len() as f64 * (mean - grand).powi(2);
        within += z.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    }
    let df1 = (k - 1) as f64;
    let df2 = (n - k) as f64;
    if df2 <= 0.0 {
        return Err(Error::Invalid("Levene's test has no within-group degrees of freedom".into()));
    }
    let (statistic, p_value) = if within == 0.0 {
        if between == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = (between / df1) / (within / df2);
        let dist = FisherSnedecor::new(df1, df2).expect("positive df");
        (f, (1.0 - dist.cdf(f)).clamp(0.0, 1.0))
    };
    Ok(LeveneResult { statistic, df1, df2, p_value, excluded_groups })
}

/// Standardized residuals and Levene's test across `groups` (the factor
/// levels of the fit when `None`).
pub fn diagnostics(fit: &LmmFit, groups: Option<&[String]>) -> Result<Diagnostics> {
    let labels: Vec<String> = match groups {
        Some(g) => g.to_vec(),
        None => {
            let d = &fit.design;
            if d.factor_levels.is_empty() {
                return Err(Error::Invalid("no grouping given and the model has no factor".into()));
            }
            (0..d.n_obs())
                .map(|i| {
                    d.factor_columns
                        .iter()
                        .position(|&c| d.x[(i, c)] == 1.0)
                        .map_or_else(|| d.factor_levels[0].clone(), |k| d.factor_levels[k + 1].clone())
                })
                .collect()
        }
    };
    let levene = brown_forsythe(&fit.residuals, &labels)?;
    Ok(Diagnostics { standardized_residuals: fit.standardized_residuals.clone(), levene })
}
