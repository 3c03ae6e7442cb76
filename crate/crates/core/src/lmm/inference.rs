use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use super::fit::{LmmFit, Method};
use crate::error::{Error, Result};

/// σ²_farm / (σ²_farm + σ²_resid).
pub fn icc(fit: &LmmFit) -> f64 {
    icc_from(fit.sigma2_farm, fit.sigma2_resid)
}

pub(crate) fn icc_from(sigma2_farm: f64, sigma2_resid: f64) -> f64 {
    if sigma2_farm == 0.0 {
        return 0.0;
    }
    sigma2_farm / (sigma2_farm + sigma2_resid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RSquared {
    pub marginal: f64,
    pub conditional: f64,
}

/// Variance-partition R²: the fixed-effect share (marginal) and the fixed
/// plus group share (conditional) of
/// `var(Xβ) + σ²_farm + σ²_resid`, with `var(Xβ)` the population variance
/// of the fixed-effect predictions.
///
/// `baseline` is the intercept-only fit of the same data and only serves to
/// check that both models saw identical data.
pub fn r_squared(fit: &LmmFit, baseline: &LmmFit) -> Result<RSquared> {
    if fit.design.y != baseline.design.y || fit.design.group_of != baseline.design.group_of {
        return Err(Error::Invalid("R² requires both fits on identical data".into()));
    }
    let n = fit.fitted_fixed.len() as f64;
    let origin = fit.fitted_fixed[0];
    let shifted: Vec<f64> = fit.fitted_fixed.iter().map(|v| v - origin).collect();
    let mean = shifted.iter().sum::<f64>() / n;
    let var_fixed = shifted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let total = var_fixed + fit.sigma2_farm + fit.sigma2_resid;
    Ok(RSquared { marginal: var_fixed / total, conditional: (var_fixed + fit.sigma2_farm) / total })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InformationCriteria {
    pub aic: f64,
    pub bic: f64,
    pub k: usize,
}

impl InformationCriteria {
    /// AIC = −2ℓ + 2k, BIC = −2ℓ + k ln n.
    pub fn from_parts(loglik: f64, k: usize, n: f64) -> Self {
        InformationCriteria { aic: -2.0 * loglik + 2.0 * k as f64, bic: -2.0 * loglik + k as f64 * n.ln(), k }
    }
}

pub fn information_criteria(fit: &LmmFit) -> InformationCriteria {
    InformationCriteria::from_parts(fit.loglik, fit.n_params, fit.n_obs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrTest {
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Likelihood-ratio test of `nested` against `full`.
///
/// Both must be ML fits to the same response and groups, and every column
/// of the nested design must lie in the span of the full design.
pub fn lr_test(full: &LmmFit, nested: &LmmFit) -> Result<LrTest> {
    if full.method != Method::Ml || nested.method != Method::Ml {
        return Err(Error::Invalid("likelihood-ratio tests need maximum-likelihood fits".into()));
    }
    if full.design.y != nested.design.y || full.design.group_of != nested.design.group_of {
        return Err(Error::Invalid("models were fitted to different data".into()));
    }
    if nested.n_params > full.n_params {
        return Err(Error::Invalid("the nested model has more parameters than the full model".into()));
    }
    // span check: residual of each nested column on the full design
    let qr = full.design.x.clone().qr();
    let q = qr.q();
    for (k, name) in nested.design.columns.iter().enumerate() {
        let col: DVector<f64> = nested.design.x.column(k).into_owned();
        let proj = &q * (q.transpose() * &col);
        if (&col - proj).norm() > 1e-8 * col.norm().max(1.0) {
            return Err(Error::Invalid(format!("models are not nested: `{name}` is outside the full design")));
        }
    }
    if nested.variance_ratio > 0.0 && full.n_params == full.design.n_fixed() + 1 {
        return Err(Error::Invalid("models are not nested: the full model fixes the group variance".into()));
    }
    let df = full.n_params - nested.n_params;
    let chi2 = (2.0 * (full.loglik - nested.loglik)).max(0.0);
    let p_value = if df == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(df as f64).expect("positive df");
        (1.0 - dist.cdf(chi2)).clamp(0.0, 1.0)
    };
    Ok(LrTest { chi2, df, p_value })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub level_a: String,
    pub level_b: String,
    /// Adjusted mean of `a` minus adjusted mean of `b`.
    pub difference: f64,
    pub std_error: f64,
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Model-adjusted mean of every observed factor level, with covariates at
/// their sample means, and its standard error.
pub fn adjusted_means(fit: &LmmFit) -> Result<Vec<(String, f64, f64)>> {
    let d = &fit.design;
    if d.factor_levels.is_empty() {
        return Err(Error::Invalid("model has no categorical factor".into()));
    }
    let beta = DVector::from_column_slice(&fit.beta);
    let n = d.n_obs() as f64;
    let mut out = Vec::new();
    for (li, level) in d.factor_levels.iter().enumerate() {
        let mut c = DVector::zeros(d.n_fixed());
        c[0] = 1.0;
        if li > 0 {
            c[d.factor_columns[li - 1]] = 1.0;
        }
        for &k in &d.covariate_columns {
            c[k] = d.x.column(k).sum() / n;
        }
        let mean = c.dot(&beta);
        let se = (c.transpose() * &fit.beta_cov * &c)[(0, 0)].sqrt();
        out.push((level.clone(), mean, se));
    }
    Ok(out)
}

/// Unadjusted t-tests between every pair of factor levels.
///
/// `levels` restricts the comparison to those levels (all observed levels
/// when `None`). Degrees of freedom are `n − rank(X) − groups + 1`.
pub fn lsd_pairwise(fit: &LmmFit, levels: Option<&[String]>) -> Result<Vec<PairwiseComparison>> {
    let d = &fit.design;
    let observed = &d.factor_levels;
    let chosen: Vec<usize> = match levels {
        None => (0..observed.len()).collect(),
        Some(ls) => ls
            .iter()
            .map(|l| {
                observed
                    .iter()
                    .position(|o| o == l)
                    .ok_or_else(|| Error::Invalid(format!("level `{l}` is not observed in the data")))
            })
            .collect::<Result<_>>()?,
    };
    if chosen.len() < 2 {
        return Err(Error::Invalid("pairwise comparisons need at least two levels".into()));
    }
    let dof = d.n_obs() as f64 - d.n_fixed() as f64 - d.n_groups() as f64 + 1.0;
    if dof <= 0.0 {
        return Err(Error::Invalid(format!("no residual degrees of freedom for comparisons ({dof})")));
    }
    let tdist = StudentsT::new(0.0, 1.0, dof).expect("positive df");
    let beta = DVector::from_column_slice(&fit.beta);
    let indicator = |li: usize| {
        let mut c = DVector::zeros(d.n_fixed());
        if li > 0 {
            c[d.factor_columns[li - 1]] = 1.0;
        }
        c
    };
    let mut out = Vec::new();
    for (ai, &a) in chosen.iter().enumerate() {
        for &b in &chosen[ai + 1..] {
            let c = indicator(a) - indicator(b);
            let difference = c.dot(&beta);
            let std_error = (c.transpose() * &fit.beta_cov * &c)[(0, 0)].sqrt();
            let t = difference / std_error;
            let p_value = (2.0 * (1.0 - tdist.cdf(t.abs()))).clamp(0.0, 1.0);
            out.push(PairwiseComparison {
                level_a: observed[a].clone(),
                level_b: observed[b].clone(),
                difference,
                std_error,
                t,
                df: dof,
                p_value,
            });
        }
    }
    Ok(out)
}

/// `symbol` for p < 0.05, doubled for p < 0.01, empty otherwise.
pub fn significance_marker(symbol: &str, p: f64) -> String {
    if p < 0.01 {
        symbol.repeat(2)
    } else if p < 0.05 {
        symbol.to_string()
    } else {
        String::new()
    }
}
