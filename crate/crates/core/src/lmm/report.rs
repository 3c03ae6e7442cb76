use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::diagnostics::LeveneResult;
use super::fit::{LmmFit, Method};
use super::inference::{
    icc, information_criteria, lsd_pairwise, r_squared, significance_marker, InformationCriteria,
    PairwiseComparison, RSquared,
};
use crate::error::Result;

/// How pairwise comparisons are annotated in text output.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum MarkerStyle {
    /// p-values only.
    #[default]
    Plain,
    /// A symbol per reference level; a comparison involving that level gets
    /// the symbol at p < 0.05 and a doubled symbol at p < 0.01.
    Reference(Vec<(String, String)>),
}

impl MarkerStyle {
    /// `*` against "<4", `$` against "4-6", `#` against "6-8".
    pub fn space_allowance() -> Self {
        MarkerStyle::Reference(vec![
            ("<4".into(), "*".into()),
            ("4-6".into(), "$".into()),
            ("6-8".into(), "#".into()),
        ])
    }

    pub fn marker(&self, cmp: &PairwiseComparison) -> String {
        match self {
            MarkerStyle::Plain => String::new(),
            MarkerStyle::Reference(refs) => refs
                .iter()
                .filter(|(level, _)| *level == cmp.level_a || *level == cmp.level_b)
                .map(|(_, sym)| significance_marker(sym, cmp.p_value))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmReport {
    pub response: String,
    pub method: Method,
    pub n_obs: usize,
    pub n_groups: usize,
    pub coefficients: Vec<CoefficientRow>,
    pub sigma2_farm: f64,
    pub sigma2_resid: f64,
    pub boundary: bool,
    pub icc: f64,
    pub r_squared: RSquared,
    pub loglik: f64,
    pub information_criteria: InformationCriteria,
    pub pairwise: Vec<PairwiseComparison>,
    pub levene: Option<LeveneResult>,
}

impl LmmReport {
    pub fn new(response: &str, fit: &LmmFit, baseline: &LmmFit, levene: Option<LeveneResult>) -> Result<Self> {
        let coefficients = fit
            .columns
            .iter()
            .zip(fit.beta.iter().zip(fit.standard_errors()))
            .map(|(term, (&estimate, std_error))| CoefficientRow {
                term: term.clone(),
                estimate,
                std_error,
                t: estimate / std_error,
            })
            .collect();
        let pairwise = if fit.design.factor_levels.len() >= 2 { lsd_pairwise(fit, None)? } else { Vec::new() };
        Ok(LmmReport {
            response: response.to_string(),
            method: fit.method,
            n_obs: fit.n_obs,
            n_groups: fit.n_groups,
            coefficients,
            sigma2_farm: fit.sigma2_farm,
            sigma2_resid: fit.sigma2_resid,
            boundary: fit.boundary,
            icc: icc(fit),
            r_squared: r_squared(fit, baseline)?,
            loglik: fit.loglik,
            information_criteria: information_criteria(fit),
            pairwise,
            levene,
        })
    }

    pub fn to_text(&self, style: &MarkerStyle) -> String {
        let mut s = String::new();
        let method = match self.method {
            Method::Ml => "ML",
            Method::Reml => "REML",
        };
        let _ = writeln!(s, "Linear mixed model: {} ~ fixed + (1 | farm)   [{method}]", self.response);
        let _ = writeln!(s, "Observations: {}   Farms: {}", self.n_obs, self.n_groups);
        let _ = writeln!(s);
        let _ = writeln!(s, "Fixed effects");
        let _ = writeln!(s, "  {:<24} {:>12} {:>12} {:>9}", "term", "estimate", "std.error", "t");
        for c in &self.coefficients {
            let _ = writeln!(s, "  {:<24} {:>12.6} {:>12.6} {:>9.3}", c.term, c.estimate, c.std_error, c.t);
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Variance components");
        let boundary = if self.boundary { "  (boundary)" } else { "" };
        let _ = writeln!(s, "  farm      {:>12.6}{boundary}", self.sigma2_farm);
        let _ = writeln!(s, "  residual  {:>12.6}", self.sigma2_resid);
        let _ = writeln!(s, "  ICC       {:>12.4}", self.icc);
        let _ = writeln!(s, "R2 marginal {:.4}   conditional {:.4}", self.r_squared.marginal, self.r_squared.conditional);
        let ic = &self.information_criteria;
        let _ = writeln!(s, "logLik {:.4}   AIC {:.4}   BIC {:.4}   k {}", self.loglik, ic.aic, ic.bic, ic.k);
        if let Some(l) = &self.levene {
            let _ = writeln!(
                s,
                "Levene (median) F({:.0}, {:.0}) = {:.4}, p = {:.4}",
                l.df1, l.df2, l.statistic, l.p_value
            );
            if !l.excluded_groups.is_empty() {
                let _ = writeln!(s, "  excluded single-observation groups: {}", l.excluded_groups.join(", "));
            }
        }
        if !self.pairwise.is_empty() {
            let _ = writeln!(s);
            let _ = writeln!(s, "Pairwise comparisons (LSD)");
            let _ = writeln!(
                s,
                "  {:<10} {:<10} {:>10} {:>10} {:>8} {:>6} {:>8}",
                "a", "b", "diff", "se", "t", "df", "p"
            );
            for c in &self.pairwise {
                let m = style.marker(c);
                let _ = writeln!(
                    s,
                    "  {:<10} {:<10} {:>10.4} {:>10.4} {:>8.3} {:>6.0} {:>8.4} {m}",
                    c.level_a, c.level_b, c.difference, c.std_error, c.t, c.df, c.p_value
                );
            }
        }
        s
    }
}
