//! Random-intercept linear mixed model
//!
//! ```text
//! y_ij = x_ij' β + u_j + ε_ij,   u_j ~ N(0, σ²_farm),   ε_ij ~ N(0, σ²_resid)
//! ```
//!
//! fitted by maximum likelihood (or REML) over the profile likelihood in the
//! variance ratio λ = σ²_farm / σ²_resid, plus the usual derived quantities:
//! ICC, marginal/conditional R², AIC/BIC, likelihood-ratio tests, unadjusted
//! (LSD) pairwise comparisons of factor levels and residual diagnostics.

mod design;
mod diagnostics;
mod fit;
mod inference;
mod report;

pub use design::{Covariate, Design, Factor, LmmSpec, INTERCEPT};
pub use diagnostics::{brown_forsythe, diagnostics, Diagnostics, LeveneResult};
pub use fit::{fit_random_intercept, profile_loglik, FitOptions, LmmFit, Method};
pub use inference::{
    adjusted_means, icc, information_criteria, lr_test, lsd_pairwise, r_squared, significance_marker,
    InformationCriteria, LrTest, PairwiseComparison, RSquared,
};
pub use report::{LmmReport, MarkerStyle};
