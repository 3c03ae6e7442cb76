use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{Design, LmmSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Ml,
    Reml,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub method: Method,
    /// Hold λ = σ²_farm / σ²_resid at this value instead of estimating it.
    pub fixed_ratio: Option<f64>,
    /// Search range for ln λ.
    pub log_ratio_bounds: (f64, f64),
    pub grid_points: usize,
    /// Golden-section stopping width on ln λ.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            method: Method::Ml,
            fixed_ratio: None,
            log_ratio_bounds: (-12.0, 12.0),
            grid_points: 25,
            tolerance: 1e-10,
        }
    }
}

impl FitOptions {
    pub fn reml() -> Self {
        FitOptions { method: Method::Reml, ..Default::default() }
    }

    pub fn fixed(mut self, ratio: f64) -> Self {
        self.fixed_ratio = Some(ratio);
        self
    }
}

#[derive(Debug, Clone)]
pub struct LmmFit {
    pub method: Method,
    pub columns: Vec<String>,
    pub beta: Vec<f64>,
    /// Covariance of the fixed-effect estimates.
    pub beta_cov: DMatrix<f64>,
    pub sigma2_farm: f64,
    pub sigma2_resid: f64,
    pub variance_ratio: f64,
    pub loglik: f64,
    pub n_obs: usize,
    pub n_groups: usize,
    /// Fixed effects plus estimated variance parameters.
    pub n_params: usize,
    /// The group variance sits on its zero boundary.
    pub boundary: bool,
    /// `X β`.
    pub fitted_fixed: Vec<f64>,
    /// `X β + u_j`.
    pub fitted: Vec<f64>,
    /// Predicted group intercepts, in group order.
    pub random_effects: Vec<(String, f64)>,
    /// Conditional residuals `y − X β − u_j`.
    pub residuals: Vec<f64>,
    /// Conditional residuals divided by σ_resid.
    pub standardized_residuals: Vec<f64>,
    pub design: Design,
}

impl LmmFit {
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.beta.len()).map(|i| self.beta_cov[(i, i)].sqrt()).collect()
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.columns.iter().position(|c| c == name).map(|i| self.beta[i])
    }
}

/// Everything the profile likelihood yields at one variance ratio.
struct Profile {
    loglik: f64,
    beta: DVector<f64>,
    sigma2: f64,
    r: DMatrix<f64>,
}

// Smallest residual variance a fit reports; keeps the likelihood finite for
// exact fits.
const SIGMA2_FLOOR: f64 = 1e-300;

fn evaluate(design: &Design, sizes: &[usize], ratio: f64, method: Method) -> Result<Profile> {
    let n = design.n_obs();
    let p = design.n_fixed();
    let g = design.n_groups();

    // Per-group whitening H_j^{-1/2} = I − c_j 11'/n_j with H_j = I + λ 11'.
    let shrink: Vec<f64> = sizes.iter().map(|&m| 1.0 - 1.0 / (1.0 + ratio * m as f64).sqrt()).collect();
    let mut y_mean = vec![0.0; g];
    let mut x_mean = DMatrix::<f64>::zeros(g, p);
    for i in 0..n {
        let j = design.group_of[i];
        y_mean[j] += design.y[i];
        for k in 0..p {
            x_mean[(j, k)] += design.x[(i, k)];
        }
    }
    for j in 0..g {
        y_mean[j] /= sizes[j] as f64;
        for k in 0..p {
            x_mean[(j, k)] /= sizes[j] as f64;
        }
    }
    let mut xt = design.x.clone();
    let mut yt = design.y.clone();
    for i in 0..n {
        let j = design.group_of[i];
        yt[i] -= shrink[j] * y_mean[j];
        for k in 0..p {
            xt[(i, k)] -= shrink[j] * x_mean[(j, k)];
        }
    }

    let qr = xt.clone().qr();
    let r = qr.r();
    let mut qty = yt.clone();
    qr.q_tr_mul(&mut qty);
    let beta = r
        .solve_upper_triangular(&qty.rows(0, p).into_owned())
        .ok_or_else(|| Error::Numerical("singular transformed design".into()))?;
    let resid = &yt - &xt * &beta;
    let q = resid.norm_squared();

    let logdet_h: f64 = sizes.iter().map(|&m| (1.0 + ratio * m as f64).ln()).sum();
    let two_pi = 2.0 * std::f64::consts::PI;
    let (sigma2, loglik) = match method {
        Method::Ml => {
            let s2 = (q / n as f64).max(SIGMA2_FLOOR);
            (s2, -0.5 * n as f64 * ((two_pi * s2).ln() + 1.0) - 0.5 * logdet_h)
        }
        Method::Reml => {
            let dof = (n - p) as f64;
            let s2 = (q / dof).max(SIGMA2_FLOOR);
            let logdet_xhx: f64 = (0..p).map(|k| r[(k, k)].abs().ln()).sum::<f64>() * 2.0;
            (s2, -0.5 * dof * ((two_pi * s2).ln() + 1.0) - 0.5 * logdet_h - 0.5 * logdet_xhx)
        }
    };
    if !loglik.is_finite() {
        return Err(Error::Numerical(format!("non-finite log-likelihood at ratio {ratio}")));
    }
    Ok(Profile { loglik, beta, sigma2, r })
}

/// Profile log-likelihood (ML or REML) at `ln λ`, with β and σ²_resid at
/// their closed-form optima.
pub fn profile_loglik(design: &Design, log_ratio: f64, method: Method) -> Result<f64> {
    evaluate(design, &design.group_sizes(), log_ratio.exp(), method).map(|p| p.loglik)
}

/// Fits the random-intercept model.
///
/// λ is found by a grid pre-scan over `ln λ` followed by golden-section
/// search around the best grid point and a Newton refinement; the λ = 0
/// boundary is then compared and wins ties.
pub fn fit_random_intercept(spec: &LmmSpec, opts: &FitOptions) -> Result<LmmFit> {
    let design = Design::build(spec)?;
    fit_design(design, opts)
}

pub(crate) fn fit_design(design: Design, opts: &FitOptions) -> Result<LmmFit> {
    let sizes = design.group_sizes();
    let eval = |ratio: f64| evaluate(&design, &sizes, ratio, opts.method);

    let (ratio, profile) = match opts.fixed_ratio {
        Some(r) => {
            if !(r >= 0.0) || !r.is_finite() {
                return Err(Error::Range(format!("variance ratio must be non-negative, got {r}")));
            }
            (r, eval(r)?)
        }
        None => {
            let (lo, hi) = opts.log_ratio_bounds;
            let m = opts.grid_points.max(3);
            let grid: Vec<f64> = (0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64).collect();
            let mut best = 0;
            let mut best_ll = f64::NEG_INFINITY;
            for (k, &t) in grid.iter().enumerate() {
                let ll = eval(t.exp())?.loglik;
                if ll > best_ll {
                    best_ll = ll;
                    best = k;
                }
            }
            let a = grid[best.saturating_sub(1)];
            let b = grid[(best + 1).min(m - 1)];
            let ll = |t: f64| eval(t.exp()).map(|p| p.loglik).unwrap_or(f64::NEG_INFINITY);
            let theta = newton_polish(&ll, golden_max(&ll, a, b, opts.tolerance), (lo, hi));
            let interior = eval(theta.exp())?;
            let zero = eval(0.0)?;
            if zero.loglik >= interior.loglik {
                (0.0, zero)
            } else {
                (theta.exp(), interior)
            }
        }
    };
    Ok(assemble(design, &sizes, ratio, profile, opts))
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    // the interval may have collapsed next to a better end point
    [(a, f(a)), (mid, f(mid)), (b, f(b))]
        .into_iter()
        .fold((mid, f64::NEG_INFINITY), |acc, (t, v)| if v > acc.1 { (t, v) } else { acc })
        .0
}

/// Golden-section search only resolves a flat maximum to about √ε in its
/// argument; a few Newton steps on the central-difference derivative locate
/// the stationary point itself.
fn newton_polish<F: Fn(f64) -> f64>(f: &F, mut t: f64, bounds: (f64, f64)) -> f64 {
    let h = 1e-4;
    let mut ft = f(t);
    for _ in 0..8 {
        let (fp, fm) = (f(t + h), f(t - h));
        let d1 = (fp - fm) / (2.0 * h);
        let d2 = (fp - 2.0 * ft + fm) / (h * h);
        if !(d2 < 0.0) {
            break;
        }
        let next = t - d1 / d2;
        if !(bounds.0..=bounds.1).contains(&next) || (next - t).abs() > 10.0 * h {
            break;
        }
        let fnext = f(next);
        if fnext < ft - 1e-12 * ft.abs().max(1.0) {
            break;
        }
        let done = (next - t).abs() < 1e-13;
        t = next;
        ft = fnext;
        if done {
            break;
        }
    }
    t
}

fn assemble(design: Design, sizes: &[usize], ratio: f64, profile: Profile, opts: &FitOptions) -> LmmFit {
    let n = design.n_obs();
    let p = design.n_fixed();
    let sigma2_resid = profile.sigma2;
    let sigma2_farm = ratio * sigma2_resid;

    let r_inv = profile
        .r
        .clone()
        .try_inverse()
        .expect("R is invertible for a full-rank design");
    let beta_cov = &r_inv * r_inv.transpose() * sigma2_resid;

    let fitted_fixed: Vec<f64> = (&design.x * &profile.beta).iter().copied().collect();
    let mut group_resid = vec![0.0; design.n_groups()];
    for i in 0..n {
        group_resid[design.group_of[i]] += design.y[i] - fitted_fixed[i];
    }
    let blup: Vec<f64> = group_resid
        .iter()
        .zip(sizes)
        .map(|(s, &m)| {
            let m = m as f64;
            ratio * m / (1.0 + ratio * m) * (s / m)
        })
        .collect();
    let fitted: Vec<f64> = (0..n).map(|i| fitted_fixed[i] + blup[design.group_of[i]]).collect();
    let residuals: Vec<f64> = (0..n).map(|i| design.y[i] - fitted[i]).collect();
    let sd = sigma2_resid.sqrt();
    let scale = design.y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let exact = sd <= 1e-10 * scale;
    let standardized_residuals = residuals.iter().map(|r| if exact { 0.0 } else { r / sd }).collect();
    let random_effects = design.group_names.iter().cloned().zip(blup).collect();

    LmmFit {
        method: opts.method,
        columns: design.columns.clone(),
        beta: profile.beta.iter().copied().collect(),
        beta_cov,
        sigma2_farm,
        sigma2_resid,
        variance_ratio: ratio,
        loglik: profile.loglik,
        n_obs: n,
        n_groups: design.n_groups(),
        n_params: p + 1 + usize::from(opts.fixed_ratio.is_none()),
        boundary: ratio == 0.0,
        fitted_fixed,
        fitted,
        random_effects,
        residuals,
        standardized_residuals,
        design,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmm::design::{Covariate, Factor};

    fn toy() -> LmmSpec {
        // three farms with clearly different levels
        let y = vec![1.0, 1.2, 0.9, 3.1, 2.8, 3.0, 5.2, 4.9, 5.1, 1.1, 3.0, 5.0];
        let g = ["a", "a", "a", "b", "b", "b", "c", "c", "c", "a", "b", "c"];
        LmmSpec {
            response: y,
            groups: g.map(String::from).to_vec(),
            factor: None,
            covariates: vec![Covariate::new("x", vec![0.1, 0.4, -0.2, 0.3, -0.5, 0.0, 0.2, -0.1, 0.6, -0.3, 0.5, 0.1])],
        }
    }

    #[test]
    fn detects_group_variance() {
        let fit = fit_random_intercept(&toy(), &FitOptions::default()).unwrap();
        assert!(fit.sigma2_farm > 1.0, "{}", fit.sigma2_farm);
        assert!(fit.sigma2_resid < 0.1);
        assert!(!fit.boundary);
        assert_eq!(fit.n_params, 4);
    }

    #[test]
    fn perfect_fit_has_zero_residuals() {
        let mut s = toy();
        let x = s.covariates[0].values.clone();
        s.response = x.iter().map(|v| 2.0 + 3.0 * v).collect();
        let fit = fit_random_intercept(&s, &FitOptions::default()).unwrap();
        assert!(fit.standardized_residuals.iter().all(|r| r.abs() < 1e-6), "{:?}", fit.standardized_residuals);
        assert!((fit.beta[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn single_farm_rejected() {
        let mut s = toy();
        s.groups = vec!["a".into(); 12];
        assert!(fit_random_intercept(&s, &FitOptions::default()).is_err());
    }

    #[test]
    fn reml_variance_exceeds_ml() {
        let s = LmmSpec {
            factor: Some(Factor::new("f", (0..12).map(|i| (i % 3).to_string()).collect())),
            ..toy()
        };
        let ml = fit_random_intercept(&s, &FitOptions::default()).unwrap();
        let reml = fit_random_intercept(&s, &FitOptions::reml()).unwrap();
        assert!(reml.sigma2_resid > ml.sigma2_resid);
    }

    #[test]
    fn golden_finds_parabola_max() {
        let t = golden_max(&|x| -(x - 0.3).powi(2), -1.0, 1.0, 1e-10);
        assert!((t - 0.3).abs() < 1e-8);
    }
}
