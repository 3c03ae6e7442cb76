use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const INTERCEPT: &str = "(Intercept)";

/// Categorical fixed effect coded against its first observed level.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub name: String,
    /// Level of each observation.
    pub values: Vec<String>,
    /// Level order; the first level present in `values` is the reference.
    pub order: Vec<String>,
}

impl Factor {
    /// Levels ordered lexicographically.
    pub fn new(name: impl Into<String>, values: Vec<String>) -> Self {
        let mut order = values.clone();
        order.sort();
        order.dedup();
        Factor { name: name.into(), values, order }
    }

    pub fn with_order(name: impl Into<String>, values: Vec<String>, order: Vec<String>) -> Self {
        Factor { name: name.into(), values, order }
    }

    /// Levels that occur in the data, in level order.
    pub fn observed_levels(&self) -> Vec<String> {
        self.order.iter().filter(|l| self.values.contains(l)).cloned().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: Vec<f64>,
}

impl Covariate {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Covariate { name: name.into(), values }
    }
}

/// Response, grouping and fixed-effect terms of a random-intercept model.
#[derive(Debug, Clone, PartialEq)]
pub struct LmmSpec {
    pub response: Vec<f64>,
    /// Grouping level (farm) of each observation.
    pub groups: Vec<String>,
    pub factor: Option<Factor>,
    pub covariates: Vec<Covariate>,
}

impl LmmSpec {
    /// Intercept-only model on the same data.
    pub fn null_model(&self) -> LmmSpec {
        LmmSpec { response: self.response.clone(), groups: self.groups.clone(), factor: None, covariates: vec![] }
    }
}

/// Design matrix, response and group structure ready for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub columns: Vec<String>,
    /// Group index of each observation.
    pub group_of: Vec<usize>,
    pub group_names: Vec<String>,
    pub factor_name: Option<String>,
    /// Observed factor levels, reference first.
    pub factor_levels: Vec<String>,
    /// Column of each non-reference level.
    pub factor_columns: Vec<usize>,
    /// Column indices of covariates.
    pub covariate_columns: Vec<usize>,
}

impl Design {
    pub fn build(spec: &LmmSpec) -> Result<Design> {
        let n = spec.response.len();
        if n == 0 {
            return Err(Error::Invalid("empty response".into()));
        }
        if spec.response.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("response contains non-finite values".into()));
        }
        if spec.groups.len() != n {
            return Err(Error::Invalid(format!("{} group labels for {} observations", spec.groups.len(), n)));
        }
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for g in &spec.groups {
            let k = index.len();
            index.entry(g.as_str()).or_insert(k);
        }
        if index.len() < 2 {
            return Err(Error::Invalid(format!(
                "at least 2 groups are needed to estimate the group variance, got {}",
                index.len()
            )));
        }
        let mut group_names = vec![String::new(); index.len()];
        for (name, &k) in &index {
            group_names[k] = name.to_string();
        }
        let group_of: Vec<usize> = spec.groups.iter().map(|g| index[g.as_str()]).collect();

        let mut columns = vec![INTERCEPT.to_string()];
        let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
        let mut factor_levels = Vec::new();
        let mut factor_columns = Vec::new();
        if let Some(f) = &spec.factor {
            if f.values.len() != n {
                return Err(Error::Invalid(format!("factor `{}` has {} values for {} observations", f.name, f.values.len(), n)));
            }
            if let Some(v) = f.values.iter().find(|v| !f.order.contains(v)) {
                return Err(Error::Invalid(format!("factor `{}` level `{v}` missing from level order", f.name)));
            }
            factor_levels = f.observed_levels();
            for level in factor_levels.iter().skip(1) {
                factor_columns.push(cols.len());
                columns.push(format!("{}[{}]", f.name, level));
                cols.push(f.values.iter().map(|v| if v == level { 1.0 } else { 0.0 }).collect());
            }
        }
        let mut covariate_columns = Vec::new();
        for c in &spec.covariates {
            if c.values.len() != n {
                return Err(Error::Invalid(format!("covariate `{}` has {} values for {} observations", c.name, c.values.len(), n)));
            }
            if c.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("covariate `{}` contains non-finite values", c.name)));
            }
            covariate_columns.push(cols.len());
            columns.push(c.name.clone());
            cols.push(c.values.clone());
        }

        let aliased = aliased_columns(&cols, &columns);
        if !aliased.is_empty() {
            return Err(Error::RankDeficient(aliased));
        }
        let p = cols.len();
        if n <= p {
            return Err(Error::Invalid(format!("{n} observations cannot support {p} fixed effects")));
        }
        let x = DMatrix::from_fn(n, p, |i, j| cols[j][i]);
        Ok(Design {
            x,
            y: DVector::from_column_slice(&spec.response),
            columns,
            group_of,
            group_names,
            factor_name: spec.factor.as_ref().map(|f| f.name.clone()),
            factor_levels,
            factor_columns,
            covariate_columns,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_fixed(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.group_names.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_groups()];
        for &g in &self.group_of {
            sizes[g] += 1;
        }
        sizes
    }
}

/// Columns that lie (numerically) in the span of the columns before them,
/// found by modified Gram-Schmidt.
fn aliased_columns(cols: &[Vec<f64>], names: &[String]) -> Vec<String> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut aliased = Vec::new();
    for (c, name) in cols.iter().zip(names) {
        let norm0 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = c.clone();
        for q in &basis {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= 1e-10 * norm0 {
            aliased.push(name.clone());
        } else {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    aliased
}
