use serde::Serialize;

use super::design::{build_design, expand_terms, Design, DesignMatrix};
use super::qr::Qr;
use super::spec::{RegressionSpec, Term};
use super::COLLINEARITY_TOL;
use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::stats::{t_critical, t_two_sided_p};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Ols,
    Fe,
}

impl Model {
    pub fn tag(self) -> &'static str {
        match self {
            Model::Ols => "ols",
            Model::Fe => "fe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub label: String,
    pub estimate: f64,
    pub robust_se: f64,
    pub t_stat: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub model: Model,
    pub outcome: String,
    pub coefficients: Vec<Coefficient>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub n_individuals: usize,
    /// Number of absorbed groups (fixed-effects fits only).
    pub n_absorbed: Option<usize>,
    /// Residual degrees of freedom of the reference t distribution.
    pub df: usize,
    pub r_squared: f64,
    pub rss: f64,
    pub dropped: Vec<String>,
    /// Dataset rows outside the sample.
    pub excluded_rows: usize,
}

impl FitResult {
    pub fn get(&self, label: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.label == label)
    }

    pub fn is_dropped(&self, label: &str) -> bool {
        self.dropped.iter().any(|d| d == label)
    }

    /// Two-sided `1 - alpha` confidence interval from the t(G-1) reference.
    pub fn ci(&self, label: &str, alpha: f64) -> Option<(f64, f64)> {
        let c = self.get(label)?;
        let q = t_critical(alpha, self.df as f64);
        Some((c.estimate - q * c.robust_se, c.estimate + q * c.robust_se))
    }
}

fn count_distinct(ids: &[u32]) -> usize {
    let max = ids.iter().copied().max().map_or(0, |m| m as usize + 1);
    let mut seen = vec![false; max];
    ids.iter().filter(|&&g| !std::mem::replace(&mut seen[g as usize], true)).count()
}

fn column_norm(col: &[f64]) -> f64 {
    col.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Subtract group means.
fn demean(values: &[f64], groups: &[u32], n_groups: usize) -> Vec<f64> {
    let mut sum = vec![0.0; n_groups];
    let mut count = vec![0usize; n_groups];
    for (&v, &g) in values.iter().zip(groups) {
        sum[g as usize] += v;
        count[g as usize] += 1;
    }
    let means: Vec<f64> = sum.iter().zip(&count).map(|(s, &c)| s / c.max(1) as f64).collect();
    values.iter().zip(groups).map(|(v, &g)| v - means[g as usize]).collect()
}

struct Problem<'c> {
    model: Model,
    /// Regressor columns after any within transformation.
    columns: Vec<&'c [f64]>,
    labels: Vec<String>,
    dropped: Vec<String>,
    /// Outcome after any within transformation.
    y: &'c [f64],
    y_raw: &'c [f64],
    clusters: &'c [u32],
    n_clusters: usize,
    n_absorbed: Option<usize>,
}

/// Coefficients, CR1 sandwich and fit statistics from a finished factorization.
fn finish(qr: &Qr<'_>, qty: &[f64], p: Problem<'_>) -> Result<FitResult> {
    let n = p.y.len();
    let k = p.columns.len();
    debug_assert_eq!(qr.rank(), k);
    let a = p.n_absorbed.unwrap_or(0);
    if n <= k + a {
        return Err(Error::data(format!(
            "{n} observations cannot identify {k} coefficients and {a} absorbed groups"
        )));
    }
    let g = p.n_clusters;
    if g < 2 {
        return Err(Error::data(format!("cluster-robust inference needs at least 2 clusters, got {g}")));
    }

    let beta = qr.solve_r(qty);
    let mut resid = p.y.to_vec();
    for (col, b) in p.columns.iter().zip(&beta) {
        for (e, x) in resid.iter_mut().zip(col.iter()) {
            *e -= b * x;
        }
    }
    let rss: f64 = resid.iter().map(|e| e * e).sum();
    let y_mean = p.y_raw.iter().sum::<f64>() / n as f64;
    let tss: f64 = p.y_raw.iter().map(|y| (y - y_mean).powi(2)).sum();
    let r_squared = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 0.0 };

    // Cluster scores s_g = Σ_{i∈g} x_i e_i, stored G×K row-major.
    let mut scores = vec![0.0; g * k];
    for (j, col) in p.columns.iter().enumerate() {
        for ((x, e), &c) in col.iter().zip(&resid).zip(p.clusters) {
            scores[c as usize * k + j] += x * e;
        }
    }
    // V = c · R⁻¹ (Σ u_g u_gᵀ) R⁻ᵀ with u_g = R⁻ᵀ s_g.
    let rinv = qr.r_inverse();
    let mut meat = vec![0.0; k * k];
    let mut u = vec![0.0; k];
    for s in scores.chunks_exact(k) {
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = (0..=i).map(|m| rinv[m][i] * s[m]).sum();
        }
        for i in 0..k {
            if u[i] == 0.0 {
                continue;
            }
            for j in 0..k {
                meat[i * k + j] += u[i] * u[j];
            }
        }
    }
    let scale = (g as f64 / (g as f64 - 1.0)) * ((n as f64 - 1.0) / (n - k - a) as f64);
    let df = g - 1;
    let coefficients = (0..k)
        .map(|i| {
            // (R⁻¹ M R⁻ᵀ)_{ii} = Σ_{a,b} R⁻¹_{ia} M_{ab} R⁻¹_{ib}
            let mut var = 0.0;
            for a_ in i..k {
                let ria = rinv[i][a_];
                if ria == 0.0 {
                    continue;
                }
                let row = &meat[a_ * k..(a_ + 1) * k];
                var += ria * (i..k).map(|b| row[b] * rinv[i][b]).sum::<f64>();
            }
            let robust_se = (scale * var).max(0.0).sqrt();
            let t_stat = beta[i] / robust_se;
            Coefficient {
                label: p.labels[i].clone(),
                estimate: beta[i],
                robust_se,
                t_stat,
                p_value: t_two_sided_p(t_stat, df as f64),
            }
        })
        .collect();

    Ok(FitResult {
        model: p.model,
        outcome: String::new(),
        coefficients,
        n_obs: n,
        n_clusters: g,
        n_individuals: g,
        n_absorbed: p.n_absorbed,
        df,
        r_squared,
        rss,
        dropped: p.dropped,
        excluded_rows: 0,
    })
}

/// Least squares via Householder QR with CR1 cluster-robust errors.
///
/// The small-sample factor is `G/(G-1) · (N-1)/(N-K)`; p-values use a t
/// distribution with `G - 1` degrees of freedom.
pub fn fit_ols(x: &DesignMatrix, y: &[f64], clusters: &[u32]) -> Result<FitResult> {
    check_lengths(x, y, clusters)?;
    let mut qr = Qr::new(x.n_rows);
    for (col, label) in x.columns.iter().zip(&x.labels) {
        if !qr.push(col, column_norm(col), COLLINEARITY_TOL) {
            return Err(Error::numerical(format!("design is rank deficient at column {label}")));
        }
    }
    let mut qty = y.to_vec();
    qr.apply_qt(&mut qty);
    finish(
        &qr,
        &qty,
        Problem {
            model: Model::Ols,
            columns: x.columns.iter().map(Vec::as_slice).collect(),
            labels: x.labels.clone(),
            dropped: x.dropped.clone(),
            y,
            y_raw: y,
            clusters,
            n_clusters: count_distinct(clusters),
            n_absorbed: None,
        },
    )
}

/// Within (fixed-effects) estimator: demean by `absorb` group, then OLS.
///
/// Columns constant within every group vanish under the transformation and
/// are reported as dropped. The small-sample factor subtracts the absorbed
/// groups from the residual degrees of freedom, and R² is computed on the
/// untransformed outcome.
pub fn fit_fe(x: &DesignMatrix, y: &[f64], absorb: &[u32], clusters: &[u32]) -> Result<FitResult> {
    check_lengths(x, y, clusters)?;
    if absorb.len() != y.len() {
        return Err(Error::config("absorb labels must match the number of rows"));
    }
    let n_groups = absorb.iter().copied().max().map_or(0, |m| m as usize + 1);
    let y_dm = demean(y, absorb, n_groups);
    let mut qr = Qr::new(x.n_rows);
    let mut kept_cols = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = x.dropped.clone();
    for (col, label) in x.columns.iter().zip(&x.labels) {
        let dm = demean(col, absorb, n_groups);
        if qr.push(&dm, column_norm(col), COLLINEARITY_TOL) {
            kept_cols.push(dm);
            labels.push(label.clone());
        } else {
            dropped.push(label.clone());
        }
    }
    if kept_cols.is_empty() {
        return Err(Error::NoIdentifiableRegressors);
    }
    let mut qty = y_dm.clone();
    qr.apply_qt(&mut qty);
    finish(
        &qr,
        &qty,
        Problem {
            model: Model::Fe,
            columns: kept_cols.iter().map(Vec::as_slice).collect(),
            labels,
            dropped,
            y: &y_dm,
            y_raw: y,
            clusters,
            n_clusters: count_distinct(clusters),
            n_absorbed: Some(count_distinct(absorb)),
        },
    )
}

fn check_lengths(x: &DesignMatrix, y: &[f64], clusters: &[u32]) -> Result<()> {
    if y.len() != x.n_rows || clusters.len() != x.n_rows {
        return Err(Error::config(format!(
            "design has {} rows but outcome has {} and clusters {}",
            x.n_rows,
            y.len(),
            clusters.len()
        )));
    }
    Ok(())
}

fn label_result(mut fit: FitResult, design: &Design) -> FitResult {
    fit.outcome = design.outcome_label.clone();
    fit.n_individuals = design.n_individuals;
    fit.excluded_rows = design.excluded_rows;
    fit
}

/// Build the spec's design on `ds` and fit it, OLS or within by whether the
/// spec absorbs a group.
pub fn fit(spec: &RegressionSpec, ds: &PanelDataset) -> Result<FitResult> {
    let design = build_design(spec, ds)?;
    let result = match &design.absorb {
        Some(groups) => fit_fe(&design.matrix, &design.outcome, groups, &design.clusters)?,
        None => fit_ols(&design.matrix, &design.outcome, &design.clusters)?,
    };
    Ok(label_result(result, &design))
}

/// A factored block of control columns shared by many fits that differ only
/// in a few trailing terms, such as the windows of a threshold sweep.
///
/// `fit_with(extra)` returns the same result as [`fit`] on the spec with
/// `extra` appended to its terms; only the extra columns are factored anew.
pub struct ControlFit<'d> {
    ds: &'d PanelDataset,
    design: Design,
    model: Model,
    qr: Qr<'static>,
    columns: Vec<Vec<f64>>,
    labels: Vec<String>,
    dropped: Vec<String>,
    y: Vec<f64>,
    qty: Vec<f64>,
    n_groups: usize,
    n_clusters: usize,
    n_absorbed: Option<usize>,
}

impl<'d> ControlFit<'d> {
    pub fn new(spec: &RegressionSpec, ds: &'d PanelDataset) -> Result<Self> {
        let design = build_design(spec, ds)?;
        let n_groups = design.absorb.as_ref().map_or(0, |g| g.iter().copied().max().map_or(0, |m| m as usize + 1));
        let mut qr = Qr::new(design.matrix.n_rows);
        let mut columns = Vec::new();
        let mut labels = Vec::new();
        let mut dropped = design.matrix.dropped.clone();
        let transform = |col: &[f64]| match &design.absorb {
            Some(groups) => demean(col, groups, n_groups),
            None => col.to_vec(),
        };
        for (col, label) in design.matrix.columns.iter().zip(&design.matrix.labels) {
            let t = transform(col);
            if qr.push(&t, column_norm(col), COLLINEARITY_TOL) {
                columns.push(t);
                labels.push(label.clone());
            } else if design.absorb.is_some() {
                dropped.push(label.clone());
            } else {
                return Err(Error::numerical(format!("design is rank deficient at column {label}")));
            }
        }
        let y = transform(&design.outcome);
        let mut qty = y.clone();
        qr.apply_qt(&mut qty);
        let (model, n_absorbed) = match &design.absorb {
            Some(groups) => (Model::Fe, Some(count_distinct(groups))),
            None => (Model::Ols, None),
        };
        Ok(ControlFit {
            ds,
            model,
            n_clusters: count_distinct(&design.clusters),
            design,
            qr,
            columns,
            labels,
            dropped,
            y,
            qty,
            n_groups,
            n_absorbed,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn fit_with(&self, extra: &[Term]) -> Result<FitResult> {
        let candidates = expand_terms(extra, self.ds, &self.design.rows)?;
        let base_rank = self.qr.rank();
        let mut qr = self.qr.extend();
        let mut new_cols = Vec::new();
        let mut labels = self.labels.clone();
        let mut dropped = self.dropped.clone();
        for (label, raw) in candidates {
            let t = match &self.design.absorb {
                Some(groups) => demean(&raw, groups, self.n_groups),
                None => raw.clone(),
            };
            if qr.push(&t, column_norm(&raw), COLLINEARITY_TOL) {
                new_cols.push(t);
                labels.push(label);
            } else {
                dropped.push(label);
            }
        }
        if labels.is_empty() {
            return Err(Error::NoIdentifiableRegressors);
        }
        let mut qty = self.qty.clone();
        qr.apply_qt_from(base_rank, &mut qty);
        let columns: Vec<&[f64]> =
            self.columns.iter().chain(&new_cols).map(Vec::as_slice).collect();
        let result = finish(
            &qr,
            &qty,
            Problem {
                model: self.model,
                columns,
                labels,
                dropped,
                y: &self.y,
                y_raw: &self.design.outcome,
                clusters: &self.design.clusters,
                n_clusters: self.n_clusters,
                n_absorbed: self.n_absorbed,
            },
        )?;
        Ok(label_result(result, &self.design))
    }
}
