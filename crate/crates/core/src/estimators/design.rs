use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use super::qr::Qr;
use super::spec::{Reference, RegressionSpec, Term, Var};
use super::COLLINEARITY_TOL;
use crate::error::{Error, Result};
use crate::panel::PanelDataset;

/// Dense column-major regressor matrix after collinearity screening.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignMatrix {
    pub n_rows: usize,
    pub labels: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    /// Labels removed because they were collinear with earlier columns.
    pub dropped: Vec<String>,
}

impl DesignMatrix {
    /// Screen `candidates` in order, keeping each column that is not in the
    /// span of the columns kept before it.
    pub fn from_candidates(n_rows: usize, candidates: Vec<(String, Vec<f64>)>) -> Self {
        let mut qr = Qr::new(n_rows);
        let mut labels = Vec::new();
        let mut columns = Vec::new();
        let mut dropped = Vec::new();
        for (label, col) in candidates {
            debug_assert_eq!(col.len(), n_rows);
            let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
            if qr.push(&col, norm, COLLINEARITY_TOL) {
                labels.push(label);
                columns.push(col);
            } else {
                dropped.push(label);
            }
        }
        DesignMatrix { n_rows, labels, columns, dropped }
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, label: &str) -> Option<&[f64]> {
        self.labels.iter().position(|l| l == label).map(|j| self.columns[j].as_slice())
    }
}

/// A design matrix with everything else a fit needs.
#[derive(Debug, Clone)]
pub struct Design {
    pub matrix: DesignMatrix,
    pub outcome_label: String,
    pub outcome: Vec<f64>,
    /// Dense cluster ids, `0..n_clusters`.
    pub clusters: Vec<u32>,
    /// Dense absorbed-group ids when the spec absorbs a variable.
    pub absorb: Option<Vec<u32>>,
    /// Indices of the sample rows within the dataset's intervals.
    pub rows: Vec<usize>,
    pub n_individuals: usize,
    /// Dataset rows outside the spec's sample.
    pub excluded_rows: usize,
}

/// Expand the spec over the sample rows of `ds`.
///
/// Dummies produce one column per non-reference level, interactions the
/// elementwise products of their factors' columns. An intercept leads the
/// column list unless the spec absorbs a group. Columns exactly collinear
/// with earlier ones are dropped, later declarations losing.
pub fn build_design(spec: &RegressionSpec, ds: &PanelDataset) -> Result<Design> {
    let rows: Vec<usize> = ds
        .intervals()
        .iter()
        .enumerate()
        .filter(|(_, iv)| ds.in_population(iv, spec.sample))
        .map(|(i, _)| i)
        .collect();
    if rows.is_empty() {
        return Err(Error::data(format!("empty sample for population {}", spec.sample)));
    }

    let outcome = column_of(spec.outcome, ds, &rows)?;
    let clusters = group_ids(spec.cluster, ds, &rows)?;
    let absorb = spec.absorb.map(|v| group_ids(v, ds, &rows)).transpose()?;
    if let Some(groups) = &absorb {
        let mut owner: HashMap<u32, u32> = HashMap::new();
        for (&g, &c) in groups.iter().zip(&clusters) {
            if *owner.entry(g).or_insert(c) != c {
                return Err(Error::config(format!(
                    "absorbed variable {} is not nested within clusters of {}",
                    spec.absorb.unwrap(),
                    spec.cluster
                )));
            }
        }
    }

    let mut candidates = Vec::new();
    if spec.intercept {
        candidates.push(("(intercept)".to_string(), vec![1.0; rows.len()]));
    }
    candidates.extend(expand_terms(&spec.terms, ds, &rows)?);
    let matrix = DesignMatrix::from_candidates(rows.len(), candidates);

    let mut seen = vec![false; ds.persons().len()];
    let n_individuals = rows
        .iter()
        .filter(|&&r| !std::mem::replace(&mut seen[ds.intervals()[r].person.get()], true))
        .count();

    Ok(Design {
        matrix,
        outcome_label: spec.outcome.to_string(),
        outcome,
        clusters,
        absorb,
        excluded_rows: ds.len() - rows.len(),
        rows,
        n_individuals,
    })
}

pub(crate) fn expand_terms(
    terms: &[Term],
    ds: &PanelDataset,
    rows: &[usize],
) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out = Vec::new();
    for t in terms {
        out.extend(expand(t, ds, rows)?);
    }
    Ok(out)
}

fn column_of(var: Var, ds: &PanelDataset, rows: &[usize]) -> Result<Vec<f64>> {
    let ivs = ds.intervals();
    rows.iter().map(|&r| var.value(ds, &ivs[r])).collect()
}

/// Map a discrete variable's levels to dense ids in order of first appearance.
fn group_ids(var: Var, ds: &PanelDataset, rows: &[usize]) -> Result<Vec<u32>> {
    let ivs = ds.intervals();
    let mut ids: HashMap<i64, u32> = HashMap::new();
    rows.iter()
        .map(|&r| {
            let level = var.level(ds, &ivs[r])?;
            let next = ids.len() as u32;
            Ok(*ids.entry(level).or_insert(next))
        })
        .collect()
}

fn expand(term: &Term, ds: &PanelDataset, rows: &[usize]) -> Result<Vec<(String, Vec<f64>)>> {
    match term {
        Term::Continuous(var) => Ok(vec![(var.to_string(), column_of(*var, ds, rows)?)]),
        Term::Dummies { var, reference } => {
            let ivs = ds.intervals();
            let levels: Vec<i64> =
                rows.iter().map(|&r| var.level(ds, &ivs[r])).collect::<Result<_>>()?;
            let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
            for &l in &levels {
                *counts.entry(l).or_default() += 1;
            }
            let omitted = match reference {
                Reference::First => counts.keys().next().copied(),
                Reference::MostFrequent => {
                    // max_by_key keeps the last maximum; iterate in reverse so ties go to the smallest level.
                    counts.iter().rev().max_by_key(|(_, &c)| c).map(|(&l, _)| l)
                }
                Reference::Level(l) => Some(*l),
                Reference::None => None,
            };
            Ok(counts
                .keys()
                .filter(|&&l| Some(l) != omitted)
                .map(|&l| {
                    let col = levels.iter().map(|&x| if x == l { 1.0 } else { 0.0 }).collect();
                    (format!("{var}={l}"), col)
                })
                .collect())
        }
        Term::Interaction(a, b) => {
            let left = expand(a, ds, rows)?;
            let right = expand(b, ds, rows)?;
            let mut out = Vec::with_capacity(left.len() * right.len());
            for (la, ca) in &left {
                for (lb, cb) in &right {
                    let col = ca.iter().zip(cb).map(|(x, y)| x * y).collect();
                    out.push((format!("{la}:{lb}"), col));
                }
            }
            Ok(out)
        }
    }
}
