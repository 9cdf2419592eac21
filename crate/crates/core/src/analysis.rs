//! Selection accuracy, replicate summaries and attribute hierarchies.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Result, SlamError};
use crate::patterns::PatternSet;
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AccuracyRecord {
    pub tpr: f64,
    pub one_minus_fdr: f64,
    /// Fraction of the truth contained in the screening set, when one was given.
    pub coverage: Option<f64>,
    pub support_size: usize,
    pub rmse: Option<Vec<f64>>,
}

fn check_k(a: &PatternSet, b: &PatternSet) -> Result<()> {
    if a.k() != b.k() {
        return Err(SlamError::DimensionMismatch(format!(
            "pattern sets over {} and {} attributes",
            a.k(),
            b.k()
        )));
    }
    Ok(())
}

/// TPR and 1 - FDR of `selected` against `truth`.
///
/// An empty selection scores 1 - FDR = 1 when the truth is empty too and 0 otherwise;
/// an empty truth gives TPR = 1.
pub fn selection_metrics(truth: &PatternSet, selected: &PatternSet) -> Result<AccuracyRecord> {
    check_k(truth, selected)?;
    let hits = truth.intersection(selected)?.len() as f64;
    let tpr = if truth.is_empty() {
        1.0
    } else {
        hits / truth.len() as f64
    };
    let one_minus_fdr = match (selected.is_empty(), truth.is_empty()) {
        (true, true) => 1.0,
        (true, false) => 0.0,
        _ => hits / selected.len() as f64,
    };
    Ok(AccuracyRecord {
        tpr,
        one_minus_fdr,
        coverage: None,
        support_size: selected.len(),
        rmse: None,
    })
}

/// Fraction of `truth` contained in `candidates`.
pub fn coverage(truth: &PatternSet, candidates: &PatternSet) -> Result<f64> {
    Ok(selection_metrics(truth, candidates)?.tpr)
}

/// Per-pattern RMSE over replicates; `estimates[r][l]` estimates `truth[l]`.
pub fn rmse_proportions<T: Real>(truth: &[T], estimates: &[Vec<T>]) -> Result<Vec<T>> {
    if estimates.is_empty() {
        return Err(SlamError::Empty("replicate estimates".into()));
    }
    if let Some(e) = estimates.iter().find(|e| e.len() != truth.len()) {
        return Err(SlamError::DimensionMismatch(format!(
            "replicate has {} estimates for {} patterns",
            e.len(),
            truth.len()
        )));
    }
    let reps = T::from_count(estimates.len());
    Ok(truth
        .iter()
        .enumerate()
        .map(|(l, &p)| {
            let sq: T = estimates.iter().map(|e| (e[l] - p) * (e[l] - p)).sum();
            (sq / reps).sqrt()
        })
        .collect())
}

/// Estimated proportions aligned to `truth`, with 0 for patterns not selected.
pub fn align_proportions<T: Real>(
    truth: &PatternSet,
    selected: &PatternSet,
    proportions: &[T],
) -> Result<Vec<T>> {
    check_k(truth, selected)?;
    if proportions.len() != selected.len() {
        return Err(SlamError::DimensionMismatch(format!(
            "{} proportions for {} selected patterns",
            proportions.len(),
            selected.len()
        )));
    }
    Ok(truth
        .iter()
        .map(|a| selected.position(a).map_or(T::zero(), |i| proportions[i]))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (zero for a single value).
    pub sd: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            sd: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, sd }
}

/// Attribute groups and prerequisite edges implied by a set of patterns.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HierarchyGraph {
    /// Attributes with identical columns, ordered by smallest member.
    pub groups: Vec<Vec<usize>>,
    /// `(from, to)` group indices: `from` is a prerequisite of `to` (Hasse diagram).
    pub edges: Vec<(usize, usize)>,
}

impl HierarchyGraph {
    /// Graphviz rendering with 1-based attribute labels.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph hierarchy {\n  rankdir=TB;\n");
        for (g, members) in self.groups.iter().enumerate() {
            let label = members
                .iter()
                .map(|k| (k + 1).to_string())
                .collect::<Vec<_>>()
                .join(",");
            out.push_str(&format!("  g{g} [label=\"{label}\"];\n"));
        }
        for (a, b) in &self.edges {
            out.push_str(&format!("  g{a} -> g{b};\n"));
        }
        out.push_str("}\n");
        out
    }

    /// Pairs `(a, b)` with a directed path from `a` to `b`.
    pub fn reachability(&self) -> Vec<(usize, usize)> {
        closure(self.groups.len(), &self.edges)
    }
}

fn closure(n: usize, edges: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut reach = vec![vec![false; n]; n];
    for &(a, b) in edges {
        reach[a][b] = true;
    }
    for m in 0..n {
        for a in 0..n {
            if reach[a][m] {
                for b in 0..n {
                    if reach[m][b] {
                        reach[a][b] = true;
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for (a, row) in reach.iter().enumerate() {
        for (b, &r) in row.iter().enumerate() {
            if r {
                out.push((a, b));
            }
        }
    }
    out
}

/// Prerequisite edges between groups of interchangeable attributes.
///
/// Attribute `k1` is a prerequisite of `k2` when every pattern mastering `k2` also masters `k1`.
pub fn hierarchy_relations(selected: &PatternSet) -> Result<(Vec<Vec<usize>>, Vec<(usize, usize)>)> {
    if selected.is_empty() {
        return Err(SlamError::Empty("selected pattern set".into()));
    }
    let k = selected.k();
    let mut by_column: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for a in 0..k {
        let col: Vec<bool> = selected.iter().map(|p| p.get(a)).collect();
        by_column.entry(col).or_default().push(a);
    }
    let mut groups: Vec<(Vec<bool>, Vec<usize>)> = by_column.into_iter().collect();
    groups.sort_by_key(|(_, members)| members[0]);
    let mut edges = Vec::new();
    for (i, (ci, _)) in groups.iter().enumerate() {
        for (j, (cj, _)) in groups.iter().enumerate() {
            if i != j && ci.iter().zip(cj).all(|(a, b)| a >= b) {
                edges.push((i, j));
            }
        }
    }
    Ok((groups.into_iter().map(|(_, m)| m).collect(), edges))
}

pub fn extract_hierarchy(selected: &PatternSet) -> Result<HierarchyGraph> {
    let (groups, edges) = hierarchy_relations(selected)?;
    let n = groups.len();
    let mut has = vec![vec![false; n]; n];
    for &(a, b) in &edges {
        has[a][b] = true;
    }
    // The relation is already transitive, so an edge is redundant iff it factors through a middle group.
    let reduced = edges
        .iter()
        .copied()
        .filter(|&(a, b)| !(0..n).any(|m| m != a && m != b && has[a][m] && has[m][b]))
        .collect();
    Ok(HierarchyGraph {
        groups,
        edges: reduced,
    })
}
