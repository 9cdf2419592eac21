//! Warm-started fits over a tuning grid with EBIC selection.

use serde::Serialize;

use super::{fit_structure, Algorithm, CellStructure, FitConfig, FitResult};
use crate::error::{Result, SlamError};
use crate::patterns::{PatternSet, QMatrix};
use crate::response::ResponseMatrix;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tuning {
    Lambda,
    Upsilon,
}

/// `-0.2, -0.4, ..., -4.0`.
pub fn lambda_grid() -> Vec<f64> {
    (1..=20).map(|i| -(i as f64) / 5.0).collect()
}

/// `1.0, 0.9, ..., 0.3`.
pub fn upsilon_grid() -> Vec<f64> {
    (3..=10).rev().map(|i| i as f64 / 10.0).collect()
}

#[derive(Clone, Debug)]
pub struct PathEntry<T> {
    pub tuning: f64,
    pub fit: FitResult<T>,
}

#[derive(Clone, Debug)]
pub struct SolutionPath<T> {
    pub tuning: Tuning,
    pub entries: Vec<PathEntry<T>>,
    /// Entry with the smallest EBIC (ties: smaller support, then earlier position).
    pub chosen: usize,
}

impl<T: Real> SolutionPath<T> {
    pub fn chosen_fit(&self) -> &FitResult<T> {
        &self.entries[self.chosen].fit
    }

    pub fn chosen_tuning(&self) -> f64 {
        self.entries[self.chosen].tuning
    }

    /// Grid values whose fit selects exactly `target`.
    pub fn window_selecting(&self, target: &PatternSet) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| &e.fit.selected == target)
            .map(|e| e.tuning)
            .collect()
    }
}

/// Fits `config.algorithm` at every grid value, each warm-started from the previous fit.
///
/// The grid must be strictly decreasing (lambda for PEM, upsilon for FP-VEM).
pub fn solution_path<T: Real>(
    r: &ResponseMatrix,
    q: &QMatrix,
    a_input: &PatternSet,
    grid: &[f64],
    config: &FitConfig,
) -> Result<SolutionPath<T>> {
    let tuning = match config.algorithm {
        Algorithm::Pem { .. } => Tuning::Lambda,
        Algorithm::FpVem { .. } => Tuning::Upsilon,
        Algorithm::Em => {
            return Err(SlamError::InvalidParameter(
                "plain EM has no tuning parameter to trace".into(),
            ))
        }
    };
    if grid.is_empty() {
        return Err(SlamError::Empty("tuning grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(SlamError::InvalidParameter(
            "tuning grid must be strictly decreasing".into(),
        ));
    }
    let structure = CellStructure::new(config.model, q, a_input)?;
    let mut entries: Vec<PathEntry<T>> = Vec::with_capacity(grid.len());
    for (position, &value) in grid.iter().enumerate() {
        let cfg = FitConfig {
            algorithm: config.algorithm.with_tuning(value),
            ..config.clone()
        };
        let warm = entries.last().map(|e| e.fit.warm_start());
        let fit = fit_structure(r, &structure, &cfg, warm.as_ref()).map_err(|e| {
            SlamError::PathFit {
                position,
                source: Box::new(e),
            }
        })?;
        log::debug!(
            "path position {position} ({value}): support {}, EBIC {:.3}, {} iterations",
            fit.support_size(),
            fit.ebic,
            fit.iterations
        );
        entries.push(PathEntry { tuning: value, fit });
    }
    let chosen = choose(&entries);
    Ok(SolutionPath {
        tuning,
        entries,
        chosen,
    })
}

fn choose<T: Real>(entries: &[PathEntry<T>]) -> usize {
    let mut best = 0;
    for (i, e) in entries.iter().enumerate().skip(1) {
        let b = &entries[best].fit;
        let better = e.fit.ebic < b.ebic
            || (e.fit.ebic == b.ebic && e.fit.support_size() < b.support_size());
        if better {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids() {
        let l = lambda_grid();
        assert_eq!(l.len(), 20);
        assert_eq!(l[0], -0.2);
        assert_eq!(l[19], -4.0);
        assert!(l.windows(2).all(|w| w[1] < w[0]));
        let u = upsilon_grid();
        assert_eq!(u, vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3]);
    }
}
