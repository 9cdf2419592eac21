//! Screening (when the pattern space is large) followed by a tuned fit.

use serde::{Deserialize, Serialize};

use crate::analysis::{extract_hierarchy, HierarchyGraph};
use crate::error::{Result, SlamError};
use crate::estimation::{
    lambda_grid, solution_path, upsilon_grid, Algorithm, FitConfig, ModelKind, SolutionPath,
};
use crate::patterns::{PatternSet, QMatrix};
use crate::response::ResponseMatrix;
use crate::scalar::Real;
use crate::screening::{gibbs_screen, variational_screen, ScreenConfig, ScreenMethod, ScreenResult};

/// Largest K for which every pattern is a candidate without screening.
pub const DEFAULT_SCREEN_THRESHOLD: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Algorithm and remaining fit settings; the tuning value is replaced along the grid.
    pub fit: FitConfig,
    /// Tuning grid; `None` uses the default grid of the algorithm.
    pub grid: Option<Vec<f64>>,
    pub screen_threshold: usize,
    pub screen: ScreenConfig,
    pub screen_method: ScreenMethod,
}

impl PipelineConfig {
    pub fn new(fit: FitConfig) -> Self {
        Self {
            fit,
            grid: None,
            screen_threshold: DEFAULT_SCREEN_THRESHOLD,
            screen: ScreenConfig::default(),
            screen_method: ScreenMethod::Gibbs,
        }
    }

    pub fn pem(model: ModelKind) -> Self {
        Self::new(FitConfig::pem(model, lambda_grid()[0]))
    }

    pub fn fpvem(model: ModelKind) -> Self {
        Self::new(FitConfig::fpvem(model, upsilon_grid()[0]))
    }

    /// Grid in effect for the configured algorithm.
    pub fn resolved_grid(&self) -> Result<Vec<f64>> {
        if let Some(g) = &self.grid {
            return Ok(g.clone());
        }
        match self.fit.algorithm {
            Algorithm::Pem { .. } => Ok(lambda_grid()),
            Algorithm::FpVem { .. } => Ok(upsilon_grid()),
            Algorithm::Em => Err(SlamError::InvalidParameter(
                "the pipeline traces a tuning grid; plain EM has none".into(),
            )),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineResult<T> {
    pub screened: bool,
    pub candidates: PatternSet,
    pub screen: Option<ScreenResult<T>>,
    pub path: SolutionPath<T>,
    /// Hierarchy implied by the chosen selection (`None` when nothing was selected).
    pub hierarchy: Option<HierarchyGraph>,
}

/// Candidate patterns: all of `{0,1}^K` up to the threshold, screened otherwise.
pub fn candidates<T: Real>(
    r: &ResponseMatrix,
    q: &QMatrix,
    config: &PipelineConfig,
) -> Result<(PatternSet, Option<ScreenResult<T>>)> {
    if q.k() <= config.screen_threshold {
        return Ok((PatternSet::full(q.k())?, None));
    }
    let res = match config.screen_method {
        ScreenMethod::Gibbs => gibbs_screen::<T>(r, q, &config.screen)?,
        ScreenMethod::Variational => variational_screen::<T>(r, q, &config.screen)?,
    };
    log::info!(
        "screening kept {} candidate patterns after {} iterations",
        res.a_screen.len(),
        res.iterations
    );
    Ok((res.a_screen.clone(), Some(res)))
}

/// Runs screening if needed, the tuning path, EBIC choice and hierarchy extraction.
pub fn run_pipeline<T: Real>(
    r: &ResponseMatrix,
    q: &QMatrix,
    config: &PipelineConfig,
    candidate_override: Option<&PatternSet>,
) -> Result<PipelineResult<T>> {
    let grid = config.resolved_grid()?;
    let (candidates, screen) = match candidate_override {
        Some(a) => (a.clone(), None),
        None => candidates::<T>(r, q, config)?,
    };
    let path = solution_path::<T>(r, q, &candidates, &grid, &config.fit)?;
    let chosen = path.chosen_fit();
    let hierarchy = if chosen.selected.is_empty() {
        None
    } else {
        Some(extract_hierarchy(&chosen.selected)?)
    };
    Ok(PipelineResult {
        screened: screen.is_some(),
        candidates,
        screen,
        path,
        hierarchy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::{simulate, SimDesign};

    #[test]
    fn small_k_uses_full_space() {
        let sim = simulate(&SimDesign {
            n_patterns: 4,
            ..SimDesign::two_param(4, 300, 0.1, 2)
        })
        .unwrap();
        let cfg = PipelineConfig {
            grid: Some(vec![-0.5, -1.0, -2.0]),
            ..PipelineConfig::pem(ModelKind::TwoParam)
        };
        let res = run_pipeline::<f64>(&sim.responses, &sim.q, &cfg, None).unwrap();
        assert!(!res.screened);
        assert_eq!(res.candidates.len(), 16);
        assert_eq!(res.path.chosen_fit().selected, sim.a0);
        assert!(res.hierarchy.is_some());
    }

    #[test]
    fn large_k_screens_first() {
        let sim = simulate(&SimDesign::two_param(13, 150, 0.1, 3)).unwrap();
        let cfg = PipelineConfig {
            grid: Some(vec![-1.0, -2.0]),
            ..PipelineConfig::pem(ModelKind::TwoParam)
        };
        let res = run_pipeline::<f64>(&sim.responses, &sim.q, &cfg, None).unwrap();
        assert!(res.screened);
        assert!(res.candidates.len() <= 150);
        let em = PipelineConfig::new(FitConfig::em(ModelKind::TwoParam));
        assert!(em.resolved_grid().is_err());
    }
}
