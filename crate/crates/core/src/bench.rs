//! Replicated simulation scenarios scored against the planted patterns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{coverage, selection_metrics, summarize, Summary};
use crate::error::Result;
use crate::estimation::{
    em_fit, fpvem_fit, lambda_grid, solution_path, upsilon_grid, Algorithm, FitConfig, ModelKind,
    DEFAULT_BETA,
};
use crate::patterns::PatternSet;
use crate::pipeline::{candidates, PipelineConfig};
use crate::scalar::Real;
use crate::simulation::{replicate_seed, simulate, SimDesign, Signal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchAlgorithm {
    /// Penalised EM over the lambda grid, chosen by EBIC.
    Pem,
    /// FP-VEM over the upsilon grid, chosen by EBIC.
    FpVem,
    /// Plain EM with threshold selection.
    Em,
    /// FP-VEM at upsilon = 1 (plain variational EM).
    Vem,
}

impl BenchAlgorithm {
    pub fn name(&self) -> &'static str {
        match self {
            BenchAlgorithm::Pem => "pem",
            BenchAlgorithm::FpVem => "fpvem",
            BenchAlgorithm::Em => "em",
            BenchAlgorithm::Vem => "vem",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub design: SimDesign,
    pub algorithm: BenchAlgorithm,
    pub replicates: usize,
    /// Replicate seeds are derived from this and the replicate index.
    pub base_seed: u64,
    /// Screening settings used when K exceeds the screening threshold.
    pub pipeline: Option<PipelineConfig>,
}

impl Scenario {
    pub fn new(name: &str, design: SimDesign, algorithm: BenchAlgorithm, replicates: usize) -> Self {
        Self {
            name: name.to_string(),
            base_seed: design.seed,
            design,
            algorithm,
            replicates,
            pipeline: None,
        }
    }

    fn model(&self) -> ModelKind {
        match self.design.signal {
            Signal::TwoParam { .. } => ModelKind::TwoParam,
            Signal::AllEffect { .. } => ModelKind::AllEffect,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub tpr: f64,
    pub one_minus_fdr: f64,
    pub support_size: usize,
    /// Tuning value chosen by EBIC, for path-based algorithms.
    pub chosen_tuning: Option<f64>,
    /// Coverage of the truth by the candidate set (1 without screening).
    pub coverage: f64,
    pub candidates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub algorithm: BenchAlgorithm,
    pub outcomes: Vec<ReplicateOutcome>,
    pub tpr: Summary,
    pub one_minus_fdr: Summary,
    pub support: Summary,
}

impl ScenarioReport {
    /// Most frequent support size (smallest on ties).
    pub fn modal_support(&self) -> usize {
        let mut sizes: Vec<usize> = self.outcomes.iter().map(|o| o.support_size).collect();
        sizes.sort_unstable();
        let mut best = (0, 0);
        let mut i = 0;
        while i < sizes.len() {
            let run = sizes[i..].iter().take_while(|&&s| s == sizes[i]).count();
            if run > best.1 {
                best = (sizes[i], run);
            }
            i += run;
        }
        best.0
    }

    /// Lower median of the support sizes.
    pub fn median_support(&self) -> usize {
        let mut sizes: Vec<usize> = self.outcomes.iter().map(|o| o.support_size).collect();
        sizes.sort_unstable();
        sizes[(sizes.len() - 1) / 2]
    }
}

/// Simulates and scores one replicate.
pub fn run_replicate<T: Real>(scenario: &Scenario, replicate: usize) -> Result<ReplicateOutcome> {
    let seed = replicate_seed(scenario.base_seed, replicate);
    let design = SimDesign {
        seed,
        ..scenario.design.clone()
    };
    let sim = simulate(&design)?;
    let model = scenario.model();
    let pipeline = scenario.pipeline.clone().unwrap_or_else(|| {
        let mut p = PipelineConfig::pem(model);
        p.screen.seed = seed;
        p
    });
    let (cands, _) = candidates::<T>(&sim.responses, &sim.q, &pipeline)?;
    let (selected, chosen_tuning): (PatternSet, Option<f64>) = match scenario.algorithm {
        BenchAlgorithm::Pem => {
            let cfg = FitConfig::pem(model, -1.0);
            let path = solution_path::<T>(&sim.responses, &sim.q, &cands, &lambda_grid(), &cfg)?;
            (path.chosen_fit().selected.clone(), Some(path.chosen_tuning()))
        }
        BenchAlgorithm::FpVem => {
            let cfg = FitConfig::fpvem(model, 1.0);
            let path = solution_path::<T>(&sim.responses, &sim.q, &cands, &upsilon_grid(), &cfg)?;
            (path.chosen_fit().selected.clone(), Some(path.chosen_tuning()))
        }
        BenchAlgorithm::Em => {
            let fit = em_fit::<T>(&sim.responses, &sim.q, &cands, &FitConfig::em(model), None)?;
            (fit.selected, None)
        }
        BenchAlgorithm::Vem => {
            let cfg = FitConfig::new(
                model,
                Algorithm::FpVem {
                    upsilon: 1.0,
                    beta: DEFAULT_BETA,
                },
            );
            let fit = fpvem_fit::<T>(&sim.responses, &sim.q, &cands, &cfg, None)?;
            (fit.selected, None)
        }
    };
    let m = selection_metrics(&sim.a0, &selected)?;
    Ok(ReplicateOutcome {
        replicate,
        seed,
        tpr: m.tpr,
        one_minus_fdr: m.one_minus_fdr,
        support_size: m.support_size,
        chosen_tuning,
        coverage: coverage(&sim.a0, &cands)?,
        candidates: cands.len(),
    })
}

/// Runs every replicate (in parallel) and summarises them in replicate order.
pub fn run_scenario<T: Real>(scenario: &Scenario) -> Result<ScenarioReport> {
    let outcomes: Vec<ReplicateOutcome> = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| run_replicate::<T>(scenario, r))
        .collect::<Result<_>>()?;
    let pick = |f: fn(&ReplicateOutcome) -> f64| -> Vec<f64> { outcomes.iter().map(f).collect() };
    Ok(ScenarioReport {
        scenario: scenario.name.clone(),
        algorithm: scenario.algorithm,
        tpr: summarize(&pick(|o| o.tpr)),
        one_minus_fdr: summarize(&pick(|o| o.one_minus_fdr)),
        support: summarize(&pick(|o| o.support_size as f64)),
        outcomes,
    })
}

/// CSV table with one row per report.
pub fn reports_to_csv(reports: &[ScenarioReport]) -> String {
    let mut out = String::from("scenario,algo,mean_tpr,mean_one_minus_fdr,mean_support,replicates\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:.3},{}\n",
            r.scenario,
            r.algorithm.name(),
            r.tpr.mean,
            r.one_minus_fdr.mean,
            r.support.mean,
            r.outcomes.len()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_scenario_runs() {
        let design = SimDesign {
            n_patterns: 4,
            ..SimDesign::two_param(4, 300, 0.1, 10)
        };
        let sc = Scenario::new("k4", design, BenchAlgorithm::Pem, 3);
        let rep = run_scenario::<f64>(&sc).unwrap();
        assert_eq!(rep.outcomes.len(), 3);
        assert!(rep.tpr.mean > 0.9);
        assert_eq!(rep.modal_support(), 4);
        let again = run_scenario::<f64>(&sc).unwrap();
        assert_eq!(rep, again);
        let csv = reports_to_csv(&[rep]);
        assert!(csv.starts_with("scenario,algo"));
        assert!(csv.lines().nth(1).unwrap().starts_with("k4,pem,"));
    }
}
