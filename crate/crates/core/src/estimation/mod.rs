//! Penalised EM, fractional-power variational EM and plain EM for pattern selection.

mod criteria;
mod path;
mod steps;

pub use criteria::{digamma, ebic, log_binomial, penalized_objective, penalty, truncated_log};
pub use path::{lambda_grid, solution_path, upsilon_grid, PathEntry, SolutionPath, Tuning};
pub use steps::{e_step, m_step_all_effect, m_step_two_param, CellStructure, EStep, MStepEvents};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlamError};
use crate::identifiability::equivalence_classes;
use crate::patterns::{PatternSet, QMatrix};
use crate::response::{
    log_likelihood, simplex_tolerance, ComponentLogLik, ProportionVector, ResponseMatrix,
    ThetaMatrix, TwoParamItemParams,
};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    TwoParam,
    AllEffect,
}

/// Estimator and its tuning value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "kebab-case")]
pub enum Algorithm {
    /// Penalised EM with `lambda < 0`.
    Pem { lambda: f64 },
    /// Fractional-power variational EM with `0 < upsilon <= 1` and Dirichlet parameter `beta`.
    FpVem { upsilon: f64, beta: f64 },
    /// Unpenalised EM (no clamping of the proportion weights).
    Em,
}

impl Algorithm {
    /// Same algorithm with its tuning value replaced.
    pub fn with_tuning(self, value: f64) -> Self {
        match self {
            Algorithm::Pem { .. } => Algorithm::Pem { lambda: value },
            Algorithm::FpVem { beta, .. } => Algorithm::FpVem {
                upsilon: value,
                beta,
            },
            Algorithm::Em => Algorithm::Em,
        }
    }

    pub fn tuning(&self) -> Option<f64> {
        match *self {
            Algorithm::Pem { lambda } => Some(lambda),
            Algorithm::FpVem { upsilon, .. } => Some(upsilon),
            Algorithm::Em => None,
        }
    }
}

pub const DEFAULT_C: f64 = 0.01;
pub const DEFAULT_BETA: f64 = 0.01;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 1000;
pub const DEFAULT_GAMMA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub model: ModelKind,
    pub algorithm: Algorithm,
    /// Lower clamp for the penalised-EM weights.
    pub c: f64,
    /// Selection threshold; `None` means `1 / (2N)`.
    pub rho: Option<f64>,
    pub max_iter: usize,
    /// Convergence tolerance on the largest absolute change in proportions and item parameters.
    pub tol: f64,
    /// EBIC gamma.
    pub gamma: f64,
}

impl FitConfig {
    pub fn new(model: ModelKind, algorithm: Algorithm) -> Self {
        Self {
            model,
            algorithm,
            c: DEFAULT_C,
            rho: None,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            gamma: DEFAULT_GAMMA,
        }
    }

    pub fn pem(model: ModelKind, lambda: f64) -> Self {
        Self::new(model, Algorithm::Pem { lambda })
    }

    pub fn fpvem(model: ModelKind, upsilon: f64) -> Self {
        Self::new(
            model,
            Algorithm::FpVem {
                upsilon,
                beta: DEFAULT_BETA,
            },
        )
    }

    pub fn em(model: ModelKind) -> Self {
        Self::new(model, Algorithm::Em)
    }

    /// Threshold in effect for `n` subjects.
    pub fn rho_for(&self, n: usize) -> f64 {
        self.rho.unwrap_or(1.0 / (2.0 * n as f64))
    }

    pub fn validate(&self, n: usize, l_input: usize) -> Result<()> {
        match self.algorithm {
            Algorithm::Pem { lambda } => {
                if !(lambda < 0.0) {
                    return Err(SlamError::InvalidParameter(format!(
                        "penalised EM needs lambda < 0, got {lambda}"
                    )));
                }
                if !(self.c > 0.0 && self.c <= 0.1) {
                    return Err(SlamError::InvalidParameter(format!(
                        "clamp constant c must lie in (0, 0.1], got {}",
                        self.c
                    )));
                }
            }
            Algorithm::FpVem { upsilon, beta } => {
                if !(upsilon > 0.0 && upsilon <= 1.0) {
                    return Err(SlamError::InvalidParameter(format!(
                        "upsilon must lie in (0, 1], got {upsilon}"
                    )));
                }
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(SlamError::InvalidParameter(format!(
                        "beta must lie in (0, 1), got {beta}"
                    )));
                }
            }
            Algorithm::Em => {}
        }
        let rho = self.rho_for(n);
        if !(rho > 0.0 && rho < 1.0) {
            return Err(SlamError::InvalidParameter(format!(
                "selection threshold rho must lie in (0, 1), got {rho}"
            )));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(SlamError::InvalidParameter(
                "tol must be positive and max_iter at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(SlamError::InvalidParameter(format!(
                "EBIC gamma must lie in [0, 1], got {}",
                self.gamma
            )));
        }
        if rho * l_input as f64 > 1.0 {
            log::warn!(
                "rho = {rho} exceeds the uniform mass 1/{l_input}; selection may be aggressive"
            );
        }
        Ok(())
    }
}

/// Starting point for a fit, typically the previous fit on a path.
#[derive(Clone, Debug, PartialEq)]
pub struct WarmStart<T> {
    /// Proportion weights: any positive scale for PEM/EM, absolute Dirichlet parameters for FP-VEM.
    pub weights: Vec<T>,
    pub cells: Vec<Vec<T>>,
}

/// Per-iteration diagnostics, evaluated at the parameters entering the iteration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord<T> {
    /// Log-likelihood (NaN for FP-VEM, whose E-step does not produce it).
    pub loglik: T,
    /// Penalised objective (equal to `loglik` for EM, NaN for FP-VEM).
    pub objective: T,
    /// Weights clamped at `c` by this iteration's update.
    pub weights_clamped: usize,
    /// Whether any proportion moved across the threshold in this update.
    pub crossed_rho: bool,
    /// Whether any proportion entering the iteration was at or below the threshold.
    pub below_rho: bool,
    pub max_change: T,
}

#[derive(Clone, Debug)]
pub struct FitResult<T> {
    pub model: ModelKind,
    pub algorithm: Algorithm,
    pub rho: f64,
    /// Candidate patterns (columns of `theta_hat`).
    pub patterns: PatternSet,
    /// Final proportion weights (`Delta`).
    pub weights: Vec<T>,
    pub p_hat: ProportionVector<T>,
    /// Item parameters per cell (see [`CellStructure`]).
    pub cells: Vec<Vec<T>>,
    pub theta_hat: ThetaMatrix<T>,
    pub selected: PatternSet,
    /// Column positions of `selected` within `patterns`.
    pub selected_index: Vec<usize>,
    /// Log-likelihood at the estimates over all candidates.
    pub loglik: T,
    /// Log-likelihood with proportions restricted to the selected patterns and renormalised.
    pub selected_loglik: T,
    pub objective: T,
    pub ebic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub clamp_events: usize,
    pub fallback_events: usize,
    pub trace: Vec<IterationRecord<T>>,
}

impl<T: Real> FitResult<T> {
    /// Two-parameter estimates, or `None` for the all-effect model.
    pub fn two_param(&self) -> Option<TwoParamItemParams<T>> {
        (self.model == ModelKind::TwoParam).then(|| {
            TwoParamItemParams::unchecked(
                self.cells.iter().map(|c| c[1]).collect(),
                self.cells.iter().map(|c| c[0]).collect(),
            )
        })
    }

    /// Estimated proportion of each selected pattern, in `selected` order.
    pub fn selected_proportions(&self) -> Vec<T> {
        self.selected_index.iter().map(|&l| self.p_hat.get(l)).collect()
    }

    pub fn support_size(&self) -> usize {
        self.selected.len()
    }

    pub fn warm_start(&self) -> WarmStart<T> {
        WarmStart {
            weights: self.weights.clone(),
            cells: self.cells.clone(),
        }
    }
}

/// Fits the configured algorithm on candidate set `a_input`.
pub fn fit<T: Real>(
    r: &ResponseMatrix,
    q: &QMatrix,
    a_input: &PatternSet,
    config: &FitConfig,
    init: Option<&WarmStart<T>>,
) -> Result<FitResult<T>> {
    let structure = CellStructure::new(config.model, q, a_input)?;
    fit_structure(r, &structure, config, init)
}

/// Penalised EM; `config.algorithm` must be [`Algorithm::Pem`].
pub fn pem_fit<T: Real>(
    r: &ResponseMatrix,
    q: &QMatrix,
    a_input: &PatternSet,
    config: &FitConfig,
    init: Option<&WarmStart<T>>,
) -> Result<FitResult<T>> {
    require(config, |a| matches!(a, Algorithm::Pem { .. }), "penalised EM")?;
    fit(r, q, a_input, config, init)
}

/// Fractional-power variational EM; `config.algorithm` must be [`Algorithm::FpVem`].
pub fn fpvem_fit<T: Real>(
    r: &ResponseMatrix,
    q: &QMatrix,
    a_input: &PatternSet,
    config: &FitConfig,
    init: Option<&WarmStart<T>>,
) -> Result<FitResult<T>> {
    require(config, |a| matches!(a, Algorithm::FpVem { .. }), "FP-VEM")?;
    fit(r, q, a_input, config, init)
}

/// Plain EM with the same selection threshold.
pub fn em_fit<T: Real>(
    r: &ResponseMatrix,
    q: &QMatrix,
    a_input: &PatternSet,
    config: &FitConfig,
    init: Option<&WarmStart<T>>,
) -> Result<FitResult<T>> {
    require(config, |a| matches!(a, Algorithm::Em), "plain EM")?;
    fit(r, q, a_input, config, init)
}

/// Penalised EM over the equivalence-class representatives of `q` (two-parameter model).
pub fn pem_fit_equiv<T: Real>(
    r: &ResponseMatrix,
    q: &QMatrix,
    config: &FitConfig,
) -> Result<FitResult<T>> {
    if config.model != ModelKind::TwoParam {
        return Err(SlamError::InvalidParameter(
            "equivalence-class fitting uses the two-parameter model".into(),
        ));
    }
    let classes = equivalence_classes(q)?;
    pem_fit(r, q, classes.representatives(), config, None)
}

fn require(config: &FitConfig, ok: impl Fn(&Algorithm) -> bool, name: &str) -> Result<()> {
    if ok(&config.algorithm) {
        Ok(())
    } else {
        Err(SlamError::InvalidParameter(format!(
            "configuration does not describe {name}: {:?}",
            config.algorithm
        )))
    }
}

pub(crate) fn fit_structure<T: Real>(
    r: &ResponseMatrix,
    structure: &CellStructure,
    config: &FitConfig,
    init: Option<&WarmStart<T>>,
) -> Result<FitResult<T>> {
    let (n, l) = (r.n(), structure.l());
    if n == 0 {
        return Err(SlamError::Empty("response matrix has no subjects".into()));
    }
    if l == 0 {
        return Err(SlamError::Empty("candidate pattern set".into()));
    }
    if r.j() != structure.j() {
        return Err(SlamError::DimensionMismatch(format!(
            "responses have {} items, Q has {}",
            r.j(),
            structure.j()
        )));
    }
    config.validate(n, l)?;
    let rho = T::lit(config.rho_for(n));
    let tol = T::lit(config.tol);

    let (mut weights, mut cells) = match init {
        Some(w) => {
            if w.weights.len() != l {
                return Err(SlamError::DimensionMismatch(format!(
                    "warm start has {} weights for {l} patterns",
                    w.weights.len()
                )));
            }
            structure.check_cells(&w.cells)?;
            (w.weights.clone(), w.cells.clone())
        }
        None => {
            let start = match config.algorithm {
                Algorithm::FpVem { beta, .. } => T::lit(beta),
                Algorithm::Pem { .. } => {
                    (T::from_count(n) / T::from_count(l)).max(T::lit(config.c))
                }
                Algorithm::Em => T::from_count(n) / T::from_count(l),
            };
            (vec![start; l], structure.initial_cells())
        }
    };
    if weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite())
        || !(weights.iter().copied().sum::<T>() > T::zero())
    {
        return Err(SlamError::InvalidParameter(
            "initial weights must be nonnegative with a positive total".into(),
        ));
    }

    let rf = r.to_float::<T>();
    let mut p = normalise(&weights);
    let mut trace = Vec::new();
    let mut events = MStepEvents::default();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..config.max_iter {
        iterations = iter + 1;
        let kernel = ComponentLogLik::from_data(&structure.theta_data(&cells))?;
        let (scale, offset) = match config.algorithm {
            Algorithm::FpVem { upsilon, .. } => (
                T::lit(upsilon),
                weights
                    .iter()
                    .map(|&d| digamma(d.as_f64()).map(T::lit))
                    .collect::<Result<Vec<T>>>()?,
            ),
            _ => (T::one(), p.iter().map(|&v| v.ln()).collect()),
        };
        let stats = steps::sweep(&kernel, &rf, scale, &offset)
            .map_err(|_| SlamError::NonFiniteObjective { iteration: iter })?;

        let (loglik, objective) = match config.algorithm {
            Algorithm::Pem { lambda } => {
                (stats.lse, stats.lse + penalty(&p, T::lit(lambda), rho))
            }
            Algorithm::Em => (stats.lse, stats.lse),
            Algorithm::FpVem { .. } => (T::nan(), T::nan()),
        };
        if matches!(config.algorithm, Algorithm::Pem { .. } | Algorithm::Em)
            && !objective.is_finite()
        {
            return Err(SlamError::NonFiniteObjective { iteration: iter });
        }

        let mut clamped = 0;
        let new_weights: Vec<T> = match config.algorithm {
            Algorithm::Pem { lambda } => stats
                .n
                .iter()
                .map(|&nl| {
                    let (d, was_clamped) = pem_weight(T::lit(lambda), nl, T::lit(config.c));
                    clamped += was_clamped as usize;
                    d
                })
                .collect(),
            Algorithm::FpVem { upsilon, beta } => stats
                .n
                .iter()
                .map(|&nl| fpvem_weight(T::lit(beta), T::lit(upsilon), nl))
                .collect(),
            Algorithm::Em => stats.n.to_vec(),
        };
        let new_p = normalise(&new_weights);
        let (new_cells, ev) = steps::cells_from_stats(structure, &stats.n, &stats.s, &cells);
        events += ev;

        let mut change = T::zero();
        for (a, b) in p.iter().zip(&new_p) {
            change = change.max((*a - *b).abs());
        }
        for (ca, cb) in cells.iter().zip(&new_cells) {
            for (a, b) in ca.iter().zip(cb) {
                change = change.max((*a - *b).abs());
            }
        }
        trace.push(IterationRecord {
            loglik,
            objective,
            weights_clamped: clamped,
            crossed_rho: p.iter().zip(&new_p).any(|(a, b)| (*a > rho) != (*b > rho)),
            below_rho: p.iter().any(|v| *v <= rho),
            max_change: change,
        });
        weights = new_weights;
        p = new_p;
        cells = new_cells;
        if change < tol {
            converged = true;
            break;
        }
    }

    finish(r, structure, config, weights, p, cells, iterations, converged, events, trace)
}

/// Penalised-EM weight `max(c, lambda + n_l)` and whether the clamp was hit.
#[inline]
pub fn pem_weight<T: Real>(lambda: T, expected_count: T, c: T) -> (T, bool) {
    let d = lambda + expected_count;
    if d < c {
        (c, true)
    } else {
        (d, false)
    }
}

/// FP-VEM Dirichlet parameter `beta + upsilon * n_l`.
#[inline]
pub fn fpvem_weight<T: Real>(beta: T, upsilon: T, expected_count: T) -> T {
    beta + upsilon * expected_count
}

fn normalise<T: Real>(w: &[T]) -> Vec<T> {
    let total: T = w.iter().copied().sum();
    w.iter().map(|&v| v / total).collect()
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Real>(
    r: &ResponseMatrix,
    structure: &CellStructure,
    config: &FitConfig,
    weights: Vec<T>,
    p: Vec<T>,
    cells: Vec<Vec<T>>,
    iterations: usize,
    converged: bool,
    events: MStepEvents,
    trace: Vec<IterationRecord<T>>,
) -> Result<FitResult<T>> {
    let n = r.n();
    let rho_f = config.rho_for(n);
    let rho = T::lit(rho_f);
    let theta_hat = structure.theta(&cells)?;
    let p_hat = proportion_vector(p)?;
    let loglik = log_likelihood(&theta_hat, &p_hat, r)?;
    if !loglik.is_finite() {
        return Err(SlamError::NonFiniteObjective {
            iteration: iterations,
        });
    }
    let objective = match config.algorithm {
        Algorithm::Pem { lambda } => loglik + penalty(p_hat.values(), T::lit(lambda), rho),
        _ => loglik,
    };
    let selected_index: Vec<usize> = (0..p_hat.len()).filter(|&l| p_hat.get(l) > rho).collect();
    let patterns = structure.patterns().clone();
    let selected = PatternSet::new(
        patterns.k(),
        selected_index.iter().map(|&l| patterns.get(l)).collect(),
    )?;
    let selected_loglik = restricted_loglik(&theta_hat, &p_hat, &selected_index, r)?;
    let ebic = if selected_index.is_empty() {
        f64::INFINITY
    } else {
        criteria::ebic(
            selected_loglik.as_f64(),
            selected_index.len(),
            n,
            patterns.len(),
            config.gamma,
        )?
    };
    Ok(FitResult {
        model: structure.kind(),
        algorithm: config.algorithm,
        rho: rho_f,
        patterns,
        weights,
        p_hat,
        cells,
        theta_hat,
        selected,
        selected_index,
        loglik,
        selected_loglik,
        objective,
        ebic,
        iterations,
        converged,
        clamp_events: events.clamped,
        fallback_events: events.fallbacks,
        trace,
    })
}

/// Renormalises accumulated rounding so the simplex check passes.
fn proportion_vector<T: Real>(p: Vec<T>) -> Result<ProportionVector<T>> {
    let total: T = p.iter().copied().sum();
    if (total - T::one()).abs() > simplex_tolerance::<T>() {
        return ProportionVector::from_weights(&p);
    }
    ProportionVector::new(p)
}

/// Log-likelihood of the sub-model on `index` with renormalised proportions.
fn restricted_loglik<T: Real>(
    theta: &ThetaMatrix<T>,
    p: &ProportionVector<T>,
    index: &[usize],
    r: &ResponseMatrix,
) -> Result<T> {
    if index.is_empty() {
        return Ok(T::neg_infinity());
    }
    let sub = theta.permute_columns(index)?;
    let weights: Vec<T> = index.iter().map(|&l| p.get(l)).collect();
    log_likelihood(&sub, &ProportionVector::from_weights(&weights)?, r)
}
