//! Candidate-pattern screening for large attribute counts.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlamError};
use crate::patterns::{AttributePattern, PatternSet, QMatrix};
use crate::response::{ResponseMatrix, TwoParamItemParams, THETA_FLOOR};
use crate::scalar::{logistic, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenConfig {
    /// Inner sweeps per outer iteration.
    pub m_max: usize,
    /// Trailing sweeps averaged into the outer update.
    pub m_eff: usize,
    pub max_outer: usize,
    /// Stop once the largest change in the averaged attribute matrix is below this.
    pub tol: f64,
    /// Snapshot the binarised patterns every this many outer iterations.
    pub enhance_period: Option<usize>,
    /// Smallest accepted `theta_plus - theta_minus` after an update.
    pub delta_gap: f64,
    pub seed: u64,
}

impl Default for ScreenConfig {
    fn default() -> Self {
        Self {
            m_max: 20,
            m_eff: 10,
            max_outer: 100,
            tol: 1e-3,
            enhance_period: None,
            delta_gap: 0.0,
            seed: 0,
        }
    }
}

impl ScreenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_eff == 0 || self.m_eff > self.m_max {
            return Err(SlamError::InvalidParameter(format!(
                "need 1 <= m_eff <= m_max, got m_eff = {}, m_max = {}",
                self.m_eff, self.m_max
            )));
        }
        if self.max_outer == 0 || !(self.tol > 0.0) {
            return Err(SlamError::InvalidParameter(
                "max_outer must be positive and tol > 0".into(),
            ));
        }
        if self.enhance_period == Some(0) {
            return Err(SlamError::InvalidParameter(
                "enhance_period must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.delta_gap) {
            return Err(SlamError::InvalidParameter(format!(
                "delta_gap must lie in [0, 1), got {}",
                self.delta_gap
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ScreenResult<T> {
    pub a_screen: PatternSet,
    /// N x K running average of the attribute draws (or probabilities).
    pub a_ave: Array2<T>,
    pub theta: TwoParamItemParams<T>,
    pub snapshots_used: usize,
    /// Item updates rejected for breaking `theta_plus - theta_minus >= delta_gap`.
    pub gap_violations: usize,
    /// Item updates with an empty denominator that kept the previous value.
    pub fallback_events: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// `P(A_ik = 1 | R_i, A_i,-k, theta)` under the two-parameter model.
pub fn gibbs_conditional_prob<T: Real>(
    r_i: &[u8],
    q: &QMatrix,
    theta: &TwoParamItemParams<T>,
    a_i: &AttributePattern,
    k: usize,
) -> Result<T> {
    if r_i.len() != q.j() || theta.j() != q.j() || a_i.k() != q.k() {
        return Err(SlamError::DimensionMismatch(format!(
            "responses {}, Q {} x {}, theta {}, pattern over {} attributes",
            r_i.len(),
            q.j(),
            q.k(),
            theta.j(),
            a_i.k()
        )));
    }
    if k >= q.k() {
        return Err(SlamError::IndexOutOfRange {
            what: "attribute",
            index: k,
            len: q.k(),
        });
    }
    let ratios = LogRatios::new(theta)?;
    let mut s = T::zero();
    for j in 0..q.j() {
        if !q.entry(j, k) {
            continue;
        }
        if q.required(j).iter().all(|&m| m == k || a_i.get(m)) {
            s = s + ratios.weight(j, r_i[j]);
        }
    }
    Ok(logistic(s))
}

/// Per-item `log(theta+/theta-)` and `log((1-theta+)/(1-theta-))`.
struct LogRatios<T> {
    yes: Vec<T>,
    no: Vec<T>,
}

impl<T: Real> LogRatios<T> {
    fn new(theta: &TwoParamItemParams<T>) -> Result<Self> {
        for (j, (&p, &m)) in theta.theta_plus.iter().zip(&theta.theta_minus).enumerate() {
            for v in [p, m] {
                if !(v > T::zero() && v < T::one()) {
                    return Err(SlamError::ProbabilityOutOfRange {
                        item: j,
                        value: v.as_f64(),
                    });
                }
            }
            if !(p > m) {
                return Err(SlamError::InvalidParameter(format!(
                    "item {j}: theta_plus {p} must exceed theta_minus {m}"
                )));
            }
        }
        Ok(Self {
            yes: theta
                .theta_plus
                .iter()
                .zip(&theta.theta_minus)
                .map(|(&p, &m)| (p / m).ln())
                .collect(),
            no: theta
                .theta_plus
                .iter()
                .zip(&theta.theta_minus)
                .map(|(&p, &m)| ((T::one() - p) / (T::one() - m)).ln())
                .collect(),
        })
    }

    #[inline]
    fn weight(&self, j: usize, r: u8) -> T {
        if r == 1 {
            self.yes[j]
        } else {
            self.no[j]
        }
    }
}

/// Q in adjacency form.
struct Design {
    k: usize,
    required: Vec<Vec<usize>>,
    items_of: Vec<Vec<usize>>,
}

impl Design {
    fn new(q: &QMatrix) -> Self {
        let required: Vec<Vec<usize>> = (0..q.j()).map(|j| q.required(j)).collect();
        let mut items_of = vec![Vec::new(); q.k()];
        for (j, req) in required.iter().enumerate() {
            for &k in req {
                items_of[k].push(j);
            }
        }
        Self {
            k: q.k(),
            required,
            items_of,
        }
    }
}

/// Per-subject sampler state.
struct Subject<T> {
    rng: ChaCha8Rng,
    /// Current attribute draws or probabilities.
    a: Vec<T>,
    /// Number of required attributes absent, per item (sampling mode only).
    missing: Vec<usize>,
    a_sum: Vec<T>,
    i_sum: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScreenMethod {
    /// Sampled attributes.
    Gibbs,
    /// Attribute probabilities updated in place, no sampling.
    Variational,
}


impl<T: Real> Subject<T> {
    fn new(seed: u64, i: usize, d: &Design, method: ScreenMethod) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let a: Vec<T> = match method {
            ScreenMethod::Gibbs => (0..d.k)
                .map(|_| if rng.gen::<bool>() { T::one() } else { T::zero() })
                .collect(),
            ScreenMethod::Variational => vec![T::lit(0.5); d.k],
        };
        let missing = d
            .required
            .iter()
            .map(|req| req.iter().filter(|&&m| a[m] == T::zero()).count())
            .collect();
        Self {
            rng,
            a,
            missing,
            a_sum: vec![T::zero(); d.k],
            i_sum: vec![T::zero(); d.required.len()],
        }
    }

    fn sweep(&mut self, r: &[u8], d: &Design, ratios: &LogRatios<T>, method: ScreenMethod) {
        for k in 0..d.k {
            let mut s = T::zero();
            match method {
                ScreenMethod::Gibbs => {
                    let own_missing = (self.a[k] == T::zero()) as usize;
                    for &j in &d.items_of[k] {
                        if self.missing[j] == own_missing {
                            s = s + ratios.weight(j, r[j]);
                        }
                    }
                    let p = logistic(s);
                    let draw = self.rng.gen::<f64>() < p.as_f64();
                    let was = self.a[k] == T::one();
                    if draw != was {
                        for &j in &d.items_of[k] {
                            if draw {
                                self.missing[j] -= 1;
                            } else {
                                self.missing[j] += 1;
                            }
                        }
                        self.a[k] = if draw { T::one() } else { T::zero() };
                    }
                }
                ScreenMethod::Variational => {
                    for &j in &d.items_of[k] {
                        let others: T = d.required[j]
                            .iter()
                            .filter(|&&m| m != k)
                            .fold(T::one(), |acc, &m| acc * self.a[m]);
                        s = s + others * ratios.weight(j, r[j]);
                    }
                    self.a[k] = logistic(s);
                }
            }
        }
    }

    fn accumulate(&mut self, d: &Design, method: ScreenMethod) {
        for (acc, &v) in self.a_sum.iter_mut().zip(&self.a) {
            *acc = *acc + v;
        }
        for (j, acc) in self.i_sum.iter_mut().enumerate() {
            let ideal = match method {
                ScreenMethod::Gibbs => {
                    if self.missing[j] == 0 {
                        T::one()
                    } else {
                        T::zero()
                    }
                }
                ScreenMethod::Variational => d.required[j].iter().fold(T::one(), |acc, &m| acc * self.a[m]),
            };
            *acc = *acc + ideal;
        }
    }
}

/// Stochastic-approximation Gibbs screening.
pub fn gibbs_screen<T: Real>(
    r: &ResponseMatrix,
    q: &QMatrix,
    config: &ScreenConfig,
) -> Result<ScreenResult<T>> {
    let theta = TwoParamItemParams::uniform(q.j(), T::lit(0.8), T::lit(0.2))?;
    screen_with(r, q, config, ScreenMethod::Gibbs, theta, true)
}

/// Mean-field variant: attribute probabilities are updated in place instead of sampled.
pub fn variational_screen<T: Real>(
    r: &ResponseMatrix,
    q: &QMatrix,
    config: &ScreenConfig,
) -> Result<ScreenResult<T>> {
    let theta = TwoParamItemParams::uniform(q.j(), T::lit(0.8), T::lit(0.2))?;
    screen_with(r, q, config, ScreenMethod::Variational, theta, true)
}

/// Screening from given item parameters, optionally held fixed throughout.
pub fn screen_with<T: Real>(
    r: &ResponseMatrix,
    q: &QMatrix,
    config: &ScreenConfig,
    method: ScreenMethod,
    initial_theta: TwoParamItemParams<T>,
    update_theta: bool,
) -> Result<ScreenResult<T>> {
    config.validate()?;
    if initial_theta.j() != q.j() {
        return Err(SlamError::DimensionMismatch(format!(
            "{} item parameters for {} items",
            initial_theta.j(),
            q.j()
        )));
    }
    if r.j() != q.j() {
        return Err(SlamError::DimensionMismatch(format!(
            "responses have {} items, Q has {}",
            r.j(),
            q.j()
        )));
    }
    let (n, j, k) = (r.n(), q.j(), q.k());
    if n == 0 {
        return Err(SlamError::Empty("response matrix has no subjects".into()));
    }
    let design = Design::new(q);
    let mut subjects: Vec<Subject<T>> = (0..n)
        .map(|i| Subject::new(config.seed, i, &design, method))
        .collect();
    let mut theta = initial_theta;
    let mut a_ave = Array2::<T>::zeros((n, k));
    let mut i_ave = Array2::<T>::zeros((n, j));
    let mut snapshots: Vec<PatternSet> = Vec::new();
    let (mut gap_violations, mut fallback_events) = (0, 0);
    let mut converged = false;
    let mut iterations = 0;
    let m_eff = T::from_count(config.m_eff);

    for t in 1..=config.max_outer {
        iterations = t;
        let ratios = LogRatios::new(&theta)?;
        subjects.par_iter_mut().enumerate().for_each(|(i, s)| {
            s.a_sum.iter_mut().for_each(|v| *v = T::zero());
            s.i_sum.iter_mut().for_each(|v| *v = T::zero());
            for sweep in 1..=config.m_max {
                s.sweep(r.row(i), &design, &ratios, method);
                if sweep > config.m_max - config.m_eff {
                    s.accumulate(&design, method);
                }
            }
        });

        let w = T::one() / T::from_count(t);
        let mut change = T::zero();
        for (i, s) in subjects.iter().enumerate() {
            for kk in 0..k {
                let old = a_ave[[i, kk]];
                let new = w * s.a_sum[kk] / m_eff + (T::one() - w) * old;
                change = change.max((new - old).abs());
                a_ave[[i, kk]] = new;
            }
            for jj in 0..j {
                i_ave[[i, jj]] = w * s.i_sum[jj] / m_eff + (T::one() - w) * i_ave[[i, jj]];
            }
        }

        for jj in (0..j).filter(|_| update_theta) {
            let (mut cap, mut cap_r, mut inc, mut inc_r) = (T::zero(), T::zero(), T::zero(), T::zero());
            for i in 0..n {
                let ideal = i_ave[[i, jj]];
                let resp = T::from_count(r.get(i, jj) as usize);
                cap = cap + ideal;
                cap_r = cap_r + ideal * resp;
                inc = inc + (T::one() - ideal);
                inc_r = inc_r + (T::one() - ideal) * resp;
            }
            let floor = T::lit(THETA_FLOOR);
            let clamp = |v: T| v.max(floor).min(T::one() - floor);
            let (mut plus, mut minus) = (theta.theta_plus[jj], theta.theta_minus[jj]);
            if cap > T::zero() {
                plus = clamp(cap_r / cap);
            } else {
                fallback_events += 1;
            }
            if inc > T::zero() {
                minus = clamp(inc_r / inc);
            } else {
                fallback_events += 1;
            }
            if plus - minus < T::lit(config.delta_gap) || !(plus > minus) {
                gap_violations += 1;
            } else {
                theta.theta_plus[jj] = plus;
                theta.theta_minus[jj] = minus;
            }
        }

        if let Some(period) = config.enhance_period {
            if t % period == 0 {
                snapshots.push(binarize(&a_ave)?);
            }
        }
        log::debug!("screening iteration {t}: max change {change}");
        if t > 1 && change < T::lit(config.tol) {
            converged = true;
            break;
        }
    }

    let last = binarize(&a_ave)?;
    let snapshots_used = snapshots.len();
    let a_screen = enhance_union(&snapshots, &last)?;
    Ok(ScreenResult {
        a_screen,
        a_ave,
        theta,
        snapshots_used,
        gap_violations,
        fallback_events,
        iterations,
        converged,
    })
}

/// Unique rows of `a_ave > 1/2`, in canonical order.
pub fn binarize<T: Real>(a_ave: &Array2<T>) -> Result<PatternSet> {
    let k = a_ave.ncols();
    let half = T::lit(0.5);
    let mut members: Vec<AttributePattern> = a_ave
        .rows()
        .into_iter()
        .map(|row| {
            let entries: Vec<u8> = row.iter().map(|&v| (v > half) as u8).collect();
            AttributePattern::from_entries(&entries)
        })
        .collect::<Result<_>>()?;
    members.sort();
    members.dedup();
    PatternSet::from_unsorted(k, members)
}

/// Union of the final candidate set with every snapshot, in canonical order.
pub fn enhance_union(snapshots: &[PatternSet], last: &PatternSet) -> Result<PatternSet> {
    let mut out = last.canonical();
    for s in snapshots {
        out = out.union(s)?;
    }
    Ok(out.canonical())
}
