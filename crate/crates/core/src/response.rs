//! Item response models, the marginal likelihood and the T-matrix utility.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, SlamError};
use crate::patterns::{AttributePattern, GammaMatrix, PatternSet, QMatrix};
use crate::scalar::Real;

/// Lower clamp applied to item probabilities during estimation.
pub const THETA_FLOOR: f64 = 1e-6;

/// Largest number of items for which a T-matrix is materialised.
pub const T_MATRIX_MAX_ITEMS: usize = 20;

/// Subjects per block in blocked likelihood evaluations. Fixed so that
/// reductions happen in the same order regardless of thread count.
pub(crate) const SUBJECT_BLOCK: usize = 128;

/// N x J binary response matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResponseMatrix {
    n: usize,
    j: usize,
    data: Vec<u8>,
}

impl ResponseMatrix {
    pub fn new(n: usize, j: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != n * j {
            return Err(SlamError::DimensionMismatch(format!(
                "{} response entries for a {n} x {j} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|&x| x > 1) {
            return Err(SlamError::InvalidParameter(format!(
                "response entry {} at subject {}, item {} is not binary",
                data[pos],
                pos / j,
                pos % j
            )));
        }
        Ok(Self { n, j, data })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let j = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * j);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != j {
                return Err(SlamError::DimensionMismatch(format!(
                    "response row {i} has {} entries, expected {j}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), j, data)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn j(&self) -> usize {
        self.j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.j + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.j..(i + 1) * self.j]
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// Dense floating copy for matrix products.
    pub fn to_float<T: Real>(&self) -> Array2<T> {
        Array2::from_shape_fn((self.n, self.j), |(i, j)| {
            if self.get(i, j) == 1 {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    /// Column means (empirical positive response rates).
    pub fn item_means(&self) -> Vec<f64> {
        (0..self.j)
            .map(|j| (0..self.n).map(|i| self.get(i, j) as f64).sum::<f64>() / self.n as f64)
            .collect()
    }
}

/// Two-parameter item parameters `theta_plus` (capable) and `theta_minus` (guessing).
#[derive(Clone, Debug, PartialEq)]
pub struct TwoParamItemParams<T> {
    pub theta_plus: Vec<T>,
    pub theta_minus: Vec<T>,
}

impl<T: Real> TwoParamItemParams<T> {
    /// Validates `0 < theta_minus < theta_plus < 1` per item.
    pub fn new(theta_plus: Vec<T>, theta_minus: Vec<T>) -> Result<Self> {
        if theta_plus.len() != theta_minus.len() {
            return Err(SlamError::DimensionMismatch(format!(
                "{} theta_plus values, {} theta_minus values",
                theta_plus.len(),
                theta_minus.len()
            )));
        }
        for (j, (&hi, &lo)) in theta_plus.iter().zip(&theta_minus).enumerate() {
            if !(lo > T::zero() && lo < hi && hi < T::one()) {
                return Err(SlamError::InvalidParameter(format!(
                    "item {j}: need 0 < theta_minus ({lo}) < theta_plus ({hi}) < 1"
                )));
            }
        }
        Ok(Self {
            theta_plus,
            theta_minus,
        })
    }

    /// Same value for every item.
    pub fn uniform(j: usize, theta_plus: T, theta_minus: T) -> Result<Self> {
        Self::new(vec![theta_plus; j], vec![theta_minus; j])
    }

    /// No monotonicity check; for estimates and simulation truth.
    pub fn unchecked(theta_plus: Vec<T>, theta_minus: Vec<T>) -> Self {
        Self {
            theta_plus,
            theta_minus,
        }
    }

    #[inline]
    pub fn j(&self) -> usize {
        self.theta_plus.len()
    }
}

/// Index of the sub-profile of `alpha` restricted to `required` (bit `t` = `alpha_{required[t]}`).
#[inline]
pub fn subprofile_index(alpha: &AttributePattern, required: &[usize]) -> usize {
    required
        .iter()
        .enumerate()
        .fold(0usize, |acc, (t, &k)| acc | ((alpha.get(k) as usize) << t))
}

/// Identity-link all-effect coefficients `beta_{j,S}` for `S` ranging over subsets of `K_j`.
///
/// `coefficients[j][s]` belongs to the subset encoded by the bits of `s`
/// relative to `required[j]` (see [`subprofile_index`]).
#[derive(Clone, Debug, PartialEq)]
pub struct AllEffectItemParams<T> {
    required: Vec<Vec<usize>>,
    coefficients: Vec<Vec<T>>,
}

impl<T: Real> AllEffectItemParams<T> {
    /// Validates coefficient counts against `q`, implied probabilities in (0,1),
    /// and that the full-mastery cell strictly exceeds every other cell.
    pub fn new(q: &QMatrix, coefficients: Vec<Vec<T>>) -> Result<Self> {
        if coefficients.len() != q.j() {
            return Err(SlamError::DimensionMismatch(format!(
                "{} coefficient vectors for {} items",
                coefficients.len(),
                q.j()
            )));
        }
        let required: Vec<Vec<usize>> = (0..q.j()).map(|j| q.required(j)).collect();
        for (j, (req, beta)) in required.iter().zip(&coefficients).enumerate() {
            if beta.len() != 1usize << req.len() {
                return Err(SlamError::DimensionMismatch(format!(
                    "item {j} requires {} attributes, expects {} coefficients, got {}",
                    req.len(),
                    1usize << req.len(),
                    beta.len()
                )));
            }
        }
        let out = Self {
            required,
            coefficients,
        };
        out.validate()?;
        Ok(out)
    }

    /// Builds coefficients from per-cell probabilities by Moebius inversion.
    pub fn from_cells(q: &QMatrix, cells: Vec<Vec<T>>) -> Result<Self> {
        let coefficients = cells.into_iter().map(moebius).collect();
        Self::new(q, coefficients)
    }

    /// Equal main and interaction effects between a baseline (no required
    /// attribute) and a top (all required attributes) probability.
    pub fn equal_effects(q: &QMatrix, base: T, top: T) -> Result<Self> {
        let coefficients = (0..q.j())
            .map(|j| {
                let m = q.required(j).len();
                let n_effects = (1usize << m) - 1;
                let mut beta = vec![T::zero(); 1 << m];
                beta[0] = base;
                if n_effects > 0 {
                    let effect = (top - base) / T::from_count(n_effects);
                    for b in beta.iter_mut().skip(1) {
                        *b = effect;
                    }
                }
                beta
            })
            .collect();
        Self::new(q, coefficients)
    }

    fn validate(&self) -> Result<()> {
        for j in 0..self.j() {
            let cells = self.cells(j);
            for &c in &cells {
                if !(c > T::zero() && c < T::one()) {
                    return Err(SlamError::ProbabilityOutOfRange {
                        item: j,
                        value: c.as_f64(),
                    });
                }
            }
            let top = *cells.last().expect("at least one cell");
            if cells[..cells.len() - 1].iter().any(|&c| c >= top) {
                return Err(SlamError::InvalidParameter(format!(
                    "item {j}: full-mastery probability {top} must exceed every other cell"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn j(&self) -> usize {
        self.coefficients.len()
    }

    pub fn required(&self, j: usize) -> &[usize] {
        &self.required[j]
    }

    pub fn coefficients(&self, j: usize) -> &[T] {
        &self.coefficients[j]
    }

    /// Probabilities per sub-profile cell of item `j` (subset sums of coefficients).
    pub fn cells(&self, j: usize) -> Vec<T> {
        zeta(&self.coefficients[j])
    }
}

/// Subset-sum transform over the bits of the index.
fn zeta<T: Real>(beta: &[T]) -> Vec<T> {
    let mut f = beta.to_vec();
    let m = f.len().trailing_zeros();
    for b in 0..m {
        let bit = 1usize << b;
        for s in 0..f.len() {
            if s & bit != 0 {
                f[s] = f[s] + f[s ^ bit];
            }
        }
    }
    f
}

/// Inverse of [`zeta`].
fn moebius<T: Real>(cells: Vec<T>) -> Vec<T> {
    let mut f = cells;
    let m = f.len().trailing_zeros();
    for b in 0..m {
        let bit = 1usize << b;
        for s in 0..f.len() {
            if s & bit != 0 {
                f[s] = f[s] - f[s ^ bit];
            }
        }
    }
    f
}

/// J x L matrix of item response probabilities over a pattern set.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaMatrix<T> {
    patterns: PatternSet,
    data: Array2<T>,
}

impl<T: Real> ThetaMatrix<T> {
    /// Requires every entry in the open interval (0, 1).
    pub fn new(patterns: PatternSet, data: Array2<T>) -> Result<Self> {
        let out = Self::with_endpoints(patterns, data)?;
        for ((j, _), &v) in out.data.indexed_iter() {
            if !(v > T::zero() && v < T::one()) {
                return Err(SlamError::ProbabilityOutOfRange {
                    item: j,
                    value: v.as_f64(),
                });
            }
        }
        Ok(out)
    }

    /// Allows entries in the closed interval [0, 1]; only valid for data generation.
    pub fn with_endpoints(patterns: PatternSet, data: Array2<T>) -> Result<Self> {
        if data.ncols() != patterns.len() {
            return Err(SlamError::DimensionMismatch(format!(
                "theta has {} columns for {} patterns",
                data.ncols(),
                patterns.len()
            )));
        }
        for ((j, _), &v) in data.indexed_iter() {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(SlamError::ProbabilityOutOfRange {
                    item: j,
                    value: v.as_f64(),
                });
            }
        }
        Ok(Self { patterns, data })
    }

    #[inline]
    pub fn j(&self) -> usize {
        self.data.nrows()
    }

    #[inline]
    pub fn l(&self) -> usize {
        self.data.ncols()
    }

    #[inline]
    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    #[inline]
    pub fn get(&self, j: usize, l: usize) -> T {
        self.data[[j, l]]
    }

    #[inline]
    pub fn data(&self) -> &Array2<T> {
        &self.data
    }

    /// Whether, for every item, entries over the constraint set `C_j` share one value.
    pub fn respects_constraints(&self, q: &QMatrix) -> bool {
        (0..self.j()).all(|j| {
            let qj = q.row(j);
            let mut shared: Option<T> = None;
            self.patterns.iter().enumerate().all(|(l, p)| {
                if !p.covers(&qj) {
                    return true;
                }
                let v = self.data[[j, l]];
                match shared {
                    None => {
                        shared = Some(v);
                        true
                    }
                    Some(s) => s == v,
                }
            })
        })
    }

    /// Columns permuted so that column `c` of the result is column `order[c]` of `self`.
    pub fn permute_columns(&self, order: &[usize]) -> Result<Self> {
        let members = order.iter().map(|&c| self.patterns.get(c)).collect();
        let patterns = PatternSet::new(self.patterns.k(), members)?;
        let data = self.data.select(Axis(1), order);
        Ok(Self { patterns, data })
    }
}

/// Mixture proportions on the simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct ProportionVector<T> {
    values: Vec<T>,
}

impl<T: Real> ProportionVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(SlamError::Empty("proportion vector".into()));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= T::zero()) || !v.is_finite()) {
            return Err(SlamError::InvalidParameter(format!(
                "negative or non-finite proportion {v}"
            )));
        }
        let total: T = values.iter().copied().sum();
        if (total - T::one()).abs() > simplex_tolerance::<T>() {
            return Err(SlamError::InvalidParameter(format!(
                "proportions sum to {total}, not 1"
            )));
        }
        Ok(Self { values })
    }

    pub fn uniform(l: usize) -> Result<Self> {
        if l == 0 {
            return Err(SlamError::Empty("proportion vector".into()));
        }
        Self::new(vec![T::one() / T::from_count(l); l])
    }

    /// Normalises nonnegative weights.
    pub fn from_weights(weights: &[T]) -> Result<Self> {
        let total: T = weights.iter().copied().sum();
        if !(total > T::zero()) {
            return Err(SlamError::InvalidParameter(
                "weights must have positive total".into(),
            ));
        }
        Self::new(weights.iter().map(|&w| w / total).collect())
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, l: usize) -> T {
        self.values[l]
    }
}

pub(crate) fn simplex_tolerance<T: Real>() -> T {
    T::lit(1e-10).max(T::epsilon() * T::lit(1e3))
}

/// Two-parameter Theta: `theta_plus` where `Gamma = 1`, `theta_minus` elsewhere.
pub fn theta_two_param<T: Real>(
    g: &GammaMatrix,
    params: &TwoParamItemParams<T>,
) -> Result<ThetaMatrix<T>> {
    if params.j() != g.j() {
        return Err(SlamError::DimensionMismatch(format!(
            "{} item parameters for {} Gamma rows",
            params.j(),
            g.j()
        )));
    }
    let data = Array2::from_shape_fn((g.j(), g.l()), |(j, l)| {
        if g.get(j, l) == 1 {
            params.theta_plus[j]
        } else {
            params.theta_minus[j]
        }
    });
    ThetaMatrix::with_endpoints(g.patterns().clone(), data)
}

/// All-effect (identity link) Theta over the pattern set `a`.
pub fn theta_all_effect<T: Real>(
    q: &QMatrix,
    params: &AllEffectItemParams<T>,
    a: &PatternSet,
) -> Result<ThetaMatrix<T>> {
    if params.j() != q.j() || q.k() != a.k() {
        return Err(SlamError::DimensionMismatch(
            "all-effect parameters, Q and pattern set disagree".into(),
        ));
    }
    for j in 0..q.j() {
        if params.required(j) != q.required(j).as_slice() {
            return Err(SlamError::DimensionMismatch(format!(
                "coefficients of item {j} do not match its Q row"
            )));
        }
    }
    let cells: Vec<Vec<T>> = (0..q.j()).map(|j| params.cells(j)).collect();
    let data = Array2::from_shape_fn((q.j(), a.len()), |(j, l)| {
        cells[j][subprofile_index(&a.get(l), params.required(j))]
    });
    ThetaMatrix::new(a.clone(), data)
}

/// Per-pattern log-likelihood pieces: `logit(theta)` (J x L) and `sum_j log(1 - theta)` (L).
pub(crate) struct ComponentLogLik<T> {
    logit: Array2<T>,
    base: Array1<T>,
}

impl<T: Real> ComponentLogLik<T> {
    pub(crate) fn new(theta: &ThetaMatrix<T>) -> Result<Self> {
        Self::from_data(theta.data())
    }

    pub(crate) fn from_data(d: &Array2<T>) -> Result<Self> {
        for ((j, _), &v) in d.indexed_iter() {
            if !(v > T::zero() && v < T::one()) {
                return Err(SlamError::ProbabilityOutOfRange {
                    item: j,
                    value: v.as_f64(),
                });
            }
        }
        let logit = d.mapv(|t| t.ln() - (T::one() - t).ln());
        let base = d.mapv(|t| (T::one() - t).ln()).sum_axis(Axis(0));
        Ok(Self { logit, base })
    }

    /// `log P(R_i | alpha_l)` for each row of the block.
    pub(crate) fn block(&self, r_block: ArrayView2<'_, T>) -> Array2<T> {
        let mut out = r_block.dot(&self.logit);
        for mut row in out.rows_mut() {
            row.zip_mut_with(&self.base, |x, &b| *x = *x + b);
        }
        out
    }
}

/// Splits `0..n` into fixed-size blocks.
pub(crate) fn subject_blocks(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .step_by(SUBJECT_BLOCK)
        .map(|start| (start, (start + SUBJECT_BLOCK).min(n)))
        .collect()
}

fn check_aligned<T: Real>(theta: &ThetaMatrix<T>, p: &ProportionVector<T>, j: usize) -> Result<()> {
    if theta.l() != p.len() {
        return Err(SlamError::DimensionMismatch(format!(
            "theta has {} columns, proportions have {} entries",
            theta.l(),
            p.len()
        )));
    }
    if theta.j() != j {
        return Err(SlamError::DimensionMismatch(format!(
            "theta has {} items, responses have {j}",
            theta.j()
        )));
    }
    Ok(())
}

/// Marginal log-likelihood `sum_i log sum_alpha p_alpha prod_j theta^R (1-theta)^(1-R)`.
pub fn log_likelihood<T: Real>(
    theta: &ThetaMatrix<T>,
    p: &ProportionVector<T>,
    r: &ResponseMatrix,
) -> Result<T> {
    check_aligned(theta, p, r.j())?;
    let kernel = ComponentLogLik::new(theta)?;
    let rf = r.to_float::<T>();
    let log_p: Vec<T> = p.values().iter().map(|&v| v.ln()).collect();
    let partials: Vec<T> = subject_blocks(r.n())
        .into_par_iter()
        .map(|(lo, hi)| {
            let ll = kernel.block(rf.slice(s![lo..hi, ..]));
            let mut acc = T::zero();
            let mut buf = vec![T::zero(); log_p.len()];
            for row in ll.rows() {
                for ((b, &x), &lp) in buf.iter_mut().zip(row.iter()).zip(&log_p) {
                    *b = x + lp;
                }
                acc = acc + crate::scalar::log_sum_exp(&buf);
            }
            acc
        })
        .collect();
    Ok(partials.into_iter().fold(T::zero(), |a, b| a + b))
}

/// Probability of one response vector under `(theta, p)`.
pub fn response_pmf<T: Real>(theta: &ThetaMatrix<T>, p: &ProportionVector<T>, r: &[u8]) -> Result<T> {
    check_aligned(theta, p, r.len())?;
    let mut total = T::zero();
    for l in 0..theta.l() {
        let mut prod = p.get(l);
        for (j, &rj) in r.iter().enumerate() {
            let t = theta.get(j, l);
            prod = prod * if rj == 1 { t } else { T::one() - t };
        }
        total = total + prod;
    }
    Ok(total)
}

/// 2^J x L matrix with `T[r, alpha] = prod_{j : r_j = 1} theta_{j,alpha}`.
///
/// Row `r` encodes the response pattern with item `j` at bit `j`
/// (item 1 least significant), so rows run `00, 10, 01, 11` for J = 2.
pub fn t_matrix<T: Real>(g: &GammaMatrix, theta: &ThetaMatrix<T>) -> Result<Array2<T>> {
    let j = g.j();
    if j > T_MATRIX_MAX_ITEMS {
        return Err(SlamError::InvalidParameter(format!(
            "T-matrix needs J <= {T_MATRIX_MAX_ITEMS}, got {j}"
        )));
    }
    if theta.j() != j || theta.l() != g.l() {
        return Err(SlamError::DimensionMismatch(
            "Gamma and theta shapes differ".into(),
        ));
    }
    let rows = 1usize << j;
    let mut t = Array2::from_elem((rows, g.l()), T::one());
    for r in 1..rows {
        // Extend the row without its highest set bit by one more factor.
        let top = usize::BITS - 1 - r.leading_zeros();
        let prev = r ^ (1usize << top);
        for l in 0..g.l() {
            t[[r, l]] = t[[prev, l]] * theta.get(top as usize, l);
        }
    }
    Ok(t)
}

/// Numerical column rank of `m` with singular values compared to `rel_tol * sigma_max`.
pub fn numerical_rank(m: &Array2<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let dm = nalgebra::DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]]);
    let sv = dm.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}

/// Samples two-parameter Thetas respecting `g` and checks that each T-matrix
/// has full column rank.
pub fn t_rank_probe(g: &GammaMatrix, trials: usize, seed: u64) -> Result<bool> {
    let l = g.l();
    if l == 0 {
        return Ok(true);
    }
    if g.j() < usize::BITS as usize && l > (1usize << g.j()) {
        return Ok(false);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials.max(1) {
        let plus: Vec<f64> = (0..g.j()).map(|_| rng.gen_range(0.55..0.95)).collect();
        let minus: Vec<f64> = (0..g.j()).map(|_| rng.gen_range(0.05..0.45)).collect();
        let theta = theta_two_param(g, &TwoParamItemParams::unchecked(plus, minus))?;
        let t = t_matrix(g, &theta)?;
        if numerical_rank(&t, 1e-8) < l {
            return Ok(false);
        }
    }
    Ok(true)
}
