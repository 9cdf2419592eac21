//! E-step responsibilities and the closed-form M-steps.

use ndarray::{s, Array1, Array2, Zip};
use rayon::prelude::*;

use super::ModelKind;
use crate::error::{Result, SlamError};
use crate::patterns::{build_gamma, GammaMatrix, PatternSet, QMatrix};
use crate::response::{
    subject_blocks, subprofile_index, ComponentLogLik, ResponseMatrix, ThetaMatrix,
    TwoParamItemParams, THETA_FLOOR,
};
use crate::scalar::Real;

/// Maps every (item, pattern) pair to the item parameter it uses.
///
/// Two-parameter items have cells `0` (theta minus) and `1` (theta plus);
/// all-effect items have one cell per sub-profile of their required attributes.
#[derive(Clone, Debug)]
pub struct CellStructure {
    kind: ModelKind,
    q: QMatrix,
    patterns: PatternSet,
    cell_of: Array2<u32>,
    cells_per_item: Vec<usize>,
}

impl CellStructure {
    pub fn new(kind: ModelKind, q: &QMatrix, patterns: &PatternSet) -> Result<Self> {
        if q.k() != patterns.k() {
            return Err(SlamError::DimensionMismatch(format!(
                "Q has K = {}, patterns have K = {}",
                q.k(),
                patterns.k()
            )));
        }
        let (cell_of, cells_per_item) = match kind {
            ModelKind::TwoParam => {
                let g = build_gamma(q, patterns)?;
                let cells = Array2::from_shape_fn((g.j(), g.l()), |(j, l)| g.get(j, l) as u32);
                (cells, vec![2; q.j()])
            }
            ModelKind::AllEffect => {
                let required: Vec<Vec<usize>> = (0..q.j()).map(|j| q.required(j)).collect();
                if let Some(m) = required.iter().map(Vec::len).max() {
                    if m > 16 {
                        return Err(SlamError::InvalidParameter(format!(
                            "all-effect items may require at most 16 attributes, found {m}"
                        )));
                    }
                }
                let cells = Array2::from_shape_fn((q.j(), patterns.len()), |(j, l)| {
                    subprofile_index(&patterns.get(l), &required[j]) as u32
                });
                (cells, required.iter().map(|r| 1usize << r.len()).collect())
            }
        };
        Ok(Self {
            kind,
            q: q.clone(),
            patterns: patterns.clone(),
            cell_of,
            cells_per_item,
        })
    }

    #[inline]
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    #[inline]
    pub fn q(&self) -> &QMatrix {
        &self.q
    }

    #[inline]
    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    #[inline]
    pub fn j(&self) -> usize {
        self.cell_of.nrows()
    }

    #[inline]
    pub fn l(&self) -> usize {
        self.cell_of.ncols()
    }

    #[inline]
    pub fn cell(&self, j: usize, l: usize) -> usize {
        self.cell_of[[j, l]] as usize
    }

    pub fn cells_per_item(&self, j: usize) -> usize {
        self.cells_per_item[j]
    }

    /// J x L probabilities from per-item cell values.
    pub fn theta_data<T: Real>(&self, cells: &[Vec<T>]) -> Array2<T> {
        Array2::from_shape_fn((self.j(), self.l()), |(j, l)| cells[j][self.cell(j, l)])
    }

    pub fn theta<T: Real>(&self, cells: &[Vec<T>]) -> Result<ThetaMatrix<T>> {
        ThetaMatrix::new(self.patterns.clone(), self.theta_data(cells))
    }

    /// Starting values: 0.25 below and 0.75 at full mastery, equal effects in between.
    pub fn initial_cells<T: Real>(&self) -> Vec<Vec<T>> {
        let (base, top) = (0.25, 0.75);
        (0..self.j())
            .map(|j| {
                let n = self.cells_per_item[j];
                if n == 1 {
                    return vec![T::lit(0.5)];
                }
                let full = n - 1;
                (0..n)
                    .map(|c| {
                        let v = match self.kind {
                            ModelKind::TwoParam => {
                                if c == 1 {
                                    top
                                } else {
                                    base
                                }
                            }
                            ModelKind::AllEffect => {
                                let m = full.count_ones() as i32;
                                let sz = (c as u32).count_ones() as i32;
                                base + (top - base) * (2f64.powi(sz) - 1.0) / (2f64.powi(m) - 1.0)
                            }
                        };
                        T::lit(v)
                    })
                    .collect()
            })
            .collect()
    }

    pub(crate) fn check_cells<T: Real>(&self, cells: &[Vec<T>]) -> Result<()> {
        if cells.len() != self.j()
            || cells
                .iter()
                .zip(&self.cells_per_item)
                .any(|(c, &n)| c.len() != n)
        {
            return Err(SlamError::DimensionMismatch(
                "item parameter cells do not match the model structure".into(),
            ));
        }
        Ok(())
    }
}

/// Sufficient statistics of one pass over the data.
pub(crate) struct SweepStats<T> {
    /// Expected counts per pattern, `sum_i phi_il`.
    pub n: Array1<T>,
    /// `sum_i R_ij phi_il`, J x L.
    pub s: Array2<T>,
    /// Sum over subjects of the row log-normaliser.
    pub lse: T,
}

/// Normalises `scale * ll + offset` row by row in place, returning the
/// summed log-normalisers.
fn normalise_rows<T: Real>(ll: &mut Array2<T>, scale: T, offset: &[T], first_row: usize) -> Result<T> {
    let mut total = T::zero();
    for (r, mut row) in ll.rows_mut().into_iter().enumerate() {
        let mut max = T::neg_infinity();
        for (x, &o) in row.iter_mut().zip(offset) {
            *x = scale * *x + o;
            if *x > max {
                max = *x;
            }
        }
        if !max.is_finite() {
            return Err(SlamError::InvalidParameter(format!(
                "subject {} has no pattern with positive weight and finite likelihood",
                first_row + r
            )));
        }
        let mut sum = T::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum = sum + *x;
        }
        let inv = T::one() / sum;
        row.mapv_inplace(|x| x * inv);
        total = total + max + sum.ln();
    }
    Ok(total)
}

/// One blocked pass: responsibilities are formed per block and folded into
/// pattern counts and item-by-pattern response sums. Blocks are combined in
/// index order so the result does not depend on the thread count.
pub(crate) fn sweep<T: Real>(
    kernel: &ComponentLogLik<T>,
    rf: &Array2<T>,
    scale: T,
    offset: &[T],
) -> Result<SweepStats<T>> {
    let blocks = subject_blocks(rf.nrows());
    let partials: Vec<Result<SweepStats<T>>> = blocks
        .into_par_iter()
        .map(|(lo, hi)| {
            let rb = rf.slice(s![lo..hi, ..]);
            let mut phi = kernel.block(rb);
            let lse = normalise_rows(&mut phi, scale, offset, lo)?;
            let n = phi.sum_axis(ndarray::Axis(0));
            let s = rb.t().dot(&phi);
            Ok(SweepStats { n, s, lse })
        })
        .collect();
    let mut iter = partials.into_iter();
    let mut acc = match iter.next() {
        Some(first) => first?,
        None => return Err(SlamError::Empty("response matrix has no subjects".into())),
    };
    for part in iter {
        let part = part?;
        acc.n.zip_mut_with(&part.n, |a, &b| *a = *a + b);
        acc.s.zip_mut_with(&part.s, |a, &b| *a = *a + b);
        acc.lse = acc.lse + part.lse;
    }
    Ok(acc)
}

/// Responsibilities and per-subject log-normalisers of an E-step.
#[derive(Clone, Debug)]
pub struct EStep<T> {
    /// N x L, rows sum to one.
    pub phi: Array2<T>,
    /// `log sum_l w_l P(R_i | alpha_l)`; the log-likelihood contribution when weights sum to one.
    pub log_normalizers: Vec<T>,
}

/// `phi_il ∝ w_l exp(sum_j R_ij log theta_jl + (1 - R_ij) log(1 - theta_jl))`.
pub fn e_step<T: Real>(
    theta: &ThetaMatrix<T>,
    weights: &[T],
    r: &ResponseMatrix,
) -> Result<EStep<T>> {
    if weights.len() != theta.l() || theta.j() != r.j() {
        return Err(SlamError::DimensionMismatch(format!(
            "theta is {} x {}, weights have {} entries, responses have {} items",
            theta.j(),
            theta.l(),
            weights.len(),
            r.j()
        )));
    }
    if weights.iter().any(|w| !(*w >= T::zero()) || !w.is_finite()) {
        return Err(SlamError::InvalidParameter(
            "E-step weights must be finite and nonnegative".into(),
        ));
    }
    let kernel = ComponentLogLik::new(theta)?;
    let rf = r.to_float::<T>();
    let offset: Vec<T> = weights.iter().map(|&w| w.ln()).collect();
    let blocks = subject_blocks(r.n());
    let parts: Vec<Result<(Array2<T>, Vec<T>)>> = blocks
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut phi = kernel.block(rf.slice(s![lo..hi, ..]));
            let mut norms = Vec::with_capacity(hi - lo);
            for i in 0..phi.nrows() {
                let mut one = phi.slice(s![i..i + 1, ..]).to_owned();
                norms.push(normalise_rows(&mut one, T::one(), &offset, lo + i)?);
                phi.row_mut(i).assign(&one.row(0));
            }
            Ok((phi, norms))
        })
        .collect();
    let mut phi = Array2::zeros((r.n(), theta.l()));
    let mut log_normalizers = Vec::with_capacity(r.n());
    for ((lo, hi), part) in subject_blocks(r.n()).into_iter().zip(parts) {
        let (block, norms) = part?;
        phi.slice_mut(s![lo..hi, ..]).assign(&block);
        log_normalizers.extend(norms);
    }
    Ok(EStep {
        phi,
        log_normalizers,
    })
}

/// Counters from an M-step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MStepEvents {
    /// Values moved into `[1e-6, 1 - 1e-6]`.
    pub clamped: usize,
    /// Cells with no responsibility mass that kept their previous value.
    pub fallbacks: usize,
}

impl std::ops::AddAssign for MStepEvents {
    fn add_assign(&mut self, other: Self) {
        self.clamped += other.clamped;
        self.fallbacks += other.fallbacks;
    }
}

pub(crate) fn clamp_theta<T: Real>(v: T, events: &mut MStepEvents) -> T {
    let lo = T::lit(THETA_FLOOR);
    let hi = T::one() - lo;
    if v < lo {
        events.clamped += 1;
        lo
    } else if v > hi {
        events.clamped += 1;
        hi
    } else {
        v
    }
}

/// Weighted response rate per cell from pass statistics.
pub(crate) fn cells_from_stats<T: Real>(
    structure: &CellStructure,
    n: &Array1<T>,
    s: &Array2<T>,
    prev: &[Vec<T>],
) -> (Vec<Vec<T>>, MStepEvents) {
    let rows: Vec<(Vec<T>, MStepEvents)> = (0..structure.j())
        .into_par_iter()
        .map(|j| {
            let m = structure.cells_per_item(j);
            let mut num = vec![T::zero(); m];
            let mut den = vec![T::zero(); m];
            Zip::indexed(s.row(j)).for_each(|l, &sv| {
                let c = structure.cell(j, l);
                num[c] = num[c] + sv;
                den[c] = den[c] + n[l];
            });
            let mut events = MStepEvents::default();
            let cells = (0..m)
                .map(|c| {
                    if den[c] > T::zero() {
                        clamp_theta(num[c] / den[c], &mut events)
                    } else {
                        events.fallbacks += 1;
                        prev[j][c]
                    }
                })
                .collect();
            (cells, events)
        })
        .collect();
    let mut events = MStepEvents::default();
    let cells = rows
        .into_iter()
        .map(|(c, e)| {
            events += e;
            c
        })
        .collect();
    (cells, events)
}

fn stats_from_phi<T: Real>(phi: &Array2<T>, r: &ResponseMatrix) -> Result<(Array1<T>, Array2<T>)> {
    if phi.nrows() != r.n() {
        return Err(SlamError::DimensionMismatch(format!(
            "responsibilities have {} rows, responses have {}",
            phi.nrows(),
            r.n()
        )));
    }
    let rf = r.to_float::<T>();
    Ok((phi.sum_axis(ndarray::Axis(0)), rf.t().dot(phi)))
}

/// Closed-form two-parameter M-step: capable and incapable weighted response rates.
pub fn m_step_two_param<T: Real>(
    phi: &Array2<T>,
    g: &GammaMatrix,
    r: &ResponseMatrix,
    prev: &TwoParamItemParams<T>,
) -> Result<(TwoParamItemParams<T>, MStepEvents)> {
    if g.l() != phi.ncols() || g.j() != r.j() || prev.j() != g.j() {
        return Err(SlamError::DimensionMismatch(
            "Gamma, responsibilities and responses disagree".into(),
        ));
    }
    let (n, s) = stats_from_phi(phi, r)?;
    let mut events = MStepEvents::default();
    let mut plus = Vec::with_capacity(g.j());
    let mut minus = Vec::with_capacity(g.j());
    for j in 0..g.j() {
        let (mut num, mut den) = ([T::zero(); 2], [T::zero(); 2]);
        for l in 0..g.l() {
            let c = g.get(j, l) as usize;
            num[c] = num[c] + s[[j, l]];
            den[c] = den[c] + n[l];
        }
        let mut rate = |c: usize, fallback: T| {
            if den[c] > T::zero() {
                clamp_theta(num[c] / den[c], &mut events)
            } else {
                events.fallbacks += 1;
                fallback
            }
        };
        plus.push(rate(1, prev.theta_plus[j]));
        minus.push(rate(0, prev.theta_minus[j]));
    }
    Ok((TwoParamItemParams::unchecked(plus, minus), events))
}

/// Closed-form all-effect M-step: one weighted response rate per sub-profile
/// of each item's required attributes.
pub fn m_step_all_effect<T: Real>(
    phi: &Array2<T>,
    q: &QMatrix,
    patterns: &PatternSet,
    r: &ResponseMatrix,
    prev: &[Vec<T>],
) -> Result<(Vec<Vec<T>>, MStepEvents)> {
    let structure = CellStructure::new(ModelKind::AllEffect, q, patterns)?;
    if phi.ncols() != structure.l() || r.j() != structure.j() {
        return Err(SlamError::DimensionMismatch(
            "Q, responsibilities and responses disagree".into(),
        ));
    }
    structure.check_cells(prev)?;
    let (n, s) = stats_from_phi(phi, r)?;
    Ok(cells_from_stats(&structure, &n, &s, prev))
}
