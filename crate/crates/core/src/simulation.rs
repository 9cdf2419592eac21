//! Synthetic data following the block-design simulation studies.

use std::collections::HashSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlamError};
use crate::patterns::{build_gamma, AttributePattern, PatternSet, QMatrix, MAX_ATTRIBUTES};
use crate::response::{
    theta_all_effect, theta_two_param, AllEffectItemParams, ProportionVector, ResponseMatrix,
    ThetaMatrix, TwoParamItemParams,
};

/// Named random streams derived from one seed.
const STREAM_PATTERNS: u64 = 1;
const STREAM_ASSIGNMENTS: u64 = 2;
const STREAM_RESPONSES: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Which blocks are stacked into the 3K x K design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QLayout {
    /// Identity, upper band, tridiagonal.
    Standard,
    /// Identity, upper band, upper band (used for the all-effect studies).
    RepeatedBand,
}

/// Item parameter truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum Signal {
    /// `theta_plus = 1 - noise`, `theta_minus = noise` for every item.
    TwoParam { noise: f64 },
    /// Equal main and interaction effects from `base` (no required attribute) to `top`.
    AllEffect { base: f64, top: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub k: usize,
    pub n: usize,
    /// Number of true patterns, each with proportion `1 / n_patterns`.
    pub n_patterns: usize,
    pub signal: Signal,
    pub q_layout: QLayout,
    pub seed: u64,
}

impl SimDesign {
    /// Two-parameter design with the standard blocks.
    pub fn two_param(k: usize, n: usize, noise: f64, seed: u64) -> Self {
        Self {
            k,
            n,
            n_patterns: 10,
            signal: Signal::TwoParam { noise },
            q_layout: QLayout::Standard,
            seed,
        }
    }

    /// All-effect design with the repeated band blocks.
    pub fn all_effect(k: usize, n: usize, base: f64, top: f64, seed: u64) -> Self {
        Self {
            k,
            n,
            n_patterns: 10,
            signal: Signal::AllEffect { base, top },
            q_layout: QLayout::RepeatedBand,
            seed,
        }
    }

    pub fn j(&self) -> usize {
        3 * self.k
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 3 || self.k > MAX_ATTRIBUTES {
            return Err(SlamError::InvalidParameter(format!(
                "block designs need 3 <= K <= {MAX_ATTRIBUTES}, got {}",
                self.k
            )));
        }
        if self.n == 0 || self.n_patterns == 0 {
            return Err(SlamError::InvalidParameter(
                "N and the number of true patterns must be positive".into(),
            ));
        }
        match self.signal {
            Signal::TwoParam { noise } if !(noise > 0.0 && noise < 0.5) => {
                Err(SlamError::InvalidParameter(format!(
                    "noise must lie in (0, 0.5), got {noise}"
                )))
            }
            Signal::AllEffect { base, top } if !(0.0 < base && base < top && top < 1.0) => {
                Err(SlamError::InvalidParameter(format!(
                    "all-effect signal needs 0 < base < top < 1, got ({base}, {top})"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Item parameter truth in its natural parameterisation.
#[derive(Clone, Debug, PartialEq)]
pub enum ItemTruth {
    TwoParam(TwoParamItemParams<f64>),
    AllEffect(AllEffectItemParams<f64>),
}

/// One simulated data set with its generating truth.
#[derive(Clone, Debug)]
pub struct SimData {
    pub design: SimDesign,
    pub q: QMatrix,
    pub a0: PatternSet,
    pub p: ProportionVector<f64>,
    /// Theta over `a0`.
    pub theta: ThetaMatrix<f64>,
    pub items: ItemTruth,
    pub responses: ResponseMatrix,
    /// Index into `a0` of each subject's pattern.
    pub assignments: Vec<usize>,
}

/// One of the three K x K blocks (1: identity, 2: upper band, 3: tridiagonal).
pub fn q_block(k: usize, which: u8) -> Result<QMatrix> {
    if k < 3 {
        return Err(SlamError::InvalidParameter(format!(
            "Q blocks need K >= 3, got {k}"
        )));
    }
    let rows: Vec<Vec<u8>> = (0..k)
        .map(|r| {
            (0..k)
                .map(|c| {
                    let on = match which {
                        1 => c == r,
                        2 => c == r || c == r + 1,
                        _ => c + 1 >= r && c <= r + 1,
                    };
                    on as u8
                })
                .collect()
        })
        .collect();
    if !(1..=3).contains(&which) {
        return Err(SlamError::InvalidParameter(format!("no Q block {which}")));
    }
    QMatrix::from_rows(&rows)
}

/// Stacked `(Q1; Q2; Q3)` design with 3K items.
pub fn build_q_blocks(k: usize) -> Result<QMatrix> {
    build_q(k, QLayout::Standard)
}

pub fn build_q(k: usize, layout: QLayout) -> Result<QMatrix> {
    let third = match layout {
        QLayout::Standard => 3,
        QLayout::RepeatedBand => 2,
    };
    q_block(k, 1)?.stack(&q_block(k, 2)?)?.stack(&q_block(k, third)?)
}

/// `m` distinct patterns drawn uniformly without replacement, in canonical order.
pub fn gen_true_patterns(k: usize, m: usize, seed: u64) -> Result<PatternSet> {
    if k == 0 || k > MAX_ATTRIBUTES {
        return Err(SlamError::TooManyAttributes(k, MAX_ATTRIBUTES));
    }
    if k < 64 && (m as u128) > (1u128 << k) {
        return Err(SlamError::InvalidParameter(format!(
            "cannot draw {m} distinct patterns from 2^{k}"
        )));
    }
    let mut rng = stream(seed, STREAM_PATTERNS);
    let bits: Vec<u64> = if k <= 24 {
        index::sample(&mut rng, 1usize << k, m)
            .into_iter()
            .map(|b| b as u64)
            .collect()
    } else {
        let mask = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
        let mut seen = HashSet::with_capacity(m);
        let mut out = Vec::with_capacity(m);
        while out.len() < m {
            let b = rng.gen::<u64>() & mask;
            if seen.insert(b) {
                out.push(b);
            }
        }
        out
    };
    let members = bits
        .into_iter()
        .map(|b| AttributePattern::new(k, b))
        .collect::<Result<Vec<_>>>()?;
    PatternSet::from_unsorted(k, members)
}

/// Draws a pattern per subject from `p`, then independent Bernoulli responses.
pub fn gen_responses(
    theta: &ThetaMatrix<f64>,
    p: &ProportionVector<f64>,
    n: usize,
    seed: u64,
) -> Result<(ResponseMatrix, Vec<usize>)> {
    if theta.l() != p.len() {
        return Err(SlamError::DimensionMismatch(format!(
            "theta has {} columns, proportions have {} entries",
            theta.l(),
            p.len()
        )));
    }
    let mut cumulative = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for &v in p.values() {
        acc += v;
        cumulative.push(acc);
    }
    let last_positive = p.values().iter().rposition(|&v| v > 0.0).unwrap_or(0);
    let mut rng = stream(seed, STREAM_ASSIGNMENTS);
    let assignments: Vec<usize> = (0..n)
        .map(|_| {
            let u: f64 = rng.gen::<f64>() * acc;
            cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(last_positive)
                .min(last_positive)
        })
        .collect();
    let mut rng = stream(seed, STREAM_RESPONSES);
    let j = theta.j();
    let mut data = Vec::with_capacity(n * j);
    for &a in &assignments {
        for jj in 0..j {
            data.push((rng.gen::<f64>() < theta.get(jj, a)) as u8);
        }
    }
    Ok((ResponseMatrix::new(n, j, data)?, assignments))
}

/// Full data set for a design.
pub fn simulate(design: &SimDesign) -> Result<SimData> {
    design.validate()?;
    let q = build_q(design.k, design.q_layout)?;
    let a0 = gen_true_patterns(design.k, design.n_patterns, design.seed)?;
    let p = ProportionVector::uniform(a0.len())?;
    let (theta, items) = match design.signal {
        Signal::TwoParam { noise } => {
            let params = TwoParamItemParams::uniform(q.j(), 1.0 - noise, noise)?;
            let g = build_gamma(&q, &a0)?;
            (theta_two_param(&g, &params)?, ItemTruth::TwoParam(params))
        }
        Signal::AllEffect { base, top } => {
            let params = AllEffectItemParams::equal_effects(&q, base, top)?;
            (theta_all_effect(&q, &params, &a0)?, ItemTruth::AllEffect(params))
        }
    };
    let (responses, assignments) = gen_responses(&theta, &p, design.n, design.seed)?;
    Ok(SimData {
        design: design.clone(),
        q,
        a0,
        p,
        theta,
        items,
        responses,
        assignments,
    })
}

/// Seed of replicate `r` derived from a base seed.
pub fn replicate_seed(base: u64, r: usize) -> u64 {
    let mut rng = stream(base, 1000 + r as u64);
    rng.gen()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identifiability::check_generic_q;
    use ndarray::Array2;

    #[test]
    fn block_shapes() {
        let q2 = q_block(3, 2).unwrap();
        assert_eq!(q2.to_rows(), vec![vec![1, 1, 0], vec![0, 1, 1], vec![0, 0, 1]]);
        let q3 = q_block(3, 3).unwrap();
        assert_eq!(q3.to_rows(), vec![vec![1, 1, 0], vec![1, 1, 1], vec![0, 1, 1]]);
        for k in 3..8 {
            assert_eq!(q_block(k, 1).unwrap(), QMatrix::identity(k).unwrap());
        }
        assert!(q_block(2, 1).is_err());
        let q = build_q_blocks(10).unwrap();
        assert_eq!((q.j(), q.k()), (30, 10));
    }

    #[test]
    fn blocks_pass_generic_q_check() {
        for k in 3..=12 {
            assert!(check_generic_q(&build_q_blocks(k).unwrap()), "K = {k}");
            assert!(check_generic_q(&build_q(k, QLayout::RepeatedBand).unwrap()), "K = {k}");
        }
    }

    #[test]
    fn true_pattern_sampling() {
        assert_eq!(gen_true_patterns(3, 8, 1).unwrap(), PatternSet::full(3).unwrap());
        assert!(gen_true_patterns(3, 9, 1).is_err());
        assert_eq!(gen_true_patterns(10, 10, 42).unwrap(), gen_true_patterns(10, 10, 42).unwrap());
        assert_eq!(gen_true_patterns(40, 10, 5).unwrap().len(), 10);
        let ones = (0..2000)
            .filter(|&s| gen_true_patterns(1, 1, s).unwrap().get(0).bits() == 1)
            .count();
        // Binomial(2000, 1/2): 4 standard deviations is about 89.
        assert!((ones as i64 - 1000).abs() < 90, "{ones}");
    }

    #[test]
    fn response_generation_edge_cases() {
        let a = PatternSet::full(1).unwrap();
        let th = ThetaMatrix::with_endpoints(a.clone(), Array2::from_elem((3, 2), 1.0)).unwrap();
        let p = ProportionVector::new(vec![0.5, 0.5]).unwrap();
        let (r, _) = gen_responses(&th, &p, 50, 3).unwrap();
        assert!(r.to_rows().iter().flatten().all(|&x| x == 1));

        let th = ThetaMatrix::new(a, Array2::from_elem((3, 2), 0.5)).unwrap();
        let p = ProportionVector::new(vec![0.0, 1.0]).unwrap();
        let (_, assign) = gen_responses(&th, &p, 100, 3).unwrap();
        assert!(assign.iter().all(|&a| a == 1));
    }

    #[test]
    fn response_means_match_marginals() {
        let design = SimDesign::two_param(4, 10_000, 0.2, 17);
        let sim = simulate(&SimDesign { n_patterns: 5, ..design }).unwrap();
        let means = sim.responses.item_means();
        let n = sim.responses.n() as f64;
        for (j, &m) in means.iter().enumerate() {
            let expected: f64 = (0..sim.a0.len()).map(|l| sim.p.get(l) * sim.theta.get(j, l)).sum();
            let se = (expected * (1.0 - expected) / n).sqrt();
            assert!((m - expected).abs() < 3.5 * se, "item {j}: {m} vs {expected}");
        }
        // Pattern frequencies within multinomial error.
        for l in 0..sim.a0.len() {
            let f = sim.assignments.iter().filter(|&&a| a == l).count() as f64 / n;
            let se = (0.2 * 0.8 / n).sqrt();
            assert!((f - 0.2).abs() < 4.0 * se);
        }
    }

    #[test]
    fn all_effect_design_truth() {
        let sim = simulate(&SimDesign::all_effect(5, 50, 0.1, 0.9, 3)).unwrap();
        assert_eq!(sim.q, build_q(5, QLayout::RepeatedBand).unwrap());
        for j in 0..sim.q.j() {
            for l in 0..sim.a0.len() {
                let t = sim.theta.get(j, l);
                assert!((0.1 - 1e-12..=0.9 + 1e-12).contains(&t));
                if sim.a0.get(l).covers(&sim.q.row(j)) {
                    assert!((t - 0.9).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let d = SimDesign::two_param(6, 200, 0.1, 99);
        let (a, b) = (simulate(&d).unwrap(), simulate(&d).unwrap());
        assert_eq!(a.responses, b.responses);
        assert_eq!(a.a0, b.a0);
        let other = simulate(&SimDesign { seed: 100, ..d }).unwrap();
        assert_ne!(a.responses, other.responses);
    }
}
