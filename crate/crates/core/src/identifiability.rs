//! Checkers for strict, generic and partial learnability of a pattern set.
//!
//! Item sets are 0-based index lists. Witness searches enumerate item subsets
//! by ascending size and lexicographically within a size, so the reported
//! witness is the first one in that order.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, HashSet};
use std::hash::{Hash, Hasher};

use itertools::Itertools;
use serde::Serialize;

use crate::error::{Result, SlamError};
use crate::patterns::{build_gamma, AttributePattern, GammaMatrix, PatternSet, QMatrix};

/// Largest K for which Condition C enumerates the complement of the pattern set.
pub const CONDITION_C_MAX_ATTRIBUTES: usize = 20;

/// Search limits for the existential conditions.
#[derive(Clone, Debug, Serialize)]
pub struct SearchOptions {
    /// Largest item subset tried for Condition A; `None` means `min(J/2, 8)`.
    pub max_subset_size: Option<usize>,
    /// Subsets (or flip sets) examined before the search gives up.
    pub max_nodes: usize,
    /// Flips from 0 to 1 allowed per column in the generic search.
    pub flip_budget: usize,
    /// Largest item subset tried in the generic search; `None` means `min(J/2, 3)`.
    pub flip_max_subset_size: Option<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            max_subset_size: None,
            max_nodes: 200_000,
            flip_budget: 2,
            flip_max_subset_size: None,
        }
    }
}

impl SearchOptions {
    fn subset_limit(&self, j: usize) -> usize {
        self.max_subset_size
            .unwrap_or_else(|| (j / 2).min(8))
            .min(j)
            .min(64)
    }

    fn flip_subset_limit(&self, j: usize) -> usize {
        self.flip_max_subset_size
            .unwrap_or_else(|| (j / 2).min(3))
            .min(j)
            .min(64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Strict,
    Generic,
    PartialOnly,
    Unknown,
    FailsNecessary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentifiabilityReport {
    pub condition_a: Option<(Vec<usize>, Vec<usize>)>,
    /// Whether the Condition A search covered every subset within its size limit.
    pub search_exhaustive: bool,
    pub condition_b: bool,
    pub condition_c: bool,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

/// Result of the Condition A search.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WitnessSearch {
    pub witness: Option<(Vec<usize>, Vec<usize>)>,
    pub exhaustive: bool,
}

/// Binary matrix accessor shared by the original and flipped Gamma.
trait Binary {
    fn j(&self) -> usize;
    fn l(&self) -> usize;
    fn at(&self, j: usize, l: usize) -> u8;
}

impl Binary for GammaMatrix {
    fn j(&self) -> usize {
        GammaMatrix::j(self)
    }
    fn l(&self) -> usize {
        GammaMatrix::l(self)
    }
    fn at(&self, j: usize, l: usize) -> u8 {
        self.get(j, l)
    }
}

struct Flipped<'a> {
    base: &'a GammaMatrix,
    ones: &'a HashSet<(usize, usize)>,
}

impl Binary for Flipped<'_> {
    fn j(&self) -> usize {
        self.base.j()
    }
    fn l(&self) -> usize {
        self.base.l()
    }
    fn at(&self, j: usize, l: usize) -> u8 {
        if self.ones.contains(&(j, l)) {
            1
        } else {
            self.base.get(j, l)
        }
    }
}

/// Columns restricted to at most 64 items, one word per column.
fn packed<B: Binary>(g: &B, items: &[usize]) -> Vec<u64> {
    (0..g.l())
        .map(|l| {
            items
                .iter()
                .enumerate()
                .fold(0u64, |acc, (t, &j)| acc | ((g.at(j, l) as u64) << t))
        })
        .collect()
}

/// Columns over an arbitrary item list, packed into words.
fn packed_wide<B: Binary>(g: &B, items: &[usize]) -> Vec<Vec<u64>> {
    (0..g.l())
        .map(|l| {
            let mut key = vec![0u64; items.len().div_ceil(64).max(1)];
            for (t, &j) in items.iter().enumerate() {
                if g.at(j, l) == 1 {
                    key[t / 64] |= 1u64 << (t % 64);
                }
            }
            key
        })
        .collect()
}

#[inline]
fn geq(a: u64, b: u64) -> bool {
    b & !a == 0
}

fn all_distinct(cols: &[u64]) -> bool {
    let mut seen = HashSet::with_capacity(cols.len());
    cols.iter().all(|c| seen.insert(*c))
}

fn same_order(c1: &[u64], c2: &[u64]) -> bool {
    let l = c1.len();
    (0..l).all(|a| (0..l).all(|b| a == b || geq(c1[a], c1[b]) == geq(c2[a], c2[b])))
}

fn order_hash(cols: &[u64]) -> u64 {
    let mut h = DefaultHasher::new();
    let l = cols.len();
    let mut word = 0u64;
    let mut n = 0;
    for a in 0..l {
        for b in 0..l {
            if a != b {
                word = (word << 1) | geq(cols[a], cols[b]) as u64;
                n += 1;
                if n == 64 {
                    word.hash(&mut h);
                    word = 0;
                    n = 0;
                }
            }
        }
    }
    word.hash(&mut h);
    h.finish()
}

fn disjoint(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|x| !b.contains(x))
}

fn complement(j: usize, s1: &[usize], s2: &[usize]) -> Vec<usize> {
    (0..j).filter(|x| !s1.contains(x) && !s2.contains(x)).collect()
}

fn condition_b_on<B: Binary>(g: &B, s1: &[usize], s2: &[usize]) -> bool {
    let l = g.l();
    if l <= 1 {
        return true;
    }
    let rest = complement(g.j(), s1, s2);
    let outside = packed_wide(g, &rest);
    let c1 = packed_wide(g, s1);
    let c2 = packed_wide(g, s2);
    let ge = |c: &Vec<Vec<u64>>, a: usize, b: usize| {
        c[a].iter().zip(&c[b]).all(|(&x, &y)| geq(x, y))
    };
    for a in 0..l {
        for b in 0..l {
            if a != b && (ge(&c1, b, a) || ge(&c2, b, a)) && outside[a] == outside[b] {
                return false;
            }
        }
    }
    true
}

/// Witness for a single-pattern set, where distinctness and B are vacuous.
fn trivial_witness(j: usize) -> (Vec<usize>, Vec<usize>) {
    match j {
        0 => (vec![], vec![]),
        1 => (vec![0], vec![]),
        _ => (vec![0], vec![1]),
    }
}

/// First pair in search order satisfying Condition A (and B when asked).
fn search_witness(g: &GammaMatrix, opts: &SearchOptions, require_b: bool) -> WitnessSearch {
    let j = g.j();
    if g.l() <= 1 {
        return WitnessSearch {
            witness: Some(trivial_witness(j)),
            exhaustive: true,
        };
    }
    let limit = opts.subset_limit(j);
    let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut subsets: Vec<Vec<usize>> = Vec::new();
    let mut nodes = 0usize;
    for size in 1..=limit {
        for combo in (0..j).combinations(size) {
            nodes += 1;
            if nodes > opts.max_nodes {
                return WitnessSearch {
                    witness: None,
                    exhaustive: false,
                };
            }
            let cols = packed(g, &combo);
            if !all_distinct(&cols) {
                continue;
            }
            let key = order_hash(&cols);
            let bucket = buckets.entry(key).or_default();
            for &idx in bucket.iter() {
                let other = &subsets[idx];
                if !disjoint(other, &combo) {
                    continue;
                }
                if !same_order(&packed(g, other), &cols) {
                    continue;
                }
                if !require_b || condition_b_on(g, other, &combo) {
                    return WitnessSearch {
                        witness: Some((other.clone(), combo)),
                        exhaustive: true,
                    };
                }
            }
            bucket.push(subsets.len());
            subsets.push(combo);
        }
    }
    WitnessSearch {
        witness: None,
        exhaustive: true,
    }
}

/// Searches for disjoint item sets whose Gamma blocks have distinct columns and equal orders.
pub fn check_condition_a(g: &GammaMatrix, opts: &SearchOptions) -> WitnessSearch {
    search_witness(g, opts, false)
}

/// Whether `(s1, s2)` is a Condition A witness for `g`.
pub fn verify_condition_a(g: &GammaMatrix, s1: &[usize], s2: &[usize]) -> Result<bool> {
    g.check_items(s1)?;
    g.check_items(s2)?;
    if !disjoint(s1, s2) {
        return Ok(false);
    }
    if g.l() <= 1 {
        return Ok(true);
    }
    let c1 = packed_wide(g, s1);
    let c2 = packed_wide(g, s2);
    let distinct = |c: &Vec<Vec<u64>>| c.iter().collect::<HashSet<_>>().len() == c.len();
    Ok(distinct(&c1)
        && distinct(&c2)
        && crate::patterns::orders_equal_unchecked(g, s1, s2))
}

/// Comparable distinct pattern pairs under either item set must differ on some other item.
pub fn check_condition_b(g: &GammaMatrix, s1: &[usize], s2: &[usize]) -> Result<bool> {
    g.check_items(s1)?;
    g.check_items(s2)?;
    if !disjoint(s1, s2) {
        return Err(SlamError::InvalidParameter(
            "item sets for Condition B must be disjoint".into(),
        ));
    }
    Ok(condition_b_on(g, s1, s2))
}

/// No pattern in `a0` shares its full Gamma column with a pattern outside `a0`.
pub fn check_condition_c(q: &QMatrix, a0: &PatternSet) -> Result<bool> {
    let k = q.k();
    if a0.k() != k {
        return Err(SlamError::DimensionMismatch(format!(
            "Q has K = {k}, pattern set has K = {}",
            a0.k()
        )));
    }
    if k > CONDITION_C_MAX_ATTRIBUTES {
        return Err(SlamError::TooManyAttributes(k, CONDITION_C_MAX_ATTRIBUTES));
    }
    let inside: HashSet<u64> = a0.iter().map(|a| class_representative(q, a).bits()).collect();
    for bits in 0..(1u64 << k) {
        let alpha = AttributePattern::new(k, bits)?;
        if !a0.contains(&alpha) && inside.contains(&class_representative(q, &alpha).bits()) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Conditions A, B and C together; `Strict` when all hold.
pub fn check_strict(
    q: &QMatrix,
    a0: &PatternSet,
    opts: &SearchOptions,
) -> Result<IdentifiabilityReport> {
    let g = build_gamma(q, a0)?;
    let condition_c = check_condition_c(q, a0)?;
    Ok(report_from_search(&g, condition_c, Verdict::Strict, opts, Vec::new()))
}

fn report_from_search(
    g: &GammaMatrix,
    condition_c: bool,
    success: Verdict,
    opts: &SearchOptions,
    mut notes: Vec<String>,
) -> IdentifiabilityReport {
    let with_b = search_witness(g, opts, true);
    let (condition_a, condition_b, exhaustive) = match with_b.witness {
        Some(w) => (Some(w), true, with_b.exhaustive),
        None => {
            let a_only = search_witness(g, opts, false);
            (
                a_only.witness,
                false,
                with_b.exhaustive && a_only.exhaustive,
            )
        }
    };
    if g.l() <= 1 {
        notes.push("single pattern: distinctness and Condition B hold vacuously".into());
    }
    if !exhaustive {
        notes.push(format!(
            "witness search stopped after {} subsets",
            opts.max_nodes
        ));
    }
    let verdict = if !condition_c {
        notes.push("Condition C fails: some pattern shares its Gamma column with an outside pattern".into());
        Verdict::FailsNecessary
    } else if condition_a.is_some() && condition_b {
        success
    } else {
        Verdict::Unknown
    };
    IdentifiabilityReport {
        condition_a,
        search_exhaustive: exhaustive,
        condition_b,
        condition_c,
        verdict,
        notes,
    }
}

/// Outcome of the generic (flip) search.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GenericOutcome {
    pub holds: bool,
    pub witness: Option<(Vec<usize>, Vec<usize>)>,
    /// Entries `(item, column)` flipped from 0 to 1.
    pub flips: Vec<(usize, usize)>,
    pub exhaustive: bool,
}

/// Searches item sets and 0-to-1 flips inside them giving Condition A on the
/// flipped block, with Condition B checked against the original orders.
///
/// Entries outside the flipped block are read from `g` unchanged.
pub fn generic_flip_search(g: &GammaMatrix, opts: &SearchOptions) -> GenericOutcome {
    let j = g.j();
    if g.l() <= 1 {
        return GenericOutcome {
            holds: true,
            witness: Some(trivial_witness(j)),
            flips: Vec::new(),
            exhaustive: true,
        };
    }
    let limit = opts.flip_subset_limit(j);
    let subsets: Vec<Vec<usize>> = (1..=limit)
        .flat_map(|size| (0..j).combinations(size))
        .collect();
    let mut nodes = 0usize;
    for b in 0..subsets.len() {
        for a in 0..b {
            let (s1, s2) = (&subsets[a], &subsets[b]);
            if !disjoint(s1, s2) || !condition_b_on(g, s1, s2) {
                continue;
            }
            match flips_for_condition_a(g, s1, s2, opts.flip_budget, &mut nodes, opts.max_nodes) {
                FlipSearch::Found(flips) => {
                    return GenericOutcome {
                        holds: true,
                        witness: Some((s1.clone(), s2.clone())),
                        flips,
                        exhaustive: true,
                    }
                }
                FlipSearch::NotFound => {}
                FlipSearch::OutOfBudget => {
                    return GenericOutcome {
                        holds: false,
                        witness: None,
                        flips: Vec::new(),
                        exhaustive: false,
                    }
                }
            }
        }
    }
    GenericOutcome {
        holds: false,
        witness: None,
        flips: Vec::new(),
        exhaustive: true,
    }
}

enum FlipSearch {
    Found(Vec<(usize, usize)>),
    NotFound,
    OutOfBudget,
}

fn flips_for_condition_a(
    g: &GammaMatrix,
    s1: &[usize],
    s2: &[usize],
    per_column: usize,
    nodes: &mut usize,
    max_nodes: usize,
) -> FlipSearch {
    let zeros: Vec<(usize, usize)> = s1
        .iter()
        .chain(s2)
        .flat_map(|&j| (0..g.l()).map(move |l| (j, l)))
        .filter(|&(j, l)| g.get(j, l) == 0)
        .collect();
    let max_total = zeros.len().min(per_column * g.l());
    for total in 0..=max_total {
        for chosen in zeros.iter().copied().combinations(total) {
            *nodes += 1;
            if *nodes > max_nodes {
                return FlipSearch::OutOfBudget;
            }
            let mut per_col = vec![0usize; g.l()];
            if chosen.iter().any(|&(_, l)| {
                per_col[l] += 1;
                per_col[l] > per_column
            }) {
                continue;
            }
            let ones: HashSet<(usize, usize)> = chosen.iter().copied().collect();
            let flipped = Flipped { base: g, ones: &ones };
            let c1 = packed(&flipped, s1);
            let c2 = packed(&flipped, s2);
            if all_distinct(&c1) && all_distinct(&c2) && same_order(&c1, &c2) {
                return FlipSearch::Found(chosen);
            }
        }
    }
    FlipSearch::NotFound
}

/// Condition C plus the flip search on `Gamma(q, a0)`.
pub fn check_generic_gamma(
    q: &QMatrix,
    a0: &PatternSet,
    opts: &SearchOptions,
) -> Result<GenericOutcome> {
    let g = build_gamma(q, a0)?;
    if !check_condition_c(q, a0)? {
        return Ok(GenericOutcome {
            holds: false,
            witness: None,
            flips: Vec::new(),
            exhaustive: true,
        });
    }
    Ok(generic_flip_search(&g, opts))
}

/// Strict check, falling back to the generic flip search when C holds.
pub fn assess(q: &QMatrix, a0: &PatternSet, opts: &SearchOptions) -> Result<IdentifiabilityReport> {
    let mut report = check_strict(q, a0, opts)?;
    if report.verdict == Verdict::Unknown {
        let g = build_gamma(q, a0)?;
        let generic = generic_flip_search(&g, opts);
        if generic.holds {
            report.verdict = Verdict::Generic;
            report.notes.push(format!(
                "generic conditions hold with item sets {:?} after flips {:?}",
                generic.witness.as_ref().expect("witness present"),
                generic.flips
            ));
        } else if !generic.exhaustive {
            report.notes.push("generic flip search stopped at its node budget".into());
        }
    }
    Ok(report)
}

/// Q-level generic conditions: two disjoint item sets each matching every
/// attribute to a distinct item requiring it, with the remaining items
/// requiring every attribute at least once.
pub fn check_generic_q(q: &QMatrix) -> bool {
    const MAX_COVERS: usize = 100_000;
    let (j, k) = (q.j(), q.k());
    if j < 2 * k + 1 {
        return false;
    }
    // Heavier rows are tried first as coverage items, lighter rows first for matchings.
    let mut heavy: Vec<usize> = (0..j).collect();
    heavy.sort_by_key(|&i| (std::cmp::Reverse(q.row(i).count_ones()), i));
    let mut light: Vec<usize> = (0..j).collect();
    light.sort_by_key(|&i| (q.row(i).count_ones(), i));

    let mut cover = Vec::new();
    let mut visited = 0usize;
    let found = cover_then_match(q, &heavy, &light, &mut cover, &mut visited, MAX_COVERS);
    if !found && visited >= MAX_COVERS {
        log::warn!("generic Q check stopped after {MAX_COVERS} coverage sets");
    }
    found
}

fn cover_then_match(
    q: &QMatrix,
    heavy: &[usize],
    light: &[usize],
    cover: &mut Vec<usize>,
    visited: &mut usize,
    max_visits: usize,
) -> bool {
    *visited += 1;
    if *visited > max_visits {
        return false;
    }
    let k = q.k();
    let covered = cover
        .iter()
        .fold(AttributePattern::zeros(k).expect("valid K"), |acc, &i| acc.join(&q.row(i)));
    let Some(missing) = (0..k).find(|&a| !covered.get(a)) else {
        return double_matching(q, light, cover);
    };
    for &i in heavy {
        if q.entry(i, missing) && !cover.contains(&i) {
            cover.push(i);
            if cover_then_match(q, heavy, light, cover, visited, max_visits) {
                return true;
            }
            cover.pop();
            if *visited > max_visits {
                return false;
            }
        }
    }
    false
}

/// Every attribute matched to two distinct items (excluding `reserved`).
fn double_matching(q: &QMatrix, order: &[usize], reserved: &[usize]) -> bool {
    let k = q.k();
    let slots = 2 * k;
    let mut item_slot: HashMap<usize, usize> = HashMap::new();
    let usable: Vec<usize> = order
        .iter()
        .copied()
        .filter(|i| !reserved.contains(i))
        .collect();

    fn augment(
        slot: usize,
        q: &QMatrix,
        usable: &[usize],
        item_slot: &mut HashMap<usize, usize>,
        seen: &mut HashSet<usize>,
    ) -> bool {
        let attr = slot / 2;
        for &i in usable {
            if !q.entry(i, attr) || !seen.insert(i) {
                continue;
            }
            let prev = item_slot.get(&i).copied();
            if prev.is_none()
                || augment(prev.expect("checked"), q, usable, item_slot, seen)
            {
                item_slot.insert(i, slot);
                return true;
            }
        }
        false
    }

    (0..slots).all(|slot| augment(slot, q, &usable, &mut item_slot, &mut HashSet::new()))
}

/// Representatives of the Gamma-column equivalence classes of the two-parameter model.
#[derive(Clone, Debug)]
pub struct EquivalenceClasses {
    q: QMatrix,
    representatives: PatternSet,
}

impl EquivalenceClasses {
    /// Closure of `{0} ∪ {q_j}` under coordinatewise maximum, in canonical order.
    pub fn representatives(&self) -> &PatternSet {
        &self.representatives
    }

    pub fn len(&self) -> usize {
        self.representatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.representatives.is_empty()
    }

    /// Join of the Q rows that `alpha` dominates (all-zero when none).
    pub fn representative_of(&self, alpha: &AttributePattern) -> AttributePattern {
        class_representative(&self.q, alpha)
    }

    pub fn is_representative(&self, alpha: &AttributePattern) -> bool {
        self.representative_of(alpha) == *alpha
    }
}

fn class_representative(q: &QMatrix, alpha: &AttributePattern) -> AttributePattern {
    q.rows()
        .iter()
        .filter(|qj| alpha.covers(qj))
        .fold(AttributePattern::zeros(q.k()).expect("valid K"), |acc, qj| {
            acc.join(qj)
        })
}

pub fn equivalence_classes(q: &QMatrix) -> Result<EquivalenceClasses> {
    let k = q.k();
    let mut closure: HashSet<u64> = HashSet::from([0u64]);
    for qj in q.rows() {
        let joined: Vec<u64> = closure.iter().map(|&s| s | qj.bits()).collect();
        closure.extend(joined);
    }
    let members = closure
        .into_iter()
        .map(|b| AttributePattern::new(k, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(EquivalenceClasses {
        q: q.clone(),
        representatives: PatternSet::from_unsorted(k, members)?,
    })
}

/// Conditions A and B on the representatives; C holds automatically for them.
pub fn check_partial(
    q: &QMatrix,
    a_rep: &PatternSet,
    opts: &SearchOptions,
) -> Result<IdentifiabilityReport> {
    if let Some(bad) = a_rep.iter().find(|a| class_representative(q, a) != **a) {
        return Err(SlamError::NotRepresentative(bad.to_binary_string()));
    }
    let g = build_gamma(q, a_rep)?;
    let notes = vec!["Condition C holds for class representatives".to_string()];
    Ok(report_from_search(&g, true, Verdict::PartialOnly, opts, notes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::tests::q52;
    use crate::response::t_rank_probe;

    fn pat(s: &str) -> AttributePattern {
        AttributePattern::parse(s).unwrap()
    }

    fn pset(xs: &[&str]) -> PatternSet {
        PatternSet::new(xs[0].len(), xs.iter().map(|s| pat(s)).collect()).unwrap()
    }

    fn opts() -> SearchOptions {
        SearchOptions::default()
    }

    #[test]
    fn stacked_design_is_strict() {
        let a0 = pset(&["01", "10"]);
        let report = check_strict(&q52(), &a0, &opts()).unwrap();
        assert_eq!(report.verdict, Verdict::Strict);
        assert!(report.condition_b && report.condition_c);
        let (s1, s2) = report.condition_a.clone().unwrap();
        let g = build_gamma(&q52(), &a0).unwrap();
        assert!(verify_condition_a(&g, &s1, &s2).unwrap());
        // The pair of identity blocks is also a witness for both conditions.
        assert!(verify_condition_a(&g, &[0, 1], &[2, 3]).unwrap());
        assert!(check_condition_b(&g, &[0, 1], &[2, 3]).unwrap());
        // Smallest witness in search order: single rows 0 and 2.
        assert_eq!(report.condition_a, Some((vec![0], vec![2])));
    }

    #[test]
    fn two_item_design_fails_condition_c() {
        let q = QMatrix::from_rows(&[vec![0, 1], vec![1, 1]]).unwrap();
        let a0 = pset(&["00", "01"]);
        assert!(!check_condition_c(&q, &a0).unwrap());
        let report = check_strict(&q, &a0, &opts()).unwrap();
        assert_eq!(report.verdict, Verdict::FailsNecessary);
    }

    #[test]
    fn condition_c_examples() {
        let q = QMatrix::identity(3).unwrap();
        let a0 = pset(&["011", "100"]);
        assert!(check_condition_c(&q, &a0).unwrap());
        let q = QMatrix::from_rows(&[vec![0, 1], vec![1, 1]]).unwrap();
        assert!(check_condition_c(&q, &PatternSet::full(2).unwrap()).unwrap());
        let big = QMatrix::identity(21).unwrap();
        assert!(check_condition_c(&big, &PatternSet::empty(21).unwrap()).is_err());
    }

    #[test]
    fn condition_a_examples() {
        let a = pset(&["01", "10"]);
        let flat = GammaMatrix::from_rows(&[vec![1, 1], vec![0, 0], vec![1, 1]], a).unwrap();
        let out = check_condition_a(&flat, &opts());
        assert!(out.witness.is_none());
        assert!(out.exhaustive);

        let single = GammaMatrix::from_rows(&[vec![1], vec![0], vec![1]], pset(&["11"])).unwrap();
        assert_eq!(
            check_condition_a(&single, &opts()).witness,
            Some((vec![0], vec![1]))
        );
        assert!(check_condition_b(&single, &[0], &[1]).unwrap());
    }

    #[test]
    fn condition_b_without_remaining_items() {
        let a = pset(&["00", "11"]);
        let g = GammaMatrix::from_rows(&[vec![0, 1], vec![0, 1]], a).unwrap();
        assert!(!check_condition_b(&g, &[0], &[1]).unwrap());
        assert!(check_condition_b(&g, &[0], &[0]).is_err());
    }

    #[test]
    fn singleton_with_identity_q_is_strict() {
        let report = check_strict(&QMatrix::identity(3).unwrap(), &pset(&["101"]), &opts()).unwrap();
        assert_eq!(report.verdict, Verdict::Strict);
    }

    #[test]
    fn equivalence_class_examples() {
        let q = QMatrix::from_rows(&[vec![0, 1], vec![1, 1]]).unwrap();
        let classes = equivalence_classes(&q).unwrap();
        assert_eq!(classes.representatives().to_strings(), vec!["00", "01", "11"]);
        assert_eq!(classes.representative_of(&pat("10")), pat("00"));

        let q = QMatrix::identity(3).unwrap();
        assert_eq!(equivalence_classes(&q).unwrap().len(), 8);

        let q = QMatrix::from_rows(&[vec![1, 1]]).unwrap();
        assert_eq!(
            equivalence_classes(&q).unwrap().representatives().to_strings(),
            vec!["00", "11"]
        );
    }

    #[test]
    fn partial_examples() {
        let id = QMatrix::identity(2).unwrap();
        let q = id.stack(&id).unwrap().stack(&id).unwrap();
        let reps = equivalence_classes(&q).unwrap().representatives().clone();
        let report = check_partial(&q, &reps, &opts()).unwrap();
        assert_eq!(report.verdict, Verdict::PartialOnly);

        let report = check_partial(&q, &pset(&["00"]), &opts()).unwrap();
        assert_eq!(report.verdict, Verdict::PartialOnly);

        // Two members with one Gamma column means one of them is not a representative.
        let q = QMatrix::from_rows(&[vec![0, 1], vec![1, 1]]).unwrap();
        assert!(matches!(
            check_partial(&q, &pset(&["00", "10"]), &opts()),
            Err(SlamError::NotRepresentative(_))
        ));
    }

    #[test]
    fn generic_q_examples() {
        let id = QMatrix::identity(3).unwrap();
        assert!(check_generic_q(&id.stack(&id).unwrap().stack(&id).unwrap()));
        assert!(!check_generic_q(&id.stack(&id).unwrap()));
        let missing = QMatrix::from_rows(&[
            vec![1, 0],
            vec![1, 0],
            vec![1, 0],
            vec![1, 0],
            vec![1, 0],
        ])
        .unwrap();
        assert!(!check_generic_q(&missing));
        // Coverage only works if the heavy row is kept out of the matchings.
        let q = QMatrix::from_rows(&[
            vec![1, 1],
            vec![1, 0],
            vec![0, 1],
            vec![1, 0],
            vec![0, 1],
        ])
        .unwrap();
        assert!(check_generic_q(&q));
    }

    #[test]
    fn generic_gamma_examples() {
        let a0 = pset(&["01", "10"]);
        let out = check_generic_gamma(&q52(), &a0, &opts()).unwrap();
        assert!(out.holds);
        assert!(out.flips.is_empty());

        // Identical columns stay comparable under the original orders, so B fails.
        let twins = GammaMatrix::from_rows(
            &[vec![1, 1], vec![0, 0], vec![1, 1]],
            pset(&["01", "10"]),
        )
        .unwrap();
        let out = generic_flip_search(&twins, &SearchOptions {
            flip_max_subset_size: Some(2),
            ..opts()
        });
        assert!(!out.holds);
        assert!(out.exhaustive);
    }

    #[test]
    fn generic_flip_repairs_zero_column() {
        // Rows 0-1 and 2-3 are identity-like blocks, but pattern 2's column is
        // zero in the first block; row 4 separates comparable pairs.
        let a = pset(&["00", "01", "10"]);
        let g = GammaMatrix::from_rows(
            &[
                vec![0, 1, 0],
                vec![0, 0, 0],
                vec![0, 1, 0],
                vec![0, 0, 1],
                vec![1, 0, 1],
                vec![1, 1, 0],
            ],
            a,
        )
        .unwrap();
        let strict = search_witness(&g, &opts(), true);
        assert!(strict.witness.is_none());
        let out = generic_flip_search(&g, &opts());
        assert!(out.holds, "{out:?}");
        let ones: HashSet<(usize, usize)> = out.flips.iter().copied().collect();
        let flipped = Flipped { base: &g, ones: &ones };
        let rows: Vec<Vec<u8>> = (0..g.j())
            .map(|j| (0..g.l()).map(|l| flipped.at(j, l)).collect())
            .collect();
        let gt = GammaMatrix::from_rows(&rows, g.patterns().clone()).unwrap();
        let (s1, s2) = out.witness.unwrap();
        assert!(verify_condition_a(&gt, &s1, &s2).unwrap());
        assert!(check_condition_b(&g, &s1, &s2).unwrap());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn q_strategy(k: usize) -> impl Strategy<Value = QMatrix> {
            proptest::collection::vec(proptest::collection::vec(0u8..2, k), 1..7)
                .prop_map(|rows| QMatrix::from_rows(&rows).unwrap())
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn classes_match_gamma_columns(q in (1usize..=4).prop_flat_map(q_strategy)) {
                let k = q.k();
                let full = PatternSet::full(k).unwrap();
                let g = build_gamma(&q, &full).unwrap();
                let classes = equivalence_classes(&q).unwrap();
                let all: Vec<usize> = (0..q.j()).collect();
                for a in 0..full.len() {
                    for b in 0..full.len() {
                        let same_col = g.column_key(a, &all) == g.column_key(b, &all);
                        let same_rep = classes.representative_of(&full.get(a))
                            == classes.representative_of(&full.get(b));
                        prop_assert_eq!(same_col, same_rep);
                    }
                }
                let reps = classes.representatives();
                prop_assert!(reps.len() <= 1 << k);
                for x in reps.iter() {
                    prop_assert!(classes.is_representative(x));
                    for y in reps.iter() {
                        prop_assert!(reps.contains(&x.join(y)));
                    }
                }
            }

            #[test]
            fn condition_c_failure_persists_in_supersets(
                q in (1usize..=3).prop_flat_map(q_strategy),
                seed_bits in any::<u64>(),
            ) {
                let k = q.k();
                let full = PatternSet::full(k).unwrap();
                let members: Vec<AttributePattern> = full
                    .iter()
                    .copied()
                    .filter(|p| (seed_bits >> p.bits()) & 1 == 1)
                    .collect();
                let a0 = PatternSet::new(k, members.clone()).unwrap();
                if !check_condition_c(&q, &a0).unwrap() {
                    let classes = equivalence_classes(&q).unwrap();
                    // A colliding outside pattern stays outside any superset that omits it.
                    let colliding = full.iter().find(|p| {
                        !a0.contains(p)
                            && a0.iter().any(|m| classes.representative_of(m) == classes.representative_of(p))
                    }).copied().unwrap();
                    for extra in full.iter().filter(|p| **p != colliding && !a0.contains(p)) {
                        let mut bigger = members.clone();
                        bigger.push(*extra);
                        let sup = PatternSet::from_unsorted(k, bigger).unwrap();
                        prop_assert!(!check_condition_c(&q, &sup).unwrap());
                    }
                }
            }

            #[test]
            fn strict_witness_blocks_have_full_rank(
                q in (2usize..=3).prop_flat_map(q_strategy),
                seed_bits in any::<u64>(),
            ) {
                let k = q.k();
                let members: Vec<AttributePattern> = PatternSet::full(k).unwrap()
                    .iter()
                    .copied()
                    .filter(|p| (seed_bits >> p.bits()) & 1 == 1)
                    .collect();
                prop_assume!(!members.is_empty());
                let a0 = PatternSet::new(k, members).unwrap();
                let report = check_strict(&q, &a0, &opts()).unwrap();
                if report.verdict == Verdict::Strict {
                    let g = build_gamma(&q, &a0).unwrap();
                    let (s1, s2) = report.condition_a.unwrap();
                    for s in [s1, s2] {
                        if !s.is_empty() {
                            prop_assert!(t_rank_probe(&g.select_rows(&s).unwrap(), 3, 11).unwrap());
                        }
                    }
                }
            }
        }
    }
}
