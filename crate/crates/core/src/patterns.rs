//! Attribute patterns, Q-matrices and Gamma (ideal response) matrices.
//!
//! A pattern is stored as a `u64` word whose integer value is the canonical
//! order: attribute 1 is the most significant of the `K` used bits.

use std::collections::HashMap;
use std::fmt;

use serde::{Serialize, Serializer};

use crate::error::{Result, SlamError};

/// Largest number of attributes representable by [`AttributePattern`].
pub const MAX_ATTRIBUTES: usize = 64;

/// Largest `K` for which the full pattern space may be enumerated.
pub const MAX_ENUMERABLE_ATTRIBUTES: usize = 24;

#[inline]
fn mask_for(k: usize) -> u64 {
    if k == 64 {
        u64::MAX
    } else {
        (1u64 << k) - 1
    }
}

/// A K-dimensional binary attribute profile.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributePattern {
    k: u8,
    bits: u64,
}

impl AttributePattern {
    pub fn new(k: usize, bits: u64) -> Result<Self> {
        check_k(k)?;
        if bits & !mask_for(k) != 0 {
            return Err(SlamError::DimensionMismatch(format!(
                "bit word {bits:#x} has bits beyond K = {k}"
            )));
        }
        Ok(Self { k: k as u8, bits })
    }

    pub fn zeros(k: usize) -> Result<Self> {
        Self::new(k, 0)
    }

    pub fn ones(k: usize) -> Result<Self> {
        check_k(k)?;
        Ok(Self {
            k: k as u8,
            bits: mask_for(k),
        })
    }

    /// Builds a pattern from entries `(alpha_1, ..., alpha_K)`, each 0 or 1.
    pub fn from_entries(entries: &[u8]) -> Result<Self> {
        let k = entries.len();
        check_k(k)?;
        let mut bits = 0u64;
        for (pos, &e) in entries.iter().enumerate() {
            match e {
                0 => {}
                1 => bits |= 1u64 << (k - 1 - pos),
                other => {
                    return Err(SlamError::InvalidParameter(format!(
                        "pattern entry {other} at position {pos} is not binary"
                    )))
                }
            }
        }
        Ok(Self { k: k as u8, bits })
    }

    /// Number of attributes.
    #[inline]
    pub fn k(&self) -> usize {
        self.k as usize
    }

    /// Canonical integer value.
    #[inline]
    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// Entry for attribute `attr` (0-based).
    #[inline]
    pub fn get(&self, attr: usize) -> bool {
        debug_assert!(attr < self.k());
        (self.bits >> (self.k() - 1 - attr)) & 1 == 1
    }

    #[inline]
    pub fn with(&self, attr: usize, value: bool) -> Self {
        let bit = 1u64 << (self.k() - 1 - attr);
        let bits = if value {
            self.bits | bit
        } else {
            self.bits & !bit
        };
        Self { k: self.k, bits }
    }

    pub fn entries(&self) -> Vec<u8> {
        (0..self.k()).map(|a| self.get(a) as u8).collect()
    }

    /// Number of attributes possessed.
    #[inline]
    pub fn count_ones(&self) -> u32 {
        self.bits.count_ones()
    }

    /// `self >= other` entrywise. Both patterns must share `K`.
    #[inline]
    pub fn covers(&self, other: &Self) -> bool {
        self.bits & other.bits == other.bits
    }

    /// Coordinatewise maximum.
    #[inline]
    pub fn join(&self, other: &Self) -> Self {
        Self {
            k: self.k,
            bits: self.bits | other.bits,
        }
    }

    /// Binary string `alpha_1 ... alpha_K`.
    pub fn to_binary_string(&self) -> String {
        (0..self.k())
            .map(|a| if self.get(a) { '1' } else { '0' })
            .collect()
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let entries = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                other => Err(SlamError::InvalidParameter(format!(
                    "character {other:?} in pattern string {s:?}"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        if entries.is_empty() {
            return Err(SlamError::Empty("pattern string".into()));
        }
        Self::from_entries(&entries)
    }
}

impl fmt::Debug for AttributePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.to_binary_string())
    }
}

impl fmt::Display for AttributePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_binary_string())
    }
}

impl Serialize for AttributePattern {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_binary_string())
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(SlamError::DimensionMismatch("K must be at least 1".into()));
    }
    if k > MAX_ATTRIBUTES {
        return Err(SlamError::TooManyAttributes(k, MAX_ATTRIBUTES));
    }
    Ok(())
}

/// `alpha >= q` entrywise.
pub fn dominates(alpha: &AttributePattern, q: &AttributePattern) -> Result<bool> {
    if alpha.k() != q.k() {
        return Err(SlamError::DimensionMismatch(format!(
            "pattern has K = {}, requirement row has K = {}",
            alpha.k(),
            q.k()
        )));
    }
    Ok(alpha.covers(q))
}

/// Ordered, duplicate-free collection of patterns sharing one `K`.
#[derive(Clone, PartialEq, Eq)]
pub struct PatternSet {
    k: usize,
    members: Vec<AttributePattern>,
    index: HashMap<u64, usize>,
}

impl PatternSet {
    /// Keeps the given order; rejects duplicates and mixed `K`.
    pub fn new(k: usize, members: Vec<AttributePattern>) -> Result<Self> {
        check_k(k)?;
        let mut index = HashMap::with_capacity(members.len());
        for (pos, m) in members.iter().enumerate() {
            if m.k() != k {
                return Err(SlamError::DimensionMismatch(format!(
                    "member {m} has K = {}, set has K = {k}",
                    m.k()
                )));
            }
            if index.insert(m.bits(), pos).is_some() {
                return Err(SlamError::InvalidParameter(format!(
                    "duplicate pattern {m} in pattern set"
                )));
            }
        }
        Ok(Self { k, members, index })
    }

    /// Deduplicates and sorts into canonical order.
    pub fn from_unsorted(k: usize, mut members: Vec<AttributePattern>) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        Self::new(k, members)
    }

    pub fn empty(k: usize) -> Result<Self> {
        Self::new(k, Vec::new())
    }

    /// The saturated space `{0,1}^K` in canonical order.
    pub fn full(k: usize) -> Result<Self> {
        check_k(k)?;
        if k > MAX_ENUMERABLE_ATTRIBUTES {
            return Err(SlamError::TooManyAttributes(k, MAX_ENUMERABLE_ATTRIBUTES));
        }
        let members = (0..(1u64 << k))
            .map(|bits| AttributePattern { k: k as u8, bits })
            .collect();
        Self::new(k, members)
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.members.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    #[inline]
    pub fn members(&self) -> &[AttributePattern] {
        &self.members
    }

    #[inline]
    pub fn get(&self, pos: usize) -> AttributePattern {
        self.members[pos]
    }

    pub fn iter(&self) -> impl Iterator<Item = &AttributePattern> + '_ {
        self.members.iter()
    }

    #[inline]
    pub fn contains(&self, p: &AttributePattern) -> bool {
        p.k() == self.k && self.index.contains_key(&p.bits())
    }

    #[inline]
    pub fn position(&self, p: &AttributePattern) -> Option<usize> {
        if p.k() != self.k {
            return None;
        }
        self.index.get(&p.bits()).copied()
    }

    /// Members sorted into canonical order.
    pub fn canonical(&self) -> Self {
        let mut m = self.members.clone();
        m.sort_unstable();
        Self::new(self.k, m).expect("sorting preserves validity")
    }

    fn same_k(&self, other: &Self) -> Result<()> {
        if self.k != other.k {
            return Err(SlamError::DimensionMismatch(format!(
                "pattern sets have K = {} and K = {}",
                self.k, other.k
            )));
        }
        Ok(())
    }

    /// Members of `self` not in `other`, in `self`'s order.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        self.same_k(other)?;
        let m = self
            .members
            .iter()
            .filter(|p| !other.contains(p))
            .copied()
            .collect();
        Self::new(self.k, m)
    }

    /// Members of both, in `self`'s order.
    pub fn intersection(&self, other: &Self) -> Result<Self> {
        self.same_k(other)?;
        let m = self
            .members
            .iter()
            .filter(|p| other.contains(p))
            .copied()
            .collect();
        Self::new(self.k, m)
    }

    /// Union in canonical order.
    pub fn union(&self, other: &Self) -> Result<Self> {
        self.same_k(other)?;
        let mut m = self.members.clone();
        m.extend(other.members.iter().copied());
        Self::from_unsorted(self.k, m)
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.members.iter().map(|p| p.to_binary_string()).collect()
    }
}

impl fmt::Debug for PatternSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.members.iter()).finish()
    }
}

impl Serialize for PatternSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.members.iter())
    }
}

/// J x K binary design matrix; row `j` is the requirement vector `q_j`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct QMatrix {
    k: usize,
    rows: Vec<AttributePattern>,
}

impl QMatrix {
    pub fn new(k: usize, rows: Vec<AttributePattern>) -> Result<Self> {
        check_k(k)?;
        if rows.is_empty() {
            return Err(SlamError::Empty("Q-matrix has no rows".into()));
        }
        for (j, r) in rows.iter().enumerate() {
            if r.k() != k {
                return Err(SlamError::DimensionMismatch(format!(
                    "Q row {j} has K = {}, expected {k}",
                    r.k()
                )));
            }
            if r.bits() == 0 {
                log::warn!("Q-matrix row {j} is all zero; item {j} constrains no attribute");
            }
        }
        Ok(Self { k, rows })
    }

    /// From nested 0/1 rows.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| SlamError::Empty("Q-matrix has no rows".into()))?;
        let k = first.len();
        let parsed = rows
            .iter()
            .enumerate()
            .map(|(j, r)| {
                if r.len() != k {
                    return Err(SlamError::DimensionMismatch(format!(
                        "Q row {j} has {} entries, expected {k}",
                        r.len()
                    )));
                }
                AttributePattern::from_entries(r)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(k, parsed)
    }

    /// Identity `I_K`.
    pub fn identity(k: usize) -> Result<Self> {
        check_k(k)?;
        let rows = (0..k)
            .map(|a| AttributePattern::zeros(k).map(|z| z.with(a, true)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(k, rows)
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn stack(&self, other: &Self) -> Result<Self> {
        if self.k != other.k {
            return Err(SlamError::DimensionMismatch(format!(
                "cannot stack K = {} over K = {}",
                self.k, other.k
            )));
        }
        let mut rows = self.rows.clone();
        rows.extend_from_slice(&other.rows);
        Self::new(self.k, rows)
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn j(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn row(&self, j: usize) -> AttributePattern {
        self.rows[j]
    }

    #[inline]
    pub fn rows(&self) -> &[AttributePattern] {
        &self.rows
    }

    #[inline]
    pub fn entry(&self, j: usize, k: usize) -> bool {
        self.rows[j].get(k)
    }

    /// Required attributes of item `j` (0-based, ascending).
    pub fn required(&self, j: usize) -> Vec<usize> {
        (0..self.k).filter(|&a| self.rows[j].get(a)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        self.rows.iter().map(|r| r.entries()).collect()
    }
}

/// `C_j = {alpha in A : alpha >= q_j}`.
pub fn constraint_set(q: &QMatrix, j: usize, a: &PatternSet) -> Result<PatternSet> {
    if j >= q.j() {
        return Err(SlamError::IndexOutOfRange {
            what: "item",
            index: j,
            len: q.j(),
        });
    }
    if q.k() != a.k() {
        return Err(SlamError::DimensionMismatch(format!(
            "Q has K = {}, pattern set has K = {}",
            q.k(),
            a.k()
        )));
    }
    let qj = q.row(j);
    let m = a.iter().filter(|p| p.covers(&qj)).copied().collect();
    PatternSet::new(a.k(), m)
}

/// J x L binary matrix `Gamma_{j,alpha} = I(alpha >= q_j)` with pattern column labels.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct GammaMatrix {
    j: usize,
    patterns: PatternSet,
    /// Row-major J x L.
    data: Vec<u8>,
}

/// Builds the Gamma matrix of `q` over the columns `a` (in `a`'s order).
pub fn build_gamma(q: &QMatrix, a: &PatternSet) -> Result<GammaMatrix> {
    if q.k() != a.k() {
        return Err(SlamError::DimensionMismatch(format!(
            "Q has K = {}, pattern set has K = {}",
            q.k(),
            a.k()
        )));
    }
    let l = a.len();
    let mut data = vec![0u8; q.j() * l];
    for (j, qj) in q.rows().iter().enumerate() {
        let row = &mut data[j * l..(j + 1) * l];
        for (cell, p) in row.iter_mut().zip(a.iter()) {
            *cell = p.covers(qj) as u8;
        }
    }
    Ok(GammaMatrix {
        j: q.j(),
        patterns: a.clone(),
        data,
    })
}

impl GammaMatrix {
    /// From explicit entries; `rows[j][l]` for pattern `patterns[l]`.
    pub fn from_rows(rows: &[Vec<u8>], patterns: PatternSet) -> Result<Self> {
        let l = patterns.len();
        let mut data = Vec::with_capacity(rows.len() * l);
        for (j, r) in rows.iter().enumerate() {
            if r.len() != l {
                return Err(SlamError::DimensionMismatch(format!(
                    "Gamma row {j} has {} entries, expected {l}",
                    r.len()
                )));
            }
            for &e in r {
                if e > 1 {
                    return Err(SlamError::InvalidParameter(format!(
                        "Gamma entry {e} in row {j} is not binary"
                    )));
                }
                data.push(e);
            }
        }
        Ok(Self {
            j: rows.len(),
            patterns,
            data,
        })
    }

    #[inline]
    pub fn j(&self) -> usize {
        self.j
    }

    /// Number of columns.
    #[inline]
    pub fn l(&self) -> usize {
        self.patterns.len()
    }

    #[inline]
    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    #[inline]
    pub fn get(&self, j: usize, l: usize) -> u8 {
        self.data[j * self.l() + l]
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[u8] {
        let l = self.l();
        &self.data[j * l..(j + 1) * l]
    }

    pub fn column(&self, l: usize) -> Vec<u8> {
        (0..self.j).map(|j| self.get(j, l)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.j).map(|j| self.row(j).to_vec()).collect()
    }

    /// Sub-matrix on the given rows (in the given order).
    pub fn select_rows(&self, items: &[usize]) -> Result<Self> {
        self.check_items(items)?;
        let rows: Vec<Vec<u8>> = items.iter().map(|&j| self.row(j).to_vec()).collect();
        Self::from_rows(&rows, self.patterns.clone())
    }

    /// Sub-matrix on the given columns (in the given order).
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let members = cols
            .iter()
            .map(|&c| {
                if c >= self.l() {
                    Err(SlamError::IndexOutOfRange {
                        what: "column",
                        index: c,
                        len: self.l(),
                    })
                } else {
                    Ok(self.patterns.get(c))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let patterns = PatternSet::new(self.patterns.k(), members)?;
        let rows: Vec<Vec<u8>> = (0..self.j)
            .map(|j| cols.iter().map(|&c| self.get(j, c)).collect())
            .collect();
        Self::from_rows(&rows, patterns)
    }

    pub(crate) fn check_items(&self, items: &[usize]) -> Result<()> {
        for &j in items {
            if j >= self.j {
                return Err(SlamError::IndexOutOfRange {
                    what: "item",
                    index: j,
                    len: self.j,
                });
            }
        }
        Ok(())
    }

    fn column_of(&self, p: &AttributePattern) -> Result<usize> {
        self.patterns
            .position(p)
            .ok_or_else(|| SlamError::UnknownPattern(p.to_binary_string()))
    }

    /// Column `l` restricted to `items`, packed into 64-bit words.
    pub fn column_key(&self, l: usize, items: &[usize]) -> Vec<u64> {
        let mut key = vec![0u64; items.len().div_ceil(64).max(1)];
        for (pos, &j) in items.iter().enumerate() {
            if self.get(j, l) == 1 {
                key[pos / 64] |= 1u64 << (pos % 64);
            }
        }
        key
    }

    /// Whether the columns restricted to `items` are pairwise distinct.
    pub fn distinct_columns(&self, items: &[usize]) -> bool {
        let mut seen = std::collections::HashSet::with_capacity(self.l());
        (0..self.l()).all(|l| seen.insert(self.column_key(l, items)))
    }

    /// `alpha_{l1} >=_S alpha_{l2}` by column index.
    #[inline]
    pub(crate) fn order_holds_idx(&self, items: &[usize], l1: usize, l2: usize) -> bool {
        items.iter().all(|&j| self.get(j, l1) >= self.get(j, l2))
    }
}

/// `a1 >=_S a2`: `Gamma_{j,a1} >= Gamma_{j,a2}` for every `j` in `items`.
pub fn partial_order_holds(
    g: &GammaMatrix,
    items: &[usize],
    a1: &AttributePattern,
    a2: &AttributePattern,
) -> Result<bool> {
    g.check_items(items)?;
    let l1 = g.column_of(a1)?;
    let l2 = g.column_of(a2)?;
    Ok(g.order_holds_idx(items, l1, l2))
}

/// Whether the partial orders induced by two item sets agree on every ordered pair.
pub fn orders_equal(g: &GammaMatrix, s1: &[usize], s2: &[usize]) -> Result<bool> {
    g.check_items(s1)?;
    g.check_items(s2)?;
    Ok(orders_equal_unchecked(g, s1, s2))
}

pub(crate) fn orders_equal_unchecked(g: &GammaMatrix, s1: &[usize], s2: &[usize]) -> bool {
    let l = g.l();
    for a in 0..l {
        for b in 0..l {
            if a != b && g.order_holds_idx(s1, a, b) != g.order_holds_idx(s2, a, b) {
                return false;
            }
        }
    }
    true
}
