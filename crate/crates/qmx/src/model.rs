//! Core domain types: attribute profiles, Q-matrices, item parameters,
//! attribute distributions, and response data.
//!
//! Conventions used throughout the crate:
//! - Attribute `j` (0-based) of a profile maps to bit `j` of the profile
//!   index, least significant bit first. All `2^k`-wide structures (columns
//!   of moment matrices, entries of an [`AttributeDistribution`]) are ordered
//!   by ascending profile index. For `k = 2` that order is
//!   `00, 10, 01, 11` (attribute 1 first).
//! - Item `i` (0-based) of an item subset maps to bit `i` of the subset
//!   bitmask.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Maximum number of attributes. `2^k` column structures are dense, so this
/// is a hard cap rather than a soft recommendation.
pub const MAX_ATTRS: usize = 20;

/// Maximum number of items. Item subsets and response rows are stored as
/// `u64` bitmasks.
pub const MAX_ITEMS: usize = 64;

/// Which diagnostic classification model links attributes to capability.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Conjunctive: capable of an item only when possessing every required
    /// attribute.
    Dina,
    /// Disjunctive: capable of an item when possessing at least one required
    /// attribute.
    Dino,
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Model::Dina => write!(f, "dina"),
            Model::Dino => write!(f, "dino"),
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dina" => Ok(Model::Dina),
            "dino" => Ok(Model::Dino),
            other => Err(Error::InvalidValue {
                what: "model",
                detail: format!("expected \"dina\" or \"dino\", got {other:?}"),
            }),
        }
    }
}

/// A binary attribute profile of length `k`, identified with an integer in
/// `[0, 2^k)` whose bit `j` is attribute `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AttributeProfile {
    k: usize,
    index: u32,
}

impl AttributeProfile {
    pub fn new(k: usize, index: u32) -> Result<Self> {
        check_num_attrs(k)?;
        if (index as usize) >= (1usize << k) {
            return Err(Error::IndexOutOfRange {
                what: "attribute profile index",
                index: index as usize,
                len: 1usize << k,
            });
        }
        Ok(Self { k, index })
    }

    /// Builds a profile from explicit 0/1 bits, attribute 0 first.
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        check_num_attrs(bits.len())?;
        let mut index = 0u32;
        for (j, &b) in bits.iter().enumerate() {
            match b {
                0 => {}
                1 => index |= 1 << j,
                other => {
                    return Err(Error::InvalidValue {
                        what: "attribute profile bit",
                        detail: format!("expected 0 or 1, got {other}"),
                    })
                }
            }
        }
        Ok(Self { k: bits.len(), index })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    /// Attribute-possession bitmask (bit `j` = attribute `j`).
    pub fn mask(&self) -> u64 {
        self.index as u64
    }

    pub fn has(&self, attr: usize) -> bool {
        attr < self.k && (self.index >> attr) & 1 == 1
    }

    pub fn bits(&self) -> Vec<u8> {
        (0..self.k).map(|j| ((self.index >> j) & 1) as u8).collect()
    }

    /// The complementary profile (every attribute flipped).
    pub fn complement(&self) -> Self {
        Self {
            k: self.k,
            index: !self.index & ((1u32 << self.k) - 1),
        }
    }

    /// All `2^k` profiles in ascending index order.
    pub fn all(k: usize) -> impl Iterator<Item = AttributeProfile> {
        (0..(1u32 << k)).map(move |index| AttributeProfile { k, index })
    }
}

fn check_num_attrs(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Empty { what: "attribute set" });
    }
    if k > MAX_ATTRS {
        return Err(Error::TooLarge {
            what: "number of attributes",
            value: k,
            limit: MAX_ATTRS,
        });
    }
    Ok(())
}

fn check_num_items(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::Empty { what: "item set" });
    }
    if m > MAX_ITEMS {
        return Err(Error::TooLarge {
            what: "number of items",
            value: m,
            limit: MAX_ITEMS,
        });
    }
    Ok(())
}

/// An `m x k` binary item-attribute incidence matrix with an optional
/// known/unknown mask for partially specified matrices.
///
/// Entry `(i, j) = 1` means item `i` requires attribute `j`. A masked-out
/// entry ("unknown") carries a placeholder value of 0 and is reported by
/// [`QMatrix::is_known`] as `false`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct QMatrix {
    m: usize,
    k: usize,
    /// Per-item attribute requirement bitmask.
    rows: Vec<u64>,
    /// Per-item bitmask of entries fixed a priori (all-ones when fully known).
    known: Vec<u64>,
}

impl QMatrix {
    /// Fully specified matrix from 0/1 row slices.
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let m = rows.len();
        check_num_items(m)?;
        let k = rows[0].len();
        check_num_attrs(k)?;
        let mut packed = Vec::with_capacity(m);
        for row in rows {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    context: "Q-matrix row length",
                    expected: k,
                    actual: row.len(),
                });
            }
            let mut mask = 0u64;
            for (j, &e) in row.iter().enumerate() {
                match e {
                    0 => {}
                    1 => mask |= 1 << j,
                    other => {
                        return Err(Error::InvalidValue {
                            what: "Q-matrix entry",
                            detail: format!("expected 0 or 1, got {other}"),
                        })
                    }
                }
            }
            packed.push(mask);
        }
        let known = vec![full_mask(k); m];
        Ok(Self { m, k, rows: packed, known })
    }

    /// Partially specified matrix: entry value `-1` means unknown.
    pub fn from_masked_entries(entries: &[Vec<i8>]) -> Result<Self> {
        let m = entries.len();
        check_num_items(m)?;
        let k = entries[0].len();
        check_num_attrs(k)?;
        let mut rows = Vec::with_capacity(m);
        let mut known = Vec::with_capacity(m);
        for row in entries {
            if row.len() != k {
                return Err(Error::DimensionMismatch {
                    context: "Q-matrix row length",
                    expected: k,
                    actual: row.len(),
                });
            }
            let mut r = 0u64;
            let mut kn = 0u64;
            for (j, &e) in row.iter().enumerate() {
                match e {
                    0 => kn |= 1 << j,
                    1 => {
                        r |= 1 << j;
                        kn |= 1 << j;
                    }
                    -1 => {}
                    other => {
                        return Err(Error::InvalidValue {
                            what: "Q-matrix entry",
                            detail: format!("expected 0, 1, or -1, got {other}"),
                        })
                    }
                }
            }
            rows.push(r);
            known.push(kn);
        }
        Ok(Self { m, k, rows, known })
    }

    /// Builds from raw bitmasks. `rows[i]` bit `j` is entry `(i, j)`.
    pub fn from_bitmasks(m: usize, k: usize, rows: Vec<u64>, known: Option<Vec<u64>>) -> Result<Self> {
        check_num_items(m)?;
        check_num_attrs(k)?;
        if rows.len() != m {
            return Err(Error::DimensionMismatch {
                context: "Q-matrix row count",
                expected: m,
                actual: rows.len(),
            });
        }
        let full = full_mask(k);
        if rows.iter().any(|&r| r & !full != 0) {
            return Err(Error::InvalidValue {
                what: "Q-matrix row bitmask",
                detail: "bits set beyond attribute count".into(),
            });
        }
        let known = match known {
            Some(kn) => {
                if kn.len() != m {
                    return Err(Error::DimensionMismatch {
                        context: "Q-matrix mask row count",
                        expected: m,
                        actual: kn.len(),
                    });
                }
                kn.into_iter().map(|x| x & full).collect()
            }
            None => vec![full; m],
        };
        Ok(Self { m, k, rows, known })
    }

    pub fn num_items(&self) -> usize {
        self.m
    }

    pub fn num_attrs(&self) -> usize {
        self.k
    }

    pub fn entry(&self, item: usize, attr: usize) -> u8 {
        ((self.rows[item] >> attr) & 1) as u8
    }

    pub fn is_known(&self, item: usize, attr: usize) -> bool {
        (self.known[item] >> attr) & 1 == 1
    }

    pub fn fully_specified(&self) -> bool {
        let full = full_mask(self.k);
        self.known.iter().all(|&kn| kn == full)
    }

    /// Requirement bitmask of one item row.
    pub fn row_mask(&self, item: usize) -> u64 {
        self.rows[item]
    }

    /// Known-entry bitmask of one item row.
    pub fn known_mask(&self, item: usize) -> u64 {
        self.known[item]
    }

    pub fn rows_as_vecs(&self) -> Vec<Vec<u8>> {
        (0..self.m)
            .map(|i| (0..self.k).map(|j| self.entry(i, j)).collect())
            .collect()
    }

    /// Replaces one row, keeping it fully known.
    pub fn set_row(&mut self, item: usize, row_mask: u64) {
        self.rows[item] = row_mask & full_mask(self.k);
        self.known[item] = full_mask(self.k);
    }

    /// Selects a subset of items (rows), preserving their order.
    pub fn select_items(&self, items: &[usize]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Empty { what: "item selection" });
        }
        let mut rows = Vec::with_capacity(items.len());
        let mut known = Vec::with_capacity(items.len());
        for &i in items {
            if i >= self.m {
                return Err(Error::IndexOutOfRange {
                    what: "item index",
                    index: i,
                    len: self.m,
                });
            }
            rows.push(self.rows[i]);
            known.push(self.known[i]);
        }
        Ok(Self { m: items.len(), k: self.k, rows, known })
    }

    /// True iff every attribute has an item requiring exactly that attribute
    /// (a unit row).
    pub fn is_complete(&self) -> bool {
        (0..self.k).all(|j| self.rows.contains(&(1u64 << j)))
    }

    /// True iff the two matrices have identical column multisets, i.e. they
    /// are equal up to relabeling of attributes.
    pub fn equivalent(&self, other: &QMatrix) -> Result<bool> {
        if self.m != other.m {
            return Err(Error::DimensionMismatch {
                context: "Q-matrix equivalence (items)",
                expected: self.m,
                actual: other.m,
            });
        }
        if self.k != other.k {
            return Err(Error::DimensionMismatch {
                context: "Q-matrix equivalence (attributes)",
                expected: self.k,
                actual: other.k,
            });
        }
        let mut a = self.column_keys();
        let mut b = other.column_keys();
        a.sort_unstable();
        b.sort_unstable();
        Ok(a == b)
    }

    /// Column `j` read as a big-endian integer, row 0 most significant.
    /// This is the total order used by [`QMatrix::canonicalize`].
    fn column_key(&self, j: usize) -> u128 {
        debug_assert!(self.m <= 128);
        let mut key = 0u128;
        for i in 0..self.m {
            key = (key << 1) | ((self.rows[i] >> j) & 1) as u128;
        }
        key
    }

    fn column_keys(&self) -> Vec<u128> {
        (0..self.k).map(|j| self.column_key(j)).collect()
    }

    /// Deterministic representative of the column-permutation equivalence
    /// class: columns sorted ascending by their big-endian row-0-first
    /// integer value. Idempotent; `a.equivalent(&b)` iff
    /// `a.canonicalize() == b.canonicalize()`.
    ///
    /// The known/unknown mask travels with its column.
    pub fn canonicalize(&self) -> QMatrix {
        let mut order: Vec<usize> = (0..self.k).collect();
        order.sort_by_key(|&j| self.column_key(j));
        let mut rows = vec![0u64; self.m];
        let mut known = vec![0u64; self.m];
        for i in 0..self.m {
            for (new_j, &old_j) in order.iter().enumerate() {
                rows[i] |= ((self.rows[i] >> old_j) & 1) << new_j;
                known[i] |= ((self.known[i] >> old_j) & 1) << new_j;
            }
        }
        QMatrix { m: self.m, k: self.k, rows, known }
    }

    /// Applies a column permutation: new column `j` is old column `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Result<QMatrix> {
        if perm.len() != self.k {
            return Err(Error::DimensionMismatch {
                context: "column permutation length",
                expected: self.k,
                actual: perm.len(),
            });
        }
        let mut rows = vec![0u64; self.m];
        let mut known = vec![0u64; self.m];
        for i in 0..self.m {
            for (new_j, &old_j) in perm.iter().enumerate() {
                rows[i] |= ((self.rows[i] >> old_j) & 1) << new_j;
                known[i] |= ((self.known[i] >> old_j) & 1) << new_j;
            }
        }
        Ok(QMatrix { m: self.m, k: self.k, rows, known })
    }
}

/// DINA capability: 1 iff the profile dominates the item's requirement row
/// componentwise (vacuously true for a row requiring nothing).
pub fn capability_dina(profile: &AttributeProfile, q: &QMatrix, item: usize) -> Result<bool> {
    check_capability_args(profile, q, item)?;
    Ok(dina_capable(profile.mask(), q.row_mask(item)))
}

/// DINO capability: 1 iff the profile possesses at least one required
/// attribute. A row requiring nothing qualifies every profile, mirroring the
/// DINA vacuous-truth convention.
pub fn capability_dino(profile: &AttributeProfile, q: &QMatrix, item: usize) -> Result<bool> {
    check_capability_args(profile, q, item)?;
    Ok(dino_capable(profile.mask(), q.row_mask(item)))
}

fn check_capability_args(profile: &AttributeProfile, q: &QMatrix, item: usize) -> Result<()> {
    if profile.k() != q.num_attrs() {
        return Err(Error::DimensionMismatch {
            context: "capability (profile length vs Q columns)",
            expected: q.num_attrs(),
            actual: profile.k(),
        });
    }
    if item >= q.num_items() {
        return Err(Error::IndexOutOfRange {
            what: "item index",
            index: item,
            len: q.num_items(),
        });
    }
    Ok(())
}

/// Unchecked bitmask form of [`capability_dina`].
#[inline]
pub fn dina_capable(profile_mask: u64, row_mask: u64) -> bool {
    profile_mask & row_mask == row_mask
}

/// Unchecked bitmask form of [`capability_dino`].
#[inline]
pub fn dino_capable(profile_mask: u64, row_mask: u64) -> bool {
    row_mask == 0 || profile_mask & row_mask != 0
}

/// Capability under either model, bitmask form.
#[inline]
pub fn capable(model: Model, profile_mask: u64, row_mask: u64) -> bool {
    match model {
        Model::Dina => dina_capable(profile_mask, row_mask),
        Model::Dino => dino_capable(profile_mask, row_mask),
    }
}

/// Per-item correct-response probabilities `c` (`c = 1 - s` for slipping
/// `s`) and guessing probabilities `g`.
///
/// A raw container only requires all entries in `[0, 1]`; fit results
/// additionally maintain `g_i <= c_i` (see [`ItemParams::is_separated`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemParams {
    c: Vec<f64>,
    g: Vec<f64>,
}

impl ItemParams {
    pub fn new(c: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::Empty { what: "item parameter vector" });
        }
        if c.len() != g.len() {
            return Err(Error::DimensionMismatch {
                context: "item parameters (c vs g)",
                expected: c.len(),
                actual: g.len(),
            });
        }
        for &x in c.iter().chain(g.iter()) {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidValue {
                    what: "item parameter",
                    detail: format!("expected value in [0, 1], got {x}"),
                });
            }
        }
        Ok(Self { c, g })
    }

    /// `c = 1`, `g = 0` for every item: responses equal capability.
    pub fn noise_free(m: usize) -> Self {
        Self { c: vec![1.0; m], g: vec![0.0; m] }
    }

    /// Constant `c` and `g` across items.
    pub fn constant(m: usize, c: f64, g: f64) -> Result<Self> {
        Self::new(vec![c; m], vec![g; m])
    }

    pub fn num_items(&self) -> usize {
        self.c.len()
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn c_mut(&mut self) -> &mut [f64] {
        &mut self.c
    }

    pub fn g_mut(&mut self) -> &mut [f64] {
        &mut self.g
    }

    /// True iff `c_i >= g_i` for all items.
    pub fn is_separated(&self) -> bool {
        self.c.iter().zip(&self.g).all(|(&c, &g)| c >= g)
    }

    /// Smallest `c_i - g_i` over items.
    pub fn min_separation(&self) -> f64 {
        self.c
            .iter()
            .zip(&self.g)
            .map(|(&c, &g)| c - g)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Tolerance on the total probability mass of an [`AttributeDistribution`].
pub const SIMPLEX_SUM_TOL: f64 = 1e-12;

/// A probability vector over all `2^k` attribute profiles, indexed by
/// profile index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeDistribution {
    k: usize,
    p: Vec<f64>,
}

impl AttributeDistribution {
    pub fn new(k: usize, p: Vec<f64>) -> Result<Self> {
        check_num_attrs(k)?;
        if p.len() != 1usize << k {
            return Err(Error::DimensionMismatch {
                context: "attribute distribution length",
                expected: 1usize << k,
                actual: p.len(),
            });
        }
        let mut sum = 0.0;
        for &x in &p {
            if !x.is_finite() {
                return Err(Error::NonFinite { context: "attribute distribution" });
            }
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::InvalidValue {
                    what: "attribute probability",
                    detail: format!("expected value in [0, 1], got {x}"),
                });
            }
            sum += x;
        }
        if (sum - 1.0).abs() > SIMPLEX_SUM_TOL {
            return Err(Error::InvalidValue {
                what: "attribute distribution",
                detail: format!("entries sum to {sum}, expected 1 within {SIMPLEX_SUM_TOL:e}"),
            });
        }
        Ok(Self { k, p })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        check_num_attrs(k)?;
        let n = 1usize << k;
        Ok(Self { k, p: vec![1.0 / n as f64; n] })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }

    pub fn prob(&self, profile: &AttributeProfile) -> f64 {
        self.p[profile.index() as usize]
    }

    /// Condition C4: every profile has strictly positive probability.
    pub fn is_diversified(&self) -> bool {
        self.p.iter().all(|&x| x > 0.0)
    }
}

/// An `N x m` binary response matrix, optionally carrying the latent
/// attribute profiles that generated it (simulation only).
#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMatrix {
    n: usize,
    m: usize,
    /// Per-subject response bitmask; bit `i` = response to item `i`.
    rows: Vec<u64>,
    latent: Option<Vec<AttributeProfile>>,
}

impl ResponseMatrix {
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty { what: "response matrix" });
        }
        let m = rows[0].len();
        check_num_items(m)?;
        let mut packed = Vec::with_capacity(rows.len());
        for row in rows {
            if row.len() != m {
                return Err(Error::DimensionMismatch {
                    context: "response row length",
                    expected: m,
                    actual: row.len(),
                });
            }
            let mut mask = 0u64;
            for (i, &e) in row.iter().enumerate() {
                match e {
                    0 => {}
                    1 => mask |= 1 << i,
                    other => {
                        return Err(Error::InvalidValue {
                            what: "response entry",
                            detail: format!("expected 0 or 1, got {other}"),
                        })
                    }
                }
            }
            packed.push(mask);
        }
        Ok(Self { n: rows.len(), m, rows: packed, latent: None })
    }

    pub fn from_bitmasks(n: usize, m: usize, rows: Vec<u64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty { what: "response matrix" });
        }
        check_num_items(m)?;
        if rows.len() != n {
            return Err(Error::DimensionMismatch {
                context: "response row count",
                expected: n,
                actual: rows.len(),
            });
        }
        Ok(Self { n, m, rows, latent: None })
    }

    pub fn with_latent(mut self, latent: Vec<AttributeProfile>) -> Result<Self> {
        if latent.len() != self.n {
            return Err(Error::DimensionMismatch {
                context: "latent profile count",
                expected: self.n,
                actual: latent.len(),
            });
        }
        self.latent = Some(latent);
        Ok(self)
    }

    pub fn num_subjects(&self) -> usize {
        self.n
    }

    pub fn num_items(&self) -> usize {
        self.m
    }

    pub fn get(&self, subject: usize, item: usize) -> u8 {
        ((self.rows[subject] >> item) & 1) as u8
    }

    pub fn row_mask(&self, subject: usize) -> u64 {
        self.rows[subject]
    }

    pub fn row_masks(&self) -> &[u64] {
        &self.rows
    }

    pub fn latent(&self) -> Option<&[AttributeProfile]> {
        self.latent.as_deref()
    }

    /// Responses with every entry flipped (used by the AND/OR duality
    /// transform).
    pub fn complemented(&self) -> ResponseMatrix {
        let full = full_mask(self.m);
        ResponseMatrix {
            n: self.n,
            m: self.m,
            rows: self.rows.iter().map(|&r| !r & full).collect(),
            latent: self.latent.clone(),
        }
    }

    /// Restricts to the given items, renumbering them `0..items.len()` in
    /// the given order.
    pub fn select_items(&self, items: &[usize]) -> Result<ResponseMatrix> {
        if items.is_empty() {
            return Err(Error::Empty { what: "item selection" });
        }
        for &i in items {
            if i >= self.m {
                return Err(Error::IndexOutOfRange {
                    what: "item index",
                    index: i,
                    len: self.m,
                });
            }
        }
        let rows = self
            .rows
            .iter()
            .map(|&r| {
                let mut out = 0u64;
                for (new_i, &old_i) in items.iter().enumerate() {
                    out |= ((r >> old_i) & 1) << new_i;
                }
                out
            })
            .collect();
        ResponseMatrix::from_bitmasks(self.n, items.len(), rows)
    }
}

pub(crate) fn full_mask(bits: usize) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}
