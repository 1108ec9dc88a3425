//! Moment matrices linking the attribute distribution to response moments.
//!
//! For a Q-matrix `Q` and item parameters `(c, g)`, the AND-matrix (the
//! T-matrix) has one row per item subset `S` and one column per attribute
//! profile `A`; its entry is the probability of positive responses to every
//! item in `S` given `A`. The OR-matrix (the U-matrix) is the disjunctive
//! analogue: the probability of a positive response to at least one item of
//! `S`. With `c = 1, g = 0` both reduce to binary capability indicators.
//!
//! Row order follows the [`ComboSet`] contract: subsets ordered by size,
//! then bitmask ascending. Column `a` corresponds to the attribute profile
//! with index `a`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{dina_capable, dino_capable, ItemParams, Model, QMatrix};

/// Hard cap on the number of subsets in a [`ComboSet`].
pub const MAX_COMBO_ROWS: usize = 1 << 22;

/// Hard cap on `rows * columns` of a dense moment matrix.
pub const MAX_MATRIX_ENTRIES: usize = 1 << 24;

/// Items beyond this count default to truncated combination sets.
pub const SATURATED_ITEM_LIMIT: usize = 12;

/// Default maximum combination order when the saturated set is too large.
pub const DEFAULT_TRUNCATED_ORDER: usize = 3;

/// An ordered collection of nonempty item subsets (bitmasks over `m` items).
///
/// The set is *saturated* when it contains every nonempty subset of the `m`
/// items.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComboSet {
    m: usize,
    max_order: usize,
    subsets: Vec<u64>,
}

impl ComboSet {
    /// All nonempty subsets of `m` items with at most `max_order` items,
    /// ordered by (size, bitmask ascending).
    pub fn up_to_order(m: usize, max_order: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::Empty { what: "item set" });
        }
        if max_order == 0 || max_order > m {
            return Err(Error::OrderOutOfRange { order: max_order, max: m });
        }
        let mut count: u128 = 0;
        let mut binom: u128 = 1;
        for l in 1..=max_order {
            binom = binom * (m as u128 - l as u128 + 1) / l as u128;
            count += binom;
        }
        if count > MAX_COMBO_ROWS as u128 {
            return Err(Error::TooLarge {
                what: "combination count",
                value: count.min(usize::MAX as u128) as usize,
                limit: MAX_COMBO_ROWS,
            });
        }
        let mut subsets = Vec::with_capacity(count as usize);
        for size in 1..=max_order {
            // Gosper's hack: next bitmask with the same popcount.
            let mut s: u64 = (1u64 << size) - 1;
            let limit: u64 = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
            while s <= limit {
                subsets.push(s);
                let c = s & s.wrapping_neg();
                let r = s + c;
                if c == 0 || r > limit {
                    break;
                }
                s = (((r ^ s) >> 2) / c) | r;
            }
        }
        Ok(Self { m, max_order, subsets })
    }

    /// Every nonempty subset of the `m` items.
    pub fn saturated(m: usize) -> Result<Self> {
        Self::up_to_order(m, m)
    }

    /// Saturated for small item counts, truncated to order
    /// [`DEFAULT_TRUNCATED_ORDER`] beyond [`SATURATED_ITEM_LIMIT`].
    pub fn default_for(m: usize) -> Result<Self> {
        if m <= SATURATED_ITEM_LIMIT {
            Self::saturated(m)
        } else {
            Self::up_to_order(m, DEFAULT_TRUNCATED_ORDER)
        }
    }

    /// An explicit subset list. Subsets must be nonempty, within `m` items,
    /// and free of duplicates; they are reordered to the (size, bitmask)
    /// contract.
    pub fn from_subsets(m: usize, mut subsets: Vec<u64>) -> Result<Self> {
        if m == 0 || m > 64 {
            return Err(Error::TooLarge { what: "number of items", value: m, limit: 64 });
        }
        let limit: u64 = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
        for &s in &subsets {
            if s == 0 {
                return Err(Error::Empty { what: "item subset" });
            }
            if s > limit {
                return Err(Error::InvalidValue {
                    what: "item subset",
                    detail: format!("bitmask {s:#b} addresses items beyond {m}"),
                });
            }
        }
        subsets.sort_unstable_by_key(|&s| (s.count_ones(), s));
        if subsets.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidValue {
                what: "item subsets",
                detail: "duplicate subset".into(),
            });
        }
        let max_order = subsets.iter().map(|s| s.count_ones() as usize).max().unwrap_or(0);
        Ok(Self { m, max_order, subsets })
    }

    pub fn num_items(&self) -> usize {
        self.m
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn subsets(&self) -> &[u64] {
        &self.subsets
    }

    pub fn is_saturated(&self) -> bool {
        self.m < 64 && self.subsets.len() == (1usize << self.m) - 1
    }

    /// True iff every subset of this set also appears in `other`.
    pub fn is_subset_of(&self, other: &ComboSet) -> bool {
        self.subsets.iter().all(|s| other.subsets.binary_search_by_key(&(s.count_ones(), *s), |&t| (t.count_ones(), t)).is_ok())
    }
}

/// Writes the moment-matrix row for `subset` into `out` (length `2^k`).
///
/// AND rows multiply per-item positive-response probabilities; OR rows take
/// the complement of the product of per-item negative-response
/// probabilities. Single-item probabilities are `c_i` when the profile is
/// capable under the model and `g_i` otherwise.
fn fill_row(model: Model, q: &QMatrix, params: &ItemParams, subset: u64, out: &mut [f64]) {
    out.fill(1.0);
    let mut rest = subset;
    while rest != 0 {
        let i = rest.trailing_zeros() as usize;
        rest &= rest - 1;
        let row = q.row_mask(i);
        let (c, g) = (params.c()[i], params.g()[i]);
        match model {
            Model::Dina => {
                for (a, v) in out.iter_mut().enumerate() {
                    *v *= if dina_capable(a as u64, row) { c } else { g };
                }
            }
            Model::Dino => {
                for (a, v) in out.iter_mut().enumerate() {
                    *v *= 1.0 - if dino_capable(a as u64, row) { c } else { g };
                }
            }
        }
    }
    if model == Model::Dino {
        for v in out.iter_mut() {
            *v = 1.0 - *v;
        }
    }
}

fn check_build_args(q: &QMatrix, params: &ItemParams, combos: &ComboSet) -> Result<()> {
    if params.num_items() != q.num_items() {
        return Err(Error::DimensionMismatch {
            context: "moment matrix (item parameters vs Q rows)",
            expected: q.num_items(),
            actual: params.num_items(),
        });
    }
    if combos.num_items() != q.num_items() {
        return Err(Error::DimensionMismatch {
            context: "moment matrix (combination set vs Q rows)",
            expected: q.num_items(),
            actual: combos.num_items(),
        });
    }
    let cols = 1usize << q.num_attrs();
    if combos.len().saturating_mul(cols) > MAX_MATRIX_ENTRIES {
        return Err(Error::TooLarge {
            what: "moment matrix entries",
            value: combos.len().saturating_mul(cols),
            limit: MAX_MATRIX_ENTRIES,
        });
    }
    Ok(())
}

/// The AND-combination row for `subset` (the T-matrix row).
pub fn and_row(q: &QMatrix, params: &ItemParams, subset: u64) -> Result<Vec<f64>> {
    single_row(Model::Dina, q, params, subset)
}

/// The OR-combination row for `subset` (the U-matrix row).
pub fn or_row(q: &QMatrix, params: &ItemParams, subset: u64) -> Result<Vec<f64>> {
    single_row(Model::Dino, q, params, subset)
}

fn single_row(model: Model, q: &QMatrix, params: &ItemParams, subset: u64) -> Result<Vec<f64>> {
    if subset == 0 {
        return Err(Error::Empty { what: "item subset" });
    }
    if params.num_items() != q.num_items() {
        return Err(Error::DimensionMismatch {
            context: "moment row (item parameters vs Q rows)",
            expected: q.num_items(),
            actual: params.num_items(),
        });
    }
    let limit = if q.num_items() == 64 { u64::MAX } else { (1u64 << q.num_items()) - 1 };
    if subset > limit {
        return Err(Error::InvalidValue {
            what: "item subset",
            detail: format!("bitmask {subset:#b} addresses items beyond {}", q.num_items()),
        });
    }
    let mut out = vec![0.0; 1 << q.num_attrs()];
    fill_row(model, q, params, subset, &mut out);
    Ok(out)
}

/// Fills `out` (shape `combos.len() x 2^k`, or one extra row when
/// `ones_row`) with the moment matrix. Used by the estimation hot loop to
/// avoid reallocation; [`MomentMatrix::build`] is the owning wrapper.
pub(crate) fn fill_moment_matrix(
    model: Model,
    q: &QMatrix,
    params: &ItemParams,
    combos: &ComboSet,
    ones_row: bool,
    out: &mut DMatrix<f64>,
) {
    let cols = 1usize << q.num_attrs();
    let rows = combos.len() + usize::from(ones_row);
    debug_assert_eq!(out.nrows(), rows);
    debug_assert_eq!(out.ncols(), cols);
    let mut row_buf = vec![0.0; cols];
    for (r, &subset) in combos.subsets().iter().enumerate() {
        fill_row(model, q, params, subset, &mut row_buf);
        for (a, &v) in row_buf.iter().enumerate() {
            out[(r, a)] = v;
        }
    }
    if ones_row {
        let last = rows - 1;
        for a in 0..cols {
            out[(last, a)] = 1.0;
        }
    }
}

/// A dense moment matrix together with the objects that built it.
#[derive(Clone, Debug)]
pub struct MomentMatrix {
    matrix: DMatrix<f64>,
    combos: ComboSet,
    model: Model,
    params: ItemParams,
    augmented: bool,
}

impl MomentMatrix {
    /// Builds the T-matrix (`Model::Dina`) or U-matrix (`Model::Dino`) for
    /// `q` under `params`, one row per subset of `combos`.
    pub fn build(model: Model, q: &QMatrix, params: &ItemParams, combos: &ComboSet) -> Result<Self> {
        check_build_args(q, params, combos)?;
        let cols = 1usize << q.num_attrs();
        let mut matrix = DMatrix::zeros(combos.len(), cols);
        fill_moment_matrix(model, q, params, combos, false, &mut matrix);
        Ok(Self {
            matrix,
            combos: combos.clone(),
            model,
            params: params.clone(),
            augmented: false,
        })
    }

    /// The same matrix with an all-ones row appended (the tilde variant used
    /// by rank diagnostics and the identifiability theory).
    pub fn with_ones_row(&self) -> MomentMatrix {
        let mut matrix = DMatrix::zeros(self.matrix.nrows() + 1, self.matrix.ncols());
        matrix.rows_mut(0, self.matrix.nrows()).copy_from(&self.matrix);
        matrix.row_mut(self.matrix.nrows()).fill(1.0);
        MomentMatrix {
            matrix,
            combos: self.combos.clone(),
            model: self.model,
            params: self.params.clone(),
            augmented: true,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn combos(&self) -> &ComboSet {
        &self.combos
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn params(&self) -> &ItemParams {
        &self.params
    }

    pub fn is_augmented(&self) -> bool {
        self.augmented
    }

    /// Matrix-vector product with an attribute-distribution-sized vector.
    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        if p.len() != self.matrix.ncols() {
            return Err(Error::DimensionMismatch {
                context: "moment matrix apply",
                expected: self.matrix.ncols(),
                actual: p.len(),
            });
        }
        let v = self.matrix * nalgebra::DVector::from_column_slice(p);
        Ok(v.as_slice().to_vec())
    }

    /// Numerical rank via singular values above `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        matrix_rank(&self.matrix, tol)
    }
}

/// Numerical rank of a dense matrix: singular values above `tol`.
pub fn matrix_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    m.clone().svd(false, false).singular_values.iter().filter(|&&s| s > tol).count()
}

/// Checks the AND/OR duality identity at `c = 1, g = 0` over the saturated
/// combination set: for every subset `S` and profile `A`, the AND entry at
/// column `A` plus the OR entry at the complementary column sums to one.
///
/// The identity requires every item to demand at least one attribute; a Q
/// with an all-zero row makes this return `false` because such an item is
/// answerable by everyone under both models.
pub fn and_or_duality_holds(q: &QMatrix) -> Result<bool> {
    let combos = ComboSet::saturated(q.num_items())?;
    let params = ItemParams::noise_free(q.num_items());
    let cols = 1usize << q.num_attrs();
    let full = (cols - 1) as u64;
    let mut t_row = vec![0.0; cols];
    let mut u_row = vec![0.0; cols];
    for &subset in combos.subsets() {
        fill_row(Model::Dina, q, &params, subset, &mut t_row);
        fill_row(Model::Dino, q, &params, subset, &mut u_row);
        for a in 0..cols {
            let comp = (!(a as u64) & full) as usize;
            if t_row[comp] + u_row[a] != 1.0 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
