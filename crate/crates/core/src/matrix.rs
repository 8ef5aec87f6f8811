//! Dense ratings matrices, singular value access, and majority-minority
//! block structure.
//!
//! A [`RatingsMatrix`] normally holds nonnegative ratings. Low-rank
//! estimates produced by truncation may contain small negative entries, so
//! they are stored in the same type with the nonnegativity check relaxed
//! (see [`RatingsMatrix::from_estimate`]).

use nalgebra::DMatrix;
use serde::Serialize;
use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Relative threshold below which a singular value does not count toward
/// the numeric rank: `σ_j` counts iff `σ_j > RANK_RTOL * σ_1`.
pub const RANK_RTOL: f64 = 1e-10;

/// Dense `m x n` grid of user-item ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsMatrix {
    data: DMatrix<f64>,
    estimate: bool,
}

impl RatingsMatrix {
    /// Builds a matrix from row-major data, rejecting negative or
    /// non-finite ratings.
    pub fn new(rows: usize, cols: usize, row_major: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyMatrix { rows, cols });
        }
        if row_major.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                rows,
                cols,
                expected: rows * cols,
                got: row_major.len(),
            });
        }
        Self::from_dmatrix(DMatrix::from_row_slice(rows, cols, &row_major))
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "ragged rows: expected {n} columns, found a row with {}",
                bad.len()
            )));
        }
        Self::new(m, n, rows.concat())
    }

    /// All-zero `rows x cols` matrix.
    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    /// Wraps an existing matrix after validating every entry.
    pub fn from_dmatrix(data: DMatrix<f64>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::EmptyMatrix {
                rows: data.nrows(),
                cols: data.ncols(),
            });
        }
        for c in 0..data.ncols() {
            for r in 0..data.nrows() {
                let v = data[(r, c)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidRating {
                        row: r,
                        col: c,
                        value: v,
                    });
                }
            }
        }
        Ok(Self {
            data,
            estimate: false,
        })
    }

    /// Wraps a learner estimate. Negative entries are allowed and the
    /// matrix is flagged via [`RatingsMatrix::is_estimate`].
    pub fn from_estimate(data: DMatrix<f64>) -> Self {
        assert!(data.nrows() > 0 && data.ncols() > 0, "empty estimate");
        Self {
            data,
            estimate: true,
        }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn get(&self, u: usize, i: usize) -> f64 {
        self.data[(u, i)]
    }

    /// True when the nonnegativity invariant was relaxed at construction.
    pub fn is_estimate(&self) -> bool {
        self.estimate
    }

    pub fn has_negative(&self) -> bool {
        self.data.iter().any(|&v| v < 0.0)
    }

    pub fn as_dmatrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_dmatrix(self) -> DMatrix<f64> {
        self.data
    }

    /// Copy of row `u`.
    pub fn row(&self, u: usize) -> Vec<f64> {
        self.data.row(u).iter().copied().collect()
    }

    /// Copy of column `i`.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.data.column(i).iter().copied().collect()
    }

    /// Row-major copy of all entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        (0..self.rows()).flat_map(|u| self.row(u)).collect()
    }

    /// Sum of absolute values of column `i` (item popularity).
    pub fn column_abs_sum(&self, i: usize) -> f64 {
        self.data.column(i).iter().map(|v| v.abs()).sum()
    }

    /// Returns a copy with one entry replaced, keeping validation rules.
    pub fn with_entry(&self, u: usize, i: usize, value: f64) -> Result<Self> {
        let mut data = self.data.clone();
        data[(u, i)] = value;
        if self.estimate {
            Ok(Self::from_estimate(data))
        } else {
            Self::from_dmatrix(data)
        }
    }

    /// Rows `users` and columns `items`, in the given order.
    pub fn submatrix(&self, users: &[usize], items: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(users.len(), items.len(), |r, c| {
            self.data[(users[r], items[c])]
        })
    }

    /// Returns `P_R R P_C`: row `r` of the result is row `row_perm[r]` of
    /// `self`, and likewise for columns.
    pub fn permuted(&self, row_perm: &[usize], col_perm: &[usize]) -> Result<Self> {
        check_permutation(row_perm, self.rows())?;
        check_permutation(col_perm, self.cols())?;
        let data = self.submatrix(row_perm, col_perm);
        Ok(Self {
            data,
            estimate: self.estimate,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.norm()
    }
}

fn check_permutation(perm: &[usize], len: usize) -> Result<()> {
    if perm.len() != len {
        return Err(Error::DimensionMismatch(format!(
            "permutation of length {} for dimension {len}",
            perm.len()
        )));
    }
    let mut seen = vec![false; len];
    for &p in perm {
        if p >= len || seen[p] {
            return Err(Error::InvalidArgument(format!(
                "not a permutation of 0..{len}"
            )));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Inverse of a permutation given as `new -> old` index map.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

/// `‖X‖₁`: the maximum column sum.
pub fn matrix_l1_norm(r: &RatingsMatrix) -> f64 {
    (0..r.cols())
        .map(|i| r.as_dmatrix().column(i).sum())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Singular value decomposition with factors sorted by descending
/// singular value. `u` is `m x p`, `v_t` is `p x n`, `p = min(m, n)`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v_t: DMatrix<f64>,
}

/// Convergence thresholds tried in order. The first is nalgebra's own
/// default; at tighter thresholds its implicit-shift iteration can stall on
/// block-structured inputs and return a wrong spectrum.
const SVD_EPS: [f64; 3] = [5.0 * f64::EPSILON, 1e-13, 1e-11];

/// Relative tolerance of the post-decomposition checks.
const SVD_CHECK_RTOL: f64 = 1e-10;

impl Svd {
    /// Decomposes `m` and verifies the result: the squared singular values
    /// must sum to `‖m‖_F²` and `U Σ Vᵀ` must reproduce `m`. A failed check
    /// retries with a looser convergence threshold.
    pub fn compute(m: &DMatrix<f64>) -> Result<Self> {
        let energy = m.norm_squared();
        let scale = m.norm().max(f64::MIN_POSITIVE);
        for eps in SVD_EPS {
            let Some(svd) = nalgebra::SVD::try_new(m.clone(), true, true, eps, 0) else {
                continue;
            };
            let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
                continue;
            };
            let s = svd.singular_values;
            let mut order: Vec<usize> = (0..s.len()).collect();
            order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
            let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
            let v_t = DMatrix::from_fn(order.len(), v_t.ncols(), |r, c| v_t[(order[r], c)]);
            let singular_values: Vec<f64> = order.iter().map(|&j| s[j].max(0.0)).collect();
            let out = Self {
                u,
                singular_values,
                v_t,
            };
            let sum_sq: f64 = out.singular_values.iter().map(|x| x * x).sum();
            let energy_ok = (sum_sq - energy).abs() <= SVD_CHECK_RTOL * energy.max(f64::MIN_POSITIVE);
            let recon_ok = (out.reconstruct() - m).norm() <= SVD_CHECK_RTOL * scale;
            if energy_ok && recon_ok {
                return Ok(out);
            }
        }
        Err(Error::Numeric(format!(
            "singular value decomposition of a {}x{} matrix failed verification",
            m.nrows(),
            m.ncols()
        )))
    }

    pub fn summary(&self) -> SpectralSummary {
        SpectralSummary::from_values(self.singular_values.clone())
    }

    /// `Σ_{j<k} σ_j u_j v_jᵀ`.
    pub fn truncated(&self, k: usize) -> DMatrix<f64> {
        let k = k.min(self.singular_values.len());
        let us = DMatrix::from_fn(self.u.nrows(), k, |r, c| {
            self.u[(r, c)] * self.singular_values[c]
        });
        us * self.v_t.rows(0, k)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.truncated(self.singular_values.len())
    }
}

/// Descending singular values together with the numeric rank.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralSummary {
    pub singular_values: Vec<f64>,
    pub numeric_rank: usize,
}

impl SpectralSummary {
    pub fn from_values(mut singular_values: Vec<f64>) -> Self {
        singular_values.sort_by(|a, b| b.total_cmp(a));
        let numeric_rank = numeric_rank(&singular_values);
        Self {
            singular_values,
            numeric_rank,
        }
    }

    /// `σ_k` with 1-based `k`; zero beyond the stored values.
    pub fn sigma(&self, k: usize) -> f64 {
        sigma(&self.singular_values, k)
    }
}

/// `σ_k` (1-based) of a descending sequence; zero past its end or for `k = 0`.
pub fn sigma(values: &[f64], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    values.get(k - 1).copied().unwrap_or(0.0)
}

/// Count of singular values above `RANK_RTOL * σ_1`.
pub fn numeric_rank(descending: &[f64]) -> usize {
    let Some(&s1) = descending.first() else {
        return 0;
    };
    if s1 <= 0.0 {
        return 0;
    }
    descending.iter().filter(|&&s| s > RANK_RTOL * s1).count()
}

/// Full decomposition of `r` reduced to its spectrum.
pub fn spectral(r: &RatingsMatrix) -> Result<SpectralSummary> {
    Ok(Svd::compute(r.as_dmatrix())?.summary())
}

/// Descending singular values of an arbitrary dense matrix. Empty input
/// yields an empty spectrum.
pub fn singular_values_of(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(Vec::new());
    }
    Ok(Svd::compute(m)?.singular_values)
}

/// `‖X‖₂ = σ_1(X)`.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    Ok(singular_values_of(m)?.first().copied().unwrap_or(0.0))
}

/// Open interval `(lo, hi)`. Empty intervals are represented by `None`
/// at the call sites that can produce them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// `Some` iff `lo < hi`.
    pub fn open(lo: f64, hi: f64) -> Option<Self> {
        (lo < hi).then_some(Self { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo < x && x < self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Partition of users and items into majority and minority groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupPartition {
    m: usize,
    n: usize,
    majority_users: Vec<usize>,
    minority_users: Vec<usize>,
    majority_items: Vec<usize>,
    minority_items: Vec<usize>,
}

impl GroupPartition {
    /// Builds a partition from the majority sets; the minority sets are
    /// their complements in `[m]` and `[n]`.
    pub fn from_majority(
        m: usize,
        n: usize,
        majority_users: impl IntoIterator<Item = usize>,
        majority_items: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let mu = to_index_set(majority_users, m, "user")?;
        let mi = to_index_set(majority_items, n, "item")?;
        let minority_users = (0..m).filter(|u| !mu.contains(u)).collect();
        let minority_items = (0..n).filter(|i| !mi.contains(i)).collect();
        Ok(Self {
            m,
            n,
            majority_users: mu.into_iter().collect(),
            minority_users,
            majority_items: mi.into_iter().collect(),
            minority_items,
        })
    }

    /// Block-ordered partition: the first `m_bar` users and first `n_bar`
    /// items form the majority.
    pub fn leading(m: usize, n: usize, m_bar: usize, n_bar: usize) -> Result<Self> {
        if m_bar > m || n_bar > n {
            return Err(Error::InvalidPartition(format!(
                "leading block {m_bar}x{n_bar} exceeds {m}x{n}"
            )));
        }
        Self::from_majority(m, n, 0..m_bar, 0..n_bar)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn majority_users(&self) -> &[usize] {
        &self.majority_users
    }

    pub fn minority_users(&self) -> &[usize] {
        &self.minority_users
    }

    pub fn majority_items(&self) -> &[usize] {
        &self.majority_items
    }

    pub fn minority_items(&self) -> &[usize] {
        &self.minority_items
    }

    /// `m̄ = |U_maj|`.
    pub fn m_bar(&self) -> usize {
        self.majority_users.len()
    }

    /// `n̄ = |I_maj|`.
    pub fn n_bar(&self) -> usize {
        self.majority_items.len()
    }

    pub fn is_majority_user(&self, u: usize) -> bool {
        self.majority_users.binary_search(&u).is_ok()
    }

    pub fn is_majority_item(&self, i: usize) -> bool {
        self.majority_items.binary_search(&i).is_ok()
    }

    /// Checks the majority-minority structure against `r`: both
    /// off-diagonal blocks are exactly zero and no user has all-zero
    /// ratings.
    pub fn validate_for(&self, r: &RatingsMatrix) -> Result<()> {
        if r.shape() != (self.m, self.n) {
            return Err(Error::DimensionMismatch(format!(
                "partition is {}x{}, matrix is {}x{}",
                self.m,
                self.n,
                r.rows(),
                r.cols()
            )));
        }
        for (users, items) in [
            (&self.majority_users, &self.minority_items),
            (&self.minority_users, &self.majority_items),
        ] {
            for &u in users {
                for &i in items {
                    if r.get(u, i) != 0.0 {
                        return Err(Error::InvalidPartition(format!(
                            "off-block entry ({u}, {i}) = {} is nonzero",
                            r.get(u, i)
                        )));
                    }
                }
            }
        }
        for u in 0..self.m {
            if (0..self.n).all(|i| r.get(u, i) <= 0.0) {
                return Err(Error::InvalidPartition(format!(
                    "user {u} has no positive rating"
                )));
            }
        }
        Ok(())
    }

    /// `(R_maj, R_min)` blocks of `r`.
    pub fn blocks(&self, r: &RatingsMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
        (
            r.submatrix(&self.majority_users, &self.majority_items),
            r.submatrix(&self.minority_users, &self.minority_items),
        )
    }
}

fn to_index_set(
    it: impl IntoIterator<Item = usize>,
    bound: usize,
    what: &str,
) -> Result<BTreeSet<usize>> {
    let mut set = BTreeSet::new();
    for x in it {
        if x >= bound {
            return Err(Error::InvalidPartition(format!(
                "{what} index {x} out of range 0..{bound}"
            )));
        }
        if !set.insert(x) {
            return Err(Error::InvalidPartition(format!(
                "{what} index {x} listed twice"
            )));
        }
    }
    Ok(set)
}

/// Spectra of the two diagonal blocks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockSpectra {
    pub majority: SpectralSummary,
    pub minority: SpectralSummary,
}

impl BlockSpectra {
    pub fn compute(r: &RatingsMatrix, p: &GroupPartition) -> Result<Self> {
        p.validate_for(r)?;
        let (maj, min) = p.blocks(r);
        Ok(Self {
            majority: SpectralSummary::from_values(singular_values_of(&maj)?),
            minority: SpectralSummary::from_values(singular_values_of(&min)?),
        })
    }

    /// `k_maj = rank(R_maj)`.
    pub fn k_maj(&self) -> usize {
        self.majority.numeric_rank
    }

    /// `σ_{k_maj}(R_maj)`.
    pub fn sigma_kmaj(&self) -> f64 {
        self.majority.sigma(self.k_maj())
    }

    /// `σ_1(R_min)`; zero for an empty minority block.
    pub fn sigma1_min(&self) -> f64 {
        self.minority.sigma(1)
    }
}

/// Singular value gap `G(R) = (σ_1(R_min), σ_{k_maj}(R_maj))`, or `None`
/// when the left endpoint is not below the right one.
pub fn singular_value_gap(r: &RatingsMatrix, p: &GroupPartition) -> Result<Option<Interval>> {
    let bs = BlockSpectra::compute(r, p)?;
    Ok(Interval::open(bs.sigma1_min(), bs.sigma_kmaj()))
}

/// Result of [`reorder_to_blocks`]. Row `r` of `matrix` is row
/// `row_perm[r]` of the input, and likewise for columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOrdering {
    pub matrix: RatingsMatrix,
    pub row_perm: Vec<usize>,
    pub col_perm: Vec<usize>,
}

impl BlockOrdering {
    /// Maps the block-ordered matrix back to the original ordering.
    pub fn restore(&self) -> Result<RatingsMatrix> {
        self.matrix.permuted(
            &invert_permutation(&self.row_perm),
            &invert_permutation(&self.col_perm),
        )
    }
}

/// Reorders `r` so the majority block sits top-left. Within each group the
/// original relative order is kept, so an already ordered matrix gets
/// identity permutations.
pub fn reorder_to_blocks(r: &RatingsMatrix, p: &GroupPartition) -> Result<BlockOrdering> {
    p.validate_for(r)?;
    let row_perm: Vec<usize> = p
        .majority_users()
        .iter()
        .chain(p.minority_users())
        .copied()
        .collect();
    let col_perm: Vec<usize> = p
        .majority_items()
        .iter()
        .chain(p.minority_items())
        .copied()
        .collect();
    Ok(BlockOrdering {
        matrix: r.permuted(&row_perm, &col_perm)?,
        row_perm,
        col_perm,
    })
}

/// A minority item rated positively by exactly the users in `users`, each
/// of whom rates nothing else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PickyItem {
    pub item: usize,
    pub users: Vec<usize>,
}

/// All picky minority items of `r` with their picky user groups.
pub fn find_picky_items(r: &RatingsMatrix, p: &GroupPartition) -> Result<Vec<PickyItem>> {
    p.validate_for(r)?;
    let mut out = Vec::new();
    for &i in p.minority_items() {
        let users: Vec<usize> = (0..r.rows()).filter(|&u| r.get(u, i) > 0.0).collect();
        let exclusive = users
            .iter()
            .all(|&u| (0..r.cols()).all(|j| j == i || r.get(u, j) == 0.0));
        if !users.is_empty() && exclusive {
            out.push(PickyItem { item: i, users });
        }
    }
    Ok(out)
}
